#include "sa2co/socp.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>

namespace sa2co {

namespace {

constexpr double kStepFraction = 0.99;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Nesterov-Todd scaling state. LP coordinates carry a diagonal scaling;
// each SOC block carries (eta, wbar) with det(wbar) = 1 so that
// W = eta * Wbar and W^2 = eta^2 * (2 wbar wbar' - J).
struct Scaling {
    Vec lp_w2;       // x_i / z_i
    Vec lp_lambda;   // sqrt(x_i z_i)
    std::vector<double> eta;
    std::vector<Vec> wbar;
    std::vector<Vec> lambda_soc;  // scaled point per block
};

struct ConeLayout {
    int n_free = 0;
    int n_lp = 0;
    std::vector<int> soc_size;
    std::vector<int> soc_start;  // offsets within the cone part
    int cone_total = 0;
};

ConeLayout make_layout(const ConeDims& dims) {
    ConeLayout lay;
    lay.n_free = dims.free;
    lay.n_lp = dims.nonneg;
    int at = dims.nonneg;
    for (int q : dims.soc) {
        if (q < 2) throw ConfigError("socp: SOC blocks need dimension >= 2");
        lay.soc_size.push_back(q);
        lay.soc_start.push_back(at);
        at += q;
    }
    lay.cone_total = at;
    return lay;
}

double soc_det(const Eigen::Ref<const Vec>& u) {
    return u(0) * u(0) - u.tail(u.size() - 1).squaredNorm();
}

// Largest step alpha with u + alpha*d staying in the cone (LP coordinate).
double lp_max_step(double u, double d) {
    return d >= 0.0 ? kInf : -u / d;
}

// Largest step keeping u + alpha*d inside the second-order cone.
double soc_max_step(const Eigen::Ref<const Vec>& u, const Eigen::Ref<const Vec>& d) {
    const int q = static_cast<int>(u.size());
    const double a = d(0) * d(0) - d.tail(q - 1).squaredNorm();
    const double b = 2.0 * (u(0) * d(0) - u.tail(q - 1).dot(d.tail(q - 1)));
    const double c = soc_det(u);
    double alpha = kInf;
    const double disc = b * b - 4.0 * a * c;
    if (std::abs(a) < 1e-14) {
        if (b < 0.0) alpha = std::min(alpha, -c / b);
    } else if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        const double r1 = (-b - sq) / (2.0 * a);
        const double r2 = (-b + sq) / (2.0 * a);
        for (double r : {r1, r2})
            if (r > 0.0) alpha = std::min(alpha, r);
    }
    if (d(0) < 0.0) alpha = std::min(alpha, -u(0) / d(0));
    return alpha;
}

// Jordan product u o v for one SOC block.
Vec soc_prod(const Eigen::Ref<const Vec>& u, const Eigen::Ref<const Vec>& v) {
    const int q = static_cast<int>(u.size());
    Vec out(q);
    out(0) = u.dot(v);
    out.tail(q - 1) = u(0) * v.tail(q - 1) + v(0) * u.tail(q - 1);
    return out;
}

// Solves Arw(lambda) * out = d for one SOC block.
Vec soc_div(const Eigen::Ref<const Vec>& lambda, const Eigen::Ref<const Vec>& d) {
    const int q = static_cast<int>(lambda.size());
    const double det = soc_det(lambda);
    const double l0 = lambda(0);
    Vec out(q);
    const double d0 = d(0);
    const auto l1 = lambda.tail(q - 1);
    const auto d1 = d.tail(q - 1);
    out(0) = (l0 * d0 - l1.dot(d1)) / det;
    out.tail(q - 1) = (d1 - out(0) * l1) / l0;
    return out;
}

// Wbar v with Wbar = [w0 w1'; w1 I + w1 w1'/(1+w0)].
Vec wbar_apply(const Vec& wbar, const Eigen::Ref<const Vec>& v) {
    const int q = static_cast<int>(wbar.size());
    const auto w1 = wbar.tail(q - 1);
    const auto v1 = v.tail(q - 1);
    const double w1v1 = w1.dot(v1);
    Vec out(q);
    out(0) = wbar(0) * v(0) + w1v1;
    out.tail(q - 1) = v1 + (v(0) + w1v1 / (1.0 + wbar(0))) * w1;
    return out;
}

// Wbar^{-1} v: the scaling of the inverse point J wbar.
Vec wbar_apply_inv(const Vec& wbar, const Eigen::Ref<const Vec>& v) {
    const int q = static_cast<int>(wbar.size());
    const auto w1 = wbar.tail(q - 1);
    const auto v1 = v.tail(q - 1);
    const double w1v1 = w1.dot(v1);
    Vec out(q);
    out(0) = wbar(0) * v(0) - w1v1;
    out.tail(q - 1) = v1 + (-v(0) + w1v1 / (1.0 + wbar(0))) * w1;
    return out;
}

class NtState {
public:
    NtState(const ConeLayout& lay) : lay_(lay) {}

    // x, z are the cone parts only.
    bool compute(const Vec& x, const Vec& z) {
        s_.lp_w2.resize(lay_.n_lp);
        s_.lp_lambda.resize(lay_.n_lp);
        for (int i = 0; i < lay_.n_lp; ++i) {
            if (x(i) <= 0.0 || z(i) <= 0.0) return false;
            s_.lp_w2(i) = x(i) / z(i);
            s_.lp_lambda(i) = std::sqrt(x(i) * z(i));
        }
        s_.eta.clear();
        s_.wbar.clear();
        s_.lambda_soc.clear();
        for (std::size_t k = 0; k < lay_.soc_size.size(); ++k) {
            const int q = lay_.soc_size[k];
            const int at = lay_.soc_start[k];
            const auto xb = x.segment(at, q);
            const auto zb = z.segment(at, q);
            const double dx = soc_det(xb);
            const double dz = soc_det(zb);
            if (dx <= 0.0 || dz <= 0.0 || xb(0) <= 0.0 || zb(0) <= 0.0) return false;
            const Vec xn = xb / std::sqrt(dx);
            const Vec zn = zb / std::sqrt(dz);
            const double gamma = std::sqrt((1.0 + xn.dot(zn)) / 2.0);
            Vec wbar(q);
            wbar(0) = (xn(0) + zn(0)) / (2.0 * gamma);
            wbar.tail(q - 1) =
                (xn.tail(q - 1) - zn.tail(q - 1)) / (2.0 * gamma);
            const double eta = std::pow(dx / dz, 0.25);
            s_.eta.push_back(eta);
            s_.wbar.push_back(wbar);
            // lambda = W z = eta * Wbar z
            s_.lambda_soc.push_back(eta * wbar_apply(wbar, zb));
        }
        return true;
    }

    // W v (cone part)
    Vec apply_w(const Vec& v) const {
        Vec out(v.size());
        for (int i = 0; i < lay_.n_lp; ++i) out(i) = std::sqrt(s_.lp_w2(i)) * v(i);
        for (std::size_t k = 0; k < lay_.soc_size.size(); ++k) {
            const int q = lay_.soc_size[k];
            const int at = lay_.soc_start[k];
            out.segment(at, q) = s_.eta[k] * wbar_apply(s_.wbar[k], v.segment(at, q));
        }
        return out;
    }

    // W^{-1} v
    Vec apply_w_inv(const Vec& v) const {
        Vec out(v.size());
        for (int i = 0; i < lay_.n_lp; ++i) out(i) = v(i) / std::sqrt(s_.lp_w2(i));
        for (std::size_t k = 0; k < lay_.soc_size.size(); ++k) {
            const int q = lay_.soc_size[k];
            const int at = lay_.soc_start[k];
            out.segment(at, q) =
                wbar_apply_inv(s_.wbar[k], v.segment(at, q)) / s_.eta[k];
        }
        return out;
    }

    // lambda (scaled point), lambda o lambda, and Jordan division
    Vec lambda() const {
        Vec out(lay_.cone_total);
        out.head(lay_.n_lp) = s_.lp_lambda;
        for (std::size_t k = 0; k < lay_.soc_size.size(); ++k)
            out.segment(lay_.soc_start[k], lay_.soc_size[k]) = s_.lambda_soc[k];
        return out;
    }

    Vec jordan_prod(const Vec& u, const Vec& v) const {
        Vec out(lay_.cone_total);
        for (int i = 0; i < lay_.n_lp; ++i) out(i) = u(i) * v(i);
        for (std::size_t k = 0; k < lay_.soc_size.size(); ++k) {
            const int q = lay_.soc_size[k];
            const int at = lay_.soc_start[k];
            out.segment(at, q) = soc_prod(u.segment(at, q), v.segment(at, q));
        }
        return out;
    }

    Vec jordan_div_lambda(const Vec& d) const {
        Vec out(lay_.cone_total);
        for (int i = 0; i < lay_.n_lp; ++i) out(i) = d(i) / s_.lp_lambda(i);
        for (std::size_t k = 0; k < lay_.soc_size.size(); ++k) {
            const int q = lay_.soc_size[k];
            const int at = lay_.soc_start[k];
            out.segment(at, q) = soc_div(s_.lambda_soc[k], d.segment(at, q));
        }
        return out;
    }

    // entries of H = W^{-2} as dense blocks for the KKT assembly
    void fill_h_triplets(std::vector<Eigen::Triplet<double>>& trip, int offset) const {
        for (int i = 0; i < lay_.n_lp; ++i)
            trip.emplace_back(offset + i, offset + i, 1.0 / s_.lp_w2(i));
        for (std::size_t k = 0; k < lay_.soc_size.size(); ++k) {
            const int q = lay_.soc_size[k];
            const int at = offset + lay_.soc_start[k];
            // W^{-2} = eta^{-2} (2 u u' - J), u = J wbar
            Vec u = s_.wbar[k];
            u.tail(q - 1) *= -1.0;
            const double inv_eta2 = 1.0 / (s_.eta[k] * s_.eta[k]);
            for (int i = 0; i < q; ++i)
                for (int j = 0; j < q; ++j) {
                    double v = 2.0 * u(i) * u(j);
                    if (i == j) v -= (i == 0) ? 1.0 : -1.0;
                    trip.emplace_back(at + i, at + j, inv_eta2 * v);
                }
        }
    }

    double max_step(const Vec& u, const Vec& du) const {
        double alpha = kInf;
        for (int i = 0; i < lay_.n_lp; ++i)
            alpha = std::min(alpha, lp_max_step(u(i), du(i)));
        for (std::size_t k = 0; k < lay_.soc_size.size(); ++k) {
            const int q = lay_.soc_size[k];
            const int at = lay_.soc_start[k];
            alpha = std::min(alpha, soc_max_step(u.segment(at, q), du.segment(at, q)));
        }
        return alpha;
    }

    Vec identity() const {
        Vec e = Vec::Zero(lay_.cone_total);
        for (int i = 0; i < lay_.n_lp; ++i) e(i) = 1.0;
        for (std::size_t k = 0; k < lay_.soc_size.size(); ++k)
            e(lay_.soc_start[k]) = 1.0;
        return e;
    }

private:
    ConeLayout lay_;
    Scaling s_;
};

}  // namespace

SocpSolution solve_socp(const ConeProgram& prog_in, const SocpOptions& opts) {
    const int n = static_cast<int>(prog_in.c.size());
    const int m = static_cast<int>(prog_in.b.size());
    if (prog_in.A.rows() != m || prog_in.A.cols() != n)
        throw ShapeError("socp: A is " + std::to_string(prog_in.A.rows()) + "x" +
                         std::to_string(prog_in.A.cols()) + ", expected " +
                         std::to_string(m) + "x" + std::to_string(n));
    if (prog_in.dims.total() != n)
        throw ShapeError("socp: cone dims do not cover the variable vector");

    // internal scaling: the iterates work on c/c_scale and b/b_scale
    const double c_scale = std::max(1.0, prog_in.c.cwiseAbs().maxCoeff());
    const double b_scale =
        m > 0 ? std::max(1.0, prog_in.b.cwiseAbs().maxCoeff()) : 1.0;
    ConeProgram prog = prog_in;
    prog.c /= c_scale;
    prog.b /= b_scale;

    const ConeLayout lay = make_layout(prog.dims);
    const int nf = lay.n_free;
    const int nc = lay.cone_total;
    const double nu = std::max(1.0, prog.dims.degree());

    NtState nt(lay);

    Eigen::SparseMatrix<double> kkt(n + m, n + m);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    bool analyzed = false;

    const Eigen::SparseMatrix<double> At = prog.A.transpose();

    SocpSolution sol;
    sol.x = Vec::Zero(n);
    sol.y = Vec::Zero(m);
    sol.z = Vec::Zero(n);  // z_free stays zero throughout

    // identity_h switches between the initialization system (H = I) and the
    // NT-scaled system; both share one sparsity pattern so the symbolic
    // factorization is reused.
    auto assemble = [&](bool identity_h) {
        // quasi-definite system: [ -(H + delta I)  A' ; A  delta I ]
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(prog.A.nonZeros() * 2 + n + m + 16 * nc));
        for (int i = 0; i < n; ++i)
            trip.emplace_back(i, i, -opts.regularization - (identity_h ? 1.0 : 0.0));
        {
            std::vector<Eigen::Triplet<double>> h;
            if (identity_h) {
                // structural zeros keep the SOC block pattern alive
                for (int i = 0; i < lay.n_lp; ++i) h.emplace_back(nf + i, nf + i, 0.0);
                for (std::size_t k = 0; k < lay.soc_size.size(); ++k) {
                    const int q = lay.soc_size[k];
                    const int at = nf + lay.soc_start[k];
                    for (int i = 0; i < q; ++i)
                        for (int j = 0; j < q; ++j) h.emplace_back(at + i, at + j, 0.0);
                }
            } else {
                nt.fill_h_triplets(h, nf);
            }
            for (const auto& t : h) trip.emplace_back(t.row(), t.col(), -t.value());
        }
        for (int k = 0; k < prog.A.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(prog.A, k); it; ++it) {
                trip.emplace_back(n + static_cast<int>(it.row()),
                                  static_cast<int>(it.col()), it.value());
                trip.emplace_back(static_cast<int>(it.col()),
                                  n + static_cast<int>(it.row()), it.value());
            }
        for (int i = 0; i < m; ++i) trip.emplace_back(n + i, n + i, opts.regularization);
        kkt.setFromTriplets(trip.begin(), trip.end());
    };

    bool use_identity_h = true;

    // unregularized KKT multiply for iterative refinement
    auto kkt_multiply = [&](const Vec& dx, const Vec& dy, Vec& out_x, Vec& out_y) {
        // out_x = -H dx + A' dy;  out_y = A dx
        Vec hdx;
        if (use_identity_h) {
            hdx = dx;
        } else {
            hdx = Vec::Zero(n);
            hdx.tail(nc) = nt.apply_w_inv(nt.apply_w_inv(dx.tail(nc)));
        }
        out_x = -hdx + At * dy;
        out_y = prog.A * dx;
    };

    auto solve_kkt = [&](const Vec& rx, const Vec& ry, Vec& dx, Vec& dy) -> bool {
        Vec rhs(n + m);
        rhs.head(n) = rx;
        rhs.tail(m) = ry;
        const double rhs_norm = 1.0 + rhs.norm();
        Vec sol_v = ldlt.solve(rhs);
        if (!sol_v.allFinite()) return false;
        for (int r = 0; r < std::max(opts.refinement_steps, 1) + 6; ++r) {
            Vec ox, oy;
            kkt_multiply(sol_v.head(n), sol_v.tail(m), ox, oy);
            Vec resid(n + m);
            resid.head(n) = rx - ox;
            resid.tail(m) = ry - oy;
            if (r >= opts.refinement_steps && resid.norm() < 1e-10 * rhs_norm) break;
            const Vec corr = ldlt.solve(resid);
            if (!corr.allFinite()) break;
            sol_v += corr;
        }
        dx = sol_v.head(n);
        dy = sol_v.tail(m);
        return sol_v.allFinite();
    };

    auto finish = [&](SocpStatus status) {
        sol.status = status;
        sol.x *= b_scale;
        sol.y *= c_scale;
        sol.z *= c_scale;
        sol.primal_objective *= c_scale * b_scale;
        sol.dual_objective *= c_scale * b_scale;
        return sol;
    };

    // least-squares initialization: min-norm primal point and least-squares
    // dual point, shifted into the cone interior
    {
        assemble(true);
        ldlt.analyzePattern(kkt);
        analyzed = true;
        ldlt.factorize(kkt);
        if (ldlt.info() != Eigen::Success) return finish(SocpStatus::numerical_failure);

        Vec dx, dy;
        if (!solve_kkt(Vec::Zero(n), prog.b, dx, dy))
            return finish(SocpStatus::numerical_failure);
        sol.x = dx;
        Vec wv, yv;
        if (!solve_kkt(-prog.c, Vec::Zero(m), wv, yv))
            return finish(SocpStatus::numerical_failure);
        sol.y = -yv;
        Vec z_guess = prog.c - At * sol.y;

        auto interiority = [&](const Vec& u) {
            double worst = kInf;
            for (int i = 0; i < lay.n_lp; ++i) worst = std::min(worst, u(i));
            for (std::size_t k = 0; k < lay.soc_size.size(); ++k) {
                const int q = lay.soc_size[k];
                const int at = lay.soc_start[k];
                worst = std::min(worst, u(at) - u.segment(at + 1, q - 1).norm());
            }
            return worst;
        };
        const Vec e = nt.identity();
        Vec xc = sol.x.tail(nc);
        const double ax = -interiority(xc);
        if (ax >= 0.0) xc += (1.0 + ax) * e;
        sol.x.tail(nc) = xc;

        Vec zc = z_guess.tail(nc);
        const double az = -interiority(zc);
        if (az >= 0.0) zc += (1.0 + az) * e;
        sol.z.tail(nc) = zc;
        use_identity_h = false;
    }

    const double bnorm = 1.0 + prog.b.norm();
    const double cnorm = 1.0 + prog.c.norm();

    for (sol.iterations = 0; sol.iterations < opts.max_iterations; ++sol.iterations) {
        const Vec rp = prog.b - prog.A * sol.x;
        Vec rd = prog.c - At * sol.y;
        rd.tail(nc) -= sol.z.tail(nc);

        const double gap = sol.x.tail(nc).dot(sol.z.tail(nc));
        const double mu = gap / nu;
        sol.primal_objective = prog.c.dot(sol.x);
        sol.dual_objective = prog.b.dot(sol.y);
        sol.primal_residual = rp.norm() / bnorm;
        sol.dual_residual = rd.norm() / cnorm;
        // gap measured in original (unscaled) units against the objective
        const double unscale = c_scale * b_scale;
        sol.rel_gap = std::abs(gap) * unscale /
                      std::max(1.0, std::abs(sol.primal_objective) * unscale);

        if (sol.primal_residual <= opts.tol_feas && sol.dual_residual <= opts.tol_feas &&
            sol.rel_gap <= opts.tol_gap)
            return finish(SocpStatus::optimal);

        if (!nt.compute(sol.x.tail(nc), sol.z.tail(nc)))
            return finish(SocpStatus::numerical_failure);
        assemble(false);
        if (!analyzed) {
            ldlt.analyzePattern(kkt);
            analyzed = true;
        }
        ldlt.factorize(kkt);
        if (ldlt.info() != Eigen::Success)
            return finish(SocpStatus::numerical_failure);

        const Vec lambda = nt.lambda();

        // affine direction
        Vec d_aff = -nt.jordan_prod(lambda, lambda);
        Vec dtilde = nt.jordan_div_lambda(d_aff);
        Vec rx = rd;
        rx.tail(nc) -= nt.apply_w_inv(dtilde);
        Vec dx_aff, dy_aff;
        if (!solve_kkt(rx, rp, dx_aff, dy_aff))
            return finish(SocpStatus::numerical_failure);
        Vec dz_aff = Vec::Zero(n);
        dz_aff.tail(nc) =
            nt.apply_w_inv(dtilde) - nt.apply_w_inv(nt.apply_w_inv(dx_aff.tail(nc)));

        const double ap = nt.max_step(sol.x.tail(nc), dx_aff.tail(nc));
        const double ad = nt.max_step(sol.z.tail(nc), dz_aff.tail(nc));
        const double alpha_aff = std::min({1.0, ap, ad});

        const double gap_aff = (sol.x.tail(nc) + alpha_aff * dx_aff.tail(nc))
                                   .dot(sol.z.tail(nc) + alpha_aff * dz_aff.tail(nc));
        double sigma = std::pow(std::max(0.0, gap_aff / gap), 3.0);
        sigma = std::clamp(sigma, 0.0, 1.0);

        // combined direction with Mehrotra correction
        const Vec wdx = nt.apply_w_inv(dx_aff.tail(nc));
        const Vec wdz = nt.apply_w(dz_aff.tail(nc));
        Vec d_comb = -nt.jordan_prod(lambda, lambda) - nt.jordan_prod(wdx, wdz) +
                     sigma * mu * nt.identity();
        dtilde = nt.jordan_div_lambda(d_comb);
        rx = rd;
        rx.tail(nc) -= nt.apply_w_inv(dtilde);
        Vec dx, dy;
        if (!solve_kkt(rx, rp, dx, dy))
            return finish(SocpStatus::numerical_failure);
        Vec dz = Vec::Zero(n);
        dz.tail(nc) =
            nt.apply_w_inv(dtilde) - nt.apply_w_inv(nt.apply_w_inv(dx.tail(nc)));

        const double sp = nt.max_step(sol.x.tail(nc), dx.tail(nc));
        const double sd = nt.max_step(sol.z.tail(nc), dz.tail(nc));
        const double alpha = kStepFraction * std::min({1.0 / kStepFraction, sp, sd});

        if (std::getenv("SA2CO_SOCP_DEBUG")) {
            Vec ox, oy;
            kkt_multiply(dx, dy, ox, oy);
            const double kkt_err = (ox - rx).norm() + (oy - rp).norm();
            std::fprintf(stderr,
                         "it %3d mu=%9.2e pres=%9.2e dres=%9.2e sigma=%5.3f "
                         "a_aff=%6.4f alpha=%6.4f kkt_err=%8.2e |y|=%9.2e\n",
                         sol.iterations, mu, sol.primal_residual, sol.dual_residual,
                         sigma, alpha_aff, alpha, kkt_err, sol.y.norm());
        }

        sol.x += alpha * dx;
        sol.y += alpha * dy;
        sol.z += alpha * dz;
    }
    return finish(SocpStatus::max_iterations);
}

void write_cone_program(const ConeProgram& prog, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("socp: cannot write " + path);
    f << "cone-program v1\n";
    f << "vars " << prog.c.size() << " rows " << prog.b.size() << "\n";
    f << "free " << prog.dims.free << " nonneg " << prog.dims.nonneg << " soc";
    for (int q : prog.dims.soc) f << " " << q;
    f << "\n";
    f << "c";
    for (int i = 0; i < prog.c.size(); ++i) f << " " << prog.c(i);
    f << "\nb";
    for (int i = 0; i < prog.b.size(); ++i) f << " " << prog.b(i);
    f << "\nA triplets (row col value)\n";
    for (int k = 0; k < prog.A.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(prog.A, k); it; ++it)
            f << it.row() << " " << it.col() << " " << it.value() << "\n";
}

}  // namespace sa2co
