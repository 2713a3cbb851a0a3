#include "sa2co/safe_dispatch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sa2co {

namespace {

constexpr double kViolationPrice = 1e6;  // pounds per p.u. of violation in search scoring

double violation_magnitude(const Vec& mags, const VoltageLimits& lim) {
    double total = 0.0;
    for (int i = 0; i < mags.size(); ++i) {
        total += std::max(0.0, lim.lower - mags(i));
        total += std::max(0.0, mags(i) - lim.upper);
    }
    return total;
}

struct Probe {
    bool converged = false;
    bool safe = false;
    double violation = 0.0;
    double cost = 0.0;
    double slack_p_pu = 0.0;
};

Probe probe_action(const DispatchContext& ctx, const std::vector<double>& action_kw) {
    Probe pr;
    const auto inj =
        net_injections(*ctx.net, *ctx.profiles, *ctx.devices, action_kw, ctx.t);
    const auto sol = ctx.solver->solve(inj);
    pr.converged = sol.converged;
    if (!sol.converged) {
        pr.violation = 1e9;
        return pr;
    }
    const Vec mags = sol.magnitudes();
    pr.violation = violation_magnitude(mags, ctx.net->limits);
    pr.safe = pr.violation == 0.0;
    pr.slack_p_pu = sol.slack_p;
    pr.cost = ctx.action_cost(sol.slack_p, action_kw);
    return pr;
}

}  // namespace

std::vector<PowerBounds> DispatchContext::bounds() const {
    std::vector<PowerBounds> out(devices->ess.size());
    for (std::size_t k = 0; k < devices->ess.size(); ++k)
        out[k] = power_bounds(devices->ess[k], EssState{soe[k]});
    return out;
}

double DispatchContext::price_grid() const {
    const auto& s = profiles->price_grid;
    return t < s.size() ? s[t] : s.back();
}

double DispatchContext::price_node() const {
    const auto& s = profiles->price_node;
    return t < s.size() ? s[t] : s.back();
}

double DispatchContext::action_cost(double slack_p_pu,
                                    const std::vector<double>& action_kw) const {
    double cost = price_grid() * slack_p_pu * net->s_base_kva * dt_hours;
    for (double p : action_kw) cost += price_node() * p * dt_hours;
    return cost;
}

SafeDispatchProblem formulate(const DispatchContext& ctx) {
    const NetworkModel& net = *ctx.net;
    SafeDispatchProblem sp;
    sp.oriented = net.oriented_branches();  // throws on non-radial input
    sp.n_branch = static_cast<int>(sp.oriented.size());
    sp.n_bus = net.bus_count;
    sp.n_ess = static_cast<int>(ctx.devices->ess.size());
    sp.bounds_kw = ctx.bounds();
    sp.s_base_kva = net.s_base_kva;

    const int nb = sp.n_branch;
    const int n = sp.n_bus;
    const int k = sp.n_ess;

    // free block: P_b | Q_b | l_b | v_i | p_ess (p.u.) | P_r
    sp.off_p_flow = 0;
    sp.off_q_flow = nb;
    sp.off_l = 2 * nb;
    sp.off_v = 3 * nb;
    sp.off_ess = 3 * nb + n;
    sp.off_pr = 3 * nb + n + k;
    const int n_free = 3 * nb + n + k + 1;

    // LP block: v-lo slack | v-hi slack | penalty lo | penalty hi | ess box slacks
    const int off_svlo = 0;
    const int off_svhi = n;
    sp.off_pen_lo = 2 * n;
    sp.off_pen_hi = 3 * n;
    const int off_splo = 4 * n;
    const int off_sphi = 4 * n + k;
    const int n_lp = 4 * n + 2 * k;

    const int n_soc = 4 * nb;
    const int n_total = n_free + n_lp + n_soc;
    const int lp0 = n_free;           // LP cone offset in x
    const int soc0 = n_free + n_lp;   // first SOC coordinate in x

    // rows: active balance (n-1) | reactive balance (n-1) | voltage drop (nb)
    //     | slack v (1) | P_r definition (1) | v boxes (2n) | ess boxes (2k)
    //     | SOC links (4 nb)
    const int m_rows = 2 * (n - 1) + nb + 2 + 2 * n + 2 * k + 4 * nb;

    std::vector<Eigen::Triplet<double>> trip;
    Vec b = Vec::Zero(m_rows);
    Vec c = Vec::Zero(n_total);

    // branch entering each non-slack bus, children per bus
    std::vector<int> branch_in(n, -1);
    std::vector<std::vector<int>> branches_out(n);
    for (int bI = 0; bI < nb; ++bI) {
        branch_in[sp.oriented[static_cast<std::size_t>(bI)].to] = bI;
        branches_out[sp.oriented[static_cast<std::size_t>(bI)].from].push_back(bI);
    }

    // non-ESS net consumption per bus, p.u.
    std::vector<double> zero_action(static_cast<std::size_t>(k), 0.0);
    const auto inj0 =
        net_injections(net, *ctx.profiles, *ctx.devices, zero_action, ctx.t);

    std::vector<std::vector<int>> ess_at(n);
    for (int e = 0; e < k; ++e)
        ess_at[ctx.devices->ess[static_cast<std::size_t>(e)].bus].push_back(e);

    int row = 0;
    // flow balance at every non-slack bus:
    //   P_in - r*l_in - sum(P_out) - p_ess = d0
    for (int j = 0; j < n; ++j) {
        if (j == net.slack_bus) continue;
        const int bi = branch_in[j];
        const auto& br = sp.oriented[static_cast<std::size_t>(bi)];
        trip.emplace_back(row, sp.off_p_flow + bi, 1.0);
        trip.emplace_back(row, sp.off_l + bi, -br.r);
        for (int bo : branches_out[j]) trip.emplace_back(row, sp.off_p_flow + bo, -1.0);
        for (int e : ess_at[j]) trip.emplace_back(row, sp.off_ess + e, -1.0);
        b(row) = inj0.p(j);
        ++row;
        trip.emplace_back(row, sp.off_q_flow + bi, 1.0);
        trip.emplace_back(row, sp.off_l + bi, -br.x);
        for (int bo : branches_out[j]) trip.emplace_back(row, sp.off_q_flow + bo, -1.0);
        b(row) = inj0.q(j);
        ++row;
    }
    // voltage drop per branch: v_to - v_from + 2(rP + xQ) - (r^2+x^2) l = 0
    for (int bI = 0; bI < nb; ++bI) {
        const auto& br = sp.oriented[static_cast<std::size_t>(bI)];
        trip.emplace_back(row, sp.off_v + br.to, 1.0);
        trip.emplace_back(row, sp.off_v + br.from, -1.0);
        trip.emplace_back(row, sp.off_p_flow + bI, 2.0 * br.r);
        trip.emplace_back(row, sp.off_q_flow + bI, 2.0 * br.x);
        trip.emplace_back(row, sp.off_l + bI, -(br.r * br.r + br.x * br.x));
        ++row;
    }
    // slack voltage reference
    trip.emplace_back(row, sp.off_v + net.slack_bus, 1.0);
    b(row) = 1.0;
    ++row;
    // P_r = sum of flows leaving the slack + slack-local consumption
    trip.emplace_back(row, sp.off_pr, 1.0);
    for (int bo : branches_out[net.slack_bus])
        trip.emplace_back(row, sp.off_p_flow + bo, -1.0);
    b(row) = inj0.p(net.slack_bus);
    ++row;
    // voltage boxes with penalty slack: v - s_lo + g_lo = lo^2, v + s_hi - g_hi = hi^2
    for (int j = 0; j < n; ++j) {
        trip.emplace_back(row, sp.off_v + j, 1.0);
        trip.emplace_back(row, lp0 + off_svlo + j, -1.0);
        trip.emplace_back(row, lp0 + sp.off_pen_lo + j, 1.0);
        b(row) = net.limits.lower * net.limits.lower;
        ++row;
        trip.emplace_back(row, sp.off_v + j, 1.0);
        trip.emplace_back(row, lp0 + off_svhi + j, 1.0);
        trip.emplace_back(row, lp0 + sp.off_pen_hi + j, -1.0);
        b(row) = net.limits.upper * net.limits.upper;
        ++row;
    }
    // ESS power boxes (p.u.)
    for (int e = 0; e < k; ++e) {
        trip.emplace_back(row, sp.off_ess + e, 1.0);
        trip.emplace_back(row, lp0 + off_splo + e, -1.0);
        b(row) = sp.bounds_kw[static_cast<std::size_t>(e)].lower_kw / net.s_base_kva;
        ++row;
        trip.emplace_back(row, sp.off_ess + e, 1.0);
        trip.emplace_back(row, lp0 + off_sphi + e, 1.0);
        b(row) = sp.bounds_kw[static_cast<std::size_t>(e)].upper_kw / net.s_base_kva;
        ++row;
    }
    // SOC links: u = (l + v_from, 2P, 2Q, l - v_from) per branch
    for (int bI = 0; bI < nb; ++bI) {
        const auto& br = sp.oriented[static_cast<std::size_t>(bI)];
        const int u0 = soc0 + 4 * bI;
        trip.emplace_back(row, u0 + 0, 1.0);
        trip.emplace_back(row, sp.off_l + bI, -1.0);
        trip.emplace_back(row, sp.off_v + br.from, -1.0);
        ++row;
        trip.emplace_back(row, u0 + 1, 1.0);
        trip.emplace_back(row, sp.off_p_flow + bI, -2.0);
        ++row;
        trip.emplace_back(row, u0 + 2, 1.0);
        trip.emplace_back(row, sp.off_q_flow + bI, -2.0);
        ++row;
        trip.emplace_back(row, u0 + 3, 1.0);
        trip.emplace_back(row, sp.off_l + bI, -1.0);
        trip.emplace_back(row, sp.off_v + br.from, 1.0);
        ++row;
    }

    // objective: grid energy at the connection node plus ESS node terms
    c(sp.off_pr) = ctx.price_grid() * net.s_base_kva * ctx.dt_hours;
    for (int e = 0; e < k; ++e)
        c(sp.off_ess + e) = ctx.price_node() * net.s_base_kva * ctx.dt_hours;
    for (int j = 0; j < n; ++j) {
        c(lp0 + sp.off_pen_lo + j) = sp.penalty_weight;
        c(lp0 + sp.off_pen_hi + j) = sp.penalty_weight;
    }

    sp.prog.A.resize(m_rows, n_total);
    sp.prog.A.setFromTriplets(trip.begin(), trip.end());
    sp.prog.b = std::move(b);
    sp.prog.c = std::move(c);
    sp.prog.dims.free = n_free;
    sp.prog.dims.nonneg = n_lp;
    sp.prog.dims.soc.assign(static_cast<std::size_t>(nb), 4);
    return sp;
}

ConicCandidate solve_conic_candidate(const SafeDispatchProblem& problem,
                                     const SocpOptions& opts) {
    ConicCandidate cand;
    const auto sol = solve_socp(problem.prog, opts);
    cand.solver_ok = sol.ok();
    if (!sol.ok()) return cand;

    cand.action_kw.resize(static_cast<std::size_t>(problem.n_ess));
    for (int e = 0; e < problem.n_ess; ++e) {
        double p = sol.x(problem.off_ess + e) * problem.s_base_kva;
        const auto& bd = problem.bounds_kw[static_cast<std::size_t>(e)];
        cand.action_kw[static_cast<std::size_t>(e)] =
            std::clamp(p, bd.lower_kw, bd.upper_kw);
    }
    cand.objective = sol.primal_objective;

    const int lp0 = problem.prog.dims.free;
    double penalty_mass = 0.0;
    for (int j = 0; j < problem.n_bus; ++j)
        penalty_mass += sol.x(lp0 + problem.off_pen_lo + j) +
                        sol.x(lp0 + problem.off_pen_hi + j);
    cand.infeasible = penalty_mass > 1e-6;
    if (cand.infeasible)
        cand.objective -= problem.penalty_weight * penalty_mass;

    for (int bI = 0; bI < problem.n_branch; ++bI) {
        const auto& br = problem.oriented[static_cast<std::size_t>(bI)];
        const double p = sol.x(problem.off_p_flow + bI);
        const double q = sol.x(problem.off_q_flow + bI);
        const double l = sol.x(problem.off_l + bI);
        const double v = sol.x(problem.off_v + br.from);
        const double gap = std::abs(p * p + q * q - l * v) / std::max(1.0, std::abs(l * v));
        cand.max_cone_gap = std::max(cand.max_cone_gap, gap);
    }
    return cand;
}

std::vector<double> solve_search_candidate(const DispatchContext& ctx, int grid_points,
                                           int sweeps) {
    const auto bounds = ctx.bounds();
    const int k = static_cast<int>(bounds.size());
    std::vector<double> current(static_cast<std::size_t>(k), 0.0);

    auto score = [&](const std::vector<double>& action) {
        const Probe pr = probe_action(ctx, action);
        if (!pr.converged) return 1e15;
        return pr.cost + kViolationPrice * pr.violation;
    };

    if (k == 0) return current;
    double best_score = score(current);
    std::vector<double> spans(static_cast<std::size_t>(k));
    for (int e = 0; e < k; ++e)
        spans[static_cast<std::size_t>(e)] =
            bounds[static_cast<std::size_t>(e)].upper_kw -
            bounds[static_cast<std::size_t>(e)].lower_kw;

    // coordinate sweeps over the full box, then two shrinking refinements
    for (int round = 0; round < sweeps + 2; ++round) {
        const bool refine = round >= sweeps;
        for (int e = 0; e < k; ++e) {
            const auto& bd = bounds[static_cast<std::size_t>(e)];
            double lo = bd.lower_kw, hi = bd.upper_kw;
            if (refine) {
                const double radius = spans[static_cast<std::size_t>(e)] /
                                      (grid_points - 1) *
                                      (round - sweeps == 0 ? 1.5 : 0.4);
                lo = std::max(lo, current[static_cast<std::size_t>(e)] - radius);
                hi = std::min(hi, current[static_cast<std::size_t>(e)] + radius);
            }
            if (hi - lo < 1e-9) continue;
            double best_here = current[static_cast<std::size_t>(e)];
            for (int g = 0; g < grid_points; ++g) {
                const double p = lo + (hi - lo) * g / (grid_points - 1);
                std::vector<double> cand = current;
                cand[static_cast<std::size_t>(e)] = p;
                const double s = score(cand);
                if (s < best_score - 1e-12) {
                    best_score = s;
                    best_here = p;
                }
            }
            current[static_cast<std::size_t>(e)] = best_here;
        }
    }
    return current;
}

SafeDispatchSolution verify_or_repair(const std::vector<double>& candidate_kw,
                                      const DispatchContext& ctx) {
    SafeDispatchSolution out;
    out.p_ess_kw = candidate_kw;

    int converged_probes = 0;
    double best_violation = std::numeric_limits<double>::infinity();
    std::vector<double> best_action = candidate_kw;
    double best_cost = 0.0;

    auto run_probe = [&](const std::vector<double>& action) {
        const Probe pr = probe_action(ctx, action);
        ++out.repair_probes;
        if (pr.converged) {
            ++converged_probes;
            if (pr.violation < best_violation) {
                best_violation = pr.violation;
                best_action = action;
                best_cost = pr.cost;
            }
        }
        return pr;
    };

    const Probe first = run_probe(candidate_kw);
    if (first.converged && first.safe) {
        out.verified = true;
        out.objective_gbp = first.cost;
        return out;
    }

    std::vector<double> zero(candidate_kw.size(), 0.0);
    const Probe zero_probe = run_probe(zero);
    if (!zero_probe.converged || !zero_probe.safe) {
        if (converged_probes == 0)
            throw SolverError("verify_or_repair: power flow failed at every probe");
        out.p_ess_kw = best_action;
        out.objective_gbp = best_cost;
        out.verified = false;
        out.unresolved = true;
        return out;
    }

    // bisection on the scale factor; zero is safe, the candidate is not
    double lo = 0.0, hi = 1.0;
    std::vector<double> lo_action = zero;
    double lo_cost = zero_probe.cost;
    while (out.repair_probes < 20 && hi - lo > 1e-3) {
        const double mid = 0.5 * (lo + hi);
        std::vector<double> scaled(candidate_kw.size());
        for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = mid * candidate_kw[i];
        const Probe pr = run_probe(scaled);
        if (pr.converged && pr.safe) {
            lo = mid;
            lo_action = scaled;
            lo_cost = pr.cost;
        } else {
            hi = mid;
        }
    }
    out.p_ess_kw = lo_action;
    out.objective_gbp = lo_cost;
    out.verified = true;
    return out;
}

SafeDispatchSolution safe_dispatch(const DispatchContext& ctx, DispatchBackend backend,
                                   const SocpOptions& opts) {
    std::vector<double> candidate(ctx.devices->ess.size(), 0.0);
    double relaxation_objective = 0.0;
    double relaxation_gap = 0.0;
    bool relaxation_infeasible = false;

    if (backend == DispatchBackend::conic) {
        const auto problem = formulate(ctx);
        const auto cand = solve_conic_candidate(problem, opts);
        if (cand.solver_ok) {
            candidate = cand.action_kw;
            relaxation_objective = cand.objective;
            relaxation_gap = cand.max_cone_gap;
            relaxation_infeasible = cand.infeasible;
        }
        // a failed relaxation leaves the zero-action candidate for repair
    } else {
        candidate = solve_search_candidate(ctx);
    }

    auto sol = verify_or_repair(candidate, ctx);
    sol.backend = backend;
    sol.relaxation_objective = relaxation_objective;
    sol.relaxation_gap = relaxation_gap;
    sol.relaxation_infeasible = relaxation_infeasible;
    return sol;
}

std::vector<std::vector<double>> perfect_foresight_schedule(
    const NetworkModel& net, const DeviceSet& devices, const ProfileSet& profiles,
    std::size_t start, int horizon, const std::vector<double>& soe0, double dt_hours,
    const SocpOptions& opts) {
    const auto oriented = net.oriented_branches();
    const int nb = static_cast<int>(oriented.size());
    const int n = net.bus_count;
    const int k = static_cast<int>(devices.ess.size());
    const int h_count = horizon;
    const double sb = net.s_base_kva;

    // per-hour free block: P, Q, l, v, P_r; plus charge/discharge splits and
    // SoE chain handled globally
    const int per_hour_free = 3 * nb + n + 1;
    const int off_soe = per_hour_free * h_count;            // soe_{k,h}, h = 1..H
    const int n_free = off_soe + k * h_count;

    // LP block per hour: v slacks (2n), penalties (2n), p+ (k), p- (k),
    // p+ cap slack (k), p- cap slack (k), soe box slacks (2k)
    const int per_hour_lp = 4 * n + 6 * k;
    const int n_lp = per_hour_lp * h_count;
    const int n_soc = 4 * nb * h_count;
    const int n_total = n_free + n_lp + n_soc;
    const int lp0 = n_free;
    const int soc0 = n_free + n_lp;

    const int per_hour_rows = 2 * (n - 1) + nb + 2 + 2 * n + 4 * k + 4 * nb;
    const int m_rows = per_hour_rows * h_count + k * h_count /* soe chain */ +
                       2 * k * h_count /* soe boxes */;

    std::vector<Eigen::Triplet<double>> trip;
    Vec b = Vec::Zero(m_rows);
    Vec c = Vec::Zero(n_total);

    std::vector<int> branch_in(n, -1);
    std::vector<std::vector<int>> branches_out(n);
    for (int bI = 0; bI < nb; ++bI) {
        branch_in[oriented[static_cast<std::size_t>(bI)].to] = bI;
        branches_out[oriented[static_cast<std::size_t>(bI)].from].push_back(bI);
    }
    std::vector<std::vector<int>> ess_at(n);
    for (int e = 0; e < k; ++e) ess_at[devices.ess[static_cast<std::size_t>(e)].bus].push_back(e);

    int row = 0;
    for (int h = 0; h < h_count; ++h) {
        const std::size_t t = start + static_cast<std::size_t>(h);
        const int f0 = per_hour_free * h;
        const int off_p = f0, off_q = f0 + nb, off_l = f0 + 2 * nb, off_v = f0 + 3 * nb;
        const int off_pr = f0 + 3 * nb + n;
        const int l0 = lp0 + per_hour_lp * h;
        const int off_svlo = l0, off_svhi = l0 + n, off_glo = l0 + 2 * n,
                  off_ghi = l0 + 3 * n;
        const int off_pch = l0 + 4 * n, off_pdis = off_pch + k, off_pch_cap = off_pdis + k,
                  off_pdis_cap = off_pch_cap + k;
        const int u_base = soc0 + 4 * nb * h;

        std::vector<double> zero_action(static_cast<std::size_t>(k), 0.0);
        const auto inj0 = net_injections(net, profiles, devices, zero_action, t);
        const double pg = profiles.price_grid[std::min(t, profiles.price_grid.size() - 1)];
        const double pe = profiles.price_node[std::min(t, profiles.price_node.size() - 1)];

        for (int j = 0; j < n; ++j) {
            if (j == net.slack_bus) continue;
            const int bi = branch_in[j];
            const auto& br = oriented[static_cast<std::size_t>(bi)];
            trip.emplace_back(row, off_p + bi, 1.0);
            trip.emplace_back(row, off_l + bi, -br.r);
            for (int bo : branches_out[j]) trip.emplace_back(row, off_p + bo, -1.0);
            for (int e : ess_at[j]) {
                trip.emplace_back(row, off_pch + e, -1.0);  // charging consumes
                trip.emplace_back(row, off_pdis + e, 1.0);
            }
            b(row) = inj0.p(j);
            ++row;
            trip.emplace_back(row, off_q + bi, 1.0);
            trip.emplace_back(row, off_l + bi, -br.x);
            for (int bo : branches_out[j]) trip.emplace_back(row, off_q + bo, -1.0);
            b(row) = inj0.q(j);
            ++row;
        }
        for (int bI = 0; bI < nb; ++bI) {
            const auto& br = oriented[static_cast<std::size_t>(bI)];
            trip.emplace_back(row, off_v + br.to, 1.0);
            trip.emplace_back(row, off_v + br.from, -1.0);
            trip.emplace_back(row, off_p + bI, 2.0 * br.r);
            trip.emplace_back(row, off_q + bI, 2.0 * br.x);
            trip.emplace_back(row, off_l + bI, -(br.r * br.r + br.x * br.x));
            ++row;
        }
        trip.emplace_back(row, off_v + net.slack_bus, 1.0);
        b(row) = 1.0;
        ++row;
        trip.emplace_back(row, off_pr, 1.0);
        for (int bo : branches_out[net.slack_bus]) trip.emplace_back(row, off_p + bo, -1.0);
        b(row) = inj0.p(net.slack_bus);
        ++row;
        for (int j = 0; j < n; ++j) {
            trip.emplace_back(row, off_v + j, 1.0);
            trip.emplace_back(row, off_svlo + j, -1.0);
            trip.emplace_back(row, off_glo + j, 1.0);
            b(row) = net.limits.lower * net.limits.lower;
            ++row;
            trip.emplace_back(row, off_v + j, 1.0);
            trip.emplace_back(row, off_svhi + j, 1.0);
            trip.emplace_back(row, off_ghi + j, -1.0);
            b(row) = net.limits.upper * net.limits.upper;
            ++row;
        }
        for (int e = 0; e < k; ++e) {
            const double cap = devices.ess[static_cast<std::size_t>(e)].p_max_kw / sb;
            trip.emplace_back(row, off_pch + e, 1.0);
            trip.emplace_back(row, off_pch_cap + e, 1.0);
            b(row) = cap;
            ++row;
            trip.emplace_back(row, off_pdis + e, 1.0);
            trip.emplace_back(row, off_pdis_cap + e, 1.0);
            b(row) = cap;
            ++row;
        }
        for (int bI = 0; bI < nb; ++bI) {
            const auto& br = oriented[static_cast<std::size_t>(bI)];
            const int u0 = u_base + 4 * bI;
            trip.emplace_back(row, u0 + 0, 1.0);
            trip.emplace_back(row, off_l + bI, -1.0);
            trip.emplace_back(row, off_v + br.from, -1.0);
            ++row;
            trip.emplace_back(row, u0 + 1, 1.0);
            trip.emplace_back(row, off_p + bI, -2.0);
            ++row;
            trip.emplace_back(row, u0 + 2, 1.0);
            trip.emplace_back(row, off_q + bI, -2.0);
            ++row;
            trip.emplace_back(row, u0 + 3, 1.0);
            trip.emplace_back(row, off_l + bI, -1.0);
            trip.emplace_back(row, off_v + br.from, 1.0);
            ++row;
        }

        c(off_pr) = pg * sb * dt_hours;
        for (int e = 0; e < k; ++e) {
            c(off_pch + e) = pe * sb * dt_hours;
            c(off_pdis + e) = -pe * sb * dt_hours;
        }
        for (int j = 0; j < n; ++j) {
            c(off_glo + j) = 1e5;
            c(off_ghi + j) = 1e5;
        }
    }

    // SoE chain and box: soe_{h} = soe_{h-1} + (eta_ch p+ - p-/eta_dis) sb dt / E
    for (int h = 0; h < h_count; ++h) {
        const int l0 = lp0 + per_hour_lp * h;
        const int off_pch = l0 + 4 * n, off_pdis = off_pch + k;
        const int off_soe_lo = l0 + 4 * n + 4 * k, off_soe_hi = off_soe_lo + k;
        for (int e = 0; e < k; ++e) {
            const auto& u = devices.ess[static_cast<std::size_t>(e)];
            const double gain_ch = u.eta_ch * sb * dt_hours / u.e_capacity_kwh;
            const double gain_dis = sb * dt_hours / (u.eta_dis * u.e_capacity_kwh);
            trip.emplace_back(row, off_soe + k * h + e, 1.0);
            trip.emplace_back(row, off_pch + e, -gain_ch);
            trip.emplace_back(row, off_pdis + e, gain_dis);
            if (h > 0) trip.emplace_back(row, off_soe + k * (h - 1) + e, -1.0);
            b(row) = h == 0 ? soe0[static_cast<std::size_t>(e)] : 0.0;
            ++row;
            trip.emplace_back(row, off_soe + k * h + e, 1.0);
            trip.emplace_back(row, off_soe_lo + e, -1.0);
            b(row) = u.soe_min;
            ++row;
            trip.emplace_back(row, off_soe + k * h + e, 1.0);
            trip.emplace_back(row, off_soe_hi + e, 1.0);
            b(row) = u.soe_max;
            ++row;
        }
    }

    ConeProgram prog;
    prog.A.resize(m_rows, n_total);
    prog.A.setFromTriplets(trip.begin(), trip.end());
    prog.b = std::move(b);
    prog.c = std::move(c);
    prog.dims.free = n_free;
    prog.dims.nonneg = n_lp;
    prog.dims.soc.assign(static_cast<std::size_t>(nb * h_count), 4);

    SocpOptions relaxed = opts;
    relaxed.max_iterations = std::max(opts.max_iterations, 150);
    const auto sol = solve_socp(prog, relaxed);
    if (!sol.ok())
        throw SolverError("perfect_foresight: relaxation did not converge");

    std::vector<std::vector<double>> schedule(
        static_cast<std::size_t>(h_count), std::vector<double>(static_cast<std::size_t>(k)));
    for (int h = 0; h < h_count; ++h) {
        const int l0 = lp0 + per_hour_lp * h;
        const int off_pch = l0 + 4 * n, off_pdis = off_pch + k;
        for (int e = 0; e < k; ++e)
            schedule[static_cast<std::size_t>(h)][static_cast<std::size_t>(e)] =
                (sol.x(off_pch + e) - sol.x(off_pdis + e)) * sb;
    }
    return schedule;
}

}  // namespace sa2co
