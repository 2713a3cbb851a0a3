#include "sa2co/grid.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>

#include <json.hpp>

#include "sa2co/csv.hpp"

namespace sa2co {

void NetworkModel::validate() const {
    if (bus_count < 1) throw TopologyError("network: bus_count must be >= 1");
    if (slack_bus < 0 || slack_bus >= bus_count)
        throw TopologyError("network: slack bus out of range");
    if (static_cast<int>(branches.size()) != bus_count - 1)
        throw TopologyError("network: radial grid needs exactly N-1 branches, got " +
                            std::to_string(branches.size()));
    for (const auto& br : branches) {
        if (br.from < 0 || br.from >= bus_count || br.to < 0 || br.to >= bus_count)
            throw TopologyError("network: branch endpoint out of range");
        if (br.r < 0.0 || br.x < 0.0 || (br.r == 0.0 && br.x == 0.0))
            throw TopologyError("network: branch impedance must be nonnegative with r or x positive");
    }
    oriented_branches();  // throws on cycles / disconnection
    if (!(limits.lower > 0.0 && limits.lower < limits.upper))
        throw TopologyError("network: voltage limits must satisfy 0 < lower < upper");
}

std::vector<Branch> NetworkModel::oriented_branches() const {
    std::vector<std::vector<std::pair<int, std::size_t>>> adj(bus_count);
    for (std::size_t i = 0; i < branches.size(); ++i) {
        adj[branches[i].from].push_back({branches[i].to, i});
        adj[branches[i].to].push_back({branches[i].from, i});
    }
    std::vector<Branch> out;
    out.reserve(branches.size());
    std::vector<bool> seen(bus_count, false);
    std::queue<int> frontier;
    frontier.push(slack_bus);
    seen[slack_bus] = true;
    while (!frontier.empty()) {
        int u = frontier.front();
        frontier.pop();
        for (auto [v, bi] : adj[u]) {
            if (seen[v]) continue;
            seen[v] = true;
            Branch br = branches[bi];
            if (br.from != u) std::swap(br.from, br.to);
            out.push_back(br);
            frontier.push(v);
        }
    }
    if (static_cast<int>(out.size()) != bus_count - 1)
        throw TopologyError("network: graph is not a connected radial tree");
    return out;
}

Vec VoltageSolution::magnitudes() const {
    return (v_re.array().square() + v_im.array().square()).sqrt();
}

Admittance build_admittance(const NetworkModel& net) {
    net.validate();
    const int n = net.bus_count;
    Admittance y{Mat::Zero(n, n), Mat::Zero(n, n)};
    for (const auto& br : net.branches) {
        const double denom = br.r * br.r + br.x * br.x;
        const double g = br.r / denom;
        const double b = -br.x / denom;
        y.G(br.from, br.to) -= g;
        y.G(br.to, br.from) -= g;
        y.B(br.from, br.to) -= b;
        y.B(br.to, br.from) -= b;
        y.G(br.from, br.from) += g;
        y.G(br.to, br.to) += g;
        y.B(br.from, br.from) += b;
        y.B(br.to, br.to) += b;
    }
    return y;
}

AcpfSolver::AcpfSolver(NetworkModel net, AcpfOptions opts)
    : net_(std::move(net)), opts_(opts), ydm_(build_admittance(net_)) {}

VoltageSolution AcpfSolver::solve(const InjectionVector& inj) const {
    Vec e = Vec::Ones(net_.bus_count);
    Vec f = Vec::Zero(net_.bus_count);
    return run(inj, std::move(e), std::move(f));
}

VoltageSolution AcpfSolver::solve(const InjectionVector& inj,
                                  const VoltageSolution& warm_start) const {
    return run(inj, warm_start.v_re, warm_start.v_im);
}

// Residuals follow the rectangular-coordinate injection balance with
// consumption-positive P, Q:
//   rp_i = e_i*(G e - B f)_i + f_i*(G f + B e)_i + P_i
//   rq_i = f_i*(G e - B f)_i - e_i*(G f + B e)_i + Q_i
VoltageSolution AcpfSolver::run(const InjectionVector& inj, Vec e, Vec f) const {
    const int n = net_.bus_count;
    if (inj.p.size() != n || inj.q.size() != n)
        throw ShapeError("acpf: injection vector length mismatch");
    const int s = net_.slack_bus;
    const Mat& G = ydm_.G;
    const Mat& B = ydm_.B;

    // slack voltage pinned to the flat reference
    e(s) = 1.0;
    f(s) = 0.0;

    std::vector<int> pq;  // non-slack buses
    pq.reserve(n - 1);
    for (int i = 0; i < n; ++i)
        if (i != s) pq.push_back(i);
    const int m = static_cast<int>(pq.size());

    VoltageSolution sol;
    sol.iterations = 0;

    Vec ire(n), iim(n), rp(n), rq(n);
    auto residuals = [&]() {
        ire = G * e - B * f;
        iim = G * f + B * e;
        rp = e.cwiseProduct(ire) + f.cwiseProduct(iim) + inj.p;
        rq = f.cwiseProduct(ire) - e.cwiseProduct(iim) + inj.q;
    };

    residuals();
    double max_res = 0.0;
    for (int i : pq) max_res = std::max({max_res, std::abs(rp(i)), std::abs(rq(i))});

    Mat jac(2 * m, 2 * m);
    Vec rhs(2 * m), step(2 * m);

    while (max_res > opts_.tolerance && sol.iterations < opts_.max_iterations) {
        for (int a = 0; a < m; ++a) {
            const int i = pq[a];
            for (int b = 0; b < m; ++b) {
                const int j = pq[b];
                double dpe = e(i) * G(i, j) + f(i) * B(i, j);
                double dpf = -e(i) * B(i, j) + f(i) * G(i, j);
                double dqe = f(i) * G(i, j) - e(i) * B(i, j);
                double dqf = -f(i) * B(i, j) - e(i) * G(i, j);
                if (i == j) {
                    dpe += ire(i);
                    dpf += iim(i);
                    dqe -= iim(i);
                    dqf += ire(i);
                }
                jac(a, b) = dpe;
                jac(a, m + b) = dpf;
                jac(m + a, b) = dqe;
                jac(m + a, m + b) = dqf;
            }
            rhs(a) = -rp(i);
            rhs(m + a) = -rq(i);
        }
        Eigen::PartialPivLU<Mat> lu(jac);
        step = lu.solve(rhs);
        if (!step.allFinite())
            throw SolverError("acpf: singular Jacobian");
        for (int a = 0; a < m; ++a) {
            e(pq[a]) += step(a);
            f(pq[a]) += step(m + a);
        }
        ++sol.iterations;
        residuals();
        max_res = 0.0;
        for (int i : pq) max_res = std::max({max_res, std::abs(rp(i)), std::abs(rq(i))});
    }

    sol.v_re = std::move(e);
    sol.v_im = std::move(f);
    sol.converged = max_res <= opts_.tolerance;
    sol.max_residual = max_res;
    // grid draw: power flowing into the network plus any slack-local load
    sol.slack_p = sol.v_re(s) * ire(s) + sol.v_im(s) * iim(s) + inj.p(s);
    sol.slack_q = sol.v_im(s) * ire(s) - sol.v_re(s) * iim(s) + inj.q(s);
    return sol;
}

std::vector<Violation> violation_report(const Vec& magnitudes,
                                        const VoltageLimits& limits) {
    std::vector<Violation> out;
    for (int i = 0; i < magnitudes.size(); ++i) {
        if (magnitudes(i) < limits.lower)
            out.push_back({i, magnitudes(i), LimitSide::lower});
        else if (magnitudes(i) > limits.upper)
            out.push_back({i, magnitudes(i), LimitSide::upper});
    }
    return out;
}

std::vector<Violation> violation_report(const VoltageSolution& sol,
                                        const VoltageLimits& limits) {
    if (!sol.converged)
        throw SolverError("violation_report: refusing a non-converged solution");
    return violation_report(sol.magnitudes(), limits);
}

NetworkModel load_network(const std::string& branch_csv_path) {
    auto table = csv::read_file(branch_csv_path);
    const int cf = table.require_column("from");
    const int ct = table.require_column("to");
    const int cr = table.require_column("r_ohm");
    const int cx = table.require_column("x_ohm");

    std::string meta_path = branch_csv_path;
    if (meta_path.size() > 4 && meta_path.substr(meta_path.size() - 4) == ".csv")
        meta_path = meta_path.substr(0, meta_path.size() - 4);
    meta_path += ".meta.json";
    std::ifstream mf(meta_path);
    if (!mf) throw IngestError("network: missing sidecar " + meta_path);
    nlohmann::json meta = nlohmann::json::parse(mf);

    NetworkModel net;
    net.s_base_kva = meta.at("s_base_kva").get<double>();
    net.v_base_kv = meta.at("v_base_kv").get<double>();
    net.slack_bus = meta.at("slack_bus").get<int>() - 1;
    net.limits.lower = meta.value("v_min", 0.95);
    net.limits.upper = meta.value("v_max", 1.05);

    const double z_base = net.v_base_kv * net.v_base_kv * 1000.0 / net.s_base_kva;
    int max_bus = 0;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        Branch br;
        br.from = static_cast<int>(csv::to_long(table, i, cf)) - 1;
        br.to = static_cast<int>(csv::to_long(table, i, ct)) - 1;
        br.r = csv::to_double(table, i, cr) / z_base;
        br.x = csv::to_double(table, i, cx) / z_base;
        max_bus = std::max({max_bus, br.from, br.to});
        net.branches.push_back(br);
    }
    net.bus_count = max_bus + 1;
    net.validate();
    return net;
}

BaseLoads load_base_loads(const std::string& csv_path, int bus_count) {
    auto table = csv::read_file(csv_path);
    const int cb = table.require_column("bus");
    const int cp = table.require_column("p_kw");
    const int cq = table.require_column("q_kvar");
    BaseLoads loads;
    loads.p_kw.assign(bus_count, 0.0);
    loads.q_kvar.assign(bus_count, 0.0);
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const int bus = static_cast<int>(csv::to_long(table, i, cb)) - 1;
        if (bus < 0 || bus >= bus_count)
            throw IngestError("loads: bus out of range at data row " + std::to_string(i + 1));
        loads.p_kw[bus] += csv::to_double(table, i, cp);
        loads.q_kvar[bus] += csv::to_double(table, i, cq);
    }
    return loads;
}

}  // namespace sa2co
