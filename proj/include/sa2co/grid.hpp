#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sa2co/common.hpp"

namespace sa2co {

struct Branch {
    int from = 0;
    int to = 0;
    double r = 0.0;  // p.u.
    double x = 0.0;  // p.u.
};

struct VoltageLimits {
    double lower = 0.95;  // p.u.
    double upper = 1.05;  // p.u.
};

/// Radial distribution network. Buses are 0-based internally; file formats
/// use 1-based labels and are converted on load.
struct NetworkModel {
    int bus_count = 0;
    int slack_bus = 0;
    std::vector<Branch> branches;
    double s_base_kva = 1000.0;
    double v_base_kv = 12.66;
    VoltageLimits limits;

    void validate() const;  // connected, radial, impedances usable

    /// Children-first branch order rooted at the slack; branch.from is
    /// always the parent. Throws TopologyError on cycles or disconnection.
    std::vector<Branch> oriented_branches() const;
};

/// Per-bus injections in p.u., consumption positive.
struct InjectionVector {
    Vec p;
    Vec q;
};

struct VoltageSolution {
    Vec v_re;
    Vec v_im;
    double slack_p = 0.0;  // active power drawn from the grid, p.u.
    double slack_q = 0.0;
    bool converged = false;
    int iterations = 0;
    double max_residual = 0.0;

    Vec magnitudes() const;
};

struct Admittance {
    Mat G;
    Mat B;
};

Admittance build_admittance(const NetworkModel& net);

struct AcpfOptions {
    double tolerance = 1e-8;
    int max_iterations = 50;
};

/// Newton power-flow solver in rectangular voltage coordinates. Immutable
/// after construction; concurrent solve() calls are safe.
class AcpfSolver {
public:
    explicit AcpfSolver(NetworkModel net, AcpfOptions opts = {});

    VoltageSolution solve(const InjectionVector& inj) const;
    VoltageSolution solve(const InjectionVector& inj,
                          const VoltageSolution& warm_start) const;

    const NetworkModel& network() const { return net_; }
    const Admittance& admittance() const { return ydm_; }

private:
    VoltageSolution run(const InjectionVector& inj, Vec e, Vec f) const;

    NetworkModel net_;
    AcpfOptions opts_;
    Admittance ydm_;
};

enum class LimitSide { lower, upper };

struct Violation {
    int bus = 0;
    double v_mag = 0.0;
    LimitSide side = LimitSide::lower;
};

/// Buses whose |V| falls strictly outside [lower, upper]. Boundary values
/// are compliant. Refuses non-converged solutions.
std::vector<Violation> violation_report(const VoltageSolution& sol,
                                        const VoltageLimits& limits);
std::vector<Violation> violation_report(const Vec& magnitudes,
                                        const VoltageLimits& limits);

/// Loads `<path>` (CSV: from,to,r_ohm,x_ohm, 1-based buses) plus the
/// sidecar `<path minus .csv>.meta.json` carrying bases, slack bus and
/// voltage limits.
NetworkModel load_network(const std::string& branch_csv_path);

/// Per-bus base loads in kW/kvar, from CSV bus,p_kw,q_kvar (1-based buses).
struct BaseLoads {
    std::vector<double> p_kw;
    std::vector<double> q_kvar;
};
BaseLoads load_base_loads(const std::string& csv_path, int bus_count);

}  // namespace sa2co
