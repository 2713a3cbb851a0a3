#pragma once

#include <string>
#include <vector>

#include "sa2co/assets.hpp"
#include "sa2co/common.hpp"
#include "sa2co/grid.hpp"
#include "sa2co/socp.hpp"

namespace sa2co {

enum class DispatchBackend { conic, search };

/// Snapshot of everything the single-period fallback needs at hour t.
struct DispatchContext {
    const NetworkModel* net = nullptr;
    const DeviceSet* devices = nullptr;
    const ProfileSet* profiles = nullptr;
    const AcpfSolver* solver = nullptr;
    std::vector<double> soe;
    std::size_t t = 0;
    double dt_hours = 1.0;

    std::vector<PowerBounds> bounds() const;
    double price_grid() const;
    double price_node() const;
    /// Exact operating cost of an action (pounds for the hour).
    double action_cost(double slack_p_pu, const std::vector<double>& action_kw) const;
};

/// Branch-flow relaxation of the single-period dispatch: DistFlow equalities,
/// one second-order cone per branch, squared-voltage boxes (soft, penalized)
/// and hard ESS power boxes from the SoE window.
struct SafeDispatchProblem {
    ConeProgram prog;
    std::vector<Branch> oriented;
    std::vector<PowerBounds> bounds_kw;
    int n_branch = 0;
    int n_bus = 0;
    int n_ess = 0;
    // offsets into the free block
    int off_p_flow = 0, off_q_flow = 0, off_l = 0, off_v = 0, off_ess = 0, off_pr = 0;
    // offsets into the LP block (relative to the cone part)
    int off_pen_lo = 0, off_pen_hi = 0;
    double penalty_weight = 1e5;
    double s_base_kva = 0.0;
};

SafeDispatchProblem formulate(const DispatchContext& ctx);

struct SafeDispatchSolution {
    std::vector<double> p_ess_kw;
    double objective_gbp = 0.0;        // exact-ACPF cost of the returned action
    double relaxation_objective = 0.0; // conic backend only
    double relaxation_gap = 0.0;       // max normalized cone residual at the optimum
    bool verified = false;
    bool unresolved = false;  // even the zero action violates the limits
    bool relaxation_infeasible = false;
    int repair_probes = 0;
    DispatchBackend backend = DispatchBackend::search;
};

struct ConicCandidate {
    std::vector<double> action_kw;
    double objective = 0.0;
    double max_cone_gap = 0.0;
    bool infeasible = false;  // voltage penalties active at the optimum
    bool solver_ok = false;
};

/// Solves the relaxation and extracts the ESS action plus diagnostics.
ConicCandidate solve_conic_candidate(const SafeDispatchProblem& problem,
                                     const SocpOptions& opts = {});

/// Certified search: cyclic coordinate descent over the ESS power boxes with
/// every candidate priced and screened by one exact power-flow solve.
std::vector<double> solve_search_candidate(const DispatchContext& ctx,
                                           int grid_points = 13, int sweeps = 3);

/// Exact-ACPF verification of a candidate; on violation, bisects the action
/// toward zero (at most 20 probes). If even the zero action violates, the
/// minimum-violation probe is returned with verified=false.
SafeDispatchSolution verify_or_repair(const std::vector<double>& candidate_kw,
                                      const DispatchContext& ctx);

/// Full fallback path: backend candidate, then verification/repair.
SafeDispatchSolution safe_dispatch(const DispatchContext& ctx, DispatchBackend backend,
                                   const SocpOptions& opts = {});

/// Day-ahead schedule from the time-coupled relaxation (perfect foresight):
/// returns per-ESS kW for `horizon` hours starting at `start`.
std::vector<std::vector<double>> perfect_foresight_schedule(
    const NetworkModel& net, const DeviceSet& devices, const ProfileSet& profiles,
    std::size_t start, int horizon, const std::vector<double>& soe0,
    double dt_hours = 1.0, const SocpOptions& opts = {});

}  // namespace sa2co
