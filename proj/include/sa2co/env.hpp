#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sa2co/assets.hpp"
#include "sa2co/common.hpp"
#include "sa2co/grid.hpp"

namespace sa2co {

/// Observation layout (raw units, standardization happens agent-side):
///   [0, N)            per-bus active loads, kW
///   [N]               slack draw with ESSs idle at the current hour, kW
///   [N+1, N+1+K)      last executed ESS powers, kW
///   [.., +K)          SoE fractions
///   [.., +K)          lower power bounds, kW
///   [.., +K)          upper power bounds, kW
///   [.., +24)         node price window C_e(t .. t+23), padded with the
///                     final value past the end of the series
struct Observation {
    Vec values;
};

struct Action {
    Vec normalized;  // in [-1, 1] per ESS
};

struct StepResult {
    Observation next_obs;
    double reward = 0.0;
    double step_cost_gbp = 0.0;
    int violations = 0;  // limit-violating high-risk buses at this step
    std::vector<double> executed_action_kw;
    bool done = false;
    bool used_fallback = false;
    bool acpf_failed = false;
    Vec voltage_magnitudes;  // executed-state |V| per bus, for logging
    double slack_p_kw = 0.0;
};

struct EnvConfig {
    int episode_length = 480;
    double dt_hours = 1.0;
    double cost_scale = 1000.0;      // C_w
    double violation_weight = 1.0;   // w_delta
    double initial_soe = 0.1;
    int price_window = 24;
    std::vector<int> high_risk_buses;  // 0-based
    double price_noise_std = 0.0;      // optional forecast-noise study knob
};

/// Dataset CSV columns: timestamp,load_factor,pv_factor,wt_factor,
/// price_gbp_per_kwh (hourly). Base loads come from the bundled network data.
ProfileSet load_dataset(const std::string& series_csv_path, BaseLoads base);

/// Deterministic two-peak synthetic stand-in: diurnal load and price shapes
/// with seeded noise, PV forced to zero at night.
ProfileSet synth_dataset(std::uint64_t seed, int days, BaseLoads base);

class Environment {
public:
    Environment(NetworkModel net, DeviceSet devices, ProfileSet profiles,
                EnvConfig cfg);

    Observation reset(std::size_t episode_start, std::optional<double> initial_soe = {});
    StepResult step(const Action& action, bool used_fallback = false);

    bool done() const { return done_; }
    std::size_t time_index() const { return t_; }
    int action_dim() const { return static_cast<int>(devices_.ess.size()); }
    int observation_dim() const;

    const NetworkModel& network() const { return net_; }
    const DeviceSet& devices() const { return devices_; }
    const ProfileSet& profiles() const { return profiles_; }
    const EnvConfig& config() const { return cfg_; }
    const AcpfSolver& solver() const { return solver_; }
    const std::vector<EssState>& ess_states() const { return states_; }

    /// Maps a normalized action to kW: -1 -> lower bound, +1 -> upper bound
    /// at the current SoE, then clips.
    std::vector<double> denormalize(const Action& action) const;
    /// Inverse map for storing executed powers as normalized actions.
    Action normalize_kw(const std::vector<double>& kw) const;

    std::vector<PowerBounds> current_bounds() const;

    /// Solves the exact power flow for a candidate without advancing state.
    /// Returns |V| per bus and the count of violating high-risk buses.
    struct ScreenResult {
        Vec magnitudes;
        int violations = 0;
        bool converged = false;
        double slack_p_pu = 0.0;
    };
    ScreenResult screen_exact(const std::vector<double>& candidate_kw) const;

    int count_high_risk_violations(const Vec& magnitudes) const;

private:
    Observation observe() const;
    double price_node(std::size_t t) const;
    double price_grid(std::size_t t) const;

    NetworkModel net_;
    DeviceSet devices_;
    ProfileSet profiles_;
    EnvConfig cfg_;
    AcpfSolver solver_;

    std::vector<EssState> states_;
    std::vector<double> last_executed_kw_;
    std::size_t t_ = 0;
    std::size_t episode_start_ = 0;
    int steps_taken_ = 0;
    bool done_ = true;
};

}  // namespace sa2co
