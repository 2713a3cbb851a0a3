#pragma once

#include <string>
#include <vector>

#include "sa2co/common.hpp"
#include "sa2co/grid.hpp"

namespace sa2co {

struct EssUnit {
    int bus = 0;
    double p_max_kw = 0.0;      // symmetric charge/discharge rating
    double e_capacity_kwh = 0.0;
    double eta_ch = 0.95;
    double eta_dis = 0.95;
    double soe_min = 0.1;
    double soe_max = 0.9;

    void validate() const;
};

struct EssState {
    double soe = 0.0;
};

struct PowerBounds {
    double lower_kw = 0.0;  // <= 0, max discharge
    double upper_kw = 0.0;  // >= 0, max charge
};

/// One-step feasible power window. Discharge headroom deliberately uses the
/// charging efficiency; see the dispatch model's bound definitions.
PowerBounds power_bounds(const EssUnit& unit, const EssState& state);

/// Ampere-hour integral update. `power_kw` must already lie within
/// power_bounds; out-of-range powers raise ContractError.
EssState ess_step(const EssUnit& unit, const EssState& state, double power_kw,
                  double dt_hours = 1.0);

enum class GenKind { pv, wt };

struct GenUnit {
    GenKind kind = GenKind::pv;
    int bus = 0;
    double p_max_kw = 0.0;
};

struct DeviceSet {
    std::vector<EssUnit> ess;
    std::vector<GenUnit> gens;
};

DeviceSet load_devices(const std::string& csv_path);

/// Hourly operating data. Loads are stored factored: per-bus base values
/// scaled by an aggregate factor series. Generation is nameplate times a
/// per-kind factor series. Prices are pounds per kWh.
struct ProfileSet {
    BaseLoads base;                    // kW / kvar per bus
    std::vector<double> load_factor;   // one entry per hour
    std::vector<double> pv_factor;
    std::vector<double> wt_factor;
    std::vector<double> price_grid;    // grid connection node
    std::vector<double> price_node;    // ESS nodes (defaults to price_grid)
    std::vector<std::string> timestamps;

    std::size_t length() const { return load_factor.size(); }
    double load_p_kw(int bus, std::size_t t) const { return base.p_kw[bus] * load_factor[t]; }
    double load_q_kvar(int bus, std::size_t t) const { return base.q_kvar[bus] * load_factor[t]; }
    double gen_p_kw(const GenUnit& g, std::size_t t) const {
        return g.p_max_kw * (g.kind == GenKind::pv ? pv_factor[t] : wt_factor[t]);
    }
    void validate() const;
};

/// Net bus injections at hour t, converted to p.u. Consumption positive:
/// P = load - PV - WT + ESS charging power; Q carries load only.
InjectionVector net_injections(const NetworkModel& net, const ProfileSet& profiles,
                               const DeviceSet& devices,
                               const std::vector<double>& ess_powers_kw,
                               std::size_t t);

}  // namespace sa2co
