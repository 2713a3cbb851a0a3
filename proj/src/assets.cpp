#include "sa2co/assets.hpp"

#include <algorithm>
#include <cmath>

#include "sa2co/csv.hpp"

namespace sa2co {

void EssUnit::validate() const {
    if (p_max_kw <= 0.0) throw ConfigError("ess: p_max must be positive");
    if (e_capacity_kwh <= 0.0) throw ConfigError("ess: capacity must be positive");
    if (!(eta_ch > 0.0 && eta_ch <= 1.0 && eta_dis > 0.0 && eta_dis <= 1.0))
        throw ConfigError("ess: efficiencies must lie in (0, 1]");
    if (!(soe_min >= 0.0 && soe_min < soe_max && soe_max <= 1.0))
        throw ConfigError("ess: need 0 <= soe_min < soe_max <= 1");
}

PowerBounds power_bounds(const EssUnit& unit, const EssState& state) {
    PowerBounds b;
    b.lower_kw = std::max(-unit.p_max_kw,
                          (unit.soe_min - state.soe) * unit.e_capacity_kwh * unit.eta_ch);
    b.upper_kw = std::min(unit.p_max_kw,
                          (unit.soe_max - state.soe) * unit.e_capacity_kwh / unit.eta_ch);
    // zero is always admissible; rounding at the SoE rails must not exclude it
    b.lower_kw = std::min(0.0, b.lower_kw);
    b.upper_kw = std::max(0.0, b.upper_kw);
    return b;
}

EssState ess_step(const EssUnit& unit, const EssState& state, double power_kw,
                  double dt_hours) {
    const PowerBounds b = power_bounds(unit, state);
    const double slack = 1e-9 * std::max(1.0, unit.p_max_kw);
    if (power_kw < b.lower_kw - slack || power_kw > b.upper_kw + slack)
        throw ContractError("ess_step: power " + std::to_string(power_kw) +
                            " kW outside [" + std::to_string(b.lower_kw) + ", " +
                            std::to_string(b.upper_kw) + "]");
    EssState next;
    if (power_kw >= 0.0)
        next.soe = state.soe + unit.eta_ch * power_kw * dt_hours / unit.e_capacity_kwh;
    else
        next.soe = state.soe + power_kw * dt_hours / (unit.eta_dis * unit.e_capacity_kwh);
    return next;
}

DeviceSet load_devices(const std::string& csv_path) {
    auto table = csv::read_file(csv_path);
    const int ck = table.require_column("kind");
    const int cb = table.require_column("bus");
    const int cp = table.require_column("p_max_kw");
    const int ce = table.column("e_kwh");
    const int cec = table.column("eta_ch");
    const int ced = table.column("eta_dis");
    const int csm = table.column("soe_min");
    const int csx = table.column("soe_max");

    DeviceSet set;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const std::string& kind = table.rows[i][static_cast<std::size_t>(ck)];
        const int bus = static_cast<int>(csv::to_long(table, i, cb)) - 1;
        const double p_max = csv::to_double(table, i, cp);
        if (kind == "ess") {
            EssUnit u;
            u.bus = bus;
            u.p_max_kw = p_max;
            u.e_capacity_kwh = csv::to_double(table, i, ce);
            if (!csv::empty_cell(table, i, cec)) u.eta_ch = csv::to_double(table, i, cec);
            if (!csv::empty_cell(table, i, ced)) u.eta_dis = csv::to_double(table, i, ced);
            if (!csv::empty_cell(table, i, csm)) u.soe_min = csv::to_double(table, i, csm);
            if (!csv::empty_cell(table, i, csx)) u.soe_max = csv::to_double(table, i, csx);
            u.validate();
            set.ess.push_back(u);
        } else if (kind == "pv" || kind == "wt") {
            GenUnit g;
            g.kind = kind == "pv" ? GenKind::pv : GenKind::wt;
            g.bus = bus;
            g.p_max_kw = p_max;
            set.gens.push_back(g);
        } else {
            throw IngestError("devices: unknown kind '" + kind + "' at data row " +
                              std::to_string(i + 1));
        }
    }
    return set;
}

void ProfileSet::validate() const {
    const std::size_t n = load_factor.size();
    if (pv_factor.size() != n || wt_factor.size() != n || price_grid.size() != n ||
        price_node.size() != n)
        throw IngestError("profiles: series lengths disagree");
    for (std::size_t t = 0; t < n; ++t) {
        if (pv_factor[t] < 0.0 || wt_factor[t] < 0.0)
            throw IngestError("profiles: negative generation at data row " +
                              std::to_string(t + 1));
    }
}

InjectionVector net_injections(const NetworkModel& net, const ProfileSet& profiles,
                               const DeviceSet& devices,
                               const std::vector<double>& ess_powers_kw,
                               std::size_t t) {
    if (ess_powers_kw.size() != devices.ess.size())
        throw ConfigError("net_injections: ess power count mismatch");
    if (t >= profiles.length())
        throw ConfigError("net_injections: time index out of range");

    InjectionVector inj;
    inj.p = Vec::Zero(net.bus_count);
    inj.q = Vec::Zero(net.bus_count);
    for (int i = 0; i < net.bus_count; ++i) {
        inj.p(i) = profiles.load_p_kw(i, t);
        inj.q(i) = profiles.load_q_kvar(i, t);
    }
    for (const auto& g : devices.gens) {
        if (g.bus < 0 || g.bus >= net.bus_count)
            throw ConfigError("net_injections: generator on unknown bus");
        inj.p(g.bus) -= profiles.gen_p_kw(g, t);
    }
    for (std::size_t k = 0; k < devices.ess.size(); ++k) {
        const auto& u = devices.ess[k];
        if (u.bus < 0 || u.bus >= net.bus_count)
            throw ConfigError("net_injections: ESS on unknown bus");
        inj.p(u.bus) += ess_powers_kw[k];
    }
    inj.p /= net.s_base_kva;
    inj.q /= net.s_base_kva;
    return inj;
}

}  // namespace sa2co
