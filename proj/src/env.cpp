#include "sa2co/env.hpp"

#include <algorithm>
#include <cmath>

#include "sa2co/csv.hpp"
#include "sa2co/rng.hpp"

namespace sa2co {

ProfileSet load_dataset(const std::string& series_csv_path, BaseLoads base) {
    auto table = csv::read_file(series_csv_path);
    const int cts = table.require_column("timestamp");
    const int cl = table.require_column("load_factor");
    const int cpv = table.require_column("pv_factor");
    const int cwt = table.require_column("wt_factor");
    const int cpr = table.require_column("price_gbp_per_kwh");

    ProfileSet p;
    p.base = std::move(base);
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        p.timestamps.push_back(table.rows[i][static_cast<std::size_t>(cts)]);
        p.load_factor.push_back(csv::to_double(table, i, cl));
        p.pv_factor.push_back(csv::to_double(table, i, cpv));
        p.wt_factor.push_back(csv::to_double(table, i, cwt));
        p.price_grid.push_back(csv::to_double(table, i, cpr));
    }
    p.price_node = p.price_grid;
    p.validate();
    return p;
}

namespace {

double bump(double h, double center, double width) {
    const double d = h - center;
    return std::exp(-0.5 * d * d / (width * width));
}

std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// stateless unit normal keyed on (t, slot); keeps noisy observations
// reproducible without carrying RNG state in the environment
double hashed_normal(std::uint64_t t, std::uint64_t slot) {
    const std::uint64_t a = splitmix64(t * 0x100000001b3ULL + slot);
    const std::uint64_t b = splitmix64(a);
    double u1 = static_cast<double>(a >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace

ProfileSet synth_dataset(std::uint64_t seed, int days, BaseLoads base) {
    if (days < 1) throw ConfigError("synth_dataset: days must be >= 1");
    Rng rng(seed);
    ProfileSet p;
    p.base = std::move(base);
    const int hours = days * 24;
    p.load_factor.reserve(hours);
    for (int t = 0; t < hours; ++t) {
        const int day = t / 24;
        const double h = static_cast<double>(t % 24);

        // demand: overnight valley, morning and evening peaks
        double load = 0.36 + 0.14 * bump(h, 9.0, 2.4) + 0.17 * bump(h, 19.0, 2.6) +
                      0.018 * std::sin(2.0 * M_PI * day / 7.0) + 0.013 * rng.normal();
        load = std::clamp(load, 0.24, 0.64);

        // PV: daylight bell, zero at night
        double pv = 0.0;
        if (h > 6.0 && h < 18.0) {
            pv = std::pow(std::sin(M_PI * (h - 6.0) / 12.0), 1.5) *
                 (0.75 + 0.2 * std::sin(2.0 * M_PI * day / 9.0) + 0.08 * rng.normal());
            pv = std::clamp(pv, 0.0, 1.0);
        }

        double wt = 0.32 + 0.18 * std::sin(2.0 * M_PI * (h + 6.0 * std::sin(day * 0.7)) / 24.0) +
                    0.10 * std::sin(2.0 * M_PI * day / 5.0) + 0.05 * rng.normal();
        wt = std::clamp(wt, 0.02, 0.95);

        // price: two daily peaks (morning, evening) over a low base
        double price = 0.05 + 0.10 * bump(h, 8.5, 1.9) + 0.17 * bump(h, 19.0, 2.2) +
                       0.004 * rng.normal();
        price = std::max(price, 0.012);

        p.load_factor.push_back(load);
        p.pv_factor.push_back(pv);
        p.wt_factor.push_back(wt);
        p.price_grid.push_back(price);

        char ts[32];
        std::snprintf(ts, sizeof(ts), "d%03d-h%02d", day, t % 24);
        p.timestamps.push_back(ts);
    }
    p.price_node = p.price_grid;
    p.validate();
    return p;
}

Environment::Environment(NetworkModel net, DeviceSet devices, ProfileSet profiles,
                         EnvConfig cfg)
    : net_(std::move(net)),
      devices_(std::move(devices)),
      profiles_(std::move(profiles)),
      cfg_(std::move(cfg)),
      solver_(net_) {
    profiles_.validate();
    if (cfg_.high_risk_buses.empty())
        throw ConfigError("env: high-risk bus set must be nonempty");
    for (int b : cfg_.high_risk_buses)
        if (b < 0 || b >= net_.bus_count)
            throw ConfigError("env: high-risk bus out of range");
    states_.assign(devices_.ess.size(), EssState{cfg_.initial_soe});
    last_executed_kw_.assign(devices_.ess.size(), 0.0);
}

int Environment::observation_dim() const {
    return net_.bus_count + 1 + 4 * action_dim() + cfg_.price_window;
}

double Environment::price_node(std::size_t t) const {
    const auto& s = profiles_.price_node;
    return t < s.size() ? s[t] : s.back();
}

double Environment::price_grid(std::size_t t) const {
    const auto& s = profiles_.price_grid;
    return t < s.size() ? s[t] : s.back();
}

Observation Environment::reset(std::size_t episode_start,
                               std::optional<double> initial_soe) {
    if (episode_start + cfg_.episode_length > profiles_.length())
        throw ConfigError("env reset: episode does not fit the dataset (start " +
                          std::to_string(episode_start) + ", length " +
                          std::to_string(cfg_.episode_length) + ", data " +
                          std::to_string(profiles_.length()) + ")");
    const double soe0 = initial_soe.value_or(cfg_.initial_soe);
    for (auto& s : states_) s.soe = soe0;
    std::fill(last_executed_kw_.begin(), last_executed_kw_.end(), 0.0);
    episode_start_ = episode_start;
    t_ = episode_start;
    steps_taken_ = 0;
    done_ = false;
    return observe();
}

std::vector<PowerBounds> Environment::current_bounds() const {
    std::vector<PowerBounds> out(devices_.ess.size());
    for (std::size_t k = 0; k < devices_.ess.size(); ++k)
        out[k] = power_bounds(devices_.ess[k], states_[k]);
    return out;
}

std::vector<double> Environment::denormalize(const Action& action) const {
    if (action.normalized.size() != action_dim())
        throw ShapeError("env: action dimension mismatch");
    if (!action.normalized.allFinite())
        throw ContractError("env: non-finite action");
    auto bounds = current_bounds();
    std::vector<double> kw(devices_.ess.size());
    for (std::size_t k = 0; k < kw.size(); ++k) {
        const double a = std::clamp(action.normalized(static_cast<int>(k)), -1.0, 1.0);
        const auto& b = bounds[k];
        kw[k] = b.lower_kw + 0.5 * (a + 1.0) * (b.upper_kw - b.lower_kw);
        kw[k] = std::clamp(kw[k], b.lower_kw, b.upper_kw);
    }
    return kw;
}

Action Environment::normalize_kw(const std::vector<double>& kw) const {
    auto bounds = current_bounds();
    Action a;
    a.normalized = Vec::Zero(action_dim());
    for (std::size_t k = 0; k < kw.size(); ++k) {
        const auto& b = bounds[k];
        const double span = b.upper_kw - b.lower_kw;
        if (span <= 1e-12) continue;  // degenerate window maps to midpoint
        const double v = 2.0 * (kw[k] - b.lower_kw) / span - 1.0;
        a.normalized(static_cast<int>(k)) = std::clamp(v, -1.0, 1.0);
    }
    return a;
}

int Environment::count_high_risk_violations(const Vec& magnitudes) const {
    int count = 0;
    for (int b : cfg_.high_risk_buses) {
        const double v = magnitudes(b);
        if (v < net_.limits.lower || v > net_.limits.upper) ++count;
    }
    return count;
}

Environment::ScreenResult Environment::screen_exact(
    const std::vector<double>& candidate_kw) const {
    auto inj = net_injections(net_, profiles_, devices_, candidate_kw, t_);
    auto sol = solver_.solve(inj);
    ScreenResult r;
    r.converged = sol.converged;
    r.slack_p_pu = sol.slack_p;
    if (!sol.converged) {
        r.violations = static_cast<int>(cfg_.high_risk_buses.size());
        r.magnitudes = Vec::Ones(net_.bus_count);
        return r;
    }
    r.magnitudes = sol.magnitudes();
    r.violations = count_high_risk_violations(r.magnitudes);
    return r;
}

StepResult Environment::step(const Action& action, bool used_fallback) {
    if (done_) throw ContractError("env step: episode already finished");

    StepResult res;
    res.used_fallback = used_fallback;
    res.executed_action_kw = denormalize(action);

    auto inj = net_injections(net_, profiles_, devices_, res.executed_action_kw, t_);
    auto sol = solver_.solve(inj);

    double slack_p_pu;
    if (sol.converged) {
        res.voltage_magnitudes = sol.magnitudes();
        res.violations = count_high_risk_violations(res.voltage_magnitudes);
        slack_p_pu = sol.slack_p;
    } else {
        // marked maximally unsafe; cost falls back to the lossless balance
        res.acpf_failed = true;
        res.violations = static_cast<int>(cfg_.high_risk_buses.size());
        res.voltage_magnitudes = Vec::Ones(net_.bus_count);
        slack_p_pu = inj.p.sum();
    }
    res.slack_p_kw = slack_p_pu * net_.s_base_kva;

    double ess_cost = 0.0;
    for (std::size_t k = 0; k < res.executed_action_kw.size(); ++k)
        ess_cost += price_node(t_) * res.executed_action_kw[k] * cfg_.dt_hours;
    res.step_cost_gbp = price_grid(t_) * res.slack_p_kw * cfg_.dt_hours + ess_cost;
    res.reward = -(res.step_cost_gbp / cfg_.cost_scale +
                   cfg_.violation_weight * res.violations);

    for (std::size_t k = 0; k < states_.size(); ++k)
        states_[k] = ess_step(devices_.ess[k], states_[k], res.executed_action_kw[k],
                              cfg_.dt_hours);
    last_executed_kw_ = res.executed_action_kw;

    ++t_;
    ++steps_taken_;
    done_ = steps_taken_ >= cfg_.episode_length;
    res.done = done_;
    res.next_obs = observe();
    return res;
}

Observation Environment::observe() const {
    const int n = net_.bus_count;
    const int k = action_dim();
    Observation obs;
    obs.values = Vec::Zero(observation_dim());
    int at = 0;
    for (int i = 0; i < n; ++i) obs.values(at++) = profiles_.load_p_kw(i, std::min(t_, profiles_.length() - 1));

    // slack draw for the current hour with idle ESSs, mirroring reset
    {
        std::vector<double> zeros(devices_.ess.size(), 0.0);
        const std::size_t t = std::min(t_, profiles_.length() - 1);
        auto inj = net_injections(net_, profiles_, devices_, zeros, t);
        auto sol = solver_.solve(inj);
        obs.values(at++) = (sol.converged ? sol.slack_p : inj.p.sum()) * net_.s_base_kva;
    }

    for (int i = 0; i < k; ++i) obs.values(at++) = last_executed_kw_[static_cast<std::size_t>(i)];
    for (int i = 0; i < k; ++i) obs.values(at++) = states_[static_cast<std::size_t>(i)].soe;
    auto bounds = current_bounds();
    for (int i = 0; i < k; ++i) obs.values(at++) = bounds[static_cast<std::size_t>(i)].lower_kw;
    for (int i = 0; i < k; ++i) obs.values(at++) = bounds[static_cast<std::size_t>(i)].upper_kw;
    for (int w = 0; w < cfg_.price_window; ++w) {
        double price = price_node(t_ + static_cast<std::size_t>(w));
        if (cfg_.price_noise_std > 0.0 && w > 0)  // current hour is known exactly
            price += cfg_.price_noise_std * hashed_normal(t_ + static_cast<std::size_t>(w),
                                                          static_cast<std::uint64_t>(w));
        obs.values(at++) = price;
    }
    return obs;
}

}  // namespace sa2co
