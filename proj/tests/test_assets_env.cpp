#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sa2co/assets.hpp"
#include "sa2co/env.hpp"
#include "test_helpers.hpp"

using namespace sa2co;
using sa2co::testing::ieee33;
using sa2co::testing::ieee33_devices;
using sa2co::testing::ieee33_high_risk;
using sa2co::testing::ieee33_loads;

namespace {

ProfileSet flat_profiles(const NetworkModel& net, int hours, double load_factor,
                         double price) {
    ProfileSet p;
    p.base = ieee33_loads(net);
    p.load_factor.assign(hours, load_factor);
    p.pv_factor.assign(hours, 0.0);
    p.wt_factor.assign(hours, 0.0);
    p.price_grid.assign(hours, price);
    p.price_node = p.price_grid;
    for (int t = 0; t < hours; ++t) p.timestamps.push_back("t" + std::to_string(t));
    return p;
}

EnvConfig small_env_config(int episode_length) {
    EnvConfig cfg;
    cfg.episode_length = episode_length;
    cfg.high_risk_buses = ieee33_high_risk();
    return cfg;
}

}  // namespace

TEST_CASE("power bounds reproduce the hand-derived ESS4 case") {
    EssUnit ess4{30, 200.0, 600.0, 0.95, 0.95, 0.1, 0.9};
    auto b = power_bounds(ess4, EssState{0.88});
    CHECK(b.lower_kw == doctest::Approx(-200.0));
    CHECK(b.upper_kw == doctest::Approx(12.6315789474).epsilon(1e-9));
    CHECK(std::abs(b.upper_kw - 12.63) < 0.01);
}

TEST_CASE("power bounds vanish at the SoE rails") {
    EssUnit u{0, 100.0, 400.0, 0.95, 0.95, 0.1, 0.9};
    CHECK(power_bounds(u, EssState{0.9}).upper_kw == doctest::Approx(0.0));
    CHECK(power_bounds(u, EssState{0.1}).lower_kw == doctest::Approx(0.0));
}

TEST_CASE("power bounds are monotone in SoE") {
    // charge headroom shrinks and discharge headroom grows as SoE rises
    EssUnit u{0, 150.0, 600.0, 0.95, 0.95, 0.1, 0.9};
    double prev_upper = 1e18, prev_lower = 1e18;
    for (int i = 0; i <= 16; ++i) {
        const double soe = 0.1 + 0.05 * i;
        auto b = power_bounds(u, EssState{soe});
        CHECK(b.upper_kw <= prev_upper + 1e-12);
        CHECK(b.lower_kw <= prev_lower + 1e-12);
        CHECK(b.lower_kw <= 0.0);
        CHECK(b.upper_kw >= 0.0);
        prev_upper = b.upper_kw;
        prev_lower = b.lower_kw;
    }
}

TEST_CASE("ess_step hand cases") {
    EssUnit ess1{15, 150.0, 600.0, 0.95, 0.95, 0.1, 0.9};
    CHECK(ess_step(ess1, EssState{0.1}, 150.0).soe == doctest::Approx(0.3375));
    CHECK(ess_step(ess1, EssState{0.5}, 0.0).soe == doctest::Approx(0.5));

    EssUnit small{0, 100.0, 400.0, 0.95, 0.95, 0.0, 1.0};
    CHECK(ess_step(small, EssState{0.5}, -95.0).soe == doctest::Approx(0.25));
}

TEST_CASE("ess_step rejects out-of-bounds power") {
    EssUnit u{0, 100.0, 400.0, 0.95, 0.95, 0.1, 0.9};
    CHECK_THROWS_AS(ess_step(u, EssState{0.9}, 10.0), ContractError);
    CHECK_THROWS_AS(ess_step(u, EssState{0.1}, -10.0), ContractError);
}

TEST_CASE("clipped random walk never leaves the SoE box over 10000 steps") {
    EssUnit u{0, 150.0, 600.0, 0.95, 0.95, 0.1, 0.9};
    EssState s{0.1};
    Rng rng(99);
    for (int i = 0; i < 10000; ++i) {
        auto b = power_bounds(u, s);
        double p = rng.uniform(-2.0 * u.p_max_kw, 2.0 * u.p_max_kw);
        p = std::clamp(p, b.lower_kw, b.upper_kw);
        s = ess_step(u, s, p);
        REQUIRE(s.soe >= u.soe_min - 1e-9);
        REQUIRE(s.soe <= u.soe_max + 1e-9);
    }
}

TEST_CASE("round-trip energy loss") {
    EssUnit u{0, 100.0, 1000.0, 0.9, 0.92, 0.0, 1.0};
    EssState s{0.5};
    const double charge = 80.0;
    auto after = ess_step(u, s, charge);
    // energy needed to return exactly to the starting SoE
    const double discharge_energy = (after.soe - s.soe) * u.e_capacity_kwh * u.eta_dis;
    CHECK(discharge_energy == doctest::Approx(charge * u.eta_ch * u.eta_dis));
    CHECK(discharge_energy <= charge);
    auto back = ess_step(u, after, -discharge_energy);
    CHECK(back.soe == doctest::Approx(s.soe).epsilon(1e-12));
}

TEST_CASE("net injections fold devices per the sign convention") {
    auto net = ieee33();
    auto devices = ieee33_devices();
    auto profiles = flat_profiles(net, 4, 0.0, 0.1);

    SUBCASE("all zero") {
        std::vector<double> zeros(devices.ess.size(), 0.0);
        auto inj = net_injections(net, profiles, devices, zeros, 0);
        CHECK(inj.p.cwiseAbs().maxCoeff() == 0.0);
        CHECK(inj.q.cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("single charging ESS at bus 16") {
        std::vector<double> powers(devices.ess.size(), 0.0);
        powers[0] = 150.0;  // ESS1 sits at 1-based bus 16
        auto inj = net_injections(net, profiles, devices, powers, 0);
        CHECK(inj.p(15) == doctest::Approx(0.15));
        inj.p(15) = 0.0;
        CHECK(inj.p.cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("wind at full output injects negative load") {
        ProfileSet p = profiles;
        p.wt_factor.assign(4, 1.0);
        std::vector<double> zeros(devices.ess.size(), 0.0);
        auto inj = net_injections(net, p, devices, zeros, 0);
        CHECK(inj.p(24) == doctest::Approx(-0.4));  // WT2, 400 kW at 1-based bus 25
    }
}

TEST_CASE("environment observation layout and reset") {
    auto net = ieee33();
    auto devices = ieee33_devices();
    auto profiles = flat_profiles(net, 48, 0.5, 0.1);
    Environment env(net, devices, profiles, small_env_config(24));

    auto obs = env.reset(0);
    CHECK(env.observation_dim() == 74);
    CHECK(obs.values.size() == 74);

    const int n = net.bus_count;
    const int k = env.action_dim();
    // ESS2 (100 kW / 400 kWh) bound slots at soe_min: lower 0, upper 100
    CHECK(obs.values(n + 1 + 2 * k + 1) == doctest::Approx(0.0));
    CHECK(obs.values(n + 1 + 3 * k + 1) == doctest::Approx(100.0));
    // SoE slots at the configured initial value
    for (int i = 0; i < k; ++i) CHECK(obs.values(n + 1 + k + i) == doctest::Approx(0.1));
}

TEST_CASE("zero-load dataset gives a zero slack slot") {
    auto net = ieee33();
    auto devices = ieee33_devices();
    auto profiles = flat_profiles(net, 48, 0.0, 0.1);
    Environment env(net, devices, profiles, small_env_config(24));
    auto obs = env.reset(0);
    CHECK(obs.values(net.bus_count) == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("reset refuses an episode that does not fit") {
    auto net = ieee33();
    auto devices = ieee33_devices();
    auto profiles = flat_profiles(net, 20, 0.5, 0.1);
    Environment env(net, devices, profiles, small_env_config(24));
    CHECK_THROWS_AS(env.reset(0), ConfigError);
}

TEST_CASE("step reward equals the recomputed cost/violation form") {
    auto net = ieee33();
    auto devices = ieee33_devices();
    auto profiles = flat_profiles(net, 48, 0.5, 0.12);
    auto cfg = small_env_config(24);
    Environment env(net, devices, profiles, cfg);
    env.reset(0);

    Action a;
    a.normalized = Vec::Zero(env.action_dim());
    a.normalized << 0.7, -0.3, 0.1, -0.9;
    auto res = env.step(a);
    CHECK(res.reward ==
          doctest::Approx(-(res.step_cost_gbp / cfg.cost_scale +
                            cfg.violation_weight * res.violations))
              .epsilon(1e-12));

    // executed powers respect the SoE-dependent window
    auto bounds_now = power_bounds(devices.ess[0], EssState{cfg.initial_soe});
    CHECK(res.executed_action_kw[0] >= bounds_now.lower_kw - 1e-9);
    CHECK(res.executed_action_kw[0] <= bounds_now.upper_kw + 1e-9);
}

TEST_CASE("denormalization maps -1/+1 to the bound endpoints") {
    auto net = ieee33();
    auto devices = ieee33_devices();
    auto profiles = flat_profiles(net, 48, 0.5, 0.1);
    Environment env(net, devices, profiles, small_env_config(24));
    env.reset(0);

    Action lo;
    lo.normalized = Vec::Constant(env.action_dim(), -1.0);
    auto kw = env.denormalize(lo);
    auto bounds = env.current_bounds();
    for (std::size_t i = 0; i < kw.size(); ++i)
        CHECK(kw[i] == doctest::Approx(bounds[i].lower_kw));

    Action hi;
    hi.normalized = Vec::Constant(env.action_dim(), 1.0);
    kw = env.denormalize(hi);
    for (std::size_t i = 0; i < kw.size(); ++i)
        CHECK(kw[i] == doctest::Approx(bounds[i].upper_kw));
}

TEST_CASE("fixed action sequence yields identical trajectories") {
    auto net = ieee33();
    auto devices = ieee33_devices();
    auto profiles = synth_dataset(5, 3, ieee33_loads(net));
    auto cfg = small_env_config(24);

    auto run = [&]() {
        Environment env(net, devices, profiles, cfg);
        env.reset(0);
        Rng rng(17);
        std::vector<double> rewards;
        for (int i = 0; i < 24; ++i) {
            Action a;
            a.normalized = Vec::Zero(env.action_dim());
            for (int j = 0; j < env.action_dim(); ++j) a.normalized(j) = rng.uniform(-1.0, 1.0);
            rewards.push_back(env.step(a).reward);
        }
        return rewards;
    };
    auto r1 = run();
    auto r2 = run();
    CHECK(r1 == r2);
}

TEST_CASE("episode cost identity") {
    auto net = ieee33();
    auto devices = ieee33_devices();
    auto profiles = synth_dataset(6, 2, ieee33_loads(net));
    auto cfg = small_env_config(24);
    Environment env(net, devices, profiles, cfg);
    env.reset(0);

    double total_cost = 0.0;
    double recomputed = 0.0;
    Rng rng(3);
    for (int t = 0; t < 24; ++t) {
        Action a;
        a.normalized = Vec::Zero(env.action_dim());
        for (int j = 0; j < env.action_dim(); ++j) a.normalized(j) = rng.uniform(-0.5, 0.5);
        auto res = env.step(a);
        total_cost += res.step_cost_gbp;
        double ess_term = 0.0;
        for (std::size_t k = 0; k < res.executed_action_kw.size(); ++k)
            ess_term += profiles.price_node[static_cast<std::size_t>(t)] *
                        res.executed_action_kw[k];
        recomputed += profiles.price_grid[static_cast<std::size_t>(t)] * res.slack_p_kw + ess_term;
    }
    CHECK(total_cost == doctest::Approx(recomputed).epsilon(1e-9));
}

TEST_CASE("synthetic dataset is deterministic with two price peaks and dark nights") {
    auto net = ieee33();
    auto a = synth_dataset(42, 4, ieee33_loads(net));
    auto b = synth_dataset(42, 4, ieee33_loads(net));
    CHECK(a.load_factor == b.load_factor);
    CHECK(a.price_grid == b.price_grid);
    CHECK(a.pv_factor == b.pv_factor);

    auto c = synth_dataset(43, 4, ieee33_loads(net));
    CHECK(a.load_factor != c.load_factor);

    // PV is zero at night
    for (int day = 0; day < 4; ++day) {
        CHECK(a.pv_factor[static_cast<std::size_t>(day * 24)] == 0.0);
        CHECK(a.pv_factor[static_cast<std::size_t>(day * 24 + 23)] == 0.0);
    }

    // two local price maxima per day: one before 14h, one after
    for (int day = 0; day < 4; ++day) {
        int am_peak = 0, pm_peak = 0;
        double am_best = -1.0, pm_best = -1.0;
        for (int h = 0; h < 24; ++h) {
            const double v = a.price_grid[static_cast<std::size_t>(day * 24 + h)];
            if (h < 14 && v > am_best) { am_best = v; am_peak = h; }
            if (h >= 14 && v > pm_best) { pm_best = v; pm_peak = h; }
        }
        CHECK(am_peak >= 6);
        CHECK(am_peak <= 11);
        CHECK(pm_peak >= 17);
        CHECK(pm_peak <= 22);
        // both peaks rise well above the overnight valley
        const double valley = a.price_grid[static_cast<std::size_t>(day * 24 + 3)];
        CHECK(am_best > valley + 0.03);
        CHECK(pm_best > valley + 0.05);
    }
}

TEST_CASE("dataset loader round-trips a small csv") {
    auto net = ieee33();
    const std::string path = "/tmp/sa2co_test_series.csv";
    {
        std::ofstream f(path);
        f << "timestamp,load_factor,pv_factor,wt_factor,price_gbp_per_kwh\n";
        for (int t = 0; t < 24; ++t)
            f << "h" << t << ",1.0,0.0,0.0,0.10\n";
    }
    auto p = load_dataset(path, ieee33_loads(net));
    CHECK(p.length() == 24);
    CHECK(p.load_p_kw(17, 3) == doctest::Approx(90.0));  // bus 18 base load
    CHECK(p.price_node[0] == doctest::Approx(0.10));
}

TEST_CASE("dataset loader rejects negative generation with a row number") {
    auto net = ieee33();
    const std::string path = "/tmp/sa2co_test_bad_series.csv";
    {
        std::ofstream f(path);
        f << "timestamp,load_factor,pv_factor,wt_factor,price_gbp_per_kwh\n";
        f << "h0,1.0,0.0,0.0,0.10\n";
        f << "h1,1.0,-0.2,0.0,0.10\n";
    }
    CHECK_THROWS_WITH_AS(load_dataset(path, ieee33_loads(net)),
                         doctest::Contains("row 2"), IngestError);
}
