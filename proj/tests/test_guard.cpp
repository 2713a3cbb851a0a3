#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>

#include "oracles/finite_diff.hpp"
#include "sa2co/guard.hpp"
#include "test_helpers.hpp"

using namespace sa2co;
using sa2co::testing::ieee33;
using sa2co::testing::ieee33_devices;
using sa2co::testing::ieee33_loads;

namespace {

ProfileSet fixed_profiles(const NetworkModel& net, int hours) {
    ProfileSet p;
    p.base = ieee33_loads(net);
    p.load_factor.assign(hours, 0.5);
    p.pv_factor.assign(hours, 0.3);
    p.wt_factor.assign(hours, 0.4);
    p.price_grid.assign(hours, 0.1);
    p.price_node = p.price_grid;
    for (int t = 0; t < hours; ++t) p.timestamps.push_back("t");
    return p;
}

/// Labeled samples from randomized load/action states around the feeder's
/// operating range, labeled by the exact solver.
std::vector<GuardSample> make_samples(const NetworkModel& net, const DeviceSet& devices,
                                      const AcpfSolver& solver, const HighRiskSet& risk,
                                      int count, Rng& rng) {
    auto profiles = fixed_profiles(net, 4);
    std::vector<GuardSample> out;
    while (static_cast<int>(out.size()) < count) {
        ProfileSet p = profiles;
        p.load_factor[0] = rng.uniform(0.25, 0.75);
        p.pv_factor[0] = rng.uniform(0.0, 1.0);
        p.wt_factor[0] = rng.uniform(0.0, 1.0);
        std::vector<double> action(devices.ess.size());
        for (auto& a : action) a = rng.uniform(-1.0, 1.0);
        for (std::size_t k = 0; k < devices.ess.size(); ++k)
            action[k] *= devices.ess[k].p_max_kw;

        GuardSample s;
        s.features = guard_featurize(net, p, devices, action, 0);
        InjectionVector inj;
        inj.p = s.features.head(net.bus_count);
        inj.q = s.features.tail(net.bus_count);
        auto sol = solver.solve(inj);
        if (!sol.converged) continue;
        const Vec mags = sol.magnitudes();
        s.labels = Vec(static_cast<int>(risk.buses.size()));
        for (std::size_t i = 0; i < risk.buses.size(); ++i)
            s.labels(static_cast<int>(i)) = mags(risk.buses[i]);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_CASE("featurize serializes the injection vector") {
    auto net = ieee33();
    auto devices = ieee33_devices();
    auto profiles = fixed_profiles(net, 4);

    SUBCASE("zero state gives zero features") {
        ProfileSet p = profiles;
        p.load_factor.assign(4, 0.0);
        p.pv_factor.assign(4, 0.0);
        p.wt_factor.assign(4, 0.0);
        std::vector<double> zeros(devices.ess.size(), 0.0);
        Vec f = guard_featurize(net, p, devices, zeros, 0);
        CHECK(f.size() == 66);
        CHECK(f.cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("single charging ESS fills one P slot") {
        ProfileSet p = profiles;
        p.load_factor.assign(4, 0.0);
        p.pv_factor.assign(4, 0.0);
        p.wt_factor.assign(4, 0.0);
        std::vector<double> action(devices.ess.size(), 0.0);
        action[0] = 150.0;  // bus 16 (1-based)
        Vec f = guard_featurize(net, p, devices, action, 0);
        CHECK(f(15) == doctest::Approx(0.15));
        f(15) = 0.0;
        CHECK(f.cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("changing only the action changes only ESS P slots") {
        std::vector<double> a0(devices.ess.size(), 0.0);
        std::vector<double> a1(devices.ess.size(), 0.0);
        a1[1] = 50.0;
        a1[3] = -75.0;
        Vec f0 = guard_featurize(net, profiles, devices, a0, 1);
        Vec f1 = guard_featurize(net, profiles, devices, a1, 1);
        Vec diff = (f1 - f0).cwiseAbs();
        CHECK(diff(devices.ess[1].bus) > 0.0);
        CHECK(diff(devices.ess[3].bus) > 0.0);
        diff(devices.ess[1].bus) = 0.0;
        diff(devices.ess[3].bus) = 0.0;
        CHECK(diff.maxCoeff() == 0.0);
    }
}

TEST_CASE("guard loss hand cases") {
    Vec perfect(2), labels(2);
    perfect << 0.98, 1.02;
    labels << 0.98, 1.02;
    CHECK(guard_loss(perfect, labels) == doctest::Approx(0.0));

    Vec constant(2);
    constant << 1.0, 1.0;
    CHECK(guard_loss(constant, labels) == doctest::Approx(0.02));
}

TEST_CASE("guard loss gradient matches finite differences") {
    Rng rng(3);
    auto net = init_mlp({6, 16, 16, 3}, {Act::relu, Act::relu, Act::identity}, rng);
    Vec features(6), labels(3);
    for (int i = 0; i < 6; ++i) features(i) = rng.uniform(-1.0, 1.0);
    for (int i = 0; i < 3; ++i) labels(i) = rng.uniform(0.9, 1.1);

    auto loss = [&]() { return guard_loss(mlp_forward_vec(net, features), labels); };
    ForwardCache cache;
    Vec pred = mlp_forward(net, Mat(features), &cache).col(0);
    const double rmse = std::sqrt((pred - labels).squaredNorm() / 3.0 + 1e-12);
    Mat gy = (pred - labels) / (3.0 * rmse);
    auto analytic = oracle::flatten_grads(mlp_backward(net, cache, gy));
    Vec fd = oracle::fd_gradient(net, loss);
    CHECK(oracle::max_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("assessment applies the margin rule") {
    GuardModel model;
    Rng rng(4);
    model.net = init_mlp({2, 4, 1}, {Act::relu, Act::identity}, rng);
    model.risk.buses = {0};
    model.margin = 0.002;
    model.ready = true;
    VoltageLimits lim{0.95, 1.05};

    // bias-only net lets us pin the prediction exactly
    model.net.weights[0].setZero();
    model.net.weights[1].setZero();
    model.net.biases[0].setZero();

    model.net.biases[1](0) = 1.0;
    CHECK(predict_and_assess(model, Vec::Zero(2), lim).safe);

    model.net.biases[1](0) = 0.949;
    CHECK(!predict_and_assess(model, Vec::Zero(2), lim).safe);

    model.net.biases[1](0) = 0.951;  // inside the raw limit, inside the margin band
    CHECK(!predict_and_assess(model, Vec::Zero(2), lim).safe);

    model.net.biases[1](0) = 0.9521;
    CHECK(predict_and_assess(model, Vec::Zero(2), lim).safe);
}

TEST_CASE("raising the margin never flips unsafe to safe") {
    Rng rng(5);
    GuardModel model;
    model.net = init_mlp({4, 8, 2}, {Act::relu, Act::identity}, rng);
    model.risk.buses = {0, 1};
    model.ready = true;
    VoltageLimits lim{0.95, 1.05};
    for (int trial = 0; trial < 200; ++trial) {
        Vec f(4);
        for (int i = 0; i < 4; ++i) f(i) = rng.uniform(-2.0, 2.0);
        model.margin = 0.0;
        const bool safe_m0 = predict_and_assess(model, f, lim).safe;
        model.margin = 0.004;
        const bool safe_m4 = predict_and_assess(model, f, lim).safe;
        if (!safe_m0) CHECK(!safe_m4);
    }
}

TEST_CASE("unready model refuses assessment") {
    GuardModel model;
    model.ready = false;
    CHECK_THROWS_AS(predict_and_assess(model, Vec::Zero(2), VoltageLimits{}),
                    ReadinessError);
}

TEST_CASE("guard trains to the readiness threshold on power-flow labels") {
    auto net = ieee33();
    auto devices = ieee33_devices();
    AcpfSolver solver(net);
    auto risk = default_high_risk_33();
    Rng rng(6);

    auto train = make_samples(net, devices, solver, risk, 3000, rng);
    auto held_out = make_samples(net, devices, solver, risk, 400, rng);

    GuardModel model;
    GuardConfig cfg;
    auto report = train_guard(model, train, cfg, 60, rng);
    CHECK(model.ready);
    CHECK(report.final_loss < 1e-2);

    auto rows = evaluate_guard(model, held_out, "/tmp/sa2co_guard_eval.csv");
    double mean_rmse = 0.0;
    for (const auto& r : rows) mean_rmse += r.rmse;
    mean_rmse /= static_cast<double>(rows.size());
    CHECK(mean_rmse < 1e-2);

    // consistency: states with comfortable true margins are declared safe
    const double clearance = 3.0 * mean_rmse;
    int eligible = 0, agreed = 0;
    for (const auto& s : held_out) {
        bool comfortable = true;
        for (int i = 0; i < s.labels.size(); ++i)
            if (s.labels(i) < net.limits.lower + model.margin + clearance ||
                s.labels(i) > net.limits.upper - model.margin - clearance)
                comfortable = false;
        if (!comfortable) continue;
        ++eligible;
        if (predict_and_assess(model, s.features, net.limits).safe) ++agreed;
    }
    REQUIRE(eligible > 50);
    CHECK(static_cast<double>(agreed) / eligible >= 0.99);
}

TEST_CASE("online trainer freezes only after window and sample gates") {
    auto net = ieee33();
    auto devices = ieee33_devices();
    AcpfSolver solver(net);
    auto risk = default_high_risk_33();
    Rng rng(7);

    GuardConfig cfg;
    cfg.readiness_window = 50;
    cfg.min_samples = 300;
    GuardTrainer trainer(cfg, 2 * net.bus_count, risk, rng);

    auto samples = make_samples(net, devices, solver, risk, 400, rng);
    int frozen_at = -1;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        trainer.add_labeled_sample(samples[i].features, samples[i].labels);
        trainer.train_minibatches(4, rng);
        if (trainer.maybe_freeze() && frozen_at < 0)
            frozen_at = static_cast<int>(i) + 1;
    }
    CHECK(frozen_at >= cfg.min_samples);
    if (trainer.model().ready) {
        CHECK(trainer.window_average() < cfg.readiness_threshold);
        CHECK(trainer.model().running_avg_loss < cfg.readiness_threshold);
    }
}

TEST_CASE("guard inference is at least 10x faster than the exact solver") {
    auto net = ieee33();
    auto devices = ieee33_devices();
    AcpfSolver solver(net);
    auto risk = default_high_risk_33();
    Rng rng(8);

    GuardModel model;
    model.net = init_mlp({66, 128, 128, 12}, {Act::relu, Act::relu, Act::identity}, rng);
    model.feature_norm.init(66);
    model.risk = risk;
    model.ready = true;

    auto profiles = fixed_profiles(net, 4);
    std::vector<double> zeros(devices.ess.size(), 0.0);
    const Vec features = guard_featurize(net, profiles, devices, zeros, 0);
    InjectionVector inj;
    inj.p = features.head(net.bus_count);
    inj.q = features.tail(net.bus_count);

    const int reps = 200;
    volatile double sink = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i)
        sink += predict_and_assess(model, features, net.limits).predicted(0);
    const auto t1 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) sink += solver.solve(inj).slack_p;
    const auto t2 = std::chrono::steady_clock::now();

    const double guard_us = std::chrono::duration<double, std::micro>(t1 - t0).count();
    const double acpf_us = std::chrono::duration<double, std::micro>(t2 - t1).count();
    CHECK(acpf_us / guard_us >= 10.0);
}

TEST_CASE("guard model checkpoint round-trip") {
    Rng rng(9);
    GuardModel model;
    model.net = init_mlp({4, 8, 2}, {Act::relu, Act::identity}, rng);
    model.feature_norm.init(4);
    for (int i = 0; i < 20; ++i) {
        Vec x(4);
        for (int j = 0; j < 4; ++j) x(j) = rng.normal();
        model.feature_norm.update(x);
    }
    model.risk.buses = {3, 7};
    model.margin = 0.0035;
    model.ready = true;
    model.running_avg_loss = 0.004;

    Checkpoint c;
    model.save(c, "guard");
    c.save("/tmp/sa2co_guard_ckpt.json");
    auto c2 = Checkpoint::load("/tmp/sa2co_guard_ckpt.json");
    GuardModel loaded;
    loaded.load(c2, "guard");
    CHECK(loaded.ready);
    CHECK(loaded.margin == doctest::Approx(0.0035));
    CHECK(loaded.risk.buses == model.risk.buses);
    Vec probe(4);
    probe << 0.3, -0.2, 0.9, 0.0;
    CHECK((loaded.predict(probe) - model.predict(probe)).cwiseAbs().maxCoeff() == 0.0);
}
