#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles/finite_diff.hpp"
#include "sa2co/checkpoint.hpp"
#include "sa2co/nn.hpp"
#include "sa2co/rng.hpp"

using namespace sa2co;
using oracle::fd_gradient;
using oracle::flatten_grads;
using oracle::max_rel_err;

TEST_CASE("all-zero weights pass the bias through an identity output layer") {
    MlpParams p;
    p.sizes = {3, 2};
    p.activations = {Act::identity};
    p.weights = {Mat::Zero(2, 3)};
    Vec b(2);
    b << 0.5, -1.5;
    p.biases = {b};
    Vec y = mlp_forward_vec(p, Vec::Ones(3));
    CHECK(y(0) == doctest::Approx(0.5));
    CHECK(y(1) == doctest::Approx(-1.5));
}

TEST_CASE("identity layer with identity weights reproduces the input") {
    MlpParams p;
    p.sizes = {4, 4};
    p.activations = {Act::identity};
    p.weights = {Mat::Identity(4, 4)};
    p.biases = {Vec::Zero(4)};
    Vec x(4);
    x << 1.0, -2.0, 3.0, 0.25;
    CHECK((mlp_forward_vec(p, x) - x).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("random 4-8-2 net matches a hand-rolled matrix oracle") {
    Rng rng(5);
    auto p = init_mlp({4, 8, 2}, {Act::tanh_fn, Act::identity}, rng);
    Vec x(4);
    for (int i = 0; i < 4; ++i) x(i) = rng.uniform(-1.0, 1.0);

    Vec h = p.weights[0] * x + p.biases[0];
    for (int i = 0; i < h.size(); ++i) h(i) = std::tanh(h(i));
    Vec expect = p.weights[1] * h + p.biases[1];

    Vec got = mlp_forward_vec(p, x);
    CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero output grad gives zero parameter grads") {
    Rng rng(6);
    auto p = init_mlp({3, 5, 2}, {Act::relu, Act::identity}, rng);
    ForwardCache cache;
    mlp_forward(p, Mat::Random(3, 4), &cache);
    auto g = mlp_backward(p, cache, Mat::Zero(2, 4));
    CHECK(flatten_grads(g).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("scalar quadratic net gradient by hand") {
    // f(x) = (w*x)^2 with w=2, x=3: df/dw = 2*(w*x)*x = 36
    MlpParams p;
    p.sizes = {1, 1};
    p.activations = {Act::identity};
    p.weights = {Mat::Constant(1, 1, 2.0)};
    p.biases = {Vec::Zero(1)};
    ForwardCache cache;
    Mat y = mlp_forward(p, Mat::Constant(1, 1, 3.0), &cache);
    CHECK(y(0, 0) == doctest::Approx(6.0));
    Mat gy = 2.0 * y;  // d(y^2)/dy
    auto g = mlp_backward(p, cache, gy);
    CHECK(g.d_weights[0](0, 0) == doctest::Approx(36.0));
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng(7);
    const std::vector<std::vector<int>> shapes = {{3, 8, 2}, {5, 16, 16, 4}, {2, 6, 1}};
    const std::vector<std::vector<Act>> acts = {
        {Act::relu, Act::identity},
        {Act::tanh_fn, Act::relu, Act::identity},
        {Act::tanh_fn, Act::identity}};
    for (std::size_t cfg = 0; cfg < shapes.size(); ++cfg) {
        auto p = init_mlp(shapes[cfg], acts[cfg], rng);
        const int in = shapes[cfg].front(), out = shapes[cfg].back();
        Mat x(in, 3);
        for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1.0, 1.0);
        Mat target(out, 3);
        for (int i = 0; i < target.size(); ++i) target.data()[i] = rng.uniform(-1.0, 1.0);

        // L = 0.5 * sum((y - target)^2)
        auto loss = [&]() {
            Mat y = mlp_forward(p, x);
            return 0.5 * (y - target).squaredNorm();
        };
        ForwardCache cache;
        Mat y = mlp_forward(p, x, &cache);
        auto analytic = mlp_backward(p, cache, y - target);

        Vec fd = fd_gradient(p, loss);
        CHECK(max_rel_err(flatten_grads(analytic), fd) < 1e-4);
    }
}

TEST_CASE("input gradient matches finite differences") {
    Rng rng(8);
    auto p = init_mlp({4, 10, 3}, {Act::relu, Act::identity}, rng);
    Vec x(4);
    for (int i = 0; i < 4; ++i) x(i) = rng.uniform(-1.0, 1.0);

    auto loss_at = [&](const Vec& xin) {
        Vec y = mlp_forward_vec(p, xin);
        return 0.5 * y.squaredNorm();
    };
    ForwardCache cache;
    Mat y = mlp_forward(p, Mat(x), &cache);
    Mat dx;
    mlp_backward(p, cache, y, &dx);

    const double h = 1e-6;
    for (int i = 0; i < 4; ++i) {
        Vec up = x, down = x;
        up(i) += h;
        down(i) -= h;
        const double fd = (loss_at(up) - loss_at(down)) / (2.0 * h);
        CHECK(dx(i, 0) == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("forward is deterministic") {
    Rng rng(9);
    auto p = init_mlp({6, 12, 2}, {Act::relu, Act::identity}, rng);
    Mat x = Mat::Random(6, 5);
    Mat a = mlp_forward(p, x);
    Mat b = mlp_forward(p, x);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam with zero gradients and zero decay is the identity") {
    Rng rng(10);
    auto p = init_mlp({3, 4, 1}, {Act::relu, Act::identity}, rng);
    auto snapshot = p;
    auto s = AdamState::like(p, 1e-3);
    adam_step(s, p, MlpGrads::zeros_like(p));
    for (int l = 0; l < p.layer_count(); ++l) {
        CHECK((p.weights[l] - snapshot.weights[l]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((p.biases[l] - snapshot.biases[l]).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("first adam step moves each coordinate by about lr") {
    MlpParams p;
    p.sizes = {1, 1};
    p.activations = {Act::identity};
    p.weights = {Mat::Constant(1, 1, 1.0)};
    p.biases = {Vec::Zero(1)};
    auto s = AdamState::like(p, 2e-4);
    MlpGrads g = MlpGrads::zeros_like(p);
    g.d_weights[0](0, 0) = 0.37;  // any positive gradient
    adam_step(s, p, g);
    // bias-corrected first step is a signed step of magnitude ~lr
    CHECK(p.weights[0](0, 0) == doctest::Approx(1.0 - 2e-4).epsilon(1e-6));
}

TEST_CASE("decoupled decay shrinks parameters with zero gradients") {
    MlpParams p;
    p.sizes = {1, 1};
    p.activations = {Act::identity};
    p.weights = {Mat::Constant(1, 1, 2.0)};
    p.biases = {Vec::Constant(1, 1.0)};
    auto s = AdamState::like(p, 2e-4, 1e-2);
    adam_step(s, p, MlpGrads::zeros_like(p));
    CHECK(p.weights[0](0, 0) == doctest::Approx(2.0 * (1.0 - 2e-4 * 1e-2)));
    // biases are not decayed... decay applies to weights only
    CHECK(p.biases[0](0) == doctest::Approx(1.0));
}

TEST_CASE("adam with lr zero leaves parameters unchanged") {
    Rng rng(11);
    auto p = init_mlp({2, 3, 1}, {Act::tanh_fn, Act::identity}, rng);
    auto snapshot = p;
    auto s = AdamState::like(p, 0.0);
    MlpGrads g = MlpGrads::zeros_like(p);
    g.d_weights[0].setConstant(0.5);
    adam_step(s, p, g);
    for (int l = 0; l < p.layer_count(); ++l)
        CHECK((p.weights[l] - snapshot.weights[l]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam rejects non-finite gradients") {
    Rng rng(12);
    auto p = init_mlp({2, 2}, {Act::identity}, rng);
    auto snapshot = p;
    auto s = AdamState::like(p, 1e-3);
    MlpGrads g = MlpGrads::zeros_like(p);
    g.d_weights[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adam_step(s, p, g), NumericalError);
    CHECK((p.weights[0] - snapshot.weights[0]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shape mismatches raise shape errors") {
    Rng rng(13);
    auto p = init_mlp({3, 2}, {Act::identity}, rng);
    CHECK_THROWS_AS(mlp_forward(p, Mat::Zero(4, 1)), ShapeError);
    ForwardCache cache;
    mlp_forward(p, Mat::Zero(3, 2), &cache);
    CHECK_THROWS_AS(mlp_backward(p, cache, Mat::Zero(2, 5)), ShapeError);
}

TEST_CASE("running norm standardizes a stream") {
    Rng rng(14);
    RunningNorm norm;
    for (int i = 0; i < 5000; ++i) {
        Vec x(3);
        x << 5.0 + 2.0 * rng.normal(), -1.0 + 0.5 * rng.normal(), 100.0 * rng.uniform();
        norm.update(x);
    }
    CHECK(norm.mean(0) == doctest::Approx(5.0).epsilon(0.05));
    CHECK(std::sqrt(norm.variance()(1)) == doctest::Approx(0.5).epsilon(0.1));
    Vec probe(3);
    probe << 5.0, -1.0, 50.0;
    auto z = norm.normalize(probe);
    CHECK(std::abs(z(0)) < 0.1);
    CHECK(std::abs(z(1)) < 0.1);
}

TEST_CASE("checkpoint round-trips params, adam and rng bit-for-bit") {
    Rng rng(15);
    auto p = init_mlp({4, 6, 2}, {Act::relu, Act::identity}, rng);
    auto s = AdamState::like(p, 2e-4, 1e-2);
    MlpGrads g = MlpGrads::zeros_like(p);
    g.d_weights[0].setConstant(0.1);
    adam_step(s, p, g);

    RunningNorm norm;
    for (int i = 0; i < 10; ++i) {
        Vec x(2);
        x << rng.normal(), rng.uniform();
        norm.update(x);
    }

    Checkpoint c;
    c.put_mlp("net", p);
    c.put_adam("opt", s);
    c.put_norm("norm", norm);
    c.put_string("rng", rng.serialize());
    c.put_int("step", 42);
    const std::string path = "/tmp/sa2co_ckpt_test.json";
    c.save(path);

    auto c2 = Checkpoint::load(path);
    auto p2 = c2.get_mlp("net");
    auto s2 = c2.get_adam("opt", p2);
    auto n2 = c2.get_norm("norm");
    Rng rng2;
    rng2.deserialize(c2.get_string("rng"));

    for (int l = 0; l < p.layer_count(); ++l) {
        CHECK((p.weights[l] - p2.weights[l]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((s.v_w[l] - s2.v_w[l]).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(n2.count == norm.count);
    CHECK((n2.m2 - norm.m2).cwiseAbs().maxCoeff() == 0.0);
    CHECK(c2.get_int("step") == 42);
    // the restored engine continues the exact stream
    for (int i = 0; i < 16; ++i) CHECK(rng.raw() == rng2.raw());
}
