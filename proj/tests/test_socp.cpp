#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "sa2co/rng.hpp"
#include "sa2co/socp.hpp"

using namespace sa2co;

namespace {

Eigen::SparseMatrix<double> sparse_from(
    int rows, int cols, const std::vector<Eigen::Triplet<double>>& trip) {
    Eigen::SparseMatrix<double> a(rows, cols);
    a.setFromTriplets(trip.begin(), trip.end());
    return a;
}

}  // namespace

TEST_CASE("tiny LP with a known optimum") {
    // min -x1 - 2 x2  s.t.  x1 + x2 + s1 = 4, x1 + s2 = 3, x >= 0
    // optimum: x2 = 4, x1 = 0 -> objective -8
    ConeProgram p;
    p.dims.nonneg = 4;
    p.c = Vec(4);
    p.c << -1.0, -2.0, 0.0, 0.0;
    p.b = Vec(2);
    p.b << 4.0, 3.0;
    p.A = sparse_from(2, 4,
                      {{0, 0, 1.0}, {0, 1, 1.0}, {0, 2, 1.0}, {1, 0, 1.0}, {1, 3, 1.0}});
    auto sol = solve_socp(p);
    REQUIRE(sol.ok());
    CHECK(sol.primal_objective == doctest::Approx(-8.0).epsilon(1e-6));
    CHECK(sol.x(1) == doctest::Approx(4.0).epsilon(1e-6));
    CHECK(sol.primal_residual < 1e-8);
    CHECK(sol.dual_residual < 1e-8);
}

TEST_CASE("LP with free variables") {
    // min t  s.t. t - u = 1, u = 2, u free, t free plus t >= 0 via slack:
    // model: free vars (t, u), nonneg slack s with t - s = 0
    ConeProgram p;
    p.dims.free = 2;
    p.dims.nonneg = 1;
    p.c = Vec(3);
    p.c << 1.0, 0.0, 0.0;
    p.b = Vec(3);
    p.b << 1.0, 2.0, 0.0;
    p.A = sparse_from(3, 3,
                      {{0, 0, 1.0}, {0, 1, -1.0}, {1, 1, 1.0}, {2, 0, 1.0}, {2, 2, -1.0}});
    auto sol = solve_socp(p);
    REQUIRE(sol.ok());
    CHECK(sol.x(0) == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(sol.x(1) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("euclidean projection via SOC epigraph") {
    // min t  s.t. (t, x - p) in SOC, x fixed by equalities to q:
    // distance between fixed points p and q
    // vars: t (soc head), d1, d2 (soc tail) and free x1, x2
    // equalities: d = x - p, x = q
    const double px = 0.3, py = -0.4, qx = 1.1, qy = 0.5;
    ConeProgram p;
    p.dims.free = 2;     // x
    p.dims.soc = {3};    // (t, d1, d2)
    p.c = Vec(5);
    p.c << 0.0, 0.0, 1.0, 0.0, 0.0;
    p.b = Vec(4);
    p.b << -px, -py, qx, qy;
    p.A = sparse_from(4, 5,
                      {{0, 3, 1.0}, {0, 0, -1.0},   // d1 - x1 = -px
                       {1, 4, 1.0}, {1, 1, -1.0},   // d2 - x2 = -py
                       {2, 0, 1.0},                  // x1 = qx
                       {3, 1, 1.0}});                // x2 = qy
    auto sol = solve_socp(p);
    REQUIRE(sol.ok());
    const double expected = std::hypot(qx - px, qy - py);
    CHECK(sol.x(2) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("quadratic-over-linear via rotated cone pattern") {
    // min l  s.t.  l * v >= w^2  (SOC4 as (l+v, 2w, l-v)), v = 2, w = 3
    // optimum l = w^2 / v = 4.5
    ConeProgram p;
    p.dims.free = 3;   // l, v, w
    p.dims.soc = {3};  // (a, b, c) = (l+v, 2w, l-v)
    p.c = Vec(6);
    p.c << 1.0, 0.0, 0.0, 0.0, 0.0, 0.0;
    p.b = Vec(5);
    p.b << 0.0, 0.0, 0.0, 2.0, 3.0;
    p.A = sparse_from(5, 6,
                      {{0, 3, 1.0}, {0, 0, -1.0}, {0, 1, -1.0},  // a = l + v
                       {1, 4, 1.0}, {1, 2, -2.0},                 // b = 2w
                       {2, 5, 1.0}, {2, 0, -1.0}, {2, 1, 1.0},    // c = l - v
                       {3, 1, 1.0},                                // v = 2
                       {4, 2, 1.0}});                              // w = 3
    auto sol = solve_socp(p);
    REQUIRE(sol.ok());
    CHECK(sol.x(0) == doctest::Approx(4.5).epsilon(1e-6));
}

TEST_CASE("randomized LPs agree with a vertex-enumeration oracle") {
    // min c'x s.t. A x <= b (x free, 2D), solved by enumerating vertices.
    Rng rng(21);
    for (int trial = 0; trial < 12; ++trial) {
        const int rows = 5;
        Mat a(rows, 2);
        Vec b(rows), c(2);
        // constraints around the origin guaranteeing a bounded polytope
        for (int i = 0; i < rows; ++i) {
            const double ang = 2.0 * M_PI * i / rows + rng.uniform(0.0, 0.4);
            a(i, 0) = std::cos(ang);
            a(i, 1) = std::sin(ang);
            b(i) = rng.uniform(0.5, 2.0);
        }
        c << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);

        // oracle: intersect all constraint pairs, keep feasible vertices
        double best = 1e18;
        for (int i = 0; i < rows; ++i)
            for (int j = i + 1; j < rows; ++j) {
                Mat m(2, 2);
                m << a(i, 0), a(i, 1), a(j, 0), a(j, 1);
                if (std::abs(m.determinant()) < 1e-9) continue;
                Vec rhs(2);
                rhs << b(i), b(j);
                Vec v = m.fullPivLu().solve(rhs);
                bool feasible = true;
                for (int k = 0; k < rows; ++k)
                    if (a.row(k).dot(v) > b(k) + 1e-9) feasible = false;
                if (feasible) best = std::min(best, c.dot(v));
            }
        REQUIRE(best < 1e17);

        // cone form: free x (2), slacks s >= 0 with A x + s = b
        ConeProgram p;
        p.dims.free = 2;
        p.dims.nonneg = rows;
        p.c = Vec::Zero(2 + rows);
        p.c.head(2) = c;
        p.b = b;
        std::vector<Eigen::Triplet<double>> trip;
        for (int i = 0; i < rows; ++i) {
            trip.emplace_back(i, 0, a(i, 0));
            trip.emplace_back(i, 1, a(i, 1));
            trip.emplace_back(i, 2 + i, 1.0);
        }
        p.A = sparse_from(rows, 2 + rows, trip);
        auto sol = solve_socp(p);
        REQUIRE(sol.ok());
        CHECK(sol.primal_objective == doctest::Approx(best).epsilon(1e-5));
    }
}

TEST_CASE("duality gap and feasibility meet the advertised tolerances") {
    Rng rng(22);
    for (int trial = 0; trial < 8; ++trial) {
        // random feasible SOCP: min c'x over Ax = b with x in R+^3 x SOC3
        const int n_lp = 3, q = 3;
        ConeProgram p;
        p.dims.nonneg = n_lp;
        p.dims.soc = {q};
        const int n = n_lp + q;
        // build b from a strictly interior x0 so the problem is feasible
        Vec x0(n);
        x0 << 1.0 + rng.uniform(), 1.0 + rng.uniform(), 1.0 + rng.uniform(),
            2.0 + rng.uniform(), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5);
        std::vector<Eigen::Triplet<double>> trip;
        const int m = 3;
        Mat dense = Mat::Zero(m, n);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                dense(i, j) = rng.uniform(-1.0, 1.0);
                trip.emplace_back(i, j, dense(i, j));
            }
        p.A = sparse_from(m, n, trip);
        p.b = dense * x0;
        p.c = Vec(n);
        for (int j = 0; j < n; ++j) p.c(j) = rng.uniform(-0.2, 1.0);
        p.c(n_lp) = 1.0;  // keep the SOC head strongly priced: bounded

        auto sol = solve_socp(p);
        if (!sol.ok()) continue;  // a random instance may be unbounded
        CHECK(sol.primal_residual <= 1e-8);
        CHECK(sol.dual_residual <= 1e-8);
        CHECK(sol.rel_gap <= 1e-6);
        // strong duality: objectives match at the reported tolerance
        CHECK(std::abs(sol.primal_objective - sol.dual_objective) /
                  std::max(1.0, std::abs(sol.primal_objective)) <
              1e-5);
    }
}

TEST_CASE("program dump round-trips through the documented listing") {
    ConeProgram p;
    p.dims.free = 1;
    p.dims.nonneg = 1;
    p.dims.soc = {3};
    p.c = Vec::Zero(5);
    p.c(0) = 1.0;
    p.b = Vec::Zero(1);
    p.A = sparse_from(1, 5, {{0, 0, 1.0}, {0, 1, -1.0}});
    write_cone_program(p, "/tmp/sa2co_socp_dump.txt");
    std::ifstream f("/tmp/sa2co_socp_dump.txt");
    std::string line;
    std::getline(f, line);
    CHECK(line == "cone-program v1");
    std::getline(f, line);
    CHECK(line == "vars 5 rows 1");
    std::getline(f, line);
    CHECK(line == "free 1 nonneg 1 soc 3");
}
