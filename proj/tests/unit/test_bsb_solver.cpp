#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "bubblelab/bsb_solver.hpp"
#include "oracles.hpp"

using namespace bubblelab;

namespace {

PdeProblem canonical(double lo, double hi, std::function<double(double)> g, double half_width = 8.0)
{
    PdeProblem p;
    p.a_low = lo;
    p.a_high = hi;
    p.generator = GeneratorKind::Canonical;
    p.payoff = std::move(g);
    p.payoff_label = "g";
    p.x_min = -half_width;
    p.x_max = half_width;
    p.horizon = 1.0;
    return p;
}

ValueSurface solve_min(const PdeProblem& p, std::size_t nx)
{
    return solve(p, nx, min_time_steps(p, nx));
}

} // namespace

TEST_CASE("problem validation")
{
    auto p = canonical(1.0, 2.0, [](double x) { return x; });
    CHECK_NOTHROW(p.validate());
    p.a_low = 3.0;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p = canonical(1.0, 2.0, [](double x) { return x; });
    p.x_max = p.x_min;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p = canonical(1.0, 2.0, nullptr);
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    CHECK_THROWS_AS(generator_kind_from_string("heat"), InvalidArgument);
    const auto d = PdeProblem::from_domain({0.5, 1.5, 1}, GeneratorKind::Lognormal, [](double x) { return x; }, 0.0,
                                           3.0, 1.0);
    CHECK(d.a_low == 0.5);
    CHECK(d.a_high == 1.5);
}

TEST_CASE("monotonicity bound is enforced")
{
    const auto p = canonical(1.0, 2.0, [](double x) { return std::max(x, 0.0); });
    const std::size_t nx = 201;
    const std::size_t nt = min_time_steps(p, nx);
    const double dx = 16.0 / 200.0;
    CHECK(max_admissible_dt(p, nx) == doctest::Approx(0.5 * dx * dx / 2.0).epsilon(1e-12));
    CHECK(1.0 / nt <= max_admissible_dt(p, nx));
    CHECK(1.0 / (nt - 1) > max_admissible_dt(p, nx));
    CHECK_NOTHROW(solve(p, nx, nt));
    try {
        solve(p, nx, nt - 1);
        FAIL("expected a CFL violation");
    } catch (const CflViolation& e) {
        CHECK(e.max_admissible_dt() == max_admissible_dt(p, nx));
    }
}

TEST_CASE("singleton quadratic payoff gives a T")
{
    for (double a : {0.5, 1.0, 2.0}) {
        const auto s = solve_min(canonical(a, a, [](double x) { return x * x; }), 401);
        CHECK(s.initial(0.0) == doctest::Approx(a).epsilon(0.02));
    }
}

TEST_CASE("singleton call matches the Bachelier price")
{
    for (double a : {0.5, 2.0}) {
        const auto s = solve_min(canonical(a, a, [](double x) { return std::max(x - 0.3, 0.0); }), 401);
        for (double x : {-1.0, 0.0, 0.5}) {
            CHECK(s.initial(x) == doctest::Approx(oracle::bachelier_call(x, 0.3, a)).epsilon(2e-3));
        }
    }
}

TEST_CASE("lognormal singleton call matches Black-Scholes")
{
    PdeProblem p;
    p.a_low = p.a_high = 0.04;
    p.generator = GeneratorKind::Lognormal;
    p.payoff = [](double x) { return std::max(x - 100.0, 0.0); };
    p.x_min = 0.0;
    p.x_max = 400.0;
    p.horizon = 1.0;
    const auto s = solve_min(p, 801);
    for (double x : {90.0, 100.0, 110.0}) {
        CHECK(s.initial(x) == doctest::Approx(oracle::black_scholes_call(x, 100.0, 0.04)).epsilon(5e-3));
    }
}

TEST_CASE("convex payoffs select the top rate, concave the bottom rate")
{
    const std::size_t nx = 301;
    const auto convex = canonical(0.5, 2.0, [](double x) { return std::max(x, 0.0); });
    const std::size_t nt = min_time_steps(convex, nx);
    const auto v = solve(convex, nx, nt);
    const auto hi = solve_linear(convex, 2.0, nx, nt);
    for (std::size_t i = 0; i < nx; ++i) CHECK(v.at(0, i) == doctest::Approx(hi.at(0, i)).epsilon(1e-12));

    const auto concave = canonical(0.5, 2.0, [](double x) { return -x * x; });
    const auto w = solve(concave, nx, nt);
    CHECK(w.initial(0.0) == doctest::Approx(-0.5).epsilon(0.02));
}

TEST_CASE("mixed convexity dominates both linear solves")
{
    const auto g = [](double x) { return std::max(1.0 - std::abs(x), 0.0) - 0.5 * std::max(std::abs(x) - 2.0, 0.0); };
    const auto p = canonical(0.5, 2.0, g);
    const std::size_t nx = 201;
    const std::size_t nt = min_time_steps(p, nx);
    const auto v = solve(p, nx, nt);
    const auto lo = solve_linear(p, 0.5, nx, nt);
    const auto hi = solve_linear(p, 2.0, nx, nt);
    double strict = 0.0;
    for (std::size_t i = 0; i < nx; ++i) {
        CHECK(v.at(0, i) >= std::max(lo.at(0, i), hi.at(0, i)) - 1e-12);
        strict = std::max(strict, v.at(0, i) - std::max(lo.at(0, i), hi.at(0, i)));
    }
    CHECK(strict > 1e-4);
}

TEST_CASE("singleton solve is bit-identical to the linear solve")
{
    const auto p = canonical(1.3, 1.3, [](double x) { return std::cos(x); });
    const std::size_t nt = min_time_steps(p, 151);
    CHECK(solve(p, 151, nt).values == solve_linear(p, 1.3, 151, nt).values);
}

TEST_CASE("property: the scheme is monotone in the payoff")
{
    std::mt19937_64 rng(44);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> knots(9);
        for (auto& k : knots) k = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        const double bump = std::uniform_real_distribution<double>(0.0, 0.2)(rng);
        const auto g = [knots](double x) {
            const double u = std::clamp((x + 8.0) / 2.0, 0.0, 7.999);
            const auto i = static_cast<std::size_t>(u);
            return knots[i] + (u - i) * (knots[i + 1] - knots[i]);
        };
        const auto p1 = canonical(0.5, 1.5, g);
        const auto p2 = canonical(0.5, 1.5, [g, bump](double x) { return g(x) + bump * std::exp(-x * x); });
        const std::size_t nt = min_time_steps(p1, 161);
        const auto a = solve(p1, 161, nt);
        const auto b = solve(p2, 161, nt);
        for (std::size_t k = 0; k < a.values.size(); ++k) CHECK(a.values[k] <= b.values[k]);
    }
}

TEST_CASE("constants are preserved exactly")
{
    const auto s = solve_min(canonical(1.0, 3.0, [](double) { return 2.5; }), 101);
    for (double v : s.values) CHECK(v == 2.5);
}

TEST_CASE("refinement sweep converges and approaches the tree")
{
    const auto p = canonical(1.0, 2.0, [](double x) { return std::max(x, 0.0); });
    std::size_t nt = min_time_steps(p, 161);
    nt = (nt + 49) / 50 * 50;
    const auto sweep = refinement_sweep(p, 0.0, 161, nt, 50, 3);
    REQUIRE(sweep.levels.size() == 3);
    CHECK(sweep.levels[1].nx == 321);
    CHECK(sweep.levels[1].nt == 4 * nt);
    CHECK(sweep.levels[2].tree_steps == 200);
    REQUIRE(sweep.self_convergence_ratios.size() == 1);
    CHECK(sweep.self_convergence_ratios[0] < 0.75);
    CHECK(sweep.discrepancies_decreasing);
    // the exact answer is the Bachelier price at the top rate
    CHECK(sweep.levels.back().value == doctest::Approx(oracle::bachelier_call(0.0, 0.0, 2.0)).epsilon(1e-3));
}

TEST_CASE("tree comparison preconditions")
{
    const auto p = canonical(1.0, 2.0, [](double x) { return std::max(x, 0.0); });
    const std::size_t nt = min_time_steps(p, 161);
    CHECK_THROWS_AS(compare_with_tree(p, {7, 0.0}, 161, nt * 7), InvalidArgument);
    CHECK_THROWS_AS(compare_with_tree(p, {10, 0.0}, 161, nt * 10 + 1), InvalidArgument);
}

TEST_CASE("surface output")
{
    const auto s = solve_min(canonical(1.0, 1.0, [](double x) { return x; }, 1.0), 11);
    std::ostringstream out;
    write_surface_csv(out, s, s.nt(), 5);
    const std::string text = out.str();
    CHECK(text.rfind("t,x,v\n", 0) == 0);
    // two time rows (0 and T), three x columns
    CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 3);
    const auto meta = surface_metadata(s);
    CHECK(meta["nx"] == 11);
    CHECK(meta["generator"] == "canonical");
    CHECK(meta["nt"] == s.nt());
}
