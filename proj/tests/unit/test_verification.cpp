#include <doctest.h>

#include <random>

#include "bubblelab/error.hpp"
#include "bubblelab/verification.hpp"
#include "generators.hpp"

using namespace bubblelab;

TEST_CASE("suite names")
{
    for (Suite s : {Suite::Tree, Suite::Pasting, Suite::Dominance, Suite::Pde, Suite::All}) {
        CHECK(suite_from_string(to_string(s)) == s);
    }
    CHECK_THROWS_AS(suite_from_string("everything"), InvalidArgument);
}

TEST_CASE("tree-based suites pass across seeds")
{
    SuiteOptions o;
    o.random_trees = 10;
    o.equivalence_trees = 5;
    for (std::uint64_t seed : {1u, 2u, 77u}) {
        for (Suite s : {Suite::Tree, Suite::Pasting, Suite::Dominance}) {
            const auto r = run_suite(s, seed, o);
            CHECK(!r.checks.empty());
            for (const auto& c : r.checks) {
                INFO(c.check << " seed " << seed << " discrepancy " << c.discrepancy);
                CHECK(c.pass);
            }
        }
    }
}

TEST_CASE("pde suite passes")
{
    const auto r = run_suite(Suite::Pde, 1);
    for (const auto& c : r.checks) {
        INFO(c.check << " discrepancy " << c.discrepancy);
        CHECK(c.pass);
    }
    CHECK(r.all_pass());
}

TEST_CASE("suites are reproducible and serialisable")
{
    SuiteOptions o;
    o.random_trees = 5;
    o.equivalence_trees = 3;
    const auto a = to_json(run_suite(Suite::Pasting, 9, o));
    const auto b = to_json(run_suite(Suite::Pasting, 9, o));
    CHECK(a == b);
    CHECK(a["suite"] == "pasting");
    CHECK(a["seed"] == 9);
    CHECK(a["pass"] == true);
    for (const auto& c : a["checks"]) {
        CHECK(c.contains("check"));
        CHECK(c.contains("instance"));
        CHECK(c.contains("discrepancy"));
        CHECK(c.contains("pass"));
    }
}

TEST_CASE("constant levels keep the sublinear value")
{
    std::mt19937_64 rng(6);
    const auto t = gen::tree(rng, 2, 3, 2);
    const auto longer = append_constant_levels(t, 2);
    CHECK(longer.depth() == 4);
    CHECK(sublinear_dp(longer, longer.terminal_payoff()).values[longer.root()] ==
          doctest::Approx(sublinear_dp(t, t.terminal_payoff()).values[t.root()]).epsilon(1e-13));
}
