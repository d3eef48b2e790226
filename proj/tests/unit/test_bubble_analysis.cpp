#include <doctest.h>

#include <cmath>
#include <sstream>

#include "bubblelab/bubble_analysis.hpp"
#include "bubblelab/error.hpp"
#include "oracles.hpp"

using namespace bubblelab;

namespace {

Budget small_budget(std::size_t paths = 4000)
{
    Budget b;
    b.n_paths = paths;
    b.n_steps = 20;
    b.seed = 3;
    b.min_paths = 1000;
    return b;
}

const CurvePoint& point(const BubbleReport& r, const std::string& label, double t)
{
    for (const auto& p : r.curve) {
        if (p.prior_label == label && std::abs(p.t - t) < 1e-12) return p;
    }
    throw std::runtime_error("no curve point " + label);
}

} // namespace

TEST_CASE("method compatibility")
{
    const auto fam1 = make_constant_family({1.0, 2.0, 1}, 2, 1.0);
    const auto fam3 = make_constant_family({1.0, 2.0, 3}, 2, 1.0);
    const auto ev = AssetSpec::exploding_vol(1.0, 1.0);
    const auto gbm = AssetSpec::custom_sde(1.0, 0.2, 1.0, MaturitySpec::at(1.0));
    const auto cev = AssetSpec::custom_sde(1.0, 0.2, 1.5, MaturitySpec::at(1.0));
    const auto ib = AssetSpec::inverse_bessel({1.0, 0.0, 0.0}, MaturitySpec::at(1.0));
    CHECK_NOTHROW(check_compatible(ev, fam1, Method::MonteCarlo));
    CHECK_NOTHROW(check_compatible(ev, fam1, Method::ClosedForm));
    CHECK_NOTHROW(check_compatible(ev, fam1, Method::Tree));
    CHECK_THROWS_AS(check_compatible(ev, fam1, Method::Pde), IncompatibleMethod);
    CHECK_THROWS_AS(check_compatible(gbm, fam1, Method::MonteCarlo), IncompatibleMethod);
    CHECK_NOTHROW(check_compatible(gbm, fam1, Method::Pde));
    CHECK_THROWS_AS(check_compatible(cev, fam1, Method::Pde), IncompatibleMethod);
    CHECK_THROWS_AS(check_compatible(gbm, fam1, Method::ClosedForm), IncompatibleMethod);
    CHECK_THROWS_AS(check_compatible(ib, fam1, Method::MonteCarlo), IncompatibleMethod);
    CHECK_NOTHROW(check_compatible(ib, fam3, Method::MonteCarlo));
    CHECK_THROWS_AS(check_compatible(ib, fam3, Method::Tree), IncompatibleMethod);
    CHECK_THROWS_AS(method_from_string("lattice"), InvalidArgument);
    for (Method m : {Method::MonteCarlo, Method::Pde, Method::ClosedForm, Method::Tree}) {
        CHECK(method_from_string(to_string(m)) == m);
    }
}

TEST_CASE("exploding-vol: fundamental value is zero and the bubble is the price")
{
    const auto asset = AssetSpec::exploding_vol(1.0, 1.0);
    const auto fam = make_constant_family({1.0, 2.0, 1}, 2, 1.0);
    const auto r = analyze(asset, fam, HorizonSpec::finite(1.0), Method::MonteCarlo, small_budget());
    for (const auto& p : r.curve) {
        CHECK(p.fundamental.mean == 0.0);
        CHECK(std::abs(p.bubble.mean - p.market.mean) <= 1e-15);
    }
    CHECK(point(r, "const:1", 0.0).bubble.mean == 1.0);
    CHECK(point(r, "const:2", 1.0).market.mean == 0.0);
    CHECK(point(r, "const:2", 1.0).source == Source::Analytic);
    CHECK(r.robust_bubble);
    CHECK(bubble_nonnegative(r));
    REQUIRE(r.terminal_quantiles.size() == 8);
    for (const auto& q : r.terminal_quantiles) {
        CHECK(q.q05 <= q.median);
        CHECK(q.median <= q.q95);
    }
}

TEST_CASE("closed form needs a single agreeing prior")
{
    const auto asset = AssetSpec::inverse_bessel({1.0, 0.0, 0.0}, MaturitySpec::at(1.0));
    const auto fam = make_piecewise_family({1.0, 2.0, 3}, {0.5}, 2, 1.0);
    Budget b = small_budget();
    b.report_times = {0.0, 0.75};
    CHECK_NOTHROW(analyze(asset, fam, HorizonSpec::finite(1.0), Method::ClosedForm, b));
    b.report_times = {0.0, 0.25};
    CHECK_THROWS_AS(analyze(asset, fam, HorizonSpec::finite(1.0), Method::ClosedForm, b), IncompatibleMethod);
}

TEST_CASE("inverse-bessel curve: closed form and Monte Carlo agree")
{
    const auto asset = AssetSpec::inverse_bessel({1.0, 0.0, 0.0}, MaturitySpec::at(1.0));
    const auto fam = make_constant_family({0.0, 2.0, 3}, 3, 1.0);
    Budget b = small_budget(20000);
    b.report_times = {0.0, 0.5, 1.0};
    const auto cf = analyze(asset, fam, HorizonSpec::finite(1.0), Method::ClosedForm,
                            [&] { Budget c = b; c.report_times = {0.5, 1.0}; return c; }());
    const auto mc = analyze(asset, fam, HorizonSpec::finite(1.0), Method::MonteCarlo, b);
    for (const char* label : {"const:1", "const:2"}) {
        const double a = std::string(label) == "const:1" ? 1.0 : 2.0;
        const auto& c = point(cf, label, 0.5);
        const auto& m = point(mc, label, 0.5);
        // E[S_t] from the quadrature oracle
        const double market = oracle::inverse_radius_mean_quadrature(1.0, 0.5 * a);
        const double fundamental = oracle::inverse_radius_mean_quadrature(1.0, a);
        CHECK(c.market.mean == doctest::Approx(market).epsilon(1e-7));
        CHECK(c.fundamental.mean == doctest::Approx(fundamental).epsilon(1e-7));
        CHECK(std::abs(m.market.mean - market) < 4.0 * m.market.std_error);
        CHECK(std::abs(m.fundamental.mean - fundamental) < 4.0 * m.fundamental.std_error + 1e-12);
        CHECK(point(mc, label, 1.0).bubble.mean == doctest::Approx(0.0).epsilon(1e-12));
    }
    // at time 0 every member agrees, so S* includes the degenerate prior
    CHECK(point(mc, "const:1", 0.0).fundamental.mean == doctest::Approx(1.0));
    CHECK(point(mc, "const:1", 0.0).bubble.mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(mc.robust_bubble);
}

TEST_CASE("classification verdicts")
{
    const auto asset = AssetSpec::inverse_bessel({1.0, 0.0, 0.0}, MaturitySpec::at(1.0));
    const Prior zero{"z", Schedule::constant(0.0, 1.0), 3};
    const Prior one{"o", Schedule::constant(1.0, 1.0), 3};
    Budget b = small_budget(5000);
    CHECK(classify_prior(asset, zero, {0.5, 1.0}, b, false).verdict == Verdict::TrueMartingale);
    const auto c = classify_prior(asset, one, {0.5, 1.0}, b, false);
    CHECK(c.verdict == Verdict::StrictLocalMartingale);
    CHECK_FALSE(c.analytic);
    CHECK(classify_prior(asset, one, {0.5, 1.0}, b, true).analytic);
    b.n_paths = 100;
    CHECK(classify_prior(asset, one, {0.5, 1.0}, b, false).verdict == Verdict::Inconclusive);
    CHECK(classify_prior(asset, one, {0.5, 1.0}, b, true).verdict == Verdict::StrictLocalMartingale);
}

TEST_CASE("restricted family bubble interval")
{
    const auto asset = AssetSpec::exploding_vol(1.0, 1.0);
    const auto r = restricted_family_bubble(asset, {1.0, 2.0, 1}, 1.5, 0.5, 3, small_budget());
    REQUIRE(r.bubble_interval);
    CHECK(r.bubble_interval->first == 0.5);
    CHECK(r.bubble_interval->second == 1.0);
    CHECK(r.robust_bubble);
    CHECK_FALSE(r.tree_shadow.empty());
    const auto empty = restricted_family_bubble(asset, {1.0, 2.0, 1}, 1.5, 1.0, 3, small_budget());
    CHECK(empty.family.kind == FamilyKind::ConstantGrid);
    CHECK_THROWS_AS(restricted_family_bubble(AssetSpec::fiat_money(), {1.0, 2.0, 1}, 1.5, 0.5, 3, small_budget()),
                    InvalidArgument);
}

TEST_CASE("fiat money over an infinite horizon")
{
    const auto fam = make_constant_family({1.0, 2.0, 1}, 3, 5.0);
    const auto r = analyze(AssetSpec::fiat_money(), fam, HorizonSpec::infinite_truncated(5.0), Method::ClosedForm,
                           small_budget());
    for (const auto& p : r.curve) {
        CHECK(p.fundamental.mean == 0.0);
        CHECK(p.bubble.mean == 1.0);
    }
    REQUIRE(r.infinite);
    CHECK(r.infinite->symmetric_martingale);
    CHECK_FALSE(r.infinite->reduced_to_finite);
    for (const auto& p : r.infinite->points) {
        CHECK(p.fundamental.mean == 0.0);
        CHECK(p.bubble.mean == 1.0);
    }
}

TEST_CASE("finite maturity reduces the infinite horizon to the finite case")
{
    const auto asset = AssetSpec::exploding_vol(1.0, 1.0);
    const auto fam = make_constant_family({1.0, 2.0, 1}, 2, 1.0);
    const auto f = infinite_horizon_value(asset, fam, 1.0, small_budget());
    CHECK(f.reduced_to_finite);
}

TEST_CASE("tree and pde methods")
{
    const auto fam = make_constant_family({1.0, 2.0, 1}, 2, 1.0);
    Budget b = small_budget();
    b.tree_steps = 16;
    b.pde_nx = 201;
    const auto tr = analyze(AssetSpec::exploding_vol(1.0, 1.0), fam, HorizonSpec::finite(1.0), Method::Tree, b);
    CHECK(point(tr, "const:1", 0.0).bubble.mean == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(point(tr, "const:1", 0.0).source == Source::Tree);
    CHECK(tr.robust_bubble);

    const auto gbm = AssetSpec::custom_sde(1.0, 0.2, 1.0, MaturitySpec::at(1.0));
    const auto pd = analyze(gbm, fam, HorizonSpec::finite(1.0), Method::Pde, b);
    for (const auto& p : pd.curve) CHECK(std::abs(p.bubble.mean) <= p.band + 1e-6);
    CHECK_FALSE(pd.robust_bubble);
}

TEST_CASE("report serialisation")
{
    const auto fam = make_constant_family({1.0, 2.0, 1}, 2, 1.0);
    const auto r = analyze(AssetSpec::exploding_vol(1.0, 1.0), fam, HorizonSpec::finite(1.0), Method::ClosedForm,
                           small_budget());
    const auto j = to_json(r);
    CHECK(j["robust_bubble"] == true);
    CHECK(j["curve"].size() == r.curve.size());
    CHECK(j["method"] == "closed-form");
    std::ostringstream csv;
    write_curve_csv(csv, r);
    const std::string text = csv.str();
    CHECK(text.rfind("prior_label,t,market,market_stderr,fundamental,fundamental_stderr,bubble,bubble_stderr,band,source\n",
                     0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(r.curve.size()) + 1);
}
