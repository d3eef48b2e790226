// Acceptance criteria, one [PASS]/[FAIL] line each.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bubblelab/assets.hpp"
#include "bubblelab/bsb_solver.hpp"
#include "bubblelab/bubble_analysis.hpp"
#include "bubblelab/cli.hpp"
#include "bubblelab/mc_engine.hpp"
#include "bubblelab/tree_oracle.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace bubblelab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

const CurvePoint* find_point(const BubbleReport& r, const std::string& label, double t)
{
    for (const auto& p : r.curve) {
        if (p.prior_label == label && std::abs(p.t - t) < 1e-12) return &p;
    }
    return nullptr;
}

Outcome ac1()
{
    Outcome o;
    const auto asset = AssetSpec::exploding_vol(1.0, 1.0, 1e-4);
    const auto fam = make_constant_family({1.0, 2.0, 1}, 2, 1.0);
    Budget b;
    b.n_paths = 100000;
    b.n_steps = 100;
    b.seed = 1;
    b.report_times = {0.0, 0.25, 0.5, 0.75, 0.9, 1.0};
    const auto r = analyze(asset, fam, HorizonSpec::finite(1.0), Method::MonteCarlo, b);
    for (const char* label : {"const:1", "const:2"}) {
        for (double t : {0.25, 0.5, 0.75, 0.9}) {
            const auto* p = find_point(r, label, t);
            o.require(p && p->source == Source::MonteCarlo, std::string(label) + " missing t=" + fmt(t));
            if (!p) continue;
            const double z = std::abs(p->market.mean - 1.0) / p->market.std_error;
            o.require(z <= 3.0, std::string(label) + " t=" + fmt(t) + " |mean-1|/se=" + fmt(z));
        }
        std::map<double, double> median;
        for (const auto& q : r.terminal_quantiles) {
            if (q.prior_label == label) median[q.epsilon] = q.median;
        }
        o.require(median.size() >= 4, std::string(label) + " missing quantiles");
        double prev = INFINITY;
        for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
            const auto it = median.find(eps);
            if (it == median.end()) {
                o.require(false, "no median at eps=" + fmt(eps));
                continue;
            }
            o.require(it->second < prev, std::string(label) + " median not decreasing at eps=" + fmt(eps));
            prev = it->second;
        }
        const auto* p0 = find_point(r, label, 0.0);
        o.require(p0 && p0->bubble.mean == 1.0 && p0->fundamental.mean == 0.0, "beta_0 != 1");
    }
    o.require(r.robust_bubble, "robust_bubble false");
    return o;
}

Outcome ac2()
{
    Outcome o;
    // oracle route one: chi-squared identity, E[1/|B_t|^2] = E[1/chi2_3] / (a t)
    const double inv_chi3 = oracle::chi_squared_inverse_mean(3);
    // oracle route two: brute-force sampling of 1/|Z|^2
    std::mt19937 mt(20240601u);
    std::normal_distribution<double> normal;
    double s = 0.0, ss = 0.0;
    const int n_brute = 1000000;
    for (int i = 0; i < n_brute; ++i) {
        const double x = normal(mt), y = normal(mt), z = normal(mt);
        const double v = 1.0 / (x * x + y * y + z * z);
        s += v;
        ss += v * v;
    }
    const double brute = s / n_brute;
    const double brute_se = std::sqrt((ss / n_brute - brute * brute) / (n_brute - 1.0));
    o.require(std::abs(brute - inv_chi3) <= 3.0 * brute_se,
              "oracle routes disagree: quadrature " + fmt(inv_chi3) + " brute " + fmt(brute));

    const auto fam = make_constant_family({1.0, 2.0, 5}, 3, 1.0);
    const auto grid = TimeGrid::uniform(1.0, 1);
    const auto sup = robust_estimate(fam, grid, 100000, 7, [](const PathView& p) {
        const auto x = p.point(1);
        return 1.0 / (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    });
    double oracle_sup = -INFINITY;
    for (const auto& m : fam.members) oracle_sup = std::max(oracle_sup, inv_chi3 / (m.schedule.rate_at(0.0) * 1.0));
    o.require(std::abs(sup.best.mean - oracle_sup) <= 3.0 * sup.best.std_error,
              "sup " + fmt(sup.best.mean) + " vs " + fmt(oracle_sup) + " se " + fmt(sup.best.std_error));
    o.require(std::abs(sup.best.mean - brute) <= 3.0 * std::hypot(sup.best.std_error, brute_se),
              "sup vs brute-force route");
    o.require(sup.argmax_label == "const:1", "argmax " + sup.argmax_label);

    const auto ib = AssetSpec::inverse_bessel({1.0, 0.0, 0.0}, MaturitySpec::never());
    for (double a : {1.0, 2.0}) {
        const Prior prior{"a", Schedule::constant(a, 2.0), 3};
        const auto g = TimeGrid::with_points(2.0, 4, {0.5, 1.0, 2.0});
        const auto batch = simulate(prior, g, 100000, 11, 4);
        for (double t : {0.5, 1.0, 2.0}) {
            const std::size_t k = g.index_of(t);
            const auto e = estimate(batch, [&](const PathView& p) { return asset_value_on_path(ib, p)[k]; });
            const double closed = 2.0 * oracle::normal_cdf(1.0 / std::sqrt(a * t)) - 1.0;
            const double z = std::abs(e.mean - closed) / e.std_error;
            o.require(z <= 3.0, "a=" + fmt(a) + " t=" + fmt(t) + " z=" + fmt(z));
        }
    }
    return o;
}

Outcome ac3()
{
    Outcome o;
    const auto asset = AssetSpec::inverse_bessel({1.0, 0.0, 0.0}, MaturitySpec::at(1.0));
    Budget b;
    b.n_paths = 50000;
    b.n_steps = 20;
    b.seed = 3;
    const std::vector<double> ts{0.5, 1.0};
    for (double rate : {0.0, 1.0, 2.0}) {
        const Prior p{"const:" + fmt(rate), Schedule::constant(rate, 1.0), 3};
        const auto c = classify_prior(asset, p, ts, b, false);
        if (rate == 0.0) {
            o.require(c.verdict == Verdict::TrueMartingale, "rate 0 verdict " + to_string(c.verdict));
            for (const auto& e : c.evidence) o.require(e.gap == 0.0, "rate 0 gap " + fmt(e.gap));
        } else {
            o.require(c.verdict == Verdict::StrictLocalMartingale, "rate " + fmt(rate) + " verdict " + to_string(c.verdict));
            bool strict = false;
            for (const auto& e : c.evidence) strict = strict || e.gap > 3.0 * e.std_error;
            o.require(strict, "rate " + fmt(rate) + " gap within 3 se");
        }
    }
    const auto fam = make_constant_family({0.0, 2.0, 3}, 3, 1.0);
    const auto r = analyze(asset, fam, HorizonSpec::finite(1.0), Method::MonteCarlo, b);
    o.require(r.robust_bubble, "robust_bubble false");
    return o;
}

Outcome ac4()
{
    Outcome o;
    std::mt19937_64 rng(404);
    double worst_lib = 0.0, worst_oracle = 0.0, worst_idem = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const auto t = gen::tree(rng, 3, gen::integer(rng, 2, 3), 2);
        const auto base = gen::selection(rng, t);
        auto one = gen::selection(rng, t);
        auto two = gen::selection(rng, t);
        const int split = gen::integer(rng, 0, 3);
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (t.node(i).level < split) one.selection[i] = two.selection[i] = base.selection[i];
        }
        const auto lambda = gen::event_at(rng, t, split);
        const auto y = gen::terminal_values(rng, t);
        const int tau = gen::integer(rng, 0, split);

        worst_lib = std::max(worst_lib, verify_pasting_identity(t, base, one, two, split, lambda, y, tau));

        const auto lib = paste_selection(t, base, one, two, split, lambda);
        o.require(lib == oracle::pasted(t, base, one, two, split, lambda), "pasted selection differs");
        for (auto v : t.level(tau)) {
            double composed = 0.0;
            for (const auto& p : oracle::paths_from(t, base, v, split)) {
                const std::size_t u = p.nodes.back();
                composed += p.probability * oracle::path_expectation(t, lambda[u] ? one : two, y, u);
            }
            worst_oracle = std::max(worst_oracle, std::abs(oracle::path_expectation(t, lib, y, v) - composed));
        }

        const auto idem = paste_selection(t, base, base, base, split, lambda);
        std::map<std::size_t, double> pb, pi;
        for (const auto& p : oracle::paths_from(t, base, t.root(), t.depth())) pb[p.nodes.back()] = p.probability;
        for (const auto& p : oracle::paths_from(t, idem, t.root(), t.depth())) pi[p.nodes.back()] = p.probability;
        for (auto i : t.level(t.depth())) worst_idem = std::max(worst_idem, std::abs(pb[i] - pi[i]));
    }
    o.require(worst_lib <= 1e-12, "library identity " + fmt(worst_lib));
    o.require(worst_oracle <= 1e-12, "enumeration identity " + fmt(worst_oracle));
    o.require(worst_idem <= 1e-12, "idempotent " + fmt(worst_idem));
    o.detail += (o.detail.empty() ? "" : "; ") + std::string("max ") + fmt(std::max({worst_lib, worst_oracle, worst_idem}));
    return o;
}

Outcome ac5()
{
    Outcome o;
    std::mt19937_64 rng(505);
    double worst_stage = 0.0, worst_brute = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const auto t = gen::tree(rng, 3, gen::integer(rng, 2, 3), 2);
        const auto y = gen::terminal_values(rng, t);
        const auto one = sublinear_dp(t, y);
        for (int k = 0; k <= t.depth(); ++k) {
            NodeValues at_k(t.size(), NAN);
            for (auto i : t.level(k)) at_k[i] = one.values[i];
            const auto two = sublinear_dp_from(t, at_k, k);
            for (int l = 0; l <= k; ++l) {
                for (auto i : t.level(l)) worst_stage = std::max(worst_stage, std::abs(two.values[i] - one.values[i]));
            }
        }
        const auto brute = oracle::brute_force_sup(t, y);
        for (std::size_t i = 0; i < t.size(); ++i) worst_brute = std::max(worst_brute, std::abs(brute[i] - one.values[i]));
    }
    o.require(worst_stage <= 1e-12, "two-stage " + fmt(worst_stage));
    o.require(worst_brute <= 1e-12, "brute force " + fmt(worst_brute));
    return o;
}

Outcome ac6()
{
    Outcome o;
    std::mt19937_64 rng(606);
    RandomTreeOptions opt;
    opt.depth = 3;
    opt.children = 3;
    opt.laws_per_node = 2;
    opt.retire_probability = 0.5;
    std::vector<TreeMarket> trees{retired_binomial_tree(0.5), retired_binomial_tree(0.25, {3})};
    for (int i = 0; i < 50; ++i) trees.push_back(random_tree(rng, opt));
    double min_beta = INFINITY, worst_terminal = 0.0, worst_sub = -INFINITY, max_root = 0.0;
    for (const auto& t : trees) {
        const auto fv = robust_fundamental_value(t);
        for (std::size_t i = 0; i < t.size(); ++i) {
            min_beta = std::min(min_beta, fv.bubble[i]);
            const auto& n = t.node(i);
            if (t.is_terminal(i)) {
                if (!n.payoff || *n.payoff == n.asset) worst_terminal = std::max(worst_terminal, std::abs(fv.bubble[i]));
                continue;
            }
            for (const auto& law : n.laws) {
                double e = 0.0;
                for (const auto& edge : law) e += edge.probability * fv.bubble[edge.child];
                worst_sub = std::max(worst_sub, fv.bubble[i] - e);
            }
        }
        max_root = std::max(max_root, fv.bubble[t.root()]);
    }
    o.require(min_beta >= -1e-10, "min beta " + fmt(min_beta));
    o.require(worst_terminal == 0.0, "terminal beta " + fmt(worst_terminal));
    o.require(worst_sub <= 1e-10, "submartingale excess " + fmt(worst_sub));
    o.require(max_root > 0.0, "no bubble on any tree");
    return o;
}

Outcome ac7()
{
    Outcome o;
    {
        const auto t = two_law_one_period_tree();
        NodeValues call(t.size(), 0.0);
        for (auto i : t.level(1)) call[i] = std::max(t.node(i).asset - 100.0, 0.0);
        double best = -INFINITY;
        for (const auto& q : oracle::all_selections(t)) best = std::max(best, oracle::path_expectation(t, q, call, t.root()));
        const double dp = sublinear_dp(t, call).values[t.root()];
        const double sr = superreplication_price(t, call).price;
        o.require(best == 10.0, "enumeration " + fmt(best));
        o.require(std::abs(dp - best) <= 1e-12 && std::abs(sr - best) <= 1e-12, "dp " + fmt(dp) + " sr " + fmt(sr));
    }
    {
        const auto t = three_child_single_law_tree();
        NodeValues call(t.size(), 0.0);
        for (auto i : t.level(1)) call[i] = std::max(t.node(i).asset - 100.0, 0.0);
        const double dp = sublinear_dp(t, call).values[t.root()];
        const double sr = superreplication_price(t, call).price;
        o.require(sr > dp + 1e-9, "no duality gap: sr " + fmt(sr) + " dp " + fmt(dp));
    }
    {
        const auto t = retired_binomial_tree(0.5);
        const auto d = check_no_dominance(t);
        o.require(!d.undominated && d.witness.has_value(), "retired tree undominated");
        if (d.witness) {
            const auto h = evaluate_strategy(t, *d.witness, t.terminal_payoff(), t.depth());
            o.require(std::abs(d.witness->initial_capital - t.node(t.root()).asset) <= 1e-12, "witness capital");
            o.require(h.min_slack >= -1e-10 && h.max_slack > 1e-10, "witness does not dominate");
        }
    }
    {
        std::mt19937_64 rng(707);
        for (int i = 0; i < 5; ++i) {
            const auto t = gen::tree(rng, 3, 3, 2);
            o.require(check_no_dominance(t).undominated, "martingale tree dominated");
        }
    }
    return o;
}

Outcome ac8()
{
    Outcome o;
    std::mt19937_64 rng(808);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto t = gen::tree(rng, 3, gen::integer(rng, 2, 3), 2);
        o.require(t.has_common_support(), "tree without common support");
        const auto base = gen::selection(rng, t);
        for (int level = 0; level <= t.depth(); ++level) {
            worst = std::max(worst, singleton_equivalence_check(t, base, level));
        }
    }
    o.require(worst <= 1e-12, "discrepancy " + fmt(worst));
    return o;
}

PdeProblem canonical(double lo, double hi, std::function<double(double)> g)
{
    PdeProblem p;
    p.a_low = lo;
    p.a_high = hi;
    p.payoff = std::move(g);
    p.x_min = -8.0;
    p.x_max = 8.0;
    p.horizon = 1.0;
    return p;
}

Outcome ac9()
{
    Outcome o;
    const std::size_t nx = Budget{}.pde_nx;
    for (double a : {1.0, 2.0}) {
        const auto p = canonical(a, a, [](double x) { return x * x; });
        const double v = solve(p, nx, min_time_steps(p, nx)).initial(0.0);
        o.require(std::abs(v - a) <= 0.02 * a, "x^2 at a=" + fmt(a) + ": " + fmt(v));
    }
    const auto convex = canonical(1.0, 2.0, [](double x) { return std::max(x, 0.0); });
    const std::size_t nt = min_time_steps(convex, nx);
    const double v = solve(convex, nx, nt).initial(0.0);
    const double hi = solve_linear(convex, 2.0, nx, nt).initial(0.0);
    o.require(std::abs(v - hi) <= 0.02 * std::abs(hi), "convex " + fmt(v) + " vs a_high " + fmt(hi));

    std::size_t nt0 = min_time_steps(convex, 161);
    nt0 = (nt0 + 49) / 50 * 50;
    const auto sweep = refinement_sweep(convex, 0.0, 161, nt0, 50, 3);
    for (double r : sweep.self_convergence_ratios) o.require(r < 0.75, "self-convergence ratio " + fmt(r));
    o.require(!sweep.self_convergence_ratios.empty(), "no ratios");
    bool decreasing = sweep.levels.size() == 3;
    for (std::size_t k = 1; k < sweep.levels.size(); ++k) {
        decreasing = decreasing && sweep.levels[k].tree_discrepancy < sweep.levels[k - 1].tree_discrepancy;
    }
    o.require(decreasing && sweep.discrepancies_decreasing, "tree discrepancy not strictly decreasing");
    return o;
}

Outcome ac10()
{
    Outcome o;
    const auto fam = make_constant_family({1.0, 2.0, 1}, 3, 10.0);
    Budget b;
    b.n_paths = 2000;
    const auto r = analyze(AssetSpec::fiat_money(), fam, HorizonSpec::infinite_truncated(10.0), Method::ClosedForm, b);
    for (const auto& p : r.curve) {
        o.require(p.fundamental.mean == 0.0 && p.bubble.mean == 1.0 && p.market.mean == 1.0,
                  "curve at t=" + fmt(p.t));
    }
    o.require(r.infinite.has_value(), "no infinite-horizon fragment");
    if (r.infinite) {
        o.require(r.infinite->symmetric_martingale, "no symmetric martingale witness");
        for (const auto& p : r.infinite->points) {
            o.require(p.fundamental.mean == 0.0 && p.bubble.mean == 1.0, "fragment at t=" + fmt(p.t));
        }
    }
    o.require(r.robust_bubble, "robust_bubble false");
    return o;
}

std::map<std::string, std::string> artifacts_of(const fs::path& dir)
{
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        std::string text = ss.str();
        if (e.path().filename() == "manifest.json") {
            auto m = nlohmann::json::parse(text);
            m.erase("started_at");
            m.erase("finished_at");
            text = m.dump();
        }
        out[e.path().filename().string()] = text;
    }
    return out;
}

Outcome ac11()
{
    Outcome o;
    const fs::path root = fs::temp_directory_path() / "bubblelab_acceptance_determinism";
    fs::remove_all(root);
    const fs::path configs = fs::path(BUBBLELAB_SOURCE_DIR) / "configs";
    using Runner = int (*)(const CommandOptions&, std::ostream&, std::ostream&);
    const std::vector<std::tuple<std::string, Runner, std::string>> cases{
        {"bubble", run_bubble, "exploding_vol.json"},
        {"simulate", run_simulate, "simulate.json"},
    };
    for (const auto& [name, run, cfg] : cases) {
        std::vector<std::map<std::string, std::string>> runs;
        int idx = 0;
        for (unsigned w : {1u, 4u, 1u, 4u}) {
            CommandOptions opt;
            opt.config_path = (configs / cfg).string();
            opt.workers = w;
            opt.seed = 42;
            opt.out_dir = (root / (name + std::to_string(idx++))).string();
            std::ostringstream out, err;
            const int code = run(opt, out, err);
            o.require(code == kExitOk, name + " exit " + std::to_string(code) + " " + err.str());
            if (code == kExitOk) runs.push_back(artifacts_of(opt.out_dir));
        }
        for (std::size_t k = 1; k < runs.size(); ++k) o.require(runs[k] == runs[0], name + " run " + std::to_string(k) + " differs");
        if (!runs.empty()) o.detail += (o.detail.empty() ? "" : "; ") + name + " " + std::to_string(runs[0].size()) + " files";
    }
    fs::remove_all(root);
    return o;
}

} // namespace

int main()
{
    struct Criterion {
        const char* id;
        const char* name;
        std::function<Outcome()> run;
        double budget_s;
    };
    const std::vector<Criterion> criteria{
        {"AC1", "exploding-vol martingale before maturity, collapse at maturity", ac1, 60.0},
        {"AC2", "inverse-bessel second moment sup and first moment", ac2, 120.0},
        {"AC3", "per-prior classification with a zero rate", ac3, 0.0},
        {"AC4", "pasting identity on random trees", ac4, 5.0},
        {"AC5", "time consistency of the tree DP", ac5, 0.0},
        {"AC6", "bubble invariants on retired-payoff trees", ac6, 0.0},
        {"AC7", "duality and dominance instances", ac7, 0.0},
        {"AC8", "singleton equivalence on common-support trees", ac8, 0.0},
        {"AC9", "BSB solver accuracy and convergence", ac9, 60.0},
        {"AC10", "fiat money over an infinite horizon", ac10, 0.0},
        {"AC11", "byte-identical artifacts across worker counts", ac11, 0.0},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.budget_s > 0.0) o.require(secs <= c.budget_s, "runtime " + fmt(secs) + " s over " + fmt(c.budget_s) + " s");
        if (!o.pass) ++failed;
        std::printf("[%s] %s %s (%.2f s)%s%s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs,
                    o.detail.empty() ? "" : ": ", o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
