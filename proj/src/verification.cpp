#include "bubblelab/verification.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bubblelab/bsb_solver.hpp"
#include "bubblelab/error.hpp"
#include "bubblelab/rng.hpp"

namespace bubblelab {

namespace {

constexpr double kExact = 1e-12;
constexpr double kLoose = 1e-10;

std::mt19937_64 suite_rng(std::uint64_t seed, const std::string& name)
{
    return std::mt19937_64(splitmix64(seed ^ fnv1a64(name)));
}

void add(SuiteResult& r, std::string check, nlohmann::json instance, double discrepancy, bool pass)
{
    r.checks.push_back({std::move(check), std::move(instance), discrepancy, pass});
}

NodeValues random_payoff(std::mt19937_64& rng, const TreeMarket& tree)
{
    NodeValues y(tree.size(), 0.0);
    for (std::size_t i : tree.level(tree.depth())) {
        y[i] = 1.0 + 100.0 * unit_uniform(rng);
    }
    return y;
}

// Random selection equal to `base` on levels < `level`.
TreePrior random_agreeing(std::mt19937_64& rng, const TreeMarket& tree, const TreePrior& base, int level)
{
    TreePrior q = random_selection(rng, tree);
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (tree.node(i).level < level) q.selection[i] = base.selection[i];
    }
    return q;
}

std::vector<bool> random_event(std::mt19937_64& rng, const TreeMarket& tree, int level)
{
    std::vector<bool> lambda(tree.size(), false);
    for (std::size_t i : tree.level(level)) {
        lambda[i] = unit_uniform(rng) < 0.5;
    }
    return lambda;
}

int random_level(std::mt19937_64& rng, int lo, int hi)
{
    return lo + static_cast<int>(unit_uniform(rng) * (hi - lo + 1)) % (hi - lo + 1);
}

// --- tree ---------------------------------------------------------------------

void tree_suite(SuiteResult& r, std::mt19937_64& rng, const SuiteOptions& opt)
{
    double worst_tc = 0.0;
    double worst_mart = 0.0;
    double worst_neg = 0.0;
    double worst_term = 0.0;
    double worst_sub = 0.0;
    double worst_dual = 0.0;
    for (int k = 0; k < opt.random_trees; ++k) {
        RandomTreeOptions o;
        o.common_support = k % 2 == 0;
        const TreeMarket tree = random_tree(rng, o);
        const NodeValues y = random_payoff(rng, tree);
        const DpResult full = sublinear_dp(tree, y);
        for (int tau = 0; tau <= tree.depth(); ++tau) {
            const DpResult staged = sublinear_dp_from(tree, full.values, tau);
            for (int sigma = 0; sigma <= tau; ++sigma) {
                for (std::size_t i : tree.level(sigma)) {
                    worst_tc = std::max(worst_tc, std::abs(staged.values[i] - full.values[i]));
                }
            }
        }
        const FundamentalValue fv = robust_fundamental_value(tree);
        for (std::size_t i = 0; i < tree.size(); ++i) {
            worst_mart = std::max(worst_mart, std::abs(fv.bubble[i]) / tree.node(i).asset);
        }

        o.retire_probability = 0.5;
        const TreeMarket retired = random_tree(rng, o);
        const FundamentalValue rv = robust_fundamental_value(retired);
        for (std::size_t i = 0; i < retired.size(); ++i) {
            worst_neg = std::max(worst_neg, -rv.bubble[i]);
            if (retired.is_terminal(i) && !retired.node(i).payoff) {
                worst_term = std::max(worst_term, std::abs(rv.bubble[i]));
            }
            for (const auto& law : retired.node(i).laws) {
                double mean = 0.0;
                for (const auto& e : law) mean += e.probability * rv.bubble[e.child];
                worst_sub = std::max(worst_sub, rv.bubble[i] - mean);
            }
        }
        const double price = superreplication_price(retired, retired.terminal_payoff()).price;
        worst_dual = std::max(worst_dual, rv.fundamental[retired.root()] - price);
    }
    const nlohmann::json inst = {{"random_trees", opt.random_trees}};
    add(r, "dp_time_consistency", inst, worst_tc, worst_tc <= kExact);
    add(r, "martingale_tree_zero_bubble", inst, worst_mart, worst_mart <= kLoose);
    add(r, "bubble_nonnegative", inst, worst_neg, worst_neg <= kLoose);
    add(r, "bubble_terminal_zero", inst, worst_term, worst_term == 0.0);
    add(r, "bubble_local_submartingale", inst, std::max(0.0, worst_sub), worst_sub <= kLoose);
    add(r, "weak_duality", inst, std::max(0.0, worst_dual), worst_dual <= kLoose);

    const TreeMarket two = two_law_one_period_tree();
    const NodeValues s = two.terminal_payoff();
    NodeValues call(two.size(), 0.0);
    for (std::size_t i : two.level(1)) call[i] = std::max(two.node(i).asset - 100.0, 0.0);
    const double root_s = sublinear_dp(two, s).values[two.root()];
    const double root_call = sublinear_dp(two, call).values[two.root()];
    add(r, "dp_two_law_asset", {{"tree", "two_law_one_period"}, {"expected", 100.0}}, std::abs(root_s - 100.0),
        std::abs(root_s - 100.0) <= kExact * 100.0);
    add(r, "dp_two_law_call", {{"tree", "two_law_one_period"}, {"expected", 10.0}}, std::abs(root_call - 10.0),
        std::abs(root_call - 10.0) <= kExact * 10.0);

    NodeValues constant(two.size(), 0.0);
    for (std::size_t i : two.level(1)) constant[i] = 7.0;
    const DpResult cv = sublinear_dp(two, constant);
    double dev = 0.0;
    for (double v : cv.values) dev = std::max(dev, std::abs(v - 7.0));
    add(r, "dp_constant_payoff", {{"tree", "two_law_one_period"}, {"c", 7.0}}, dev, dev <= kExact);
}

// --- pasting ----------------------------------------------------------------

void pasting_suite(SuiteResult& r, std::mt19937_64& rng, const SuiteOptions& opt)
{
    double worst = 0.0;
    double worst_idem = 0.0;
    double worst_all = 0.0;
    int premise = 0;
    int violations = 0;
    for (int k = 0; k < opt.random_trees; ++k) {
        RandomTreeOptions o;
        o.laws_per_node = 2;
        o.common_support = k % 2 == 0;
        const TreeMarket tree = random_tree(rng, o);
        const NodeValues y = random_payoff(rng, tree);
        const TreePrior q = random_selection(rng, tree);
        const int sigma = random_level(rng, 0, tree.depth());
        const int tau = random_level(rng, 0, sigma);
        const TreePrior q1 = random_agreeing(rng, tree, q, sigma);
        const TreePrior q2 = random_agreeing(rng, tree, q, sigma);
        const std::vector<bool> lambda = random_event(rng, tree, sigma);
        worst = std::max(worst, verify_pasting_identity(tree, q, q1, q2, sigma, lambda, y, tau));
        worst_idem = std::max(worst_idem, verify_pasting_identity(tree, q, q, q, sigma, lambda, y, tau));
        const std::vector<bool> all(tree.size(), true);
        worst_all = std::max(worst_all, verify_pasting_identity(tree, q, q1, q2, sigma, all, y, tau));

        o.retire_probability = 0.5;
        const TreeMarket retired = random_tree(rng, o);
        const TreePrior b = random_selection(rng, retired);
        const int s2 = random_level(rng, 0, retired.depth() - 1);
        const TreePrior b1 = random_agreeing(rng, retired, b, s2);
        const TreePrior b2 = random_agreeing(rng, retired, b, s2);
        const StrictnessCheck sc = pasting_preserves_strictness(retired, b, b1, b2, s2, random_event(rng, retired, s2));
        premise += sc.premise ? 1 : 0;
        violations += sc.holds ? 0 : 1;
    }
    const nlohmann::json inst = {{"random_trees", opt.random_trees}, {"depth", 3}, {"laws_per_node", 2}};
    add(r, "pasting_identity", inst, worst, worst <= kExact);
    add(r, "pasting_idempotent", inst, worst_idem, worst_idem <= kExact);
    add(r, "pasting_lambda_all", inst, worst_all, worst_all <= kExact);
    add(r, "pasting_preserves_strictness", {{"random_trees", opt.random_trees}, {"premise_instances", premise}},
        violations, violations == 0);
}

// --- dominance --------------------------------------------------------------

void dominance_suite(SuiteResult& r, std::mt19937_64& rng, const SuiteOptions& opt)
{
    {
        const TreeMarket two = two_law_one_period_tree();
        NodeValues call(two.size(), 0.0);
        for (std::size_t i : two.level(1)) call[i] = std::max(two.node(i).asset - 100.0, 0.0);
        const double price = superreplication_price(two, call).price;
        const double dp = sublinear_dp(two, call).values[two.root()];
        const double d = std::max(std::abs(price - 10.0), std::abs(dp - 10.0));
        add(r, "superreplication_equals_dp", {{"tree", "two_law_one_period"}, {"price", price}, {"dp", dp}}, d,
            d <= kLoose);
    }
    {
        const TreeMarket three = three_child_single_law_tree();
        NodeValues call(three.size(), 0.0);
        for (std::size_t i : three.level(1)) call[i] = std::max(three.node(i).asset - 100.0, 0.0);
        const double price = superreplication_price(three, call).price;
        const double dp = sublinear_dp(three, call).values[three.root()];
        add(r, "duality_gap_three_child", {{"tree", "three_child_single_law"}, {"price", price}, {"dp", dp}},
            price - dp, price - dp > kLoose);
    }
    {
        const TreeMarket retired = retired_binomial_tree(0.5);
        const DominanceResult d = check_no_dominance(retired);
        double slack = 0.0;
        bool ok = !d.undominated && d.witness.has_value();
        if (ok) {
            const HedgeCheck h = evaluate_strategy(retired, *d.witness, retired.terminal_payoff(), retired.depth());
            slack = h.min_slack;
            ok = h.min_slack >= -kLoose && h.max_slack > kLoose;
        }
        add(r, "dominance_retired_tree", {{"tree", "retired_binomial"}, {"retire", 0.5}, {"price", d.price}},
            std::max(0.0, -slack), ok);

        const TreeMarket longer = append_constant_levels(retired, 1);
        bool ext_ok = ok;
        double ext_slack = 0.0;
        if (ok) {
            Strategy w = *d.witness;
            w.holdings.resize(longer.size(), 0.0);
            const Strategy extended = extend_buy_and_hold(longer, w, retired.depth());
            const HedgeCheck h = evaluate_strategy(longer, extended, longer.terminal_payoff(), longer.depth());
            ext_slack = h.min_slack;
            ext_ok = h.min_slack >= -kLoose && h.max_slack > kLoose;
        }
        add(r, "dominance_extends_by_holding", {{"tree", "retired_binomial+1"}}, std::max(0.0, -ext_slack), ext_ok);
    }
    int dominated = 0;
    double worst_self = 0.0;
    for (int k = 0; k < opt.random_trees; ++k) {
        RandomTreeOptions o;
        o.common_support = k % 2 == 0;
        const TreeMarket tree = random_tree(rng, o);
        dominated += check_no_dominance(tree).undominated ? 0 : 1;
        const double s0 = tree.node(tree.root()).asset;
        worst_self = std::max(worst_self, std::abs(superreplication_price(tree, tree.terminal_payoff()).price - s0) / s0);
    }
    add(r, "martingale_tree_undominated", {{"random_trees", opt.random_trees}}, dominated, dominated == 0);
    add(r, "superreplication_of_asset", {{"random_trees", opt.random_trees}}, worst_self, worst_self <= kLoose);

    double worst_eq = 0.0;
    for (int k = 0; k < opt.equivalence_trees; ++k) {
        RandomTreeOptions o;
        o.common_support = true;
        o.retire_probability = k % 2 == 0 ? 0.0 : 0.5;
        const TreeMarket tree = random_tree(rng, o);
        const TreePrior base = random_selection(rng, tree);
        const int level = random_level(rng, 0, tree.depth());
        worst_eq = std::max(worst_eq, singleton_equivalence_check(tree, base, level));
    }
    add(r, "singleton_equivalence", {{"random_trees", opt.equivalence_trees}, {"common_support", true}}, worst_eq,
        worst_eq <= kExact);
}

// --- pde ----------------------------------------------------------------------

PdeProblem canonical_problem(double lo, double hi, std::function<double(double)> g, std::string label)
{
    PdeProblem p;
    p.a_low = lo;
    p.a_high = hi;
    p.generator = GeneratorKind::Canonical;
    p.payoff = std::move(g);
    p.payoff_label = std::move(label);
    p.horizon = 1.0;
    p.x_max = 8.0 * std::sqrt(hi * p.horizon);
    p.x_min = -p.x_max;
    return p;
}

void pde_suite(SuiteResult& r)
{
    constexpr std::size_t nx = 401;
    {
        const PdeProblem p = canonical_problem(1.5, 1.5, [](double x) { return x * x; }, "x^2");
        const double v = solve(p, nx, min_time_steps(p, nx)).initial(0.0);
        const double rel = std::abs(v - 1.5) / 1.5;
        add(r, "pde_singleton_square", {{"rate", 1.5}, {"expected", 1.5}, {"value", v}}, rel, rel <= 0.02);
    }
    const auto call = [](double x) { return std::max(x, 0.0); };
    {
        const PdeProblem p = canonical_problem(1.0, 2.0, call, "max(x,0)");
        const std::size_t nt = min_time_steps(p, nx);
        const double v = solve(p, nx, nt).initial(0.0);
        const double lin = solve_linear(p, 2.0, nx, nt).initial(0.0);
        const double rel = std::abs(v - lin) / lin;
        add(r, "pde_convex_selects_high", {{"a_low", 1.0}, {"a_high", 2.0}, {"value", v}, {"linear", lin}}, rel,
            rel <= 0.02);
        const ValueSurface a = solve(canonical_problem(2.0, 2.0, call, "max(x,0)"), nx, nt);
        const ValueSurface b = solve_linear(canonical_problem(2.0, 2.0, call, "max(x,0)"), 2.0, nx, nt);
        const bool identical = a.values == b.values;
        add(r, "pde_singleton_bit_identical", {{"rate", 2.0}}, identical ? 0.0 : 1.0, identical);
    }
    {
        const auto bumped = [call](double x) { return call(x) + (std::abs(x - 0.5) < 0.3 ? 0.01 : 0.0); };
        const auto kinked = [](double x) { return std::abs(x) - x * x / 128.0; };
        PdeProblem lo = canonical_problem(0.5, 2.0, call, "max(x,0)");
        PdeProblem hi = canonical_problem(0.5, 2.0, bumped, "max(x,0)+bump");
        const std::size_t nt = min_time_steps(lo, nx);
        const ValueSurface a = solve(lo, nx, nt);
        const ValueSurface b = solve(hi, nx, nt);
        double worst = 0.0;
        for (std::size_t k = 0; k < a.values.size(); ++k) worst = std::max(worst, a.values[k] - b.values[k]);
        add(r, "pde_payoff_monotone", {{"bump", 0.01}}, worst, worst <= 0.0);

        PdeProblem narrow = canonical_problem(1.0, 1.5, kinked, "kinked");
        PdeProblem wide = canonical_problem(0.5, 2.0, kinked, "kinked");
        narrow.x_min = wide.x_min;
        narrow.x_max = wide.x_max;
        const std::size_t nt_w = min_time_steps(wide, nx);
        const ValueSurface vn = solve(narrow, nx, nt_w);
        const ValueSurface vw = solve(wide, nx, nt_w);
        double worst_dom = 0.0;
        for (std::size_t i = 0; i < nx; ++i) worst_dom = std::max(worst_dom, vn.at(0, i) - vw.at(0, i));
        add(r, "pde_domain_monotone", {{"narrow", {1.0, 1.5}}, {"wide", {0.5, 2.0}}}, worst_dom, worst_dom <= 0.0);
    }
    {
        const PdeProblem p = canonical_problem(1.0, 2.0, call, "max(x,0)");
        const std::size_t nx0 = 161;
        std::size_t nt0 = min_time_steps(p, nx0);
        nt0 = (nt0 + 49) / 50 * 50;
        const RefinementSweep sweep = refinement_sweep(p, 0.0, nx0, nt0, 50, 3);
        const double ratio = sweep.self_convergence_ratios.empty() ? 1.0 : sweep.self_convergence_ratios.front();
        add(r, "pde_self_convergence", to_json(sweep), ratio, ratio < 0.75);
        add(r, "pde_tree_discrepancy_decreasing", to_json(sweep), sweep.levels.back().tree_discrepancy,
            sweep.discrepancies_decreasing);

        const PdeProblem single = canonical_problem(2.0, 2.0, call, "max(x,0)");
        const RefinementSweep s1 = refinement_sweep(single, 0.0, nx0, nt0, 50, 2);
        const double r1 = s1.levels[1].tree_discrepancy / s1.levels[0].tree_discrepancy;
        add(r, "pde_tree_singleton_decay", to_json(s1), r1, r1 < 0.75);
    }
    {
        const PdeProblem p = canonical_problem(1.0, 2.0, [](double) { return 3.0; }, "3");
        double worst = 0.0;
        for (int steps : {10, 20, 40}) {
            const std::size_t nx_c = 81;
            std::size_t nt = min_time_steps(p, nx_c);
            nt = (nt + static_cast<std::size_t>(steps) - 1) / static_cast<std::size_t>(steps) * static_cast<std::size_t>(steps);
            const TreeComparison c = compare_with_tree(p, {steps, 0.0}, nx_c, nt);
            worst = std::max(worst, c.discrepancy);
        }
        add(r, "pde_constant_payoff", {{"c", 3.0}}, worst, worst <= kExact);
    }
    {
        const PdeProblem p = canonical_problem(1.0, 2.0, call, "max(x,0)");
        const std::size_t nt = min_time_steps(p, nx) / 2;
        double reported = 0.0;
        bool rejected = false;
        try {
            solve(p, nx, nt);
        } catch (const CflViolation& e) {
            rejected = true;
            reported = e.max_admissible_dt();
        }
        const double expected = max_admissible_dt(p, nx);
        add(r, "pde_cfl_enforced", {{"nt", nt}, {"max_dt", reported}}, std::abs(reported - expected),
            rejected && reported == expected);
    }
}

} // namespace

std::string to_string(Suite s)
{
    switch (s) {
    case Suite::Tree: return "tree";
    case Suite::Pasting: return "pasting";
    case Suite::Dominance: return "dominance";
    case Suite::Pde: return "pde";
    case Suite::All: return "all";
    }
    return "";
}

Suite suite_from_string(const std::string& text)
{
    for (Suite s : {Suite::Tree, Suite::Pasting, Suite::Dominance, Suite::Pde, Suite::All}) {
        if (to_string(s) == text) return s;
    }
    throw InvalidArgument("unknown suite '" + text + "' (expected tree, pasting, dominance, pde or all)");
}

bool SuiteResult::all_pass() const
{
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

SuiteResult run_suite(Suite suite, std::uint64_t seed, const SuiteOptions& options)
{
    SuiteResult r;
    r.suite = to_string(suite);
    r.seed = seed;
    const bool all = suite == Suite::All;
    if (all || suite == Suite::Tree) {
        auto rng = suite_rng(seed, "tree");
        tree_suite(r, rng, options);
    }
    if (all || suite == Suite::Pasting) {
        auto rng = suite_rng(seed, "pasting");
        pasting_suite(r, rng, options);
    }
    if (all || suite == Suite::Dominance) {
        auto rng = suite_rng(seed, "dominance");
        dominance_suite(r, rng, options);
    }
    if (all || suite == Suite::Pde) {
        pde_suite(r);
    }
    return r;
}

nlohmann::json to_json(const SuiteResult& r)
{
    auto checks = nlohmann::json::array();
    for (const auto& c : r.checks) {
        checks.push_back(check_report(c.check, c.instance, c.discrepancy, c.pass));
    }
    return {{"suite", r.suite}, {"seed", r.seed}, {"pass", r.all_pass()}, {"checks", checks}};
}

TreeMarket append_constant_levels(const TreeMarket& tree, int extra)
{
    require(extra >= 1, "append at least one level");
    std::vector<TreeNode> nodes = tree.nodes();
    std::vector<std::size_t> frontier = tree.level(tree.depth());
    for (std::size_t i : frontier) {
        nodes[i].id = static_cast<long long>(i);
    }
    for (int k = 1; k <= extra; ++k) {
        std::vector<std::size_t> next;
        for (std::size_t i : frontier) {
            TreeNode child;
            child.level = tree.depth() + k;
            child.asset = nodes[i].asset;
            child.payoff = nodes[i].payoff;
            child.id = static_cast<long long>(nodes.size());
            nodes[i].payoff.reset();
            nodes[i].laws = {{{nodes.size(), 1.0}}};
            next.push_back(nodes.size());
            nodes.push_back(child);
        }
        frontier = std::move(next);
    }
    return TreeMarket(tree.depth() + extra, std::move(nodes));
}

} // namespace bubblelab
