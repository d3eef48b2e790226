#include "bubblelab/tree_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "bubblelab/error.hpp"

namespace bubblelab {

namespace {

constexpr double kProbabilityTol = 1e-12;
constexpr double kMartingaleTol = 1e-10;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double law_mean(const BranchLaw& law, const NodeValues& values)
{
    double acc = 0.0;
    for (const auto& e : law) {
        acc += e.probability * values[e.child];
    }
    return acc;
}

void check_prior(const TreeMarket& tree, const TreePrior& prior)
{
    require(prior.selection.size() == tree.size(), "selection size does not match the tree");
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (tree.is_terminal(i)) {
            continue;
        }
        const int k = prior.selection[i];
        require(k >= 0 && static_cast<std::size_t>(k) < tree.node(i).laws.size(),
                "selection picks a non-existent law");
    }
}

void check_values(const TreeMarket& tree, const NodeValues& values)
{
    require(values.size() == tree.size(), "node value vector does not match the tree");
}

struct OneStepHedge {
    double capital = 0.0;
    double holding = 0.0;
};

// min over h of max_j (value_j - h * move_j), exact over pairwise line
// intersections of the piecewise-linear convex objective.
OneStepHedge solve_one_step(const std::vector<double>& value, const std::vector<double>& move)
{
    for (double v : value) {
        if (!std::isfinite(v)) {
            throw InvalidArgument("payoff is unbounded (non-finite) on the tree");
        }
    }
    const bool any_up = std::any_of(move.begin(), move.end(), [](double d) { return d > 0.0; });
    const bool any_down = std::any_of(move.begin(), move.end(), [](double d) { return d < 0.0; });
    if (!any_up && !any_down) {
        return {*std::max_element(value.begin(), value.end()), 0.0};
    }
    if (!(any_up && any_down)) {
        throw NumericalFailure("one-sided asset moves: superhedging capital is unbounded below");
    }
    auto objective = [&](double h) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < value.size(); ++j) {
            m = std::max(m, value[j] - h * move[j]);
        }
        return m;
    };
    OneStepHedge best{std::numeric_limits<double>::infinity(), 0.0};
    for (std::size_t j = 0; j < value.size(); ++j) {
        for (std::size_t k = j + 1; k < value.size(); ++k) {
            if (move[j] == move[k]) {
                continue;
            }
            const double h = (value[j] - value[k]) / (move[j] - move[k]);
            const double f = objective(h);
            if (f < best.capital) {
                best = {f, h};
            }
        }
    }
    return best;
}

double slack_tolerance(double scale) { return 1e-10 * (1.0 + std::abs(scale)); }

// A holding that keeps every child covered from `capital` and leaves strict
// slack on at least one child, if one exists.
std::optional<double> slack_holding(const std::vector<double>& value, const std::vector<double>& move,
                                    double capital)
{
    const double tol = slack_tolerance(capital);
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < value.size(); ++j) {
        if (move[j] > 0.0) {
            lo = std::max(lo, (value[j] - capital) / move[j]);
        } else if (move[j] < 0.0) {
            hi = std::min(hi, (value[j] - capital) / move[j]);
        }
    }
    std::vector<double> candidates;
    const bool lo_finite = std::isfinite(lo);
    const bool hi_finite = std::isfinite(hi);
    if (lo_finite) candidates.push_back(lo);
    if (hi_finite) candidates.push_back(hi);
    if (lo_finite && hi_finite) candidates.push_back(0.5 * (lo + hi));
    if (!lo_finite && !hi_finite) candidates.push_back(0.0);
    if (lo_finite && !hi_finite) candidates.push_back(lo + 1.0);
    if (!lo_finite && hi_finite) candidates.push_back(hi - 1.0);
    for (double h : candidates) {
        bool feasible = true;
        bool strict = false;
        for (std::size_t j = 0; j < value.size(); ++j) {
            const double need = value[j] - h * move[j];
            feasible = feasible && need <= capital + tol;
            strict = strict || need < capital - tol;
        }
        if (feasible && strict) {
            return h;
        }
    }
    return std::nullopt;
}

void hedge_paths(const TreeMarket& tree, const Strategy& s, const NodeValues& target, int target_level,
                 std::size_t node, double wealth, HedgeCheck& out)
{
    if (tree.node(node).level == target_level) {
        const double slack = wealth - target[node];
        if (out.paths == 0) {
            out.min_slack = out.max_slack = slack;
        } else {
            out.min_slack = std::min(out.min_slack, slack);
            out.max_slack = std::max(out.max_slack, slack);
        }
        ++out.paths;
        return;
    }
    const double h = s.holdings[node];
    for (std::size_t c : tree.children(node)) {
        hedge_paths(tree, s, target, target_level, c, wealth + h * (tree.node(c).asset - tree.node(node).asset), out);
    }
}

BranchLaw martingale_law(std::mt19937_64& rng, double spot, const std::vector<std::size_t>& ids,
                         const std::vector<double>& values)
{
    std::vector<std::size_t> below;
    std::vector<std::size_t> above;
    for (std::size_t j = 0; j < ids.size(); ++j) {
        (values[j] < spot ? below : above).push_back(j);
    }
    require(!below.empty() && !above.empty(), "martingale law needs children on both sides");
    auto weights = [&](const std::vector<std::size_t>& group) {
        std::vector<double> w;
        double total = 0.0;
        for (std::size_t k = 0; k < group.size(); ++k) {
            w.push_back(0.2 + unit_uniform(rng));
            total += w.back();
        }
        for (double& v : w) v /= total;
        return w;
    };
    const auto wb = weights(below);
    const auto wa = weights(above);
    double mean_below = 0.0;
    double mean_above = 0.0;
    for (std::size_t k = 0; k < below.size(); ++k) mean_below += wb[k] * values[below[k]];
    for (std::size_t k = 0; k < above.size(); ++k) mean_above += wa[k] * values[above[k]];
    const double theta = (mean_above - spot) / (mean_above - mean_below);
    BranchLaw law;
    for (std::size_t j = 0; j < ids.size(); ++j) {
        double p = 0.0;
        for (std::size_t k = 0; k < below.size(); ++k) {
            if (below[k] == j) p = theta * wb[k];
        }
        for (std::size_t k = 0; k < above.size(); ++k) {
            if (above[k] == j) p = (1.0 - theta) * wa[k];
        }
        law.push_back({ids[j], p});
    }
    return law;
}

} // namespace

TreeMarket::TreeMarket(int depth, std::vector<TreeNode> nodes) : depth_(depth), nodes_(std::move(nodes))
{
    require(depth_ >= 1, "tree depth must be >= 1");
    require(!nodes_.empty(), "tree has no nodes");
    levels_.assign(static_cast<std::size_t>(depth_) + 1, {});
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& n = nodes_[i];
        require(n.level >= 0 && n.level <= depth_, "node level outside [0, depth]");
        require(std::isfinite(n.asset) && n.asset > 0.0, "node asset values must be finite and > 0");
        levels_[static_cast<std::size_t>(n.level)].push_back(i);
    }
    require(levels_[0].size() == 1, "tree must have exactly one root");
    for (const auto& lv : levels_) {
        require(!lv.empty(), "every level of the tree must hold at least one node");
    }

    children_.assign(nodes_.size(), {});
    std::vector<std::size_t> parent_count(nodes_.size(), 0);
    parents_.assign(nodes_.size(), 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& n = nodes_[i];
        if (n.level == depth_) {
            require(n.laws.empty(), "terminal nodes carry no branch laws");
            if (n.payoff) {
                require(std::isfinite(*n.payoff), "terminal payoff must be finite");
            }
            continue;
        }
        require(!n.payoff.has_value(), "payoffs are only allowed at terminal nodes");
        require(!n.laws.empty(), "every non-terminal node needs at least one branch law");
        std::set<std::size_t> all;
        for (const auto& law : n.laws) {
            require(!law.empty(), "branch laws must not be empty");
            double total = 0.0;
            double mean = 0.0;
            std::set<std::size_t> seen;
            for (const auto& e : law) {
                require(e.child < nodes_.size(), "branch law references an unknown child");
                require(nodes_[e.child].level == n.level + 1, "children must sit one level below their parent");
                require(e.probability > 0.0, "branch probabilities must be > 0");
                require(seen.insert(e.child).second, "a child appears twice in one law");
                total += e.probability;
                mean += e.probability * nodes_[e.child].asset;
            }
            require(std::abs(total - 1.0) <= kProbabilityTol, "branch probabilities must sum to 1");
            require(std::abs(mean - n.asset) <= kMartingaleTol * n.asset,
                    "branch law is not a martingale law for the asset");
            all.insert(seen.begin(), seen.end());
        }
        children_[i].assign(all.begin(), all.end());
        for (std::size_t c : children_[i]) {
            ++parent_count[c];
            parents_[c] = i;
        }
    }
    is_tree_ = true;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].level > 0) {
            require(parent_count[i] >= 1, "node is unreachable from the root");
            is_tree_ = is_tree_ && parent_count[i] == 1;
        }
    }
}

std::size_t TreeMarket::ancestor_at(std::size_t i, int k) const
{
    require(is_tree_, "ancestor lookup needs a tree (unique parents)");
    require(k >= 0 && k <= nodes_[i].level, "ancestor level out of range");
    while (nodes_[i].level > k) {
        i = parents_[i];
    }
    return i;
}

NodeValues TreeMarket::terminal_payoff() const
{
    NodeValues out(nodes_.size(), 0.0);
    for (std::size_t i : levels_.back()) {
        out[i] = nodes_[i].payoff.value_or(nodes_[i].asset);
    }
    return out;
}

NodeValues TreeMarket::asset_values() const
{
    NodeValues out(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        out[i] = nodes_[i].asset;
    }
    return out;
}

bool TreeMarket::has_retired_payoff() const
{
    return std::any_of(levels_.back().begin(), levels_.back().end(),
                       [&](std::size_t i) { return nodes_[i].payoff && *nodes_[i].payoff != nodes_[i].asset; });
}

bool TreeMarket::has_common_support() const
{
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        for (const auto& law : nodes_[i].laws) {
            if (law.size() != children_[i].size()) {
                return false;
            }
        }
    }
    return true;
}

TreePrior uniform_selection(const TreeMarket& tree, int law_index)
{
    TreePrior p;
    p.selection.assign(tree.size(), -1);
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (!tree.is_terminal(i)) {
            const int n = static_cast<int>(tree.node(i).laws.size());
            p.selection[i] = std::min(law_index, n - 1);
        }
    }
    return p;
}

bool agrees_before(const TreeMarket& tree, const TreePrior& a, const TreePrior& b, int level)
{
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (tree.node(i).level < level && a.selection[i] != b.selection[i]) {
            return false;
        }
    }
    return true;
}

DpResult sublinear_dp_from(const TreeMarket& tree, const NodeValues& values, int from_level)
{
    check_values(tree, values);
    require(from_level >= 0 && from_level <= tree.depth(), "DP start level out of range");
    DpResult out;
    out.values.assign(tree.size(), kNaN);
    out.argmax.assign(tree.size(), -1);
    for (std::size_t i : tree.level(from_level)) {
        out.values[i] = values[i];
    }
    for (int k = from_level - 1; k >= 0; --k) {
        for (std::size_t i : tree.level(k)) {
            const auto& laws = tree.node(i).laws;
            double best = law_mean(laws[0], out.values);
            int arg = 0;
            for (std::size_t l = 1; l < laws.size(); ++l) {
                const double v = law_mean(laws[l], out.values);
                if (v > best) {
                    best = v;
                    arg = static_cast<int>(l);
                }
            }
            out.values[i] = best;
            out.argmax[i] = arg;
        }
    }
    return out;
}

DpResult sublinear_dp(const TreeMarket& tree, const NodeValues& payoff)
{
    return sublinear_dp_from(tree, payoff, tree.depth());
}

NodeValues conditional_expectation_from(const TreeMarket& tree, const TreePrior& prior, const NodeValues& values,
                                        int from_level)
{
    check_prior(tree, prior);
    check_values(tree, values);
    NodeValues out(tree.size(), kNaN);
    for (std::size_t i : tree.level(from_level)) {
        out[i] = values[i];
    }
    for (int k = from_level - 1; k >= 0; --k) {
        for (std::size_t i : tree.level(k)) {
            out[i] = law_mean(tree.node(i).laws[static_cast<std::size_t>(prior.selection[i])], out);
        }
    }
    return out;
}

NodeValues conditional_expectation(const TreeMarket& tree, const TreePrior& prior, const NodeValues& payoff)
{
    return conditional_expectation_from(tree, prior, payoff, tree.depth());
}

NodeValues reach_probabilities(const TreeMarket& tree, const TreePrior& prior)
{
    check_prior(tree, prior);
    NodeValues reach(tree.size(), 0.0);
    reach[tree.root()] = 1.0;
    for (int k = 0; k < tree.depth(); ++k) {
        for (std::size_t i : tree.level(k)) {
            for (const auto& e : tree.node(i).laws[static_cast<std::size_t>(prior.selection[i])]) {
                reach[e.child] += reach[i] * e.probability;
            }
        }
    }
    return reach;
}

FundamentalValue robust_fundamental_value(const TreeMarket& tree)
{
    FundamentalValue out;
    out.fundamental = sublinear_dp(tree, tree.terminal_payoff()).values;
    out.bubble.resize(tree.size());
    for (std::size_t i = 0; i < tree.size(); ++i) {
        out.bubble[i] = tree.node(i).asset - out.fundamental[i];
    }
    return out;
}

TreePrior paste_selection(const TreeMarket& tree, const TreePrior& base, const TreePrior& branch_one,
                          const TreePrior& branch_two, int split_level, const std::vector<bool>& lambda)
{
    require(tree.is_tree(), "pasting needs a tree (unique parents)");
    require(split_level >= 0 && split_level <= tree.depth(), "split level out of range");
    require(lambda.size() == tree.size(), "event indicator must be indexed by node");
    check_prior(tree, base);
    check_prior(tree, branch_one);
    check_prior(tree, branch_two);
    require(agrees_before(tree, base, branch_one, split_level), "branch_one differs from base before the split");
    require(agrees_before(tree, base, branch_two, split_level), "branch_two differs from base before the split");
    TreePrior out = base;
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const int level = tree.node(i).level;
        if (level < split_level || tree.is_terminal(i)) {
            continue;
        }
        const std::size_t anchor = tree.ancestor_at(i, split_level);
        out.selection[i] = lambda[anchor] ? branch_one.selection[i] : branch_two.selection[i];
    }
    return out;
}

double verify_pasting_identity(const TreeMarket& tree, const TreePrior& base, const TreePrior& branch_one,
                               const TreePrior& branch_two, int split_level, const std::vector<bool>& lambda,
                               const NodeValues& payoff, int tau_level)
{
    require(tau_level >= 0 && tau_level <= split_level, "tau must not exceed the split level");
    const TreePrior pasted = paste_selection(tree, base, branch_one, branch_two, split_level, lambda);
    const NodeValues lhs = conditional_expectation(tree, pasted, payoff);

    NodeValues on_event(tree.size(), 0.0);
    NodeValues off_event(tree.size(), 0.0);
    for (std::size_t i : tree.level(tree.depth())) {
        const bool in = lambda[tree.ancestor_at(i, split_level)];
        on_event[i] = in ? payoff[i] : 0.0;
        off_event[i] = in ? 0.0 : payoff[i];
    }
    const NodeValues z1 = conditional_expectation(tree, branch_one, on_event);
    const NodeValues z2 = conditional_expectation(tree, branch_two, off_event);
    NodeValues at_split(tree.size(), 0.0);
    for (std::size_t i : tree.level(split_level)) {
        at_split[i] = z1[i] + z2[i];
    }
    const NodeValues rhs = conditional_expectation_from(tree, base, at_split, split_level);

    double worst = 0.0;
    for (std::size_t i : tree.level(tau_level)) {
        worst = std::max(worst, std::abs(lhs[i] - rhs[i]));
    }
    return worst;
}

StrictnessCheck pasting_preserves_strictness(const TreeMarket& tree, const TreePrior& base,
                                             const TreePrior& branch_one, const TreePrior& branch_two,
                                             int split_level, const std::vector<bool>& lambda)
{
    const NodeValues payoff = tree.terminal_payoff();
    const TreePrior pasted = paste_selection(tree, base, branch_one, branch_two, split_level, lambda);
    const NodeValues reach = reach_probabilities(tree, base);
    const NodeValues under_one = conditional_expectation(tree, branch_one, payoff);

    StrictnessCheck out;
    out.initial_value = tree.node(tree.root()).asset;
    out.pasted_mean = conditional_expectation(tree, pasted, payoff)[tree.root()];
    for (std::size_t i : tree.level(split_level)) {
        if (lambda[i] && reach[i] > 0.0 && under_one[i] < tree.node(i).asset - slack_tolerance(tree.node(i).asset)) {
            out.premise = true;
        }
    }
    out.holds = !out.premise || out.pasted_mean < out.initial_value - slack_tolerance(out.initial_value);
    return out;
}

Superreplication superreplication_price_to(const TreeMarket& tree, const NodeValues& target, int target_level)
{
    check_values(tree, target);
    require(target_level >= 0 && target_level <= tree.depth(), "target level out of range");
    Superreplication out;
    out.capital.assign(tree.size(), kNaN);
    out.strategy.holdings.assign(tree.size(), 0.0);
    for (std::size_t i : tree.level(target_level)) {
        if (!std::isfinite(target[i])) {
            throw InvalidArgument("payoff is unbounded (non-finite) on the tree");
        }
        out.capital[i] = target[i];
    }
    std::vector<double> value;
    std::vector<double> move;
    for (int k = target_level - 1; k >= 0; --k) {
        for (std::size_t i : tree.level(k)) {
            value.clear();
            move.clear();
            for (std::size_t c : tree.children(i)) {
                value.push_back(out.capital[c]);
                move.push_back(tree.node(c).asset - tree.node(i).asset);
            }
            const auto step = solve_one_step(value, move);
            out.capital[i] = step.capital;
            out.strategy.holdings[i] = step.holding;
        }
    }
    out.price = out.capital[tree.root()];
    out.strategy.initial_capital = out.price;
    return out;
}

Superreplication superreplication_price(const TreeMarket& tree, const NodeValues& payoff)
{
    return superreplication_price_to(tree, payoff, tree.depth());
}

HedgeCheck evaluate_strategy(const TreeMarket& tree, const Strategy& strategy, const NodeValues& target,
                             int target_level)
{
    require(strategy.holdings.size() == tree.size(), "strategy size does not match the tree");
    HedgeCheck out;
    hedge_paths(tree, strategy, target, target_level, tree.root(), strategy.initial_capital, out);
    return out;
}

DominanceResult check_no_dominance(const TreeMarket& tree, int horizon_level)
{
    if (horizon_level < 0) {
        horizon_level = tree.depth();
    }
    const NodeValues target = horizon_level == tree.depth() ? tree.terminal_payoff() : tree.asset_values();
    const Superreplication hedge = superreplication_price_to(tree, target, horizon_level);
    const double s0 = tree.node(tree.root()).asset;
    const double tol = slack_tolerance(s0);

    DominanceResult out;
    out.price = hedge.price;
    if (hedge.price < s0 - tol) {
        Strategy w = hedge.strategy;
        w.initial_capital = s0;
        out.undominated = false;
        out.witness = w;
        return out;
    }
    if (hedge.price > s0 + tol) {
        return out;   // S_0 cannot even superreplicate
    }
    std::vector<double> value;
    std::vector<double> move;
    for (int k = 0; k < horizon_level; ++k) {
        for (std::size_t i : tree.level(k)) {
            value.clear();
            move.clear();
            for (std::size_t c : tree.children(i)) {
                value.push_back(hedge.capital[c]);
                move.push_back(tree.node(c).asset - tree.node(i).asset);
            }
            if (const auto h = slack_holding(value, move, hedge.capital[i])) {
                Strategy w = hedge.strategy;
                w.initial_capital = s0;
                w.holdings[i] = *h;
                out.undominated = false;
                out.witness = w;
                return out;
            }
        }
    }
    return out;
}

Strategy extend_buy_and_hold(const TreeMarket& tree, const Strategy& strategy, int from_level)
{
    Strategy out = strategy;
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (tree.node(i).level >= from_level) {
            out.holdings[i] = 1.0;
        }
    }
    return out;
}

std::vector<TreePrior> enumerate_selections(const TreeMarket& tree, std::size_t limit)
{
    std::vector<std::size_t> inner;
    double count = 1.0;
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (!tree.is_terminal(i)) {
            inner.push_back(i);
            count *= static_cast<double>(tree.node(i).laws.size());
        }
    }
    require(count <= static_cast<double>(limit), "too many selections to enumerate");
    std::vector<TreePrior> out;
    TreePrior cur = uniform_selection(tree, 0);
    while (true) {
        out.push_back(cur);
        std::size_t k = inner.size();
        while (k > 0) {
            const std::size_t node = inner[k - 1];
            if (++cur.selection[node] < static_cast<int>(tree.node(node).laws.size())) {
                break;
            }
            cur.selection[node] = 0;
            --k;
        }
        if (k == 0) {
            break;
        }
    }
    return out;
}

double singleton_equivalence_check(const TreeMarket& tree, const TreePrior& base, int level)
{
    require(tree.has_common_support(), "singleton equivalence needs laws with a common support");
    require(level >= 0 && level <= tree.depth(), "level out of range");
    check_prior(tree, base);
    const NodeValues payoff = tree.terminal_payoff();
    const auto& nodes = tree.level(level);
    std::vector<double> over_all(nodes.size(), -std::numeric_limits<double>::infinity());
    std::vector<double> over_agreeing = over_all;
    for (const auto& q : enumerate_selections(tree)) {
        const NodeValues v = conditional_expectation(tree, q, payoff);
        const bool agrees = agrees_before(tree, q, base, level);
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            over_all[k] = std::max(over_all[k], v[nodes[k]]);
            if (agrees) {
                over_agreeing[k] = std::max(over_agreeing[k], v[nodes[k]]);
            }
        }
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        worst = std::max(worst, std::abs(over_all[k] - over_agreeing[k]));
    }
    return worst;
}

// --- instances --------------------------------------------------------------

double unit_uniform(std::mt19937_64& rng)
{
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

TreeMarket random_tree(std::mt19937_64& rng, const RandomTreeOptions& options)
{
    require(options.depth >= 1, "random tree depth must be >= 1");
    require(options.children >= 2, "random trees need at least two children per node");
    require(options.laws_per_node >= 1, "random trees need at least one law per node");
    std::vector<TreeNode> nodes(1);
    nodes[0].level = 0;
    nodes[0].asset = 100.0;
    std::vector<std::size_t> frontier{0};
    for (int level = 0; level < options.depth; ++level) {
        std::vector<std::size_t> next;
        for (std::size_t parent : frontier) {
            const double spot = nodes[parent].asset;
            std::vector<std::size_t> ids;
            std::vector<double> values;
            for (int c = 0; c < options.children; ++c) {
                double v = 0.0;
                if (c == 0) {
                    v = spot * (1.0 - 0.1 - 0.3 * unit_uniform(rng));
                } else if (c == options.children - 1) {
                    v = spot * (1.0 + 0.1 + 0.4 * unit_uniform(rng));
                } else {
                    v = spot * (0.92 + 0.16 * unit_uniform(rng));
                    if (v == spot) v *= 1.01;
                }
                TreeNode child;
                child.level = level + 1;
                child.asset = v;
                ids.push_back(nodes.size());
                values.push_back(v);
                nodes.push_back(child);
                next.push_back(ids.back());
            }
            for (int l = 0; l < options.laws_per_node; ++l) {
                if (options.common_support || l == 0) {
                    nodes[parent].laws.push_back(martingale_law(rng, spot, ids, values));
                    continue;
                }
                // the first law spans every child; later ones keep the extremes
                // and a random subset of the rest
                std::vector<std::size_t> sub_ids;
                std::vector<double> sub_values;
                for (std::size_t j = 0; j < ids.size(); ++j) {
                    const bool extreme = j == 0 || j + 1 == ids.size();
                    if (extreme || unit_uniform(rng) < 0.5) {
                        sub_ids.push_back(ids[j]);
                        sub_values.push_back(values[j]);
                    }
                }
                nodes[parent].laws.push_back(martingale_law(rng, spot, sub_ids, sub_values));
            }
        }
        frontier = std::move(next);
    }
    for (std::size_t i : frontier) {
        if (options.retire_probability > 0.0 && unit_uniform(rng) < options.retire_probability) {
            nodes[i].payoff = nodes[i].asset * unit_uniform(rng);
        }
    }
    return TreeMarket(options.depth, std::move(nodes));
}

TreePrior random_selection(std::mt19937_64& rng, const TreeMarket& tree)
{
    TreePrior p = uniform_selection(tree, 0);
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (!tree.is_terminal(i)) {
            const auto n = tree.node(i).laws.size();
            p.selection[i] = static_cast<int>(std::min<std::size_t>(n - 1, static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(n))));
        }
    }
    return p;
}

TreeMarket two_law_one_period_tree()
{
    std::vector<TreeNode> nodes(5);
    nodes[0] = {0, 100.0, {{{2, 0.5}, {3, 0.5}}, {{1, 0.5}, {4, 0.5}}}, std::nullopt, 0};
    nodes[1] = {1, 120.0, {}, std::nullopt, 1};
    nodes[2] = {1, 110.0, {}, std::nullopt, 2};
    nodes[3] = {1, 90.0, {}, std::nullopt, 3};
    nodes[4] = {1, 80.0, {}, std::nullopt, 4};
    return TreeMarket(1, std::move(nodes));
}

TreeMarket three_child_single_law_tree()
{
    std::vector<TreeNode> nodes(4);
    nodes[0] = {0, 100.0, {{{1, 0.25}, {2, 0.5}, {3, 0.25}}}, std::nullopt, 0};
    nodes[1] = {1, 80.0, {}, std::nullopt, 1};
    nodes[2] = {1, 100.0, {}, std::nullopt, 2};
    nodes[3] = {1, 120.0, {}, std::nullopt, 3};
    return TreeMarket(1, std::move(nodes));
}

TreeMarket retired_binomial_tree(double retire, const std::vector<std::size_t>& retired_terminals)
{
    std::vector<TreeNode> nodes(7);
    nodes[0] = {0, 100.0, {{{1, 0.5}, {2, 0.5}}}, std::nullopt, 0};
    nodes[1] = {1, 120.0, {{{3, 0.5}, {4, 0.5}}}, std::nullopt, 1};
    nodes[2] = {1, 80.0, {{{5, 0.5}, {6, 0.5}}}, std::nullopt, 2};
    nodes[3] = {2, 144.0, {}, std::nullopt, 3};
    nodes[4] = {2, 96.0, {}, std::nullopt, 4};
    nodes[5] = {2, 96.0, {}, std::nullopt, 5};
    nodes[6] = {2, 64.0, {}, std::nullopt, 6};
    const std::vector<std::size_t> all{3, 4, 5, 6};
    for (std::size_t i : retired_terminals.empty() ? all : retired_terminals) {
        require(i >= 3 && i <= 6, "retired terminal index must be a level-2 node (3..6)");
        nodes[i].payoff = retire * nodes[i].asset;
    }
    return TreeMarket(2, std::move(nodes));
}

Lattice build_lattice(const LatticeSpec& spec)
{
    require(spec.steps >= 1 && spec.dt > 0.0, "lattice needs steps >= 1 and dt > 0");
    require(static_cast<bool>(spec.rates_at) && static_cast<bool>(spec.payoff), "lattice needs rates and payoff");
    const bool additive = spec.kind == LatticeSpec::Kind::Additive;
    require(additive || spec.x0 > 0.0, "multiplicative lattice needs x0 > 0");

    double a_max = 0.0;
    std::vector<std::vector<double>> rates(static_cast<std::size_t>(spec.steps));
    for (int k = 0; k < spec.steps; ++k) {
        for (double a : spec.rates_at(k)) {
            require(std::isfinite(a) && a >= 0.0, "lattice rates must be finite and >= 0");
            if (std::find(rates[k].begin(), rates[k].end(), a) == rates[k].end()) {
                rates[k].push_back(a);
            }
            a_max = std::max(a_max, a);
        }
        require(!rates[k].empty(), "every lattice level needs at least one rate");
    }
    const double delta = a_max > 0.0 ? std::sqrt(a_max * spec.dt) : 1.0;
    const double p_up_full = additive ? 0.5 : (1.0 - std::exp(-delta)) / (std::exp(delta) - std::exp(-delta));
    const double p_down_full = 1.0 - p_up_full;
    const double shift = additive ? 1.0 - (spec.x0 - spec.steps * delta) : 0.0;

    auto start_of = [](int k) { return static_cast<std::size_t>(k) * static_cast<std::size_t>(k); };
    // level k holds 2k+1 nodes, positions j = -k..k
    const std::size_t total = start_of(spec.steps + 1);
    Lattice out;
    out.state.resize(total);
    out.payoff.assign(total, 0.0);
    std::vector<TreeNode> nodes(total);
    for (int k = 0; k <= spec.steps; ++k) {
        for (int j = -k; j <= k; ++j) {
            const std::size_t idx = start_of(k) + static_cast<std::size_t>(j + k);
            const double x = additive ? spec.x0 + j * delta : spec.x0 * std::exp(j * delta);
            out.state[idx] = x;
            TreeNode& n = nodes[idx];
            n.level = k;
            n.asset = additive ? x + shift : x;
            n.id = static_cast<long long>(idx);
            if (k == spec.steps) {
                out.payoff[idx] = spec.payoff(x);
                continue;
            }
            const std::size_t down = start_of(k + 1) + static_cast<std::size_t>(j + k);
            for (double a : rates[static_cast<std::size_t>(k)]) {
                const double w = a_max > 0.0 ? a / a_max : 0.0;
                BranchLaw law;
                if (w > 0.0) law.push_back({down, w * p_down_full});
                if (w < 1.0) law.push_back({down + 1, 1.0 - w});
                if (w > 0.0) law.push_back({down + 2, w * p_up_full});
                n.laws.push_back(std::move(law));
            }
        }
    }
    // drop nodes no law reaches (parity holes when every rate is 0 or a_max)
    std::vector<bool> reached(total, false);
    reached[0] = true;
    for (std::size_t i = 0; i < total; ++i) {
        if (!reached[i]) continue;
        for (const auto& law : nodes[i].laws) {
            for (const auto& e : law) reached[e.child] = true;
        }
    }
    std::vector<std::size_t> remap(total, 0);
    std::vector<TreeNode> kept;
    Lattice compact;
    for (std::size_t i = 0; i < total; ++i) {
        if (!reached[i]) continue;
        remap[i] = kept.size();
        kept.push_back(std::move(nodes[i]));
        kept.back().id = static_cast<long long>(remap[i]);
        compact.state.push_back(out.state[i]);
        compact.payoff.push_back(out.payoff[i]);
    }
    for (auto& n : kept) {
        for (auto& law : n.laws) {
            for (auto& e : law) e.child = remap[e.child];
        }
    }
    compact.tree = TreeMarket(spec.steps, std::move(kept));
    return compact;
}

// --- JSON -------------------------------------------------------------------

void to_json(nlohmann::json& j, const TreeMarket& tree)
{
    auto id_of = [&](std::size_t i) { return tree.node(i).id >= 0 ? tree.node(i).id : static_cast<long long>(i); };
    auto nodes = nlohmann::json::array();
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const auto& n = tree.node(i);
        auto laws = nlohmann::json::array();
        for (const auto& law : n.laws) {
            auto edges = nlohmann::json::array();
            for (const auto& e : law) {
                edges.push_back({id_of(e.child), e.probability});
            }
            laws.push_back(edges);
        }
        nlohmann::json node = {{"level", n.level}, {"id", id_of(i)}, {"S", n.asset}, {"distributions", laws}};
        if (n.payoff) {
            node["payoff"] = *n.payoff;
        }
        nodes.push_back(node);
    }
    j = {{"depth", tree.depth()}, {"nodes", nodes}};
}

void from_json(const nlohmann::json& j, TreeMarket& tree)
{
    const int depth = j.at("depth").get<int>();
    const auto& raw = j.at("nodes");
    std::map<long long, std::size_t> index;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const long long id = raw[i].at("id").get<long long>();
        require(index.emplace(id, i).second, "duplicate node id " + std::to_string(id));
    }
    std::vector<TreeNode> nodes(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto& r = raw[i];
        TreeNode& n = nodes[i];
        n.level = r.at("level").get<int>();
        n.asset = r.at("S").get<double>();
        n.id = r.at("id").get<long long>();
        if (r.contains("payoff") && !r.at("payoff").is_null()) {
            n.payoff = r.at("payoff").get<double>();
        }
        for (const auto& law : r.value("distributions", nlohmann::json::array())) {
            BranchLaw bl;
            for (const auto& e : law) {
                require(e.is_array() && e.size() == 2, "distribution entries must be [child_id, p]");
                const auto it = index.find(e[0].get<long long>());
                require(it != index.end(), "distribution references unknown node id");
                bl.push_back({it->second, e[1].get<double>()});
            }
            n.laws.push_back(std::move(bl));
        }
    }
    tree = TreeMarket(depth, std::move(nodes));
}

void to_json(nlohmann::json& j, const Strategy& s)
{
    j = {{"initial_capital", s.initial_capital}, {"holdings", s.holdings}};
}

nlohmann::json check_report(const std::string& check, const nlohmann::json& instance, double discrepancy,
                            bool pass)
{
    return {{"check", check}, {"instance", instance}, {"discrepancy", discrepancy}, {"pass", pass}};
}

} // namespace bubblelab
