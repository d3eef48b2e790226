#pragma once

// Exact finite-market oracle.
//
// A TreeMarket is a finite-horizon market in which every non-terminal node
// carries a set of one-step martingale laws for the asset. A prior is a
// selection of one law per node; the family of priors is every selection.
// Conditional sublinear expectations, robust fundamental values, pasting,
// superreplication and dominance are all computed exactly by backward
// recursion or enumeration.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace bubblelab {

struct TreeEdge {
    std::size_t child = 0;
    double probability = 0.0;
};

using BranchLaw = std::vector<TreeEdge>;

struct TreeNode {
    int level = 0;
    double asset = 0.0;                 // S(node) > 0
    std::vector<BranchLaw> laws;        // empty at terminal nodes
    std::optional<double> payoff;       // terminal payoff; defaults to S
    long long id = -1;                  // external id (JSON); index when unset
};

using NodeValues = std::vector<double>;

class TreeMarket {
public:
    TreeMarket() = default;
    // Validates probabilities (sum to 1 within 1e-12, each > 0) and the
    // martingale condition (within 1e-10 relative) of every law.
    TreeMarket(int depth, std::vector<TreeNode> nodes);

    int depth() const { return depth_; }
    std::size_t size() const { return nodes_.size(); }
    const TreeNode& node(std::size_t i) const { return nodes_[i]; }
    const std::vector<TreeNode>& nodes() const { return nodes_; }
    const std::vector<std::size_t>& level(int k) const { return levels_[static_cast<std::size_t>(k)]; }
    std::size_t root() const { return levels_[0][0]; }
    bool is_terminal(std::size_t i) const { return nodes_[i].level == depth_; }

    // Children reachable under some law, ascending and deduplicated.
    const std::vector<std::size_t>& children(std::size_t i) const { return children_[i]; }

    // Every non-root node has exactly one parent.
    bool is_tree() const { return is_tree_; }
    std::size_t parent(std::size_t i) const { return parents_[i]; }
    // Ancestor of node i at level k <= level(i); requires is_tree().
    std::size_t ancestor_at(std::size_t i, int k) const;

    // Payoff at terminal nodes (node payoff, else S); zero elsewhere.
    NodeValues terminal_payoff() const;
    NodeValues asset_values() const;
    bool has_retired_payoff() const;

    // Every law at a node assigns positive mass to the same children.
    bool has_common_support() const;

private:
    int depth_ = 0;
    std::vector<TreeNode> nodes_;
    std::vector<std::vector<std::size_t>> levels_;
    std::vector<std::vector<std::size_t>> children_;
    std::vector<std::size_t> parents_;
    bool is_tree_ = false;
};

// One law index per node (-1 at terminal nodes).
struct TreePrior {
    std::vector<int> selection;
    bool operator==(const TreePrior&) const = default;
};

TreePrior uniform_selection(const TreeMarket& tree, int law_index = 0);
bool agrees_before(const TreeMarket& tree, const TreePrior& a, const TreePrior& b, int level);

struct DpResult {
    NodeValues values;
    std::vector<int> argmax;   // lowest law index on ties; -1 at terminals
};

// value(node) = max over the node's laws of sum p * value(child).
DpResult sublinear_dp(const TreeMarket& tree, const NodeValues& payoff);
// Same recursion started from values given at `from_level`; entries at
// levels above `from_level` are ignored and returned as NaN.
DpResult sublinear_dp_from(const TreeMarket& tree, const NodeValues& values, int from_level);

// Linear conditional expectation E_Q[payoff | node] under one selection.
NodeValues conditional_expectation(const TreeMarket& tree, const TreePrior& prior, const NodeValues& payoff);
NodeValues conditional_expectation_from(const TreeMarket& tree, const TreePrior& prior, const NodeValues& values,
                                        int from_level);
// Probability of reaching each node under a selection.
NodeValues reach_probabilities(const TreeMarket& tree, const TreePrior& prior);

struct FundamentalValue {
    NodeValues fundamental;   // S*
    NodeValues bubble;        // S - S*
};

FundamentalValue robust_fundamental_value(const TreeMarket& tree);

// Node-wise pasting: Q on levels < sigma, Q1 below nodes in Lambda, Q2 below
// the remaining level-sigma nodes. `lambda` is indexed by node.
TreePrior paste_selection(const TreeMarket& tree, const TreePrior& base, const TreePrior& branch_one,
                          const TreePrior& branch_two, int split_level, const std::vector<bool>& lambda);

// Max over level-tau nodes of
//   |E_Qbar[Y|F_tau] - E_Q[E_Q1[Y 1_L|F_s]|F_tau] - E_Q[E_Q2[Y 1_L^c|F_s]|F_tau]|.
double verify_pasting_identity(const TreeMarket& tree, const TreePrior& base, const TreePrior& branch_one,
                               const TreePrior& branch_two, int split_level, const std::vector<bool>& lambda,
                               const NodeValues& payoff, int tau_level);

struct StrictnessCheck {
    bool premise = false;          // E_Q1[S_T|F_s] < S_s on a reachable node of Lambda
    double pasted_mean = 0.0;      // E_Qbar[S_T]
    double initial_value = 0.0;    // S_0
    bool holds = true;             // premise => pasted_mean < S_0
};

StrictnessCheck pasting_preserves_strictness(const TreeMarket& tree, const TreePrior& base,
                                             const TreePrior& branch_one, const TreePrior& branch_two,
                                             int split_level, const std::vector<bool>& lambda);

struct Strategy {
    double initial_capital = 0.0;
    std::vector<double> holdings;   // per node; position over the next period
};

struct Superreplication {
    double price = 0.0;
    Strategy strategy;
    NodeValues capital;   // minimal superhedging capital per node
};

// Minimal x such that x + (H.S) >= target at every node of `target_level`
// under every selection.
Superreplication superreplication_price(const TreeMarket& tree, const NodeValues& payoff);
Superreplication superreplication_price_to(const TreeMarket& tree, const NodeValues& target, int target_level);

struct HedgeCheck {
    double min_slack = 0.0;   // min over paths of wealth - target
    double max_slack = 0.0;
    std::size_t paths = 0;
};

// Enumerates every root-to-level path through reachable children.
HedgeCheck evaluate_strategy(const TreeMarket& tree, const Strategy& strategy, const NodeValues& target,
                             int target_level);

struct DominanceResult {
    bool undominated = true;
    double price = 0.0;
    std::optional<Strategy> witness;
};

// Looks for H with S_0 + (H.S) >= X at `horizon_level` everywhere and strict
// somewhere, X being the terminal payoff at the last level and S before it.
DominanceResult check_no_dominance(const TreeMarket& tree, int horizon_level = -1);

// Keeps `strategy` strictly before `from_level` and holds one unit afterwards.
Strategy extend_buy_and_hold(const TreeMarket& tree, const Strategy& strategy, int from_level);

// Max over level-t nodes of |max over all selections of E[X|node] - max over
// selections agreeing with `base` before t of E[X|node]|, by enumeration.
double singleton_equivalence_check(const TreeMarket& tree, const TreePrior& base, int level);

// Every selection of the tree, in lexicographic order; throws above `limit`.
std::vector<TreePrior> enumerate_selections(const TreeMarket& tree, std::size_t limit = std::size_t{1} << 20);

// --- instances --------------------------------------------------------------

struct RandomTreeOptions {
    int depth = 3;
    int children = 3;          // 2 or 3
    int laws_per_node = 2;
    bool common_support = true;
    double retire_probability = 0.0;   // chance a terminal payoff is scaled down
};

// Deterministic given the engine state; uses only raw engine output.
TreeMarket random_tree(std::mt19937_64& rng, const RandomTreeOptions& options);
TreePrior random_selection(std::mt19937_64& rng, const TreeMarket& tree);
double unit_uniform(std::mt19937_64& rng);

// S0 = 100; laws {110, 90} and {120, 80}, each with probability 1/2.
TreeMarket two_law_one_period_tree();
// S0 = 100; children {80, 100, 120} under the single law {1/4, 1/2, 1/4}.
TreeMarket three_child_single_law_tree();
// Two-period binomial with martingale laws and payoff scaled by `retire` at
// the given terminal nodes (all terminals when empty).
TreeMarket retired_binomial_tree(double retire, const std::vector<std::size_t>& retired_terminals = {});

struct LatticeSpec {
    enum class Kind { Additive, Multiplicative };
    Kind kind = Kind::Additive;
    double x0 = 0.0;
    int steps = 10;
    double dt = 0.1;
    // Variance rates available at each level (level -> rates).
    std::function<std::vector<double>(int)> rates_at;
    std::function<double(double)> payoff;
};

struct Lattice {
    TreeMarket tree;
    std::vector<double> state;   // x per node
    NodeValues payoff;
};

// Recombining lattice with spacing sqrt(a_max dt). The law at rate a mixes the
// two-point law at a_max with the point mass at the current node in
// proportion a / a_max, so its variance is a dt (additive) or ~ a dt x^2.
Lattice build_lattice(const LatticeSpec& spec);

void to_json(nlohmann::json& j, const TreeMarket& tree);
void from_json(const nlohmann::json& j, TreeMarket& tree);
void to_json(nlohmann::json& j, const Strategy& s);

nlohmann::json check_report(const std::string& check, const nlohmann::json& instance, double discrepancy,
                            bool pass);

} // namespace bubblelab
