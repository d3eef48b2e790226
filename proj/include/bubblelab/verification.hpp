#pragma once

// Seeded property suites over the tree oracle and the PDE solver. Every check
// reports {check, instance, discrepancy, pass}.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bubblelab/tree_oracle.hpp"

namespace bubblelab {

enum class Suite { Tree, Pasting, Dominance, Pde, All };

std::string to_string(Suite s);
Suite suite_from_string(const std::string& text);

struct CheckResult {
    std::string check;
    nlohmann::json instance;
    double discrepancy = 0.0;
    bool pass = false;
};

struct SuiteResult {
    std::string suite;
    std::uint64_t seed = 0;
    std::vector<CheckResult> checks;

    bool all_pass() const;
};

struct SuiteOptions {
    int random_trees = 50;
    int equivalence_trees = 20;
};

SuiteResult run_suite(Suite suite, std::uint64_t seed, const SuiteOptions& options = {});

nlohmann::json to_json(const SuiteResult& r);

// Copies `tree` and appends `extra` levels in which every former terminal
// node has one child with the same asset value and payoff (the asset has
// matured and stays put).
TreeMarket append_constant_levels(const TreeMarket& tree, int extra);

} // namespace bubblelab
