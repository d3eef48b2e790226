#pragma once

// Bubble detection: market value, robust fundamental value S* and bubble
// beta = S - S* along a set of report times, per-prior martingale
// classification and the infinite-horizon (never maturing) case.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bubblelab/assets.hpp"
#include "bubblelab/mc_engine.hpp"
#include "bubblelab/priors.hpp"

namespace bubblelab {

struct HorizonSpec {
    enum class Kind { Finite, InfiniteTruncated };
    Kind kind = Kind::Finite;
    double value = 1.0;   // T, or T_max for the truncated infinite horizon

    static HorizonSpec finite(double t) { return {Kind::Finite, t}; }
    static HorizonSpec infinite_truncated(double t_max) { return {Kind::InfiniteTruncated, t_max}; }
    void validate() const;
};

enum class Method { MonteCarlo, Pde, ClosedForm, Tree };

std::string to_string(Method m);
Method method_from_string(const std::string& text);

struct Budget {
    std::size_t n_paths = 20000;
    std::size_t n_steps = 100;
    std::vector<double> report_times;   // empty: 0, T/4, T/2, 3T/4, T
    std::uint64_t seed = 1;
    unsigned workers = 1;
    std::size_t min_paths = 1000;       // fewer paths -> inconclusive verdicts
    std::size_t pde_nx = 401;
    int tree_steps = 64;
};

// Where a number came from. Everything except MonteCarlo is exact up to
// floating point (tree and pde up to their discretization).
enum class Source { Analytic, MonteCarlo, Pde, Tree };
std::string to_string(Source s);

struct CurvePoint {
    std::string prior_label;
    double t = 0.0;
    Estimate market;        // E_Q[S_t]
    Estimate fundamental;   // E_Q[S*_t]
    Estimate bubble;        // E_Q[beta_t], per-path difference
    double band = 0.0;      // 3 standard errors of beta; 0 for exact sources
    Source source = Source::Analytic;
};

enum class Verdict { TrueMartingale, StrictLocalMartingale, Inconclusive };
std::string to_string(Verdict v);

struct GapEvidence {
    double t = 0.0;
    double gap = 0.0;        // S_0 - E_Q[S_t]
    double std_error = 0.0;
    bool analytic = false;
};

struct PriorClassification {
    std::string prior_label;
    Verdict verdict = Verdict::Inconclusive;
    std::vector<GapEvidence> evidence;
    bool analytic = false;   // every evidence point came from a closed form
};

struct TerminalQuantile {
    std::string prior_label;
    double epsilon = 0.0;    // fraction of T
    double t = 0.0;          // T (1 - epsilon)
    double median = 0.0;
    double q05 = 0.0;
    double q95 = 0.0;
    Estimate mean;
};

struct TreeShadowLevel {
    int level = 0;
    double t = 0.0;
    double min_bubble = 0.0;
    double max_bubble = 0.0;
};

struct InfiniteHorizonPoint {
    std::string prior_label;
    double t = 0.0;
    Estimate fundamental;          // E_Q[S*_t]
    Estimate bubble;               // E_Q[beta_t]
    Estimate wealth;               // E_Q[W_t]
    Estimate fundamental_wealth;   // E_Q[W*_t]
};

struct InfiniteHorizonFragment {
    double t_max = 0.0;
    bool reduced_to_finite = false;
    std::string truncation_note;
    std::vector<InfiniteHorizonPoint> points;
    // W and -W are martingales under every member (sup and inf of E[W_t]
    // over the family both equal W_0).
    bool symmetric_martingale = false;
    bool analytic = false;
};

struct BubbleReport {
    AssetSpec asset;
    PriorFamily family;
    HorizonSpec horizon;
    Method method = Method::ClosedForm;
    std::vector<CurvePoint> curve;
    bool robust_bubble = false;
    std::vector<PriorClassification> per_prior;
    std::vector<TerminalQuantile> terminal_quantiles;
    std::optional<std::pair<double, double>> bubble_interval;
    std::vector<TreeShadowLevel> tree_shadow;
    std::optional<InfiniteHorizonFragment> infinite;
    std::vector<std::string> notes;

    std::string horizon_kind() const { return horizon.kind == HorizonSpec::Kind::Finite ? "finite" : "infinite"; }
};

// Throws IncompatibleMethod when `method` cannot evaluate the asset.
void check_compatible(const AssetSpec& asset, const PriorFamily& family, Method method);

BubbleReport analyze(const AssetSpec& asset, const PriorFamily& family, const HorizonSpec& horizon, Method method,
                     const Budget& budget);

// Tests S_0 - E_Q[S_t] at each t; closed form used when available unless
// `prefer_closed_form` is false.
PriorClassification classify_prior(const AssetSpec& asset, const Prior& prior, const std::vector<double>& t_list,
                                   const Budget& budget, bool prefer_closed_form = true);

// Exploding-vol asset under a family with a single tail rate after
// `switch_time`.
BubbleReport restricted_family_bubble(const AssetSpec& asset, const VolatilityDomain& domain, double tail_rate,
                                      double switch_time, int grid_points, const Budget& budget);

InfiniteHorizonFragment infinite_horizon_value(const AssetSpec& asset, const PriorFamily& family, double t_max,
                                               const Budget& budget);

// beta >= -(band + 1e-10) at every curve point.
bool bubble_nonnegative(const BubbleReport& report);

nlohmann::json to_json(const BubbleReport& report);
nlohmann::json to_json(const PriorClassification& c);
nlohmann::json to_json(const InfiniteHorizonFragment& f);
void write_curve_csv(std::ostream& out, const BubbleReport& report);

} // namespace bubblelab
