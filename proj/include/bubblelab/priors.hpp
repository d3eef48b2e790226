#pragma once

// Volatility scenarios (priors) and finite families of them.
//
// A prior is a deterministic, piecewise-constant variance-rate schedule for
// the canonical process: d<B>_t = rate(t) dt in every coordinate. Families are
// finite grids standing in for the continuum sets of constant or
// time-dependent volatilities.

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

namespace bubblelab {

struct VolatilityDomain {
    double lower = 0.0;   // variance rate, per unit time
    double upper = 0.0;
    int dimension = 1;

    void validate() const;
    bool contains(double rate) const { return rate >= lower && rate <= upper; }
};

struct SchedulePiece {
    double start = 0.0;
    double end = 0.0;
    double rate = 0.0;

    bool operator==(const SchedulePiece&) const = default;
};

// Piecewise-constant variance rate on [0, horizon]. Pieces are half-open
// (start, end] except the first, which includes 0.
class Schedule {
public:
    Schedule() = default;
    explicit Schedule(std::vector<SchedulePiece> pieces);

    static Schedule constant(double rate, double horizon);

    const std::vector<SchedulePiece>& pieces() const { return pieces_; }
    double horizon() const { return pieces_.empty() ? 0.0 : pieces_.back().end; }
    double rate_at(double t) const;

    // Integrated variance  \int_{from}^{to} rate(u) du.
    double integrated(double from, double to) const;

    // Integrated variance weighted by 1/(maturity - u):
    //   \int_{from}^{to} rate(u) / (maturity - u) du,  to < maturity.
    double integrated_over_remaining(double from, double to, double maturity) const;

    // Same rates on [from, to] (up to merging of equal adjacent pieces).
    bool agrees_on(const Schedule& other, double from, double to) const;

    // Equal adjacent rates merged into one piece.
    Schedule canonical() const;

    double min_rate() const;
    double max_rate() const;

    bool operator==(const Schedule& other) const { return canonical().pieces_ == other.canonical().pieces_; }

private:
    std::vector<SchedulePiece> pieces_;
};

struct Prior {
    std::string label;
    Schedule schedule;
    int dimension = 1;

    double horizon() const { return schedule.horizon(); }
    bool is_constant() const { return schedule.canonical().pieces().size() == 1; }
    bool is_degenerate() const { return schedule.max_rate() == 0.0; }
};

enum class FamilyKind { ConstantGrid, PiecewiseGrid, RestrictedAfterT, Custom };

std::string to_string(FamilyKind kind);
FamilyKind family_kind_from_string(const std::string& text);

struct PriorFamily {
    VolatilityDomain domain;
    std::vector<Prior> members;
    FamilyKind kind = FamilyKind::Custom;

    // Grid metadata, filled in by the constructors below.
    std::vector<double> rate_grid;
    std::vector<double> breakpoints;   // piecewise-grid: interior breakpoints
    double switch_time = 0.0;          // restricted-after-t
    double tail_rate = 0.0;            // restricted-after-t

    double horizon() const { return members.front().horizon(); }
    int dimension() const { return domain.dimension; }
    const Prior& member(const std::string& label) const;

    void validate() const;
};

// Rates evenly spaced over [lower, upper]; endpoints included.
PriorFamily make_constant_family(const VolatilityDomain& domain, int grid_points, double horizon);

// Every combination of grid rates on the pieces cut by `breakpoints`.
PriorFamily make_piecewise_family(const VolatilityDomain& domain, const std::vector<double>& breakpoints,
                                  int grid_points, double horizon);

// Grid rate on [0, switch_time], fixed tail rate on (switch_time, horizon].
PriorFamily make_restricted_family(const VolatilityDomain& domain, double fixed_tail_rate, double switch_time,
                                   int grid_points, double horizon);

PriorFamily make_custom_family(const VolatilityDomain& domain, std::vector<Prior> members);

// Threshold predicate on the first coordinate of the path at the split time.
struct PathEvent {
    enum class Kind { Always, Never, AtLeast, Below };
    Kind kind = Kind::Always;
    double threshold = 0.0;

    bool holds(double value_at_split) const;

    static PathEvent always() { return {Kind::Always, 0.0}; }
    static PathEvent never() { return {Kind::Never, 0.0}; }
    static PathEvent at_least(double c) { return {Kind::AtLeast, c}; }
    static PathEvent below(double c) { return {Kind::Below, c}; }
};

// Follow `base` up to `split_time`, then `branch_one` on the event and
// `branch_two` off it.
struct PastedPrior {
    Prior base;
    Prior branch_one;
    Prior branch_two;
    double split_time = 0.0;
    PathEvent event;

    std::string label() const;
    int dimension() const { return base.dimension; }
    double horizon() const { return base.horizon(); }
    // Schedules followed by paths with positive probability.
    std::vector<Schedule> realized_schedules() const;
};

PastedPrior paste(const Prior& base, const Prior& branch_one, const Prior& branch_two, double split_time,
                  const PathEvent& event);

bool family_closed_under_pasting(const PriorFamily& family, const PastedPrior& pasted);

// Schedules with these rates and breaks can be produced by the family's kind.
bool family_represents(const PriorFamily& family, const Schedule& schedule);

// Members of `family` that coincide with `prior` on [0, t].
std::vector<std::size_t> agreeing_members(const PriorFamily& family, const Schedule& schedule, double t);

void to_json(nlohmann::json& j, const VolatilityDomain& d);
void from_json(const nlohmann::json& j, VolatilityDomain& d);
void to_json(nlohmann::json& j, const Prior& p);
void from_json(const nlohmann::json& j, Prior& p);
void to_json(nlohmann::json& j, const PriorFamily& f);
void from_json(const nlohmann::json& j, PriorFamily& f);
void to_json(nlohmann::json& j, const PathEvent& e);
void from_json(const nlohmann::json& j, PathEvent& e);
nlohmann::json pasted_to_json(const PastedPrior& p);
PastedPrior pasted_from_json(const nlohmann::json& j, const PriorFamily& family);

} // namespace bubblelab
