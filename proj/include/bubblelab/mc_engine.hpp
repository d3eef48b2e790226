#pragma once

// Seeded simulation of the canonical process under a prior and Monte Carlo
// estimation of (sublinear) expectations over a prior family.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bubblelab/priors.hpp"

namespace bubblelab {

class TimeGrid {
public:
    TimeGrid() = default;
    explicit TimeGrid(std::vector<double> times);

    static TimeGrid uniform(double horizon, std::size_t steps);
    // Uniform steps merged with the given extra times (all inside [0, horizon]).
    static TimeGrid with_points(double horizon, std::size_t steps, const std::vector<double>& extra);

    const std::vector<double>& times() const { return times_; }
    std::size_t size() const { return times_.size(); }
    double operator[](std::size_t i) const { return times_[i]; }
    double horizon() const { return times_.back(); }
    // Index of a grid time equal to t within 1e-12; throws when absent.
    std::size_t index_of(double t) const;
    bool contains(double t) const;

private:
    std::vector<double> times_;
};

class PathBatch;

// Read-only view of one simulated path.
class PathView {
public:
    PathView(const PathBatch& batch, std::size_t index) : batch_(&batch), index_(index) {}

    std::size_t index() const { return index_; }
    double value(std::size_t time_index, int coord = 0) const;
    std::span<const double> point(std::size_t time_index) const;
    const Schedule& schedule() const;
    const TimeGrid& grid() const;
    int dimension() const;

private:
    const PathBatch* batch_;
    std::size_t index_;
};

class PathBatch {
public:
    std::string prior_label;
    TimeGrid grid;
    std::size_t n_paths = 0;
    int dimension = 1;
    std::uint64_t seed = 0;
    // Schedules followed by paths; a plain prior has one, a pasted prior two.
    std::vector<Schedule> schedules;
    std::vector<std::uint8_t> schedule_index;
    // Row-major n_paths x n_times x dimension.
    std::vector<double> values;

    PathView path(std::size_t p) const { return PathView(*this, p); }
    double at(std::size_t p, std::size_t i, int d) const
    {
        return values[(p * grid.size() + i) * static_cast<std::size_t>(dimension) + static_cast<std::size_t>(d)];
    }
};

struct Estimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;
};

using PathFunctional = std::function<double(const PathView&)>;

PathBatch simulate(const Prior& prior, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                   unsigned workers = 1);
PathBatch simulate(const PastedPrior& prior, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                   unsigned workers = 1);

// Sample mean and standard error (sample standard deviation / sqrt n).
Estimate estimate(const PathBatch& batch, const PathFunctional& functional);
Estimate estimate_values(std::span<const double> samples);

// Empirical quantile with linear interpolation between order statistics.
double quantile(std::vector<double> samples, double q);

struct MemberEstimate {
    std::string label;
    Estimate estimate;
};

struct RobustEstimate {
    Estimate best;
    std::string argmax_label;
    std::vector<MemberEstimate> members;
};

RobustEstimate robust_estimate(const PriorFamily& family, const TimeGrid& grid, std::size_t n_paths,
                               std::uint64_t seed, const PathFunctional& functional, unsigned workers = 1);

// Flat little-endian binary of the path values plus a JSON sidecar.
void write_batch(const PathBatch& batch, const std::string& stem);
PathBatch read_batch(const std::string& stem);

struct EstimateRow {
    std::string prior_label;
    double t = 0.0;
    Estimate estimate;
};

void write_estimates_csv(std::ostream& out, const std::vector<EstimateRow>& rows);
std::string format_double(double v);
// Quoted when the text holds a comma, quote or newline.
std::string csv_field(const std::string& text);

} // namespace bubblelab
