#pragma once

// Explicit monotone finite differences for the terminal-value problem
//
//   v_t + 1/2 sup_{a in [a_low, a_high]} a c(x) v_xx = 0,   v(T, x) = g(x),
//
// with c(x) = 1 (canonical) or x^2 (lognormal), on [x_min, x_max] with the
// payoff frozen on the boundary.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "bubblelab/error.hpp"
#include "bubblelab/priors.hpp"

namespace bubblelab {

enum class GeneratorKind { Canonical, Lognormal };

std::string to_string(GeneratorKind kind);
GeneratorKind generator_kind_from_string(const std::string& text);

struct PdeProblem {
    double a_low = 1.0;
    double a_high = 1.0;
    GeneratorKind generator = GeneratorKind::Canonical;
    std::function<double(double)> payoff;
    std::string payoff_label;   // for metadata only
    double x_min = -1.0;
    double x_max = 1.0;
    double horizon = 1.0;

    static PdeProblem from_domain(const VolatilityDomain& domain, GeneratorKind generator,
                                  std::function<double(double)> payoff, double x_min, double x_max, double horizon);
    void validate() const;
};

// Thrown when max_a a c(x) dt / dx^2 exceeds 1/2.
class CflViolation : public NumericalFailure {
public:
    CflViolation(const std::string& message, double max_dt) : NumericalFailure(message), max_dt_(max_dt) {}
    double max_admissible_dt() const { return max_dt_; }

private:
    double max_dt_;
};

class ValueSurface {
public:
    std::vector<double> times;   // nt + 1 points, 0 .. T
    std::vector<double> xs;      // nx points, x_min .. x_max
    std::vector<double> values;  // row n holds v(times[n], .)
    double dt = 0.0;
    double dx = 0.0;
    GeneratorKind generator = GeneratorKind::Canonical;
    double a_low = 0.0;
    double a_high = 0.0;
    std::string payoff_label;

    std::size_t nx() const { return xs.size(); }
    std::size_t nt() const { return times.size() - 1; }
    double at(std::size_t n, std::size_t i) const { return values[n * xs.size() + i]; }
    // Linear interpolation in x at time index n.
    double interpolate(std::size_t n, double x) const;
    double initial(double x) const { return interpolate(0, x); }
};

double max_admissible_dt(const PdeProblem& problem, std::size_t nx);
// Smallest step count satisfying the monotonicity bound.
std::size_t min_time_steps(const PdeProblem& problem, std::size_t nx);

ValueSurface solve(const PdeProblem& problem, std::size_t nx, std::size_t nt);
// Same scheme at the single rate `rate`, with no coefficient selection.
ValueSurface solve_linear(const PdeProblem& problem, double rate, std::size_t nx, std::size_t nt);

struct TreeDiscretization {
    int steps = 50;
    double x0 = 0.0;
};

struct TreeComparison {
    double discrepancy = 0.0;     // max over probe points
    double pde_root = 0.0;        // v(0, x0)
    double tree_root = 0.0;
    std::size_t probes = 0;
};

// PDE against the tree DP on a recombining lattice carrying the martingale
// laws at rates {a_low, a_high}. Probes are the lattice nodes at levels 0 and
// steps/2 within one standard deviation (at a_high) of x0.
TreeComparison compare_with_tree(const PdeProblem& problem, const TreeDiscretization& tree, std::size_t nx,
                                 std::size_t nt);

struct RefinementLevel {
    std::size_t nx = 0;
    std::size_t nt = 0;
    int tree_steps = 0;
    double value = 0.0;          // v(0, x0)
    double tree_value = 0.0;
    double tree_discrepancy = 0.0;
};

struct RefinementSweep {
    std::vector<RefinementLevel> levels;
    // |v_{k+1} - v_k| / |v_k - v_{k-1}|, one per level beyond the second.
    std::vector<double> self_convergence_ratios;
    bool discrepancies_decreasing = false;
};

// Level k doubles nx - 1, quadruples nt and doubles the tree steps.
RefinementSweep refinement_sweep(const PdeProblem& problem, double x0, std::size_t nx, std::size_t nt, int tree_steps,
                                 int levels);

// Rows (t, x, v) every `time_stride` time steps and `space_stride` points.
void write_surface_csv(std::ostream& out, const ValueSurface& surface, std::size_t time_stride = 1,
                       std::size_t space_stride = 1);
nlohmann::json surface_metadata(const ValueSurface& surface);
nlohmann::json to_json(const RefinementSweep& sweep);

} // namespace bubblelab
