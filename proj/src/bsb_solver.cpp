#include "bubblelab/bsb_solver.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "bubblelab/mc_engine.hpp"
#include "bubblelab/tree_oracle.hpp"

namespace bubblelab {

namespace {

constexpr double kCfl = 0.5;

std::vector<double> space_grid(const PdeProblem& p, std::size_t nx)
{
    std::vector<double> xs(nx);
    const double dx = (p.x_max - p.x_min) / static_cast<double>(nx - 1);
    for (std::size_t i = 0; i < nx; ++i) {
        xs[i] = p.x_min + dx * static_cast<double>(i);
    }
    xs.back() = p.x_max;
    return xs;
}

double coefficient_scale(const PdeProblem& p)
{
    if (p.generator == GeneratorKind::Canonical) {
        return 1.0;
    }
    const double m = std::max(std::abs(p.x_min), std::abs(p.x_max));
    return m * m;
}

// One backward step. With rates {a} a plain explicit heat step; with two
// rates the larger of the two candidates, which is the a_high value exactly
// when the second difference is >= 0.
void step(const std::vector<double>& xs, const std::vector<double>& next, std::vector<double>& cur,
          const double* rates, std::size_t n_rates, GeneratorKind generator, double lambda)
{
    const std::size_t nx = xs.size();
    cur[0] = next[0];
    cur[nx - 1] = next[nx - 1];
    for (std::size_t i = 1; i + 1 < nx; ++i) {
        const double c = generator == GeneratorKind::Canonical ? lambda : lambda * xs[i] * xs[i];
        const double side = next[i + 1] + next[i - 1];
        double best = 0.0;
        for (std::size_t r = n_rates; r-- > 0;) {
            const double w = rates[r] * c;
            const double v = (1.0 - w) * next[i] + (0.5 * w) * side;
            if (r + 1 == n_rates || v > best) {
                best = v;
            }
        }
        cur[i] = best;
    }
}

ValueSurface run(const PdeProblem& problem, const double* rates, std::size_t n_rates, std::size_t nx,
                 std::size_t nt)
{
    problem.validate();
    require(nx >= 3, "space grid needs at least 3 points");
    require(nt >= 1, "time grid needs at least 1 step");
    const double dt = problem.horizon / static_cast<double>(nt);
    const double limit = max_admissible_dt(problem, nx);
    if (dt > limit * (1.0 + 1e-12)) {
        throw CflViolation("explicit scheme is not monotone: dt = " + format_double(dt) +
                               " exceeds the maximal admissible dt = " + format_double(limit),
                           limit);
    }
    ValueSurface s;
    s.xs = space_grid(problem, nx);
    s.dx = (problem.x_max - problem.x_min) / static_cast<double>(nx - 1);
    s.dt = dt;
    s.generator = problem.generator;
    s.a_low = problem.a_low;
    s.a_high = problem.a_high;
    s.payoff_label = problem.payoff_label;
    s.times.resize(nt + 1);
    for (std::size_t n = 0; n <= nt; ++n) {
        s.times[n] = dt * static_cast<double>(n);
    }
    s.times.back() = problem.horizon;
    s.values.assign((nt + 1) * nx, 0.0);

    std::vector<double> next(nx);
    std::vector<double> cur(nx);
    for (std::size_t i = 0; i < nx; ++i) {
        next[i] = problem.payoff(s.xs[i]);
        if (!std::isfinite(next[i])) {
            throw NumericalFailure("terminal payoff is not finite at x = " + format_double(s.xs[i]));
        }
    }
    std::copy(next.begin(), next.end(), s.values.begin() + static_cast<std::ptrdiff_t>(nt * nx));
    const double lambda = dt / (s.dx * s.dx);
    for (std::size_t n = nt; n-- > 0;) {
        step(s.xs, next, cur, rates, n_rates, problem.generator, lambda);
        std::copy(cur.begin(), cur.end(), s.values.begin() + static_cast<std::ptrdiff_t>(n * nx));
        std::swap(next, cur);
    }
    for (double v : s.values) {
        if (!std::isfinite(v)) {
            throw NumericalFailure("PDE solution is not finite");
        }
    }
    return s;
}

} // namespace

std::string to_string(GeneratorKind kind)
{
    return kind == GeneratorKind::Canonical ? "canonical" : "lognormal";
}

GeneratorKind generator_kind_from_string(const std::string& text)
{
    if (text == "canonical") return GeneratorKind::Canonical;
    if (text == "lognormal") return GeneratorKind::Lognormal;
    throw InvalidArgument("unknown generator kind '" + text + "' (expected canonical or lognormal)");
}

PdeProblem PdeProblem::from_domain(const VolatilityDomain& domain, GeneratorKind generator,
                                   std::function<double(double)> payoff, double x_min, double x_max, double horizon)
{
    domain.validate();
    require(domain.dimension == 1, "the PDE solver handles one-dimensional domains only");
    PdeProblem p;
    p.a_low = domain.lower;
    p.a_high = domain.upper;
    p.generator = generator;
    p.payoff = std::move(payoff);
    p.x_min = x_min;
    p.x_max = x_max;
    p.horizon = horizon;
    return p;
}

void PdeProblem::validate() const
{
    require(std::isfinite(a_low) && std::isfinite(a_high) && a_low >= 0.0 && a_low <= a_high,
            "rates must satisfy 0 <= a_low <= a_high");
    require(std::isfinite(x_min) && std::isfinite(x_max) && x_min < x_max, "space domain must satisfy x_min < x_max");
    require(std::isfinite(horizon) && horizon > 0.0, "PDE horizon must be > 0");
    require(static_cast<bool>(payoff), "PDE problem needs a terminal payoff");
}

double ValueSurface::interpolate(std::size_t n, double x) const
{
    require(n < times.size(), "time index out of range");
    require(x >= xs.front() && x <= xs.back(), "x outside the space domain");
    auto it = std::upper_bound(xs.begin(), xs.end(), x);
    std::size_t i = it == xs.end() ? xs.size() - 1 : static_cast<std::size_t>(it - xs.begin());
    i = std::max<std::size_t>(i, 1);
    const double w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    return (1.0 - w) * at(n, i - 1) + w * at(n, i);
}

double max_admissible_dt(const PdeProblem& problem, std::size_t nx)
{
    problem.validate();
    require(nx >= 3, "space grid needs at least 3 points");
    const double dx = (problem.x_max - problem.x_min) / static_cast<double>(nx - 1);
    const double a = problem.a_high * coefficient_scale(problem);
    if (a == 0.0) {
        return problem.horizon;
    }
    return kCfl * dx * dx / a;
}

std::size_t min_time_steps(const PdeProblem& problem, std::size_t nx)
{
    const double limit = max_admissible_dt(problem, nx);
    auto nt = static_cast<std::size_t>(std::ceil(problem.horizon / limit - 1e-9));
    return std::max<std::size_t>(nt, 1);
}

ValueSurface solve(const PdeProblem& problem, std::size_t nx, std::size_t nt)
{
    const double rates[2] = {problem.a_low, problem.a_high};
    return run(problem, rates, problem.a_low == problem.a_high ? 1 : 2, nx, nt);
}

ValueSurface solve_linear(const PdeProblem& problem, double rate, std::size_t nx, std::size_t nt)
{
    PdeProblem p = problem;
    p.a_low = p.a_high = rate;
    const double rates[1] = {rate};
    return run(p, rates, 1, nx, nt);
}

TreeComparison compare_with_tree(const PdeProblem& problem, const TreeDiscretization& tree, std::size_t nx,
                                 std::size_t nt)
{
    problem.validate();
    require(tree.steps >= 2 && tree.steps % 2 == 0, "tree steps must be even and >= 2");
    require(nt % static_cast<std::size_t>(tree.steps) == 0, "PDE time steps must be a multiple of the tree steps");
    require(tree.x0 > problem.x_min && tree.x0 < problem.x_max, "x0 must lie inside the space domain");
    const ValueSurface surface = solve(problem, nx, nt);

    LatticeSpec spec;
    spec.kind = problem.generator == GeneratorKind::Canonical ? LatticeSpec::Kind::Additive
                                                              : LatticeSpec::Kind::Multiplicative;
    spec.x0 = tree.x0;
    spec.steps = tree.steps;
    spec.dt = problem.horizon / tree.steps;
    const double lo = problem.a_low;
    const double hi = problem.a_high;
    spec.rates_at = [lo, hi](int) { return lo == hi ? std::vector<double>{hi} : std::vector<double>{lo, hi}; };
    spec.payoff = problem.payoff;
    const Lattice lattice = build_lattice(spec);
    const DpResult dp = sublinear_dp(lattice.tree, lattice.payoff);

    TreeComparison out;
    out.pde_root = surface.initial(tree.x0);
    out.tree_root = dp.values[lattice.tree.root()];
    out.discrepancy = std::abs(out.pde_root - out.tree_root);
    out.probes = 1;
    const int mid = tree.steps / 2;
    const std::size_t n_mid = nt / static_cast<std::size_t>(tree.steps) * static_cast<std::size_t>(mid);
    const double sd = std::sqrt(hi * problem.horizon) *
                      (problem.generator == GeneratorKind::Canonical ? 1.0 : std::abs(tree.x0));
    for (std::size_t i : lattice.tree.level(mid)) {
        const double x = lattice.state[i];
        if (std::abs(x - tree.x0) > sd || x <= problem.x_min || x >= problem.x_max) {
            continue;
        }
        out.discrepancy = std::max(out.discrepancy, std::abs(surface.interpolate(n_mid, x) - dp.values[i]));
        ++out.probes;
    }
    return out;
}

RefinementSweep refinement_sweep(const PdeProblem& problem, double x0, std::size_t nx, std::size_t nt, int tree_steps,
                                 int levels)
{
    require(levels >= 1, "refinement sweep needs at least one level");
    RefinementSweep out;
    for (int k = 0; k < levels; ++k) {
        RefinementLevel lv;
        lv.nx = nx;
        lv.nt = nt;
        lv.tree_steps = tree_steps;
        const ValueSurface s = solve(problem, nx, nt);
        lv.value = s.initial(x0);
        const TreeComparison cmp = compare_with_tree(problem, {tree_steps, x0}, nx, nt);
        lv.tree_value = cmp.tree_root;
        lv.tree_discrepancy = cmp.discrepancy;
        out.levels.push_back(lv);
        nx = 2 * (nx - 1) + 1;
        nt *= 4;
        tree_steps *= 2;
    }
    for (std::size_t k = 2; k < out.levels.size(); ++k) {
        const double prev = std::abs(out.levels[k - 1].value - out.levels[k - 2].value);
        const double next = std::abs(out.levels[k].value - out.levels[k - 1].value);
        out.self_convergence_ratios.push_back(prev > 0.0 ? next / prev : 0.0);
    }
    out.discrepancies_decreasing = out.levels.size() >= 2;
    for (std::size_t k = 1; k < out.levels.size(); ++k) {
        out.discrepancies_decreasing =
            out.discrepancies_decreasing && out.levels[k].tree_discrepancy < out.levels[k - 1].tree_discrepancy;
    }
    return out;
}

void write_surface_csv(std::ostream& out, const ValueSurface& surface, std::size_t time_stride,
                       std::size_t space_stride)
{
    require(time_stride >= 1 && space_stride >= 1, "strides must be >= 1");
    out << "t,x,v\n";
    for (std::size_t n = 0; n <= surface.nt(); ++n) {
        if (n % time_stride != 0 && n != surface.nt()) {
            continue;
        }
        for (std::size_t i = 0; i < surface.nx(); ++i) {
            if (i % space_stride != 0 && i + 1 != surface.nx()) {
                continue;
            }
            out << format_double(surface.times[n]) << ',' << format_double(surface.xs[i]) << ','
                << format_double(surface.at(n, i)) << '\n';
        }
    }
}

nlohmann::json surface_metadata(const ValueSurface& surface)
{
    return {{"generator", to_string(surface.generator)},
            {"a_low", surface.a_low},
            {"a_high", surface.a_high},
            {"payoff", surface.payoff_label},
            {"x_min", surface.xs.front()},
            {"x_max", surface.xs.back()},
            {"horizon", surface.times.back()},
            {"nx", surface.nx()},
            {"nt", surface.nt()},
            {"dt", surface.dt},
            {"dx", surface.dx}};
}

nlohmann::json to_json(const RefinementSweep& sweep)
{
    auto levels = nlohmann::json::array();
    for (const auto& lv : sweep.levels) {
        levels.push_back({{"nx", lv.nx},
                          {"nt", lv.nt},
                          {"tree_steps", lv.tree_steps},
                          {"value", lv.value},
                          {"tree_value", lv.tree_value},
                          {"tree_discrepancy", lv.tree_discrepancy}});
    }
    return {{"levels", levels},
            {"self_convergence_ratios", sweep.self_convergence_ratios},
            {"discrepancies_decreasing", sweep.discrepancies_decreasing}};
}

} // namespace bubblelab
