#include "bubblelab/bubble_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "bubblelab/bsb_solver.hpp"
#include "bubblelab/error.hpp"
#include "bubblelab/tree_oracle.hpp"

namespace bubblelab {

namespace {

constexpr double kExactTol = 1e-12;
constexpr double kTreeTol = 1e-10;
constexpr double kPdeTol = 1e-6;
const std::vector<double> kQuantileEpsilons{1e-1, 1e-2, 1e-3, 1e-4};

Estimate exact(double v) { return {v, 0.0, 0}; }

double scale_of(const AssetSpec& a) { return std::max(1.0, std::abs(a.start_value())); }

bool finite_maturity(const AssetSpec& a) { return a.maturity.finite(); }

bool pde_compatible(const AssetSpec& a)
{
    return a.kind == AssetKind::FiatMoney || (a.kind == AssetKind::CustomSde && a.param("exponent", 1.0) == 1.0);
}

bool tree_compatible(const AssetSpec& a) { return pde_compatible(a) || a.kind == AssetKind::ExplodingVol; }

bool closed_form_compatible(const AssetSpec& a) { return a.kind != AssetKind::CustomSde; }

// Time up to which S* is evaluated: the maturity, or the horizon when the
// asset never matures.
double evaluation_end(const AssetSpec& asset, const PriorFamily& family, double horizon)
{
    double end = horizon;
    if (finite_maturity(asset)) {
        require(asset.maturity.value <= horizon + kExactTol, "horizon is shorter than the asset maturity");
        end = asset.maturity.value;
    }
    require(end <= family.horizon() + kExactTol, "family priors do not cover the evaluation horizon");
    return end;
}

std::vector<double> report_times(const Budget& budget, double end)
{
    std::vector<double> t = budget.report_times;
    if (t.empty()) {
        t = {0.0, 0.25 * end, 0.5 * end, 0.75 * end, end};
    }
    for (double v : t) {
        require(std::isfinite(v) && v >= 0.0 && v <= end + kExactTol, "report time outside [0, horizon]");
    }
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end(), [](double a, double b) { return std::abs(a - b) <= kExactTol; }),
            t.end());
    for (double& v : t) v = std::min(v, end);
    return t;
}

bool at_or_after_maturity(const AssetSpec& a, double t)
{
    return finite_maturity(a) && t >= a.maturity.value - kExactTol;
}

// E_Q[S_t] in closed form (S stopped at maturity).
std::optional<double> market_closed_form(const AssetSpec& a, const Prior& prior, double t)
{
    return analytic_mean(a, prior, at_or_after_maturity(a, t) ? a.maturity.value : t);
}

std::optional<double> payoff_closed_form(const AssetSpec& a, const Prior& prior)
{
    if (!finite_maturity(a)) {
        return 0.0;
    }
    return analytic_mean(a, prior, a.maturity.value);
}

double band_for(Source s, const Estimate& bubble, double scale)
{
    switch (s) {
    case Source::MonteCarlo: return 3.0 * bubble.std_error + kExactTol * scale;
    case Source::Analytic: return kExactTol * scale;
    case Source::Tree: return kTreeTol * scale;
    case Source::Pde: return 3.0 * bubble.std_error + kPdeTol * scale;
    }
    return 0.0;
}

CurvePoint make_point(const std::string& label, double t, Estimate market, Estimate fundamental, Estimate bubble,
                      Source source, double scale)
{
    CurvePoint p;
    p.prior_label = label;
    p.t = t;
    p.market = market;
    p.fundamental = fundamental;
    p.bubble = bubble;
    p.source = source;
    p.band = band_for(source, bubble, scale);
    return p;
}

// --- closed form --------------------------------------------------------------

std::vector<CurvePoint> closed_form_curve(const AssetSpec& a, const PriorFamily& family,
                                          const std::vector<double>& times)
{
    std::vector<CurvePoint> curve;
    for (const auto& member : family.members) {
        for (double t : times) {
            const auto market = market_closed_form(a, member, t);
            require(market.has_value(), "closed form unavailable");
            double fundamental = 0.0;
            if (at_or_after_maturity(a, t)) {
                fundamental = *market;
            } else if (finite_maturity(a) && a.kind != AssetKind::ExplodingVol) {
                const auto agree = agreeing_members(family, member.schedule, t);
                if (agree.size() != 1 && t > 0.0) {
                    throw IncompatibleMethod("closed form needs a single prior agreeing up to t = " +
                                             format_double(t) + "; use the mc method");
                }
                fundamental = -std::numeric_limits<double>::infinity();
                for (std::size_t j : agree) {
                    fundamental = std::max(fundamental, *payoff_closed_form(a, family.members[j]));
                }
            }
            curve.push_back(make_point(member.label, t, exact(*market), exact(fundamental),
                                       exact(*market - fundamental), Source::Analytic, scale_of(a)));
        }
    }
    return curve;
}

// --- Monte Carlo and PDE ----------------------------------------------------

struct SampledMember {
    std::vector<double> times;                 // sampled report/quantile times
    std::vector<std::vector<double>> market;   // per time, per path
    std::vector<std::vector<double>> fundamental;
};

TimeGrid sampling_grid(double end, std::size_t steps, const std::vector<double>& points)
{
    std::vector<double> inside;
    for (double t : points) {
        if (t > 0.0 && t < end - kExactTol) inside.push_back(t);
    }
    return TimeGrid::with_points(end, steps, inside);
}

// S* along a path given the canonical state at `t`.
using FundamentalOnPath = std::function<double(const Prior& member, double t, const PathView& path, std::size_t idx,
                                               double market_value)>;

SampledMember sample_member(const AssetSpec& a, const Prior& member, double end, const std::vector<double>& times,
                            const Budget& budget, const FundamentalOnPath& fundamental)
{
    const double sim_end = a.simulation_end(end);
    const TimeGrid grid = sampling_grid(sim_end, budget.n_steps, times);
    const PathBatch batch = simulate(member, grid, budget.n_paths, budget.seed, budget.workers);
    SampledMember out;
    std::vector<std::size_t> idx;
    for (double t : times) {
        if (t <= sim_end + kExactTol) {
            out.times.push_back(t);
            idx.push_back(grid.index_of(std::min(t, sim_end)));
        }
    }
    out.market.assign(out.times.size(), std::vector<double>(batch.n_paths));
    out.fundamental = out.market;
    for (std::size_t p = 0; p < batch.n_paths; ++p) {
        const PathView path = batch.path(p);
        const std::vector<double> s = asset_value_on_path(a, path);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            out.market[k][p] = s[idx[k]];
            if (fundamental) {
                out.fundamental[k][p] = fundamental(member, out.times[k], path, idx[k], s[idx[k]]);
            }
        }
    }
    return out;
}

std::vector<CurvePoint> sampled_curve_for(const AssetSpec& a, const Prior& member, const std::vector<double>& times,
                                          const SampledMember& sampled, Source source)
{
    std::vector<CurvePoint> curve;
    for (double t : times) {
        const auto it = std::find(sampled.times.begin(), sampled.times.end(), t);
        if (it == sampled.times.end()) {
            // past the simulated window: only the exploding-vol maturity, S_T = 0
            const double m = *market_closed_form(a, member, t);
            curve.push_back(make_point(member.label, t, exact(m), exact(m), exact(0.0), Source::Analytic, scale_of(a)));
            continue;
        }
        const auto k = static_cast<std::size_t>(it - sampled.times.begin());
        std::vector<double> beta(sampled.market[k].size());
        for (std::size_t p = 0; p < beta.size(); ++p) {
            beta[p] = sampled.market[k][p] - sampled.fundamental[k][p];
        }
        curve.push_back(make_point(member.label, t, estimate_values(sampled.market[k]),
                                   estimate_values(sampled.fundamental[k]), estimate_values(beta), source,
                                   scale_of(a)));
    }
    return curve;
}

FundamentalOnPath closed_form_fundamental(const AssetSpec& a, const PriorFamily& family)
{
    return [&a, &family](const Prior& member, double t, const PathView& path, std::size_t idx, double market) {
        if (at_or_after_maturity(a, t)) {
            return market;
        }
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t j : agreeing_members(family, member.schedule, t)) {
            const auto v = conditional_fundamental(a, family.members[j].schedule, t, path.point(idx));
            if (!v) {
                throw IncompatibleMethod("no conditional closed form for " + to_string(a.kind));
            }
            best = std::max(best, *v);
        }
        return best;
    };
}

std::vector<TerminalQuantile> terminal_quantiles(const AssetSpec& a, const Prior& member, const SampledMember& s)
{
    std::vector<TerminalQuantile> out;
    const double T = a.maturity.value;
    for (double eps : kQuantileEpsilons) {
        const double t = T * (1.0 - eps);
        const auto it = std::find_if(s.times.begin(), s.times.end(), [&](double v) { return std::abs(v - t) <= 1e-12; });
        if (it == s.times.end()) continue;
        const auto& samples = s.market[static_cast<std::size_t>(it - s.times.begin())];
        TerminalQuantile q;
        q.prior_label = member.label;
        q.epsilon = eps;
        q.t = t;
        q.median = quantile(samples, 0.5);
        q.q05 = quantile(samples, 0.05);
        q.q95 = quantile(samples, 0.95);
        q.mean = estimate_values(samples);
        out.push_back(q);
    }
    return out;
}

// --- tree shadow ----------------------------------------------------------------

struct Shadow {
    Lattice lattice;
    std::vector<std::vector<double>> rates;   // per level, deduplicated in first-seen order
    double dt = 0.0;
};

double shadow_scale(const AssetSpec& a, double t_mid)
{
    if (a.kind == AssetKind::ExplodingVol) {
        return 1.0 / (a.maturity.value - t_mid);   // log-variance rate 1/(T-u) per unit of d<B>
    }
    if (a.kind == AssetKind::FiatMoney) {
        return 0.0;
    }
    const double c = a.param("vol_scale", 1.0);
    return c * c;
}

Shadow build_shadow(const AssetSpec& a, const PriorFamily& family, double end, int steps)
{
    require(steps >= 1, "tree steps must be >= 1");
    Shadow sh;
    sh.dt = end / steps;
    sh.rates.resize(static_cast<std::size_t>(steps));
    for (int k = 0; k < steps; ++k) {
        const double t_mid = (k + 0.5) * sh.dt;
        for (const auto& m : family.members) {
            const double r = m.schedule.rate_at(t_mid) * shadow_scale(a, t_mid);
            auto& lv = sh.rates[static_cast<std::size_t>(k)];
            if (std::find(lv.begin(), lv.end(), r) == lv.end()) lv.push_back(r);
        }
    }
    LatticeSpec spec;
    spec.kind = LatticeSpec::Kind::Multiplicative;
    spec.x0 = a.start_value();
    spec.steps = steps;
    spec.dt = sh.dt;
    spec.rates_at = [&sh](int k) { return sh.rates[static_cast<std::size_t>(k)]; };
    const bool retired = a.kind == AssetKind::ExplodingVol || !finite_maturity(a);
    spec.payoff = [retired](double x) { return retired ? 0.0 : x; };
    sh.lattice = build_lattice(spec);
    return sh;
}

TreePrior shadow_selection(const AssetSpec& a, const Shadow& sh, const Prior& member)
{
    const TreeMarket& tree = sh.lattice.tree;
    TreePrior sel = uniform_selection(tree, 0);
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (tree.is_terminal(i)) continue;
        const int k = tree.node(i).level;
        const double t_mid = (k + 0.5) * sh.dt;
        const double r = member.schedule.rate_at(t_mid) * shadow_scale(a, t_mid);
        const auto& lv = sh.rates[static_cast<std::size_t>(k)];
        sel.selection[i] = static_cast<int>(std::find(lv.begin(), lv.end(), r) - lv.begin());
    }
    return sel;
}

std::vector<CurvePoint> tree_curve(const AssetSpec& a, const PriorFamily& family, double end,
                                   const std::vector<double>& times, int steps, std::vector<TreeShadowLevel>* levels)
{
    const Shadow sh = build_shadow(a, family, end, steps);
    const TreeMarket& tree = sh.lattice.tree;
    const DpResult dp = sublinear_dp(tree, sh.lattice.payoff);
    if (levels) {
        for (int k = 0; k <= tree.depth(); ++k) {
            TreeShadowLevel lv;
            lv.level = k;
            lv.t = k * sh.dt;
            bool first = true;
            for (std::size_t i : tree.level(k)) {
                const double b = tree.node(i).asset - dp.values[i];
                lv.min_bubble = first ? b : std::min(lv.min_bubble, b);
                lv.max_bubble = first ? b : std::max(lv.max_bubble, b);
                first = false;
            }
            levels->push_back(lv);
        }
    }
    std::vector<CurvePoint> curve;
    for (const auto& member : family.members) {
        const NodeValues reach = reach_probabilities(tree, shadow_selection(a, sh, member));
        for (double t : times) {
            const int k = std::clamp(static_cast<int>(std::lround(t / sh.dt)), 0, tree.depth());
            double market = 0.0;
            double fundamental = 0.0;
            for (std::size_t i : tree.level(k)) {
                const bool terminal = k == tree.depth() && finite_maturity(a);
                market += reach[i] * (terminal ? sh.lattice.payoff[i] : tree.node(i).asset);
                fundamental += reach[i] * dp.values[i];
            }
            curve.push_back(make_point(member.label, t, exact(market), exact(fundamental),
                                       exact(market - fundamental), Source::Tree, scale_of(a)));
        }
    }
    return curve;
}

// --- assembly -------------------------------------------------------------------

bool exceeds_band(const CurvePoint& p) { return p.bubble.mean > p.band; }

struct Evaluated {
    std::vector<CurvePoint> curve;
    std::vector<TerminalQuantile> quantiles;
    std::vector<TreeShadowLevel> shadow;
    std::vector<std::string> notes;
};

Evaluated evaluate(const AssetSpec& a, const PriorFamily& family, double end, const std::vector<double>& times,
                   Method method, const Budget& budget)
{
    Evaluated out;
    switch (method) {
    case Method::ClosedForm:
        out.curve = closed_form_curve(a, family, times);
        break;
    case Method::MonteCarlo: {
        std::vector<double> sample_times = times;
        const bool exploding = a.kind == AssetKind::ExplodingVol;
        if (exploding) {
            for (double eps : kQuantileEpsilons) {
                if (eps >= a.param("epsilon", 1e-4) - kExactTol) sample_times.push_back(a.maturity.value * (1.0 - eps));
            }
            std::sort(sample_times.begin(), sample_times.end());
        }
        const FundamentalOnPath f = closed_form_fundamental(a, family);
        for (const auto& member : family.members) {
            const SampledMember s = sample_member(a, member, end, sample_times, budget, f);
            auto part = sampled_curve_for(a, member, times, s, Source::MonteCarlo);
            out.curve.insert(out.curve.end(), part.begin(), part.end());
            if (exploding) {
                auto q = terminal_quantiles(a, member, s);
                out.quantiles.insert(out.quantiles.end(), q.begin(), q.end());
            }
        }
        if (exploding) {
            out.notes.push_back("S* = 0 in closed form (S_T = 0 quasi surely); Monte Carlo is used for the market "
                                "value and the quantiles of S near maturity");
        }
        break;
    }
    case Method::Pde: {
        double lo = std::numeric_limits<double>::infinity();
        double hi = 0.0;
        for (const auto& m : family.members) {
            lo = std::min(lo, m.schedule.min_rate());
            hi = std::max(hi, m.schedule.max_rate());
        }
        const double c = a.kind == AssetKind::CustomSde ? a.param("vol_scale", 1.0) : 0.0;
        PdeProblem problem;
        problem.generator = GeneratorKind::Lognormal;
        problem.a_low = c * c * lo;
        problem.a_high = c * c * hi;
        problem.horizon = end;
        problem.x_min = 0.0;
        problem.x_max = a.start_value() * std::exp(6.0 * std::sqrt(std::max(problem.a_high, 1e-12) * end));
        const bool matures = finite_maturity(a);
        problem.payoff = [matures](double x) { return matures ? x : 0.0; };
        problem.payoff_label = matures ? "S_T" : "0";
        const std::size_t nx = budget.pde_nx;
        const ValueSurface surface = solve(problem, nx, min_time_steps(problem, nx));
        const FundamentalOnPath f = [&surface, &problem, &a](const Prior&, double t, const PathView&, std::size_t,
                                                             double market) {
            if (at_or_after_maturity(a, t)) return market;
            const auto n = static_cast<std::size_t>(std::lround(t / surface.dt));
            return surface.interpolate(std::min(n, surface.nt()), std::clamp(market, problem.x_min, problem.x_max));
        };
        for (const auto& member : family.members) {
            const SampledMember s = sample_member(a, member, end, times, budget, f);
            auto part = sampled_curve_for(a, member, times, s, Source::Pde);
            out.curve.insert(out.curve.end(), part.begin(), part.end());
        }
        out.notes.push_back("S* from the lognormal BSB solver over rates [" + format_double(problem.a_low) + ", " +
                            format_double(problem.a_high) + "]");
        break;
    }
    case Method::Tree:
        out.curve = tree_curve(a, family, end, times, budget.tree_steps, &out.shadow);
        out.notes.push_back("tree shadow: recombining lattice with " + std::to_string(budget.tree_steps) +
                            " levels; values are exact on the lattice");
        break;
    }
    return out;
}

} // namespace

void HorizonSpec::validate() const
{
    require(std::isfinite(value) && value > 0.0, "horizon must be > 0");
}

std::string to_string(Method m)
{
    switch (m) {
    case Method::MonteCarlo: return "mc";
    case Method::Pde: return "pde";
    case Method::ClosedForm: return "closed-form";
    case Method::Tree: return "tree";
    }
    return "";
}

Method method_from_string(const std::string& text)
{
    if (text == "mc") return Method::MonteCarlo;
    if (text == "pde") return Method::Pde;
    if (text == "closed-form") return Method::ClosedForm;
    if (text == "tree") return Method::Tree;
    throw InvalidArgument("unknown method '" + text + "' (expected mc, pde, closed-form or tree)");
}

std::string to_string(Source s)
{
    switch (s) {
    case Source::Analytic: return "analytic";
    case Source::MonteCarlo: return "mc";
    case Source::Pde: return "pde";
    case Source::Tree: return "tree";
    }
    return "";
}

std::string to_string(Verdict v)
{
    switch (v) {
    case Verdict::TrueMartingale: return "true-martingale";
    case Verdict::StrictLocalMartingale: return "strict-local-martingale";
    case Verdict::Inconclusive: return "inconclusive";
    }
    return "";
}

void check_compatible(const AssetSpec& asset, const PriorFamily& family, Method method)
{
    asset.validate();
    family.validate();
    if (asset.required_dimension() != family.dimension()) {
        throw IncompatibleMethod(to_string(asset.kind) + " needs a " + std::to_string(asset.required_dimension()) +
                                 "-dimensional family");
    }
    const bool ok = method == Method::MonteCarlo ? asset.kind != AssetKind::CustomSde
                    : method == Method::Pde      ? pde_compatible(asset)
                    : method == Method::Tree     ? tree_compatible(asset)
                                                 : closed_form_compatible(asset);
    if (!ok) {
        throw IncompatibleMethod("method " + to_string(method) + " cannot evaluate S* for " + to_string(asset.kind));
    }
}

PriorClassification classify_prior(const AssetSpec& asset, const Prior& prior, const std::vector<double>& t_list,
                                   const Budget& budget, bool prefer_closed_form)
{
    asset.validate();
    require(!t_list.empty(), "classification needs at least one time");
    PriorClassification out;
    out.prior_label = prior.label;
    const double s0 = asset.start_value();
    const double end = finite_maturity(asset) ? asset.maturity.value : prior.horizon();
    const std::vector<double> times = report_times(Budget{.report_times = t_list}, end);

    std::vector<double> mc_times;
    for (double t : times) {
        const auto cf = market_closed_form(asset, prior, t);
        const bool past_window = t > asset.simulation_end(end) + kExactTol;
        if (cf && (prefer_closed_form || past_window)) {
            out.evidence.push_back({t, s0 - *cf, 0.0, true});
        } else {
            mc_times.push_back(t);
        }
    }
    if (!mc_times.empty()) {
        const SampledMember s = sample_member(asset, prior, end, mc_times, budget, nullptr);
        for (std::size_t k = 0; k < s.times.size(); ++k) {
            const Estimate e = estimate_values(s.market[k]);
            out.evidence.push_back({s.times[k], s0 - e.mean, e.std_error, false});
        }
        std::sort(out.evidence.begin(), out.evidence.end(),
                  [](const GapEvidence& x, const GapEvidence& y) { return x.t < y.t; });
    }
    out.analytic = mc_times.empty();

    const double tol = kExactTol * std::max(1.0, std::abs(s0));
    bool strict = false;
    bool flat = true;
    for (const auto& e : out.evidence) {
        const double band = 3.0 * e.std_error + tol;
        strict = strict || e.gap > band;
        flat = flat && std::abs(e.gap) <= band;
    }
    if (!out.analytic && budget.n_paths < budget.min_paths) {
        out.verdict = Verdict::Inconclusive;
    } else if (strict) {
        out.verdict = Verdict::StrictLocalMartingale;
    } else if (flat) {
        out.verdict = Verdict::TrueMartingale;
    } else {
        out.verdict = Verdict::Inconclusive;
    }
    return out;
}

BubbleReport analyze(const AssetSpec& asset, const PriorFamily& family, const HorizonSpec& horizon, Method method,
                     const Budget& budget)
{
    horizon.validate();
    check_compatible(asset, family, method);
    require(budget.n_paths >= 2 && budget.n_steps >= 1, "budget needs n_paths >= 2 and n_steps >= 1");

    BubbleReport report;
    report.asset = asset;
    report.family = family;
    report.horizon = horizon;
    report.method = method;

    const double end = evaluation_end(asset, family, horizon.value);
    const std::vector<double> times = report_times(budget, end);
    Evaluated ev = evaluate(asset, family, end, times, method, budget);
    report.curve = std::move(ev.curve);
    report.terminal_quantiles = std::move(ev.quantiles);
    report.tree_shadow = std::move(ev.shadow);
    report.notes = std::move(ev.notes);

    for (const auto& member : family.members) {
        report.per_prior.push_back(classify_prior(asset, member, times, budget, true));
    }
    report.robust_bubble = std::any_of(report.curve.begin(), report.curve.end(), exceeds_band);
    if (horizon.kind == HorizonSpec::Kind::InfiniteTruncated) {
        report.infinite = infinite_horizon_value(asset, family, horizon.value, budget);
    }
    return report;
}

BubbleReport restricted_family_bubble(const AssetSpec& asset, const VolatilityDomain& domain, double tail_rate,
                                      double switch_time, int grid_points, const Budget& budget)
{
    asset.validate();
    require(asset.kind == AssetKind::ExplodingVol, "restricted-family bubble is defined for the exploding-vol asset");
    require(tail_rate > 0.0, "tail rate must be > 0 so that the tail prior is strictly local");
    const double T = asset.maturity.value;
    require(switch_time > 0.0, "switch_time must be > 0");

    const bool empty_tail = switch_time >= T;
    const PriorFamily family = empty_tail ? make_constant_family(domain, grid_points, T)
                                          : make_restricted_family(domain, tail_rate, switch_time, grid_points, T);
    Budget b = budget;
    if (b.report_times.empty()) {
        b.report_times = {0.0, 0.25 * T, 0.5 * T, 0.75 * T, T};
        if (!empty_tail) {
            b.report_times.push_back(switch_time);
            b.report_times.push_back(0.5 * (switch_time + T));
        }
    }
    BubbleReport report = analyze(asset, family, HorizonSpec::finite(T), Method::ClosedForm, b);

    const int steps = std::max(2, budget.tree_steps);
    std::vector<TreeShadowLevel> levels;
    tree_curve(asset, family, T, {0.0}, steps, &levels);
    report.tree_shadow = levels;

    if (!empty_tail) {
        bool after = true;
        for (const auto& p : report.curve) {
            if (p.t > switch_time && p.t < T) after = after && exceeds_band(p);
        }
        for (const auto& lv : levels) {
            if (lv.t > switch_time && lv.level < static_cast<int>(levels.size()) - 1) after = after && lv.min_bubble > 0.0;
        }
        if (after) {
            report.bubble_interval = std::make_pair(switch_time, T);
        }
        report.notes.push_back("after t = " + format_double(switch_time) +
                               " a single tail prior remains: E[S_T | F_s] = 0 < S_s");
    } else {
        report.notes.push_back("switch time at the horizon: empty tail, full-uncertainty family");
    }
    return report;
}

InfiniteHorizonFragment infinite_horizon_value(const AssetSpec& asset, const PriorFamily& family, double t_max,
                                               const Budget& budget)
{
    asset.validate();
    family.validate();
    require(std::isfinite(t_max) && t_max > 0.0, "T_max must be > 0");
    require(t_max <= family.horizon() + kExactTol, "family priors do not cover T_max");

    InfiniteHorizonFragment out;
    out.t_max = t_max;
    const std::vector<double> times = report_times(budget, t_max);
    const double s0 = asset.start_value();
    const double tol = kExactTol * std::max(1.0, std::abs(s0));

    const Method method = closed_form_compatible(asset) ? Method::ClosedForm : Method::MonteCarlo;
    if (finite_maturity(asset)) {
        const double tau = asset.maturity.value;
        require(tau <= t_max + kExactTol, "maturity beyond T_max: the window never sees the payoff");
        out.reduced_to_finite = true;
        out.truncation_note = "maturity " + format_double(tau) + " <= T_max: 1{tau < inf} = 1 and the value "
                              "reduces to the finite-horizon analysis";
        std::vector<double> inner;
        for (double t : times) inner.push_back(std::min(t, tau));
        Budget b = budget;
        b.report_times = inner;
        const Evaluated ev = evaluate(asset, family, tau, report_times(b, tau), method, b);
        for (const auto& member : family.members) {
            for (double t : times) {
                const double tt = std::min(t, tau);
                const auto it = std::find_if(ev.curve.begin(), ev.curve.end(), [&](const CurvePoint& p) {
                    return p.prior_label == member.label && std::abs(p.t - tt) <= kExactTol;
                });
                require(it != ev.curve.end(), "missing curve point");
                InfiniteHorizonPoint pt;
                pt.prior_label = member.label;
                pt.t = t;
                pt.wealth = it->market;
                pt.fundamental = it->fundamental;
                pt.bubble = it->bubble;
                pt.fundamental_wealth = it->fundamental;   // S* before tau, S_tau after
                out.points.push_back(pt);
            }
        }
    } else {
        out.truncation_note = asset.kind == AssetKind::FiatMoney
                                  ? "fiat money never matures: S_tau 1{tau < inf} = 0, so S* = 0 exactly without truncation"
                                  : "tau = inf: the functional S_tau 1{tau < inf} vanishes; values reported on [0, T_max]";
        for (const auto& member : family.members) {
            std::vector<Estimate> wealth;
            const bool cf = std::all_of(times.begin(), times.end(),
                                        [&](double t) { return analytic_mean(asset, member, t).has_value(); });
            if (cf) {
                for (double t : times) wealth.push_back(exact(*analytic_mean(asset, member, t)));
            } else {
                const SampledMember s = sample_member(asset, member, t_max, times, budget, nullptr);
                for (const auto& m : s.market) wealth.push_back(estimate_values(m));
            }
            for (std::size_t k = 0; k < times.size(); ++k) {
                InfiniteHorizonPoint pt;
                pt.prior_label = member.label;
                pt.t = times[k];
                pt.wealth = wealth[k];
                pt.fundamental = exact(0.0);
                pt.bubble = wealth[k];
                pt.fundamental_wealth = exact(0.0);
                out.points.push_back(pt);
            }
        }
    }
    out.analytic = std::all_of(out.points.begin(), out.points.end(), [](const InfiniteHorizonPoint& p) {
        return p.wealth.std_error == 0.0 && p.wealth.n == 0;
    });
    out.symmetric_martingale = std::all_of(out.points.begin(), out.points.end(), [&](const InfiniteHorizonPoint& p) {
        return std::abs(p.wealth.mean - s0) <= 3.0 * p.wealth.std_error + tol;
    });
    return out;
}

bool bubble_nonnegative(const BubbleReport& report)
{
    return std::all_of(report.curve.begin(), report.curve.end(),
                       [](const CurvePoint& p) { return p.bubble.mean >= -(p.band + 1e-10); });
}

// --- serialization --------------------------------------------------------------

namespace {

nlohmann::json estimate_json(const Estimate& e)
{
    return {{"mean", e.mean}, {"stderr", e.std_error}, {"n", e.n}};
}

} // namespace

nlohmann::json to_json(const PriorClassification& c)
{
    auto ev = nlohmann::json::array();
    for (const auto& e : c.evidence) {
        ev.push_back({{"t", e.t}, {"gap", e.gap}, {"stderr", e.std_error}, {"analytic", e.analytic}});
    }
    return {{"prior_label", c.prior_label}, {"verdict", to_string(c.verdict)}, {"analytic", c.analytic},
            {"evidence", ev}};
}

nlohmann::json to_json(const InfiniteHorizonFragment& f)
{
    auto pts = nlohmann::json::array();
    for (const auto& p : f.points) {
        pts.push_back({{"prior_label", p.prior_label},
                       {"t", p.t},
                       {"fundamental", estimate_json(p.fundamental)},
                       {"bubble", estimate_json(p.bubble)},
                       {"wealth", estimate_json(p.wealth)},
                       {"fundamental_wealth", estimate_json(p.fundamental_wealth)}});
    }
    return {{"t_max", f.t_max},
            {"reduced_to_finite", f.reduced_to_finite},
            {"truncation_note", f.truncation_note},
            {"symmetric_martingale", f.symmetric_martingale},
            {"analytic", f.analytic},
            {"points", pts}};
}

nlohmann::json to_json(const BubbleReport& r)
{
    auto curve = nlohmann::json::array();
    for (const auto& p : r.curve) {
        curve.push_back({{"prior_label", p.prior_label},
                         {"t", p.t},
                         {"market", estimate_json(p.market)},
                         {"fundamental", estimate_json(p.fundamental)},
                         {"bubble", estimate_json(p.bubble)},
                         {"band", p.band},
                         {"source", to_string(p.source)}});
    }
    auto per_prior = nlohmann::json::array();
    for (const auto& c : r.per_prior) per_prior.push_back(to_json(c));
    auto quantiles = nlohmann::json::array();
    for (const auto& q : r.terminal_quantiles) {
        quantiles.push_back({{"prior_label", q.prior_label},
                             {"epsilon", q.epsilon},
                             {"t", q.t},
                             {"median", q.median},
                             {"q05", q.q05},
                             {"q95", q.q95},
                             {"mean", estimate_json(q.mean)}});
    }
    auto shadow = nlohmann::json::array();
    for (const auto& lv : r.tree_shadow) {
        shadow.push_back({{"level", lv.level}, {"t", lv.t}, {"min_bubble", lv.min_bubble}, {"max_bubble", lv.max_bubble}});
    }
    nlohmann::json family;
    to_json(family, r.family);
    nlohmann::json asset;
    to_json(asset, r.asset);
    nlohmann::json j = {{"asset", asset},
                        {"family", family},
                        {"horizon", {{"kind", r.horizon_kind()}, {"value", r.horizon.value}}},
                        {"method", to_string(r.method)},
                        {"robust_bubble", r.robust_bubble},
                        {"curve", curve},
                        {"per_prior", per_prior},
                        {"terminal_quantiles", quantiles},
                        {"tree_shadow", shadow},
                        {"notes", r.notes}};
    j["bubble_interval"] = r.bubble_interval ? nlohmann::json::array({r.bubble_interval->first, r.bubble_interval->second})
                                             : nlohmann::json(nullptr);
    j["infinite"] = r.infinite ? to_json(*r.infinite) : nlohmann::json(nullptr);
    return j;
}

void write_curve_csv(std::ostream& out, const BubbleReport& r)
{
    out << "prior_label,t,market,market_stderr,fundamental,fundamental_stderr,bubble,bubble_stderr,band,source\n";
    for (const auto& p : r.curve) {
        out << csv_field(p.prior_label) << ',' << format_double(p.t) << ',' << format_double(p.market.mean) << ','
            << format_double(p.market.std_error) << ',' << format_double(p.fundamental.mean) << ','
            << format_double(p.fundamental.std_error) << ',' << format_double(p.bubble.mean) << ','
            << format_double(p.bubble.std_error) << ',' << format_double(p.band) << ',' << to_string(p.source) << '\n';
    }
}

} // namespace bubblelab
