#include "bubblelab/priors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "bubblelab/error.hpp"

namespace bubblelab {

namespace {

constexpr double kTimeTol = 1e-12;

std::string format_rate(double rate)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", rate);
    return buf;
}

std::vector<double> linspace_rates(const VolatilityDomain& domain, int n)
{
    std::vector<double> rates(static_cast<std::size_t>(n));
    if (n == 1) {
        rates[0] = domain.lower;
        return rates;
    }
    for (int i = 0; i < n; ++i) {
        rates[static_cast<std::size_t>(i)] =
            domain.lower + (domain.upper - domain.lower) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    rates.back() = domain.upper;
    return rates;
}

void check_grid_args(const VolatilityDomain& domain, int grid_points, double horizon)
{
    domain.validate();
    require(std::isfinite(horizon) && horizon > 0.0, "horizon must be finite and > 0");
    if (domain.lower < domain.upper) {
        require(grid_points >= 2, "grid_points must be >= 2 when lower < upper");
    } else {
        require(grid_points >= 1, "grid_points must be >= 1");
    }
}

bool rate_in(const std::vector<double>& grid, double rate)
{
    return std::any_of(grid.begin(), grid.end(), [rate](double g) { return g == rate; });
}

} // namespace

void VolatilityDomain::validate() const
{
    require(std::isfinite(lower) && std::isfinite(upper), "volatility bounds must be finite");
    require(lower >= 0.0, "volatility lower bound must be >= 0");
    require(lower <= upper, "volatility bounds must satisfy lower <= upper");
    require(dimension >= 1, "dimension must be >= 1");
}

Schedule::Schedule(std::vector<SchedulePiece> pieces) : pieces_(std::move(pieces))
{
    require(!pieces_.empty(), "schedule needs at least one piece");
    require(pieces_.front().start == 0.0, "schedule must start at time 0");
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
        const auto& p = pieces_[i];
        require(std::isfinite(p.start) && std::isfinite(p.end) && p.end > p.start,
                "schedule pieces must have positive length");
        require(std::isfinite(p.rate) && p.rate >= 0.0, "schedule rates must be finite and >= 0");
        if (i > 0) {
            require(pieces_[i - 1].end == p.start, "schedule pieces must be contiguous");
        }
    }
}

Schedule Schedule::constant(double rate, double horizon)
{
    return Schedule({SchedulePiece{0.0, horizon, rate}});
}

double Schedule::rate_at(double t) const
{
    for (const auto& p : pieces_) {
        if (t <= p.end) {
            return p.rate;
        }
    }
    return pieces_.back().rate;
}

double Schedule::integrated(double from, double to) const
{
    double total = 0.0;
    for (const auto& p : pieces_) {
        const double lo = std::max(from, p.start);
        const double hi = std::min(to, p.end);
        if (hi > lo) {
            total += p.rate * (hi - lo);
        }
    }
    return total;
}

double Schedule::integrated_over_remaining(double from, double to, double maturity) const
{
    double total = 0.0;
    for (const auto& p : pieces_) {
        const double lo = std::max(from, p.start);
        const double hi = std::min(to, p.end);
        if (hi > lo && p.rate > 0.0) {
            total += p.rate * std::log((maturity - lo) / (maturity - hi));
        }
    }
    return total;
}

bool Schedule::agrees_on(const Schedule& other, double from, double to) const
{
    if (to <= from) {
        return true;
    }
    std::set<double> cuts{from, to};
    for (const auto* s : {this, &other}) {
        for (const auto& p : s->pieces_) {
            if (p.end > from && p.end < to) {
                cuts.insert(p.end);
            }
        }
    }
    double prev = from;
    for (auto it = std::next(cuts.begin()); it != cuts.end(); ++it) {
        const double mid = 0.5 * (prev + *it);
        if (rate_at(mid) != other.rate_at(mid)) {
            return false;
        }
        prev = *it;
    }
    return true;
}

Schedule Schedule::canonical() const
{
    std::vector<SchedulePiece> merged;
    for (const auto& p : pieces_) {
        if (!merged.empty() && merged.back().rate == p.rate) {
            merged.back().end = p.end;
        } else {
            merged.push_back(p);
        }
    }
    Schedule out;
    out.pieces_ = std::move(merged);
    return out;
}

double Schedule::min_rate() const
{
    double m = std::numeric_limits<double>::infinity();
    for (const auto& p : pieces_) {
        m = std::min(m, p.rate);
    }
    return m;
}

double Schedule::max_rate() const
{
    double m = 0.0;
    for (const auto& p : pieces_) {
        m = std::max(m, p.rate);
    }
    return m;
}

std::string to_string(FamilyKind kind)
{
    switch (kind) {
    case FamilyKind::ConstantGrid: return "constant-grid";
    case FamilyKind::PiecewiseGrid: return "piecewise-grid";
    case FamilyKind::RestrictedAfterT: return "restricted-after-t";
    case FamilyKind::Custom: return "custom";
    }
    return "custom";
}

FamilyKind family_kind_from_string(const std::string& text)
{
    if (text == "constant-grid") return FamilyKind::ConstantGrid;
    if (text == "piecewise-grid") return FamilyKind::PiecewiseGrid;
    if (text == "restricted-after-t") return FamilyKind::RestrictedAfterT;
    if (text == "custom") return FamilyKind::Custom;
    throw InvalidArgument("unknown family kind '" + text + "'");
}

const Prior& PriorFamily::member(const std::string& label) const
{
    for (const auto& m : members) {
        if (m.label == label) {
            return m;
        }
    }
    throw InvalidArgument("no family member labelled '" + label + "'");
}

void PriorFamily::validate() const
{
    domain.validate();
    require(!members.empty(), "prior family must have at least one member");
    const double horizon = members.front().horizon();
    std::set<std::string> labels;
    for (const auto& m : members) {
        require(m.horizon() == horizon, "family members must share the same horizon");
        require(m.dimension == domain.dimension, "family members must share the domain dimension");
        require(labels.insert(m.label).second, "duplicate member label '" + m.label + "'");
        for (const auto& p : m.schedule.pieces()) {
            require(domain.contains(p.rate), "member '" + m.label + "' has a rate outside the volatility domain");
        }
    }
    if (kind == FamilyKind::ConstantGrid) {
        bool has_lower = false;
        bool has_upper = false;
        for (const auto& m : members) {
            require(m.schedule.pieces().size() == 1, "constant-grid members must be one-piece schedules");
            has_lower = has_lower || m.schedule.pieces().front().rate == domain.lower;
            has_upper = has_upper || m.schedule.pieces().front().rate == domain.upper;
        }
        require(has_lower && has_upper, "constant-grid family must include both domain endpoints");
    }
}

PriorFamily make_constant_family(const VolatilityDomain& domain, int grid_points, double horizon)
{
    check_grid_args(domain, grid_points, horizon);
    PriorFamily family;
    family.domain = domain;
    family.kind = FamilyKind::ConstantGrid;
    family.rate_grid = domain.lower == domain.upper ? std::vector<double>{domain.lower}
                                                    : linspace_rates(domain, grid_points);
    for (double rate : family.rate_grid) {
        family.members.push_back(Prior{"const:" + format_rate(rate), Schedule::constant(rate, horizon),
                                       domain.dimension});
    }
    family.validate();
    return family;
}

PriorFamily make_piecewise_family(const VolatilityDomain& domain, const std::vector<double>& breakpoints,
                                  int grid_points, double horizon)
{
    check_grid_args(domain, grid_points, horizon);
    std::vector<double> cuts{0.0};
    for (double b : breakpoints) {
        require(b > cuts.back() && b < horizon, "breakpoints must be increasing and inside (0, horizon)");
        cuts.push_back(b);
    }
    cuts.push_back(horizon);

    PriorFamily family;
    family.domain = domain;
    family.kind = FamilyKind::PiecewiseGrid;
    family.breakpoints = breakpoints;
    family.rate_grid = domain.lower == domain.upper ? std::vector<double>{domain.lower}
                                                    : linspace_rates(domain, grid_points);
    const std::size_t n_pieces = cuts.size() - 1;
    const std::size_t n_rates = family.rate_grid.size();
    std::vector<std::size_t> digits(n_pieces, 0);
    while (true) {
        std::vector<SchedulePiece> pieces;
        std::string label = "pw:";
        for (std::size_t k = 0; k < n_pieces; ++k) {
            const double rate = family.rate_grid[digits[k]];
            pieces.push_back({cuts[k], cuts[k + 1], rate});
            label += (k ? "," : "") + format_rate(rate);
        }
        family.members.push_back(Prior{label, Schedule(std::move(pieces)), domain.dimension});
        std::size_t k = n_pieces;
        while (k > 0 && ++digits[k - 1] == n_rates) {
            digits[k - 1] = 0;
            --k;
        }
        if (k == 0) {
            break;
        }
    }
    family.validate();
    return family;
}

PriorFamily make_restricted_family(const VolatilityDomain& domain, double fixed_tail_rate, double switch_time,
                                   int grid_points, double horizon)
{
    check_grid_args(domain, grid_points, horizon);
    require(switch_time > 0.0 && switch_time < horizon, "switch_time must lie in (0, horizon)");
    require(domain.contains(fixed_tail_rate), "fixed_tail_rate must lie in the volatility domain");

    PriorFamily family;
    family.domain = domain;
    family.kind = FamilyKind::RestrictedAfterT;
    family.switch_time = switch_time;
    family.tail_rate = fixed_tail_rate;
    family.rate_grid = domain.lower == domain.upper ? std::vector<double>{domain.lower}
                                                    : linspace_rates(domain, grid_points);
    for (double rate : family.rate_grid) {
        Schedule s({{0.0, switch_time, rate}, {switch_time, horizon, fixed_tail_rate}});
        family.members.push_back(
            Prior{"restricted:" + format_rate(rate) + "|" + format_rate(fixed_tail_rate), std::move(s),
                  domain.dimension});
    }
    family.validate();
    return family;
}

PriorFamily make_custom_family(const VolatilityDomain& domain, std::vector<Prior> members)
{
    PriorFamily family;
    family.domain = domain;
    family.kind = FamilyKind::Custom;
    family.members = std::move(members);
    family.validate();
    return family;
}

bool PathEvent::holds(double value_at_split) const
{
    switch (kind) {
    case Kind::Always: return true;
    case Kind::Never: return false;
    case Kind::AtLeast: return value_at_split >= threshold;
    case Kind::Below: return value_at_split < threshold;
    }
    return false;
}

std::string PastedPrior::label() const
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", split_time);
    return "paste(" + base.label + "," + branch_one.label + "," + branch_two.label + "@" + buf + ")";
}

std::vector<Schedule> PastedPrior::realized_schedules() const
{
    switch (event.kind) {
    case PathEvent::Kind::Always: return {branch_one.schedule};
    case PathEvent::Kind::Never: return {branch_two.schedule};
    default: break;
    }
    if (branch_one.schedule == branch_two.schedule) {
        return {branch_one.schedule};
    }
    return {branch_one.schedule, branch_two.schedule};
}

PastedPrior paste(const Prior& base, const Prior& branch_one, const Prior& branch_two, double split_time,
                  const PathEvent& event)
{
    require(base.dimension == branch_one.dimension && base.dimension == branch_two.dimension,
            "pasted priors must share the dimension");
    require(base.horizon() == branch_one.horizon() && base.horizon() == branch_two.horizon(),
            "pasted priors must share the horizon");
    require(split_time >= 0.0 && split_time <= base.horizon(), "split_time must lie in [0, horizon]");
    require(branch_one.schedule.agrees_on(base.schedule, 0.0, split_time),
            "branch_one differs from base before the split time");
    require(branch_two.schedule.agrees_on(base.schedule, 0.0, split_time),
            "branch_two differs from base before the split time");
    return PastedPrior{base, branch_one, branch_two, split_time, event};
}

bool family_represents(const PriorFamily& family, const Schedule& schedule)
{
    if (std::abs(schedule.horizon() - family.horizon()) > kTimeTol) {
        return false;
    }
    const Schedule canon = schedule.canonical();
    switch (family.kind) {
    case FamilyKind::ConstantGrid:
        return canon.pieces().size() == 1 && rate_in(family.rate_grid, canon.pieces().front().rate);
    case FamilyKind::PiecewiseGrid: {
        std::vector<double> cuts{0.0};
        cuts.insert(cuts.end(), family.breakpoints.begin(), family.breakpoints.end());
        cuts.push_back(family.horizon());
        for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
            const double rate = canon.rate_at(0.5 * (cuts[k] + cuts[k + 1]));
            if (!rate_in(family.rate_grid, rate) ||
                !canon.agrees_on(Schedule::constant(rate, family.horizon()), cuts[k], cuts[k + 1])) {
                return false;
            }
        }
        return true;
    }
    case FamilyKind::RestrictedAfterT: {
        const double head = canon.rate_at(0.5 * family.switch_time);
        return rate_in(family.rate_grid, head) &&
               canon.agrees_on(Schedule::constant(head, family.horizon()), 0.0, family.switch_time) &&
               canon.agrees_on(Schedule::constant(family.tail_rate, family.horizon()), family.switch_time,
                               family.horizon());
    }
    case FamilyKind::Custom:
        return std::any_of(family.members.begin(), family.members.end(),
                           [&](const Prior& m) { return m.schedule == canon; });
    }
    return false;
}

bool family_closed_under_pasting(const PriorFamily& family, const PastedPrior& pasted)
{
    const auto schedules = pasted.realized_schedules();
    return std::all_of(schedules.begin(), schedules.end(),
                       [&](const Schedule& s) { return family_represents(family, s); });
}

std::vector<std::size_t> agreeing_members(const PriorFamily& family, const Schedule& schedule, double t)
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < family.members.size(); ++i) {
        if (family.members[i].schedule.agrees_on(schedule, 0.0, t)) {
            out.push_back(i);
        }
    }
    return out;
}

// --- JSON -------------------------------------------------------------------

void to_json(nlohmann::json& j, const VolatilityDomain& d)
{
    j = {{"lower", d.lower}, {"upper", d.upper}, {"dimension", d.dimension}};
}

void from_json(const nlohmann::json& j, VolatilityDomain& d)
{
    d.lower = j.at("lower").get<double>();
    d.upper = j.at("upper").get<double>();
    d.dimension = j.value("dimension", 1);
    d.validate();
}

void to_json(nlohmann::json& j, const Prior& p)
{
    auto rows = nlohmann::json::array();
    for (const auto& piece : p.schedule.pieces()) {
        rows.push_back({piece.start, piece.end, piece.rate});
    }
    j = {{"label", p.label}, {"dimension", p.dimension}, {"horizon", p.horizon()}, {"schedule", rows}};
}

void from_json(const nlohmann::json& j, Prior& p)
{
    p.label = j.at("label").get<std::string>();
    p.dimension = j.value("dimension", 1);
    std::vector<SchedulePiece> pieces;
    for (const auto& row : j.at("schedule")) {
        require(row.is_array() && row.size() == 3, "schedule rows must be [t0, t1, rate]");
        pieces.push_back({row[0].get<double>(), row[1].get<double>(), row[2].get<double>()});
    }
    p.schedule = Schedule(std::move(pieces));
    if (j.contains("horizon")) {
        require(std::abs(j.at("horizon").get<double>() - p.horizon()) <= kTimeTol,
                "prior horizon does not match its schedule");
    }
}

void to_json(nlohmann::json& j, const PriorFamily& f)
{
    j = {{"domain", f.domain}, {"family_kind", to_string(f.kind)}, {"members", f.members}};
    if (!f.rate_grid.empty()) j["rate_grid"] = f.rate_grid;
    if (f.kind == FamilyKind::PiecewiseGrid) j["breakpoints"] = f.breakpoints;
    if (f.kind == FamilyKind::RestrictedAfterT) {
        j["switch_time"] = f.switch_time;
        j["tail_rate"] = f.tail_rate;
    }
}

void from_json(const nlohmann::json& j, PriorFamily& f)
{
    f.domain = j.at("domain").get<VolatilityDomain>();
    f.kind = family_kind_from_string(j.value("family_kind", std::string("custom")));
    f.members = j.at("members").get<std::vector<Prior>>();
    f.rate_grid = j.value("rate_grid", std::vector<double>{});
    f.breakpoints = j.value("breakpoints", std::vector<double>{});
    f.switch_time = j.value("switch_time", 0.0);
    f.tail_rate = j.value("tail_rate", 0.0);
    f.validate();
}

void to_json(nlohmann::json& j, const PathEvent& e)
{
    static const char* names[] = {"always", "never", "at-least", "below"};
    j = {{"kind", names[static_cast<int>(e.kind)]}, {"threshold", e.threshold}};
}

void from_json(const nlohmann::json& j, PathEvent& e)
{
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "always") e.kind = PathEvent::Kind::Always;
    else if (kind == "never") e.kind = PathEvent::Kind::Never;
    else if (kind == "at-least") e.kind = PathEvent::Kind::AtLeast;
    else if (kind == "below") e.kind = PathEvent::Kind::Below;
    else throw InvalidArgument("unknown event kind '" + kind + "'");
    e.threshold = j.value("threshold", 0.0);
}

nlohmann::json pasted_to_json(const PastedPrior& p)
{
    return {{"base", p.base.label},
            {"branch_one", p.branch_one.label},
            {"branch_two", p.branch_two.label},
            {"split_time", p.split_time},
            {"event", p.event}};
}

PastedPrior pasted_from_json(const nlohmann::json& j, const PriorFamily& family)
{
    return paste(family.member(j.at("base").get<std::string>()),
                 family.member(j.at("branch_one").get<std::string>()),
                 family.member(j.at("branch_two").get<std::string>()), j.at("split_time").get<double>(),
                 j.at("event").get<PathEvent>());
}

} // namespace bubblelab
