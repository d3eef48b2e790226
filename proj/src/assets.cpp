#include "bubblelab/assets.hpp"

#include <algorithm>
#include <cmath>

#include "bubblelab/error.hpp"

namespace bubblelab {

namespace {

double norm3(std::span<const double> x, const std::array<double, 3>& shift)
{
    const double a = shift[0] + x[0];
    const double b = shift[1] + x[1];
    const double c = shift[2] + x[2];
    return std::sqrt(a * a + b * b + c * c);
}

// E[1 / |y + W|] for W ~ N(0, V I_3), |y| = r.
double inverse_radius_mean(double r, double variance)
{
    if (variance <= 0.0) {
        return 1.0 / r;
    }
    return (2.0 * standard_normal_cdf(r / std::sqrt(variance)) - 1.0) / r;
}

} // namespace

double standard_normal_cdf(double x)
{
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

std::string to_string(AssetKind kind)
{
    switch (kind) {
    case AssetKind::ExplodingVol: return "exploding-vol";
    case AssetKind::InverseBessel: return "inverse-bessel";
    case AssetKind::FiatMoney: return "fiat-money";
    case AssetKind::CustomSde: return "custom-sde";
    }
    return "custom-sde";
}

AssetKind asset_kind_from_string(const std::string& text)
{
    if (text == "exploding-vol") return AssetKind::ExplodingVol;
    if (text == "inverse-bessel") return AssetKind::InverseBessel;
    if (text == "fiat-money") return AssetKind::FiatMoney;
    if (text == "custom-sde") return AssetKind::CustomSde;
    throw InvalidArgument("unknown asset kind '" + text + "'");
}

AssetSpec AssetSpec::exploding_vol(double s, double maturity, double epsilon_fraction)
{
    AssetSpec a;
    a.kind = AssetKind::ExplodingVol;
    a.initial_value = s;
    a.maturity = MaturitySpec::at(maturity);
    a.params["epsilon"] = epsilon_fraction;
    a.validate();
    return a;
}

AssetSpec AssetSpec::inverse_bessel(std::array<double, 3> x0, MaturitySpec maturity)
{
    AssetSpec a;
    a.kind = AssetKind::InverseBessel;
    a.x0 = x0;
    a.maturity = maturity;
    a.initial_value = a.start_value();
    a.validate();
    return a;
}

AssetSpec AssetSpec::fiat_money()
{
    AssetSpec a;
    a.kind = AssetKind::FiatMoney;
    a.initial_value = 1.0;
    a.maturity = MaturitySpec::never();
    return a;
}

AssetSpec AssetSpec::custom_sde(double s, double vol_scale, double exponent, MaturitySpec maturity)
{
    AssetSpec a;
    a.kind = AssetKind::CustomSde;
    a.initial_value = s;
    a.maturity = maturity;
    a.params["vol_scale"] = vol_scale;
    a.params["exponent"] = exponent;
    a.validate();
    return a;
}

double AssetSpec::param(const std::string& name, double fallback) const
{
    const auto it = params.find(name);
    return it == params.end() ? fallback : it->second;
}

double AssetSpec::start_value() const
{
    if (kind == AssetKind::InverseBessel) {
        return 1.0 / std::sqrt(x0[0] * x0[0] + x0[1] * x0[1] + x0[2] * x0[2]);
    }
    if (kind == AssetKind::FiatMoney) {
        return 1.0;
    }
    return initial_value;
}

void AssetSpec::validate() const
{
    if (maturity.finite()) {
        require(std::isfinite(maturity.value) && maturity.value > 0.0, "maturity must be > 0");
    }
    switch (kind) {
    case AssetKind::ExplodingVol: {
        require(maturity.finite(), "exploding-vol requires a finite maturity");
        require(std::isfinite(initial_value) && initial_value > 0.0, "initial_value must be > 0");
        const double eps = param("epsilon", 1e-4);
        require(eps > 0.0 && eps < 1.0, "exploding-vol epsilon must lie in (0, 1)");
        break;
    }
    case AssetKind::InverseBessel: {
        const double r2 = x0[0] * x0[0] + x0[1] * x0[1] + x0[2] * x0[2];
        require(std::isfinite(r2) && r2 > 0.0, "inverse-bessel start point must satisfy |x0| > 0");
        break;
    }
    case AssetKind::FiatMoney:
        require(!maturity.finite(), "fiat money never matures");
        break;
    case AssetKind::CustomSde:
        require(std::isfinite(initial_value) && initial_value > 0.0, "initial_value must be > 0");
        require(param("vol_scale", 1.0) >= 0.0, "custom-sde vol_scale must be >= 0");
        require(param("exponent", 1.0) >= 1.0, "custom-sde exponent must be >= 1");
        break;
    }
}

double AssetSpec::simulation_end(double horizon) const
{
    if (kind == AssetKind::ExplodingVol) {
        const double T = maturity.value;
        return std::min(horizon, T - param("epsilon", 1e-4) * T);
    }
    if (maturity.finite()) {
        return std::min(horizon, maturity.value);
    }
    return horizon;
}

std::vector<double> asset_value_on_path(const AssetSpec& spec, const PathView& path)
{
    const TimeGrid& grid = path.grid();
    const auto n = grid.size();
    std::vector<double> out(n);
    switch (spec.kind) {
    case AssetKind::FiatMoney:
        std::fill(out.begin(), out.end(), 1.0);
        return out;
    case AssetKind::InverseBessel:
        require(path.dimension() == 3, "inverse-bessel needs a three dimensional canonical process");
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = 1.0 / norm3(path.point(i), spec.x0);
        }
        break;
    case AssetKind::ExplodingVol: {
        const double T = spec.maturity.value;
        require(grid.horizon() < T, "exploding-vol paths must stop strictly before maturity");
        const Schedule& schedule = path.schedule();
        double log_s = std::log(spec.initial_value);
        out[0] = spec.initial_value;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double variance = schedule.integrated(grid[i], grid[i + 1]);
            const double weighted = schedule.integrated_over_remaining(grid[i], grid[i + 1], T);
            const double db = path.value(i + 1) - path.value(i);
            // \int phi dB over the step is Gaussian with variance `weighted`
            const double stoch = variance > 0.0 ? db * std::sqrt(weighted / variance) : 0.0;
            log_s += stoch - 0.5 * weighted;
            out[i + 1] = std::exp(log_s);
        }
        break;
    }
    case AssetKind::CustomSde: {
        const double c = spec.param("vol_scale", 1.0);
        const double p = spec.param("exponent", 1.0);
        const Schedule& schedule = path.schedule();
        double log_s = std::log(spec.initial_value);
        out[0] = spec.initial_value;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double variance = schedule.integrated(grid[i], grid[i + 1]);
            const double db = path.value(i + 1) - path.value(i);
            const double local = p == 1.0 ? c : c * std::pow(out[i], p - 1.0);
            log_s += local * db - 0.5 * local * local * variance;
            out[i + 1] = std::exp(log_s);
        }
        break;
    }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!(std::isfinite(out[i]) && out[i] > 0.0)) {
            throw NumericalFailure(to_string(spec.kind) + ": non-positive or non-finite value at t=" +
                                   format_double(grid[i]));
        }
    }
    return out;
}

std::optional<double> analytic_mean(const AssetSpec& spec, const Prior& prior, double t)
{
    switch (spec.kind) {
    case AssetKind::ExplodingVol:
        return t < spec.maturity.value ? spec.initial_value : 0.0;
    case AssetKind::InverseBessel: {
        const double r0 = 1.0 / spec.start_value();
        return inverse_radius_mean(r0, prior.schedule.integrated(0.0, t));
    }
    case AssetKind::FiatMoney:
        return 1.0;
    case AssetKind::CustomSde:
        return std::nullopt;
    }
    return std::nullopt;
}

double origin_inverse_square_mean(double rate, double t)
{
    require(rate > 0.0 && t > 0.0, "origin second moment needs rate > 0 and t > 0");
    return 1.0 / (rate * t);
}

std::optional<double> conditional_fundamental(const AssetSpec& spec, const Schedule& schedule, double t,
                                              std::span<const double> canonical_state)
{
    if (!spec.maturity.finite()) {
        return 0.0;   // S_tau 1{tau < inf} vanishes identically
    }
    const double T = spec.maturity.value;
    switch (spec.kind) {
    case AssetKind::ExplodingVol:
        return 0.0;
    case AssetKind::InverseBessel: {
        const double r = norm3(canonical_state, spec.x0);
        return inverse_radius_mean(r, t < T ? schedule.integrated(t, T) : 0.0);
    }
    case AssetKind::FiatMoney:
        return 0.0;
    case AssetKind::CustomSde:
        return std::nullopt;
    }
    return std::nullopt;
}

void to_json(nlohmann::json& j, const AssetSpec& a)
{
    j = {{"kind", to_string(a.kind)}};
    if (a.kind == AssetKind::InverseBessel) {
        j["x0"] = a.x0;
    } else {
        j["initial_value"] = a.initial_value;
    }
    j["maturity"] = a.maturity.finite() ? nlohmann::json(a.maturity.value) : nlohmann::json("never");
    j["params"] = a.params;
}

void from_json(const nlohmann::json& j, AssetSpec& a)
{
    a = AssetSpec{};
    a.kind = asset_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("x0")) {
        a.x0 = j.at("x0").get<std::array<double, 3>>();
    }
    a.initial_value = j.value("initial_value", a.kind == AssetKind::InverseBessel ? 0.0 : 1.0);
    const auto& m = j.contains("maturity") ? j.at("maturity") : nlohmann::json("never");
    if (m.is_string()) {
        require(m.get<std::string>() == "never", "maturity must be a number or \"never\"");
        a.maturity = MaturitySpec::never();
    } else {
        a.maturity = MaturitySpec::at(m.get<double>());
    }
    if (j.contains("params")) {
        a.params = j.at("params").get<std::map<std::string, double>>();
    }
    if (a.kind == AssetKind::InverseBessel) {
        a.initial_value = a.start_value();
    }
    a.validate();
}

} // namespace bubblelab
