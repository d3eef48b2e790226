#pragma once

// Risky assets written as functionals of the canonical process, together with
// the closed forms used as oracles.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bubblelab/mc_engine.hpp"
#include "bubblelab/priors.hpp"

namespace bubblelab {

enum class AssetKind {
    ExplodingVol,    // S_t = s + \int_0^t S_u / sqrt(T - u) dB_u, S_T = 0
    InverseBessel,   // S_t = 1 / |x0 + B_t| in three dimensions
    FiatMoney,       // S_t = 1, never matures
    CustomSde,       // dS = c S^p dB, p >= 1
};

std::string to_string(AssetKind kind);
AssetKind asset_kind_from_string(const std::string& text);

struct MaturitySpec {
    enum class Kind { FixedTime, Never };
    Kind kind = Kind::FixedTime;
    double value = 1.0;

    bool finite() const { return kind == Kind::FixedTime; }
    static MaturitySpec at(double t) { return {Kind::FixedTime, t}; }
    static MaturitySpec never() { return {Kind::Never, 0.0}; }
};

struct AssetSpec {
    AssetKind kind = AssetKind::FiatMoney;
    double initial_value = 1.0;
    std::array<double, 3> x0{1.0, 0.0, 0.0};
    MaturitySpec maturity = MaturitySpec::never();
    // exploding-vol: "epsilon" (fraction of T kept away from maturity)
    // custom-sde: "vol_scale" c, "exponent" p
    std::map<std::string, double> params;

    static AssetSpec exploding_vol(double s, double maturity, double epsilon_fraction = 1e-4);
    static AssetSpec inverse_bessel(std::array<double, 3> x0, MaturitySpec maturity);
    static AssetSpec fiat_money();
    static AssetSpec custom_sde(double s, double vol_scale, double exponent, MaturitySpec maturity);

    void validate() const;
    int required_dimension() const { return kind == AssetKind::InverseBessel ? 3 : 1; }
    double start_value() const;
    double param(const std::string& name, double fallback) const;
    // Last time a path may be simulated to (T - eps for exploding-vol).
    double simulation_end(double horizon) const;
};

// S evaluated at every grid time of the path. Throws NumericalFailure when a
// value is non-positive or non-finite.
std::vector<double> asset_value_on_path(const AssetSpec& spec, const PathView& path);

// Mean of S_t under the prior, when a closed form is known. Uses the prior's
// integrated variance, so piecewise schedules are accepted as well.
std::optional<double> analytic_mean(const AssetSpec& spec, const Prior& prior, double t);

// E[1 / |B_t|^2] for the origin-started three dimensional process at rate a.
double origin_inverse_square_mean(double rate, double t);

// E_{Q'}[payoff | F_t] along a path, where Q' follows `schedule` after t and
// the maturity payoff is S_tau 1{tau < inf}. Returns nullopt when no closed
// form exists for the asset.
std::optional<double> conditional_fundamental(const AssetSpec& spec, const Schedule& schedule, double t,
                                              std::span<const double> canonical_state);

double standard_normal_cdf(double x);

void to_json(nlohmann::json& j, const AssetSpec& a);
void from_json(const nlohmann::json& j, AssetSpec& a);

} // namespace bubblelab
