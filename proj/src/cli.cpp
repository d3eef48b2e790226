#include "bubblelab/cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "bubblelab/bsb_solver.hpp"
#include "bubblelab/error.hpp"
#include "bubblelab/tree_oracle.hpp"
#include "bubblelab/verification.hpp"

namespace bubblelab {

const char* const kToolVersion = "0.1.0";

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const std::string& where, const std::string& key)
{
    return where.empty() ? key : where + "." + key;
}

[[noreturn]] void field_error(const std::string& path, const std::string& message)
{
    throw ConfigError("field '" + path + "': " + message);
}

const json& require_object(const json& j, const std::string& where)
{
    if (!j.is_object()) {
        field_error(where.empty() ? "<root>" : where, "expected an object");
    }
    return j;
}

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> allowed)
{
    const std::set<std::string> names(allowed.begin(), allowed.end());
    for (const auto& item : j.items()) {
        if (!names.count(item.key())) {
            field_error(join(where, item.key()), "unknown key");
        }
    }
}

template <class T>
T convert(const json& value, const std::string& path)
{
    try {
        return value.get<T>();
    } catch (const json::exception& e) {
        field_error(path, std::string("wrong type (") + value.type_name() + ")");
    }
}

template <class T>
T required(const json& j, const std::string& where, const std::string& key)
{
    if (!j.contains(key)) {
        field_error(join(where, key), "missing");
    }
    return convert<T>(j.at(key), join(where, key));
}

template <class T>
T optional_field(const json& j, const std::string& where, const std::string& key, T fallback)
{
    if (!j.contains(key)) {
        return fallback;
    }
    return convert<T>(j.at(key), join(where, key));
}

std::size_t count_field(const json& j, const std::string& where, const std::string& key, std::size_t fallback)
{
    if (!j.contains(key)) {
        return fallback;
    }
    const json& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        field_error(join(where, key), "expected a non-negative integer");
    }
    return v.get<std::size_t>();
}

// Runs a module-level validation and reports its failure against `path`.
template <class F>
auto at_field(const std::string& path, F&& f) -> decltype(f())
{
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const InvalidArgument& e) {
        field_error(path, e.what());
    } catch (const json::exception& e) {
        field_error(path, e.what());
    }
}

std::string read_text(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string utc_now()
{
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Artifacts are rendered in memory first so nothing is written when a run
// fails part way.
struct PendingArtifact {
    std::string path;
    std::string bytes;
};

class ArtifactSet {
public:
    void add(std::string path, std::string bytes) { items_.push_back({std::move(path), std::move(bytes)}); }

    RunManifest write(const std::string& out_dir, const std::string& command, const std::string& config_hash,
                      const std::string& started) const
    {
        fs::create_directories(out_dir);
        RunManifest m;
        m.command = command;
        m.config_hash = config_hash;
        m.tool_version = kToolVersion;
        m.started_at = started;
        for (const auto& item : items_) {
            const fs::path p = fs::path(out_dir) / item.path;
            if (p.has_parent_path()) {
                fs::create_directories(p.parent_path());
            }
            std::ofstream f(p, std::ios::binary);
            if (!f) {
                throw NumericalFailure("cannot write " + p.string());
            }
            f.write(item.bytes.data(), static_cast<std::streamsize>(item.bytes.size()));
            f.close();
            m.artifacts.push_back({item.path, sha256_hex(item.bytes), item.bytes.size()});
        }
        m.finished_at = utc_now();
        std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::binary);
        mf << to_json(m).dump(2) << '\n';
        return m;
    }

private:
    std::vector<PendingArtifact> items_;
};

std::string dump(const json& j)
{
    return j.dump(2) + "\n";
}

// Config content as hashed: the parsed document with the effective seed and
// without run-local knobs.
json effective_config(json raw, std::uint64_t seed)
{
    if (raw.is_object()) {
        raw.erase("output_dir");
        raw.erase("workers");
        if (raw.contains("budget") && raw["budget"].is_object()) {
            raw["budget"].erase("workers");
        }
        raw["seed"] = seed;
    }
    return raw;
}

std::string resolve_out_dir(const CommandOptions& options, const std::string& from_config, const std::string& fallback)
{
    if (!options.out_dir.empty()) return options.out_dir;
    if (!from_config.empty()) return from_config;
    return fallback;
}

// Shared error mapping for every subcommand.
template <class F>
int guarded(std::ostream& err, F&& body)
{
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const CflViolation& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumericalFailure;
    } catch (const NumericalFailure& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumericalFailure;
    } catch (const InvalidArgument& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const fs::filesystem_error& e) {
        err << "i/o error: " << e.what() << '\n';
        return kExitNumericalFailure;
    }
}

json load_config_or_empty(const CommandOptions& options)
{
    if (options.config_path.empty()) {
        return json::object();
    }
    return load_json_file(options.config_path);
}

std::uint64_t seed_field(const json& j, std::uint64_t fallback)
{
    if (!j.contains("seed")) return fallback;
    const json& v = j.at("seed");
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        field_error("seed", "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

// --- pde helpers ------------------------------------------------------------

std::function<double(double)> parse_pde_payoff(const json& j, const std::string& where, std::string& label)
{
    if (j.is_string()) {
        const auto kind = j.get<std::string>();
        if (kind == "square") {
            label = "x^2";
            return [](double x) { return x * x; };
        }
        if (kind == "identity") {
            label = "x";
            return [](double x) { return x; };
        }
        field_error(where, "unknown payoff '" + kind + "'");
    }
    require_object(j, where);
    const auto kind = required<std::string>(j, where, "kind");
    if (kind == "power") {
        reject_unknown(j, where, {"kind", "exponent"});
        const double p = required<double>(j, where, "exponent");
        label = "x^" + format_double(p);
        return [p](double x) { return std::pow(x, p); };
    }
    if (kind == "call" || kind == "put") {
        reject_unknown(j, where, {"kind", "strike"});
        const double k = required<double>(j, where, "strike");
        label = kind + "(" + format_double(k) + ")";
        if (kind == "call") return [k](double x) { return std::max(x - k, 0.0); };
        return [k](double x) { return std::max(k - x, 0.0); };
    }
    if (kind == "constant") {
        reject_unknown(j, where, {"kind", "value"});
        const double c = required<double>(j, where, "value");
        label = "constant(" + format_double(c) + ")";
        return [c](double) { return c; };
    }
    field_error(join(where, "kind"), "unknown payoff kind '" + kind + "'");
}

NodeValues parse_tree_payoff(const json& j, const TreeMarket& tree, const std::string& where)
{
    NodeValues values = tree.terminal_payoff();
    if (j.is_string()) {
        const auto kind = j.get<std::string>();
        if (kind == "terminal") return values;
        if (kind == "asset") {
            const auto s = tree.asset_values();
            for (auto i : tree.level(tree.depth())) values[i] = s[i];
            return values;
        }
        field_error(where, "unknown payoff '" + kind + "'");
    }
    require_object(j, where);
    reject_unknown(j, where, {"kind", "strike"});
    const auto kind = required<std::string>(j, where, "kind");
    if (kind != "call" && kind != "put") {
        field_error(join(where, "kind"), "unknown payoff kind '" + kind + "'");
    }
    const double k = required<double>(j, where, "strike");
    for (auto i : tree.level(tree.depth())) {
        const double s = tree.node(i).asset;
        values[i] = kind == "call" ? std::max(s - k, 0.0) : std::max(k - s, 0.0);
    }
    return values;
}

json node_values_json(const TreeMarket& tree, const NodeValues& v)
{
    auto out = json::array();
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const auto& n = tree.node(i);
        out.push_back({{"id", n.id >= 0 ? n.id : static_cast<long long>(i)}, {"level", n.level}, {"value", v[i]}});
    }
    return out;
}

} // namespace

// --- parsing ----------------------------------------------------------------

json parse_json_text(const std::string& text)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1;
        std::size_t column = 1;
        const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t i = 0; i < end; ++i) {
            if (text[i] == '\n') {
                ++line;
                column = 1;
            } else {
                ++column;
            }
        }
        std::string what = e.what();
        const auto cut = what.find("syntax error");
        throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                          (cut == std::string::npos ? what : what.substr(cut)));
    }
}

json load_json_file(const std::string& path)
{
    return parse_json_text(read_text(path));
}

AssetSpec parse_asset(const json& j, const std::string& where)
{
    require_object(j, where);
    reject_unknown(j, where, {"kind", "initial_value", "x0", "maturity", "params"});
    const auto kind_text = required<std::string>(j, where, "kind");
    at_field(join(where, "kind"), [&] { return asset_kind_from_string(kind_text); });
    if (j.contains("x0")) convert<std::array<double, 3>>(j.at("x0"), join(where, "x0"));
    if (j.contains("initial_value")) convert<double>(j.at("initial_value"), join(where, "initial_value"));
    if (j.contains("params")) convert<std::map<std::string, double>>(j.at("params"), join(where, "params"));
    if (j.contains("maturity")) {
        const json& m = j.at("maturity");
        if (!(m.is_number() || (m.is_string() && m.get<std::string>() == "never"))) {
            field_error(join(where, "maturity"), "expected a number or \"never\"");
        }
    }
    return at_field(where, [&] { return j.get<AssetSpec>(); });
}

PriorFamily parse_family(const json& j, const std::string& where)
{
    require_object(j, where);
    const auto kind_text = required<std::string>(j, where, "kind");
    const FamilyKind kind = at_field(join(where, "kind"), [&] { return family_kind_from_string(kind_text); });
    if (!j.contains("domain")) field_error(join(where, "domain"), "missing");
    const json& dj = require_object(j.at("domain"), join(where, "domain"));
    reject_unknown(dj, join(where, "domain"), {"lower", "upper", "dimension"});
    VolatilityDomain domain;
    domain.lower = required<double>(dj, join(where, "domain"), "lower");
    domain.upper = required<double>(dj, join(where, "domain"), "upper");
    domain.dimension = optional_field<int>(dj, join(where, "domain"), "dimension", 1);
    at_field(join(where, "domain"), [&] { domain.validate(); return 0; });

    switch (kind) {
    case FamilyKind::ConstantGrid: {
        reject_unknown(j, where, {"kind", "domain", "grid_points", "horizon"});
        const int n = optional_field<int>(j, where, "grid_points", 2);
        const double h = required<double>(j, where, "horizon");
        return at_field(where, [&] { return make_constant_family(domain, n, h); });
    }
    case FamilyKind::PiecewiseGrid: {
        reject_unknown(j, where, {"kind", "domain", "grid_points", "horizon", "breakpoints"});
        const int n = optional_field<int>(j, where, "grid_points", 2);
        const double h = required<double>(j, where, "horizon");
        const auto bp = required<std::vector<double>>(j, where, "breakpoints");
        return at_field(where, [&] { return make_piecewise_family(domain, bp, n, h); });
    }
    case FamilyKind::RestrictedAfterT: {
        reject_unknown(j, where, {"kind", "domain", "grid_points", "horizon", "switch_time", "tail_rate"});
        const int n = optional_field<int>(j, where, "grid_points", 2);
        const double h = required<double>(j, where, "horizon");
        const double s = required<double>(j, where, "switch_time");
        const double tail = required<double>(j, where, "tail_rate");
        return at_field(where, [&] { return make_restricted_family(domain, tail, s, n, h); });
    }
    case FamilyKind::Custom: {
        reject_unknown(j, where, {"kind", "domain", "members"});
        if (!j.contains("members") || !j.at("members").is_array()) {
            field_error(join(where, "members"), "expected an array of priors");
        }
        std::vector<Prior> members;
        std::size_t idx = 0;
        for (const auto& m : j.at("members")) {
            const std::string path = join(where, "members[" + std::to_string(idx++) + "]");
            require_object(m, path);
            reject_unknown(m, path, {"label", "schedule", "dimension", "horizon"});
            members.push_back(at_field(path, [&] { return m.get<Prior>(); }));
        }
        return at_field(where, [&] { return make_custom_family(domain, std::move(members)); });
    }
    }
    field_error(join(where, "kind"), "unsupported");
}

ScenarioConfig parse_scenario(const json& j)
{
    require_object(j, "");
    reject_unknown(j, "", {"asset", "family", "horizon", "method", "budget", "seed", "output_dir"});
    ScenarioConfig c;
    if (!j.contains("asset")) field_error("asset", "missing");
    if (!j.contains("family")) field_error("family", "missing");
    c.asset = parse_asset(j.at("asset"), "asset");
    c.family = parse_family(j.at("family"), "family");

    if (!j.contains("horizon")) {
        c.horizon = HorizonSpec::finite(c.family.horizon());
    } else if (j.at("horizon").is_number()) {
        c.horizon = HorizonSpec::finite(j.at("horizon").get<double>());
    } else {
        const json& h = require_object(j.at("horizon"), "horizon");
        reject_unknown(h, "horizon", {"kind", "value"});
        const auto kind = required<std::string>(h, "horizon", "kind");
        const double value = required<double>(h, "horizon", "value");
        if (kind == "finite") c.horizon = HorizonSpec::finite(value);
        else if (kind == "infinite") c.horizon = HorizonSpec::infinite_truncated(value);
        else field_error("horizon.kind", "expected \"finite\" or \"infinite\"");
    }
    at_field("horizon", [&] { c.horizon.validate(); return 0; });

    const auto method = optional_field<std::string>(j, "", "method", "closed-form");
    c.method = at_field("method", [&] { return method_from_string(method); });

    if (j.contains("budget")) {
        const json& b = require_object(j.at("budget"), "budget");
        reject_unknown(b, "budget",
                       {"n_paths", "n_steps", "report_times", "min_paths", "pde_nx", "tree_steps", "workers"});
        c.budget.n_paths = count_field(b, "budget", "n_paths", c.budget.n_paths);
        c.budget.n_steps = count_field(b, "budget", "n_steps", c.budget.n_steps);
        c.budget.min_paths = count_field(b, "budget", "min_paths", c.budget.min_paths);
        c.budget.pde_nx = count_field(b, "budget", "pde_nx", c.budget.pde_nx);
        c.budget.tree_steps = static_cast<int>(count_field(b, "budget", "tree_steps", 64));
        c.budget.workers = static_cast<unsigned>(count_field(b, "budget", "workers", 1));
        c.budget.report_times = optional_field<std::vector<double>>(b, "budget", "report_times", {});
        if (c.budget.n_paths < 2) field_error("budget.n_paths", "must be >= 2");
        if (c.budget.n_steps < 1) field_error("budget.n_steps", "must be >= 1");
        if (c.budget.pde_nx < 3) field_error("budget.pde_nx", "must be >= 3");
        if (c.budget.tree_steps < 2) field_error("budget.tree_steps", "must be >= 2");
        for (std::size_t i = 0; i < c.budget.report_times.size(); ++i) {
            const double t = c.budget.report_times[i];
            if (!(t >= 0.0 && t <= c.horizon.value)) {
                field_error("budget.report_times[" + std::to_string(i) + "]", "outside [0, horizon]");
            }
        }
    }
    c.budget.seed = seed_field(j, 1);
    c.output_dir = optional_field<std::string>(j, "", "output_dir", "");

    if (c.family.dimension() != c.asset.required_dimension()) {
        field_error("family.domain.dimension", to_string(c.asset.kind) + " needs dimension " +
                                                   std::to_string(c.asset.required_dimension()));
    }
    if (c.family.horizon() + 1e-12 < c.horizon.value) {
        field_error("family.horizon", "shorter than the analysis horizon");
    }
    at_field("method", [&] { check_compatible(c.asset, c.family, c.method); return 0; });
    return c;
}

// --- hashing and manifest ---------------------------------------------------

std::string sha256_hex(const std::string& bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw NumericalFailure("sha256 failed");
    }
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return hex.str();
}

std::string sha256_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

json to_json(const RunManifest& m)
{
    auto artifacts = json::array();
    for (const auto& a : m.artifacts) {
        artifacts.push_back({{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}});
    }
    return {{"command", m.command},
            {"config_hash", m.config_hash},
            {"tool_version", m.tool_version},
            {"started_at", m.started_at},
            {"finished_at", m.finished_at},
            {"artifacts", artifacts}};
}

// --- commands ---------------------------------------------------------------

void print_summary(std::ostream& out, const BubbleReport& report)
{
    out << "asset " << to_string(report.asset.kind) << ", " << report.family.members.size() << " prior(s), method "
        << to_string(report.method) << ", horizon " << report.horizon_kind() << " " << report.horizon.value << '\n';
    out << std::left << std::setw(28) << "prior" << std::right << std::setw(8) << "t" << std::setw(14) << "market"
        << std::setw(14) << "S*" << std::setw(14) << "bubble" << std::setw(12) << "band" << "  source\n";
    for (const auto& p : report.curve) {
        std::string label = p.prior_label.size() > 27 ? p.prior_label.substr(0, 24) + "..." : p.prior_label;
        out << std::left << std::setw(28) << label << std::right << std::fixed << std::setprecision(4)
            << std::setw(8) << p.t << std::setprecision(6) << std::setw(14) << p.market.mean << std::setw(14)
            << p.fundamental.mean << std::setw(14) << p.bubble.mean << std::setw(12) << p.band << "  "
            << to_string(p.source) << '\n';
        out.unsetf(std::ios::floatfield);
        out << std::setprecision(6);
    }
    for (const auto& c : report.per_prior) {
        out << "  " << c.prior_label << ": " << to_string(c.verdict) << (c.analytic ? " (closed form)" : "") << '\n';
    }
    if (report.bubble_interval) {
        out << "bubble interval (" << report.bubble_interval->first << ", " << report.bubble_interval->second << ")\n";
    }
    out << "robust bubble: " << (report.robust_bubble ? "yes" : "no") << '\n';
}

int run_bubble(const CommandOptions& options, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        const std::string started = utc_now();
        if (options.config_path.empty()) throw ConfigError("--config is required");
        const json raw = load_json_file(options.config_path);
        ScenarioConfig c = parse_scenario(raw);
        if (options.seed) c.budget.seed = *options.seed;
        c.budget.workers = std::max(1u, options.workers);
        const std::string out_dir = resolve_out_dir(options, c.output_dir, "out");

        BubbleReport report;
        if (c.family.kind == FamilyKind::RestrictedAfterT && c.asset.kind == AssetKind::ExplodingVol &&
            c.method == Method::ClosedForm) {
            report = restricted_family_bubble(c.asset, c.family.domain, c.family.tail_rate, c.family.switch_time,
                                              static_cast<int>(c.family.rate_grid.size()), c.budget);
        } else {
            report = analyze(c.asset, c.family, c.horizon, c.method, c.budget);
        }

        const json conf = effective_config(raw, c.budget.seed);
        ArtifactSet set;
        set.add("config.json", dump(conf));
        set.add("report.json", dump(to_json(report)));
        std::ostringstream csv;
        write_curve_csv(csv, report);
        set.add("curve.csv", csv.str());
        set.write(out_dir, "bubble", sha256_hex(conf.dump()), started);
        print_summary(out, report);
        out << "artifacts written to " << out_dir << '\n';
        return static_cast<int>(kExitOk);
    });
}

int run_verify(const CommandOptions& options, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        const std::string started = utc_now();
        const json raw = load_config_or_empty(options);
        require_object(raw, "");
        reject_unknown(raw, "", {"suite", "seed", "random_trees", "equivalence_trees", "output_dir"});
        std::string suite_name = optional_field<std::string>(raw, "", "suite", options.suite);
        if (options.suite != "all" || !raw.contains("suite")) suite_name = options.suite;
        const Suite suite = at_field("suite", [&] { return suite_from_string(suite_name); });
        const std::uint64_t seed = options.seed ? *options.seed : seed_field(raw, 1);
        SuiteOptions so;
        so.random_trees = optional_field<int>(raw, "", "random_trees", so.random_trees);
        so.equivalence_trees = optional_field<int>(raw, "", "equivalence_trees", so.equivalence_trees);
        if (so.random_trees < 1) field_error("random_trees", "must be >= 1");
        if (so.equivalence_trees < 1) field_error("equivalence_trees", "must be >= 1");
        const std::string out_dir =
            resolve_out_dir(options, optional_field<std::string>(raw, "", "output_dir", ""), "out");

        const SuiteResult result = run_suite(suite, seed, so);
        std::size_t failed = 0;
        for (const auto& c : result.checks) {
            if (!c.pass) {
                ++failed;
                out << "FAIL " << c.check << " discrepancy " << format_double(c.discrepancy) << '\n';
            }
        }
        out << "suite " << result.suite << " seed " << seed << ": " << result.checks.size() - failed << "/"
            << result.checks.size() << " checks passed\n";

        json conf = effective_config(raw, seed);
        conf["suite"] = to_string(suite);
        ArtifactSet set;
        set.add("verify.json", dump(to_json(result)));
        set.write(out_dir, "verify", sha256_hex(conf.dump()), started);
        return static_cast<int>(result.all_pass() ? kExitOk : kExitCheckFailed);
    });
}

int run_simulate(const CommandOptions& options, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        const std::string started = utc_now();
        if (options.config_path.empty()) throw ConfigError("--config is required");
        const json raw = load_json_file(options.config_path);
        require_object(raw, "");
        reject_unknown(raw, "", {"family", "asset", "horizon", "n_paths", "n_steps", "report_times", "pasted", "seed",
                                 "output_dir"});
        if (!raw.contains("family")) field_error("family", "missing");
        const PriorFamily family = parse_family(raw.at("family"), "family");
        std::optional<AssetSpec> asset;
        if (raw.contains("asset")) {
            asset = parse_asset(raw.at("asset"), "asset");
            if (asset->required_dimension() != family.dimension()) {
                field_error("family.domain.dimension", "does not match the asset");
            }
        }
        double horizon = optional_field<double>(raw, "", "horizon", family.horizon());
        if (asset) horizon = std::min(horizon, asset->simulation_end(horizon));
        if (!(horizon > 0.0) || horizon > family.horizon() + 1e-12) field_error("horizon", "must be in (0, family horizon]");
        const std::size_t n_paths = count_field(raw, "", "n_paths", 10000);
        const std::size_t n_steps = count_field(raw, "", "n_steps", 100);
        if (n_paths < 2) field_error("n_paths", "must be >= 2");
        if (n_steps < 1) field_error("n_steps", "must be >= 1");
        auto times = optional_field<std::vector<double>>(raw, "", "report_times", {});
        if (times.empty()) times = {0.0, 0.25 * horizon, 0.5 * horizon, 0.75 * horizon, horizon};
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (!(times[i] >= 0.0 && times[i] <= horizon)) {
                field_error("report_times[" + std::to_string(i) + "]", "outside [0, horizon]");
            }
        }
        std::vector<PastedPrior> pasted;
        if (raw.contains("pasted")) {
            if (!raw.at("pasted").is_array()) field_error("pasted", "expected an array");
            std::size_t idx = 0;
            for (const auto& p : raw.at("pasted")) {
                const std::string path = "pasted[" + std::to_string(idx++) + "]";
                pasted.push_back(at_field(path, [&] { return pasted_from_json(p, family); }));
            }
        }
        const std::uint64_t seed = options.seed ? *options.seed : seed_field(raw, 1);
        const unsigned workers = std::max(1u, options.workers);
        const std::string out_dir =
            resolve_out_dir(options, optional_field<std::string>(raw, "", "output_dir", ""), "out");

        const TimeGrid grid = TimeGrid::with_points(horizon, n_steps, times);
        std::vector<PathBatch> batches;
        for (const auto& m : family.members) batches.push_back(simulate(m, grid, n_paths, seed, workers));
        for (const auto& p : pasted) batches.push_back(simulate(p, grid, n_paths, seed, workers));

        std::vector<EstimateRow> rows;
        for (const auto& batch : batches) {
            for (double t : times) {
                const std::size_t k = grid.index_of(t);
                std::vector<double> samples(batch.n_paths);
                for (std::size_t p = 0; p < batch.n_paths; ++p) {
                    samples[p] = asset ? asset_value_on_path(*asset, batch.path(p))[k] : batch.at(p, k, 0);
                }
                rows.push_back({batch.prior_label, t, estimate_values(samples)});
            }
        }

        // write_batch targets files directly, so batches go through a staging
        // directory and are read back into the artifact set.
        const fs::path staging = fs::temp_directory_path() /
                                 ("bubblelab-sim-" + std::to_string(seed) + "-" +
                                  std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
        fs::create_directories(staging);
        ArtifactSet set;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const std::string stem = "batch_" + std::to_string(b);
            write_batch(batches[b], (staging / stem).string());
            set.add(stem + ".bin", read_text((staging / (stem + ".bin")).string()));
            set.add(stem + ".json", read_text((staging / (stem + ".json")).string()));
        }
        fs::remove_all(staging);
        std::ostringstream csv;
        write_estimates_csv(csv, rows);
        set.add("estimates.csv", csv.str());
        const json conf = effective_config(raw, seed);
        set.write(out_dir, "simulate", sha256_hex(conf.dump()), started);
        out << batches.size() << " batch(es) of " << n_paths << " paths on " << grid.size() << " grid times written to "
            << out_dir << '\n';
        return static_cast<int>(kExitOk);
    });
}

int run_tree(const CommandOptions& options, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        const std::string started = utc_now();
        if (options.config_path.empty()) throw ConfigError("--config is required");
        const json raw = load_json_file(options.config_path);
        require_object(raw, "");
        reject_unknown(raw, "", {"tree", "instance", "retire", "payoff", "seed", "output_dir"});
        TreeMarket tree;
        if (raw.contains("tree")) {
            tree = at_field("tree", [&] { return raw.at("tree").get<TreeMarket>(); });
        } else {
            const auto name = required<std::string>(raw, "", "instance");
            if (name == "two-law-one-period") tree = two_law_one_period_tree();
            else if (name == "three-child-single-law") tree = three_child_single_law_tree();
            else if (name == "retired-binomial") {
                const double retire = optional_field<double>(raw, "", "retire", 0.5);
                tree = at_field("retire", [&] { return retired_binomial_tree(retire); });
            } else {
                field_error("instance", "unknown instance '" + name + "'");
            }
        }
        const NodeValues payoff =
            parse_tree_payoff(raw.contains("payoff") ? raw.at("payoff") : json("terminal"), tree, "payoff");
        const std::string out_dir =
            resolve_out_dir(options, optional_field<std::string>(raw, "", "output_dir", ""), "out");

        const DpResult dp = sublinear_dp(tree, payoff);
        const FundamentalValue fv = robust_fundamental_value(tree);
        const Superreplication sr = superreplication_price(tree, payoff);
        const DominanceResult dom = check_no_dominance(tree);
        json report = {{"tree", tree},
                       {"payoff", node_values_json(tree, payoff)},
                       {"sublinear_value", node_values_json(tree, dp.values)},
                       {"fundamental", node_values_json(tree, fv.fundamental)},
                       {"bubble", node_values_json(tree, fv.bubble)},
                       {"root",
                        {{"sublinear_value", dp.values[tree.root()]},
                         {"superreplication_price", sr.price},
                         {"duality_gap", sr.price - dp.values[tree.root()]},
                         {"fundamental", fv.fundamental[tree.root()]},
                         {"bubble", fv.bubble[tree.root()]}}},
                       {"superreplication", {{"price", sr.price}, {"strategy", sr.strategy}}},
                       {"dominance", {{"undominated", dom.undominated}, {"price", dom.price}}}};
        if (dom.witness) report["dominance"]["witness"] = *dom.witness;

        ArtifactSet set;
        set.add("tree_report.json", dump(report));
        set.write(out_dir, "tree", sha256_hex(raw.dump()), started);
        out << "sublinear value " << format_double(dp.values[tree.root()]) << ", superreplication price "
            << format_double(sr.price) << ", root bubble " << format_double(fv.bubble[tree.root()]) << ", "
            << (dom.undominated ? "undominated" : "dominated") << '\n';
        return static_cast<int>(kExitOk);
    });
}

int run_pde(const CommandOptions& options, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        const std::string started = utc_now();
        if (options.config_path.empty()) throw ConfigError("--config is required");
        const json raw = load_json_file(options.config_path);
        require_object(raw, "");
        reject_unknown(raw, "", {"generator", "a_low", "a_high", "payoff", "x_min", "x_max", "horizon", "nx", "nt",
                                 "x0", "tree_steps", "sweep", "time_stride", "space_stride", "seed", "output_dir"});
        PdeProblem problem;
        const auto gen = optional_field<std::string>(raw, "", "generator", "canonical");
        problem.generator = at_field("generator", [&] { return generator_kind_from_string(gen); });
        problem.a_low = required<double>(raw, "", "a_low");
        problem.a_high = required<double>(raw, "", "a_high");
        if (!raw.contains("payoff")) field_error("payoff", "missing");
        problem.payoff = parse_pde_payoff(raw.at("payoff"), "payoff", problem.payoff_label);
        problem.x_min = required<double>(raw, "", "x_min");
        problem.x_max = required<double>(raw, "", "x_max");
        problem.horizon = required<double>(raw, "", "horizon");
        at_field("", [&] { problem.validate(); return 0; });
        const std::size_t nx = count_field(raw, "", "nx", 401);
        if (nx < 3) field_error("nx", "must be >= 3");
        const double x0 = optional_field<double>(raw, "", "x0", 0.5 * (problem.x_min + problem.x_max));
        const int tree_steps = static_cast<int>(count_field(raw, "", "tree_steps", 32));
        if (tree_steps < 2 || tree_steps % 2 != 0) field_error("tree_steps", "must be even and >= 2");
        const int sweep = options.sweep > 0 ? options.sweep : static_cast<int>(count_field(raw, "", "sweep", 0));
        std::size_t nt_default = min_time_steps(problem, nx);
        if (sweep > 0) {
            const auto ts = static_cast<std::size_t>(tree_steps);
            nt_default = (nt_default + ts - 1) / ts * ts;
        }
        const std::size_t nt = count_field(raw, "", "nt", nt_default);
        if (nt < 1) field_error("nt", "must be >= 1");
        std::size_t time_stride = count_field(raw, "", "time_stride", std::max<std::size_t>(1, nt / 100));
        std::size_t space_stride = count_field(raw, "", "space_stride", 1);
        if (time_stride < 1) field_error("time_stride", "must be >= 1");
        if (space_stride < 1) field_error("space_stride", "must be >= 1");
        const std::string out_dir =
            resolve_out_dir(options, optional_field<std::string>(raw, "", "output_dir", ""), "out");

        const ValueSurface surface = solve(problem, nx, nt);
        ArtifactSet set;
        std::ostringstream csv;
        write_surface_csv(csv, surface, time_stride, space_stride);
        set.add("surface.csv", csv.str());
        json meta = surface_metadata(surface);
        meta["x0"] = x0;
        meta["value_at_x0"] = surface.initial(x0);
        set.add("surface.json", dump(meta));
        out << "v(0, " << format_double(x0) << ") = " << format_double(surface.initial(x0)) << " (nx " << nx << ", nt "
            << nt << ")\n";
        if (sweep > 0) {
            const RefinementSweep rs = refinement_sweep(problem, x0, nx, nt, tree_steps, sweep);
            set.add("sweep.json", dump(to_json(rs)));
            for (const auto& level : rs.levels) {
                out << "  nx " << level.nx << " nt " << level.nt << " tree " << level.tree_steps << ": v "
                    << format_double(level.value) << ", tree gap " << format_double(level.tree_discrepancy) << '\n';
            }
        }
        set.write(out_dir, "pde", sha256_hex(raw.dump()), started);
        return static_cast<int>(kExitOk);
    });
}

int cli_main(int argc, char** argv)
{
    CLI::App app{"bubblelab: asset bubbles under volatility uncertainty"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    CommandOptions options;
    std::uint64_t seed = 0;
    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* c = sub->add_option("--config", options.config_path, "JSON scenario file");
        if (config_required) c->required();
        sub->add_option("--seed", seed, "master seed (overrides the config)");
        sub->add_option("--workers", options.workers, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--out", options.out_dir, "output directory");
    };
    auto* bubble = app.add_subcommand("bubble", "market value, fundamental value and bubble curve");
    add_common(bubble, true);
    auto* verify = app.add_subcommand("verify", "seeded property suites");
    add_common(verify, false);
    verify->add_option("--suite", options.suite, "tree, pasting, dominance, pde or all");
    auto* sim = app.add_subcommand("simulate", "simulate path batches for each prior");
    add_common(sim, true);
    auto* tree = app.add_subcommand("tree", "dynamic programming and hedging on a tree market");
    add_common(tree, true);
    auto* pde = app.add_subcommand("pde", "solve the uncertain-volatility pricing equation");
    add_common(pde, true);
    pde->add_option("--sweep", options.sweep, "refinement levels")->check(CLI::NonNegativeNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfigError;
    }
    for (auto* sub : {bubble, verify, sim, tree, pde}) {
        if (sub->parsed() && sub->count("--seed") > 0) options.seed = seed;
    }
    if (bubble->parsed()) return run_bubble(options, std::cout, std::cerr);
    if (verify->parsed()) return run_verify(options, std::cout, std::cerr);
    if (sim->parsed()) return run_simulate(options, std::cout, std::cerr);
    if (tree->parsed()) return run_tree(options, std::cout, std::cerr);
    return run_pde(options, std::cout, std::cerr);
}

} // namespace bubblelab
