#pragma once

// Command-line front end: JSON scenario configs, experiment runs, artifacts
// and run manifests. Subcommands: bubble, verify, simulate, tree, pde.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bubblelab/assets.hpp"
#include "bubblelab/bubble_analysis.hpp"
#include "bubblelab/priors.hpp"

namespace bubblelab {

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitConfigError = 2, kExitNumericalFailure = 3 };

// Config problem with a location: "line 3, column 7: ..." or "field 'asset.kind': ...".
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ScenarioConfig {
    AssetSpec asset;
    PriorFamily family;
    HorizonSpec horizon;
    Method method = Method::MonteCarlo;
    Budget budget;
    std::string output_dir;
};

struct CommandOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    unsigned workers = 1;
    std::string out_dir;
    std::string suite = "all";
    int sweep = 0;   // pde refinement levels; 0 = single solve
};

struct Artifact {
    std::string path;   // relative to the output directory
    std::string sha256;
    std::uintmax_t bytes = 0;
};

struct RunManifest {
    std::string command;
    std::string config_hash;
    std::string tool_version;
    std::string started_at;
    std::string finished_at;
    std::vector<Artifact> artifacts;
};

extern const char* const kToolVersion;

// Reads and parses a JSON file; syntax errors carry line and column.
nlohmann::json load_json_file(const std::string& path);
nlohmann::json parse_json_text(const std::string& text);

ScenarioConfig parse_scenario(const nlohmann::json& j);
AssetSpec parse_asset(const nlohmann::json& j, const std::string& where);
PriorFamily parse_family(const nlohmann::json& j, const std::string& where);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

nlohmann::json to_json(const RunManifest& m);

// Each returns a process exit code and writes artifacts under the output
// directory only when the run completes.
int run_bubble(const CommandOptions& options, std::ostream& out, std::ostream& err);
int run_verify(const CommandOptions& options, std::ostream& out, std::ostream& err);
int run_simulate(const CommandOptions& options, std::ostream& out, std::ostream& err);
int run_tree(const CommandOptions& options, std::ostream& out, std::ostream& err);
int run_pde(const CommandOptions& options, std::ostream& out, std::ostream& err);

// Table of the bubble curve for the terminal.
void print_summary(std::ostream& out, const BubbleReport& report);

int cli_main(int argc, char** argv);

} // namespace bubblelab
