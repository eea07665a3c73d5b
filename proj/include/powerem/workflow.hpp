#pragma once

#include "powerem/gp.hpp"
#include "powerem/param_space.hpp"
#include "powerem/parallel.hpp"
#include "powerem/scenarios.hpp"
#include "powerem/sensitivity.hpp"
#include "powerem/transition_sim.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace powerem {

inline constexpr const char* kToolVersion = "0.4.0";

// Workspace layout:
//   space.json, sim_config.json, design.csv, manifest.json
//   sim/outputs.csv
//   models/<key>.json (+ <key>.train.csv, <key>.test.csv)
//   reports/
struct Workspace {
    std::filesystem::path root;
    std::filesystem::path reports_override;  // --out for report commands

    std::filesystem::path space() const { return root / "space.json"; }
    std::filesystem::path sim_config() const { return root / "sim_config.json"; }
    std::filesystem::path design() const { return root / "design.csv"; }
    std::filesystem::path manifest() const { return root / "manifest.json"; }
    std::filesystem::path sim_outputs() const { return root / "sim" / "outputs.csv"; }
    std::filesystem::path models() const { return root / "models"; }
    std::filesystem::path reports() const { return reports_override.empty() ? root / "reports" : reports_override; }
    std::filesystem::path model(const ModelKey& key) const { return models() / (key.str() + ".json"); }
};

// Hashes are keyed by path relative to the workspace root.
struct RunManifest {
    std::string tool_version = kToolVersion;
    std::map<std::string, std::string> hashes;
    std::map<std::string, std::uint64_t> seeds;

    // Hashes the file now and stores it under its relative path.
    void record(const Workspace& ws, const std::filesystem::path& artifact);
    // corrupt_data naming the first artifact whose hash no longer matches (or is missing).
    void verify(const Workspace& ws) const;
};

nlohmann::json to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& j);
// Missing file gives an empty manifest; an existing one is verified before it is returned.
RunManifest load_manifest(const Workspace& ws);
void save_manifest(const Workspace& ws, const RunManifest& manifest);

void init_workspace(const Workspace& ws, const ParameterSpace& space, const SimConfig& config);

ParameterSpace load_workspace_space(const Workspace& ws);
SimConfig load_workspace_config(const Workspace& ws);

// Writes design.csv (n rows, one column per input). n = 0 is rejected.
Eigen::MatrixXd cmd_design(const Workspace& ws, std::size_t n, std::uint64_t seed);

struct SimulateOptions {
    Exec exec = Exec::serial;
    std::size_t chunk = 50;  // design points between checkpoints
    // Stop after this many newly simulated points (for interrupt testing); 0 = no limit.
    std::size_t limit = 0;
};

struct SimulateSummary {
    std::size_t points = 0;
    std::size_t reused = 0;     // rows kept from a previous partial run
    std::size_t simulated = 0;
    std::size_t rejected = 0;
    bool complete = false;
};

// Long-format CSV, one row per design point x (region, output, year), sorted
// by design index. Points already present with a matching row hash are reused.
SimulateSummary cmd_simulate(const Workspace& ws, const SimulateOptions& options = {});

// Hex digest identifying a design row by its exact text.
std::string design_row_hash(const Eigen::RowVectorXd& row);

// Every (region, output, year) key the simulator reports: "global" first, then regions.
std::vector<ModelKey> all_output_keys(const SimConfig& config);

// Design rows and values for one key, skipping rejected runs.
TrainingSet training_from_workspace(const Workspace& ws, const ParameterSpace& space, const ModelKey& key);

struct FitReport {
    ModelKey key;
    std::size_t train_size = 0, test_size = 0;
    ValidationReport test, loo;
    FitDiagnostics diagnostics;
};

nlohmann::json to_json(const FitReport& report);

struct FitCommandOptions {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    int restarts = 10;
    KernelKind kernel = KernelKind::squared_exponential;
    Exec exec = Exec::serial;  // across keys
};

// Splits, fits, writes the model with its train/test CSVs and a validation report.
std::vector<FitReport> cmd_fit(const Workspace& ws, const std::vector<ModelKey>& keys, const FitCommandOptions& options);

// Fits directly from a training CSV (design columns + one value column) without splitting.
GpModel fit_training_csv(const std::filesystem::path& csv, const ParameterSpace& space, const ModelKey& key,
                         const FitOptions& options);

inline constexpr double kCoverageGate = 0.80;

struct ValidateResult {
    ValidationReport loo;
    std::optional<ValidationReport> test;
    double gated_coverage = 0.0;  // test coverage when a test set exists, else LOO
    bool passed = false;
};

ValidateResult cmd_validate(const GpModel& model, const ParameterSpace& space,
                            const std::optional<std::filesystem::path>& test_csv);
nlohmann::json to_json(const ValidateResult& result);

// Emulators keyed by (region, output, year).
class ModelStore {
public:
    static ModelStore load_dir(const std::filesystem::path& dir);

    void add(GpModel model);
    // not_found naming the key and listing the years available for its region/output.
    const GpModel& require(const ModelKey& key) const;
    std::vector<const GpModel*> require_all(const std::vector<ModelKey>& keys) const;
    bool contains(const ModelKey& key) const { return models_.contains(key); }
    std::vector<ModelKey> keys() const;
    std::size_t size() const { return models_.size(); }

private:
    std::map<ModelKey, GpModel> models_;
};

// Mean, sd (emulator, latent) and units for one key at one point. The CLI and
// the service both format predictions through this function.
nlohmann::json prediction_json(const GpModel& model, const InputVector& x);

// "emissions_Mt,weighted_cost" x "2030,2050" x "global,IN"
std::vector<ModelKey> expand_keys(const std::vector<std::string>& regions, const std::vector<std::string>& outputs,
                                  const std::vector<int>& years);

std::vector<std::string> split_list(const std::string& text);
std::vector<int> parse_years(const std::string& text);
InputVector parse_point(const std::string& text, std::size_t dimension);

// Writes reports/sensitivity.{csv,json}.
SensitivityTable cmd_sa(const Workspace& ws, const ModelStore& store, const std::vector<ModelKey>& keys,
                        std::size_t points, double threshold, Exec exec);

struct PropagateResult {
    ScenarioSpec spec;
    DrawSet draws;
    RobustnessReport summary;  // quantiles only
};

// Writes reports/draws.csv and reports/propagate.json.
PropagateResult cmd_propagate(const Workspace& ws, const ModelStore& store, const ScenarioSpec& spec,
                              const std::vector<ModelKey>& keys, Exec exec);

// "full-grid" or a ';'-separated list of band selections such as
// "lead=fast,discount=low;lead=slow". An empty string is one unconstrained cell.
std::vector<BandSelection> parse_band_list(const std::string& text);
BandSelection parse_band_selection(const std::string& text);

struct RobustnessCommand {
    std::string region = "IN";
    std::vector<std::string> packages;  // names from regional_packages; empty = all five
    std::vector<BandSelection> bands;   // empty = full band grid
    std::vector<Target> targets;        // empty = default targets for region
    std::size_t n = kDefaultScenarioDraws;
    std::uint64_t seed = 0;
    Exec exec = Exec::serial;
};

std::vector<ScenarioCell> build_cells(const ParameterSpace& space, const RobustnessCommand& command);

// Writes reports/robustness.{csv,json}.
std::vector<RobustnessReport> cmd_robustness(const Workspace& ws, const ModelStore& store,
                                             const RobustnessCommand& command);

} // namespace powerem
