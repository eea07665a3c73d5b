#pragma once

#include "powerem/batch.hpp"
#include "powerem/gp.hpp"
#include "powerem/param_space.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace powerem {

enum class DistributionKind { fixed, uniform, truncated_normal };

struct InputDistribution {
    DistributionKind kind = DistributionKind::truncated_normal;
    double value = 0.5;               // fixed
    double lo = 0.0, hi = 1.0;        // uniform subrange
    double mean = 0.5, sd = 1.0 / 6;  // normal truncated to [0,1]

    static InputDistribution fixed_at(double v);
    static InputDistribution uniform_on(double lo, double hi);
    static InputDistribution normal(double mean = 0.5, double sd = 1.0 / 6);
};

inline constexpr std::size_t kDefaultScenarioDraws = 20000;

struct ScenarioSpec {
    std::string name = "scenario";
    std::vector<InputDistribution> inputs;  // one per space dimension
    std::size_t n = kDefaultScenarioDraws;
    std::uint64_t seed = 0;

    void validate(std::size_t dimension) const;
};

// Techno-economic inputs varied normally; policy inputs fixed at current policy.
ScenarioSpec baseline_spec(const ParameterSpace& space, std::size_t n = kDefaultScenarioDraws, std::uint64_t seed = 0);

// Named policy-coordinate assignments; coordinates not listed stay at current policy.
struct PolicyPackage {
    std::string name;
    std::map<std::string, double> coordinates;
};

// Normalized coordinate that leaves every instrument at its current level:
// 0 for standard policy inputs, 0.5 for the rollback-capable input.
double current_policy_coordinate(const InputDef& input);
// Standard coordinate for ambition a in [0,1]; the rollback input maps to 0.5 + a/2.
double ambition_coordinate(const InputDef& input, double ambition);

PolicyPackage current_policy_package(const ParameterSpace& space);
// Every region and instrument at the same ambition (0.5 = mid, 1 = high).
PolicyPackage unified_package(const ParameterSpace& space, double ambition, std::string name);
// baseline, Sub-CP, CP-Phase, Sub-CP-Phase, Sub-Phase for one region at mid level.
std::vector<PolicyPackage> regional_packages(const ParameterSpace& space, const std::string& region);

void apply_package(ScenarioSpec& spec, const ParameterSpace& space, const PolicyPackage& package);

enum class LeadBand { fast, medium, slow };
enum class Half { low, high };

const std::vector<std::string>& lead_input_ids();

struct BandSelection {
    std::optional<LeadBand> lead;
    int lead_ways = 3;  // 3: fast|medium|slow, 2: fast|slow halves
    std::optional<Half> discount;
    std::optional<Half> demand;

    std::string label() const;
};

std::pair<double, double> lead_band_range(LeadBand band, int ways);
std::pair<double, double> half_range(Half half);
void apply_bands(ScenarioSpec& spec, const ParameterSpace& space, const BandSelection& bands);

// n x D matrix of normalized samples, deterministic under spec.seed.
Eigen::MatrixXd sample_scenario(const ScenarioSpec& spec);

using DrawSet = std::map<ModelKey, Eigen::VectorXd>;

// Per sample and model: y ~ Normal(mean(x), variance(x)). Each key draws from
// its own generator seeded by (seed, key), so adding models never shifts draws.
DrawSet propagate(const std::vector<const GpModel*>& models, const Eigen::MatrixXd& samples, std::uint64_t seed,
                  Exec exec = Exec::serial);

// Direct simulator evaluation of the same samples (rejected runs give NaN).
DrawSet simulate_scenario(const SimConfig& config, const ParameterSpace& space, const Eigen::MatrixXd& samples,
                          const std::vector<ModelKey>& keys, Exec exec = Exec::serial);

enum class Direction { at_least, at_most };

struct Target {
    std::string name;
    std::vector<ModelKey> terms;  // summed per draw
    Direction direction = Direction::at_least;
    double threshold = 0.0;
    std::string unit;
    double scale = 1.0;  // applied to the summed draws before comparison

    bool met(double value) const;
};

// India 2030: solar + onshore >= 393 GW, renewables share >= 0.55,
// weighted cost <= 68, emissions <= 1000 MtCO2/yr.
std::vector<Target> default_targets(const std::string& region = "IN", int year = 2030);
std::vector<ModelKey> target_keys(const std::vector<Target>& targets);

// Type-7 (linear interpolation) sample quantile; q in [0,1].
double quantile(std::vector<double> values, double q);

struct DrawSummary {
    ModelKey key;
    double q05 = 0.0, q25 = 0.0, median = 0.0, q75 = 0.0, q95 = 0.0;
    double mean_variance = 0.0;  // filled by callers that know emulator variances
};

struct TargetResult {
    std::string name;
    double proportion = 0.0;
    std::size_t met = 0;
};

struct RobustnessReport {
    std::string cell;
    std::string package;
    std::string bands;
    std::vector<TargetResult> targets;
    std::vector<DrawSummary> summaries;
    std::size_t draws = 0;
    std::size_t rejected = 0;  // draws with a non-finite term, excluded
    std::uint64_t seed = 0;
};

RobustnessReport robustness(const DrawSet& draws, const std::vector<Target>& targets, std::uint64_t seed = 0);

struct ScenarioCell {
    std::string name;
    std::string package;
    BandSelection bands;
    ScenarioSpec spec;
};

// Every cell is sampled, propagated and scored independently with its own spec seed.
std::vector<RobustnessReport> compare_scenarios(const std::vector<ScenarioCell>& cells,
                                                const std::vector<const GpModel*>& models,
                                                const std::vector<Target>& targets, Exec exec = Exec::serial);

// Regional packages x 3 lead bands x 2 discount halves x 2 demand halves.
std::vector<ScenarioCell> package_band_grid(const ParameterSpace& space, const std::string& region = "IN",
                                       std::size_t n = kDefaultScenarioDraws, std::uint64_t seed = 0);

nlohmann::json to_json(const ScenarioSpec& spec, const ParameterSpace& space);
// Inputs missing from the JSON default to the truncated normal.
ScenarioSpec scenario_from_json(const nlohmann::json& j, const ParameterSpace& space);
nlohmann::json to_json(const std::vector<Target>& targets);
std::vector<Target> targets_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RobustnessReport& report);
nlohmann::json reports_to_json(const std::vector<RobustnessReport>& reports);
// One row per cell x target.
std::string reports_to_csv(const std::vector<RobustnessReport>& reports);
std::string draws_to_csv(const DrawSet& draws);

const char* to_string(LeadBand band);
const char* to_string(Half half);
const char* to_string(Direction direction);
const char* to_string(DistributionKind kind);
LeadBand lead_band_from(const std::string& text);
Half half_from(const std::string& text);

} // namespace powerem
