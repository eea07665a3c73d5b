#pragma once

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace powerem {

enum class InputKind { techno_economic, policy };
enum class SpecialMapping { none, us_rollback };
// Policy instrument grouping driven by a single policy coordinate.
enum class Instrument { none, phase_out, subsidy_fit, carbon_price };

// "*" matches every region or technology.
struct Selector {
    std::string region = "*";
    std::string technology = "*";
};

struct InputDef {
    std::string id;
    InputKind kind = InputKind::techno_economic;
    double physical_low = 0.0;
    double physical_high = 1.0;
    std::string unit;
    std::vector<Selector> applies_to;
    SpecialMapping special_mapping = SpecialMapping::none;
    Instrument instrument = Instrument::none;

    // Region targeted by a policy input, taken from its first selector.
    const std::string& region() const;
};

struct InstrumentAnchor {
    std::string technology;
    double mid = 0.0;   // level at p = 0.5
    double high = 0.0;  // level at p = 1
};

// Instrument levels at the three anchor points of a policy coordinate.
// Baseline (p = 0) is zero additional instrument for phase-outs, tariffs and
// subsidies, and the region's current carbon price.
struct PolicyAnchors {
    std::vector<InstrumentAnchor> phase_out{{"coal", 0.5, 1.0}, {"ccgt", 0.5, 1.0}, {"oil", 0.5, 1.0}};
    std::vector<InstrumentAnchor> feed_in_tariff{
        {"onshore", 20.0, 40.0}, {"offshore", 20.0, 40.0}, {"solar", 15.0, 30.0}};
    std::vector<InstrumentAnchor> subsidy{{"nuclear", 0.10, 0.20},  {"ccs", 0.25, 0.50},
                                          {"biomass", 0.30, 0.60},  {"geothermal", 0.25, 0.50},
                                          {"hydro", 0.25, 0.50}};
    // Feed-in tariff at p = 0 for a us-rollback input (currency/MWh, negative).
    std::map<std::string, double> rollback_floor{{"onshore", -20.0}, {"offshore", -20.0}, {"solar", -15.0}};
    double carbon_mid_start = 31.0;
    double carbon_mid_end = 345.0;
    double carbon_high_start = 62.0;
    double carbon_high_end = 564.0;
    std::map<std::string, double> current_carbon_price{
        {"CN", 9.0}, {"US", 0.0}, {"IN", 0.0}, {"RGN", 25.0}, {"RGS", 0.0}};
    int price_start_year = 2022;
    int price_end_year = 2050;
};

struct ParameterSpace {
    std::vector<InputDef> inputs;
    PolicyAnchors anchors;

    std::size_t dimension() const { return inputs.size(); }
    std::optional<std::size_t> index_of(std::string_view id) const;
    std::size_t require_index(std::string_view id) const;  // throws not_found
    std::vector<std::string> ids() const;
};

// Normalized point; every component in [0,1].
using InputVector = Eigen::VectorXd;

struct DesignMatrix {
    Eigen::MatrixXd points;  // n x dimension, entries in [0,1)
    std::uint64_t seed = 0;
};

// Instrument levels in force for one region group.
struct PolicyLevels {
    std::map<std::string, double> phase_out;       // fraction of additions removed
    std::map<std::string, double> feed_in_tariff;  // currency/MWh
    std::map<std::string, double> subsidy;         // fraction of upfront cost
    double carbon_price_start = 0.0;               // currency/tCO2
    double carbon_price_end = 0.0;
    int start_year = 2022;
    int end_year = 2050;

    double phase_out_for(const std::string& tech) const;
    double feed_in_tariff_for(const std::string& tech) const;
    double subsidy_for(const std::string& tech) const;
    // Linear in time between the start and end years, flat outside.
    double carbon_price(double year) const;
};

struct PhysicalInputs {
    std::map<std::string, double> values;          // input id -> physical value
    std::map<std::string, PolicyLevels> policy;    // region id -> levels

    double value_or(std::string_view id, double fallback) const;
    const PolicyLevels& policy_for(const std::string& region) const;

private:
    static const PolicyLevels& empty_policy();
};

inline constexpr double kMinDiscountRate = 0.02;

// Regional base rate plus the global shift, floored at 2%.
double effective_discount_rate(double base_rate, double shift);

// Piecewise-linear through (0, baseline), (0.5, mid), (1, high).
double interpolate_anchors(double p, double baseline, double mid, double high);

ParameterSpace default_space();
PolicyLevels baseline_policy(const PolicyAnchors& anchors, const std::string& region);

PhysicalInputs denormalize(const ParameterSpace& space, const InputVector& u);

DesignMatrix lhs_sample(std::size_t n, const ParameterSpace& space, std::uint64_t seed);
DesignMatrix lhs_sample(std::size_t n, std::size_t dimension, std::uint64_t seed);

struct Violation {
    std::string input_id;
    std::string rule;
    std::string detail;
};

std::vector<Violation> validate_space(const ParameterSpace& space);

// JSON: {"version": 1, "inputs": [InputDef...], "anchors": {...}}
nlohmann::json to_json(const ParameterSpace& space);
ParameterSpace space_from_json(const nlohmann::json& j);
ParameterSpace load_space(const std::filesystem::path& path);  // rejects invalid spaces
void save_space(const ParameterSpace& space, const std::filesystem::path& path);

std::string design_to_csv(const ParameterSpace& space, const Eigen::MatrixXd& points);
// Header must list the space ids in order.
Eigen::MatrixXd design_from_csv(const ParameterSpace& space, std::string_view csv);

const char* to_string(InputKind kind);
const char* to_string(SpecialMapping mapping);
const char* to_string(Instrument instrument);

} // namespace powerem
