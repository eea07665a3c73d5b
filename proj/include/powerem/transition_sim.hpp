#pragma once

#include "powerem/param_space.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace powerem {

enum class TechCategory { fossil, renewable, other_low_carbon };

struct Technology {
    std::string id;
    TechCategory category = TechCategory::fossil;
    double investment_cost = 0.0;      // currency/kW, at the start-year cumulative capacity
    double om_cost = 0.0;              // currency/MWh
    double fuel_cost = 0.0;            // currency/MWh
    double capacity_factor = 0.5;      // (0,1]
    double lifetime = 30.0;            // years
    double lead_time = 1.0;            // years, technology specific (grid lead added separately)
    double emission_factor = 0.0;      // tCO2/MWh
    double learning_exponent = 0.0;    // <= 0
    double cumulative_capacity = 1.0;  // GW, global
};

struct RegionState {
    std::string id;
    std::vector<double> shares;         // capacity shares per technology, sum to 1
    double demand = 1.0;                // TWh/year
    double demand_growth = 0.0;         // fraction/year
    std::vector<double> discount_rate;  // per technology, fraction/year
    std::vector<double> gamma;          // per technology, currency/MWh
    std::vector<double> fuel_cost;      // per technology override; empty uses Technology::fuel_cost
};

struct SimConfig {
    int start_year = 2022;
    int end_year = 2050;
    double timestep = 0.25;
    std::vector<int> report_years{2030, 2040, 2050};
    std::vector<Technology> technologies;
    std::vector<RegionState> regions;
    double substitution_speed = 2.0;   // 1/year
    double choice_spread = 10.0;       // currency/MWh
    double fuel_price_sd_fraction = 0.15;

    std::size_t tech_index(std::string_view id) const;  // throws not_found
};

// Shipped 8-technology, 5-region desk calibration. Illustrative, not fitted.
SimConfig default_sim_config();

// Throws invalid_input naming the first broken rule.
void validate_config(const SimConfig& config);

// Everything that enters a levelized cost for one technology in one region.
struct CostInputs {
    double investment_cost = 0.0;  // currency/kW
    double discount_rate = 0.0;
    double lifetime = 1.0;
    double capacity_factor = 1.0;
    double om_cost = 0.0;
    double fuel_cost = 0.0;
    double emission_factor = 0.0;
    double carbon_price = 0.0;     // currency/tCO2
    double lead_time = 0.0;        // technology lead, years
    double grid_lead = 0.0;        // system-wide lead, years
    double gamma = 0.0;
    double subsidy = 0.0;          // fraction of upfront cost
    double feed_in_tariff = 0.0;   // currency/MWh
};

double capital_recovery_factor(double rate, double lifetime);

// Levelized cost in currency/MWh. Interest during construction compounds the
// upfront cost over the full lead. May be negative when tariffs exceed costs.
double lcoe(const CostInputs& in);

// Probability technology i is preferred over j in a binary logistic choice.
double preference(double lcoe_i, double lcoe_j, double choice_spread);

// Per-region technology parameters after the sampled inputs are applied.
struct TechParams {
    double capacity_factor = 1.0;
    double lifetime = 1.0;
    double lead_time = 0.0;  // technology part
    double om_cost = 0.0;
    double fuel_cost = 0.0;
    double capex_multiplier = 1.0;
    double discount_rate = 0.0;
    double emission_factor = 0.0;
    double gamma = 0.0;
    double subsidy = 0.0;
    double feed_in_tariff = 0.0;
    double phase_out = 0.0;
};

struct RegionContext {
    std::vector<TechParams> techs;
    double grid_lead = 0.0;
    double demand_growth = 0.0;
    PolicyLevels policy;
};

RegionContext resolve_region(const SimConfig& config, const RegionState& region,
                             const PhysicalInputs& inputs);

std::vector<double> region_lcoe(const RegionContext& ctx, std::span<const double> investment_cost,
                                double year);

struct StepResult {
    RegionState next;
    std::vector<double> additions;  // GW built during the step (growth plus replacement)
    double share_sum_before_renormalization = 1.0;
    int substeps = 1;
};

// Advances one region by dt with costs frozen at `year`. Sub-divides dt (down
// to dt/64) when a share would leave [0,1]; rejects if still unstable.
StepResult step(const SimConfig& config, const RegionState& state, const RegionContext& ctx,
                std::span<const double> investment_cost, double year, double dt);

// Global learning-by-doing: W += additions, I = I0 * (W / W0)^b.
struct LearningState {
    std::vector<double> learning_exponent;
    std::vector<double> cumulative_capacity;
    std::vector<double> investment_cost;
};

LearningState initial_learning(const SimConfig& config, const PhysicalInputs& inputs);
void apply_learning(const SimConfig& config, LearningState& state, std::span<const double> additions);

struct RegionReport {
    std::string region;
    std::vector<double> shares;
    std::vector<double> capacity;    // GW
    std::vector<double> generation;  // TWh
    std::vector<double> lcoe;        // currency/MWh
    double emissions = 0.0;          // MtCO2/yr
    double renewables_share = 0.0;   // capacity fraction, renewables category only
    double weighted_cost = 0.0;      // share-weighted LCOE
};

struct YearReport {
    int year = 0;
    std::vector<RegionReport> regions;
    RegionReport global;
};

struct SimOutput {
    std::vector<std::string> technologies;
    std::vector<YearReport> years;
    double max_share_drift = 0.0;  // largest |sum - 1| after renormalization
};

// Called after every step: (year, region index, shares after renormalization).
using StepObserver = std::function<void(double, std::size_t, std::span<const double>)>;

SimOutput simulate(const SimConfig& config, const PhysicalInputs& inputs,
                   const StepObserver& observer = {});

inline const std::vector<std::string>& output_names() {
    static const std::vector<std::string> names{"solar_capacity_GW", "onshore_capacity_GW",
                                                "emissions_Mt", "renewables_share", "weighted_cost"};
    return names;
}

const char* output_units(std::string_view output);

// region is a region id or "global".
std::map<std::string, double> extract_outputs(const SimOutput& out, const std::string& region, int year);

// Report built from capacity shares and LCOEs, used for every report year.
RegionReport make_report(const SimConfig& config, const std::string& region, std::span<const double> shares,
                         double demand, std::span<const double> capacity_factor,
                         std::span<const double> lcoe);

nlohmann::json to_json(const SimConfig& config);
SimConfig sim_config_from_json(const nlohmann::json& j);
SimConfig load_sim_config(const std::filesystem::path& path);
void save_sim_config(const SimConfig& config, const std::filesystem::path& path);

// One row per region-technology-year.
std::string sim_output_to_csv(const SimOutput& out);
// {"2030": {"IN": {named scalars}, "global": {...}}, ...}
nlohmann::json sim_summary_json(const SimOutput& out);

const char* to_string(TechCategory category);

} // namespace powerem
