#include "powerem/scenarios.hpp"

#include "powerem/error.hpp"
#include "powerem/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace powerem {

InputDistribution InputDistribution::fixed_at(double v) {
    InputDistribution d;
    d.kind = DistributionKind::fixed;
    d.value = v;
    return d;
}

InputDistribution InputDistribution::uniform_on(double lo, double hi) {
    InputDistribution d;
    d.kind = DistributionKind::uniform;
    d.lo = lo;
    d.hi = hi;
    return d;
}

InputDistribution InputDistribution::normal(double mean, double sd) {
    InputDistribution d;
    d.kind = DistributionKind::truncated_normal;
    d.mean = mean;
    d.sd = sd;
    return d;
}

void ScenarioSpec::validate(std::size_t dimension) const {
    if (inputs.size() != dimension)
        fail(ErrorCode::invalid_input, "scenario '" + name + "' has " + std::to_string(inputs.size()) +
                                           " input distributions, space has " + std::to_string(dimension));
    if (n < 1) fail(ErrorCode::invalid_input, "scenario '" + name + "' needs at least one draw");
    for (std::size_t d = 0; d < inputs.size(); ++d) {
        const auto& in = inputs[d];
        const std::string where = "scenario '" + name + "' input " + std::to_string(d) + ": ";
        switch (in.kind) {
            case DistributionKind::fixed:
                if (!(in.value >= 0.0 && in.value <= 1.0)) fail(ErrorCode::invalid_input, where + "fixed value outside [0,1]");
                break;
            case DistributionKind::uniform:
                if (!(in.lo >= 0.0 && in.hi <= 1.0 && in.lo < in.hi))
                    fail(ErrorCode::invalid_input, where + "subrange must satisfy 0 <= lo < hi <= 1");
                break;
            case DistributionKind::truncated_normal:
                if (!(in.sd > 0.0) || !std::isfinite(in.mean) || !std::isfinite(in.sd))
                    fail(ErrorCode::invalid_input, where + "normal needs a finite mean and positive sd");
                break;
        }
    }
}

double current_policy_coordinate(const InputDef& input) {
    if (input.kind != InputKind::policy) fail(ErrorCode::invalid_input, input.id + " is not a policy input");
    return input.special_mapping == SpecialMapping::us_rollback ? 0.5 : 0.0;
}

double ambition_coordinate(const InputDef& input, double ambition) {
    if (!(ambition >= 0.0 && ambition <= 1.0)) fail(ErrorCode::invalid_input, "ambition must lie in [0,1]");
    if (input.kind != InputKind::policy) fail(ErrorCode::invalid_input, input.id + " is not a policy input");
    return input.special_mapping == SpecialMapping::us_rollback ? 0.5 + 0.5 * ambition : ambition;
}

ScenarioSpec baseline_spec(const ParameterSpace& space, std::size_t n, std::uint64_t seed) {
    ScenarioSpec spec;
    spec.name = "baseline";
    spec.n = n;
    spec.seed = seed;
    for (const auto& in : space.inputs)
        spec.inputs.push_back(in.kind == InputKind::policy ? InputDistribution::fixed_at(current_policy_coordinate(in))
                                                           : InputDistribution::normal());
    return spec;
}

PolicyPackage current_policy_package(const ParameterSpace& space) {
    PolicyPackage p{"current-policy", {}};
    for (const auto& in : space.inputs)
        if (in.kind == InputKind::policy) p.coordinates[in.id] = current_policy_coordinate(in);
    return p;
}

PolicyPackage unified_package(const ParameterSpace& space, double ambition, std::string name) {
    PolicyPackage p{std::move(name), {}};
    for (const auto& in : space.inputs)
        if (in.kind == InputKind::policy) p.coordinates[in.id] = ambition_coordinate(in, ambition);
    return p;
}

std::vector<PolicyPackage> regional_packages(const ParameterSpace& space, const std::string& region) {
    auto find = [&](Instrument instrument) -> const InputDef& {
        for (const auto& in : space.inputs)
            if (in.kind == InputKind::policy && in.instrument == instrument && in.region() == region) return in;
        fail(ErrorCode::not_found, std::string("no ") + to_string(instrument) + " input for region " + region);
    };
    const auto& sub = find(Instrument::subsidy_fit);
    const auto& cp = find(Instrument::carbon_price);
    const auto& phase = find(Instrument::phase_out);
    auto make = [&](std::string name, bool s, bool c, bool ph) {
        PolicyPackage p{std::move(name), {}};
        p.coordinates[sub.id] = s ? ambition_coordinate(sub, 0.5) : current_policy_coordinate(sub);
        p.coordinates[cp.id] = c ? ambition_coordinate(cp, 0.5) : current_policy_coordinate(cp);
        p.coordinates[phase.id] = ph ? ambition_coordinate(phase, 0.5) : current_policy_coordinate(phase);
        return p;
    };
    return {make("baseline", false, false, false), make("Sub-CP", true, true, false),
            make("CP-Phase", false, true, true), make("Sub-CP-Phase", true, true, true),
            make("Sub-Phase", true, false, true)};
}

void apply_package(ScenarioSpec& spec, const ParameterSpace& space, const PolicyPackage& package) {
    spec.validate(space.dimension());
    for (const auto& [id, value] : package.coordinates) {
        const auto d = space.require_index(id);
        if (space.inputs[d].kind != InputKind::policy)
            fail(ErrorCode::invalid_input, "package '" + package.name + "' sets non-policy input " + id);
        if (!(value >= 0.0 && value <= 1.0))
            fail(ErrorCode::invalid_input, "package '" + package.name + "' sets " + id + " outside [0,1]");
        spec.inputs[d] = InputDistribution::fixed_at(value);
    }
}

const std::vector<std::string>& lead_input_ids() {
    static const std::vector<std::string> ids{"solar_lead", "onshore_lead", "offshore_lead", "grid_lead"};
    return ids;
}

std::pair<double, double> lead_band_range(LeadBand band, int ways) {
    if (ways == 3) {
        switch (band) {
            case LeadBand::fast: return {0.0, 1.0 / 3.0};
            case LeadBand::medium: return {1.0 / 3.0, 2.0 / 3.0};
            case LeadBand::slow: return {2.0 / 3.0, 1.0};
        }
    }
    if (ways == 2) {
        if (band == LeadBand::medium) fail(ErrorCode::invalid_input, "two-way lead bands have no medium band");
        return band == LeadBand::fast ? std::pair{0.0, 0.5} : std::pair{0.5, 1.0};
    }
    fail(ErrorCode::invalid_input, "lead bands split the range 2 or 3 ways");
}

std::pair<double, double> half_range(Half half) {
    return half == Half::low ? std::pair{0.0, 0.5} : std::pair{0.5, 1.0};
}

std::string BandSelection::label() const {
    std::string out = "lead=";
    out += lead ? to_string(*lead) : "any";
    out += ";discount=";
    out += discount ? to_string(*discount) : "any";
    out += ";demand=";
    out += demand ? to_string(*demand) : "any";
    return out;
}

void apply_bands(ScenarioSpec& spec, const ParameterSpace& space, const BandSelection& bands) {
    spec.validate(space.dimension());
    if (bands.lead) {
        const auto [lo, hi] = lead_band_range(*bands.lead, bands.lead_ways);
        for (const auto& id : lead_input_ids()) spec.inputs[space.require_index(id)] = InputDistribution::uniform_on(lo, hi);
    }
    if (bands.discount) {
        const auto [lo, hi] = half_range(*bands.discount);
        spec.inputs[space.require_index("discount_shift")] = InputDistribution::uniform_on(lo, hi);
    }
    if (bands.demand) {
        const auto [lo, hi] = half_range(*bands.demand);
        spec.inputs[space.require_index("demand_growth_shift")] = InputDistribution::uniform_on(lo, hi);
    }
}

Eigen::MatrixXd sample_scenario(const ScenarioSpec& spec) {
    spec.validate(spec.inputs.size());
    const auto dim = static_cast<Eigen::Index>(spec.inputs.size());
    Eigen::MatrixXd out(static_cast<Eigen::Index>(spec.n), dim);
    auto rng = make_rng(spec.seed, "scenario-samples");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index d = 0; d < dim; ++d) {
            const auto& in = spec.inputs[static_cast<std::size_t>(d)];
            double v = 0.0;
            switch (in.kind) {
                case DistributionKind::fixed: v = in.value; break;
                case DistributionKind::uniform: v = in.lo + (in.hi - in.lo) * unit(rng); break;
                case DistributionKind::truncated_normal:
                    do {
                        v = in.mean + in.sd * gauss(rng);
                    } while (v < 0.0 || v > 1.0);
                    break;
            }
            out(i, d) = v;
        }
    return out;
}

DrawSet propagate(const std::vector<const GpModel*>& models, const Eigen::MatrixXd& samples, std::uint64_t seed,
                  Exec exec) {
    DrawSet draws;
    for (const auto* m : models) {
        if (static_cast<std::size_t>(samples.cols()) != m->dimension())
            fail(ErrorCode::invalid_input, "samples have " + std::to_string(samples.cols()) + " columns, model " +
                                               m->key().str() + " expects " + std::to_string(m->dimension()));
        Eigen::VectorXd mean, variance;
        predict_batch(*m, samples, mean, variance, exec);
        auto rng = make_rng(seed, m->key().str());
        std::normal_distribution<double> gauss(0.0, 1.0);
        Eigen::VectorXd y(samples.rows());
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = mean(i) + std::sqrt(variance(i)) * gauss(rng);
        draws[m->key()] = std::move(y);
    }
    return draws;
}

DrawSet simulate_scenario(const SimConfig& config, const ParameterSpace& space, const Eigen::MatrixXd& samples,
                          const std::vector<ModelKey>& keys, Exec exec) {
    const auto runs = simulate_batch(config, space, samples, exec);
    DrawSet out;
    for (const auto& k : keys) out[k] = collect_output(runs, k.region, k.output, k.year);
    return out;
}

bool Target::met(double value) const {
    return direction == Direction::at_least ? value >= threshold : value <= threshold;
}

std::vector<Target> default_targets(const std::string& region, int year) {
    auto key = [&](const char* output) { return ModelKey{region, output, year}; };
    return {
        {"capacity_solar_onshore", {key("solar_capacity_GW"), key("onshore_capacity_GW")}, Direction::at_least, 393.0,
         "GW", 1.0},
        {"renewables_share", {key("renewables_share")}, Direction::at_least, 0.55, "fraction", 1.0},
        {"weighted_cost", {key("weighted_cost")}, Direction::at_most, 68.0, "$/GJ", 1.0},
        {"emissions", {key("emissions_Mt")}, Direction::at_most, 1000.0, "MtCO2/yr", 1.0},
    };
}

std::vector<ModelKey> target_keys(const std::vector<Target>& targets) {
    std::vector<ModelKey> keys;
    for (const auto& t : targets)
        for (const auto& k : t.terms)
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    return keys;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) fail(ErrorCode::invalid_input, "quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) fail(ErrorCode::invalid_input, "quantile level must lie in [0,1]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

RobustnessReport robustness(const DrawSet& draws, const std::vector<Target>& targets, std::uint64_t seed) {
    if (draws.empty()) fail(ErrorCode::invalid_input, "robustness needs at least one draw vector");
    const auto n = draws.begin()->second.size();
    for (const auto& [k, v] : draws)
        if (v.size() != n) fail(ErrorCode::invalid_input, "draw vectors differ in length (" + k.str() + ")");
    if (n == 0) fail(ErrorCode::invalid_input, "robustness needs a non-empty draw vector");

    RobustnessReport rep;
    rep.seed = seed;
    // a draw is usable when every output is finite
    std::vector<bool> usable(static_cast<std::size_t>(n), true);
    for (const auto& [k, v] : draws)
        for (Eigen::Index i = 0; i < n; ++i)
            if (!std::isfinite(v(i))) usable[static_cast<std::size_t>(i)] = false;
    const auto valid = static_cast<std::size_t>(std::count(usable.begin(), usable.end(), true));
    rep.draws = valid;
    rep.rejected = static_cast<std::size_t>(n) - valid;
    if (valid == 0) fail(ErrorCode::numerical_failure, "no finite draws to score");

    for (const auto& [k, v] : draws) {
        std::vector<double> vals;
        vals.reserve(valid);
        for (Eigen::Index i = 0; i < n; ++i)
            if (usable[static_cast<std::size_t>(i)]) vals.push_back(v(i));
        std::sort(vals.begin(), vals.end());
        rep.summaries.push_back({k, quantile(vals, 0.05), quantile(vals, 0.25), quantile(vals, 0.5),
                                 quantile(vals, 0.75), quantile(vals, 0.95)});
    }
    for (const auto& t : targets) {
        if (t.terms.empty()) fail(ErrorCode::invalid_input, "target '" + t.name + "' has no terms");
        std::vector<const Eigen::VectorXd*> cols;
        for (const auto& k : t.terms) {
            auto it = draws.find(k);
            if (it == draws.end()) fail(ErrorCode::not_found, "target '" + t.name + "' needs draws for " + k.str());
            cols.push_back(&it->second);
        }
        TargetResult r{t.name, 0.0, 0};
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!usable[static_cast<std::size_t>(i)]) continue;
            double sum = 0.0;
            for (const auto* c : cols) sum += (*c)(i);
            if (t.met(t.scale * sum)) ++r.met;
        }
        r.proportion = static_cast<double>(r.met) / static_cast<double>(valid);
        rep.targets.push_back(r);
    }
    return rep;
}

std::vector<RobustnessReport> compare_scenarios(const std::vector<ScenarioCell>& cells,
                                                const std::vector<const GpModel*>& models,
                                                const std::vector<Target>& targets, Exec exec) {
    if (cells.empty()) fail(ErrorCode::invalid_input, "compare_scenarios needs at least one cell");
    for (const auto& k : target_keys(targets))
        if (std::none_of(models.begin(), models.end(), [&](const GpModel* m) { return m->key() == k; }))
            fail(ErrorCode::not_found, "no emulator for target term " + k.str());
    std::vector<RobustnessReport> out(cells.size());
    for_each_index(cells.size(), exec, [&](std::size_t c) {
        const auto samples = sample_scenario(cells[c].spec);
        const auto draws = propagate(models, samples, cells[c].spec.seed);
        out[c] = robustness(draws, targets, cells[c].spec.seed);
        out[c].cell = cells[c].name;
        out[c].package = cells[c].package;
        out[c].bands = cells[c].bands.label();
    });
    return out;
}

std::vector<ScenarioCell> package_band_grid(const ParameterSpace& space, const std::string& region, std::size_t n,
                                       std::uint64_t seed) {
    std::vector<ScenarioCell> cells;
    for (const auto& pkg : regional_packages(space, region))
        for (auto lead : {LeadBand::fast, LeadBand::medium, LeadBand::slow})
            for (auto discount : {Half::low, Half::high})
                for (auto demand : {Half::low, Half::high}) {
                    ScenarioCell cell;
                    cell.package = pkg.name;
                    cell.bands.lead = lead;
                    cell.bands.discount = discount;
                    cell.bands.demand = demand;
                    cell.spec = baseline_spec(space, n, seed);
                    apply_package(cell.spec, space, pkg);
                    apply_bands(cell.spec, space, cell.bands);
                    cell.name = pkg.name + "|" + cell.bands.label();
                    cell.spec.name = cell.name;
                    cells.push_back(std::move(cell));
                }
    return cells;
}

const char* to_string(LeadBand band) {
    switch (band) {
        case LeadBand::fast: return "fast";
        case LeadBand::medium: return "medium";
        case LeadBand::slow: return "slow";
    }
    return "fast";
}

const char* to_string(Half half) {
    return half == Half::low ? "low" : "high";
}

const char* to_string(Direction direction) {
    return direction == Direction::at_least ? "at_least" : "at_most";
}

const char* to_string(DistributionKind kind) {
    switch (kind) {
        case DistributionKind::fixed: return "fixed";
        case DistributionKind::uniform: return "uniform";
        case DistributionKind::truncated_normal: return "truncated-normal";
    }
    return "fixed";
}

LeadBand lead_band_from(const std::string& text) {
    if (text == "fast") return LeadBand::fast;
    if (text == "medium") return LeadBand::medium;
    if (text == "slow" || text == "low") return LeadBand::slow;
    fail(ErrorCode::invalid_input, "unknown lead band '" + text + "' (fast, medium, slow)");
}

Half half_from(const std::string& text) {
    if (text == "low") return Half::low;
    if (text == "high") return Half::high;
    fail(ErrorCode::invalid_input, "unknown band '" + text + "' (low, high)");
}

nlohmann::json to_json(const ScenarioSpec& spec, const ParameterSpace& space) {
    using nlohmann::json;
    spec.validate(space.dimension());
    json inputs = json::object();
    for (std::size_t d = 0; d < spec.inputs.size(); ++d) {
        const auto& in = spec.inputs[d];
        json j = {{"kind", to_string(in.kind)}};
        switch (in.kind) {
            case DistributionKind::fixed: j["value"] = in.value; break;
            case DistributionKind::uniform: j["lo"] = in.lo; j["hi"] = in.hi; break;
            case DistributionKind::truncated_normal: j["mean"] = in.mean; j["sd"] = in.sd; break;
        }
        inputs[space.inputs[d].id] = std::move(j);
    }
    return {{"name", spec.name}, {"n", spec.n}, {"seed", spec.seed}, {"inputs", std::move(inputs)}};
}

ScenarioSpec scenario_from_json(const nlohmann::json& j, const ParameterSpace& space) {
    try {
        ScenarioSpec spec;
        spec.name = j.value("name", std::string("scenario"));
        spec.n = j.value("n", kDefaultScenarioDraws);
        spec.seed = j.value("seed", std::uint64_t{0});
        spec.inputs.assign(space.dimension(), InputDistribution::normal());
        if (j.contains("inputs")) {
            for (const auto& [id, v] : j.at("inputs").items()) {
                const auto d = space.require_index(id);
                const auto kind = v.at("kind").get<std::string>();
                if (kind == "fixed") {
                    spec.inputs[d] = InputDistribution::fixed_at(v.at("value").get<double>());
                } else if (kind == "uniform") {
                    spec.inputs[d] = InputDistribution::uniform_on(v.at("lo").get<double>(), v.at("hi").get<double>());
                } else if (kind == "truncated-normal") {
                    spec.inputs[d] = InputDistribution::normal(v.value("mean", 0.5), v.value("sd", 1.0 / 6));
                } else {
                    fail(ErrorCode::invalid_input, "input " + id + ": unknown distribution kind '" + kind + "'");
                }
            }
        }
        spec.validate(space.dimension());
        return spec;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::invalid_input, std::string("malformed scenario spec: ") + e.what());
    }
}

nlohmann::json to_json(const std::vector<Target>& targets) {
    using nlohmann::json;
    json arr = json::array();
    for (const auto& t : targets) {
        json terms = json::array();
        for (const auto& k : t.terms) terms.push_back(k.str());
        arr.push_back({{"name", t.name},
                       {"terms", std::move(terms)},
                       {"direction", to_string(t.direction)},
                       {"threshold", t.threshold},
                       {"unit", t.unit},
                       {"scale", t.scale}});
    }
    return {{"targets", std::move(arr)}};
}

std::vector<Target> targets_from_json(const nlohmann::json& j) {
    try {
        std::vector<Target> out;
        for (const auto& t : j.at("targets")) {
            Target target;
            target.name = t.at("name").get<std::string>();
            for (const auto& k : t.at("terms")) target.terms.push_back(parse_model_key(k.get<std::string>()));
            const auto dir = t.at("direction").get<std::string>();
            if (dir == "at_least") target.direction = Direction::at_least;
            else if (dir == "at_most") target.direction = Direction::at_most;
            else fail(ErrorCode::invalid_input, "target '" + target.name + "': direction must be at_least or at_most");
            target.threshold = t.at("threshold").get<double>();
            target.unit = t.value("unit", std::string());
            target.scale = t.value("scale", 1.0);
            if (!std::isfinite(target.threshold) || !std::isfinite(target.scale))
                fail(ErrorCode::invalid_input, "target '" + target.name + "': threshold and scale must be finite");
            if (target.terms.empty()) fail(ErrorCode::invalid_input, "target '" + target.name + "' has no terms");
            out.push_back(std::move(target));
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::invalid_input, std::string("malformed target set: ") + e.what());
    }
}

nlohmann::json to_json(const RobustnessReport& r) {
    using nlohmann::json;
    json targets = json::array();
    for (const auto& t : r.targets) targets.push_back({{"name", t.name}, {"proportion", t.proportion}, {"met", t.met}});
    json summaries = json::array();
    for (const auto& s : r.summaries)
        summaries.push_back({{"key", s.key.str()},
                             {"q05", s.q05},
                             {"q25", s.q25},
                             {"median", s.median},
                             {"q75", s.q75},
                             {"q95", s.q95}});
    return {{"cell", r.cell},         {"package", r.package},         {"bands", r.bands},
            {"draws", r.draws},       {"rejected", r.rejected},       {"seed", r.seed},
            {"targets", std::move(targets)}, {"summaries", std::move(summaries)}};
}

nlohmann::json reports_to_json(const std::vector<RobustnessReport>& reports) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) arr.push_back(to_json(r));
    return {{"cells", std::move(arr)}};
}

std::string reports_to_csv(const std::vector<RobustnessReport>& reports) {
    CsvTable t;
    t.header = {"cell", "package", "bands", "target", "proportion", "met", "draws", "seed"};
    for (const auto& r : reports)
        for (const auto& tr : r.targets)
            t.rows.push_back({r.cell, r.package, r.bands, tr.name, format_double(tr.proportion), std::to_string(tr.met),
                              std::to_string(r.draws), std::to_string(r.seed)});
    return to_csv(t);
}

std::string draws_to_csv(const DrawSet& draws) {
    CsvTable t;
    Eigen::Index n = 0;
    for (const auto& [k, v] : draws) {
        t.header.push_back(k.str());
        n = v.size();
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<std::string> row;
        for (const auto& [k, v] : draws) row.push_back(format_double(v(i)));
        t.rows.push_back(std::move(row));
    }
    return to_csv(t);
}

} // namespace powerem
