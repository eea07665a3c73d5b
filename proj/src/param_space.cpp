#include "powerem/param_space.hpp"

#include "powerem/error.hpp"
#include "powerem/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace powerem {

namespace {

const std::vector<std::string> kRegions{"CN", "US", "IN", "RGN", "RGS"};

InputDef techno(std::string id, double lo, double hi, std::string unit,
                std::vector<std::string> techs) {
    InputDef def;
    def.id = std::move(id);
    def.kind = InputKind::techno_economic;
    def.physical_low = lo;
    def.physical_high = hi;
    def.unit = std::move(unit);
    for (auto& t : techs) def.applies_to.push_back({"*", std::move(t)});
    if (def.applies_to.empty()) def.applies_to.push_back({});
    return def;
}

InputDef policy(const std::string& region, Instrument instrument) {
    static const std::map<Instrument, std::string> suffix{
        {Instrument::phase_out, "phase_out"},
        {Instrument::subsidy_fit, "subsidy_fit"},
        {Instrument::carbon_price, "carbon_price"}};
    std::string lower = region;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    InputDef def;
    def.id = lower + "_" + suffix.at(instrument);
    def.kind = InputKind::policy;
    def.physical_low = 0.0;
    def.physical_high = 1.0;
    def.unit = "ambition";
    def.instrument = instrument;
    def.applies_to.push_back({region, "*"});
    if (region == "US" && instrument == Instrument::subsidy_fit)
        def.special_mapping = SpecialMapping::us_rollback;
    return def;
}

template <class Enum>
Enum parse_enum(const std::string& text, const std::map<std::string, Enum>& table,
                const std::string& field) {
    auto it = table.find(text);
    if (it == table.end())
        fail(ErrorCode::invalid_input, "unknown " + field + " '" + text + "'");
    return it->second;
}

const std::map<std::string, InputKind> kKindNames{
    {"techno-economic", InputKind::techno_economic}, {"policy", InputKind::policy}};
const std::map<std::string, SpecialMapping> kMappingNames{
    {"none", SpecialMapping::none}, {"us-rollback", SpecialMapping::us_rollback}};
const std::map<std::string, Instrument> kInstrumentNames{
    {"none", Instrument::none},
    {"phase-out", Instrument::phase_out},
    {"subsidy-fit", Instrument::subsidy_fit},
    {"carbon-price", Instrument::carbon_price}};

nlohmann::json anchors_to_json(const std::vector<InstrumentAnchor>& anchors) {
    auto arr = nlohmann::json::array();
    for (const auto& a : anchors)
        arr.push_back({{"technology", a.technology}, {"mid", a.mid}, {"high", a.high}});
    return arr;
}

std::vector<InstrumentAnchor> anchors_from_json(const nlohmann::json& arr) {
    std::vector<InstrumentAnchor> out;
    for (const auto& a : arr)
        out.push_back({a.at("technology").get<std::string>(), a.at("mid").get<double>(),
                       a.at("high").get<double>()});
    return out;
}

} // namespace

const std::string& InputDef::region() const {
    static const std::string any = "*";
    return applies_to.empty() ? any : applies_to.front().region;
}

std::optional<std::size_t> ParameterSpace::index_of(std::string_view id) const {
    for (std::size_t i = 0; i < inputs.size(); ++i)
        if (inputs[i].id == id) return i;
    return std::nullopt;
}

std::size_t ParameterSpace::require_index(std::string_view id) const {
    if (auto i = index_of(id)) return *i;
    fail(ErrorCode::not_found, "unknown input id '" + std::string(id) + "'");
}

std::vector<std::string> ParameterSpace::ids() const {
    std::vector<std::string> out;
    out.reserve(inputs.size());
    for (const auto& def : inputs) out.push_back(def.id);
    return out;
}

double PolicyLevels::phase_out_for(const std::string& tech) const {
    auto it = phase_out.find(tech);
    return it == phase_out.end() ? 0.0 : it->second;
}

double PolicyLevels::feed_in_tariff_for(const std::string& tech) const {
    auto it = feed_in_tariff.find(tech);
    return it == feed_in_tariff.end() ? 0.0 : it->second;
}

double PolicyLevels::subsidy_for(const std::string& tech) const {
    auto it = subsidy.find(tech);
    return it == subsidy.end() ? 0.0 : it->second;
}

double PolicyLevels::carbon_price(double year) const {
    if (end_year <= start_year || year <= start_year) return carbon_price_start;
    if (year >= end_year) return carbon_price_end;
    const double w = (year - start_year) / static_cast<double>(end_year - start_year);
    return carbon_price_start + w * (carbon_price_end - carbon_price_start);
}

double PhysicalInputs::value_or(std::string_view id, double fallback) const {
    auto it = values.find(std::string(id));
    return it == values.end() ? fallback : it->second;
}

const PolicyLevels& PhysicalInputs::policy_for(const std::string& region) const {
    auto it = policy.find(region);
    return it == policy.end() ? empty_policy() : it->second;
}

const PolicyLevels& PhysicalInputs::empty_policy() {
    static const PolicyLevels none;
    return none;
}

double effective_discount_rate(double base_rate, double shift) {
    return std::max(kMinDiscountRate, base_rate + shift);
}

double interpolate_anchors(double p, double baseline, double mid, double high) {
    if (p <= 0.5) return baseline + (mid - baseline) * (2.0 * p);
    return mid + (high - mid) * (2.0 * p - 1.0);
}

ParameterSpace default_space() {
    ParameterSpace space;
    auto& in = space.inputs;
    in.push_back(techno("solar_learning_exp", -0.473, -0.165, "dimensionless", {"solar"}));
    in.push_back(techno("wind_learning_exp", -0.3, -0.088, "dimensionless", {"onshore", "offshore"}));
    in.push_back(techno("solar_lifetime", 25.0, 35.0, "years", {"solar"}));
    in.push_back(techno("wind_lifetime", 25.0, 35.0, "years", {"onshore", "offshore"}));
    in.push_back(techno("solar_lead", 0.5, 1.5, "years", {"solar"}));
    in.push_back(techno("onshore_lead", 1.0, 2.0, "years", {"onshore"}));
    in.push_back(techno("offshore_lead", 2.0, 4.0, "years", {"offshore"}));
    in.push_back(techno("grid_lead", 0.0, 1.0, "years", {}));
    in.push_back(techno("discount_shift", -0.03, 0.03, "fraction/year", {}));
    in.push_back(techno("demand_growth_shift", -0.2, 0.2, "relative growth change", {}));
    in.push_back(techno("coal_price", -2.0, 2.0, "sd", {"coal"}));
    in.push_back(techno("gas_price", -2.0, 2.0, "sd", {"ccgt"}));
    in.push_back(techno("om_multiplier", 0.8, 1.2, "multiplier", {}));
    in.push_back(techno("vre_cf_multiplier", 0.9, 1.1, "multiplier", {"solar", "onshore", "offshore"}));
    in.push_back(techno("nonvre_capex_multiplier", 0.8, 1.2, "multiplier",
                        {"coal", "ccgt", "oil", "nuclear", "hydro"}));
    for (const auto& region : kRegions)
        for (auto instrument : {Instrument::phase_out, Instrument::subsidy_fit, Instrument::carbon_price})
            in.push_back(policy(region, instrument));
    return space;
}

PolicyLevels baseline_policy(const PolicyAnchors& anchors, const std::string& region) {
    PolicyLevels levels;
    auto it = anchors.current_carbon_price.find(region);
    const double current = it == anchors.current_carbon_price.end() ? 0.0 : it->second;
    levels.carbon_price_start = current;
    levels.carbon_price_end = current;
    levels.start_year = anchors.price_start_year;
    levels.end_year = anchors.price_end_year;
    return levels;
}

PhysicalInputs denormalize(const ParameterSpace& space, const InputVector& u) {
    if (static_cast<std::size_t>(u.size()) != space.dimension())
        fail(ErrorCode::invalid_input, "input vector has dimension " + std::to_string(u.size()) +
                                           ", space has " + std::to_string(space.dimension()) +
                                           " (first offending index " +
                                           std::to_string(std::min<std::size_t>(u.size(), space.dimension())) + ")");
    for (Eigen::Index i = 0; i < u.size(); ++i)
        if (!(u[i] >= 0.0 && u[i] <= 1.0))
            fail(ErrorCode::invalid_input, "component " + std::to_string(i) + " (" +
                                               space.inputs[i].id + ") = " + format_double(u[i]) +
                                               " is outside [0,1]");

    const auto& anchors = space.anchors;
    PhysicalInputs out;
    for (const auto& def : space.inputs)
        if (def.kind == InputKind::policy && !out.policy.contains(def.region()))
            out.policy.emplace(def.region(), baseline_policy(anchors, def.region()));

    for (std::size_t i = 0; i < space.dimension(); ++i) {
        const auto& def = space.inputs[i];
        const double p = u[static_cast<Eigen::Index>(i)];
        out.values[def.id] = def.physical_low + p * (def.physical_high - def.physical_low);
        if (def.kind != InputKind::policy) continue;

        auto& levels = out.policy.at(def.region());
        switch (def.instrument) {
            case Instrument::phase_out:
                for (const auto& a : anchors.phase_out)
                    levels.phase_out[a.technology] = interpolate_anchors(p, 0.0, a.mid, a.high);
                break;
            case Instrument::subsidy_fit:
                if (def.special_mapping == SpecialMapping::us_rollback && p < 0.5) {
                    for (const auto& a : anchors.subsidy) levels.subsidy[a.technology] = 0.0;
                    for (const auto& a : anchors.feed_in_tariff) {
                        auto floor = anchors.rollback_floor.find(a.technology);
                        const double f = floor == anchors.rollback_floor.end() ? 0.0 : floor->second;
                        levels.feed_in_tariff[a.technology] = f * (1.0 - 2.0 * p);
                    }
                } else {
                    const double a = def.special_mapping == SpecialMapping::us_rollback
                                         ? 2.0 * (p - 0.5)
                                         : p;
                    for (const auto& s : anchors.subsidy)
                        levels.subsidy[s.technology] = interpolate_anchors(a, 0.0, s.mid, s.high);
                    for (const auto& f : anchors.feed_in_tariff)
                        levels.feed_in_tariff[f.technology] = interpolate_anchors(a, 0.0, f.mid, f.high);
                }
                break;
            case Instrument::carbon_price:
                levels.carbon_price_start = interpolate_anchors(p, levels.carbon_price_start,
                                                                anchors.carbon_mid_start,
                                                                anchors.carbon_high_start);
                levels.carbon_price_end = interpolate_anchors(p, levels.carbon_price_end,
                                                              anchors.carbon_mid_end,
                                                              anchors.carbon_high_end);
                break;
            case Instrument::none:
                break;
        }
    }
    return out;
}

DesignMatrix lhs_sample(std::size_t n, std::size_t dimension, std::uint64_t seed) {
    if (n == 0) fail(ErrorCode::invalid_input, "Latin hypercube size must be at least 1");
    DesignMatrix design;
    design.seed = seed;
    design.points.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dimension));
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::size_t> perm(n);
    const double dn = static_cast<double>(n);
    for (std::size_t d = 0; d < dimension; ++d) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t i = 0; i < n; ++i) {
            const double bin = static_cast<double>(perm[i]);
            double x = (bin + unit(rng)) / dn;
            // keep floor(x * n) == bin under rounding
            while (x > 0.0 && std::floor(x * dn) > bin) x = std::nextafter(x, 0.0);
            while (std::floor(x * dn) < bin) x = std::nextafter(x, 1.0);
            design.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = x;
        }
    }
    return design;
}

DesignMatrix lhs_sample(std::size_t n, const ParameterSpace& space, std::uint64_t seed) {
    return lhs_sample(n, space.dimension(), seed);
}

std::vector<Violation> validate_space(const ParameterSpace& space) {
    std::vector<Violation> out;
    std::set<std::string> seen;
    std::size_t rollback = 0;
    for (const auto& def : space.inputs) {
        if (def.id.empty()) out.push_back({def.id, "empty id", "input id must be non-empty"});
        if (!seen.insert(def.id).second)
            out.push_back({def.id, "duplicate id", "input ids must be unique"});
        if (!(def.physical_low < def.physical_high))
            out.push_back({def.id, "degenerate range", "physical_low must be strictly below physical_high"});
        if (def.special_mapping == SpecialMapping::us_rollback) {
            if (++rollback > 1)
                out.push_back({def.id, "multiple rollback", "at most one input may use us-rollback"});
            if (def.kind != InputKind::policy || def.instrument != Instrument::subsidy_fit)
                out.push_back({def.id, "rollback kind", "us-rollback applies to a subsidy/feed-in policy input"});
        }
        if (def.kind == InputKind::policy) {
            if (def.instrument == Instrument::none)
                out.push_back({def.id, "missing instrument", "policy inputs must name an instrument group"});
            if (def.region() == "*")
                out.push_back({def.id, "missing region", "policy inputs must select a region group"});
            if (def.physical_low != 0.0 || def.physical_high != 1.0)
                out.push_back({def.id, "policy range", "policy inputs span [0,1]"});
        } else if (def.instrument != Instrument::none) {
            out.push_back({def.id, "instrument kind", "only policy inputs carry an instrument"});
        }
    }
    const auto& a = space.anchors;
    for (const auto& [region, price] : a.current_carbon_price)
        if (price < 0.0 || price > a.carbon_mid_start || a.carbon_mid_start > a.carbon_high_start ||
            a.carbon_mid_end > a.carbon_high_end || price > a.carbon_mid_end)
            out.push_back({region, "carbon anchors", "carbon prices must be non-negative and non-decreasing across levels"});
    for (const auto& s : a.subsidy)
        if (s.mid < 0.0 || s.high >= 1.0 || s.mid > s.high)
            out.push_back({s.technology, "subsidy anchors", "subsidies must lie in [0,1) and rise with ambition"});
    for (const auto& p : a.phase_out)
        if (p.mid < 0.0 || p.high > 1.0 || p.mid > p.high)
            out.push_back({p.technology, "phase-out anchors", "phase-outs must lie in [0,1] and rise with ambition"});
    for (const auto& f : a.feed_in_tariff)
        if (f.mid < 0.0 || f.mid > f.high)
            out.push_back({f.technology, "tariff anchors", "feed-in tariffs must be non-negative and rise with ambition"});
    for (const auto& [tech, floor] : a.rollback_floor)
        if (floor > 0.0)
            out.push_back({tech, "rollback floor", "rollback floor must not be positive"});
    return out;
}

const char* to_string(InputKind kind) {
    return kind == InputKind::policy ? "policy" : "techno-economic";
}

const char* to_string(SpecialMapping mapping) {
    return mapping == SpecialMapping::us_rollback ? "us-rollback" : "none";
}

const char* to_string(Instrument instrument) {
    switch (instrument) {
        case Instrument::phase_out: return "phase-out";
        case Instrument::subsidy_fit: return "subsidy-fit";
        case Instrument::carbon_price: return "carbon-price";
        case Instrument::none: break;
    }
    return "none";
}

nlohmann::json to_json(const ParameterSpace& space) {
    nlohmann::json j;
    j["version"] = 1;
    auto inputs = nlohmann::json::array();
    for (const auto& def : space.inputs) {
        nlohmann::json d;
        d["id"] = def.id;
        d["kind"] = to_string(def.kind);
        d["physical_low"] = def.physical_low;
        d["physical_high"] = def.physical_high;
        d["unit"] = def.unit;
        auto sel = nlohmann::json::array();
        for (const auto& s : def.applies_to) sel.push_back({{"region", s.region}, {"technology", s.technology}});
        d["applies_to"] = sel;
        d["special_mapping"] = to_string(def.special_mapping);
        if (def.kind == InputKind::policy) d["instrument"] = to_string(def.instrument);
        inputs.push_back(std::move(d));
    }
    j["inputs"] = std::move(inputs);
    const auto& a = space.anchors;
    j["anchors"] = {
        {"phase_out", anchors_to_json(a.phase_out)},
        {"feed_in_tariff", anchors_to_json(a.feed_in_tariff)},
        {"subsidy", anchors_to_json(a.subsidy)},
        {"rollback_floor", a.rollback_floor},
        {"carbon_mid", {a.carbon_mid_start, a.carbon_mid_end}},
        {"carbon_high", {a.carbon_high_start, a.carbon_high_end}},
        {"current_carbon_price", a.current_carbon_price},
        {"price_years", {a.price_start_year, a.price_end_year}},
    };
    return j;
}

ParameterSpace space_from_json(const nlohmann::json& j) {
    try {
        if (j.contains("version") && j.at("version").get<int>() != 1)
            fail(ErrorCode::version_mismatch, "unsupported parameter-space version");
        ParameterSpace space;
        for (const auto& d : j.at("inputs")) {
            InputDef def;
            def.id = d.at("id").get<std::string>();
            def.kind = parse_enum(d.at("kind").get<std::string>(), kKindNames, "kind");
            def.physical_low = d.at("physical_low").get<double>();
            def.physical_high = d.at("physical_high").get<double>();
            def.unit = d.value("unit", std::string{});
            for (const auto& s : d.value("applies_to", nlohmann::json::array()))
                def.applies_to.push_back({s.value("region", std::string("*")),
                                          s.value("technology", std::string("*"))});
            def.special_mapping = parse_enum(d.value("special_mapping", std::string("none")),
                                             kMappingNames, "special_mapping");
            def.instrument = parse_enum(d.value("instrument", std::string("none")), kInstrumentNames,
                                        "instrument");
            space.inputs.push_back(std::move(def));
        }
        if (j.contains("anchors")) {
            const auto& a = j.at("anchors");
            auto& out = space.anchors;
            if (a.contains("phase_out")) out.phase_out = anchors_from_json(a.at("phase_out"));
            if (a.contains("feed_in_tariff")) out.feed_in_tariff = anchors_from_json(a.at("feed_in_tariff"));
            if (a.contains("subsidy")) out.subsidy = anchors_from_json(a.at("subsidy"));
            if (a.contains("rollback_floor"))
                out.rollback_floor = a.at("rollback_floor").get<std::map<std::string, double>>();
            if (a.contains("carbon_mid")) {
                out.carbon_mid_start = a.at("carbon_mid").at(0).get<double>();
                out.carbon_mid_end = a.at("carbon_mid").at(1).get<double>();
            }
            if (a.contains("carbon_high")) {
                out.carbon_high_start = a.at("carbon_high").at(0).get<double>();
                out.carbon_high_end = a.at("carbon_high").at(1).get<double>();
            }
            if (a.contains("current_carbon_price"))
                out.current_carbon_price = a.at("current_carbon_price").get<std::map<std::string, double>>();
            if (a.contains("price_years")) {
                out.price_start_year = a.at("price_years").at(0).get<int>();
                out.price_end_year = a.at("price_years").at(1).get<int>();
            }
        }
        return space;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::invalid_input, std::string("malformed parameter space: ") + e.what());
    }
}

ParameterSpace load_space(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::invalid_input, path.string() + ": " + e.what());
    }
    auto space = space_from_json(j);
    auto violations = validate_space(space);
    if (!violations.empty()) {
        std::string msg = path.string() + ": invalid parameter space:";
        for (const auto& v : violations) msg += " [" + v.input_id + ": " + v.rule + "]";
        fail(ErrorCode::invalid_input, msg);
    }
    return space;
}

void save_space(const ParameterSpace& space, const std::filesystem::path& path) {
    write_file_atomic(path, to_json(space).dump(2) + "\n");
}

std::string design_to_csv(const ParameterSpace& space, const Eigen::MatrixXd& points) {
    if (static_cast<std::size_t>(points.cols()) != space.dimension())
        fail(ErrorCode::invalid_input, "design has " + std::to_string(points.cols()) +
                                           " columns, space has " + std::to_string(space.dimension()));
    CsvTable table;
    table.header = space.ids();
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        std::vector<std::string> row;
        row.reserve(static_cast<std::size_t>(points.cols()));
        for (Eigen::Index d = 0; d < points.cols(); ++d) row.push_back(format_double(points(i, d)));
        table.rows.push_back(std::move(row));
    }
    return to_csv(table);
}

Eigen::MatrixXd design_from_csv(const ParameterSpace& space, std::string_view csv) {
    auto table = parse_csv(csv);
    if (table.header != space.ids())
        fail(ErrorCode::invalid_input, "design columns do not match the parameter space ids");
    Eigen::MatrixXd points(static_cast<Eigen::Index>(table.rows.size()),
                           static_cast<Eigen::Index>(space.dimension()));
    for (std::size_t i = 0; i < table.rows.size(); ++i)
        for (std::size_t d = 0; d < space.dimension(); ++d) {
            const auto& cell = table.rows[i][d];
            try {
                points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = parse_double(cell, "design value");
            } catch (const std::exception&) {
                fail(ErrorCode::invalid_input, "design row " + std::to_string(i) + " column " +
                                                   space.inputs[d].id + ": not a number '" + cell + "'");
            }
        }
    return points;
}

} // namespace powerem
