#include "powerem/service.hpp"

#include "powerem/error.hpp"
#include "powerem/param_space.hpp"
#include "powerem/util.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace powerem {

namespace {

// Carries an HTTP status and body up to the dispatcher.
struct RequestError {
    int status;
    nlohmann::json body;
};

[[noreturn]] void reject(int status, const std::string& message, nlohmann::json extra = nlohmann::json::object()) {
    extra["error"] = message;
    throw RequestError{status, std::move(extra)};
}

int status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_input:
        case ErrorCode::corrupt_data:
        case ErrorCode::version_mismatch: return 400;
        case ErrorCode::not_found: return 404;
        case ErrorCode::validation_failed:
        case ErrorCode::numerical_failure: return 500;
    }
    return 500;
}

template <class Fn>
ServiceResponse guarded(const std::atomic<bool>& ready, Fn&& fn) {
    if (!ready.load(std::memory_order_acquire)) return {503, {{"error", "models are still loading"}}};
    try {
        return fn();
    } catch (const RequestError& e) {
        return {e.status, e.body};
    } catch (const Error& e) {
        return {status_for(e.code()), {{"error", e.what()}, {"code", to_string(e.code())}}};
    } catch (const nlohmann::json::exception& e) {
        return {400, {{"error", std::string("malformed request: ") + e.what()}}};
    }
}

double coordinate(const nlohmann::json& v, std::size_t index, const std::string& id) {
    if (!v.is_number()) reject(400, "coordinate " + std::to_string(index) + " (" + id + ") is not a number", {{"index", index}});
    const double x = v.get<double>();
    if (!(x >= 0.0 && x <= 1.0))
        reject(400, "coordinate " + std::to_string(index) + " (" + id + ") = " + format_double(x) + " is outside [0,1]",
               {{"index", index}, {"input", id}});
    return x;
}

// Fills `x` from a list (in kind order) or an {id: value} object.
void assign_coordinates(const ParameterSpace& space, const nlohmann::json& field, InputKind kind, InputVector& x) {
    std::vector<std::size_t> dims;
    for (std::size_t d = 0; d < space.dimension(); ++d)
        if (space.inputs[d].kind == kind) dims.push_back(d);
    const char* label = kind == InputKind::policy ? "policy" : "techno";
    if (field.is_array()) {
        if (field.size() != dims.size())
            reject(400, std::string(label) + " has " + std::to_string(field.size()) + " values, expected " +
                            std::to_string(dims.size()));
        for (std::size_t k = 0; k < dims.size(); ++k)
            x(static_cast<Eigen::Index>(dims[k])) = coordinate(field[k], dims[k], space.inputs[dims[k]].id);
    } else if (field.is_object()) {
        for (const auto& [id, v] : field.items()) {
            const auto d = space.index_of(id);
            if (!d) reject(400, "unknown input '" + id + "'");
            if (space.inputs[*d].kind != kind) reject(400, "input '" + id + "' is not a " + label + " input");
            x(static_cast<Eigen::Index>(*d)) = coordinate(v, *d, id);
        }
    } else {
        reject(400, std::string(label) + " must be a list or an object");
    }
}

BandSelection bands_from_json(const nlohmann::json& j) {
    if (!j.is_object()) reject(400, "bands must be an object");
    BandSelection b;
    if (j.contains("lead_ways")) b.lead_ways = j.at("lead_ways").get<int>();
    if (j.contains("lead") && !j.at("lead").is_null()) b.lead = lead_band_from(j.at("lead").get<std::string>());
    if (j.contains("discount") && !j.at("discount").is_null()) b.discount = half_from(j.at("discount").get<std::string>());
    if (j.contains("demand") && !j.at("demand").is_null()) b.demand = half_from(j.at("demand").get<std::string>());
    if (b.lead) lead_band_range(*b.lead, b.lead_ways);
    return b;
}

nlohmann::json bands_to_json(const BandSelection& b) {
    nlohmann::json j = {{"lead_ways", b.lead_ways}};
    j["lead"] = b.lead ? nlohmann::json(to_string(*b.lead)) : nlohmann::json();
    j["discount"] = b.discount ? nlohmann::json(to_string(*b.discount)) : nlohmann::json();
    j["demand"] = b.demand ? nlohmann::json(to_string(*b.demand)) : nlohmann::json();
    return j;
}

ModelKey key_from_json(const nlohmann::json& j) {
    if (j.is_string()) return parse_model_key(j.get<std::string>());
    ModelKey k;
    k.region = j.value("region", std::string("global"));
    k.output = j.at("output").get<std::string>();
    k.year = j.at("year").get<int>();
    return k;
}

std::vector<ModelKey> request_keys(const nlohmann::json& request) {
    if (!request.contains("keys") || !request.at("keys").is_array() || request.at("keys").empty())
        reject(400, "request needs a non-empty 'keys' list");
    std::vector<ModelKey> keys;
    for (const auto& k : request.at("keys")) keys.push_back(key_from_json(k));
    return keys;
}

nlohmann::json key_json(const ModelKey& k) {
    return {{"key", k.str()}, {"region", k.region}, {"output", k.output}, {"year", k.year}};
}

} // namespace

std::uint64_t request_seed(const nlohmann::json& request) {
    if (request.contains("seed") && !request.at("seed").is_null()) {
        const auto& s = request.at("seed");
        if (!s.is_number_unsigned()) reject(400, "seed must be a non-negative integer");
        return s.get<std::uint64_t>();
    }
    std::random_device rd;
    const std::uint64_t hi = rd(), lo = rd();
    return ((hi << 32) ^ lo) & ((std::uint64_t{1} << 53) - 1);
}

Histogram histogram(const Eigen::VectorXd& values, std::size_t bins) {
    if (bins == 0) fail(ErrorCode::invalid_input, "histogram needs at least one bin");
    Histogram h;
    h.counts.assign(bins, 0);
    if (values.size() == 0) return h;
    h.lo = values.minCoeff();
    h.hi = values.maxCoeff();
    const double width = (h.hi - h.lo) / static_cast<double>(bins);
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        std::size_t b = 0;
        if (width > 0.0) b = std::min(bins - 1, static_cast<std::size_t>((values(i) - h.lo) / width));
        ++h.counts[b];
    }
    return h;
}

DecisionService::DecisionService(ParameterSpace space) : space_(std::move(space)) {
    const auto violations = validate_space(space_);
    if (!violations.empty())
        fail(ErrorCode::invalid_input, "space rejected: " + violations.front().input_id + ": " + violations.front().detail);
}

void DecisionService::load_models(ModelStore store) {
    for (const auto& k : store.keys())
        if (store.require(k).dimension() != space_.dimension())
            fail(ErrorCode::invalid_input, "model " + k.str() + " has dimension " +
                                               std::to_string(store.require(k).dimension()) + ", space has " +
                                               std::to_string(space_.dimension()));
    store_ = std::move(store);
    ready_.store(true, std::memory_order_release);
}

ServiceResponse DecisionService::space() const {
    return guarded(ready_, [&] { return ServiceResponse{200, to_json(space_)}; });
}

InputVector DecisionService::request_point(const nlohmann::json& request) const {
    InputVector x(static_cast<Eigen::Index>(space_.dimension()));
    for (std::size_t d = 0; d < space_.dimension(); ++d)
        x(static_cast<Eigen::Index>(d)) =
            space_.inputs[d].kind == InputKind::policy ? current_policy_coordinate(space_.inputs[d]) : 0.5;
    if (request.contains("bands")) {
        // a band picks the midpoint of its subrange
        ScenarioSpec spec = baseline_spec(space_, 1, 0);
        apply_bands(spec, space_, bands_from_json(request.at("bands")));
        for (std::size_t d = 0; d < space_.dimension(); ++d)
            if (spec.inputs[d].kind == DistributionKind::uniform)
                x(static_cast<Eigen::Index>(d)) = 0.5 * (spec.inputs[d].lo + spec.inputs[d].hi);
    }
    if (request.contains("techno")) assign_coordinates(space_, request.at("techno"), InputKind::techno_economic, x);
    if (request.contains("policy")) assign_coordinates(space_, request.at("policy"), InputKind::policy, x);
    return x;
}

ScenarioSpec DecisionService::request_spec(const nlohmann::json& request, std::uint64_t seed) const {
    const auto n = request.value("n", kDefaultScenarioDraws);
    if (n < 1 || n > kMaxDistributionDraws)
        reject(400, "n must lie in [1, " + std::to_string(kMaxDistributionDraws) + "]");
    auto spec = baseline_spec(space_, n, seed);
    spec.name = request.value("name", std::string("request"));
    if (request.contains("policy")) {
        InputVector x = InputVector::Zero(static_cast<Eigen::Index>(space_.dimension()));
        assign_coordinates(space_, request.at("policy"), InputKind::policy, x);
        PolicyPackage pkg{"request", {}};
        const auto& field = request.at("policy");
        for (std::size_t d = 0; d < space_.dimension(); ++d) {
            if (space_.inputs[d].kind != InputKind::policy) continue;
            if (field.is_array() || field.contains(space_.inputs[d].id))
                pkg.coordinates[space_.inputs[d].id] = x(static_cast<Eigen::Index>(d));
        }
        apply_package(spec, space_, pkg);
    }
    if (request.contains("bands")) apply_bands(spec, space_, bands_from_json(request.at("bands")));
    if (request.contains("inputs")) {
        // full distribution overrides in scenario-file syntax
        nlohmann::json j = {{"inputs", request.at("inputs")}, {"n", n}, {"seed", seed}};
        const auto overrides = scenario_from_json(j, space_);
        for (const auto& [id, v] : request.at("inputs").items()) {
            const auto d = space_.require_index(id);
            spec.inputs[d] = overrides.inputs[d];
        }
    }
    spec.validate(space_.dimension());
    return spec;
}

ServiceResponse DecisionService::predict(const nlohmann::json& request) const {
    return guarded(ready_, [&] {
        const auto x = request_point(request);
        const auto keys = request_keys(request);
        nlohmann::json out = nlohmann::json::array();
        for (const auto& k : keys) out.push_back(prediction_json(store_.require(k), x));
        return ServiceResponse{200, {{"x", std::vector<double>(x.data(), x.data() + x.size())}, {"predictions", out}}};
    });
}

ServiceResponse DecisionService::distribution(const nlohmann::json& request) const {
    return guarded(ready_, [&] {
        const auto seed = request_seed(request);
        const auto keys = request_keys(request);
        const auto spec = request_spec(request, seed);
        const bool noise = request.value("emulator_noise", true);
        const auto samples = sample_scenario(spec);
        const auto models = store_.require_all(keys);

        DrawSet draws;
        if (noise) {
            draws = propagate(models, samples, seed);
        } else {
            for (const auto* m : models) {
                Eigen::VectorXd mean, var;
                predict_batch(*m, samples, mean, var);
                draws[m->key()] = mean;
            }
        }
        nlohmann::json results = nlohmann::json::array();
        for (const auto& k : keys) {
            const auto& v = draws.at(k);
            const std::vector<double> vals(v.data(), v.data() + v.size());
            const auto h = histogram(v);
            auto r = key_json(k);
            r["units"] = output_units(k.output);
            r["mean"] = v.mean();
            r["quantiles"] = {{"5", quantile(vals, 0.05)},
                              {"25", quantile(vals, 0.25)},
                              {"50", quantile(vals, 0.50)},
                              {"75", quantile(vals, 0.75)},
                              {"95", quantile(vals, 0.95)}};
            r["histogram"] = {{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}};
            results.push_back(std::move(r));
        }
        return ServiceResponse{200,
                               {{"seed", seed},
                                {"n", spec.n},
                                {"emulator_noise", noise},
                                {"scenario", to_json(spec, space_)},
                                {"results", std::move(results)}}};
    });
}

ServiceResponse DecisionService::robustness(const nlohmann::json& request) const {
    return guarded(ready_, [&] {
        const auto seed = request_seed(request);
        const auto region = request.value("region", std::string("IN"));
        if (!request.contains("packages") || !request.at("packages").is_array() || request.at("packages").empty())
            reject(400, "request needs a non-empty 'packages' list");
        const auto catalogue = regional_packages(space_, region);
        std::vector<PolicyPackage> packages;
        for (const auto& p : request.at("packages")) {
            if (p.is_string()) {
                const auto name = p.get<std::string>();
                auto it = std::find_if(catalogue.begin(), catalogue.end(), [&](const auto& c) { return c.name == name; });
                if (it == catalogue.end()) reject(404, "unknown package '" + name + "'");
                packages.push_back(*it);
            } else {
                PolicyPackage pkg{p.at("name").get<std::string>(), {}};
                for (const auto& [id, v] : p.at("coordinates").items()) {
                    const auto d = space_.index_of(id);
                    if (!d) reject(400, "package '" + pkg.name + "': unknown input '" + id + "'");
                    pkg.coordinates[id] = coordinate(v, *d, id);
                }
                packages.push_back(std::move(pkg));
            }
        }
        std::vector<BandSelection> bands;
        if (request.contains("bands")) {
            for (const auto& b : request.at("bands")) bands.push_back(bands_from_json(b));
            if (bands.empty()) reject(400, "'bands' must not be empty when given");
        } else {
            bands.emplace_back();
        }
        const auto targets =
            request.contains("targets") ? targets_from_json(request.at("targets")) : default_targets(region);
        const auto n = request.value("n", kDefaultScenarioDraws);
        if (n < 1 || n > kMaxDistributionDraws)
            reject(400, "n must lie in [1, " + std::to_string(kMaxDistributionDraws) + "]");

        std::vector<ScenarioCell> cells;
        for (const auto& pkg : packages)
            for (const auto& b : bands) {
                ScenarioCell cell;
                cell.package = pkg.name;
                cell.bands = b;
                cell.spec = baseline_spec(space_, n, seed);
                apply_package(cell.spec, space_, pkg);
                apply_bands(cell.spec, space_, b);
                cell.name = pkg.name + "|" + b.label();
                cell.spec.name = cell.name;
                cells.push_back(std::move(cell));
            }
        const auto reports = compare_scenarios(cells, store_.require_all(target_keys(targets)), targets);
        auto body = reports_to_json(reports);
        for (std::size_t c = 0; c < cells.size(); ++c) body["cells"][c]["band_selection"] = bands_to_json(cells[c].bands);
        body["seed"] = seed;
        body["n"] = n;
        body["region"] = region;
        body["targets"] = to_json(targets)["targets"];
        return ServiceResponse{200, std::move(body)};
    });
}

ServiceResponse DecisionService::sensitivity(const std::map<std::string, std::string>& query) const {
    return guarded(ready_, [&] {
        auto get = [&](const char* name) -> std::optional<std::string> {
            auto it = query.find(name);
            if (it == query.end() || it->second.empty()) return std::nullopt;
            return it->second;
        };
        const auto output = get("output");
        const auto region = get("region").value_or("global");
        std::optional<int> year;
        if (auto y = get("year")) {
            const double v = parse_double(*y, "year");
            if (v != std::floor(v)) reject(400, "year must be an integer");
            year = static_cast<int>(v);
        }
        const double threshold = get("threshold") ? parse_double(*get("threshold"), "threshold") : 0.001;
        std::size_t points = kDefaultSweepPoints;
        if (auto m = get("points")) points = static_cast<std::size_t>(parse_double(*m, "points"));

        std::vector<const GpModel*> models;
        std::string years;
        for (const auto& k : store_.keys()) {
            if (k.region != region || (output && k.output != *output)) continue;
            if (year && k.year != *year) {
                years += (years.empty() ? "" : ", ") + std::to_string(k.year);
                continue;
            }
            models.push_back(&store_.require(k));
        }
        if (models.empty())
            reject(404, "no emulator matches region=" + region + (output ? " output=" + *output : "") +
                            (year ? " year=" + std::to_string(*year) : "") +
                            (years.empty() ? "" : " (available years: " + years + ")"));
        const auto table = sensitivity_table(models, space_, default_baseline(space_), points);
        auto body = sensitivity_to_json(table, threshold);
        body["baseline"] = "current policy, techno-economic inputs at 0.5";
        return ServiceResponse{200, std::move(body)};
    });
}

ServiceResponse DecisionService::post(const std::string& path, const std::string& body) const {
    nlohmann::json request;
    try {
        request = body.empty() ? nlohmann::json::object() : nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        return {400, {{"error", std::string("body is not valid JSON: ") + e.what()}}};
    }
    if (!request.is_object()) return {400, {{"error", "body must be a JSON object"}}};
    if (path == "/api/predict") return predict(request);
    if (path == "/api/distribution") return distribution(request);
    if (path == "/api/robustness") return robustness(request);
    return {404, {{"error", "no endpoint " + path}}};
}

} // namespace powerem
