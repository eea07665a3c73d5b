#include "powerem/workflow.hpp"

#include "powerem/batch.hpp"
#include "powerem/error.hpp"
#include "powerem/util.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace fs = std::filesystem;

namespace powerem {

namespace {

std::string relative_name(const Workspace& ws, const fs::path& artifact) {
    return fs::relative(artifact, ws.root).generic_string();
}

nlohmann::json read_json(const fs::path& path) {
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::corrupt_data, path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    fs::create_directories(path.parent_path());
    write_file_atomic(path, j.dump(2) + "\n");
}

// Commas would break the unquoted CSV, so messages are flattened.
std::string csv_safe(std::string text) {
    for (auto& c : text)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return text;
}

const std::vector<std::string> kOutputHeader{"design_index", "design_hash", "status", "region",
                                             "output",       "year",        "value",  "message"};

} // namespace

void RunManifest::record(const Workspace& ws, const fs::path& artifact) {
    hashes[relative_name(ws, artifact)] = sha256_file(artifact);
}

void RunManifest::verify(const Workspace& ws) const {
    for (const auto& [name, hash] : hashes) {
        const auto path = ws.root / name;
        if (!fs::exists(path)) fail(ErrorCode::corrupt_data, "manifest lists " + name + " but the file is missing");
        if (sha256_file(path) != hash)
            fail(ErrorCode::corrupt_data, name + " changed since it was recorded in the manifest");
    }
}

nlohmann::json to_json(const RunManifest& m) {
    return {{"tool_version", m.tool_version}, {"hashes", m.hashes}, {"seeds", m.seeds}};
}

RunManifest manifest_from_json(const nlohmann::json& j) {
    try {
        RunManifest m;
        m.tool_version = j.at("tool_version").get<std::string>();
        m.hashes = j.at("hashes").get<std::map<std::string, std::string>>();
        m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::corrupt_data, std::string("malformed manifest: ") + e.what());
    }
}

RunManifest load_manifest(const Workspace& ws) {
    if (!fs::exists(ws.manifest())) return {};
    auto m = manifest_from_json(read_json(ws.manifest()));
    m.verify(ws);
    m.tool_version = kToolVersion;
    return m;
}

void save_manifest(const Workspace& ws, const RunManifest& manifest) {
    write_json(ws.manifest(), to_json(manifest));
}

void init_workspace(const Workspace& ws, const ParameterSpace& space, const SimConfig& config) {
    validate_config(config);
    fs::create_directories(ws.root);
    save_space(space, ws.space());
    save_sim_config(config, ws.sim_config());
    RunManifest m;
    m.record(ws, ws.space());
    m.record(ws, ws.sim_config());
    save_manifest(ws, m);
}

ParameterSpace load_workspace_space(const Workspace& ws) {
    if (!fs::exists(ws.space())) fail(ErrorCode::invalid_input, "no space.json in " + ws.root.string() + " (run init)");
    return load_space(ws.space());
}

SimConfig load_workspace_config(const Workspace& ws) {
    if (!fs::exists(ws.sim_config())) return default_sim_config();
    return load_sim_config(ws.sim_config());
}

Eigen::MatrixXd cmd_design(const Workspace& ws, std::size_t n, std::uint64_t seed) {
    if (n == 0) fail(ErrorCode::invalid_input, "--n must be at least 1");
    auto manifest = load_manifest(ws);
    const auto space = load_workspace_space(ws);
    const auto points = lhs_sample(n, space, seed).points;
    write_file_atomic(ws.design(), design_to_csv(space, points));
    manifest.record(ws, ws.design());
    manifest.seeds["design"] = seed;
    save_manifest(ws, manifest);
    return points;
}

std::string design_row_hash(const Eigen::RowVectorXd& row) {
    std::string text;
    for (Eigen::Index d = 0; d < row.size(); ++d) {
        if (d) text += ',';
        text += format_double(row(d));
    }
    return sha256_hex(text).substr(0, 16);
}

std::vector<ModelKey> all_output_keys(const SimConfig& config) {
    std::vector<std::string> regions{"global"};
    for (const auto& r : config.regions) regions.push_back(r.id);
    return expand_keys(regions, output_names(), config.report_years);
}

SimulateSummary cmd_simulate(const Workspace& ws, const SimulateOptions& options) {
    if (options.chunk == 0) fail(ErrorCode::invalid_input, "chunk size must be positive");
    auto manifest = load_manifest(ws);
    const auto space = load_workspace_space(ws);
    const auto config = load_workspace_config(ws);
    if (!fs::exists(ws.design())) fail(ErrorCode::invalid_input, "no design.csv in workspace (run design)");
    const auto design = design_from_csv(space, read_file(ws.design()));
    const auto keys = all_output_keys(config);
    const auto n = static_cast<std::size_t>(design.rows());

    std::vector<std::string> hashes(n);
    for (std::size_t i = 0; i < n; ++i) hashes[i] = design_row_hash(design.row(static_cast<Eigen::Index>(i)));

    // rows[i] holds the finished CSV rows for design point i
    std::vector<std::vector<std::vector<std::string>>> rows(n);
    SimulateSummary summary;
    summary.points = n;
    if (fs::exists(ws.sim_outputs())) {
        const auto previous = parse_csv(read_file(ws.sim_outputs()));
        if (previous.header == kOutputHeader) {
            std::map<std::size_t, std::vector<std::vector<std::string>>> by_index;
            for (const auto& r : previous.rows) {
                const auto idx = static_cast<std::size_t>(parse_double(r[0], "design_index"));
                if (idx < n && r[1] == hashes[idx]) by_index[idx].push_back(r);
            }
            for (auto& [idx, r] : by_index)
                if (r.size() == keys.size()) {
                    rows[idx] = std::move(r);
                    ++summary.reused;
                }
        }
    }

    // the file is about to change; its hash is re-recorded once every point is done
    manifest.hashes.erase(relative_name(ws, ws.sim_outputs()));
    save_manifest(ws, manifest);

    auto write_out = [&] {
        CsvTable t;
        t.header = kOutputHeader;
        for (const auto& point : rows)
            for (const auto& r : point) t.rows.push_back(r);
        fs::create_directories(ws.sim_outputs().parent_path());
        write_file_atomic(ws.sim_outputs(), to_csv(t));
    };

    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < n; ++i)
        if (rows[i].empty()) todo.push_back(i);
    if (options.limit > 0 && todo.size() > options.limit) todo.resize(options.limit);

    for (std::size_t start = 0; start < todo.size(); start += options.chunk) {
        const auto stop = std::min(todo.size(), start + options.chunk);
        Eigen::MatrixXd block(static_cast<Eigen::Index>(stop - start), design.cols());
        for (std::size_t k = start; k < stop; ++k)
            block.row(static_cast<Eigen::Index>(k - start)) = design.row(static_cast<Eigen::Index>(todo[k]));
        const auto runs = simulate_batch(config, space, block, options.exec);
        for (std::size_t k = start; k < stop; ++k) {
            const auto idx = todo[k];
            const auto& run = runs[k - start];
            auto& out = rows[idx];
            std::map<std::string, std::map<std::string, double>> cache;
            for (const auto& key : keys) {
                std::vector<std::string> r{std::to_string(idx), hashes[idx], "", key.region, key.output,
                                           std::to_string(key.year), "", ""};
                if (run.output) {
                    auto& values = cache[key.region + "@" + std::to_string(key.year)];
                    if (values.empty()) values = extract_outputs(*run.output, key.region, key.year);
                    r[2] = "ok";
                    r[6] = format_double(values.at(key.output));
                } else {
                    r[2] = "rejected";
                    r[7] = csv_safe(run.error);
                }
                out.push_back(std::move(r));
            }
            if (!run.output) ++summary.rejected;
            ++summary.simulated;
        }
        write_out();
    }
    if (todo.empty()) write_out();

    summary.complete = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return !r.empty(); });
    if (summary.complete) {
        manifest.record(ws, ws.sim_outputs());
        save_manifest(ws, manifest);
    }
    return summary;
}

TrainingSet training_from_workspace(const Workspace& ws, const ParameterSpace& space, const ModelKey& key) {
    const auto design = design_from_csv(space, read_file(ws.design()));
    if (!fs::exists(ws.sim_outputs())) fail(ErrorCode::invalid_input, "no sim/outputs.csv in workspace (run simulate)");
    const auto table = parse_csv(read_file(ws.sim_outputs()));
    if (table.header != kOutputHeader) fail(ErrorCode::corrupt_data, "sim/outputs.csv has an unexpected header");
    const auto year = std::to_string(key.year);
    std::vector<std::pair<std::size_t, double>> picked;
    for (const auto& r : table.rows) {
        if (r[3] != key.region || r[4] != key.output || r[5] != year || r[2] != "ok") continue;
        picked.emplace_back(static_cast<std::size_t>(parse_double(r[0], "design_index")), parse_double(r[6], "value"));
    }
    if (picked.empty()) fail(ErrorCode::not_found, "no simulated values for " + key.str());
    TrainingSet t;
    t.key = key;
    t.x.resize(static_cast<Eigen::Index>(picked.size()), design.cols());
    t.y.resize(static_cast<Eigen::Index>(picked.size()));
    for (std::size_t i = 0; i < picked.size(); ++i) {
        if (picked[i].first >= static_cast<std::size_t>(design.rows()))
            fail(ErrorCode::corrupt_data, "sim/outputs.csv references design row " + std::to_string(picked[i].first));
        t.x.row(static_cast<Eigen::Index>(i)) = design.row(static_cast<Eigen::Index>(picked[i].first));
        t.y(static_cast<Eigen::Index>(i)) = picked[i].second;
    }
    return t;
}

namespace {

nlohmann::json report_json(const ValidationReport& r) {
    return {{"rmse", r.rmse},
            {"coverage", r.coverage},
            {"n", r.means.size()},
            {"standardized_errors", r.standardized_errors}};
}

std::vector<std::string> space_ids(const ParameterSpace& space) {
    std::vector<std::string> ids;
    for (const auto& in : space.inputs) ids.push_back(in.id);
    return ids;
}

} // namespace

nlohmann::json to_json(const FitReport& r) {
    return {{"key", r.key.str()},
            {"train_size", r.train_size},
            {"test_size", r.test_size},
            {"test", report_json(r.test)},
            {"loo", report_json(r.loo)},
            {"log_marginal_likelihood", r.diagnostics.log_marginal_likelihood},
            {"restarts", r.diagnostics.restarts},
            {"failed_restarts", r.diagnostics.failed_restarts}};
}

std::vector<FitReport> cmd_fit(const Workspace& ws, const std::vector<ModelKey>& keys,
                               const FitCommandOptions& options) {
    if (keys.empty()) fail(ErrorCode::invalid_input, "no model keys selected");
    auto manifest = load_manifest(ws);
    const auto space = load_workspace_space(ws);
    const auto ids = space_ids(space);
    std::vector<FitReport> reports(keys.size());
    std::vector<GpModel> models(keys.size());
    std::vector<std::pair<TrainingSet, TrainingSet>> splits(keys.size());

    for_each_index(keys.size(), options.exec, [&](std::size_t k) {
        const auto all = training_from_workspace(ws, space, keys[k]);
        splits[k] = split(all, options.train_fraction, options.seed);
        FitOptions fo;
        fo.restarts = options.restarts;
        fo.seed = options.seed;
        fo.kernel = options.kernel;
        models[k] = fit(splits[k].first, fo);
        auto& r = reports[k];
        r.key = keys[k];
        r.train_size = splits[k].first.size();
        r.test_size = splits[k].second.size();
        r.test = test_validate(models[k], splits[k].second);
        r.loo = loo_validate(models[k]);
        r.diagnostics = models[k].diagnostics;
    });

    // files are written in key order after every fit has finished
    fs::create_directories(ws.models());
    for (std::size_t k = 0; k < keys.size(); ++k) {
        const auto stem = ws.models() / keys[k].str();
        save_model_file(models[k], ws.model(keys[k]));
        write_file_atomic(fs::path(stem.string() + ".train.csv"), training_to_csv(splits[k].first, ids));
        write_file_atomic(fs::path(stem.string() + ".test.csv"), training_to_csv(splits[k].second, ids));
        write_json(ws.reports() / (keys[k].str() + ".fit.json"), to_json(reports[k]));
        manifest.record(ws, ws.model(keys[k]));
        manifest.seeds["fit:" + keys[k].str()] = options.seed;
    }
    save_manifest(ws, manifest);
    return reports;
}

GpModel fit_training_csv(const fs::path& csv, const ParameterSpace& space, const ModelKey& key,
                         const FitOptions& options) {
    return fit(training_from_csv(read_file(csv), space_ids(space), key), options);
}

ValidateResult cmd_validate(const GpModel& model, const ParameterSpace& space,
                            const std::optional<fs::path>& test_csv) {
    ValidateResult r;
    r.loo = loo_validate(model);
    r.gated_coverage = r.loo.coverage;
    if (test_csv) {
        const auto test = training_from_csv(read_file(*test_csv), space_ids(space), model.key());
        r.test = test_validate(model, test);
        r.gated_coverage = r.test->coverage;
    }
    r.passed = r.gated_coverage >= kCoverageGate;
    return r;
}

nlohmann::json to_json(const ValidateResult& r) {
    nlohmann::json j = {{"loo", report_json(r.loo)},
                        {"gated_coverage", r.gated_coverage},
                        {"gate", kCoverageGate},
                        {"passed", r.passed}};
    if (r.test) j["test"] = report_json(*r.test);
    return j;
}

ModelStore ModelStore::load_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) fail(ErrorCode::invalid_input, "models directory " + dir.string() + " does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    ModelStore store;
    for (const auto& f : files) store.add(load_model_file(f));
    return store;
}

void ModelStore::add(GpModel model) {
    auto key = model.key();
    models_.insert_or_assign(std::move(key), std::move(model));
}

const GpModel& ModelStore::require(const ModelKey& key) const {
    if (auto it = models_.find(key); it != models_.end()) return it->second;
    std::string years;
    for (const auto& [k, m] : models_)
        if (k.region == key.region && k.output == key.output) years += (years.empty() ? "" : ", ") + std::to_string(k.year);
    fail(ErrorCode::not_found, "no emulator for region=" + key.region + " output=" + key.output + " year=" +
                                   std::to_string(key.year) +
                                   (years.empty() ? " (no years available)" : " (available years: " + years + ")"));
}

std::vector<const GpModel*> ModelStore::require_all(const std::vector<ModelKey>& keys) const {
    std::vector<const GpModel*> out;
    for (const auto& k : keys) out.push_back(&require(k));
    return out;
}

std::vector<ModelKey> ModelStore::keys() const {
    std::vector<ModelKey> out;
    for (const auto& [k, m] : models_) out.push_back(k);
    return out;
}

nlohmann::json prediction_json(const GpModel& model, const InputVector& x) {
    const auto p = model.predict(x);
    return {{"key", model.key().str()},
            {"region", model.key().region},
            {"output", model.key().output},
            {"year", model.key().year},
            {"mean", p.mean},
            {"sd", std::sqrt(p.variance)},
            {"units", output_units(model.key().output)}};
}

std::vector<ModelKey> expand_keys(const std::vector<std::string>& regions, const std::vector<std::string>& outputs,
                                  const std::vector<int>& years) {
    std::vector<ModelKey> keys;
    for (const auto& r : regions)
        for (const auto& o : outputs)
            for (int y : years) keys.push_back({r, o, y});
    return keys;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    for (const auto& part : split(text, ',')) {
        auto t = trim(part);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

std::vector<int> parse_years(const std::string& text) {
    std::vector<int> out;
    for (const auto& part : split_list(text)) {
        const double v = parse_double(part, "year");
        if (v != std::floor(v)) fail(ErrorCode::invalid_input, "year '" + part + "' is not an integer");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

InputVector parse_point(const std::string& text, std::size_t dimension) {
    const auto parts = split_list(text);
    if (parts.size() != dimension)
        fail(ErrorCode::invalid_input,
             "point has " + std::to_string(parts.size()) + " values, space has " + std::to_string(dimension));
    InputVector x(static_cast<Eigen::Index>(dimension));
    for (std::size_t d = 0; d < dimension; ++d) {
        try {
            x(static_cast<Eigen::Index>(d)) = parse_double(parts[d], "coordinate");
        } catch (const Error&) {
            fail(ErrorCode::invalid_input, "coordinate " + std::to_string(d) + " ('" + parts[d] + "') is not a number");
        }
    }
    return x;
}

SensitivityTable cmd_sa(const Workspace& ws, const ModelStore& store, const std::vector<ModelKey>& keys,
                        std::size_t points, double threshold, Exec exec) {
    const auto space = load_workspace_space(ws);
    const auto models = store.require_all(keys);
    const auto table = sensitivity_table(models, space, default_baseline(space), points, SensitivityMetric::range, exec);
    fs::create_directories(ws.reports());
    write_file_atomic(ws.reports() / "sensitivity.csv", sensitivity_to_csv(table, threshold));
    write_json(ws.reports() / "sensitivity.json", sensitivity_to_json(table, threshold));
    return table;
}

PropagateResult cmd_propagate(const Workspace& ws, const ModelStore& store, const ScenarioSpec& spec,
                              const std::vector<ModelKey>& keys, Exec exec) {
    auto manifest = load_manifest(ws);
    const auto space = load_workspace_space(ws);
    spec.validate(space.dimension());
    PropagateResult r;
    r.spec = spec;
    const auto samples = sample_scenario(spec);
    r.draws = propagate(store.require_all(keys), samples, spec.seed, exec);
    r.summary = robustness(r.draws, {}, spec.seed);
    r.summary.cell = spec.name;
    fs::create_directories(ws.reports());
    write_file_atomic(ws.reports() / "draws.csv", draws_to_csv(r.draws));
    write_json(ws.reports() / "propagate.json",
               {{"scenario", to_json(spec, space)}, {"report", to_json(r.summary)}});
    manifest.seeds["propagate"] = spec.seed;
    save_manifest(ws, manifest);
    return r;
}

BandSelection parse_band_selection(const std::string& text) {
    BandSelection b;
    for (const auto& part : split_list(text)) {
        const auto eq = part.find('=');
        if (eq == std::string::npos) fail(ErrorCode::invalid_input, "band '" + part + "' must look like name=value");
        const auto name = trim(part.substr(0, eq));
        const auto value = trim(part.substr(eq + 1));
        if (name == "lead") b.lead = lead_band_from(value);
        else if (name == "lead_ways") b.lead_ways = static_cast<int>(parse_double(value, "lead_ways"));
        else if (name == "discount") b.discount = half_from(value);
        else if (name == "demand") b.demand = half_from(value);
        else fail(ErrorCode::invalid_input, "unknown band '" + name + "' (lead, lead_ways, discount, demand)");
    }
    if (b.lead) lead_band_range(*b.lead, b.lead_ways);
    return b;
}

std::vector<BandSelection> parse_band_list(const std::string& text) {
    if (trim(text) == "full-grid") {
        std::vector<BandSelection> out;
        for (auto lead : {LeadBand::fast, LeadBand::medium, LeadBand::slow})
            for (auto discount : {Half::low, Half::high})
                for (auto demand : {Half::low, Half::high}) {
                    BandSelection b;
                    b.lead = lead;
                    b.discount = discount;
                    b.demand = demand;
                    out.push_back(b);
                }
        return out;
    }
    std::vector<BandSelection> out;
    for (const auto& part : split(text, ';')) out.push_back(parse_band_selection(part));
    return out;
}

std::vector<ScenarioCell> build_cells(const ParameterSpace& space, const RobustnessCommand& command) {
    auto packages = regional_packages(space, command.region);
    if (!command.packages.empty()) {
        std::vector<PolicyPackage> chosen;
        for (const auto& name : command.packages) {
            auto it = std::find_if(packages.begin(), packages.end(), [&](const auto& p) { return p.name == name; });
            if (it == packages.end())
                fail(ErrorCode::invalid_input,
                     "unknown package '" + name + "' (baseline, Sub-CP, CP-Phase, Sub-CP-Phase, Sub-Phase)");
            chosen.push_back(*it);
        }
        packages = std::move(chosen);
    }
    const auto bands = command.bands.empty() ? parse_band_list("full-grid") : command.bands;
    std::vector<ScenarioCell> cells;
    for (const auto& pkg : packages)
        for (const auto& b : bands) {
            ScenarioCell cell;
            cell.package = pkg.name;
            cell.bands = b;
            cell.spec = baseline_spec(space, command.n, command.seed);
            apply_package(cell.spec, space, pkg);
            apply_bands(cell.spec, space, b);
            cell.name = pkg.name + "|" + b.label();
            cell.spec.name = cell.name;
            cells.push_back(std::move(cell));
        }
    return cells;
}

std::vector<RobustnessReport> cmd_robustness(const Workspace& ws, const ModelStore& store,
                                             const RobustnessCommand& command) {
    auto manifest = load_manifest(ws);
    const auto space = load_workspace_space(ws);
    const auto targets = command.targets.empty() ? default_targets(command.region) : command.targets;
    const auto cells = build_cells(space, command);
    const auto reports = compare_scenarios(cells, store.require_all(target_keys(targets)), targets, command.exec);
    fs::create_directories(ws.reports());
    write_file_atomic(ws.reports() / "robustness.csv", reports_to_csv(reports));
    auto j = reports_to_json(reports);
    j["targets"] = to_json(targets)["targets"];
    write_json(ws.reports() / "robustness.json", j);
    manifest.seeds["robustness"] = command.seed;
    save_manifest(ws, manifest);
    return reports;
}

} // namespace powerem
