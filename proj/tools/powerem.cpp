// Command-line workflow: design -> simulate -> fit -> validate -> sa / propagate / robustness.
#include "powerem/error.hpp"
#include "powerem/parallel.hpp"
#include "powerem/util.hpp"
#include "powerem/workflow.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace fs = std::filesystem;
using namespace powerem;

namespace {

struct Common {
    std::string workspace = ".";
    std::string out;
    int jobs = 0;

    Workspace ws() const {
        Workspace w{workspace, {}};
        if (!out.empty()) w.reports_override = out;
        return w;
    }
    Exec exec() const {
        set_max_threads(jobs);
        return jobs == 1 ? Exec::serial : Exec::parallel;
    }
};

struct KeySelection {
    std::string regions = "global";
    std::string outputs = "emissions_Mt";
    std::string years = "2050";

    std::vector<ModelKey> keys() const {
        auto r = split_list(regions);
        auto o = split_list(outputs);
        auto y = parse_years(years);
        if (r.empty() || o.empty() || y.empty()) fail(ErrorCode::invalid_input, "--regions, --outputs and --years must be non-empty");
        for (const auto& name : o)
            if (std::find(output_names().begin(), output_names().end(), name) == output_names().end())
                fail(ErrorCode::invalid_input, "unknown output '" + name + "'");
        return expand_keys(r, o, y);
    }
};

void add_keys(CLI::App* cmd, KeySelection& sel) {
    cmd->add_option("--regions", sel.regions, "Comma-separated regions (global, CN, US, IN, RGN, RGS)")->capture_default_str();
    cmd->add_option("--outputs", sel.outputs, "Comma-separated output names")->capture_default_str();
    cmd->add_option("--years", sel.years, "Comma-separated report years")->capture_default_str();
}

ModelStore load_store(const Workspace& ws, const std::vector<ModelKey>& keys) {
    ModelStore store;
    for (const auto& k : keys) {
        const auto path = ws.model(k);
        if (!fs::exists(path))
            fail(ErrorCode::not_found, "missing model file for region=" + k.region + " output=" + k.output +
                                           " year=" + std::to_string(k.year) + " (" + path.string() + ")");
        store.add(load_model_file(path));
    }
    return store;
}

void print(const nlohmann::json& j) {
    std::cout << j.dump(2) << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"powerem: emulator-based policy robustness workflow"};
    app.require_subcommand(1);
    Common common;
    app.add_option("-w,--workspace", common.workspace, "Workspace directory")->capture_default_str();
    app.add_option("--jobs", common.jobs, "Worker threads (0 = all cores, 1 = serial reference path)");

    int rc = 0;

    // init
    std::string space_file, config_file;
    auto* init = app.add_subcommand("init", "Create a workspace with the default or given space and simulator config");
    init->add_option("--space", space_file, "Parameter space JSON (default: built-in 30-input space)");
    init->add_option("--sim-config", config_file, "Simulator configuration JSON (default: desk calibration)");
    init->callback([&] {
        const auto space = space_file.empty() ? default_space() : load_space(space_file);
        const auto config = config_file.empty() ? default_sim_config() : load_sim_config(config_file);
        init_workspace(common.ws(), space, config);
        std::cout << "initialized " << common.workspace << " (" << space.dimension() << " inputs)\n";
    });

    // design
    std::size_t n = 500;
    std::uint64_t seed = 0;
    std::string design_out;
    auto* design = app.add_subcommand("design", "Write a Latin hypercube design");
    design->add_option("--n", n, "Design size")->capture_default_str();
    design->add_option("--seed", seed, "Sampling seed")->capture_default_str();
    design->add_option("--design", design_out, "Also copy the design to this path");
    design->callback([&] {
        const auto points = cmd_design(common.ws(), n, seed);
        if (!design_out.empty()) write_file_atomic(design_out, read_file(common.ws().design()));
        std::cout << "design: " << points.rows() << " x " << points.cols() << " -> " << common.ws().design().string()
                  << '\n';
    });

    // simulate
    SimulateOptions sim_opts;
    auto* simulate = app.add_subcommand("simulate", "Run the simulator over the design (resumable)");
    simulate->add_option("--chunk", sim_opts.chunk, "Design points per checkpoint")->capture_default_str();
    simulate->add_option("--limit", sim_opts.limit, "Stop after this many new points (0 = all)");
    simulate->callback([&] {
        sim_opts.exec = common.exec();
        const auto s = cmd_simulate(common.ws(), sim_opts);
        std::cout << "simulate: " << s.points << " points, " << s.reused << " reused, " << s.simulated
                  << " simulated, " << s.rejected << " rejected" << (s.complete ? "" : " (incomplete)") << '\n';
    });

    // sim-one
    std::string point;
    auto* sim_one = app.add_subcommand("sim-one", "Simulate one normalized point and print the report years");
    sim_one->add_option("--point", point, "Comma-separated coordinates in space order (default: baseline)");
    sim_one->callback([&] {
        const auto ws = common.ws();
        const auto space = load_workspace_space(ws);
        const auto config = load_workspace_config(ws);
        std::string text = point;
        if (text.empty()) {
            for (std::size_t d = 0; d < space.dimension(); ++d)
                text += (d ? "," : "") + std::string(space.inputs[d].kind == InputKind::policy
                                                          ? format_double(current_policy_coordinate(space.inputs[d]))
                                                          : "0.5");
        }
        const auto out = powerem::simulate(config, denormalize(space, parse_point(text, space.dimension())));
        print(sim_summary_json(out));
    });

    // fit
    KeySelection fit_keys;
    FitCommandOptions fit_opts;
    std::string kernel_name = "se", training_csv, model_out, key_text;
    auto* fitc = app.add_subcommand("fit", "Fit emulators (80/20 split) from simulated outputs");
    add_keys(fitc, fit_keys);
    fitc->add_option("--seed", fit_opts.seed, "Split and restart seed")->capture_default_str();
    fitc->add_option("--restarts", fit_opts.restarts, "Optimizer starting points")->capture_default_str();
    fitc->add_option("--train-fraction", fit_opts.train_fraction, "Training share")->capture_default_str();
    fitc->add_option("--kernel", kernel_name, "se or matern52")->capture_default_str();
    fitc->add_option("--training", training_csv, "Fit on this CSV instead of the workspace (needs --key, --model-out)");
    fitc->add_option("--key", key_text, "Model key region__output__year for --training");
    fitc->add_option("--model-out", model_out, "Model path for --training");
    fitc->callback([&] {
        if (kernel_name == "se") fit_opts.kernel = KernelKind::squared_exponential;
        else if (kernel_name == "matern52") fit_opts.kernel = KernelKind::matern52;
        else fail(ErrorCode::invalid_input, "--kernel must be se or matern52");
        if (!training_csv.empty()) {
            if (key_text.empty() || model_out.empty())
                fail(ErrorCode::invalid_input, "--training needs --key and --model-out");
            FitOptions fo;
            fo.restarts = fit_opts.restarts;
            fo.seed = fit_opts.seed;
            fo.kernel = fit_opts.kernel;
            const auto model = fit_training_csv(training_csv, load_workspace_space(common.ws()),
                                                parse_model_key(key_text), fo);
            save_model_file(model, model_out);
            std::cout << "fit " << model.key().str() << ": n=" << model.size()
                      << " lml=" << format_double(model.diagnostics.log_marginal_likelihood) << '\n';
            return;
        }
        fit_opts.exec = common.exec();
        for (const auto& r : cmd_fit(common.ws(), fit_keys.keys(), fit_opts))
            std::cout << "fit " << r.key.str() << ": train=" << r.train_size << " test=" << r.test_size
                      << " test_rmse=" << format_double(r.test.rmse) << " test_coverage=" << format_double(r.test.coverage)
                      << " loo_coverage=" << format_double(r.loo.coverage) << '\n';
    });

    // validate
    std::string model_path, test_path;
    auto* validate = app.add_subcommand("validate", "Report RMSE and 95% coverage; exit 2 below 0.80 coverage");
    validate->add_option("--key", key_text, "Model key region__output__year (workspace model and test CSV)");
    validate->add_option("--model", model_path, "Model file (overrides --key lookup)");
    validate->add_option("--test", test_path, "Held-out CSV (default: the workspace test split if present)");
    validate->callback([&] {
        const auto ws = common.ws();
        fs::path mp = model_path;
        std::optional<fs::path> tp;
        if (!test_path.empty()) tp = test_path;
        if (mp.empty()) {
            if (key_text.empty()) fail(ErrorCode::invalid_input, "validate needs --key or --model");
            const auto key = parse_model_key(key_text);
            mp = ws.model(key);
            if (!fs::exists(mp))
                fail(ErrorCode::not_found, "missing model file for region=" + key.region + " output=" + key.output +
                                               " year=" + std::to_string(key.year));
            const fs::path default_test = ws.models() / (key.str() + ".test.csv");
            if (!tp && fs::exists(default_test)) tp = default_test;
        }
        const auto model = load_model_file(mp);
        const auto result = cmd_validate(model, load_workspace_space(ws), tp);
        std::cout << model.key().str() << ": loo_rmse=" << format_double(result.loo.rmse)
                  << " loo_coverage=" << format_double(result.loo.coverage);
        if (result.test)
            std::cout << " test_rmse=" << format_double(result.test->rmse)
                      << " test_coverage=" << format_double(result.test->coverage);
        std::cout << (result.passed ? " PASS" : " FAIL") << '\n';
        if (!result.passed) rc = exit_code(ErrorCode::validation_failed);
    });

    // predict
    std::vector<std::string> predict_keys;
    auto* predictc = app.add_subcommand("predict", "Emulator mean and sd at one point");
    predictc->add_option("--key", predict_keys, "Model key(s) region__output__year")->required();
    predictc->add_option("--point", point, "Comma-separated coordinates (default: current policy, techno at 0.5)");
    predictc->callback([&] {
        const auto ws = common.ws();
        const auto space = load_workspace_space(ws);
        std::vector<ModelKey> keys;
        for (const auto& k : predict_keys) keys.push_back(parse_model_key(k));
        const auto store = load_store(ws, keys);
        InputVector x(static_cast<Eigen::Index>(space.dimension()));
        if (point.empty()) {
            for (std::size_t d = 0; d < space.dimension(); ++d)
                x(static_cast<Eigen::Index>(d)) =
                    space.inputs[d].kind == InputKind::policy ? current_policy_coordinate(space.inputs[d]) : 0.5;
        } else {
            x = parse_point(point, space.dimension());
        }
        nlohmann::json out = nlohmann::json::array();
        for (const auto& k : keys) out.push_back(prediction_json(store.require(k), x));
        print({{"x", std::vector<double>(x.data(), x.data() + x.size())}, {"predictions", out}});
    });

    // sa
    KeySelection sa_keys;
    std::size_t sweep = kDefaultSweepPoints;
    double threshold = 0.001;
    auto* sa = app.add_subcommand("sa", "One-at-a-time relative sensitivity table");
    add_keys(sa, sa_keys);
    sa->add_option("--points", sweep, "Sweep grid points (>= 11)")->capture_default_str();
    sa->add_option("--threshold", threshold, "Hide policy inputs below this index")->capture_default_str();
    sa->add_option("--out", common.out, "Report directory (default: <workspace>/reports)");
    sa->callback([&] {
        const auto ws = common.ws();
        const auto keys = sa_keys.keys();
        const auto table = cmd_sa(ws, load_store(ws, keys), keys, sweep, threshold, common.exec());
        std::cout << "sa: " << table.inputs.size() << " inputs x " << table.columns.size() << " columns -> "
                  << (ws.reports() / "sensitivity.csv").string() << '\n';
        for (const auto& e : rank_inputs(table)) std::cout << "  " << e.input << ' ' << format_double(e.average) << '\n';
    });

    // propagate
    KeySelection prop_keys;
    std::string scenario_file, bands_text, packages_text;
    std::size_t draws = kDefaultScenarioDraws;
    auto* prop = app.add_subcommand("propagate", "Sample a scenario and draw emulator outputs");
    add_keys(prop, prop_keys);
    prop->add_option("--scenario", scenario_file, "Scenario JSON (default: baseline)");
    prop->add_option("--n", draws, "Draws")->capture_default_str();
    prop->add_option("--seed", seed, "Sampling seed")->capture_default_str();
    prop->add_option("--bands", bands_text, "Band selection, e.g. lead=fast,discount=low");
    prop->add_option("--out", common.out, "Report directory (default: <workspace>/reports)");
    prop->callback([&] {
        const auto ws = common.ws();
        const auto space = load_workspace_space(ws);
        ScenarioSpec spec;
        if (scenario_file.empty()) {
            spec = baseline_spec(space, draws, seed);
        } else {
            spec = scenario_from_json(nlohmann::json::parse(read_file(scenario_file)), space);
            if (prop->count("--n")) spec.n = draws;
            if (prop->count("--seed")) spec.seed = seed;
        }
        if (!bands_text.empty()) apply_bands(spec, space, parse_band_selection(bands_text));
        const auto keys = prop_keys.keys();
        const auto r = cmd_propagate(ws, load_store(ws, keys), spec, keys, common.exec());
        for (const auto& s : r.summary.summaries)
            std::cout << s.key.str() << ": q05=" << format_double(s.q05) << " median=" << format_double(s.median)
                      << " q95=" << format_double(s.q95) << '\n';
    });

    // robustness
    RobustnessCommand rob;
    std::string targets_file;
    std::string rob_bands = "full-grid";
    auto* robc = app.add_subcommand("robustness", "Score policy packages against targets over band cells");
    robc->add_option("--region", rob.region, "Region whose packages and targets are scored")->capture_default_str();
    robc->add_option("--packages", packages_text, "Comma-separated package names (default: all five)");
    robc->add_option("--bands", rob_bands, "full-grid, or ';'-separated selections like lead=fast,discount=low")
        ->capture_default_str();
    robc->add_option("--targets", targets_file, "Target set JSON (default: built-in targets)");
    robc->add_option("--n", rob.n, "Draws per cell")->capture_default_str();
    robc->add_option("--seed", rob.seed, "Seed shared by every cell")->capture_default_str();
    robc->add_option("--out", common.out, "Report directory (default: <workspace>/reports)");
    robc->callback([&] {
        rob.packages = split_list(packages_text);
        rob.bands = parse_band_list(rob_bands);
        if (!targets_file.empty()) rob.targets = targets_from_json(nlohmann::json::parse(read_file(targets_file)));
        rob.exec = common.exec();
        const auto ws = common.ws();
        const auto targets = rob.targets.empty() ? default_targets(rob.region) : rob.targets;
        const auto reports = cmd_robustness(ws, load_store(ws, target_keys(targets)), rob);
        std::cout << "robustness: " << reports.size() << " cells -> " << (ws.reports() / "robustness.csv").string()
                  << '\n';
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_code(ErrorCode::invalid_input);
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
        return exit_code(e.code());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error (invalid_input): " << e.what() << '\n';
        return exit_code(ErrorCode::invalid_input);
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error (io): " << e.what() << '\n';
        return exit_code(ErrorCode::invalid_input);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(ErrorCode::numerical_failure);
    }
    return rc;
}
