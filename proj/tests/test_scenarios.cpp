#include "powerem/batch.hpp"
#include "powerem/error.hpp"
#include "powerem/scenarios.hpp"
#include "powerem/sensitivity.hpp"
#include "powerem/util.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <random>
#include <set>

using namespace powerem;

namespace {

const ParameterSpace& space() {
    static const ParameterSpace s = default_space();
    return s;
}

// Small emulators for the default India 2030 targets, trained on direct simulations.
const std::vector<GpModel>& target_models() {
    static const std::vector<GpModel> models = [] {
        const auto config = default_sim_config();
        const auto design = lhs_sample(48, space(), 13).points;
        const auto runs = simulate_batch(config, space(), design, Exec::parallel);
        std::vector<GpModel> out;
        for (const auto& key : target_keys(default_targets())) {
            TrainingSet t;
            t.x = design;
            t.y = collect_output(runs, key.region, key.output, key.year);
            t.key = key;
            FitOptions o;
            o.restarts = 2;
            out.push_back(fit(t, o));
        }
        return out;
    }();
    return models;
}

std::vector<const GpModel*> pointers(const std::vector<GpModel>& models) {
    std::vector<const GpModel*> p;
    for (const auto& m : models) p.push_back(&m);
    return p;
}

double median_of(const Eigen::VectorXd& v) { return quantile({v.data(), v.data() + v.size()}, 0.5); }

} // namespace

TEST_CASE("baseline spec varies techno inputs and holds policy at current level") {
    const auto spec = baseline_spec(space());
    CHECK(spec.n == 20000);
    CHECK(spec.inputs.size() == 30);
    for (std::size_t d = 0; d < 30; ++d) {
        const auto& in = space().inputs[d];
        const auto& dist = spec.inputs[d];
        if (in.kind == InputKind::policy) {
            CHECK(dist.kind == DistributionKind::fixed);
            CHECK(dist.value == (in.special_mapping == SpecialMapping::us_rollback ? 0.5 : 0.0));
        } else {
            CHECK(dist.kind == DistributionKind::truncated_normal);
            CHECK(dist.mean == 0.5);
            CHECK(dist.sd == doctest::Approx(1.0 / 6.0));
        }
    }
}

TEST_CASE("current policy really is current policy") {
    const auto& s = space();
    InputVector u(30);
    for (std::size_t d = 0; d < 30; ++d)
        u(static_cast<Eigen::Index>(d)) =
            s.inputs[d].kind == InputKind::policy ? current_policy_coordinate(s.inputs[d]) : 0.5;
    const auto phys = denormalize(s, u);
    const auto& us = phys.policy.at("US");
    CHECK(us.feed_in_tariff_for("solar") == doctest::Approx(0.0));
    CHECK(us.subsidy_for("nuclear") == 0.0);
    CHECK(ambition_coordinate(s.inputs[s.require_index("us_subsidy_fit")], 1.0) == 1.0);
    CHECK(ambition_coordinate(s.inputs[s.require_index("us_subsidy_fit")], 0.5) == 0.75);
    CHECK(ambition_coordinate(s.inputs[s.require_index("in_subsidy_fit")], 0.5) == 0.5);
}

TEST_CASE("sampling: point mass, subranges and truncated normal") {
    auto spec = baseline_spec(space(), 500, 3);
    for (auto& d : spec.inputs) d = InputDistribution::fixed_at(0.25);
    const auto fixed = sample_scenario(spec);
    CHECK(fixed.rows() == 500);
    CHECK((fixed.array() == 0.25).all());

    spec = baseline_spec(space(), 2000, 3);
    BandSelection slow;
    slow.lead = LeadBand::slow;
    apply_bands(spec, space(), slow);
    const auto s = sample_scenario(spec);
    for (const auto& id : lead_input_ids()) {
        const auto col = s.col(static_cast<Eigen::Index>(space().require_index(id)));
        CHECK(col.minCoeff() >= 2.0 / 3.0);
        CHECK(col.maxCoeff() <= 1.0);
    }
    const auto coal = s.col(static_cast<Eigen::Index>(space().require_index("coal_price")));
    CHECK(coal.minCoeff() >= 0.0);
    CHECK(coal.maxCoeff() <= 1.0);
    CHECK(coal.mean() == doctest::Approx(0.5).epsilon(0.03));
    CHECK(sample_scenario(spec) == s);

    auto bad = spec;
    bad.inputs[0] = InputDistribution::uniform_on(0.6, 0.4);
    CHECK_THROWS_AS(sample_scenario(bad), Error);
}

TEST_CASE("band ranges") {
    CHECK(lead_band_range(LeadBand::slow, 3) == std::pair{2.0 / 3.0, 1.0});
    CHECK(lead_band_range(LeadBand::fast, 2) == std::pair{0.0, 0.5});
    CHECK_THROWS_AS(lead_band_range(LeadBand::medium, 2), Error);
    CHECK(lead_band_from("low") == LeadBand::slow);
    BandSelection b;
    b.lead = LeadBand::fast;
    b.demand = Half::high;
    CHECK(b.label() == "lead=fast;discount=any;demand=high");
}

TEST_CASE("propagation: degenerate variance, law of large numbers, determinism") {
    const auto& models = target_models();
    const auto& m = models.front();
    const auto probe = m.x().topRows(20);
    Eigen::MatrixXd samples(2000, 30);
    for (Eigen::Index i = 0; i < 2000; ++i) samples.row(i) = probe.row(i % 20);
    const auto draws = propagate({&m}, samples, 5).at(m.key());
    for (Eigen::Index i = 0; i < 2000; ++i) {
        const auto p = m.predict(samples.row(i).transpose());
        CHECK(std::abs(draws(i) - p.mean) <= 6 * std::sqrt(p.variance) + 1e-12);
    }

    const auto x = sample_scenario(baseline_spec(space(), 20000, 8));
    const auto big = propagate(pointers(models), x, 8);
    for (const auto& model : models) {
        Eigen::VectorXd means, vars;
        predict_batch(model, x, means, vars);
        const auto& d = big.at(model.key());
        const double sd = std::sqrt((d.array() - d.mean()).square().sum() / (d.size() - 1.0));
        CHECK(std::abs(d.mean() - means.mean()) <= 3 * sd / std::sqrt(20000.0));
    }
    const auto again = propagate(pointers(models), x, 8, Exec::parallel);
    for (const auto& [k, v] : big) CHECK(again.at(k) == v);

    // a key's draws do not depend on which other models are propagated with it
    const auto alone = propagate({&models[2]}, x, 8);
    CHECK(alone.at(models[2].key()) == big.at(models[2].key()));

    CHECK_THROWS_AS(propagate({&m}, Eigen::MatrixXd::Zero(3, 29), 1), Error);
}

TEST_CASE("robustness proportions") {
    const ModelKey k{"IN", "emissions_Mt", 2030};
    Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(1001, 0.0, 500.0);
    const DrawSet draws{{k, v}};
    Target upper{"cap", {k}, Direction::at_most, 900.0, "MtCO2/yr", 1.0};
    auto rep = robustness(draws, {upper});
    CHECK(rep.targets[0].proportion == 1.0);
    CHECK(rep.draws == 1001);

    Rng rng = make_rng(1, "median");
    std::normal_distribution<double> g(10.0, 3.0);
    Eigen::VectorXd w(999);
    for (auto& x : w) x = g(rng);
    Target med{"median", {k}, Direction::at_least, median_of(w), "", 1.0};
    rep = robustness({{k, w}}, {med});
    CHECK(std::abs(rep.targets[0].proportion - 0.5) <= 1.0 / 999.0);

    const auto vacuous = robustness(draws, {});
    CHECK(vacuous.targets.empty());
    REQUIRE(vacuous.summaries.size() == 1);
    CHECK(vacuous.summaries[0].median == doctest::Approx(250.0));
    CHECK_THROWS_AS(robustness(DrawSet{}, {upper}), Error);
}

TEST_CASE("capacity target sums solar and onshore per draw") {
    const ModelKey solar{"IN", "solar_capacity_GW", 2030}, wind{"IN", "onshore_capacity_GW", 2030};
    const Eigen::Vector4d s(100, 200, 300, 392), w(293, 193, 92, 0.5);
    const auto targets = default_targets("IN", 2030);
    CHECK(targets[0].threshold == 393.0);
    const auto rep = robustness({{solar, s}, {wind, w}}, {targets[0]});
    // sums 393, 393, 392, 392.5
    CHECK(rep.targets[0].met == 2);
    CHECK(rep.targets[0].proportion == 0.5);
}

TEST_CASE("non-finite draws are excluded and counted") {
    const ModelKey k{"IN", "emissions_Mt", 2030};
    Eigen::Vector4d v(1.0, std::nan(""), 3.0, 4.0);
    const auto rep = robustness({{k, v}}, {{"t", {k}, Direction::at_least, 2.0, "", 1.0}});
    CHECK(rep.rejected == 1);
    CHECK(rep.draws == 3);
    CHECK(rep.targets[0].proportion == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("package-band grid and cell comparison") {
    const auto cells = package_band_grid(space(), "IN", 300, 4);
    CHECK(cells.size() == 60);
    std::set<std::string> names, packages;
    for (const auto& c : cells) {
        names.insert(c.name);
        packages.insert(c.package);
    }
    CHECK(names.size() == 60);
    CHECK(packages == std::set<std::string>{"baseline", "Sub-CP", "CP-Phase", "Sub-CP-Phase", "Sub-Phase"});

    auto twins = std::vector<ScenarioCell>{cells[7], cells[7]};
    twins[1].name = "copy";
    const auto models = pointers(target_models());
    const auto reps = compare_scenarios(twins, models, default_targets());
    auto a = to_json(reps[0]), b = to_json(reps[1]);
    a.erase("cell");
    b.erase("cell");
    CHECK(a == b);
    for (const auto& r : reps)
        for (const auto& t : r.targets) {
            CHECK(t.proportion >= 0.0);
            CHECK(t.proportion <= 1.0);
        }

    const auto bare = compare_scenarios({cells[0]}, models, {});
    CHECK(bare[0].targets.empty());
    CHECK(bare[0].summaries.size() == models.size());

    const auto serial = compare_scenarios({cells.begin(), cells.begin() + 6}, models, default_targets(), Exec::serial);
    const auto parallel = compare_scenarios({cells.begin(), cells.begin() + 6}, models, default_targets(), Exec::parallel);
    CHECK(reports_to_csv(serial) == reports_to_csv(parallel));
    CHECK(reports_to_json(serial).dump() == reports_to_json(parallel).dump());

    CHECK_THROWS_AS(compare_scenarios({cells[0]}, {models[0]}, default_targets()), Error);
}

TEST_CASE("regional packages set their instruments at mid ambition") {
    const auto pk = regional_packages(space(), "IN");
    REQUIRE(pk.size() == 5);
    CHECK(pk[0].name == "baseline");
    for (const auto& [id, v] : pk[0].coordinates) CHECK(v == 0.0);
    const auto& sub_cp = pk[1].coordinates;
    CHECK(sub_cp.at("in_subsidy_fit") == 0.5);
    CHECK(sub_cp.at("in_carbon_price") == 0.5);
    CHECK(sub_cp.at("in_phase_out") == 0.0);
    CHECK(pk[2].coordinates.at("in_subsidy_fit") == 0.0);
    CHECK(pk[3].coordinates.at("in_phase_out") == 0.5);
    CHECK(pk[4].coordinates.at("in_phase_out") == 0.5);
    CHECK(pk[4].coordinates.at("in_carbon_price") == 0.0);
    for (const auto& p : pk)
        for (const auto& [id, v] : p.coordinates) CHECK(id.rfind("in_", 0) == 0);
}

TEST_CASE("direct simulation: fast leads build more solar and phase-out never hurts the emissions target") {
    const auto config = default_sim_config();
    const std::vector<ModelKey> keys{{"global", "solar_capacity_GW", 2030}, {"IN", "emissions_Mt", 2030}};
    auto spec = baseline_spec(space(), 200, 6);
    auto fast = spec, slow = spec;
    BandSelection bf, bs;
    bf.lead = LeadBand::fast;
    bs.lead = LeadBand::slow;
    apply_bands(fast, space(), bf);
    apply_bands(slow, space(), bs);
    const auto df = simulate_scenario(config, space(), sample_scenario(fast), keys, Exec::parallel);
    const auto ds = simulate_scenario(config, space(), sample_scenario(slow), keys, Exec::parallel);
    CHECK(median_of(df.at(keys[0])) >= median_of(ds.at(keys[0])));

    const auto emissions = default_targets("IN", 2030)[3];
    for (const auto& pkg : regional_packages(space(), "IN")) {
        auto s = spec;
        apply_package(s, space(), pkg);
        auto phased = pkg;
        phased.coordinates["in_phase_out"] = 1.0;
        auto sp = spec;
        apply_package(sp, space(), phased);
        const auto a = robustness(simulate_scenario(config, space(), sample_scenario(s), {keys[1]}), {emissions});
        const auto b = robustness(simulate_scenario(config, space(), sample_scenario(sp), {keys[1]}), {emissions});
        CAPTURE(pkg.name);
        CHECK(b.targets[0].proportion >= a.targets[0].proportion);
    }
}

TEST_CASE("scenario and target files round trip") {
    auto spec = baseline_spec(space(), 1234, 77);
    BandSelection b;
    b.lead = LeadBand::medium;
    b.discount = Half::low;
    apply_bands(spec, space(), b);
    const auto back = scenario_from_json(to_json(spec, space()), space());
    CHECK(to_json(back, space()) == to_json(spec, space()));
    CHECK(sample_scenario(back) == sample_scenario(spec));

    const auto t = default_targets("IN", 2030);
    CHECK(to_json(targets_from_json(to_json(t))) == to_json(t));

    const ModelKey k{"IN", "emissions_Mt", 2030};
    const auto csv = draws_to_csv({{k, Eigen::Vector2d(1.5, 2.5)}});
    CHECK(csv.rfind("IN__emissions_Mt__2030", 0) == 0);
}

TEST_CASE("quantile is type 7") {
    CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
    CHECK(quantile({1, 2, 3, 4}, 0.0) == 1.0);
    CHECK(quantile({1, 2, 3, 4}, 1.0) == 4.0);
    CHECK(quantile({4, 1, 3, 2}, 0.25) == doctest::Approx(1.75));
    CHECK_THROWS_AS(quantile({}, 0.5), Error);
}
