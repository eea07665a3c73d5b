#include "powerem/error.hpp"
#include "powerem/sensitivity.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <functional>
#include <numeric>

using namespace powerem;

namespace {

OaatCurve line(const std::string& id, double slope) {
    OaatCurve c;
    c.input_id = id;
    for (int g = 0; g <= 20; ++g) {
        c.grid.push_back(g / 20.0);
        c.means.push_back(slope * g / 20.0);
        c.variances.push_back(0.0);
    }
    return c;
}

SensitivityTable table_of(std::vector<std::vector<double>> columns) {
    SensitivityTable t;
    t.inputs = {"input1", "input2"};
    t.kinds = {InputKind::techno_economic, InputKind::techno_economic};
    int year = 2030;
    for (auto& c : columns) t.columns.push_back({{"global", "emissions_Mt", year++}, std::move(c)});
    return t;
}

GpModel emulate(const ParameterSpace& space, const std::function<double(const Eigen::VectorXd&)>& g, std::size_t n) {
    TrainingSet t;
    t.x = lhs_sample(n, space, 8).points;
    t.y.resize(t.x.rows());
    for (Eigen::Index i = 0; i < t.x.rows(); ++i) t.y(i) = g(t.x.row(i).transpose());
    t.key = {"global", "synthetic", 2050};
    FitOptions o;
    o.restarts = 2;
    return fit(t, o);
}

} // namespace

TEST_CASE("relative sensitivity normalizes curve ranges") {
    auto idx = relative_sensitivity({line("a", 3.0), line("b", 1.0)});
    CHECK(idx[0] == doctest::Approx(0.75));
    CHECK(idx[1] == doctest::Approx(0.25));

    idx = relative_sensitivity({line("a", 0.0), line("b", 0.0)});
    CHECK(idx == std::vector<double>{0.0, 0.0});

    CHECK(relative_sensitivity({line("a", -2.0)}) == std::vector<double>{1.0});

    const auto var = relative_sensitivity({line("a", 3.0), line("b", 1.0)}, SensitivityMetric::variance);
    CHECK(var[0] == doctest::Approx(0.9));
    CHECK(var[1] == doctest::Approx(0.1));
}

TEST_CASE("ranking averages across columns and keeps declaration order on ties") {
    auto r = rank_inputs(table_of({{0.75, 0.25}}));
    CHECK(r[0].input == "input1");
    CHECK(r[1].input == "input2");

    r = rank_inputs(table_of({{0.6, 0.4}, {0.2, 0.8}}));
    CHECK(r[0].input == "input2");
    CHECK(r[0].average == doctest::Approx(0.6));
    CHECK(r[1].average == doctest::Approx(0.4));

    r = rank_inputs(table_of({{0.5, 0.5}}));
    CHECK(r[0].input == "input1");
    CHECK(r[1].input == "input2");
}

TEST_CASE("default baseline puts policy at current level and techno inputs mid-range") {
    const auto space = default_space();
    const auto b = default_baseline(space);
    for (std::size_t d = 0; d < space.dimension(); ++d)
        CHECK(b(static_cast<Eigen::Index>(d)) == (space.inputs[d].kind == InputKind::policy ? 0.0 : 0.5));
}

TEST_CASE("sweeps of an emulated single-input function") {
    const auto space = default_space();
    const auto model = emulate(space, [](const Eigen::VectorXd& x) { return x(2); }, 60);
    const auto base = default_baseline(space);
    const auto on = oaat_sweep(model, space, space.inputs[2].id, base);
    CHECK(on.grid.size() == kDefaultSweepPoints);
    CHECK(on.means.front() == doctest::Approx(0.0).epsilon(0.02).scale(1.0));
    CHECK(on.means.back() == doctest::Approx(1.0).epsilon(0.02));
    for (std::size_t d = 0; d < space.dimension(); ++d) {
        if (d == 2) continue;
        CHECK(oaat_sweep(model, space, space.inputs[d].id, base).range() <= 0.02);
    }
    CHECK_THROWS_AS(oaat_sweep(model, space, "no_such_input", base), Error);
}

TEST_CASE("constant emulator gives flat curves and zero indices") {
    const auto space = default_space();
    const auto model = emulate(space, [](const Eigen::VectorXd&) { return 7.0; }, 40);
    const auto table = sensitivity_table({&model}, space, default_baseline(space));
    REQUIRE(table.columns.size() == 1);
    for (double v : table.columns[0].index) CHECK(v == 0.0);
    CHECK(oaat_sweep(model, space, "coal_price", default_baseline(space)).range() <= 1e-9);
}

TEST_CASE("sensitivity table recovers a linear ranking and exports") {
    const auto space = default_space();
    const auto model =
        emulate(space, [](const Eigen::VectorXd& x) { return 5 * x(0) + 0.5 * x(1) + 0.1 * x(2); }, 80);
    const auto serial = sensitivity_table({&model}, space, default_baseline(space));
    const auto parallel = sensitivity_table({&model}, space, default_baseline(space), kDefaultSweepPoints,
                                            SensitivityMetric::range, Exec::parallel);
    CHECK(serial.columns[0].index == parallel.columns[0].index);
    const auto& idx = serial.columns[0].index;
    CHECK(std::accumulate(idx.begin(), idx.end(), 0.0) == doctest::Approx(1.0));
    const auto ranking = rank_inputs(serial);
    CHECK(ranking[0].input == space.inputs[0].id);
    CHECK(ranking[1].input == space.inputs[1].id);
    CHECK(ranking[2].input == space.inputs[2].id);

    const auto csv = sensitivity_to_csv(serial, 0.001);
    CHECK(csv.rfind("input,global__synthetic__2050", 0) == 0);
    const auto j = sensitivity_to_json(serial, 0.001);
    CHECK(j["columns"].size() == 1);
    // every policy input is irrelevant here and falls below the display threshold
    CHECK(j["below_threshold"].size() == 15);
    CHECK(csv.find("in_phase_out") == std::string::npos);
    CHECK(csv.find("coal_price") != std::string::npos);
}
