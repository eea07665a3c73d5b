#include "powerem/sensitivity.hpp"

#include "powerem/error.hpp"
#include "powerem/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace powerem {

namespace {
constexpr double kFlatTolerance = 1e-12;
}

double OaatCurve::range() const {
    if (means.empty()) return 0.0;
    const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
    return *hi - *lo;
}

double OaatCurve::variance_of_means() const {
    if (means.empty()) return 0.0;
    const double mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
    double acc = 0.0;
    for (double v : means) acc += (v - mean) * (v - mean);
    return acc / static_cast<double>(means.size());
}

InputVector default_baseline(const ParameterSpace& space) {
    InputVector u(static_cast<Eigen::Index>(space.dimension()));
    for (std::size_t d = 0; d < space.dimension(); ++d)
        u(static_cast<Eigen::Index>(d)) = space.inputs[d].kind == InputKind::policy ? 0.0 : 0.5;
    return u;
}

OaatCurve oaat_sweep(const GpModel& model, const ParameterSpace& space, const std::string& input_id,
                     const InputVector& baseline, std::size_t m) {
    if (m < 11) fail(ErrorCode::invalid_input, "sweep needs at least 11 grid points");
    if (static_cast<std::size_t>(baseline.size()) != space.dimension())
        fail(ErrorCode::invalid_input, "baseline has dimension " + std::to_string(baseline.size()) +
                                           ", space has " + std::to_string(space.dimension()));
    const auto d = static_cast<Eigen::Index>(space.require_index(input_id));
    OaatCurve c;
    c.input_id = input_id;
    c.key = model.key();
    InputVector x = baseline;
    for (std::size_t g = 0; g < m; ++g) {
        const double t = static_cast<double>(g) / static_cast<double>(m - 1);
        x(d) = t;
        const auto p = model.predict(x);
        c.grid.push_back(t);
        c.means.push_back(p.mean);
        c.variances.push_back(p.variance);
    }
    return c;
}

std::vector<double> relative_sensitivity(const std::vector<OaatCurve>& curves, SensitivityMetric metric) {
    std::vector<double> raw;
    raw.reserve(curves.size());
    double magnitude = 0.0;
    for (const auto& c : curves)
        for (double m : c.means) magnitude = std::max(magnitude, std::abs(m));
    // spreads at rounding level of the means are treated as flat
    const double floor = metric == SensitivityMetric::range ? kFlatTolerance * magnitude
                                                            : std::pow(kFlatTolerance * magnitude, 2);
    for (const auto& c : curves) {
        if (!curves.empty() && !(c.key == curves.front().key))
            fail(ErrorCode::invalid_input, "curves mix output keys " + c.key.str() + " and " + curves.front().key.str());
        const double v = metric == SensitivityMetric::range ? c.range() : c.variance_of_means();
        raw.push_back(v <= floor ? 0.0 : v);
    }
    const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
    if (!(total > 0.0)) return std::vector<double>(raw.size(), 0.0);
    for (auto& v : raw) v /= total;
    return raw;
}

SensitivityTable sensitivity_table(const std::vector<const GpModel*>& models, const ParameterSpace& space,
                                   const InputVector& baseline, std::size_t m, SensitivityMetric metric, Exec exec) {
    SensitivityTable t;
    for (const auto& in : space.inputs) {
        t.inputs.push_back(in.id);
        t.kinds.push_back(in.kind);
    }
    t.columns.resize(models.size());
    for_each_index(models.size(), exec, [&](std::size_t k) {
        std::vector<OaatCurve> curves;
        curves.reserve(space.dimension());
        for (const auto& in : space.inputs) curves.push_back(oaat_sweep(*models[k], space, in.id, baseline, m));
        t.columns[k] = {models[k]->key(), relative_sensitivity(curves, metric)};
    });
    return t;
}

std::vector<RankEntry> rank_inputs(const SensitivityTable& table) {
    if (table.columns.empty()) fail(ErrorCode::invalid_input, "ranking needs at least one sensitivity column");
    std::vector<RankEntry> out;
    for (std::size_t i = 0; i < table.inputs.size(); ++i) {
        double sum = 0.0;
        for (const auto& c : table.columns) sum += c.index.at(i);
        out.push_back({table.inputs[i], sum / static_cast<double>(table.columns.size())});
    }
    std::stable_sort(out.begin(), out.end(), [](const RankEntry& a, const RankEntry& b) { return a.average > b.average; });
    return out;
}

namespace {

std::vector<bool> visible_rows(const SensitivityTable& table, double threshold) {
    std::vector<bool> keep(table.inputs.size(), true);
    for (std::size_t i = 0; i < table.inputs.size(); ++i) {
        if (table.kinds.at(i) != InputKind::policy) continue;
        double best = 0.0;
        for (const auto& c : table.columns) best = std::max(best, c.index.at(i));
        keep[i] = best >= threshold;
    }
    return keep;
}

} // namespace

std::string sensitivity_to_csv(const SensitivityTable& table, double threshold) {
    const auto keep = visible_rows(table, threshold);
    CsvTable csv;
    csv.header.push_back("input");
    for (const auto& c : table.columns) csv.header.push_back(c.key.str());
    for (std::size_t i = 0; i < table.inputs.size(); ++i) {
        if (!keep[i]) continue;
        std::vector<std::string> row{table.inputs[i]};
        for (const auto& c : table.columns) row.push_back(format_double(c.index.at(i)));
        csv.rows.push_back(std::move(row));
    }
    return to_csv(csv);
}

nlohmann::json sensitivity_to_json(const SensitivityTable& table, double threshold) {
    using nlohmann::json;
    const auto keep = visible_rows(table, threshold);
    json columns = json::array();
    for (const auto& c : table.columns) {
        json idx = json::object();
        for (std::size_t i = 0; i < table.inputs.size(); ++i) idx[table.inputs[i]] = c.index.at(i);
        columns.push_back({{"key", c.key.str()},
                           {"region", c.key.region},
                           {"output", c.key.output},
                           {"year", c.key.year},
                           {"indices", std::move(idx)}});
    }
    json ranking = json::array();
    std::size_t rank = 1;
    for (const auto& e : rank_inputs(table)) ranking.push_back({{"input", e.input}, {"average", e.average}, {"rank", rank++}});
    json hidden = json::array();
    for (std::size_t i = 0; i < table.inputs.size(); ++i)
        if (!keep[i]) hidden.push_back(table.inputs[i]);
    return {{"inputs", table.inputs}, {"columns", std::move(columns)}, {"ranking", std::move(ranking)},
            {"threshold", threshold}, {"below_threshold", std::move(hidden)}};
}

} // namespace powerem
