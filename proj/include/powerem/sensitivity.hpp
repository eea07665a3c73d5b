#pragma once

#include "powerem/gp.hpp"
#include "powerem/param_space.hpp"

#include <nlohmann/json_fwd.hpp>

#include <string>
#include <vector>

namespace powerem {

struct OaatCurve {
    std::string input_id;
    ModelKey key;
    std::vector<double> grid;  // equispaced on [0,1]
    std::vector<double> means;
    std::vector<double> variances;

    double range() const;              // max - min of means
    double variance_of_means() const;  // population variance of means
};

enum class SensitivityMetric { range, variance };

// Policy coordinates at 0 (current policy), techno-economic coordinates at 0.5.
InputVector default_baseline(const ParameterSpace& space);

inline constexpr std::size_t kDefaultSweepPoints = 21;

OaatCurve oaat_sweep(const GpModel& model, const ParameterSpace& space, const std::string& input_id,
                     const InputVector& baseline, std::size_t m = kDefaultSweepPoints);

// Index per curve: metric / sum of metrics; all zero when every metric is zero.
// A range within 1e-12 of the largest |mean| counts as zero.
std::vector<double> relative_sensitivity(const std::vector<OaatCurve>& curves,
                                         SensitivityMetric metric = SensitivityMetric::range);

struct SensitivityColumn {
    ModelKey key;
    std::vector<double> index;  // one per input, in space order
};

struct SensitivityTable {
    std::vector<std::string> inputs;
    std::vector<InputKind> kinds;
    std::vector<SensitivityColumn> columns;
};

SensitivityTable sensitivity_table(const std::vector<const GpModel*>& models, const ParameterSpace& space,
                                   const InputVector& baseline, std::size_t m = kDefaultSweepPoints,
                                   SensitivityMetric metric = SensitivityMetric::range, Exec exec = Exec::serial);

struct RankEntry {
    std::string input;
    double average = 0.0;
};

// Mean index per input across every column, descending; ties keep declaration order.
std::vector<RankEntry> rank_inputs(const SensitivityTable& table);

// Policy inputs whose largest index across columns falls below `threshold` are omitted.
std::string sensitivity_to_csv(const SensitivityTable& table, double threshold = 0.001);
nlohmann::json sensitivity_to_json(const SensitivityTable& table, double threshold = 0.001);

} // namespace powerem
