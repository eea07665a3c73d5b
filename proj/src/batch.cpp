#include "powerem/batch.hpp"

#include "powerem/error.hpp"

#include <limits>

namespace powerem {

std::vector<SimRun> simulate_batch(const SimConfig& config, const ParameterSpace& space,
                                   const Eigen::MatrixXd& points, Exec exec) {
    validate_config(config);
    if (static_cast<std::size_t>(points.cols()) != space.dimension())
        fail(ErrorCode::invalid_input, "design has " + std::to_string(points.cols()) + " columns, space has " +
                                           std::to_string(space.dimension()));
    std::vector<SimRun> runs(static_cast<std::size_t>(points.rows()));
    for_each_index(runs.size(), exec, [&](std::size_t i) {
        try {
            const auto inputs = denormalize(space, points.row(static_cast<Eigen::Index>(i)).transpose());
            runs[i].output = simulate(config, inputs);
        } catch (const Error& e) {
            runs[i].error = e.what();
        }
    });
    return runs;
}

Eigen::VectorXd collect_output(const std::vector<SimRun>& runs, const std::string& region,
                               const std::string& output, int year) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(runs.size()));
    for (std::size_t i = 0; i < runs.size(); ++i) {
        if (!runs[i].output) {
            y(static_cast<Eigen::Index>(i)) = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        const auto values = extract_outputs(*runs[i].output, region, year);
        auto it = values.find(output);
        if (it == values.end()) fail(ErrorCode::not_found, "unknown output '" + output + "'");
        y(static_cast<Eigen::Index>(i)) = it->second;
    }
    return y;
}

} // namespace powerem
