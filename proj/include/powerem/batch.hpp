#pragma once

#include "powerem/parallel.hpp"
#include "powerem/param_space.hpp"
#include "powerem/transition_sim.hpp"

#include <optional>
#include <string>
#include <vector>

namespace powerem {

struct SimRun {
    std::optional<SimOutput> output;  // empty when the simulator rejected the point
    std::string error;
};

// Denormalizes and simulates every row of `points`. Rejections are recorded
// per row; the batch continues.
std::vector<SimRun> simulate_batch(const SimConfig& config, const ParameterSpace& space,
                                   const Eigen::MatrixXd& points, Exec exec = Exec::serial);

// One named scalar per row for (region, output, year); NaN for rejected rows.
Eigen::VectorXd collect_output(const std::vector<SimRun>& runs, const std::string& region,
                               const std::string& output, int year);

} // namespace powerem
