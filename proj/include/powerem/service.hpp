#pragma once

#include "powerem/workflow.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <string>

namespace powerem {

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
};

inline constexpr std::size_t kMaxDistributionDraws = 100000;
inline constexpr std::size_t kHistogramBins = 40;

// Request handling for the decision-support API. Every handler is a pure
// function of the loaded artifacts, the request and its seed; requests that
// omit a seed get a fresh one, echoed in the response.
//
// Thread safety: handlers are const and may run concurrently once
// load_models has returned.
class DecisionService {
public:
    explicit DecisionService(ParameterSpace space);

    void load_models(ModelStore store);
    bool ready() const { return ready_.load(std::memory_order_acquire); }
    const ParameterSpace& space_def() const { return space_; }
    const ModelStore& store() const { return store_; }

    ServiceResponse space() const;
    ServiceResponse predict(const nlohmann::json& request) const;
    ServiceResponse distribution(const nlohmann::json& request) const;
    ServiceResponse robustness(const nlohmann::json& request) const;
    ServiceResponse sensitivity(const std::map<std::string, std::string>& query) const;

    // Parses the body and dispatches; malformed JSON gives 400.
    ServiceResponse post(const std::string& path, const std::string& body) const;

    // Point described by optional "policy", "techno" and "bands" fields.
    InputVector request_point(const nlohmann::json& request) const;
    // Baseline spec modified by "policy", "bands" and "inputs" fields.
    ScenarioSpec request_spec(const nlohmann::json& request, std::uint64_t seed) const;

private:
    ParameterSpace space_;
    ModelStore store_;
    std::atomic<bool> ready_{false};
};

// Seed from the request or, if absent, a fresh one below 2^53 so JSON clients
// can echo it without losing precision.
std::uint64_t request_seed(const nlohmann::json& request);

struct Histogram {
    double lo = 0.0, hi = 0.0;
    std::vector<std::size_t> counts;
};

// Equal-width bins over [min, max]; the maximum falls in the last bin and a
// point mass puts every draw in the first.
Histogram histogram(const Eigen::VectorXd& values, std::size_t bins = kHistogramBins);

} // namespace powerem
