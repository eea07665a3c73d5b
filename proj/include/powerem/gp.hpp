#pragma once

#include "powerem/parallel.hpp"

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace powerem {

enum class KernelKind { squared_exponential, matern52 };
enum class MeanKind { zero, constant, linear };

inline constexpr double kMinNugget = 1e-10;

struct GpKernelConfig {
    KernelKind kind = KernelKind::squared_exponential;
    double variance = 1.0;          // sigma^2, output units^2
    Eigen::VectorXd lengthscales;   // one per input dimension, normalized units
    double nugget = 1e-6;           // output units^2

    std::size_t dimension() const { return static_cast<std::size_t>(lengthscales.size()); }
    // Throws invalid_input when a field is non-positive, non-finite or the nugget is below kMinNugget.
    void validate() const;
    // Signal covariance between two points (no nugget).
    double operator()(const double* a, const double* b) const;
};

// Rows of a and b are points. Entries are bit-identical between the serial and parallel paths.
Eigen::MatrixXd covariance(const GpKernelConfig& kernel, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                           Exec exec = Exec::serial);

// Regression basis h(x): [], [1] or [1, x_1 .. x_D].
Eigen::MatrixXd basis(MeanKind mean, const Eigen::MatrixXd& x);
std::size_t basis_size(MeanKind mean, std::size_t dimension);

// Lower Cholesky factor of `m`, retrying with diagonal jitter 1e-10 .. 1e-6 (x10 per retry),
// relative to the mean diagonal. `max_jitter` = 0 disables retries.
struct Factor {
    Eigen::MatrixXd lower;
    double jitter = 0.0;  // absolute amount added to the diagonal
};
Factor factorize(const Eigen::MatrixXd& m, double max_jitter = 1e-6);

struct ModelKey {
    std::string region = "global";
    std::string output;
    int year = 0;

    std::string str() const;  // "<region>__<output>__<year>"
    bool operator==(const ModelKey&) const = default;
    auto operator<=>(const ModelKey&) const = default;
};
ModelKey parse_model_key(const std::string& text);

struct TrainingSet {
    Eigen::MatrixXd x;  // n x D, normalized
    Eigen::VectorXd y;
    ModelKey key;

    std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
    // Rejects mismatched sizes, non-finite values and rows duplicated within 1e-12.
    void validate() const;
};

// Disjoint random partition with round(n * train_fraction) training rows. n < 5 is rejected.
std::pair<TrainingSet, TrainingSet> split(const TrainingSet& all, double train_fraction, std::uint64_t seed);

// CSV: design columns (named by `ids`) followed by one column named after the output.
std::string training_to_csv(const TrainingSet& set, const std::vector<std::string>& ids);
TrainingSet training_from_csv(std::string_view csv, const std::vector<std::string>& ids, const ModelKey& key);

struct LmlResult {
    double value = 0.0;
    // d value / d log(theta) for theta = (sigma^2, l_1 .. l_D, nugget); empty unless requested.
    Eigen::VectorXd gradient;
    Eigen::VectorXd beta;
    double jitter = 0.0;
};

// Profile log marginal likelihood with beta at its generalized-least-squares value.
LmlResult log_marginal_likelihood(const GpKernelConfig& kernel, MeanKind mean, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& y, bool with_gradient = false);

struct Prediction {
    double mean = 0.0;
    double variance = 0.0;  // latent f(x); add the nugget for a new observation
    bool clamped = false;   // raw variance was below -1e-10 and was set to 0
};

struct ValidationReport;

struct FitDiagnostics {
    double log_marginal_likelihood = 0.0;
    int restarts = 0;
    int failed_restarts = 0;
    double jitter = 0.0;
    double y_mean = 0.0;  // standardization used while optimizing
    double y_scale = 1.0;
};

class GpModel {
public:
    GpModel() = default;

    // Factorizes C(X,X) + nugget*I and solves for the GLS coefficients.
    static GpModel condition(const TrainingSet& train, const GpKernelConfig& kernel, MeanKind mean,
                             Exec exec = Exec::serial);

    Prediction predict(const Eigen::VectorXd& x) const;
    // Noisy observation variance at x: latent variance plus nugget.
    double observation_variance(const Prediction& p) const { return p.variance + kernel_.nugget; }

    const GpKernelConfig& kernel() const { return kernel_; }
    MeanKind mean_kind() const { return mean_; }
    const Eigen::VectorXd& beta() const { return beta_; }
    const Eigen::MatrixXd& x() const { return train_.x; }
    const Eigen::VectorXd& y() const { return train_.y; }
    const ModelKey& key() const { return train_.key; }
    const TrainingSet& training() const { return train_; }
    const Eigen::MatrixXd& factor() const { return factor_.lower; }
    std::size_t dimension() const { return static_cast<std::size_t>(train_.x.cols()); }
    std::size_t size() const { return train_.size(); }

    FitDiagnostics diagnostics;

private:
    TrainingSet train_;
    GpKernelConfig kernel_;
    MeanKind mean_ = MeanKind::linear;
    Factor factor_;
    Eigen::VectorXd beta_;
    Eigen::VectorXd alpha_;    // K^-1 (y - H beta)
    Eigen::MatrixXd lh_;       // L^-1 H
    Eigen::MatrixXd q_lower_;  // Cholesky factor of H^T K^-1 H
    Eigen::MatrixXd xt_;       // training points as columns

    friend ValidationReport loo_validate(const GpModel& model);
};

struct FitOptions {
    int restarts = 10;
    int max_iterations = 200;
    std::uint64_t seed = 0;
    KernelKind kernel = KernelKind::squared_exponential;
    MeanKind mean = MeanKind::linear;
    Exec exec = Exec::serial;  // parallel runs restarts concurrently
};

// Documented starting point: l_d = 0.5, sigma^2 = var(y), nugget = 1e-6 var(y).
GpKernelConfig default_initial_kernel(const TrainingSet& train, KernelKind kind);

// Maximizes the log marginal likelihood over log(sigma^2, l_d, nugget) from
// `restarts` starting points; the first is the documented default.
GpModel fit(const TrainingSet& train, const FitOptions& options = {});

struct ValidationReport {
    double rmse = 0.0;
    std::vector<double> standardized_errors;
    double coverage = 0.0;  // fraction with |standardized error| <= 1.96
    std::vector<double> means;
    std::vector<double> variances;
};

// Leave-one-out with hyperparameters fixed and beta re-estimated per fold, from closed forms.
ValidationReport loo_validate(const GpModel& model);
// Held-out evaluation using the observation variance.
ValidationReport test_validate(const GpModel& model, const TrainingSet& test);

void predict_batch(const GpModel& model, const Eigen::MatrixXd& x, Eigen::VectorXd& mean,
                   Eigen::VectorXd& variance, Exec exec = Exec::serial);

nlohmann::json to_json(const GpModel& model);
GpModel model_from_json(const nlohmann::json& j);
std::string save_model(const GpModel& model);
GpModel load_model(std::string_view bytes);
void save_model_file(const GpModel& model, const std::filesystem::path& path);
GpModel load_model_file(const std::filesystem::path& path);

const char* to_string(KernelKind kind);
const char* to_string(MeanKind kind);

} // namespace powerem
