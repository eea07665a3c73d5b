#include "powerem/gp.hpp"

#include "powerem/error.hpp"
#include "powerem/util.hpp"

#include <Eigen/Cholesky>
#include <ceres/ceres.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace powerem {

namespace {

constexpr double kSqrt5 = 2.2360679774997896964;
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kZ95 = 1.959963984540054;
constexpr double kDuplicateTolerance = 1e-12;
constexpr const char* kModelFormat = "powerem-gp";
constexpr int kModelVersion = 1;

double correlation(KernelKind kind, double r2) {
    if (kind == KernelKind::squared_exponential) return std::exp(-0.5 * r2);
    const double r = std::sqrt(r2);
    return (1.0 + kSqrt5 * r + (5.0 / 3.0) * r2) * std::exp(-kSqrt5 * r);
}

// d correlation / d log(l_d) = g(r2) * (delta_d / l_d)^2
double lengthscale_factor(KernelKind kind, double r2) {
    if (kind == KernelKind::squared_exponential) return std::exp(-0.5 * r2);
    const double r = std::sqrt(r2);
    return (5.0 / 3.0) * (1.0 + kSqrt5 * r) * std::exp(-kSqrt5 * r);
}

Eigen::VectorXd solve_lower(const Eigen::MatrixXd& lower, const Eigen::VectorXd& b) {
    return lower.triangularView<Eigen::Lower>().solve(b);
}

Eigen::VectorXd solve_upper_t(const Eigen::MatrixXd& lower, const Eigen::VectorXd& b) {
    return lower.transpose().triangularView<Eigen::Upper>().solve(b);
}

void require_size(const TrainingSet& train, MeanKind mean) {
    const std::size_t p = basis_size(mean, static_cast<std::size_t>(train.x.cols()));
    if (train.size() < p + 1)
        fail(ErrorCode::invalid_input, "need at least " + std::to_string(p + 1) + " training points for a " +
                                           to_string(mean) + " mean in " + std::to_string(train.x.cols()) +
                                           " dimensions, got " + std::to_string(train.size()));
}

// Pairwise squared coordinate differences, reused across likelihood evaluations.
struct Workspace {
    std::vector<Eigen::MatrixXd> sq;  // sq[d](i,j) = (x_id - x_jd)^2
    Eigen::MatrixXd h;

    Workspace(const Eigen::MatrixXd& x, MeanKind mean) : h(basis(mean, x)) {
        const auto n = x.rows();
        sq.resize(static_cast<std::size_t>(x.cols()));
        for (Eigen::Index d = 0; d < x.cols(); ++d) {
            auto& m = sq[static_cast<std::size_t>(d)];
            m.resize(n, n);
            for (Eigen::Index j = 0; j < n; ++j)
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double delta = x(i, d) - x(j, d);
                    m(i, j) = delta * delta;
                }
        }
    }
};

LmlResult evaluate_lml(const Workspace& ws, const GpKernelConfig& k, const Eigen::VectorXd& y, bool with_gradient) {
    const auto n = y.size();
    const std::size_t dim = ws.sq.size();
    Eigen::MatrixXd r2 = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t d = 0; d < dim; ++d) {
        const double l = k.lengthscales(static_cast<Eigen::Index>(d));
        r2.noalias() += ws.sq[d] / (l * l);
    }
    Eigen::MatrixXd cov(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i) cov(i, j) = k.variance * correlation(k.kind, r2(i, j));
    Eigen::MatrixXd total = cov;
    total.diagonal().array() += k.nugget;

    Factor f = factorize(total);
    const Eigen::MatrixXd& lower = f.lower;
    Eigen::VectorXd ys = solve_lower(lower, y);
    Eigen::VectorXd resid = ys;
    LmlResult out;
    out.jitter = f.jitter;
    if (ws.h.cols() > 0) {
        Eigen::MatrixXd hs = lower.triangularView<Eigen::Lower>().solve(ws.h);
        Eigen::LLT<Eigen::MatrixXd> q(hs.transpose() * hs);
        if (q.info() != Eigen::Success)
            fail(ErrorCode::numerical_failure, "regression basis is rank deficient under the current kernel");
        out.beta = q.solve(hs.transpose() * ys);
        resid = ys - hs * out.beta;
    } else {
        out.beta.resize(0);
    }
    const double logdet = 2.0 * lower.diagonal().array().log().sum();
    out.value = -0.5 * resid.squaredNorm() - 0.5 * logdet - 0.5 * static_cast<double>(n) * kLog2Pi;
    if (!with_gradient) return out;

    const Eigen::VectorXd alpha = solve_upper_t(lower, resid);
    Eigen::MatrixXd linv = lower.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
    Eigen::MatrixXd w = alpha * alpha.transpose();
    w.noalias() -= linv.transpose().triangularView<Eigen::Upper>() * linv;

    out.gradient.resize(static_cast<Eigen::Index>(dim + 2));
    out.gradient(0) = 0.5 * (w.array() * cov.array()).sum();
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i) g(i, j) = w(i, j) * k.variance * lengthscale_factor(k.kind, r2(i, j));
    for (std::size_t d = 0; d < dim; ++d) {
        const double l = k.lengthscales(static_cast<Eigen::Index>(d));
        out.gradient(static_cast<Eigen::Index>(d + 1)) = 0.5 * (g.array() * ws.sq[d].array()).sum() / (l * l);
    }
    out.gradient(static_cast<Eigen::Index>(dim + 1)) = 0.5 * k.nugget * w.trace();
    return out;
}

// Hyperparameters live in box-bounded log space; z maps onto it through a logistic.
struct Bounds {
    Eigen::VectorXd lo, hi;  // of log(theta)
};

double logistic(double z) {
    return 1.0 / (1.0 + std::exp(-z));
}

Eigen::VectorXd to_log_theta(const Bounds& b, const double* z) {
    Eigen::VectorXd t(b.lo.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = b.lo(i) + (b.hi(i) - b.lo(i)) * logistic(z[i]);
    return t;
}

double to_z(double lo, double hi, double log_theta) {
    const double u = std::clamp((log_theta - lo) / (hi - lo), 1e-9, 1.0 - 1e-9);
    return std::log(u / (1.0 - u));
}

GpKernelConfig kernel_from_log(KernelKind kind, const Eigen::VectorXd& t) {
    GpKernelConfig k;
    k.kind = kind;
    const auto dim = t.size() - 2;
    k.variance = std::exp(t(0));
    k.lengthscales = t.segment(1, dim).array().exp();
    k.nugget = std::exp(t(dim + 1));
    return k;
}

class NegativeLml final : public ceres::FirstOrderFunction {
public:
    NegativeLml(const Workspace& ws, const Eigen::VectorXd& y, const Bounds& bounds, KernelKind kind)
        : ws_(ws), y_(y), bounds_(bounds), kind_(kind) {}

    bool Evaluate(const double* z, double* cost, double* gradient) const override {
        const Eigen::VectorXd t = to_log_theta(bounds_, z);
        LmlResult r;
        try {
            r = evaluate_lml(ws_, kernel_from_log(kind_, t), y_, gradient != nullptr);
        } catch (const Error&) {
            return false;
        }
        if (!std::isfinite(r.value)) return false;
        *cost = -r.value;
        if (gradient) {
            for (Eigen::Index i = 0; i < t.size(); ++i) {
                const double s = logistic(z[i]);
                gradient[i] = -r.gradient(i) * (bounds_.hi(i) - bounds_.lo(i)) * s * (1.0 - s);
            }
        }
        return true;
    }

    int NumParameters() const override { return static_cast<int>(bounds_.lo.size()); }

private:
    const Workspace& ws_;
    const Eigen::VectorXd& y_;
    const Bounds& bounds_;
    KernelKind kind_;
};

double population_variance(const Eigen::VectorXd& y) {
    const double m = y.mean();
    return (y.array() - m).square().mean();
}

} // namespace

void GpKernelConfig::validate() const {
    if (!(variance > 0.0) || !std::isfinite(variance))
        fail(ErrorCode::invalid_input, "kernel variance must be positive and finite");
    if (lengthscales.size() == 0) fail(ErrorCode::invalid_input, "kernel needs at least one lengthscale");
    for (Eigen::Index d = 0; d < lengthscales.size(); ++d)
        if (!(lengthscales(d) > 0.0) || !std::isfinite(lengthscales(d)))
            fail(ErrorCode::invalid_input, "lengthscale " + std::to_string(d) + " must be positive and finite");
    if (!(nugget >= kMinNugget) || !std::isfinite(nugget))
        fail(ErrorCode::invalid_input, "nugget must be at least 1e-10, got " + format_double(nugget));
}

double GpKernelConfig::operator()(const double* a, const double* b) const {
    double r2 = 0.0;
    for (Eigen::Index d = 0; d < lengthscales.size(); ++d) {
        const double z = (a[d] - b[d]) / lengthscales(d);
        r2 += z * z;
    }
    return variance * correlation(kind, r2);
}

Eigen::MatrixXd covariance(const GpKernelConfig& kernel, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                           Exec exec) {
    if (a.cols() != b.cols() || a.cols() != kernel.lengthscales.size())
        fail(ErrorCode::invalid_input, "covariance: dimension mismatch");
    const Eigen::MatrixXd at = a.transpose();
    const Eigen::MatrixXd bt = b.transpose();
    Eigen::MatrixXd out(a.rows(), b.rows());
    for_each_index(static_cast<std::size_t>(b.rows()), exec, [&](std::size_t jj) {
        const auto j = static_cast<Eigen::Index>(jj);
        for (Eigen::Index i = 0; i < a.rows(); ++i) out(i, j) = kernel(at.col(i).data(), bt.col(j).data());
    });
    return out;
}

std::size_t basis_size(MeanKind mean, std::size_t dimension) {
    switch (mean) {
        case MeanKind::zero: return 0;
        case MeanKind::constant: return 1;
        case MeanKind::linear: return dimension + 1;
    }
    return 0;
}

Eigen::MatrixXd basis(MeanKind mean, const Eigen::MatrixXd& x) {
    const auto p = static_cast<Eigen::Index>(basis_size(mean, static_cast<std::size_t>(x.cols())));
    Eigen::MatrixXd h(x.rows(), p);
    if (p == 0) return h;
    h.col(0).setOnes();
    if (mean == MeanKind::linear) h.rightCols(x.cols()) = x;
    return h;
}

Factor factorize(const Eigen::MatrixXd& m, double max_jitter) {
    if (!m.allFinite()) fail(ErrorCode::numerical_failure, "covariance has non-finite entries");
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) return {llt.matrixL(), 0.0};
    const double scale = m.diagonal().mean();
    for (double rel = 1e-10; rel <= max_jitter * (1.0 + 1e-9); rel *= 10.0) {
        Eigen::MatrixXd jittered = m;
        jittered.diagonal().array() += rel * scale;
        llt.compute(jittered);
        if (llt.info() == Eigen::Success) return {llt.matrixL(), rel * scale};
    }
    fail(ErrorCode::numerical_failure,
         "covariance not positive definite after jitter up to " + format_double(max_jitter) +
             " x mean diagonal (n=" + std::to_string(m.rows()) + ", diagonal range [" +
             format_double(m.diagonal().minCoeff()) + ", " + format_double(m.diagonal().maxCoeff()) + "])");
}

std::string ModelKey::str() const {
    return region + "__" + output + "__" + std::to_string(year);
}

ModelKey parse_model_key(const std::string& text) {
    const auto first = text.find("__");
    const auto last = text.rfind("__");
    if (first == std::string::npos || first == last)
        fail(ErrorCode::invalid_input, "model key '" + text + "' is not <region>__<output>__<year>");
    ModelKey key;
    key.region = text.substr(0, first);
    key.output = text.substr(first + 2, last - first - 2);
    key.year = static_cast<int>(parse_double(text.substr(last + 2), "model key year"));
    return key;
}

void TrainingSet::validate() const {
    if (x.rows() != y.size())
        fail(ErrorCode::invalid_input, "training set has " + std::to_string(x.rows()) + " rows but " +
                                           std::to_string(y.size()) + " outputs");
    if (x.rows() == 0) fail(ErrorCode::invalid_input, "training set is empty");
    if (!x.allFinite()) fail(ErrorCode::invalid_input, "training inputs contain non-finite values");
    for (Eigen::Index i = 0; i < y.size(); ++i)
        if (!std::isfinite(y(i)))
            fail(ErrorCode::invalid_input, "training output " + std::to_string(i) + " is not finite");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return x(a, 0) < x(b, 0); });
    for (std::size_t a = 0; a < order.size(); ++a)
        for (std::size_t b = a + 1; b < order.size(); ++b) {
            if (x(order[b], 0) - x(order[a], 0) > kDuplicateTolerance) break;
            if (((x.row(order[a]) - x.row(order[b])).array().abs() <= kDuplicateTolerance).all())
                fail(ErrorCode::invalid_input, "training rows " + std::to_string(std::min(order[a], order[b])) +
                                                   " and " + std::to_string(std::max(order[a], order[b])) +
                                                   " are duplicates");
        }
}

std::pair<TrainingSet, TrainingSet> split(const TrainingSet& all, double train_fraction, std::uint64_t seed) {
    const std::size_t n = all.size();
    if (n < 5) fail(ErrorCode::invalid_input, "split needs at least 5 points, got " + std::to_string(n));
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        fail(ErrorCode::invalid_input, "train fraction must lie in (0,1)");
    const auto n_train = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction)), 1, n - 1);
    std::vector<Eigen::Index> perm(n);
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    auto rng = make_rng(seed, "split");
    std::shuffle(perm.begin(), perm.end(), rng);
    std::sort(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::sort(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());

    auto take = [&](std::size_t from, std::size_t to) {
        TrainingSet s;
        s.key = all.key;
        s.x.resize(static_cast<Eigen::Index>(to - from), all.x.cols());
        s.y.resize(static_cast<Eigen::Index>(to - from));
        for (std::size_t r = from; r < to; ++r) {
            s.x.row(static_cast<Eigen::Index>(r - from)) = all.x.row(perm[r]);
            s.y(static_cast<Eigen::Index>(r - from)) = all.y(perm[r]);
        }
        return s;
    };
    return {take(0, n_train), take(n_train, n)};
}

std::string training_to_csv(const TrainingSet& set, const std::vector<std::string>& ids) {
    if (ids.size() != static_cast<std::size_t>(set.x.cols()))
        fail(ErrorCode::invalid_input, "training CSV: id count does not match design columns");
    CsvTable t;
    t.header = ids;
    t.header.push_back(set.key.output);
    for (Eigen::Index i = 0; i < set.x.rows(); ++i) {
        std::vector<std::string> row;
        row.reserve(ids.size() + 1);
        for (Eigen::Index d = 0; d < set.x.cols(); ++d) row.push_back(format_double(set.x(i, d)));
        row.push_back(format_double(set.y(i)));
        t.rows.push_back(std::move(row));
    }
    return to_csv(t);
}

TrainingSet training_from_csv(std::string_view csv, const std::vector<std::string>& ids, const ModelKey& key) {
    auto t = parse_csv(csv);
    if (t.header.size() != ids.size() + 1 || !std::equal(ids.begin(), ids.end(), t.header.begin()))
        fail(ErrorCode::invalid_input, "training CSV columns must be the space ids followed by one output");
    TrainingSet s;
    s.key = key;
    s.x.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(ids.size()));
    s.y.resize(static_cast<Eigen::Index>(t.rows.size()));
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        for (std::size_t d = 0; d < ids.size(); ++d)
            s.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = parse_double(t.rows[i][d], ids[d]);
        s.y(static_cast<Eigen::Index>(i)) = parse_double(t.rows[i].back(), t.header.back());
    }
    return s;
}

LmlResult log_marginal_likelihood(const GpKernelConfig& kernel, MeanKind mean, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& y, bool with_gradient) {
    kernel.validate();
    if (static_cast<std::size_t>(x.cols()) != kernel.dimension())
        fail(ErrorCode::invalid_input, "kernel has " + std::to_string(kernel.dimension()) +
                                           " lengthscales but inputs have " + std::to_string(x.cols()) + " columns");
    if (x.rows() != y.size()) fail(ErrorCode::invalid_input, "input and output counts differ");
    const Workspace ws(x, mean);
    return evaluate_lml(ws, kernel, y, with_gradient);
}

GpModel GpModel::condition(const TrainingSet& train, const GpKernelConfig& kernel, MeanKind mean, Exec exec) {
    train.validate();
    kernel.validate();
    if (static_cast<std::size_t>(train.x.cols()) != kernel.dimension())
        fail(ErrorCode::invalid_input, "kernel dimension " + std::to_string(kernel.dimension()) +
                                           " does not match training inputs (" + std::to_string(train.x.cols()) + ")");
    require_size(train, mean);

    GpModel m;
    m.train_ = train;
    m.kernel_ = kernel;
    m.mean_ = mean;
    m.xt_ = train.x.transpose();
    Eigen::MatrixXd k = covariance(kernel, train.x, train.x, exec);
    k.diagonal().array() += kernel.nugget;
    m.factor_ = factorize(k);
    const auto& lower = m.factor_.lower;
    const Eigen::VectorXd ys = solve_lower(lower, train.y);
    Eigen::VectorXd resid = ys;
    const Eigen::MatrixXd h = basis(mean, train.x);
    if (h.cols() > 0) {
        m.lh_ = lower.triangularView<Eigen::Lower>().solve(h);
        Eigen::LLT<Eigen::MatrixXd> q(m.lh_.transpose() * m.lh_);
        if (q.info() != Eigen::Success)
            fail(ErrorCode::numerical_failure, "regression basis is rank deficient for these training inputs");
        m.q_lower_ = q.matrixL();
        m.beta_ = q.solve(m.lh_.transpose() * ys);
        resid = ys - m.lh_ * m.beta_;
    } else {
        m.lh_.resize(train.x.rows(), 0);
        m.beta_.resize(0);
    }
    m.alpha_ = solve_upper_t(lower, resid);
    m.diagnostics.jitter = m.factor_.jitter;
    return m;
}

Prediction GpModel::predict(const Eigen::VectorXd& x) const {
    if (static_cast<std::size_t>(x.size()) != dimension())
        fail(ErrorCode::invalid_input, "prediction point has dimension " + std::to_string(x.size()) +
                                           ", model expects " + std::to_string(dimension()));
    if (!x.allFinite()) fail(ErrorCode::invalid_input, "prediction point has non-finite coordinates");
    const auto n = xt_.cols();
    Eigen::VectorXd kstar(n);
    for (Eigen::Index j = 0; j < n; ++j) kstar(j) = kernel_(x.data(), xt_.col(j).data());

    Prediction p;
    p.mean = kstar.dot(alpha_);
    double var = kernel_.variance;
    const Eigen::VectorXd v = solve_lower(factor_.lower, kstar);
    var -= v.squaredNorm();
    if (beta_.size() > 0) {
        Eigen::VectorXd h(beta_.size());
        h(0) = 1.0;
        if (mean_ == MeanKind::linear) h.tail(x.size()) = x;
        p.mean += h.dot(beta_);
        const Eigen::VectorXd r = h - lh_.transpose() * v;
        var += solve_lower(q_lower_, r).squaredNorm();
    }
    if (var < 0.0) {
        p.clamped = var < -1e-10;
        var = 0.0;
    }
    p.variance = var;
    return p;
}

GpKernelConfig default_initial_kernel(const TrainingSet& train, KernelKind kind) {
    double var = population_variance(train.y);
    if (!(var > 0.0)) var = 1.0;
    GpKernelConfig k;
    k.kind = kind;
    k.variance = var;
    k.lengthscales = Eigen::VectorXd::Constant(train.x.cols(), 0.5);
    k.nugget = std::max(kMinNugget, 1e-6 * var);
    return k;
}

GpModel fit(const TrainingSet& train, const FitOptions& options) {
    train.validate();
    require_size(train, options.mean);
    if (options.restarts < 1) fail(ErrorCode::invalid_input, "fit needs at least one restart");
    const auto dim = train.x.cols();

    // Optimize on standardized outputs; the likelihood surface is the same up to a constant.
    const double y_mean = train.y.mean();
    double y_scale = std::sqrt(population_variance(train.y));
    if (!(y_scale > 0.0) || !std::isfinite(y_scale)) y_scale = 1.0;
    const Eigen::VectorXd ys = (train.y.array() - y_mean) / y_scale;
    const double scale2 = y_scale * y_scale;

    Bounds bounds;
    bounds.lo.resize(dim + 2);
    bounds.hi.resize(dim + 2);
    bounds.lo(0) = std::log(1e-8);
    bounds.hi(0) = std::log(1e3);
    bounds.lo.segment(1, dim).setConstant(std::log(0.01));
    bounds.hi.segment(1, dim).setConstant(std::log(10.0));
    bounds.lo(dim + 1) = std::log(std::max(1e-10, kMinNugget / scale2));
    bounds.hi(dim + 1) = std::log(1.0);

    const Workspace ws(train.x, options.mean);

    std::vector<Eigen::VectorXd> starts;
    {
        Eigen::VectorXd t(dim + 2);
        t(0) = 0.0;
        t.segment(1, dim).setConstant(std::log(0.5));
        t(dim + 1) = std::log(1e-6);
        starts.push_back(t);
    }
    for (int r = 1; r < options.restarts; ++r) {
        auto rng = make_rng(options.seed, "restart-" + std::to_string(r));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        Eigen::VectorXd t(dim + 2);
        t(0) = std::log(0.1) + u(rng) * (std::log(10.0) - std::log(0.1));
        for (Eigen::Index d = 0; d < dim; ++d) t(1 + d) = std::log(0.05) + u(rng) * (std::log(5.0) - std::log(0.05));
        t(dim + 1) = std::log(1e-8) + u(rng) * (std::log(1e-2) - std::log(1e-8));
        starts.push_back(t);
    }

    struct Outcome {
        bool ok = false;
        double value = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd log_theta;
    };
    std::vector<Outcome> outcomes(starts.size());
    for_each_index(starts.size(), options.exec, [&](std::size_t r) {
        std::vector<double> z(static_cast<std::size_t>(dim + 2));
        for (Eigen::Index i = 0; i < dim + 2; ++i)
            z[static_cast<std::size_t>(i)] = to_z(bounds.lo(i), bounds.hi(i), starts[r](i));
        ceres::GradientProblem problem(new NegativeLml(ws, ys, bounds, options.kernel));
        ceres::GradientProblemSolver::Options opts;
        opts.line_search_direction_type = ceres::LBFGS;
        opts.max_num_iterations = options.max_iterations;
        opts.logging_type = ceres::SILENT;
        opts.minimizer_progress_to_stdout = false;
        opts.function_tolerance = 1e-10;
        opts.gradient_tolerance = 1e-8;
        opts.parameter_tolerance = 1e-10;
        ceres::GradientProblemSolver::Summary summary;
        ceres::Solve(opts, problem, z.data(), &summary);
        if (!summary.IsSolutionUsable() || !std::isfinite(summary.final_cost)) return;
        outcomes[r].ok = true;
        outcomes[r].value = -summary.final_cost;
        outcomes[r].log_theta = to_log_theta(bounds, z.data());
    });

    int failed = 0;
    std::size_t best = outcomes.size();
    for (std::size_t r = 0; r < outcomes.size(); ++r) {
        if (!outcomes[r].ok) {
            ++failed;
            continue;
        }
        if (best == outcomes.size() || outcomes[r].value > outcomes[best].value) best = r;
    }
    if (best == outcomes.size())
        fail(ErrorCode::numerical_failure, "all " + std::to_string(outcomes.size()) +
                                               " optimizer restarts failed to factorize the covariance");

    GpKernelConfig kernel = kernel_from_log(options.kernel, outcomes[best].log_theta);
    kernel.variance *= scale2;
    kernel.nugget = std::max(kMinNugget, kernel.nugget * scale2);

    GpModel model = GpModel::condition(train, kernel, options.mean, options.exec);
    model.diagnostics.log_marginal_likelihood =
        outcomes[best].value - static_cast<double>(train.size()) * std::log(y_scale);
    model.diagnostics.restarts = static_cast<int>(outcomes.size());
    model.diagnostics.failed_restarts = failed;
    model.diagnostics.y_mean = y_mean;
    model.diagnostics.y_scale = y_scale;
    return model;
}

ValidationReport loo_validate(const GpModel& model) {
    const auto n = static_cast<Eigen::Index>(model.size());
    if (n < 3) fail(ErrorCode::invalid_input, "leave-one-out needs at least 3 points");
    const auto& lower = model.factor_.lower;
    const Eigen::MatrixXd linv = lower.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
    Eigen::MatrixXd p = linv.transpose() * linv;
    if (model.beta_.size() > 0) {
        // P = K^-1 - K^-1 H (H^T K^-1 H)^-1 H^T K^-1
        const Eigen::MatrixXd a = linv.transpose() * model.lh_;
        const Eigen::MatrixXd b = model.q_lower_.triangularView<Eigen::Lower>().solve(a.transpose());
        p.noalias() -= b.transpose() * b;
    }
    ValidationReport rep;
    double sse = 0.0;
    int covered = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double pii = p(i, i);
        if (!(pii > 0.0)) fail(ErrorCode::numerical_failure, "leave-one-out precision is not positive");
        const double resid = model.alpha_(i) / pii;
        const double var = 1.0 / pii;
        const double z = resid / std::sqrt(var);
        rep.means.push_back(model.train_.y(i) - resid);
        rep.variances.push_back(var);
        rep.standardized_errors.push_back(z);
        sse += resid * resid;
        if (std::abs(z) <= kZ95) ++covered;
    }
    rep.rmse = std::sqrt(sse / static_cast<double>(n));
    rep.coverage = static_cast<double>(covered) / static_cast<double>(n);
    return rep;
}

ValidationReport test_validate(const GpModel& model, const TrainingSet& test) {
    if (test.x.rows() != test.y.size() || test.x.rows() == 0)
        fail(ErrorCode::invalid_input, "test set is empty or malformed");
    ValidationReport rep;
    double sse = 0.0;
    int covered = 0;
    for (Eigen::Index i = 0; i < test.x.rows(); ++i) {
        const auto pred = model.predict(test.x.row(i).transpose());
        const double var = model.observation_variance(pred);
        const double resid = test.y(i) - pred.mean;
        const double z = resid / std::sqrt(var);
        rep.means.push_back(pred.mean);
        rep.variances.push_back(var);
        rep.standardized_errors.push_back(z);
        sse += resid * resid;
        if (std::abs(z) <= kZ95) ++covered;
    }
    const auto n = static_cast<double>(test.x.rows());
    rep.rmse = std::sqrt(sse / n);
    rep.coverage = covered / n;
    return rep;
}

void predict_batch(const GpModel& model, const Eigen::MatrixXd& x, Eigen::VectorXd& mean, Eigen::VectorXd& variance,
                   Exec exec) {
    if (static_cast<std::size_t>(x.cols()) != model.dimension())
        fail(ErrorCode::invalid_input, "batch has " + std::to_string(x.cols()) + " columns, model expects " +
                                           std::to_string(model.dimension()));
    mean.resize(x.rows());
    variance.resize(x.rows());
    for_each_index(static_cast<std::size_t>(x.rows()), exec, [&](std::size_t ii) {
        const auto i = static_cast<Eigen::Index>(ii);
        const auto p = model.predict(x.row(i).transpose());
        mean(i) = p.mean;
        variance(i) = p.variance;
    });
}

const char* to_string(KernelKind kind) {
    return kind == KernelKind::squared_exponential ? "squared-exponential" : "matern52";
}

const char* to_string(MeanKind kind) {
    switch (kind) {
        case MeanKind::zero: return "zero";
        case MeanKind::constant: return "constant";
        case MeanKind::linear: return "linear";
    }
    return "linear";
}

namespace {

KernelKind kernel_kind_from(const std::string& s) {
    if (s == "squared-exponential") return KernelKind::squared_exponential;
    if (s == "matern52") return KernelKind::matern52;
    fail(ErrorCode::corrupt_data, "unknown kernel kind '" + s + "'");
}

MeanKind mean_kind_from(const std::string& s) {
    if (s == "zero") return MeanKind::zero;
    if (s == "constant") return MeanKind::constant;
    if (s == "linear") return MeanKind::linear;
    fail(ErrorCode::corrupt_data, "unknown mean kind '" + s + "'");
}

nlohmann::json payload(const GpModel& m) {
    using nlohmann::json;
    json x = json::array();
    for (Eigen::Index i = 0; i < m.x().rows(); ++i) {
        json row = json::array();
        for (Eigen::Index d = 0; d < m.x().cols(); ++d) row.push_back(m.x()(i, d));
        x.push_back(std::move(row));
    }
    const auto& k = m.kernel();
    return {
        {"format", kModelFormat},
        {"version", kModelVersion},
        {"key", {{"region", m.key().region}, {"output", m.key().output}, {"year", m.key().year}}},
        {"kernel",
         {{"kind", to_string(k.kind)},
          {"variance", k.variance},
          {"lengthscales", std::vector<double>(k.lengthscales.data(), k.lengthscales.data() + k.lengthscales.size())},
          {"nugget", k.nugget}}},
        {"mean", to_string(m.mean_kind())},
        {"beta", std::vector<double>(m.beta().data(), m.beta().data() + m.beta().size())},
        {"x", std::move(x)},
        {"y", std::vector<double>(m.y().data(), m.y().data() + m.y().size())},
        {"diagnostics",
         {{"log_marginal_likelihood", m.diagnostics.log_marginal_likelihood},
          {"restarts", m.diagnostics.restarts},
          {"failed_restarts", m.diagnostics.failed_restarts},
          {"jitter", m.diagnostics.jitter},
          {"standardization", {{"mean", m.diagnostics.y_mean}, {"scale", m.diagnostics.y_scale}}}}},
    };
}

} // namespace

nlohmann::json to_json(const GpModel& model) {
    auto j = payload(model);
    j["checksum"] = sha256_hex(j.dump());
    return j;
}

GpModel model_from_json(const nlohmann::json& j) {
    try {
        if (!j.is_object() || j.value("format", "") != kModelFormat)
            fail(ErrorCode::corrupt_data, "not a powerem GP model file");
        const int version = j.at("version").get<int>();
        if (version != kModelVersion)
            fail(ErrorCode::version_mismatch, "model file version " + std::to_string(version) +
                                                  " is not supported (expected " + std::to_string(kModelVersion) + ")");
        auto body = j;
        const std::string checksum = body.at("checksum").get<std::string>();
        body.erase("checksum");
        if (sha256_hex(body.dump()) != checksum) fail(ErrorCode::corrupt_data, "model checksum mismatch");

        TrainingSet t;
        t.key.region = j.at("key").at("region").get<std::string>();
        t.key.output = j.at("key").at("output").get<std::string>();
        t.key.year = j.at("key").at("year").get<int>();
        const auto& rows = j.at("x");
        const auto ys = j.at("y").get<std::vector<double>>();
        if (rows.size() != ys.size()) fail(ErrorCode::corrupt_data, "model x and y sizes differ");
        const auto& kj = j.at("kernel");
        const auto ls = kj.at("lengthscales").get<std::vector<double>>();
        t.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ls.size()));
        t.y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto r = rows[i].get<std::vector<double>>();
            if (r.size() != ls.size()) fail(ErrorCode::corrupt_data, "model row width differs from kernel dimension");
            for (std::size_t d = 0; d < r.size(); ++d)
                t.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = r[d];
        }
        GpKernelConfig k;
        k.kind = kernel_kind_from(kj.at("kind").get<std::string>());
        k.variance = kj.at("variance").get<double>();
        k.lengthscales = Eigen::Map<const Eigen::VectorXd>(ls.data(), static_cast<Eigen::Index>(ls.size()));
        k.nugget = kj.at("nugget").get<double>();
        GpModel m = GpModel::condition(t, k, mean_kind_from(j.at("mean").get<std::string>()));
        const auto& dj = j.at("diagnostics");
        m.diagnostics.log_marginal_likelihood = dj.at("log_marginal_likelihood").get<double>();
        m.diagnostics.restarts = dj.at("restarts").get<int>();
        m.diagnostics.failed_restarts = dj.at("failed_restarts").get<int>();
        m.diagnostics.y_mean = dj.at("standardization").at("mean").get<double>();
        m.diagnostics.y_scale = dj.at("standardization").at("scale").get<double>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::corrupt_data, std::string("malformed model file: ") + e.what());
    }
}

std::string save_model(const GpModel& model) {
    return to_json(model).dump(1);
}

GpModel load_model(std::string_view bytes) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::corrupt_data, std::string("model payload is not valid JSON: ") + e.what());
    }
    return model_from_json(j);
}

void save_model_file(const GpModel& model, const std::filesystem::path& path) {
    write_file_atomic(path, save_model(model));
}

GpModel load_model_file(const std::filesystem::path& path) {
    try {
        return load_model(read_file(path));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::not_found) throw;
        fail(e.code(), path.string() + ": " + e.what());
    }
}

} // namespace powerem
