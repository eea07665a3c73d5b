#include "powerem/error.hpp"
#include "powerem/gp.hpp"
#include "powerem/param_space.hpp"
#include "powerem/util.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

using namespace powerem;

namespace {

GpKernelConfig se_kernel(double variance, std::vector<double> ls, double nugget) {
    GpKernelConfig k;
    k.variance = variance;
    k.lengthscales = Eigen::Map<Eigen::VectorXd>(ls.data(), static_cast<Eigen::Index>(ls.size()));
    k.nugget = nugget;
    return k;
}

TrainingSet make_set(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    TrainingSet t;
    t.x = x;
    t.y = y;
    t.key = {"global", "synthetic", 2050};
    return t;
}

// Draws y from a zero-mean GP prior with the given kernel (nugget included).
Eigen::VectorXd prior_draw(const GpKernelConfig& k, const Eigen::MatrixXd& x, std::uint64_t seed) {
    Eigen::MatrixXd c = covariance(k, x, x);
    c.diagonal().array() += k.nugget;
    const Eigen::MatrixXd l = c.llt().matrixL();
    Rng rng = make_rng(seed, "prior");
    std::normal_distribution<double> z;
    Eigen::VectorXd e(x.rows());
    for (auto& v : e) v = z(rng);
    return l * e;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

} // namespace

TEST_CASE("kernels evaluate their closed forms") {
    auto k = se_kernel(2.0, {0.5, 2.0}, 1e-6);
    const double a[] = {0.1, 0.3}, b[] = {0.4, 0.9};
    const double r2 = std::pow(0.3 / 0.5, 2) + std::pow(0.6 / 2.0, 2);
    CHECK(k(a, b) == doctest::Approx(2.0 * std::exp(-0.5 * r2)));
    k.kind = KernelKind::matern52;
    const double r = std::sqrt(r2);
    CHECK(k(a, b) == doctest::Approx(2.0 * (1 + std::sqrt(5.0) * r + 5.0 * r2 / 3.0) * std::exp(-std::sqrt(5.0) * r)));
    CHECK(k(a, a) == 2.0);
}

TEST_CASE("1x1 log marginal likelihood closed form") {
    const auto k = se_kernel(1.0, {1.0}, 1e-8);
    const auto r = log_marginal_likelihood(k, MeanKind::zero, Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1));
    CHECK(r.value == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi * (1 + 1e-8))).epsilon(1e-14));

    const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 3.0);
    const auto r3 = log_marginal_likelihood(k, MeanKind::zero, Eigen::MatrixXd::Zero(1, 1), y);
    CHECK(r3.value == doctest::Approx(-0.5 * 9.0 / (1 + 1e-8) - 0.5 * std::log(2 * std::numbers::pi * (1 + 1e-8))));
}

TEST_CASE("log marginal likelihood matches a dense evaluation with GLS mean") {
    const auto x = lhs_sample(12, 3, 8).points;
    Eigen::VectorXd y(12);
    for (Eigen::Index i = 0; i < 12; ++i) y(i) = std::sin(3 * x(i, 0)) + x(i, 1) * x(i, 2) + 0.5;
    const auto k = se_kernel(0.7, {0.4, 0.8, 1.3}, 1e-3);
    // dense reference with explicit inverses
    Eigen::MatrixXd c = covariance(k, x, x);
    c.diagonal().array() += k.nugget;
    const Eigen::MatrixXd ci = c.inverse();
    Eigen::MatrixXd h(12, 4);
    h.col(0).setOnes();
    h.rightCols(3) = x;
    const Eigen::VectorXd beta = (h.transpose() * ci * h).inverse() * (h.transpose() * ci * y);
    const Eigen::VectorXd e = y - h * beta;
    const double expected =
        -0.5 * e.dot(ci * e) - 0.5 * std::log(c.determinant()) - 6.0 * std::log(2 * std::numbers::pi);
    const auto r = log_marginal_likelihood(k, MeanKind::linear, x, y);
    CHECK(r.value == doctest::Approx(expected).epsilon(1e-10));
    for (int j = 0; j < 4; ++j) CHECK(r.beta(j) == doctest::Approx(beta(j)).epsilon(1e-8));
}

TEST_CASE("scaling y by c and the variances by c^2 shifts the LML by -n log c") {
    const auto x = lhs_sample(15, 2, 2).points;
    Eigen::VectorXd y(15);
    for (Eigen::Index i = 0; i < 15; ++i) y(i) = std::cos(4 * x(i, 0)) - x(i, 1);
    const auto k = se_kernel(0.5, {0.3, 0.6}, 1e-4);
    const double c = 37.5;
    auto kc = k;
    kc.variance *= c * c;
    kc.nugget *= c * c;
    for (auto mean : {MeanKind::zero, MeanKind::linear}) {
        const double a = log_marginal_likelihood(k, mean, x, y).value;
        const double b = log_marginal_likelihood(kc, mean, x, c * y).value;
        CHECK(b == doctest::Approx(a - 15.0 * std::log(c)).epsilon(1e-10));
    }
}

TEST_CASE("LML gradient agrees with central finite differences") {
    const auto x = lhs_sample(20, 3, 5).points;
    Eigen::VectorXd y(20);
    for (Eigen::Index i = 0; i < 20; ++i) y(i) = std::exp(x(i, 0)) + 2 * x(i, 1) * x(i, 1) - x(i, 2);
    for (auto kind : {KernelKind::squared_exponential, KernelKind::matern52}) {
        auto k = se_kernel(0.8, {0.35, 0.9, 1.7}, 2e-3);
        k.kind = kind;
        const auto r = log_marginal_likelihood(k, MeanKind::linear, x, y, true);
        REQUIRE(r.gradient.size() == 5);
        auto eval = [&](int p, double dlog) {
            auto kk = k;
            if (p == 0) kk.variance *= std::exp(dlog);
            else if (p == 4) kk.nugget *= std::exp(dlog);
            else kk.lengthscales(p - 1) *= std::exp(dlog);
            return log_marginal_likelihood(kk, MeanKind::linear, x, y).value;
        };
        const double h = 1e-5;
        for (int p = 0; p < 5; ++p) {
            const double fd = (eval(p, h) - eval(p, -h)) / (2 * h);
            CAPTURE(p);
            CHECK(std::abs(fd - r.gradient(p)) <= 1e-4 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("singular covariance without jitter fails to factorize") {
    Eigen::MatrixXd x(3, 1);
    x << 0.2, 0.2, 0.7;
    const auto k = se_kernel(1.0, {1.0}, 1e-10);
    const Eigen::MatrixXd c = covariance(k, x, x);
    CHECK_THROWS_AS(factorize(c, 0.0), Error);
    const auto f = factorize(c);
    CHECK(f.jitter > 0.0);
    CHECK_THROWS_AS(make_set(x, Eigen::Vector3d(1, 2, 3)).validate(), Error);
}

TEST_CASE("single-point posterior") {
    const auto k = se_kernel(1.0, {1.0}, 1e-8);
    const auto m = GpModel::condition(make_set(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Constant(1, 2.0)), k,
                                      MeanKind::zero);
    CHECK(m.predict(Eigen::VectorXd::Zero(1)).mean == doctest::Approx(2.0 / (1.0 + 1e-8)).epsilon(1e-15));
    const auto far = m.predict(Eigen::VectorXd::Constant(1, 10.0));
    CHECK(far.mean == doctest::Approx(2.0 * std::exp(-50.0) / (1 + 1e-8)).epsilon(1e-12));
    CHECK(far.mean < 1e-20);

    CHECK(m.predict(Eigen::VectorXd::Zero(1)).variance <= 1e-8 * (1 + 1e-6));
    double prev = -1.0;
    for (int s = 0; s <= 40; ++s) {
        const double v = m.predict(Eigen::VectorXd::Constant(1, 0.1 * s)).variance;
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("two-point posterior matches a hand-solved 2x2 system") {
    Eigen::MatrixXd x(2, 1);
    x << 0.2, 0.9;
    const Eigen::Vector2d y(1.5, -0.5);
    const auto k = se_kernel(1.3, {0.4}, 1e-4);
    auto kf = [&](double a, double b) { return 1.3 * std::exp(-0.5 * std::pow((a - b) / 0.4, 2)); };
    const double a = kf(0.2, 0.2) + 1e-4, b = kf(0.2, 0.9), d = kf(0.9, 0.9) + 1e-4;
    const double det = a * d - b * b;
    // [a b; b d]^-1 = [d -b; -b a] / det
    auto solve = [&](double r0, double r1) { return std::pair{(d * r0 - b * r1) / det, (-b * r0 + a * r1) / det}; };

    const auto zero = GpModel::condition(make_set(x, y), k, MeanKind::zero);
    const auto cst = GpModel::condition(make_set(x, y), k, MeanKind::constant);
    for (double p : {0.0, 0.2, 0.5, 0.75, 1.0}) {
        const double k0 = kf(p, 0.2), k1 = kf(p, 0.9);
        const auto [w0, w1] = solve(k0, k1);  // K^-1 k*
        const double mean0 = w0 * y(0) + w1 * y(1);
        const double var0 = 1.3 - (w0 * k0 + w1 * k1);
        const auto pz = zero.predict(Eigen::VectorXd::Constant(1, p));
        CHECK(pz.mean == doctest::Approx(mean0).epsilon(1e-8).scale(1.0));
        CHECK(pz.variance == doctest::Approx(var0).epsilon(1e-8).scale(1.0));

        // constant mean with GLS coefficient: beta = 1'K^-1 y / 1'K^-1 1
        const auto [u0, u1] = solve(1.0, 1.0);
        const double beta = (u0 * y(0) + u1 * y(1)) / (u0 + u1);
        const auto [r0, r1] = solve(y(0) - beta, y(1) - beta);
        const double mean1 = beta + k0 * r0 + k1 * r1;
        const double gap = 1.0 - (w0 + w1);
        const double var1 = var0 + gap * gap / (u0 + u1);
        const auto pc = cst.predict(Eigen::VectorXd::Constant(1, p));
        CHECK(pc.mean == doctest::Approx(mean1).epsilon(1e-8).scale(1.0));
        CHECK(pc.variance == doctest::Approx(var1).epsilon(1e-8).scale(1.0));
    }
}

TEST_CASE("fitted models interpolate training points within 3 sqrt(nugget)") {
    const auto x = lhs_sample(40, 3, 21).points;
    Eigen::VectorXd y(40);
    for (Eigen::Index i = 0; i < 40; ++i) y(i) = 10 * std::sin(2 * x(i, 0)) + 3 * x(i, 1) * x(i, 2);
    FitOptions o;
    o.restarts = 4;
    o.seed = 2;
    const auto m = fit(make_set(x, y), o);
    const double tol = 3 * std::sqrt(m.kernel().nugget);
    for (Eigen::Index i = 0; i < 40; ++i) CHECK(std::abs(m.predict(x.row(i).transpose()).mean - y(i)) <= tol);
    CHECK(m.diagnostics.log_marginal_likelihood >=
          log_marginal_likelihood(default_initial_kernel(make_set(x, y), KernelKind::squared_exponential),
                                  MeanKind::linear, x, y)
              .value);
    for (Eigen::Index d = 0; d < 3; ++d) {
        CHECK(m.kernel().lengthscales(d) >= 0.01 * (1 - 1e-12));
        CHECK(m.kernel().lengthscales(d) <= 10 * (1 + 1e-12));
    }
    const auto p1 = m.predict(Eigen::Vector3d(0.3, 0.3, 0.3));
    const auto p2 = m.predict(Eigen::Vector3d(0.3, 0.3, 0.3));
    CHECK(same_bits(p1.mean, p2.mean));
    CHECK(same_bits(p1.variance, p2.variance));
    CHECK_THROWS_AS(m.predict(Eigen::Vector2d(0.1, 0.2)), Error);
}

TEST_CASE("linear data: linear mean absorbs the trend") {
    const auto x = lhs_sample(30, 2, 4).points;
    Rng rng = make_rng(9, "noise");
    std::normal_distribution<double> noise(0.0, 1e-7);
    Eigen::VectorXd y(30);
    for (Eigen::Index i = 0; i < 30; ++i) y(i) = 2 * x(i, 0) - x(i, 1) + noise(rng);
    FitOptions o;
    o.restarts = 3;
    const auto m = fit(make_set(x, y), o);
    const auto loo = loo_validate(m);
    const double sd = std::sqrt((y.array() - y.mean()).square().sum() / 29.0);
    CHECK(loo.rmse <= 1e-3 * sd);
    for (double z : loo.standardized_errors) CHECK(std::abs(z) <= 3.0);
}

TEST_CASE("constant output is reproduced") {
    const auto x = lhs_sample(20, 2, 6).points;
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(20, 4.25);
    FitOptions o;
    o.restarts = 2;
    const auto m = fit(make_set(x, y), o);
    for (double p : {0.0, 0.37, 0.99}) CHECK(std::abs(m.predict(Eigen::Vector2d(p, 1 - p)).mean - 4.25) <= 1e-6);
}

TEST_CASE("refit with the same seed reproduces hyperparameters") {
    const auto x = lhs_sample(25, 3, 12).points;
    Eigen::VectorXd y(25);
    for (Eigen::Index i = 0; i < 25; ++i) y(i) = x(i, 0) * x(i, 0) + std::sin(5 * x(i, 2));
    FitOptions o;
    o.restarts = 5;
    o.seed = 77;
    const auto a = fit(make_set(x, y), o);
    const auto b = fit(make_set(x, y), o);
    o.exec = Exec::parallel;
    const auto c = fit(make_set(x, y), o);
    CHECK(save_model(a) == save_model(b));
    CHECK(save_model(a) == save_model(c));
}

TEST_CASE("closed-form LOO agrees with naive refits") {
    const auto x = lhs_sample(15, 2, 31).points;
    Eigen::VectorXd y(15);
    for (Eigen::Index i = 0; i < 15; ++i) y(i) = std::sin(6 * x(i, 0)) + x(i, 1);
    const auto k = se_kernel(0.9, {0.3, 0.7}, 1e-3);
    for (auto mean : {MeanKind::zero, MeanKind::linear}) {
        const auto m = GpModel::condition(make_set(x, y), k, mean);
        const auto loo = loo_validate(m);
        REQUIRE(loo.means.size() == 15);
        for (Eigen::Index i = 0; i < 15; ++i) {
            Eigen::MatrixXd xi(14, 2);
            Eigen::VectorXd yi(14);
            for (Eigen::Index r = 0, w = 0; r < 15; ++r)
                if (r != i) {
                    xi.row(w) = x.row(r);
                    yi(w++) = y(r);
                }
            const auto sub = GpModel::condition(make_set(xi, yi), k, mean);
            const auto p = sub.predict(x.row(i).transpose());
            CHECK(loo.means[static_cast<std::size_t>(i)] == doctest::Approx(p.mean).epsilon(1e-6));
            CHECK(loo.variances[static_cast<std::size_t>(i)] == doctest::Approx(sub.observation_variance(p)).epsilon(1e-6));
        }
    }
}

TEST_CASE("LOO on the minimal three-point case") {
    Eigen::MatrixXd x(3, 1);
    x << 0.1, 0.5, 0.9;
    const auto m = GpModel::condition(make_set(x, Eigen::Vector3d(1, 3, 2)), se_kernel(1, {0.5}, 1e-4), MeanKind::zero);
    const auto loo = loo_validate(m);
    CHECK(loo.standardized_errors.size() == 3);
    CHECK(loo.means.size() == 3);
}

TEST_CASE("LOO coverage on data drawn from the prior") {
    const auto x = lhs_sample(400, 3, 17).points;
    const auto k = se_kernel(1.0, {0.3, 0.5, 0.8}, 1e-2);
    const auto y = prior_draw(k, x, 4);
    const auto m = GpModel::condition(make_set(x, y), k, MeanKind::linear);
    const auto loo = loo_validate(m);
    CHECK(loo.coverage >= 0.88);
    CHECK(loo.coverage <= 0.99);
}

TEST_CASE("save and load reproduce predictions bit-for-bit") {
    const auto x = lhs_sample(30, 4, 3).points;
    Eigen::VectorXd y(30);
    for (Eigen::Index i = 0; i < 30; ++i) y(i) = x.row(i).sum() + std::cos(7 * x(i, 3));
    FitOptions o;
    o.restarts = 2;
    o.kernel = KernelKind::matern52;
    const auto m = fit(make_set(x, y), o);
    const std::string bytes = save_model(m);
    const auto back = load_model(bytes);
    CHECK(back.kernel().kind == KernelKind::matern52);
    CHECK(save_model(back) == bytes);
    const auto probes = lhs_sample(20, 4, 99).points;
    for (Eigen::Index i = 0; i < 20; ++i) {
        const auto a = m.predict(probes.row(i).transpose());
        const auto b = back.predict(probes.row(i).transpose());
        CHECK(same_bits(a.mean, b.mean));
        CHECK(same_bits(a.variance, b.variance));
    }

    try {
        load_model(bytes.substr(0, bytes.size() / 2));
        FAIL("truncated payload accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::corrupt_data);
    }
    auto j = nlohmann::json::parse(bytes);
    j["version"] = 999;
    try {
        load_model(j.dump());
        FAIL("unknown version accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::version_mismatch);
    }
    j = nlohmann::json::parse(bytes);
    j["y"][0] = 123.0;
    try {
        load_model(j.dump());
        FAIL("tampered payload accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::corrupt_data);
    }
}

TEST_CASE("serial and parallel kernels agree bit-for-bit") {
    const auto a = lhs_sample(64, 5, 1).points;
    const auto b = lhs_sample(33, 5, 2).points;
    const auto k = se_kernel(1.7, {0.2, 0.4, 0.6, 0.8, 1.0}, 1e-5);
    const Eigen::MatrixXd cs = covariance(k, a, b, Exec::serial);
    const Eigen::MatrixXd cp = covariance(k, a, b, Exec::parallel);
    CHECK(std::memcmp(cs.data(), cp.data(), sizeof(double) * static_cast<std::size_t>(cs.size())) == 0);

    Eigen::VectorXd y(64);
    for (Eigen::Index i = 0; i < 64; ++i) y(i) = a.row(i).squaredNorm();
    const auto m = GpModel::condition(make_set(a, y), k, MeanKind::linear);
    Eigen::VectorXd ms, vs, mp, vp;
    predict_batch(m, b, ms, vs, Exec::serial);
    predict_batch(m, b, mp, vp, Exec::parallel);
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
        CHECK(same_bits(ms(i), mp(i)));
        CHECK(same_bits(vs(i), vp(i)));
        const auto single = m.predict(b.row(i).transpose());
        CHECK(same_bits(ms(i), single.mean));
    }
}

TEST_CASE("split sizes, disjointness and determinism") {
    const auto x = lhs_sample(500, 2, 1).points;
    Eigen::VectorXd y(500);
    for (Eigen::Index i = 0; i < 500; ++i) y(i) = static_cast<double>(i);
    const auto all = make_set(x, y);
    const auto [train, test] = split(all, 0.8, 5);
    CHECK(train.size() == 400);
    CHECK(test.size() == 100);
    std::vector<int> seen(500, 0);
    for (Eigen::Index i = 0; i < train.y.size(); ++i) ++seen[static_cast<std::size_t>(train.y(i))];
    for (Eigen::Index i = 0; i < test.y.size(); ++i) ++seen[static_cast<std::size_t>(test.y(i))];
    for (int s : seen) CHECK(s == 1);

    const auto [again, rest] = split(all, 0.8, 5);
    CHECK(again.y == train.y);
    CHECK(rest.y == test.y);

    const auto ten = make_set(x.topRows(10), y.head(10));
    const auto [t8, t2] = split(ten, 0.8, 0);
    CHECK(t8.size() == 8);
    CHECK(t2.size() == 2);
    CHECK_THROWS_AS(split(make_set(x.topRows(4), y.head(4)), 0.8, 0), Error);
}

TEST_CASE("training CSV round trip") {
    const auto x = lhs_sample(6, 2, 3).points;
    const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(6, -1.0, 1.0);
    const auto set = make_set(x, y);
    const std::vector<std::string> ids{"a", "b"};
    const auto back = training_from_csv(training_to_csv(set, ids), ids, set.key);
    CHECK(back.x == x);
    CHECK(back.y == y);
    CHECK_THROWS_AS(training_from_csv(training_to_csv(set, ids), {"a", "c"}, set.key), Error);
}

TEST_CASE("model keys format and parse") {
    const ModelKey k{"IN", "solar_capacity_GW", 2030};
    CHECK(k.str() == "IN__solar_capacity_GW__2030");
    CHECK(parse_model_key(k.str()) == k);
    CHECK_THROWS_AS(parse_model_key("IN__solar"), Error);
}
