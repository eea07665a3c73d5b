// Serial reference vs OpenMP paths of the batch kernels.
#include "powerem/batch.hpp"
#include "powerem/gp.hpp"
#include "powerem/scenarios.hpp"

#include <benchmark/benchmark.h>

using namespace powerem;

namespace {

Exec exec_of(const benchmark::State& state) { return state.range(0) == 0 ? Exec::serial : Exec::parallel; }

const GpModel& model() {
    static const GpModel m = [] {
        TrainingSet t;
        t.x = lhs_sample(400, 30, 1).points;
        t.y = t.x.rowwise().squaredNorm();
        t.key = {"global", "bench", 0};
        GpKernelConfig k;
        k.variance = 1.0;
        k.lengthscales = Eigen::VectorXd::Constant(30, 0.8);
        k.nugget = 1e-6;
        return GpModel::condition(t, k, MeanKind::linear);
    }();
    return m;
}

void BM_SimulateBatch(benchmark::State& state) {
    const auto space = default_space();
    const auto config = default_sim_config();
    const auto design = lhs_sample(64, space, 2).points;
    for (auto _ : state) benchmark::DoNotOptimize(simulate_batch(config, space, design, exec_of(state)));
    state.SetItemsProcessed(state.iterations() * design.rows());
}
BENCHMARK(BM_SimulateBatch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Covariance(benchmark::State& state) {
    const auto a = lhs_sample(400, 30, 3).points;
    for (auto _ : state) benchmark::DoNotOptimize(covariance(model().kernel(), a, a, exec_of(state)));
}
BENCHMARK(BM_Covariance)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_PredictBatch(benchmark::State& state) {
    const auto x = lhs_sample(20000, 30, 4).points;
    Eigen::VectorXd mean, var;
    for (auto _ : state) {
        predict_batch(model(), x, mean, var, exec_of(state));
        benchmark::DoNotOptimize(mean.data());
    }
    state.SetItemsProcessed(state.iterations() * x.rows());
}
BENCHMARK(BM_PredictBatch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Propagate(benchmark::State& state) {
    const auto x = sample_scenario(baseline_spec(default_space(), 20000, 5));
    for (auto _ : state) benchmark::DoNotOptimize(propagate({&model()}, x, 5, exec_of(state)));
}
BENCHMARK(BM_Propagate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
