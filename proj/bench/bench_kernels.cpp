// Serial reference vs OpenMP versions of the parallel kernels.
// The second argument selects the mode: 0 serial, 1 parallel.

#include <benchmark/benchmark.h>

#include "napt/diagnostics.hpp"
#include "napt/estimators.hpp"
#include "napt/lab.hpp"
#include "napt/mlmc.hpp"
#include "napt/simulators.hpp"
#include "napt/training.hpp"

using namespace napt;

namespace {

Exec mode(const benchmark::State& s) { return s.range(1) ? Exec::parallel : Exec::serial; }

void label(benchmark::State& s) { s.SetLabel(s.range(1) ? "parallel" : "serial"); }

ThetaBatch gaussian(std::size_t n, std::size_t d, double shift, std::uint64_t seed) {
    Rng rng = make_stream(seed, 0);
    std::normal_distribution<double> nd(shift, 1.0);
    ThetaBatch b(d);
    std::vector<double> row(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (double& v : row) v = nd(rng);
        b.push_back(row);
    }
    return b;
}

void BM_mean_queries(benchmark::State& s) {
    const ToyModel toy;
    const StdNormalSampler sampler;
    const auto dist = LevelDistribution::tgrr(1.673, 2, 4);
    const MlmcConfig cfg{8, 1.8, 1.8, AtomMode::fresh, Coupling::independent};
    const auto fn = [&](std::size_t, Rng& rng) {
        std::normal_distribution<double> nd;
        const double th = nd(rng);
        return mlmc_query(toy, {&th, 1}, sampler, dist, cfg, rng, true);
    };
    for (auto _ : s) benchmark::DoNotOptimize(mean_queries(s.range(0), 1, true, fn, 1, mode(s)));
    s.SetItemsProcessed(s.iterations() * s.range(0));
    label(s);
}

void BM_mmd(benchmark::State& s) {
    const ThetaBatch a = gaussian(s.range(0), 2, 0.0, 1), b = gaussian(s.range(0), 2, 0.3, 2);
    for (auto _ : s) benchmark::DoNotOptimize(mmd(a, b, 1.0, mode(s)));
    label(s);
}

void BM_rejection_abc(benchmark::State& s) {
    const std::vector<double> x_o = {0.0, 0.0};
    for (auto _ : s)
        benchmark::DoNotOptimize(rejection_abc(task_spec(Task::two_moon), x_o, 0.1, s.range(0), 3, mode(s)));
    s.SetItemsProcessed(s.iterations() * s.range(0));
    label(s);
}

void BM_lmd_lotka_volterra(benchmark::State& s) {
    const TaskSpec& spec = task_spec(Task::lotka_volterra);
    Rng rng = make_stream(4, 0);
    ThetaBatch post(spec.theta_dim);
    std::vector<double> th(spec.theta_dim);
    for (long i = 0; i < s.range(0); ++i) {
        prior_sample(spec, rng, th);
        post.push_back(th);
    }
    const double th_o[4] = {-4.6, -0.7, 0.0, -4.6};
    Rng obs = make_stream(5, 0);
    const std::vector<double> x_o = simulate(spec, th_o, obs).x;
    for (auto _ : s) benchmark::DoNotOptimize(lmd(post, x_o, spec, 6, mode(s)));
    label(s);
}

}  // namespace

BENCHMARK(BM_mean_queries)->ArgsProduct({{1000, 10000}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_mmd)->ArgsProduct({{1000, 4000}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_rejection_abc)->ArgsProduct({{100000, 1000000}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_lmd_lotka_volterra)->ArgsProduct({{200}, {0, 1}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
