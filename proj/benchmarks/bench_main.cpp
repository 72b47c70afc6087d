#include <benchmark/benchmark.h>

#include "oem/experiment.hpp"

using namespace oem;

namespace {

Ensemble l96_ensemble(std::size_t n, std::size_t n_p, std::uint64_t seed) {
  SeededRng rng(seed, 0);
  return sample_mvn(Vector::Constant(static_cast<Eigen::Index>(n), 8.0), SpdMatrix::identity(n),
                    rng, n_p);
}

}  // namespace

static void Rk4Lorenz96Cycle(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Dynamics m = Dynamics::ode(OdeSystem::lorenz96({n, 8.0}), {0.001, 50});
  const Ensemble ens = l96_ensemble(n, 50, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.propagate_columns(ens.members()));
  }
  state.SetItemsProcessed(state.iterations() * 50);
}
BENCHMARK(Rk4Lorenz96Cycle)->Arg(8)->Arg(40)->Unit(benchmark::kMillisecond);

static void TwoScaleStep(benchmark::State& state) {
  const Derivative f = OdeSystem::two_scale_lorenz96({8, 256, 20.0, 1.0, 10.0, 10.0}).derivative();
  SeededRng rng(2, 0);
  Vector x = 0.1 * rng.standard_normal(264);
  for (auto _ : state) {
    x = rk4_step(f, x, 0.001);
    benchmark::DoNotOptimize(x);
  }
}
BENCHMARK(TwoScaleStep);

static void EnkfAnalysis(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto n_p = static_cast<std::size_t>(state.range(1));
  const Ensemble forecast = l96_ensemble(n, n_p, 3);
  const Vector y = Vector::Constant(static_cast<Eigen::Index>(n), 8.5);
  const auto h = ObservationOperator::identity(n);
  const SpdMatrix r = SpdMatrix::identity(n, 0.5);
  SeededRng rng(4, 0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(enkf_analysis(forecast, y, h, r, rng));
  }
}
BENCHMARK(EnkfAnalysis)->Args({8, 50})->Args({40, 100});

static void VmpfMapping(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto n_p = static_cast<std::size_t>(state.range(1));
  const Ensemble centers = l96_ensemble(n, n_p, 5);
  SeededRng rng(6, 0);
  const SpdMatrix q = SpdMatrix::identity(n, 0.3);
  const Ensemble forecast(centers.members() + 0.5 * rng.standard_normal(n, n_p));
  const Vector y = Vector::Constant(static_cast<Eigen::Index>(n), 8.5);
  const auto h = ObservationOperator::identity(n);
  const SpdMatrix r = SpdMatrix::identity(n, 0.5);
  VmpfSpec spec;
  spec.max_iterations = 20;
  spec.gradient_tolerance = 1e-12;
  for (auto _ : state) {
    benchmark::DoNotOptimize(vmpf_step(forecast, centers, y, h, r, q, spec));
  }
}
BENCHMARK(VmpfMapping)->Args({3, 50})->Args({40, 100})->Unit(benchmark::kMillisecond);

static void ImportanceSamplingStats(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto n_p = static_cast<std::size_t>(state.range(1));
  const auto m_p = static_cast<std::size_t>(state.range(2));
  const Ensemble prev = l96_ensemble(n, n_p, 7);
  const Vector y = Vector::Constant(static_cast<Eigen::Index>(n), 8.5);
  SeededRng rng(8, 0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(is_stats(prev, prev, SpdMatrix::identity(n, 0.3), y,
                                      ObservationOperator::identity(n), SpdMatrix::identity(n, 0.5),
                                      m_p, true, rng));
  }
}
BENCHMARK(ImportanceSamplingStats)->Args({3, 50, 20})->Args({40, 100, 100})->Unit(benchmark::kMillisecond);

static void OnlineEmCycleL63(benchmark::State& state) {
  ExperimentConfig cfg;
  cfg.filter = state.range(0) == 0 ? FilterKind::Enkf : FilterKind::Vmpf;
  cfg.estimator.kind = state.range(1) == 0 ? EstimatorKind::ImportanceSampling
                                           : EstimatorKind::OneStepSmoother;
  cfg.estimator.m_p = 20;
  const OnlineEmSetup setup{filter_dynamics(cfg), observation_operator(cfg), cfg.filter,
                            cfg.estimator,        cfg.schedule,              cfg.vmpf,
                            false};
  SeededRng rng(9, 0);
  Vector x0(3);
  x0 << -5.9, -5.5, 24.6;
  const Ensemble init = sample_mvn(x0, SpdMatrix::identity(3), rng, 50);
  const Vector y = x0;
  for (auto _ : state) {
    state.PauseTiming();
    OnlineEmState s = initial_state(init, SpdMatrix::identity(3, 0.3), SpdMatrix::identity(3, 0.5), false);
    s.cycle = 100;
    SeededRng cycle_rng(10, state.iterations());
    state.ResumeTiming();
    benchmark::DoNotOptimize(run_online_em_cycle(s, y, setup, cycle_rng));
  }
}
BENCHMARK(OnlineEmCycleL63)->Args({0, 0})->Args({0, 1})->Args({1, 0})->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
