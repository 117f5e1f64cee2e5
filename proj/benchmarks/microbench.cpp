// Micro-benchmarks for the hot kernels: the dual proximal oracles and one
// full optimizer iteration. Run e.g.
//   ./dro_microbench --benchmark_filter=Pav --benchmark_min_time=0.2s

#include <benchmark/benchmark.h>

#include <Eigen/Core>

#include "dro/bench.hpp"
#include "dro/drago.hpp"
#include "dro/dualprox.hpp"
#include "dro/model.hpp"
#include "dro/rng.hpp"

namespace {

dro::Vec random_vec(dro::PhiloxRng& rng, Eigen::Index n, double scale) {
  dro::Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

dro::ProblemSpec synthetic_problem(Eigen::Index n, Eigen::Index d,
                                   const dro::UncertaintySpec& unc) {
  dro::ProblemSpec spec;
  spec.data = dro::synthesize_problem(n, d, 0.1, 12);
  spec.loss.kind = dro::LossKind::kSquaredError;
  spec.uncertainty = unc;
  spec.mu = 1.0;
  spec.nu = 1.0;
  const dro::Constants c = dro::estimate_constants(spec);
  spec.loss.G = c.G;
  spec.loss.L = c.L;
  return spec;
}

void BM_SimplexProject(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  dro::PhiloxRng rng(1, 31);
  const dro::Vec v = random_vec(rng, n, 2.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dro::simplex_project(v));
  }
}
BENCHMARK(BM_SimplexProject)->Arg(100)->Arg(1000)->Arg(10000);

void BM_PavCvarChi2(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  dro::PhiloxRng rng(2, 31);
  const dro::Vec l = random_vec(rng, n, 2.0);
  const auto spec = dro::UncertaintySpec::cvar(0.5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dro::pav_isotonic_prox(l, spec, 0.5));
  }
}
BENCHMARK(BM_PavCvarChi2)->Arg(100)->Arg(1000)->Arg(10000);

void BM_PavCvarKL(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  dro::PhiloxRng rng(3, 31);
  const dro::Vec l = random_vec(rng, n, 2.0);
  const auto spec =
      dro::UncertaintySpec::cvar(0.5, dro::PenaltyKind::kKL);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dro::pav_isotonic_prox(l, spec, 0.5));
  }
}
BENCHMARK(BM_PavCvarKL)->Arg(100)->Arg(1000)->Arg(10000);

void BM_Chi2BallProx(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  dro::PhiloxRng rng(4, 31);
  const dro::Vec l = random_vec(rng, n, 2.0);
  const double rho = 1.0 / static_cast<double>(n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dro::chi2_ball_prox(l, rho, 1.0));
  }
}
BENCHMARK(BM_Chi2BallProx)->Arg(100)->Arg(1000)->Arg(10000);

void BM_MaxOracleSpectral(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  dro::PhiloxRng rng(5, 31);
  const dro::Vec l = random_vec(rng, n, 2.0);
  dro::Vec sigma(n);
  for (Eigen::Index i = 0; i < n; ++i) sigma[i] = static_cast<double>(i + 1);
  sigma /= sigma.sum();
  const auto spec = dro::UncertaintySpec::spectral(sigma);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dro::max_oracle(l, spec, 0.3));
  }
}
BENCHMARK(BM_MaxOracleSpectral)->Arg(100)->Arg(1000)->Arg(10000);

void BM_DragoIterate(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const Eigen::Index b = n / 10;
  const auto problem =
      synthetic_problem(n, 10, dro::UncertaintySpec::cvar(0.5));
  const auto memory = state.range(1) == 0 ? dro::MemoryMode::kFull
                                          : dro::MemoryMode::kCompact;
  const auto sched =
      dro::Schedule::regularized(dro::default_alpha(problem, b), n / b);
  dro::DragoState st = dro::drago_init(problem, b, memory, 7);
  for (auto _ : state) {
    dro::drago_iterate(st, sched, problem);
    benchmark::DoNotOptimize(st.w.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DragoIterate)
    ->Args({100, 0})
    ->Args({100, 1})
    ->Args({1000, 0})
    ->Args({1000, 1});

}  // namespace

BENCHMARK_MAIN();
