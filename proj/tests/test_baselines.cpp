#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "dro/baselines.hpp"
#include "dro/drago.hpp"
#include "dro/errors.hpp"
#include "dro/model.hpp"
#include "test_util.hpp"

using dro::BaselineConfig;
using dro::BaselineKind;
using dro::Mat;
using dro::ProblemSpec;
using dro::Reference;
using dro::ReferenceOptions;
using dro::Trace;
using dro::UncertaintySpec;
using dro::Vec;

namespace {

double smoothness_rate(const ProblemSpec& spec) {
  return 1.0 / (spec.loss.L + spec.mu +
                static_cast<double>(spec.n()) * spec.loss.G * spec.loss.G /
                    spec.nu);
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("reference solver: one-sample ridge has a closed form") {
  ProblemSpec spec;
  spec.data.features.resize(1, 2);
  spec.data.features << 1.0, 2.0;
  spec.data.targets.resize(1);
  spec.data.targets << 3.0;
  spec.uncertainty = UncertaintySpec::cvar(1.0);
  spec.mu = 1.0;
  spec.nu = 1.0;
  const dro::Constants c = dro::estimate_constants(spec);
  spec.loss.G = c.G;
  spec.loss.L = c.L;

  // min 0.5 (x.w - y)^2 + 0.5 ||w||^2 has minimizer x y / (1 + ||x||^2).
  const Vec want = spec.data.features.row(0).transpose() * 3.0 / 6.0;
  for (const bool lbfgs : {false, true}) {
    ReferenceOptions opts;
    opts.use_lbfgs = lbfgs;
    const Reference ref = dro::reference_solve(spec, opts);
    CHECK((ref.w_star - want).lpNorm<Eigen::Infinity>() <= 1e-8);
    const double value_want = 0.5 * std::pow(want.dot(spec.data.features.row(0)
                                                          .transpose()) - 3.0,
                                             2.0) +
                              0.5 * want.squaredNorm();
    CHECK(ref.value == doctest::Approx(value_want).epsilon(1e-10));
  }
}

TEST_CASE("reference solver: the uniform set reduces to penalized ERM") {
  const ProblemSpec spec = testutil::make_problem(
      10, 3, UncertaintySpec::cvar(1.0), 0.7, 0.4, 19);
  // theta = 1 pins q at 1/n, so the optimum solves the ridge normal
  // equations (X^T X / n + mu I) w = X^T y / n.
  const Mat& X = spec.data.features;
  const Vec& y = spec.data.targets;
  const Mat lhs =
      X.transpose() * X / 10.0 + 0.7 * Mat::Identity(3, 3);
  const Vec want = lhs.ldlt().solve(X.transpose() * y / 10.0);
  const Reference ref = dro::reference_solve(spec);
  CHECK((ref.w_star - want).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("reference solver: quasi-Newton and plain descent agree") {
  const ProblemSpec spec = testutil::make_problem(
      12, 4, UncertaintySpec::cvar(0.5), 0.9, 0.6, 23);
  ReferenceOptions gd;
  ReferenceOptions lbfgs;
  lbfgs.use_lbfgs = true;
  const Reference a = dro::reference_solve(spec, gd);
  const Reference b = dro::reference_solve(spec, lbfgs);
  CHECK(std::abs(a.value - b.value) <= 1e-10 * (1.0 + std::abs(a.value)));
  CHECK((a.w_star - b.w_star).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("reference solver guards") {
  ProblemSpec spec = testutil::make_problem(4, 2, UncertaintySpec::cvar(0.5),
                                            0.0, 1.0);
  CHECK_THROWS_AS(dro::reference_solve(spec), dro::invalid_input);
  spec.mu = 1.0;
  ReferenceOptions bad_tol;
  bad_tol.tol = 0.0;
  CHECK_THROWS_AS(dro::reference_solve(spec, bad_tol), dro::invalid_input);
  ReferenceOptions starved;
  starved.tol = 1e-16;
  starved.max_iters = 3;
  CHECK_THROWS_AS(dro::reference_solve(spec, starved), dro::numeric_error);
}

TEST_CASE("optimizers agree on the optimum they reach") {
  const ProblemSpec spec = testutil::make_problem(
      20, 3, UncertaintySpec::cvar(0.5), 1.0, 1.0, 29);
  const Reference ref = dro::reference_solve(spec);
  dro::DragoRunConfig config;
  config.b = 4;
  config.T_max = 60000;
  config.gap_target = 1e-9;
  config.seed = 5;
  const dro::Schedule schedule =
      dro::Schedule::regularized(dro::default_alpha(spec, 4), 5);
  const Trace trace = dro::drago_run(spec, schedule, config, &ref);
  REQUIRE(!trace.rows.empty());
  CHECK(trace.status == "ok");
  CHECK(trace.rows.back().normalized_gap <= 1e-9);
}

TEST_CASE("full-batch GD descends monotonically at the default step") {
  const ProblemSpec spec = testutil::make_problem(
      8, 3, UncertaintySpec::cvar(0.5), 0.5, 0.5, 37);
  BaselineConfig cfg;
  const Trace trace = dro::full_batch_gd_run(spec, cfg, 50);
  REQUIRE(trace.rows.size() == 51);  // default cadence records every step
  CHECK(trace.learning_rate == doctest::Approx(smoothness_rate(spec))
                                   .epsilon(1e-15));
  for (std::size_t k = 1; k < trace.rows.size(); ++k) {
    CHECK(trace.rows[k].objective <=
          trace.rows[k - 1].objective + 1e-12);
    CHECK(trace.rows[k].cumulative_queries ==
          trace.rows[k - 1].cumulative_queries + 8);
  }
}

TEST_CASE("full-batch GD without smoothing needs an explicit rate") {
  ProblemSpec spec = testutil::make_problem(6, 2, UncertaintySpec::cvar(0.5),
                                            0.0, 0.0, 41);
  BaselineConfig cfg;
  CHECK_THROWS_AS(dro::full_batch_gd_run(spec, cfg, 5), dro::invalid_input);
  cfg.learning_rate = 1e-3;
  const Trace trace = dro::full_batch_gd_run(spec, cfg, 5);
  CHECK(trace.status == "ok");
  CHECK(trace.rows.size() == 6);
}

TEST_CASE("full-batch SGD reproduces GD bit for bit") {
  const ProblemSpec spec = testutil::make_problem(
      6, 3, UncertaintySpec::cvar(0.5), 1.0, 1.0, 43);
  const double eta = smoothness_rate(spec);
  BaselineConfig gd_cfg;
  gd_cfg.learning_rate = eta;
  BaselineConfig sgd_cfg;
  sgd_cfg.kind = BaselineKind::kBiasedSGD;
  sgd_cfg.batch = 6;
  sgd_cfg.learning_rate = eta;
  sgd_cfg.seed = 77;
  const Trace gd = dro::full_batch_gd_run(spec, gd_cfg, 40);
  const Trace sgd = dro::sgd_biased_run(spec, sgd_cfg, 40);
  REQUIRE(gd.rows.size() == sgd.rows.size());
  for (std::size_t k = 0; k < gd.rows.size(); ++k) {
    CHECK(gd.rows[k].objective == sgd.rows[k].objective);
    CHECK(gd.rows[k].cumulative_queries == sgd.rows[k].cumulative_queries);
  }
}

TEST_CASE("sgd guards: batch bounds and learning rate") {
  const ProblemSpec spec = testutil::make_problem(
      6, 2, UncertaintySpec::cvar(0.5), 1.0, 1.0, 47);
  BaselineConfig cfg;
  cfg.kind = BaselineKind::kBiasedSGD;
  cfg.batch = 7;
  cfg.learning_rate = 0.01;
  CHECK_THROWS_AS(dro::sgd_biased_run(spec, cfg, 5), dro::invalid_input);
  cfg.batch = 0;
  CHECK_THROWS_AS(dro::sgd_biased_run(spec, cfg, 5), dro::invalid_input);
  cfg.batch = 2;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(dro::sgd_biased_run(spec, cfg, 5), dro::invalid_input);
}

TEST_CASE("sgd evaluation cadence defaults to one data pass") {
  const ProblemSpec spec = testutil::make_problem(
      6, 2, UncertaintySpec::cvar(0.5), 1.0, 1.0, 53);
  BaselineConfig cfg;
  cfg.kind = BaselineKind::kBiasedSGD;
  cfg.batch = 2;
  cfg.learning_rate = 0.005;
  const Trace trace = dro::sgd_biased_run(spec, cfg, 7);
  // Evaluations at 0, 3, 6 and the final step 7.
  REQUIRE(trace.rows.size() == 4);
  CHECK(trace.rows[1].iteration == 3);
  CHECK(trace.rows[2].iteration == 6);
  CHECK(trace.rows[3].iteration == 7);
  CHECK(trace.rows[3].cumulative_queries == 14);
}

TEST_CASE("uniform spectral sgd matches the uniform cvar run bit for bit") {
  // Both describe the same batch-local sets after resampling, so the
  // trajectories must coincide exactly for equal seeds.
  Vec sigma = Vec::Constant(8, 1.0 / 8.0);
  const ProblemSpec spectral = testutil::make_problem(
      8, 3, UncertaintySpec::spectral(sigma), 1.0, 1.0, 59);
  const ProblemSpec cvar = testutil::make_problem(
      8, 3, UncertaintySpec::cvar(1.0), 1.0, 1.0, 59);
  BaselineConfig cfg;
  cfg.kind = BaselineKind::kBiasedSGD;
  cfg.batch = 2;
  cfg.learning_rate = 0.01;
  cfg.seed = 4;
  const Trace a = dro::sgd_biased_run(spectral, cfg, 30);
  const Trace b = dro::sgd_biased_run(cvar, cfg, 30);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    CHECK(a.rows[k].objective == b.rows[k].objective);
  }
}

TEST_CASE("sgd handles the chi-squared ball by scaling its radius") {
  const ProblemSpec spec = testutil::make_problem(
      8, 3, UncertaintySpec::chi2_ball(0.5), 1.0, 1.0, 61);
  BaselineConfig cfg;
  cfg.kind = BaselineKind::kBiasedSGD;
  cfg.batch = 2;
  cfg.learning_rate = 0.01;
  const Trace trace = dro::sgd_biased_run(spec, cfg, 40);
  CHECK(trace.status == "ok");
  REQUIRE(trace.rows.size() >= 2);
  CHECK(trace.rows.back().objective < trace.rows.front().objective);
}

TEST_CASE("lsvrg rejects the chi-squared ball") {
  const ProblemSpec spec = testutil::make_problem(
      6, 2, UncertaintySpec::chi2_ball(0.5), 1.0, 1.0, 67);
  BaselineConfig cfg;
  cfg.kind = BaselineKind::kLSVRG;
  cfg.learning_rate = 0.01;
  CHECK_THROWS_AS(dro::lsvrg_run(spec, cfg, 5), dro::invalid_input);
}

TEST_CASE("lsvrg query accounting: init, steps, and epoch refreshes") {
  const ProblemSpec spec = testutil::make_problem(
      10, 3, UncertaintySpec::cvar(0.5), 1.0, 1.0, 71);
  BaselineConfig cfg;
  cfg.kind = BaselineKind::kLSVRG;
  cfg.learning_rate = 0.001;
  const std::int64_t T = 20;  // two epochs of the default length n
  const Trace trace = dro::lsvrg_run(spec, cfg, T);
  REQUIRE(!trace.rows.empty());
  // n init + T single queries + 2 full refreshes = 5n.
  CHECK(trace.rows.back().cumulative_queries == 50);
  CHECK(trace.status == "ok");
}

TEST_CASE("lsvrg's first step does not depend on the sampled index") {
  const ProblemSpec spec = testutil::make_problem(
      8, 3, UncertaintySpec::cvar(0.5), 1.0, 1.0, 73);
  BaselineConfig a;
  a.kind = BaselineKind::kLSVRG;
  a.learning_rate = 0.002;
  a.eval_every = 1;
  BaselineConfig b = a;
  a.seed = 1;
  b.seed = 12345;
  const Trace ta = dro::lsvrg_run(spec, a, 1);
  const Trace tb = dro::lsvrg_run(spec, b, 1);
  REQUIRE(ta.rows.size() == 2);
  REQUIRE(tb.rows.size() == 2);
  // At the anchor the variance-reduced correction vanishes, so the first
  // step is the full-batch step for every index draw.
  CHECK(ta.rows[1].objective == tb.rows[1].objective);
}

TEST_CASE("lsvrg flags divergence at an absurd learning rate") {
  const ProblemSpec spec = testutil::make_problem(
      8, 3, UncertaintySpec::cvar(0.5), 1.0, 1.0, 79);
  BaselineConfig cfg;
  cfg.kind = BaselineKind::kLSVRG;
  cfg.learning_rate = 1e6;
  cfg.eval_every = 1;
  const Trace trace = dro::lsvrg_run(spec, cfg, 50);
  CHECK(trace.status == "diverged");
}

TEST_CASE("baselines return empty ok traces for a zero budget") {
  const ProblemSpec spec = testutil::make_problem(
      6, 2, UncertaintySpec::cvar(0.5), 1.0, 1.0, 83);
  BaselineConfig cfg;
  cfg.learning_rate = 0.01;
  CHECK(dro::full_batch_gd_run(spec, cfg, 0).rows.empty());
  cfg.kind = BaselineKind::kBiasedSGD;
  cfg.batch = 2;
  CHECK(dro::sgd_biased_run(spec, cfg, 0).rows.empty());
  cfg.kind = BaselineKind::kLSVRG;
  CHECK(dro::lsvrg_run(spec, cfg, 0).rows.empty());
}

TEST_CASE("the tuning grid is the documented ten-point ladder") {
  const std::vector<double> want = {1e-4, 3e-4, 1e-3, 3e-3, 1e-2,
                                    3e-2, 1e-1, 3e-1, 1.0,  3.0};
  CHECK(dro::learning_rate_grid() == want);
}

TEST_CASE("auto tuning returns a grid member deterministically") {
  const ProblemSpec spec = testutil::make_problem(
      8, 2, UncertaintySpec::cvar(0.5), 1.0, 1.0, 89);
  BaselineConfig cfg;
  cfg.kind = BaselineKind::kBiasedSGD;
  cfg.batch = 2;
  const std::vector<std::uint64_t> seeds = {1, 2};
  const double eta = dro::auto_learning_rate(spec, cfg, 40, seeds);
  const auto& grid = dro::learning_rate_grid();
  CHECK(std::find(grid.begin(), grid.end(), eta) != grid.end());
  CHECK(dro::auto_learning_rate(spec, cfg, 40, seeds) == eta);

  CHECK_THROWS_AS(dro::auto_learning_rate(spec, cfg, 40, {}),
                  dro::invalid_input);
  CHECK_THROWS_AS(dro::auto_learning_rate(spec, cfg, 0, seeds),
                  dro::invalid_input);
}

}  // TEST_SUITE
