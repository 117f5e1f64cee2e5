#include "dro/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dro/dualprox.hpp"
#include "dro/errors.hpp"
#include "dro/rng.hpp"

namespace dro {

namespace {

// Philox stream ids (drago uses 1-2, dataset synthesis 3-5).
constexpr std::uint64_t kStreamSgdBatch = 6;
constexpr std::uint64_t kStreamLsvrgIndex = 7;

void check_constants(const ProblemSpec& problem) {
  if (!(problem.loss.G > 0.0) || !(problem.loss.L > 0.0)) {
    throw invalid_input(
        "loss constants G and L must be positive; fill them via "
        "estimate_constants before running the optimizer");
  }
}

double smoothness_step(const ProblemSpec& problem) {
  // 1 / (L + mu + n G^2 / nu): the primal objective's smoothness constant
  // for nu > 0.
  const double n = static_cast<double>(problem.n());
  return 1.0 / (problem.loss.L + problem.mu +
                n * problem.loss.G * problem.loss.G / problem.nu);
}

Trace make_trace(const ProblemSpec& problem, const std::string& optimizer,
                 std::uint64_t seed, double learning_rate) {
  Trace trace;
  trace.optimizer = optimizer;
  trace.seed = seed;
  trace.G = problem.loss.G;
  trace.L = problem.loss.L;
  trace.kappa_q = kappa_q(problem.uncertainty, problem.n());
  trace.learning_rate = learning_rate;
  trace.status = "ok";
  return trace;
}

// Shared evaluation bookkeeping: objective rows, gap normalization, and the
// divergence guard, identical in convention to the drago run loop.
class RunRecorder {
 public:
  RunRecorder(const ProblemSpec& problem, const Reference* reference,
              double divergence_factor, Trace& trace)
      : problem_(problem),
        reference_(reference),
        divergence_factor_(divergence_factor),
        trace_(trace) {}

  // Appends a row; returns false when the run must stop.
  bool record(std::int64_t iter, const Vec& w, std::int64_t cumulative_queries,
              double wall_seconds) {
    const PrimalEval eval = primal_value_and_gradient(problem_, w);
    eval_queries_ += problem_.n();
    if (!std::isfinite(eval.value)) {
      trace_.status = "failed: non-finite objective";
      return false;
    }
    if (iter == 0) {
      initial_value_ = eval.value;
      if (reference_ != nullptr) {
        gap_denom_ = initial_value_ - reference_->value;
        if (std::abs(gap_denom_) <= 1e-15) {
          throw numeric_error(
              "degenerate start: initial objective equals the reference "
              "optimum, the normalized gap is undefined");
        }
      }
    }
    double gap = -1.0;
    if (reference_ != nullptr) {
      gap = (eval.value - reference_->value) / gap_denom_;
      if (gap < 0.0) gap = gap >= -1e-12 ? 0.0 : gap;
    }
    TraceRow row;
    row.iteration = iter;
    row.cumulative_queries = cumulative_queries;
    row.wall_seconds = wall_seconds;
    row.objective = eval.value;
    row.normalized_gap = gap;
    row.eval_queries = eval_queries_;
    trace_.rows.push_back(row);
    if (iter > 0 && eval.value > divergence_factor_ *
                                     std::max(1.0, std::abs(initial_value_))) {
      trace_.status = "diverged";
      return false;
    }
    return true;
  }

 private:
  const ProblemSpec& problem_;
  const Reference* reference_;
  double divergence_factor_;
  Trace& trace_;
  std::int64_t eval_queries_ = 0;
  double initial_value_ = 0.0;
  double gap_denom_ = 0.0;
};

using Clock = std::chrono::steady_clock;

double seconds_since(const Clock::time_point& start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Reference reference_solve_gd(const ProblemSpec& problem,
                             const ReferenceOptions& options) {
  const double step = smoothness_step(problem);
  Vec w = Vec::Zero(problem.p());
  for (std::int64_t iter = 0; iter <= options.max_iters; ++iter) {
    const PrimalEval eval = primal_value_and_gradient(problem, w);
    if (!std::isfinite(eval.value)) {
      throw numeric_error("reference solver hit a non-finite objective");
    }
    if (eval.grad.norm() <= options.tol) {
      return Reference{std::move(w), eval.value};
    }
    w -= step * eval.grad;
  }
  throw numeric_error(
      "reference solver did not reach the gradient tolerance within " +
      std::to_string(options.max_iters) + " steps");
}

Reference reference_solve_lbfgs(const ProblemSpec& problem,
                                const ReferenceOptions& options) {
  constexpr int kHistory = 10;
  constexpr double kArmijo = 1e-4;
  const Eigen::Index p = problem.p();
  Vec w = Vec::Zero(p);
  PrimalEval eval = primal_value_and_gradient(problem, w);
  std::deque<Vec> s_hist, y_hist;
  std::deque<double> rho_hist;
  for (std::int64_t iter = 0; iter < options.max_iters; ++iter) {
    if (!std::isfinite(eval.value)) {
      throw numeric_error("reference solver hit a non-finite objective");
    }
    if (eval.grad.norm() <= options.tol) {
      return Reference{std::move(w), eval.value};
    }
    // Two-loop recursion for the quasi-Newton direction.
    Vec dir = eval.grad;
    std::vector<double> alphas(s_hist.size());
    for (std::size_t i = s_hist.size(); i-- > 0;) {
      alphas[i] = rho_hist[i] * s_hist[i].dot(dir);
      dir -= alphas[i] * y_hist[i];
    }
    if (!s_hist.empty()) {
      const Vec& y = y_hist.back();
      dir *= s_hist.back().dot(y) / y.squaredNorm();
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(dir);
      dir += (alphas[i] - beta) * s_hist[i];
    }
    dir = -dir;
    double slope = eval.grad.dot(dir);
    if (!(slope < 0.0)) {  // not a descent direction; fall back to steepest
      dir = -eval.grad;
      slope = -eval.grad.squaredNorm();
    }
    // Backtracking Armijo line search.
    double step = 1.0;
    Vec w_new;
    PrimalEval eval_new;
    for (;;) {
      w_new = w + step * dir;
      eval_new = primal_value_and_gradient(problem, w_new);
      if (std::isfinite(eval_new.value) &&
          eval_new.value <= eval.value + kArmijo * step * slope) {
        break;
      }
      step *= 0.5;
      if (step < 1e-20) {
        throw numeric_error("reference solver line search stalled");
      }
    }
    const Vec s = w_new - w;
    const Vec y = eval_new.grad - eval.grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > kHistory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    w = std::move(w_new);
    eval = std::move(eval_new);
  }
  throw numeric_error(
      "reference solver did not reach the gradient tolerance within " +
      std::to_string(options.max_iters) + " steps");
}

// Batch-local uncertainty set of the same kind: CVaR keeps theta, a spectral
// spectrum is resampled to m atoms by integrating its quantile density over
// m equal cells, and a chi^2 ball scales its radius to m/n. The full batch
// reuses the original set verbatim.
UncertaintySpec batch_uncertainty(const UncertaintySpec& spec, Eigen::Index n,
                                  Eigen::Index m) {
  if (m == n) return spec;
  switch (spec.set_kind) {
    case SetKind::kCVaR:
      return UncertaintySpec::cvar(spec.theta, spec.penalty_kind);
    case SetKind::kChi2Ball:
      return UncertaintySpec::chi2_ball(spec.rho * static_cast<double>(m) /
                                        static_cast<double>(n));
    case SetKind::kSpectral: {
      const Vec& sigma = spec.sigma;
      Vec cum(n);
      std::partial_sum(sigma.data(), sigma.data() + n, cum.data());
      const auto cdf = [&](double x) {
        const double pos = x * static_cast<double>(n);
        const auto i0 = static_cast<Eigen::Index>(std::floor(pos));
        if (i0 >= n) return cum[n - 1];
        const double base = i0 > 0 ? cum[i0 - 1] : 0.0;
        return base + (pos - static_cast<double>(i0)) * sigma[i0];
      };
      Vec out(m);
      for (Eigen::Index j = 0; j < m; ++j) {
        const double lo = static_cast<double>(j) / static_cast<double>(m);
        const double hi = static_cast<double>(j + 1) / static_cast<double>(m);
        out[j] = std::max(0.0, cdf(hi) - cdf(lo));
      }
      out /= out.sum();
      return UncertaintySpec::spectral(out, spec.penalty_kind);
    }
  }
  throw invalid_input("unknown uncertainty set kind");
}

double resolve_gd_learning_rate(const ProblemSpec& problem, double requested) {
  if (requested > 0.0) return requested;
  if (problem.nu <= 0.0) {
    throw invalid_input(
        "full-batch GD needs an explicit learning_rate when nu = 0 (the "
        "smoothness default 1/(L + mu + n G^2/nu) is undefined)");
  }
  return smoothness_step(problem);
}

}  // namespace

Reference reference_solve(const ProblemSpec& problem,
                          const ReferenceOptions& options) {
  problem.validate();
  check_constants(problem);
  if (problem.mu <= 0.0 || problem.nu <= 0.0) {
    throw invalid_input("reference_solve requires mu > 0 and nu > 0");
  }
  if (!(options.tol > 0.0)) throw invalid_input("tolerance must be positive");
  if (options.max_iters < 1) throw invalid_input("max_iters must be positive");
  return options.use_lbfgs ? reference_solve_lbfgs(problem, options)
                           : reference_solve_gd(problem, options);
}

Trace full_batch_gd_run(const ProblemSpec& problem, const BaselineConfig& cfg,
                        std::int64_t T_max, const Reference* reference) {
  problem.validate();
  check_constants(problem);
  if (T_max < 0) throw invalid_input("T_max must be nonnegative");
  const Eigen::Index n = problem.n();
  const Eigen::Index p = problem.p();
  const double eta = resolve_gd_learning_rate(problem, cfg.learning_rate);
  Trace trace = make_trace(problem, "full_batch_gd", cfg.seed, eta);
  if (T_max == 0) return trace;

  const std::int64_t eval_every = cfg.eval_every > 0 ? cfg.eval_every : 1;
  RunRecorder recorder(problem, reference, cfg.divergence_factor, trace);
  Vec w = Vec::Zero(p);
  Vec losses(n);
  Mat grads(n, p);
  Vec grad(p);
  std::int64_t queries = 0;
  double wall = 0.0;
  if (!recorder.record(0, w, queries, wall)) return trace;
  for (std::int64_t t = 1; t <= T_max; ++t) {
    const auto start = Clock::now();
    for (Eigen::Index i = 0; i < n; ++i) {
      losses[i] = component_loss_grad(problem, i, w, grad);
      grads.row(i) = grad.transpose();
    }
    const Vec qhat = max_oracle(losses, problem.uncertainty, problem.nu);
    Vec g = Vec::Zero(p);
    for (Eigen::Index i = 0; i < n; ++i) {
      g += qhat[i] * grads.row(i).transpose();
    }
    g += problem.mu * w;
    w -= eta * g;
    queries += n;
    wall += seconds_since(start);
    if (t % eval_every == 0 || t == T_max) {
      if (!recorder.record(t, w, queries, wall)) return trace;
    }
  }
  return trace;
}

Trace sgd_biased_run(const ProblemSpec& problem, const BaselineConfig& cfg,
                     std::int64_t T_max, const Reference* reference) {
  problem.validate();
  check_constants(problem);
  if (T_max < 0) throw invalid_input("T_max must be nonnegative");
  const Eigen::Index n = problem.n();
  const Eigen::Index p = problem.p();
  const Eigen::Index batch = cfg.batch;
  if (batch < 1 || batch > n) {
    throw invalid_input("batch size must lie in [1, n]");
  }
  if (!(cfg.learning_rate > 0.0)) {
    throw invalid_input(
        "sgd_biased_run needs a positive learning_rate (see "
        "auto_learning_rate)");
  }
  const UncertaintySpec batch_spec =
      batch_uncertainty(problem.uncertainty, n, batch);
  Trace trace = make_trace(problem, "sgd_biased", cfg.seed, cfg.learning_rate);
  if (T_max == 0) return trace;

  const std::int64_t eval_every =
      cfg.eval_every > 0 ? cfg.eval_every : std::max<std::int64_t>(1, n / batch);
  RunRecorder recorder(problem, reference, cfg.divergence_factor, trace);
  PhiloxRng rng(cfg.seed, kStreamSgdBatch);
  std::vector<Eigen::Index> pool(n);
  std::iota(pool.begin(), pool.end(), Eigen::Index{0});
  std::vector<Eigen::Index> chosen(batch);
  Vec w = Vec::Zero(p);
  Vec losses(batch);
  Mat grads(batch, p);
  Vec grad(p);
  std::int64_t queries = 0;
  double wall = 0.0;
  if (!recorder.record(0, w, queries, wall)) return trace;
  for (std::int64_t t = 1; t <= T_max; ++t) {
    const auto start = Clock::now();
    // Uniform batch without replacement (partial Fisher-Yates), then sorted
    // so the summation order is deterministic and batch = n reproduces the
    // full-batch arithmetic exactly.
    for (Eigen::Index j = 0; j < batch; ++j) {
      const auto r =
          j + static_cast<Eigen::Index>(
                  rng.below(static_cast<std::uint64_t>(n - j)));
      std::swap(pool[j], pool[r]);
      chosen[j] = pool[j];
    }
    std::sort(chosen.begin(), chosen.end());
    for (Eigen::Index r = 0; r < batch; ++r) {
      losses[r] = component_loss_grad(problem, chosen[r], w, grad);
      grads.row(r) = grad.transpose();
    }
    const Vec qhat = max_oracle(losses, batch_spec, problem.nu);
    Vec g = Vec::Zero(p);
    for (Eigen::Index r = 0; r < batch; ++r) {
      g += qhat[r] * grads.row(r).transpose();
    }
    g += problem.mu * w;
    w -= cfg.learning_rate * g;
    queries += batch;
    wall += seconds_since(start);
    if (t % eval_every == 0 || t == T_max) {
      if (!recorder.record(t, w, queries, wall)) return trace;
    }
  }
  return trace;
}

Trace lsvrg_run(const ProblemSpec& problem, const BaselineConfig& cfg,
                std::int64_t T_max, const Reference* reference) {
  problem.validate();
  check_constants(problem);
  if (T_max < 0) throw invalid_input("T_max must be nonnegative");
  if (problem.uncertainty.set_kind == SetKind::kChi2Ball) {
    throw invalid_input(
        "lsvrg_run supports CVaR and spectral uncertainty sets only");
  }
  if (!(cfg.learning_rate > 0.0)) {
    throw invalid_input(
        "lsvrg_run needs a positive learning_rate (see auto_learning_rate)");
  }
  const Eigen::Index n = problem.n();
  const Eigen::Index p = problem.p();
  const std::int64_t epoch = cfg.epoch_len > 0 ? cfg.epoch_len : n;
  Trace trace = make_trace(problem, "lsvrg", cfg.seed, cfg.learning_rate);
  if (T_max == 0) return trace;

  const std::int64_t eval_every =
      cfg.eval_every > 0 ? cfg.eval_every : static_cast<std::int64_t>(n);
  RunRecorder recorder(problem, reference, cfg.divergence_factor, trace);
  PhiloxRng rng(cfg.seed, kStreamLsvrgIndex);
  Vec w = Vec::Zero(p);
  Vec anchor_losses(n);
  Mat anchor_grads(n, p);
  Vec anchor_mean(p);
  Vec qbar(n);
  Vec grad(p);
  std::int64_t queries = 0;
  double wall = 0.0;

  const auto refresh_anchor = [&](const Vec& at) {
    for (Eigen::Index i = 0; i < n; ++i) {
      anchor_losses[i] = component_loss_grad(problem, i, at, grad);
      anchor_grads.row(i) = grad.transpose();
    }
    qbar = max_oracle(anchor_losses, problem.uncertainty, problem.nu);
    anchor_mean = anchor_grads.transpose() * qbar;
    queries += n;
  };

  refresh_anchor(w);
  if (!recorder.record(0, w, queries, wall)) return trace;
  for (std::int64_t t = 1; t <= T_max; ++t) {
    const auto start = Clock::now();
    const auto i = static_cast<Eigen::Index>(
        rng.below(static_cast<std::uint64_t>(n)));
    component_loss_grad(problem, i, w, grad);
    queries += 1;
    const Vec g = static_cast<double>(n) * qbar[i] *
                      (grad - anchor_grads.row(i).transpose()) +
                  anchor_mean + problem.mu * w;
    w -= cfg.learning_rate * g;
    if (t % epoch == 0) refresh_anchor(w);
    wall += seconds_since(start);
    if (t % eval_every == 0 || t == T_max) {
      if (!recorder.record(t, w, queries, wall)) return trace;
    }
  }
  return trace;
}

const std::vector<double>& learning_rate_grid() {
  static const std::vector<double> grid = {1e-4, 3e-4, 1e-3, 3e-3, 1e-2,
                                           3e-2, 1e-1, 3e-1, 1.0,  3.0};
  return grid;
}

double auto_learning_rate(const ProblemSpec& problem, const BaselineConfig& cfg,
                          std::int64_t T_max,
                          const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw invalid_input("tuning needs at least one seed");
  if (T_max < 1) throw invalid_input("tuning needs a positive budget");
  const auto run_one = [&](const BaselineConfig& c) -> Trace {
    switch (cfg.kind) {
      case BaselineKind::kFullBatchGD:
        return full_batch_gd_run(problem, c, T_max);
      case BaselineKind::kBiasedSGD:
        return sgd_biased_run(problem, c, T_max);
      case BaselineKind::kLSVRG:
        return lsvrg_run(problem, c, T_max);
    }
    throw invalid_input("unknown baseline kind");
  };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  double best_rate = 0.0;
  double best_score = kInf;
  for (const double eta : learning_rate_grid()) {
    double score = 0.0;
    for (const std::uint64_t seed : seeds) {
      BaselineConfig c = cfg;
      c.learning_rate = eta;
      c.seed = seed;
      const Trace trace = run_one(c);
      if (trace.status != "ok" || trace.rows.empty()) {
        score = kInf;
        break;
      }
      // Mean objective over the final ten evaluation rows (one row per data
      // pass at the default cadence).
      const std::size_t rows = trace.rows.size();
      const std::size_t take = std::min<std::size_t>(10, rows);
      double mean = 0.0;
      for (std::size_t r = rows - take; r < rows; ++r) {
        mean += trace.rows[r].objective;
      }
      mean /= static_cast<double>(take);
      if (!std::isfinite(mean)) {
        score = kInf;
        break;
      }
      score += mean;
    }
    if (score < best_score) {
      best_score = score;
      best_rate = eta;
    }
  }
  if (!(best_score < kInf)) {
    throw numeric_error("every learning rate in the tuning grid diverged");
  }
  return best_rate;
}

}  // namespace dro
