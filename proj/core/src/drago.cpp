#include "dro/drago.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <utility>
#include <vector>

#include "dro/dualprox.hpp"
#include "dro/errors.hpp"

#include "json.hpp"

namespace dro {

namespace {

// Philox stream ids; keep distinct from the dataset-synthesis and baseline
// streams so every random choice in a run is independently addressable.
constexpr std::uint64_t kStreamBlockI = 1;
constexpr std::uint64_t kStreamBlockJ = 2;

Eigen::Index block_offset(const DragoState& state, Eigen::Index block) {
  if (block < 0 || block >= state.M) {
    throw invalid_input("block index out of range");
  }
  return block * state.b;
}

void check_regularized_problem(const ProblemSpec& problem) {
  if (problem.mu <= 0.0 || problem.nu <= 0.0) {
    throw invalid_input(
        "the regularized schedule requires mu > 0 and nu > 0; "
        "use Schedule::unregularized otherwise");
  }
}

void check_unregularized_setup(const Schedule& schedule,
                               const ProblemSpec& problem, Eigen::Index M) {
  if (problem.mu <= 0.0 && schedule.mu1() <= 0.0) {
    throw invalid_input("mu and mu1 are both zero: primal step undefined");
  }
  if (problem.nu <= 0.0 && schedule.nu1() <= 0.0) {
    throw invalid_input("nu and nu1 are both zero: dual prox undefined");
  }
  if (M >= 2 && problem.mu <= 0.0 && schedule.mu2() <= 0.0) {
    throw invalid_input(
        "mu and mu2 are both zero with more than one block: the step-size "
        "recursion collapses to zero (set mu2 > 0 or use b = n)");
  }
}

void check_constants(const ProblemSpec& problem) {
  if (!(problem.loss.G > 0.0) || !(problem.loss.L > 0.0)) {
    throw invalid_input(
        "loss constants G and L must be positive; fill them via "
        "estimate_constants before running the optimizer");
  }
}

}  // namespace

Eigen::Index resolve_block_size(Eigen::Index n, Eigen::Index b) {
  if (n < 1) throw invalid_input("n must be at least 1");
  if (b < 1) throw invalid_input("batch size must be at least 1");
  if (b >= n) return n;  // deterministic full-batch mode, M = 1
  for (Eigen::Index d = b; d >= 1; --d) {
    if (n % d == 0) return d;  // largest divisor <= b, so M = n/d >= 2
  }
  return 1;  // unreachable: d = 1 always divides n
}

Schedule Schedule::regularized(double alpha, Eigen::Index num_blocks) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw invalid_input("alpha must be positive and finite");
  }
  if (num_blocks < 1) throw invalid_input("num_blocks must be at least 1");
  Schedule s;
  s.mode_ = ScheduleMode::kRegularized;
  s.alpha_ = alpha;
  s.num_blocks_ = num_blocks;
  const double m1 = static_cast<double>(num_blocks - 1);
  s.beta_bar_ =
      num_blocks > 1 ? 1.0 / (16.0 * alpha * (1.0 + alpha) * m1 * m1) : 0.0;
  return s;
}

Schedule Schedule::unregularized(double mu1, double mu2, double nu1) {
  if (mu1 < 0.0 || mu2 < 0.0 || nu1 < 0.0) {
    throw invalid_input("mu1, mu2, nu1 must be nonnegative");
  }
  if (!std::isfinite(mu1) || !std::isfinite(mu2) || !std::isfinite(nu1)) {
    throw invalid_input("mu1, mu2, nu1 must be finite");
  }
  Schedule s;
  s.mode_ = ScheduleMode::kUnregularized;
  s.mu1_ = mu1;
  s.mu2_ = mu2;
  s.nu1_ = nu1;
  return s;
}

double Schedule::a(std::int64_t t) const {
  if (mode_ != ScheduleMode::kRegularized) {
    throw invalid_input("closed-form schedule values require regularized mode");
  }
  if (t <= 0) return 0.0;
  return std::pow(1.0 + alpha_, static_cast<double>(t - 1));
}

double Schedule::beta(std::int64_t t) const {
  if (mode_ != ScheduleMode::kRegularized) {
    throw invalid_input("closed-form schedule values require regularized mode");
  }
  if (t < 1) throw invalid_input("schedule iteration index must be >= 1");
  // (1 - (1+alpha)^(1-t)) / (alpha (1+alpha)), kept accurate near t = 1 via
  // expm1/log1p; converges to 1/(alpha(1+alpha)) for large t.
  const double num = -std::expm1(static_cast<double>(1 - t) * std::log1p(alpha_));
  return num / (alpha_ * (1.0 + alpha_));
}

ScheduleValues Schedule::at(std::int64_t t) const {
  ScheduleValues v;
  v.a = a(t);
  v.beta = beta(t);
  v.A_prev = v.beta * v.a;  // the discounted partial sum sum_{s<t} a_s/(1+alpha)
  return v;
}

double default_alpha(const ProblemSpec& problem, Eigen::Index b, double scale) {
  problem.validate();
  check_constants(problem);
  if (problem.mu <= 0.0 || problem.nu <= 0.0) {
    throw invalid_input(
        "default_alpha requires mu > 0 and nu > 0; use the unregularized "
        "schedule when either penalty is absent");
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw invalid_input("scale must be positive and finite");
  }
  const auto n = problem.n();
  const Eigen::Index bb = resolve_block_size(n, b);
  const double bn = static_cast<double>(bb) / static_cast<double>(n);
  const double kappa = kappa_q(problem.uncertainty, n);
  const double term1 = bn;
  const double term2 = problem.mu / (problem.loss.L * kappa);
  const double term3 =
      bn * std::sqrt(problem.mu * problem.nu /
                     (static_cast<double>(n) * problem.loss.G * problem.loss.G));
  return scale * std::min({term1, term2, term3});
}

DragoState drago_init(const ProblemSpec& problem, Eigen::Index b,
                      MemoryMode memory, std::uint64_t seed) {
  problem.validate();
  const Eigen::Index n = problem.n();
  const Eigen::Index p = problem.p();
  DragoState state;
  state.b = resolve_block_size(n, b);
  state.M = n / state.b;
  state.memory = memory;
  state.t = 1;
  state.w = Vec::Zero(p);
  state.q = Vec::Constant(n, 1.0 / static_cast<double>(n));

  state.loss_table = Vec::Zero(n);
  state.weight_table1 = state.q;
  state.weight_table2 = state.q;
  state.grad_agg = Vec::Zero(p);
  state.anchors = Mat::Zero(state.M, p);
  state.anchor_sum = Vec::Zero(p);
  if (memory == MemoryMode::kFull) {
    state.grad_table1 = Mat::Zero(n, p);
  } else {
    state.anchors_prev = Mat::Zero(state.M, p);
    state.block_agg = Mat::Zero(state.M, p);
  }

  // One full-batch pass fills every table at w0 = 0 (n oracle queries).
  Vec grad(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    state.loss_table[i] = component_loss_grad(problem, i, state.w, grad);
    state.grad_agg += state.q[i] * grad;
    if (memory == MemoryMode::kFull) {
      state.grad_table1.row(i) = grad.transpose();
    } else {
      state.block_agg.row(i / state.b) += state.q[i] * grad.transpose();
    }
  }
  state.loss_table_lagged = state.loss_table;
  if (memory == MemoryMode::kFull) {
    state.grad_table2 = state.grad_table1;
  }
  state.query_count = n;

  state.rng_i = PhiloxRng(seed, kStreamBlockI);
  state.rng_j = PhiloxRng(seed, kStreamBlockJ);
  return state;
}

Vec primal_gradient_estimate(const DragoState& state,
                             const ProblemSpec& problem, double corr,
                             Eigen::Index block_i) {
  const Eigen::Index off = block_offset(state, block_i);
  const Eigen::Index p = problem.p();
  Vec delta = Vec::Zero(p);
  Vec grad(p);
  Vec grad_old(p);
  const bool full = state.memory == MemoryMode::kFull;
  for (Eigen::Index i = off; i < off + state.b; ++i) {
    component_loss_grad(problem, i, state.w, grad);
    if (full) {
      grad_old = state.grad_table2.row(i).transpose();
    } else {
      component_loss_grad(problem, i,
                          state.anchors_prev.row(block_i).transpose(),
                          grad_old);
    }
    delta += state.q[i] * grad - state.weight_table2[i] * grad_old;
  }
  return state.grad_agg +
         corr * static_cast<double>(state.M) * delta;
}

Vec dual_gradient_estimate(const DragoState& state, const ProblemSpec& problem,
                           double corr, Eigen::Index block_j) {
  const Eigen::Index off_j = block_offset(state, block_j);
  const Eigen::Index k = state.t % state.M;  // refresh block of iteration t
  const Eigen::Index off_k = k * state.b;
  Vec v = state.loss_table;
  for (Eigen::Index i = off_k; i < off_k + state.b; ++i) {
    v[i] = component_loss(problem, i, state.w);
  }
  const double scale = corr * static_cast<double>(state.M);
  for (Eigen::Index j = off_j; j < off_j + state.b; ++j) {
    v[j] += scale *
            (component_loss(problem, j, state.w) - state.loss_table_lagged[j]);
  }
  return v;
}

Vec primal_step_minimizer(const DragoState& state, const Vec& v_p, double a,
                          double mu, double coef_prev, double coef_ring,
                          Eigen::Index block_k) {
  const Eigen::Index off = block_offset(state, block_k);
  (void)off;
  const double denom =
      a * mu + coef_prev + static_cast<double>(state.M - 1) * coef_ring;
  if (!(denom > 0.0) || !std::isfinite(denom)) {
    throw numeric_error("primal step has a nonpositive curvature denominator");
  }
  Vec numer = coef_prev * state.w - a * v_p;
  if (state.M > 1 && coef_ring != 0.0) {
    numer +=
        coef_ring * (state.anchor_sum - state.anchors.row(block_k).transpose());
  }
  return numer / denom;
}

double unregularized_schedule_step(const DragoState& state,
                                   const Schedule& schedule,
                                   const ProblemSpec& problem) {
  if (schedule.mode() != ScheduleMode::kUnregularized) {
    throw invalid_input("unregularized_schedule_step needs unregularized mode");
  }
  check_constants(problem);
  check_unregularized_setup(schedule, problem, state.M);
  const double n = static_cast<double>(problem.n());
  const double b = static_cast<double>(state.b);
  const double mu = problem.mu;
  const double nu = problem.nu;
  const double L = problem.loss.L;
  const double G = problem.loss.G;
  const double q_max = kappa_q(problem.uncertainty, problem.n()) / n;

  const double prev_coef = state.sched_C * mu + schedule.mu1();
  const double branch1 =
      prev_coef / (12.0 * std::numbers::e * n * q_max * L);
  double anchor_min = prev_coef;
  if (state.M >= 2) {
    anchor_min = std::min(anchor_min, state.sched_c * mu + schedule.mu2());
  }
  const double dual_coef = state.sched_A * nu + schedule.nu1();
  const double branch3 =
      (b / (32.0 * n)) * std::sqrt(dual_coef * anchor_min) / (std::sqrt(n) * G);
  double a = std::min(branch1, branch3);
  if (state.t >= 2) {
    a = std::min(a, (1.0 + b / n) * state.sched_a_prev);
  }
  if (!(a > 0.0) || !std::isfinite(a)) {
    throw numeric_error("unregularized schedule produced a nonpositive step");
  }
  return a;
}

void drago_iterate(DragoState& state, const Schedule& schedule,
                   const ProblemSpec& problem) {
  const Eigen::Index n = problem.n();
  const Eigen::Index p = problem.p();
  if (state.loss_table.size() != n || state.w.size() != p) {
    throw invalid_input("state dimensions do not match the problem");
  }
  const Eigen::Index b = state.b;
  const Eigen::Index M = state.M;
  const bool full = state.memory == MemoryMode::kFull;
  const std::int64_t t = state.t;

  // Schedule-derived coefficients for this iteration. The regularized primal
  // step is scaled through by 1/a_t (the raw a_t cancels everywhere), which
  // keeps long runs free of overflow in (1+alpha)^t.
  double corr = 0.0;        // a_{t-1}/a_t
  double beta = 0.0;        // regularized dual prox parameter
  double a_step = 1.0;      // weight on <v, w> in the primal step
  double coef_prev = 0.0;   // weight on ||w - w_{t-1}||^2 / 2
  double coef_ring = 0.0;   // weight on each ||w - anchor_K||^2 / 2
  double step_mu = problem.mu;
  double a_t = 0.0;         // unregularized only
  double dual_anchor = 0.0; // unregularized Bregman anchor weight
  if (schedule.mode() == ScheduleMode::kRegularized) {
    check_regularized_problem(problem);
    if (schedule.num_blocks() != M) {
      throw invalid_input("schedule was built for a different block count");
    }
    beta = schedule.beta(t);
    corr = t == 1 ? 0.0 : 1.0 / (1.0 + schedule.alpha());
    coef_prev =
        (beta - schedule.beta_bar() * static_cast<double>(M - 1)) * problem.mu;
    coef_ring = schedule.beta_bar() * problem.mu;
  } else {
    a_t = unregularized_schedule_step(state, schedule, problem);
    corr = state.sched_a_prev / a_t;
    a_step = a_t;
    coef_prev = state.sched_C * problem.mu + schedule.mu1();
    coef_ring =
        M >= 2 ? state.sched_c * problem.mu + schedule.mu2() : 0.0;
    dual_anchor = (state.sched_A * problem.nu + schedule.nu1()) / a_t;
  }

  const Eigen::Index block_i = static_cast<Eigen::Index>(state.rng_i.below(
      static_cast<std::uint64_t>(M)));
  const Eigen::Index block_j = static_cast<Eigen::Index>(state.rng_j.below(
      static_cast<std::uint64_t>(M)));
  const Eigen::Index block_k = static_cast<Eigen::Index>(t % M);
  const Eigen::Index off_i = block_i * b;
  const Eigen::Index off_j = block_j * b;
  const Eigen::Index off_k = block_k * b;

  // Primal gradient estimate (b fresh queries; +b stale recomputes in
  // compact mode, where table-2 gradients live only as anchor points).
  Vec delta_p = Vec::Zero(p);
  {
    Vec grad(p);
    Vec grad_old(p);
    for (Eigen::Index i = off_i; i < off_i + b; ++i) {
      component_loss_grad(problem, i, state.w, grad);
      if (full) {
        grad_old = state.grad_table2.row(i).transpose();
      } else {
        component_loss_grad(problem, i,
                            state.anchors_prev.row(block_i).transpose(),
                            grad_old);
      }
      delta_p += state.q[i] * grad - state.weight_table2[i] * grad_old;
    }
  }
  const Vec v_p =
      state.grad_agg + corr * static_cast<double>(M) * delta_p;

  // Primal proximal step and anchor-ring rotation.
  Vec w_new = primal_step_minimizer(state, v_p, a_step, step_mu, coef_prev,
                                    coef_ring, block_k);
  if (!full) {
    state.anchors_prev.row(block_k) = state.anchors.row(block_k);
  }
  state.anchor_sum += w_new - state.anchors.row(block_k).transpose();
  state.anchors.row(block_k) = w_new.transpose();
  state.w = std::move(w_new);

  // Fresh losses and gradients for the cyclic refresh block (b queries).
  Vec l_k(b);
  Mat g_k(b, p);
  {
    Vec grad(p);
    for (Eigen::Index r = 0; r < b; ++r) {
      l_k[r] = component_loss_grad(problem, off_k + r, state.w, grad);
      g_k.row(r) = grad.transpose();
    }
  }

  // Loss-only evaluations for the sampled dual block (b queries).
  Vec l_j(b);
  for (Eigen::Index r = 0; r < b; ++r) {
    l_j[r] = component_loss(problem, off_j + r, state.w);
  }

  // Dual gradient estimate: stored losses, patched with the fresh block-K
  // values, plus the debiasing correction on block J.
  Vec v_d = state.loss_table;
  v_d.segment(off_k, b) = l_k;
  v_d.segment(off_j, b) +=
      corr * static_cast<double>(M) *
      (l_j - state.loss_table_lagged.segment(off_j, b));

  Vec q_new;
  if (schedule.mode() == ScheduleMode::kRegularized) {
    q_new = dual_prox_step(state.q, v_d, beta, problem.uncertainty, problem.nu);
  } else {
    q_new = bregman_prox(state.q, v_d, dual_anchor, problem.uncertainty,
                         problem.nu);
  }

  // Table rotations on block K, then the rank-b aggregate update. After the
  // rotation the table-2 entries hold the outgoing values, so the update
  // needs no temporaries.
  if (full) {
    state.grad_table2.middleRows(off_k, b) =
        state.grad_table1.middleRows(off_k, b);
    state.grad_table1.middleRows(off_k, b) = g_k;
  }
  state.loss_table_lagged.segment(off_k, b) = state.loss_table.segment(off_k, b);
  state.loss_table.segment(off_k, b) = l_k;
  state.weight_table2.segment(off_k, b) = state.weight_table1.segment(off_k, b);
  state.weight_table1.segment(off_k, b) = q_new.segment(off_k, b);
  const Vec fresh_partial = g_k.transpose() * q_new.segment(off_k, b);
  if (full) {
    state.grad_agg += fresh_partial -
                      state.grad_table2.middleRows(off_k, b).transpose() *
                          state.weight_table2.segment(off_k, b);
  } else {
    state.grad_agg += fresh_partial - state.block_agg.row(block_k).transpose();
    state.block_agg.row(block_k) = fresh_partial.transpose();
  }
  state.q = std::move(q_new);

  // Aggregate-consistency sweep once per cycle (amortized O(bp)): recompute
  // the exact aggregates, count it as a recovery if drift exceeded 1e-6.
  if (t % M == 0) {
    Vec exact(p);
    if (full) {
      exact = state.grad_table1.transpose() * state.weight_table1;
    } else {
      exact = state.block_agg.colwise().sum().transpose();
    }
    const double drift = (state.grad_agg - exact).norm();
    if (drift > 1e-6 * (1.0 + exact.norm())) {
      ++state.agg_rebuilds;
    }
    state.grad_agg = std::move(exact);
    state.anchor_sum = state.anchors.colwise().sum().transpose();
  }

  state.query_count += full ? 3 * b : 4 * b;
  state.t = t + 1;
  if (schedule.mode() == ScheduleMode::kUnregularized) {
    state.sched_A += a_t;
    state.sched_c = a_t / (4.0 * std::numbers::e * static_cast<double>(M));
    state.sched_C =
        state.sched_A - static_cast<double>(M - 1) * state.sched_c;
    state.sched_a_prev = a_t;
  }
}

Trace drago_run(const ProblemSpec& problem, const Schedule& schedule,
                const DragoRunConfig& config, const Reference* reference) {
  if (config.T_max < 0) throw invalid_input("T_max must be nonnegative");
  check_constants(problem);
  if (schedule.mode() == ScheduleMode::kRegularized) {
    check_regularized_problem(problem);
  }

  Trace trace;
  trace.optimizer = "drago";
  trace.seed = config.seed;
  trace.G = problem.loss.G;
  trace.L = problem.loss.L;
  trace.kappa_q = kappa_q(problem.uncertainty, problem.n());
  trace.alpha =
      schedule.mode() == ScheduleMode::kRegularized ? schedule.alpha() : 0.0;
  trace.status = "ok";
  if (config.T_max == 0) return trace;  // empty trace, nothing touched

  DragoState state =
      drago_init(problem, config.b, config.memory, config.seed);
  if (schedule.mode() == ScheduleMode::kRegularized &&
      schedule.num_blocks() != state.M) {
    throw invalid_input("schedule was built for a different block count");
  }
  if (schedule.mode() == ScheduleMode::kUnregularized) {
    check_unregularized_setup(schedule, problem, state.M);
  }
  const std::int64_t eval_every =
      config.eval_every > 0 ? config.eval_every : state.M;

  const Eigen::Index n = problem.n();
  std::int64_t eval_queries = 0;
  double wall_seconds = 0.0;
  double initial_value = 0.0;
  double gap_denom = 0.0;

  const auto evaluate = [&](std::int64_t iter) -> bool {
    // Each evaluation is a full primal pass: n queries, bookkept separately
    // from the optimizer's own query budget.
    const PrimalEval eval = primal_value_and_gradient(problem, state.w);
    eval_queries += n;
    if (!std::isfinite(eval.value)) {
      trace.status = "failed: non-finite objective";
      return false;
    }
    if (iter == 0) {
      initial_value = eval.value;
      if (reference != nullptr) {
        gap_denom = initial_value - reference->value;
        if (std::abs(gap_denom) <= 1e-15) {
          throw numeric_error(
              "degenerate start: initial objective equals the reference "
              "optimum, the normalized gap is undefined");
        }
      }
    }
    double gap = -1.0;
    if (reference != nullptr) {
      gap = (eval.value - reference->value) / gap_denom;
      if (gap < 0.0) gap = gap >= -1e-12 ? 0.0 : gap;
    }
    TraceRow row;
    row.iteration = iter;
    row.cumulative_queries = state.query_count;
    row.wall_seconds = wall_seconds;
    row.objective = eval.value;
    row.normalized_gap = gap;
    row.eval_queries = eval_queries;
    trace.rows.push_back(row);
    // Divergence guard: abort once the objective blows past divergence_factor
    // times the initial value (floored at 1 to keep small-scale starts from
    // tripping it spuriously).
    if (iter > 0 &&
        eval.value >
            config.divergence_factor * std::max(1.0, std::abs(initial_value))) {
      trace.status = "diverged";
      return false;
    }
    if (reference != nullptr && config.gap_target >= 0.0 &&
        gap <= config.gap_target) {
      return false;  // converged to target; stop with status "ok"
    }
    return true;
  };

  if (!evaluate(0)) return trace;
  for (std::int64_t iter = 1; iter <= config.T_max; ++iter) {
    const auto start = std::chrono::steady_clock::now();
    drago_iterate(state, schedule, problem);
    wall_seconds +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (iter % eval_every == 0 || iter == config.T_max) {
      if (!evaluate(iter)) return trace;
    }
  }
  return trace;
}

namespace {

nlohmann::json vec_to_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Vec json_to_vec(const nlohmann::json& a) {
  if (!a.is_array()) throw config_error("checkpoint: expected an array");
  Vec v(static_cast<Eigen::Index>(a.size()));
  Eigen::Index i = 0;
  for (const auto& x : a) v[i++] = x.get<double>();
  return v;
}

Mat json_to_mat(const nlohmann::json& a, Eigen::Index rows, Eigen::Index cols) {
  if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != rows) {
    throw config_error("checkpoint: matrix row count mismatch");
  }
  Mat m(rows, cols);
  Eigen::Index r = 0;
  for (const auto& row : a) {
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw config_error("checkpoint: matrix column count mismatch");
    }
    Eigen::Index c = 0;
    for (const auto& x : row) m(r, c++) = x.get<double>();
    ++r;
  }
  return m;
}

nlohmann::json rng_to_json(const PhiloxRng& rng) {
  const PhiloxRng::State s = rng.state();
  return {{"seed", s.seed},       {"stream", s.stream},
          {"next_block", s.next_block}, {"buffer_pos", s.buffer_pos},
          {"has_spare", s.has_spare},   {"spare", s.spare}};
}

PhiloxRng rng_from_json(const nlohmann::json& j) {
  PhiloxRng::State s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.stream = j.at("stream").get<std::uint64_t>();
  s.next_block = j.at("next_block").get<std::uint64_t>();
  s.buffer_pos = j.at("buffer_pos").get<std::uint32_t>();
  s.has_spare = j.at("has_spare").get<bool>();
  s.spare = j.at("spare").get<double>();
  PhiloxRng rng;
  rng.restore(s);
  return rng;
}

constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const DragoState& state, const std::string& path) {
  nlohmann::json j;
  j["schema_version"] = kCheckpointVersion;
  j["memory"] = state.memory == MemoryMode::kFull ? "full" : "compact";
  j["b"] = state.b;
  j["M"] = state.M;
  j["t"] = state.t;
  j["query_count"] = state.query_count;
  j["agg_rebuilds"] = state.agg_rebuilds;
  j["w"] = vec_to_json(state.w);
  j["q"] = vec_to_json(state.q);
  j["loss_table"] = vec_to_json(state.loss_table);
  j["loss_table_lagged"] = vec_to_json(state.loss_table_lagged);
  j["weight_table1"] = vec_to_json(state.weight_table1);
  j["weight_table2"] = vec_to_json(state.weight_table2);
  j["grad_agg"] = vec_to_json(state.grad_agg);
  j["anchors"] = mat_to_json(state.anchors);
  j["anchor_sum"] = vec_to_json(state.anchor_sum);
  if (state.memory == MemoryMode::kFull) {
    j["grad_table1"] = mat_to_json(state.grad_table1);
    j["grad_table2"] = mat_to_json(state.grad_table2);
  } else {
    j["anchors_prev"] = mat_to_json(state.anchors_prev);
    j["block_agg"] = mat_to_json(state.block_agg);
  }
  j["rng_i"] = rng_to_json(state.rng_i);
  j["rng_j"] = rng_to_json(state.rng_j);
  j["sched"] = {{"a_prev", state.sched_a_prev},
                {"A", state.sched_A},
                {"C", state.sched_C},
                {"c", state.sched_c}};
  std::ofstream out(path);
  if (!out) throw config_error("cannot write checkpoint file: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw config_error("failed writing checkpoint file: " + path);
}

DragoState load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot read checkpoint file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("invalid checkpoint JSON: ") + e.what());
  }
  try {
    if (j.at("schema_version").get<int>() != kCheckpointVersion) {
      throw config_error("unsupported checkpoint schema version");
    }
    DragoState state;
    const std::string memory = j.at("memory").get<std::string>();
    if (memory == "full") {
      state.memory = MemoryMode::kFull;
    } else if (memory == "compact") {
      state.memory = MemoryMode::kCompact;
    } else {
      throw config_error("unknown checkpoint memory mode: " + memory);
    }
    state.b = j.at("b").get<Eigen::Index>();
    state.M = j.at("M").get<Eigen::Index>();
    state.t = j.at("t").get<std::int64_t>();
    state.query_count = j.at("query_count").get<std::int64_t>();
    state.agg_rebuilds = j.at("agg_rebuilds").get<std::int64_t>();
    state.w = json_to_vec(j.at("w"));
    state.q = json_to_vec(j.at("q"));
    state.loss_table = json_to_vec(j.at("loss_table"));
    state.loss_table_lagged = json_to_vec(j.at("loss_table_lagged"));
    state.weight_table1 = json_to_vec(j.at("weight_table1"));
    state.weight_table2 = json_to_vec(j.at("weight_table2"));
    state.grad_agg = json_to_vec(j.at("grad_agg"));
    const Eigen::Index n = state.loss_table.size();
    const Eigen::Index p = state.w.size();
    if (state.b < 1 || state.M < 1 || state.b * state.M != n ||
        state.q.size() != n || state.loss_table_lagged.size() != n ||
        state.weight_table1.size() != n || state.weight_table2.size() != n ||
        state.grad_agg.size() != p) {
      throw config_error("checkpoint dimensions are inconsistent");
    }
    state.anchors = json_to_mat(j.at("anchors"), state.M, p);
    state.anchor_sum = json_to_vec(j.at("anchor_sum"));
    if (state.anchor_sum.size() != p) {
      throw config_error("checkpoint dimensions are inconsistent");
    }
    if (state.memory == MemoryMode::kFull) {
      state.grad_table1 = json_to_mat(j.at("grad_table1"), n, p);
      state.grad_table2 = json_to_mat(j.at("grad_table2"), n, p);
    } else {
      state.anchors_prev = json_to_mat(j.at("anchors_prev"), state.M, p);
      state.block_agg = json_to_mat(j.at("block_agg"), state.M, p);
    }
    state.rng_i = rng_from_json(j.at("rng_i"));
    state.rng_j = rng_from_json(j.at("rng_j"));
    const auto& sched = j.at("sched");
    state.sched_a_prev = sched.at("a_prev").get<double>();
    state.sched_A = sched.at("A").get<double>();
    state.sched_C = sched.at("C").get<double>();
    state.sched_c = sched.at("c").get<double>();
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("invalid checkpoint contents: ") + e.what());
  }
}

}  // namespace dro
