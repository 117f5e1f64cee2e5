#ifndef DRO_DRAGO_HPP
#define DRO_DRAGO_HPP

#include <cstdint>
#include <string>

#include "dro/model.hpp"
#include "dro/rng.hpp"
#include "dro/trace.hpp"

namespace dro {

// Requested batch size -> usable batch size: b >= n collapses to the
// deterministic full-batch mode (M = 1); otherwise the largest divisor of n
// that is <= b, which guarantees M = n/b >= 2.
Eigen::Index resolve_block_size(Eigen::Index n, Eigen::Index b);

enum class ScheduleMode { kRegularized, kUnregularized };

struct ScheduleValues {
  double a = 0.0;       // a_t
  double A_prev = 0.0;  // A_{t-1}; satisfies beta_t * a_t = A_{t-1}
  double beta = 0.0;    // beta_t
};

// Step-size schedule. Regularized mode is the geometric schedule
//   a_1 = 1, a_t = (1+alpha) a_{t-1},
//   beta_t = (1 - (1+alpha)^(1-t)) / (alpha (1+alpha)),
//   beta_bar = 1 / (16 alpha (1+alpha) (M-1)^2)   (0 when M = 1),
// under which beta_t * a_t = A_{t-1} := sum_{s<t} a_s / (1+alpha) holds
// exactly. Unregularized mode replaces the closed forms with a running
// minimum recursion driven by problem constants (see
// unregularized_schedule_step) plus the mu1/mu2/nu1 proximal anchors.
class Schedule {
 public:
  static Schedule regularized(double alpha, Eigen::Index num_blocks);
  static Schedule unregularized(double mu1, double mu2, double nu1);

  ScheduleMode mode() const { return mode_; }
  double alpha() const { return alpha_; }
  double beta_bar() const { return beta_bar_; }
  Eigen::Index num_blocks() const { return num_blocks_; }
  double mu1() const { return mu1_; }
  double mu2() const { return mu2_; }
  double nu1() const { return nu1_; }

  // Closed-form values at iteration t >= 1 (regularized mode only).
  ScheduleValues at(std::int64_t t) const;
  double a(std::int64_t t) const;     // a_0 = 0
  double beta(std::int64_t t) const;  // beta_1 = 0

 private:
  Schedule() = default;
  ScheduleMode mode_ = ScheduleMode::kRegularized;
  double alpha_ = 0.0;
  double beta_bar_ = 0.0;
  Eigen::Index num_blocks_ = 1;
  double mu1_ = 0.0, mu2_ = 0.0, nu1_ = 0.0;
};

// The theory-backed learning rate
//   alpha = scale * min{ b/n, mu/(L kappa_Q), (b/n) sqrt(mu nu / (n G^2)) },
// with G, L taken from problem.loss. Requires mu > 0 and nu > 0.
double default_alpha(const ProblemSpec& problem, Eigen::Index b,
                     double scale = 1.0);

enum class MemoryMode { kFull, kCompact };

// Optimizer state. Full mode stores the two n x p gradient tables; compact
// mode drops them and instead recomputes stale block gradients from the
// per-block anchor points (anchors_prev), at b extra oracle queries per
// iteration, keeping storage at O(n) scalars plus O(M p) anchors/partials.
struct DragoState {
  Vec w;  // current primal iterate (length p)
  Vec q;  // current dual iterate (length n)
  std::int64_t t = 1;  // index of the next iteration to run (1-based)
  std::int64_t query_count = 0;
  Eigen::Index b = 0;
  Eigen::Index M = 0;
  MemoryMode memory = MemoryMode::kFull;

  Vec loss_table;         // losses at each block's last refresh
  Vec loss_table_lagged;  // previous contents of loss_table, blockwise
  Mat grad_table1;        // gradients at each block's last refresh (full)
  Mat grad_table2;        // previous contents of grad_table1 (full)
  Vec weight_table1;      // dual weights at each block's last refresh
  Vec weight_table2;      // previous contents of weight_table1, blockwise
  Vec grad_agg;           // grad_table1^T weight_table1 (length p)
  Mat anchors;            // M x p ring of block-anchor iterates
  Vec anchor_sum;         // column sums of anchors (length p)

  // Compact-mode extras: the anchor each block held on its previous visit
  // (where grad_table2's entries were taken), and per-block partial
  // aggregates s_K = grad_table1[B_K]^T weight_table1[B_K].
  Mat anchors_prev;  // M x p
  Mat block_agg;     // M x p

  PhiloxRng rng_i;  // primal block sampling
  PhiloxRng rng_j;  // dual block sampling

  // Unregularized-schedule accumulators (all 0 in regularized mode):
  // previous a_t and the partial sums A, C, c after iteration t-1.
  double sched_a_prev = 0.0;
  double sched_A = 0.0;
  double sched_C = 0.0;
  double sched_c = 0.0;

  std::int64_t agg_rebuilds = 0;  // aggregate-drift recoveries observed
};

// Fresh state at w = 0, q = 1/n with all tables filled by one full batch
// pass (n oracle queries, counted).
DragoState drago_init(const ProblemSpec& problem, Eigen::Index b,
                      MemoryMode memory, std::uint64_t seed);

// Stochastic primal gradient estimate for sampled block I (0-based):
//   v_P = grad_agg + corr * M * sum_{i in B_I} (q_i grad_i(w)
//                                               - weight_table2_i g2_i),
// where corr = a_{t-1}/a_t. Pure; does not mutate the state or counters.
Vec primal_gradient_estimate(const DragoState& state,
                             const ProblemSpec& problem, double corr,
                             Eigen::Index block_i);

// Stochastic dual gradient estimate for sampled block J (0-based), with the
// state's w already advanced to the new iterate:
//   v_D = loss_table patched with fresh losses on block K_t,
//         + corr * M * (loss(w)[B_J] - loss_table_lagged[B_J]) on B_J.
// Pure; does not mutate the state or counters.
Vec dual_gradient_estimate(const DragoState& state, const ProblemSpec& problem,
                           double corr, Eigen::Index block_j);

// Closed-form minimizer of the primal proximal step
//   min_w  a <v, w> + (a mu / 2)||w||^2 + (P/2)||w - w_prev||^2
//          + (R/2) sum_{K != K_t} ||w - anchors[K]||^2,
// reading w_prev and the ring from the state. Exposed for direct testing.
Vec primal_step_minimizer(const DragoState& state, const Vec& v_p, double a,
                          double mu, double coef_prev, double coef_ring,
                          Eigen::Index block_k);

// One a_t of the unregularized schedule:
//   a_t = min{ (C_{t-1} mu + mu1) / (12 e n q_max L),
//              (1 + b/n) a_{t-1}                       (t >= 2),
//              (b/32n) sqrt((A_{t-1} nu + nu1) * m*) / (sqrt(n) G) },
// with m* = min{C_{t-1} mu + mu1, c_{t-1} mu + mu2} (the c branch only when
// M >= 2). Reads the accumulators from the state without mutating them.
double unregularized_schedule_step(const DragoState& state,
                                   const Schedule& schedule,
                                   const ProblemSpec& problem);

// One full loop body: sample blocks, primal estimate + step, block-K table
// refresh, dual estimate + Bregman prox, table rotations and aggregate
// updates. query_count grows by exactly 3b (4b in compact mode).
void drago_iterate(DragoState& state, const Schedule& schedule,
                   const ProblemSpec& problem);

struct DragoRunConfig {
  Eigen::Index b = 1;
  std::int64_t T_max = 0;
  double gap_target = -1.0;    // < 0: disabled
  std::int64_t eval_every = 0;  // <= 0: one pass (M iterations)
  std::uint64_t seed = 0;
  MemoryMode memory = MemoryMode::kFull;
  double divergence_factor = 1e3;
};

// Runs until T_max iterations or, when a reference is given, until the
// normalized gap drops to gap_target. Evaluation points (every eval_every
// iterations plus the start and end) cost n queries each, recorded as
// eval_queries and excluded from cumulative_queries. Wall time covers
// optimizer steps only. T_max = 0 returns an empty trace.
Trace drago_run(const ProblemSpec& problem, const Schedule& schedule,
                const DragoRunConfig& config,
                const Reference* reference = nullptr);

// Versioned JSON checkpoint of the complete state; load/resume is
// bit-identical to an uninterrupted run.
void save_checkpoint(const DragoState& state, const std::string& path);
DragoState load_checkpoint(const std::string& path);

}  // namespace dro

#endif  // DRO_DRAGO_HPP
