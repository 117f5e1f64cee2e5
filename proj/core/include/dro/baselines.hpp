#ifndef DRO_BASELINES_HPP
#define DRO_BASELINES_HPP

#include <cstdint>
#include <vector>

#include "dro/model.hpp"
#include "dro/trace.hpp"

namespace dro {

enum class BaselineKind { kFullBatchGD, kBiasedSGD, kLSVRG };

struct BaselineConfig {
  BaselineKind kind = BaselineKind::kFullBatchGD;
  Eigen::Index batch = 64;       // BiasedSGD minibatch size (clamped to n)
  Eigen::Index epoch_len = 0;    // LSVRG anchor refresh period; <= 0 -> n
  double learning_rate = 0.0;    // <= 0 -> tune via auto_learning_rate
                                 // (FullBatchGD defaults to 1/smoothness)
  std::uint64_t seed = 0;
  std::int64_t eval_every = 0;   // evaluation period in iterations; <= 0 ->
                                 // one data pass for the chosen optimizer
  double divergence_factor = 1e3;
};

struct ReferenceOptions {
  double tol = 1e-10;             // gradient-norm stopping tolerance
  std::int64_t max_iters = 10'000'000;
  bool use_lbfgs = false;         // optional fast path; default is plain GD
};

// Minimizes the primal objective w -> max_q L(w, q) to high accuracy and
// returns the anchor used to normalize suboptimality gaps. The default
// method is full-batch gradient descent with the fixed step
// 1/(L + mu + n G^2 / nu); use_lbfgs switches to a limited-memory
// quasi-Newton loop with backtracking line search (same stopping rule),
// which is much faster on badly conditioned problems. Requires mu > 0 and
// nu > 0. Throws numeric_error if the iteration cap is exhausted.
Reference reference_solve(const ProblemSpec& problem,
                          const ReferenceOptions& options = {});

// Deterministic full-batch DRO gradient method:
//   w <- w - eta (sum_i qhat_i grad_i(w) + mu w),  qhat = max_oracle(loss(w)).
// n queries per step. learning_rate <= 0 uses 1/(L + mu + n G^2 / nu).
Trace full_batch_gd_run(const ProblemSpec& problem, const BaselineConfig& cfg,
                        std::int64_t T_max,
                        const Reference* reference = nullptr);

// Biased minibatch DRO-SGD: each step draws a uniform batch B without
// replacement, solves the batch-local max oracle (same set kind: CVaR keeps
// theta, a spectral spectrum is resampled to |B| atoms, a chi^2 ball scales
// its radius by |B|/n), and takes the penalized gradient step. |B| queries
// per step. The batch-local weights make the step biased for |B| < n; the
// bias is the point of comparison, not a defect.
Trace sgd_biased_run(const ProblemSpec& problem, const BaselineConfig& cfg,
                     std::int64_t T_max, const Reference* reference = nullptr);

// LSVRG for spectral-family sets (CVaR/Spectral): keeps an anchor wbar with
// dual weights qbar = max_oracle(loss(wbar)) and stored anchor gradients,
// steps with the variance-reduced estimate
//   g = n qbar_i (grad_i(w) - grad_i(wbar)) + sum_j qbar_j grad_j(wbar) + mu w,
// and refreshes the anchor every epoch_len steps at n queries. One query per
// step otherwise.
Trace lsvrg_run(const ProblemSpec& problem, const BaselineConfig& cfg,
                std::int64_t T_max, const Reference* reference = nullptr);

// The tuning grid for `auto` learning rates.
const std::vector<double>& learning_rate_grid();

// Full-budget tuning: runs cfg.kind for T_max iterations at every grid rate
// and every seed, scores each rate by the mean objective over the final ten
// evaluation rows (diverged or failed runs score infinity), and returns the
// best rate. Throws numeric_error when every rate fails.
double auto_learning_rate(const ProblemSpec& problem, const BaselineConfig& cfg,
                          std::int64_t T_max,
                          const std::vector<std::uint64_t>& seeds);

}  // namespace dro

#endif  // DRO_BASELINES_HPP
