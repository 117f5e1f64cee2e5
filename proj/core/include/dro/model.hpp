#ifndef DRO_MODEL_HPP
#define DRO_MODEL_HPP

#include <Eigen/Core>

#include "dro/dualprox.hpp"

namespace dro {

using Mat = Eigen::MatrixXd;

// Feature matrix plus either regression targets or class labels.
struct DatasetMatrix {
  Mat features;             // n x d
  Vec targets;              // length n (regression) or empty
  Eigen::VectorXi classes;  // length n (classification) or empty

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index d() const { return features.cols(); }
  bool classification() const { return classes.size() > 0; }

  // num_classes > 0 enforces the label range for classification data.
  void validate(int num_classes = 0) const;
};

enum class LossKind { kSquaredError, kMultinomialCrossEntropy };

struct LossModel {
  LossKind kind = LossKind::kSquaredError;
  int num_classes = 0;  // MultinomialCrossEntropy only
  // Per-component Lipschitz constants: G bounds ||grad loss_i||, L bounds the
  // gradient's Lipschitz modulus. Filled by estimate_constants or overridden.
  double G = 0.0;
  double L = 0.0;
};

// The full problem: data, loss, adversary set, and the two regularizers of
//   L(w, q) = q^T loss(w) - nu * D(q || 1/n) + (mu/2) ||w||^2.
struct ProblemSpec {
  DatasetMatrix data;
  LossModel loss;
  UncertaintySpec uncertainty;
  double mu = 0.0;
  double nu = 0.0;

  Eigen::Index n() const { return data.n(); }
  // Parameter count: d for regression, C*d for classification (class-major
  // flat layout, block c at [c*d, (c+1)*d)).
  Eigen::Index p() const;
  void validate() const;
};

// loss_i(w) and grad loss_i(w). Each call is one oracle query; callers do
// the counting. The _into variant writes the gradient without allocating.
double component_loss(const ProblemSpec& spec, Eigen::Index i, const Vec& w);
double component_loss_grad(const ProblemSpec& spec, Eigen::Index i,
                           const Vec& w, Vec& grad);
std::pair<double, Vec> component_loss_grad(const ProblemSpec& spec,
                                           Eigen::Index i, const Vec& w);

// All n losses at w (n oracle queries' worth of work).
Vec all_losses(const ProblemSpec& spec, const Vec& w);

struct Constants {
  double G = 0.0;
  double L = 0.0;
};

// Data-derived Lipschitz constants:
//   SquaredError:             L = max_i ||x_i||^2, G = 2 * max_i |y_i| ||x_i||
//                             (local gradient bound at w = 0, factor-2 safety)
//   MultinomialCrossEntropy:  L = max_i ||x_i||^2 / 2, G = sqrt(2) max_i ||x_i||
// Throws invalid_input on degenerate data (L = 0, or G = 0 for SquaredError).
Constants estimate_constants(const ProblemSpec& spec);

// q^T loss(w) - nu * D(q || 1/n) + (mu/2) ||w||^2. q must lie in the
// uncertainty set within 1e-8.
double full_objective(const ProblemSpec& spec, const Vec& w, const Vec& q);

struct PrimalEval {
  double value = 0.0;  // max_q L(w, q)
  Vec grad;            // sum_i q*_i grad loss_i(w) + mu w
  Vec q_star;          // the maximizing weights
};

// Evaluates the primal objective w -> max_q L(w, q) and its gradient via the
// dual max oracle (the exact derivative for nu > 0, a subgradient at nu = 0).
// Costs n oracle queries.
PrimalEval primal_value_and_gradient(const ProblemSpec& spec, const Vec& w);

// A solved problem instance: the minimizer of the primal objective and its
// value, used to normalize suboptimality gaps. Produced by reference_solve.
struct Reference {
  Vec w_star;
  double value = 0.0;
};

// Condition number of the uncertainty set: n * max_i q_i over the set.
// CVaR: 1/theta (exact for integral n*theta); Spectral: n * max sigma;
// Chi2Ball: sqrt(1 + rho) (the standard upper bound, used as the value).
double kappa_q(const UncertaintySpec& uncertainty, Eigen::Index n);

}  // namespace dro

#endif  // DRO_MODEL_HPP
