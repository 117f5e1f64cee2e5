#include "dro/model.hpp"

#include <cmath>

#include "dro/errors.hpp"

namespace dro {

void DatasetMatrix::validate(int num_classes) const {
  if (n() < 1 || d() < 1)
    throw invalid_input("DatasetMatrix: need n >= 1 and d >= 1");
  if (!features.allFinite())
    throw invalid_input("DatasetMatrix: non-finite feature entries");
  const bool has_targets = targets.size() > 0;
  const bool has_classes = classes.size() > 0;
  if (has_targets == has_classes)
    throw invalid_input(
        "DatasetMatrix: exactly one of targets/classes must be set");
  if (has_targets) {
    if (targets.size() != n())
      throw invalid_input("DatasetMatrix: targets length != n");
    if (!targets.allFinite())
      throw invalid_input("DatasetMatrix: non-finite targets");
  } else {
    if (classes.size() != n())
      throw invalid_input("DatasetMatrix: classes length != n");
    for (Eigen::Index i = 0; i < n(); ++i) {
      if (classes[i] < 0 ||
          (num_classes > 0 && classes[i] >= num_classes))
        throw invalid_input("DatasetMatrix: class label out of range");
    }
  }
}

Eigen::Index ProblemSpec::p() const {
  if (loss.kind == LossKind::kMultinomialCrossEntropy)
    return static_cast<Eigen::Index>(loss.num_classes) * data.d();
  return data.d();
}

void ProblemSpec::validate() const {
  if (loss.kind == LossKind::kMultinomialCrossEntropy) {
    if (loss.num_classes < 2)
      throw invalid_input("ProblemSpec: cross-entropy needs >= 2 classes");
    if (!data.classification())
      throw invalid_input("ProblemSpec: cross-entropy needs class labels");
  } else if (data.classification()) {
    throw invalid_input("ProblemSpec: squared error needs regression targets");
  }
  data.validate(loss.num_classes);
  uncertainty.validate(n());
  if (!(mu >= 0.0) || !(nu >= 0.0))
    throw invalid_input("ProblemSpec: mu and nu must be >= 0");
}

namespace {

double squared_error_loss(const ProblemSpec& spec, Eigen::Index i,
                          const Vec& w, Vec* grad) {
  const double residual = spec.data.features.row(i).dot(w) - spec.data.targets[i];
  if (grad) *grad = residual * spec.data.features.row(i).transpose();
  return 0.5 * residual * residual;
}

double cross_entropy_loss(const ProblemSpec& spec, Eigen::Index i,
                          const Vec& w, Vec* grad) {
  const Eigen::Index d = spec.data.d();
  const int C = spec.loss.num_classes;
  const int label = spec.data.classes[i];
  // Class-major layout: scores s_c = x_i . w[c*d : (c+1)*d].
  Eigen::VectorXd scores(C);
  for (int c = 0; c < C; ++c)
    scores[c] = spec.data.features.row(i).dot(w.segment(c * d, d));
  const double max_score = scores.maxCoeff();
  const double lse =
      max_score + std::log((scores.array() - max_score).exp().sum());
  if (grad) {
    grad->resize(w.size());
    for (int c = 0; c < C; ++c) {
      const double softmax = std::exp(scores[c] - lse);
      const double coef = softmax - (c == label ? 1.0 : 0.0);
      grad->segment(c * d, d) = coef * spec.data.features.row(i).transpose();
    }
  }
  return lse - scores[label];
}

double loss_impl(const ProblemSpec& spec, Eigen::Index i, const Vec& w,
                 Vec* grad) {
  if (i < 0 || i >= spec.n())
    throw invalid_input("component loss: index out of range");
  if (w.size() != spec.p())
    throw invalid_input("component loss: w has wrong dimension");
  if (!w.allFinite()) throw invalid_input("component loss: non-finite w");
  if (spec.loss.kind == LossKind::kMultinomialCrossEntropy)
    return cross_entropy_loss(spec, i, w, grad);
  return squared_error_loss(spec, i, w, grad);
}

}  // namespace

double component_loss(const ProblemSpec& spec, Eigen::Index i, const Vec& w) {
  return loss_impl(spec, i, w, nullptr);
}

double component_loss_grad(const ProblemSpec& spec, Eigen::Index i,
                           const Vec& w, Vec& grad) {
  return loss_impl(spec, i, w, &grad);
}

std::pair<double, Vec> component_loss_grad(const ProblemSpec& spec,
                                           Eigen::Index i, const Vec& w) {
  Vec grad;
  const double loss = loss_impl(spec, i, w, &grad);
  return {loss, std::move(grad)};
}

Vec all_losses(const ProblemSpec& spec, const Vec& w) {
  Vec losses(spec.n());
  for (Eigen::Index i = 0; i < spec.n(); ++i)
    losses[i] = component_loss(spec, i, w);
  return losses;
}

Constants estimate_constants(const ProblemSpec& spec) {
  spec.validate();
  const Eigen::Index n = spec.n();
  double max_row_norm = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    max_row_norm = std::max(max_row_norm, spec.data.features.row(i).norm());
  Constants constants;
  if (spec.loss.kind == LossKind::kSquaredError) {
    constants.L = max_row_norm * max_row_norm;
    double max_grad0 = 0.0;  // ||grad loss_i(0)|| = |y_i| ||x_i||
    for (Eigen::Index i = 0; i < n; ++i)
      max_grad0 = std::max(max_grad0, std::abs(spec.data.targets[i]) *
                                          spec.data.features.row(i).norm());
    constants.G = 2.0 * max_grad0;
  } else {
    constants.L = 0.5 * max_row_norm * max_row_norm;
    constants.G = std::sqrt(2.0) * max_row_norm;
  }
  if (!(constants.L > 0.0))
    throw invalid_input("estimate_constants: degenerate data (L = 0)");
  if (!(constants.G > 0.0))
    throw invalid_input("estimate_constants: degenerate data (G = 0)");
  return constants;
}

double full_objective(const ProblemSpec& spec, const Vec& w, const Vec& q) {
  if (q.size() != spec.n())
    throw invalid_input("full_objective: q has wrong length");
  if (set_residual(q, spec.uncertainty) > 1e-8)
    throw invalid_input("full_objective: q lies outside the uncertainty set");
  double weighted = 0.0;
  for (Eigen::Index i = 0; i < spec.n(); ++i)
    weighted += q[i] * component_loss(spec, i, w);
  return weighted - spec.nu * penalty_value(q, spec.uncertainty.penalty_kind) +
         0.5 * spec.mu * w.squaredNorm();
}

PrimalEval primal_value_and_gradient(const ProblemSpec& spec, const Vec& w) {
  const Eigen::Index n = spec.n();
  Vec losses(n);
  Mat grads(n, spec.p());
  Vec grad_i;
  for (Eigen::Index i = 0; i < n; ++i) {
    losses[i] = component_loss_grad(spec, i, w, grad_i);
    grads.row(i) = grad_i.transpose();
  }
  PrimalEval eval;
  eval.q_star = max_oracle(losses, spec.uncertainty, spec.nu);
  eval.value = losses.dot(eval.q_star) -
               spec.nu * penalty_value(eval.q_star,
                                       spec.uncertainty.penalty_kind) +
               0.5 * spec.mu * w.squaredNorm();
  eval.grad = grads.transpose() * eval.q_star + spec.mu * w;
  return eval;
}

double kappa_q(const UncertaintySpec& uncertainty, Eigen::Index n) {
  uncertainty.validate(n);
  if (uncertainty.set_kind == SetKind::kChi2Ball)
    return std::sqrt(1.0 + uncertainty.rho);
  if (uncertainty.set_kind == SetKind::kCVaR) {
    // n * max sigma = n / (n*theta), computed directly so integral n*theta
    // yields exactly 1/theta.
    double nt = static_cast<double>(n) * uncertainty.theta;
    if (std::abs(nt - std::round(nt)) < 1e-9) nt = std::round(nt);
    if (nt < 1.0) return static_cast<double>(n);  // spectrum is (0,...,0,1)
    return static_cast<double>(n) / nt;
  }
  return static_cast<double>(n) * uncertainty.sigma.maxCoeff();
}

}  // namespace dro
