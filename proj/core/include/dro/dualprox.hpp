#ifndef DRO_DUALPROX_HPP
#define DRO_DUALPROX_HPP

#include <Eigen/Core>
#include <vector>

namespace dro {

using Vec = Eigen::VectorXd;

// Which convex set of sample weights the adversary may choose from.
enum class SetKind { kCVaR, kSpectral, kChi2Ball };

// Which divergence penalizes deviation from the uniform weights 1/n.
//   kChi2Half: D(q || 1/n) = (1/2) * ||q - 1/n||^2
//   kKL:       D(q || 1/n) = sum_i q_i * ln(n q_i)
enum class PenaltyKind { kChi2Half, kKL };

struct UncertaintySpec {
  SetKind set_kind = SetKind::kCVaR;
  PenaltyKind penalty_kind = PenaltyKind::kChi2Half;
  double theta = 1.0;  // CVaR tail probability, in (0, 1]
  Vec sigma;           // Spectral weights: ascending, nonnegative, sum to 1
  double rho = 0.0;    // Chi2Ball radius: {q in simplex : D_chi2(q) <= rho}

  static UncertaintySpec cvar(double theta,
                              PenaltyKind penalty = PenaltyKind::kChi2Half);
  static UncertaintySpec spectral(Vec sigma,
                                  PenaltyKind penalty = PenaltyKind::kChi2Half);
  static UncertaintySpec chi2_ball(double rho);  // penalty is always kChi2Half

  // Throws invalid_input if the spec is not usable for a problem of size n
  // (bad theta/rho, malformed sigma, or an unsupported set/penalty pairing).
  void validate(Eigen::Index n) const;

  // Ascending length-n spectrum for CVaR/Spectral sets. CVaR(theta) expands
  // to floor(n*theta) entries of 1/(n*theta), one fractional entry
  // (n*theta - floor(n*theta))/(n*theta) when n*theta is not integral, and
  // zeros below. Throws invalid_input for Chi2Ball.
  Vec spectrum(Eigen::Index n) const;
};

struct ProxResult {
  Vec q;
  // Dual certificate: the ball multiplier lambda (Chi2Ball solves), or the
  // pool partition (PAV solves; end index of each pool, exclusive, in sorted
  // order).
  double lambda = 0.0;
  bool has_lambda = false;
  std::vector<Eigen::Index> pool_ends;
  int iterations = 0;
};

// Euclidean projection onto the probability simplex (sort-based, exact up to
// floating point, O(n log n)).
Vec simplex_project(const Vec& v);

// Maximizes q^T l - (nu_eff/n) * sum_i f((n q_i)) ... concretely:
//   argmax_{q in permutahedron(sigma)} q^T l - nu_eff * D(q || 1/n)
// by reduction to an isotonic regression over the sorted losses, solved with
// pool-adjacent-violators. Supports both penalties; nu_eff must be > 0.
ProxResult pav_isotonic_prox(const Vec& l, const UncertaintySpec& spec,
                             double nu_eff);

// argmax over {q in simplex : (1/2)||q - 1/n||^2 <= rho} of
//   q^T l - (nu_eff/2) ||q - 1/n||^2
// via bisection on the ball multiplier lambda, with q(lambda) =
// simplex_project(l / (nu_eff + lambda)). Requires nu_eff > 0.
ProxResult chi2_ball_prox(const Vec& l, double rho, double nu_eff,
                          double eps = 1e-10);

// argmax_{q in Q} q^T l - nu * D(q || 1/n). For nu = 0 with CVaR/Spectral
// sets, returns the sorted-vertex solution (sigma assigned to losses in
// ascending order, ties broken by index); Chi2Ball with nu = 0 is
// unsupported.
Vec max_oracle(const Vec& l, const UncertaintySpec& spec, double nu);

// Exact maximizer of
//   q^T v - nu_pen * D(q || 1/n) - anchor_weight * B_D(q, q_anchor)
// over the set, where B_D is the Bregman divergence of the penalty. Both
// proximal terms fold into a single max_oracle call with a shifted argument
// and effective penalty weight nu_pen + anchor_weight.
Vec bregman_prox(const Vec& q_anchor, const Vec& v, double anchor_weight,
                 const UncertaintySpec& spec, double nu_pen);

// The Bregman proximal dual update: exact maximizer of
//   q^T v_dual - nu * D(q || 1/n) - beta * nu * B_D(q, q_prev).
// beta = 0 reduces to max_oracle(v_dual, spec, nu). Requires beta >= 0 and
// nu > 0.
Vec dual_prox_step(const Vec& q_prev, const Vec& v_dual, double beta,
                   const UncertaintySpec& spec, double nu);

// D(q || 1/n) for the given penalty (0 * ln 0 treated as 0).
double penalty_value(const Vec& q, PenaltyKind penalty);

// Bregman divergence B_D(q, q_bar) of the penalty.
double bregman_divergence(const Vec& q, const Vec& q_bar, PenaltyKind penalty);

// Nonnegative set-membership residual: 0 for points in the set, growing with
// the worst constraint violation (simplex constraints plus the permutahedron
// majorization inequalities or the ball radius).
double set_residual(const Vec& q, const UncertaintySpec& spec);

}  // namespace dro

#endif  // DRO_DUALPROX_HPP
