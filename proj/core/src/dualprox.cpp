#include "dro/dualprox.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "dro/errors.hpp"

namespace dro {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Ascending argsort by (value, index); stability gives the index tie-break.
std::vector<Eigen::Index> argsort_ascending(const Vec& v) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(v.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return v[a] < v[b]; });
  return order;
}

double logaddexp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double hi = std::max(a, b);
  const double lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

// Weights can carry O(1e-16) negative noise out of the closed-form
// recoveries; zero them and renormalize.
void clamp_and_renormalize(Vec& q) {
  q = q.cwiseMax(0.0);
  const double total = q.sum();
  if (!(total > 0.0))
    throw numeric_error("dual prox produced a zero-mass weight vector");
  q /= total;
}

}  // namespace

UncertaintySpec UncertaintySpec::cvar(double theta, PenaltyKind penalty) {
  UncertaintySpec spec;
  spec.set_kind = SetKind::kCVaR;
  spec.penalty_kind = penalty;
  spec.theta = theta;
  return spec;
}

UncertaintySpec UncertaintySpec::spectral(Vec sigma, PenaltyKind penalty) {
  UncertaintySpec spec;
  spec.set_kind = SetKind::kSpectral;
  spec.penalty_kind = penalty;
  spec.sigma = std::move(sigma);
  return spec;
}

UncertaintySpec UncertaintySpec::chi2_ball(double rho) {
  UncertaintySpec spec;
  spec.set_kind = SetKind::kChi2Ball;
  spec.penalty_kind = PenaltyKind::kChi2Half;
  spec.rho = rho;
  return spec;
}

void UncertaintySpec::validate(Eigen::Index n) const {
  if (n < 1) throw invalid_input("UncertaintySpec: n must be >= 1");
  switch (set_kind) {
    case SetKind::kCVaR:
      if (!(theta > 0.0) || !(theta <= 1.0))
        throw invalid_input("CVaR tail probability must lie in (0, 1]");
      break;
    case SetKind::kSpectral: {
      if (sigma.size() != n)
        throw invalid_input("Spectral weights must have length n");
      if (!sigma.allFinite())
        throw invalid_input("Spectral weights must be finite");
      if (sigma.minCoeff() < -1e-12)
        throw invalid_input("Spectral weights must be nonnegative");
      for (Eigen::Index i = 0; i + 1 < n; ++i)
        if (sigma[i] > sigma[i + 1] + 1e-12)
          throw invalid_input("Spectral weights must be sorted ascending");
      if (std::abs(sigma.sum() - 1.0) > 1e-9)
        throw invalid_input("Spectral weights must sum to 1");
      break;
    }
    case SetKind::kChi2Ball:
      if (!(rho >= 0.0) || !std::isfinite(rho))
        throw invalid_input("Chi2Ball radius must be finite and >= 0");
      if (penalty_kind != PenaltyKind::kChi2Half)
        throw invalid_input("Chi2Ball supports only the Chi2Half penalty");
      break;
  }
}

Vec UncertaintySpec::spectrum(Eigen::Index n) const {
  validate(n);
  if (set_kind == SetKind::kSpectral) return sigma;
  if (set_kind == SetKind::kChi2Ball)
    throw invalid_input("Chi2Ball has no spectrum");
  // CVaR(theta): top floor(n*theta) weights are 1/(n*theta), one fractional
  // weight below them when n*theta is not integral, zeros elsewhere.
  double nt = static_cast<double>(n) * theta;
  if (std::abs(nt - std::round(nt)) < 1e-9) nt = std::round(nt);
  const auto full = static_cast<Eigen::Index>(std::floor(nt));
  const double frac = nt - static_cast<double>(full);
  Vec s = Vec::Zero(n);
  for (Eigen::Index i = 0; i < full; ++i) s[n - 1 - i] = 1.0 / nt;
  if (frac > 0.0) s[n - 1 - full] = frac / nt;
  return s;
}

Vec simplex_project(const Vec& v) {
  const Eigen::Index n = v.size();
  if (n < 1) throw invalid_input("simplex_project: empty vector");
  if (!v.allFinite()) throw invalid_input("simplex_project: non-finite input");
  // Sort descending, then pick the largest prefix whose threshold keeps all
  // prefix entries positive.
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0;
  double tau = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    css += u[static_cast<std::size_t>(j)];
    const double candidate = (css - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - candidate > 0.0) tau = candidate;
  }
  Vec q = (v.array() - tau).cwiseMax(0.0);
  const double total = q.sum();
  if (total > 0.0) q /= total;  // remove O(eps) drift in the prefix sum
  return q;
}

namespace {

// One PAV pool over a contiguous run of the sorted losses. For each penalty
// the pool minimizer solves  d/dz [ sum_sigma * z + (nu/n) * sum_i
// f*((l_i - z)/nu) ] = 0  in closed form.
struct Pool {
  Eigen::Index count = 0;
  double sum_sigma = 0.0;
  double sum_l = 0.0;   // Chi2Half accumulator
  double lse = -kInf;   // KL accumulator: log sum_i exp(l_i / nu)
  double minimizer = 0.0;
};

double pool_minimizer_chi2(const Pool& p, double nu, Eigen::Index n) {
  const double cnt = static_cast<double>(p.count);
  return (p.sum_l - nu * (p.sum_sigma - cnt / static_cast<double>(n))) / cnt;
}

double pool_minimizer_kl(const Pool& p, double nu, Eigen::Index n) {
  if (p.sum_sigma <= 0.0) return kInf;  // forces a merge with the next pool
  return nu * (p.lse - 1.0 - std::log(static_cast<double>(n) * p.sum_sigma));
}

}  // namespace

ProxResult pav_isotonic_prox(const Vec& l, const UncertaintySpec& spec,
                             double nu_eff) {
  const Eigen::Index n = l.size();
  if (!l.allFinite())
    throw invalid_input("pav_isotonic_prox: non-finite losses");
  if (!(nu_eff > 0.0))
    throw invalid_input("pav_isotonic_prox: nu_eff must be > 0");
  if (spec.set_kind == SetKind::kChi2Ball)
    throw invalid_input("pav_isotonic_prox: set must be CVaR or Spectral");
  const Vec sigma = spec.spectrum(n);
  const bool kl = spec.penalty_kind == PenaltyKind::kKL;

  const std::vector<Eigen::Index> order = argsort_ascending(l);

  // Left-to-right PAV: push a singleton pool per sorted element, merge while
  // the previous pool's minimizer exceeds the new one's.
  std::vector<Pool> stack;
  stack.reserve(static_cast<std::size_t>(n));
  int merges = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Pool cur;
    cur.count = 1;
    cur.sum_sigma = sigma[i];
    const double li = l[order[static_cast<std::size_t>(i)]];
    cur.sum_l = li;
    cur.lse = li / nu_eff;
    cur.minimizer = kl ? pool_minimizer_kl(cur, nu_eff, n)
                       : pool_minimizer_chi2(cur, nu_eff, n);
    while (!stack.empty() && stack.back().minimizer > cur.minimizer) {
      const Pool& prev = stack.back();
      cur.count += prev.count;
      cur.sum_sigma += prev.sum_sigma;
      cur.sum_l += prev.sum_l;
      cur.lse = logaddexp(cur.lse, prev.lse);
      cur.minimizer = kl ? pool_minimizer_kl(cur, nu_eff, n)
                         : pool_minimizer_chi2(cur, nu_eff, n);
      stack.pop_back();
      ++merges;
    }
    stack.push_back(cur);
  }

  // Recover weights pool by pool through the sorting permutation:
  //   Chi2Half: q_i = 1/n + (l_i - z)/nu
  //   KL:       q_i = sum_sigma * exp(l_i/nu - lse)   (softmax within pool)
  // Both make each pool's weight mass equal its sigma mass exactly.
  ProxResult result;
  result.q.resize(n);
  result.iterations = merges;
  Eigen::Index pos = 0;
  for (const Pool& pool : stack) {
    for (Eigen::Index j = 0; j < pool.count; ++j, ++pos) {
      const Eigen::Index src = order[static_cast<std::size_t>(pos)];
      if (kl) {
        result.q[src] =
            pool.sum_sigma > 0.0
                ? pool.sum_sigma * std::exp(l[src] / nu_eff - pool.lse)
                : 0.0;
      } else {
        result.q[src] =
            1.0 / static_cast<double>(n) + (l[src] - pool.minimizer) / nu_eff;
      }
    }
    result.pool_ends.push_back(pos);
  }
  clamp_and_renormalize(result.q);
  return result;
}

ProxResult chi2_ball_prox(const Vec& l, double rho, double nu_eff, double eps) {
  const Eigen::Index n = l.size();
  if (n < 1) throw invalid_input("chi2_ball_prox: empty vector");
  if (!l.allFinite()) throw invalid_input("chi2_ball_prox: non-finite input");
  if (!(rho >= 0.0)) throw invalid_input("chi2_ball_prox: rho must be >= 0");
  if (!(nu_eff > 0.0))
    throw invalid_input("chi2_ball_prox: nu_eff must be > 0");
  if (!(eps > 0.0)) throw invalid_input("chi2_ball_prox: eps must be > 0");

  ProxResult result;
  result.has_lambda = true;
  if (rho == 0.0) {  // the set collapses to {1/n}
    result.q = Vec::Constant(n, 1.0 / static_cast<double>(n));
    return result;
  }

  // Pre-sort once; the sort order of l/(nu+lambda) is the same for every
  // lambda > -nu, so each evaluation below is O(n).
  std::vector<double> sorted(l.data(), l.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  std::vector<double> prefix(sorted.size());
  std::partial_sum(sorted.begin(), sorted.end(), prefix.begin());

  // Ball-constraint residual of the projection at this lambda:
  //   g(lambda) = 0.5*||q(lambda)||^2 - rho - 1/(2n),
  // with q(lambda) = simplex_project(l / (nu + lambda)). Decreasing in
  // lambda; the root is the active ball multiplier.
  const auto residual = [&](double lambda) {
    const double scale = nu_eff + lambda;
    double tau = (prefix.back() - scale) / static_cast<double>(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double candidate =
          (prefix[static_cast<std::size_t>(j)] - scale) /
          static_cast<double>(j + 1);
      if (sorted[static_cast<std::size_t>(j)] - candidate > 0.0)
        tau = candidate;
    }
    double sq = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double qi =
          std::max(sorted[static_cast<std::size_t>(j)] - tau, 0.0) / scale;
      sq += qi * qi;
    }
    return 0.5 * sq - rho - 0.5 / static_cast<double>(n);
  };

  int evals = 0;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  const double g0 = residual(0.0);
  ++evals;
  if (g0 <= eps) {
    lambda = 0.0;  // constraint inactive (or on the boundary within eps)
  } else {
    // Exponential search for a bracket, then bisection.
    double lo = 0.0, hi = 1.0;
    for (;;) {
      const double ghi = residual(hi);
      ++evals;
      if (std::abs(ghi) < eps) {
        lambda = hi;
        break;
      }
      if (ghi < -eps) break;  // bracketed: g(lo) > 0 > g(hi)
      lo = hi;
      hi *= 2.0;
      if (!(hi < 1e300))
        throw numeric_error(
            "chi2_ball_prox: failed to bracket the ball multiplier");
    }
    if (std::isnan(lambda)) {
      while (hi - lo >= eps) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;  // interval below 1 ulp
        const double gm = residual(mid);
        ++evals;
        if (std::abs(gm) < eps) {
          lambda = mid;
          break;
        }
        (gm > 0.0 ? lo : hi) = mid;
      }
      if (std::isnan(lambda)) lambda = 0.5 * (lo + hi);
    }
  }

  // Final projection at the chosen lambda, in the original order.
  const double scale = nu_eff + lambda;
  result.q = simplex_project(l / scale);
  result.lambda = lambda;
  result.iterations = evals;
  clamp_and_renormalize(result.q);
  return result;
}

Vec max_oracle(const Vec& l, const UncertaintySpec& spec, double nu) {
  const Eigen::Index n = l.size();
  spec.validate(n);
  if (!(nu >= 0.0)) throw invalid_input("max_oracle: nu must be >= 0");
  if (nu > 0.0) {
    if (spec.set_kind == SetKind::kChi2Ball)
      return chi2_ball_prox(l, spec.rho, nu).q;
    return pav_isotonic_prox(l, spec, nu).q;
  }
  // nu = 0: the maximizer is a vertex. For CVaR/Spectral, assign the
  // ascending spectrum to the losses sorted ascending (ties by index).
  if (spec.set_kind == SetKind::kChi2Ball)
    throw invalid_input("max_oracle: Chi2Ball requires nu > 0");
  if (!l.allFinite()) throw invalid_input("max_oracle: non-finite losses");
  const Vec sigma = spec.spectrum(n);
  const std::vector<Eigen::Index> order = argsort_ascending(l);
  Vec q(n);
  for (Eigen::Index i = 0; i < n; ++i)
    q[order[static_cast<std::size_t>(i)]] = sigma[i];
  clamp_and_renormalize(q);
  return q;
}

Vec bregman_prox(const Vec& q_anchor, const Vec& v, double anchor_weight,
                 const UncertaintySpec& spec, double nu_pen) {
  const Eigen::Index n = v.size();
  if (!(anchor_weight >= 0.0))
    throw invalid_input("bregman_prox: anchor_weight must be >= 0");
  if (!(nu_pen >= 0.0)) throw invalid_input("bregman_prox: nu_pen must be >= 0");
  if (anchor_weight == 0.0) return max_oracle(v, spec, nu_pen);
  if (q_anchor.size() != n)
    throw invalid_input("bregman_prox: anchor/vector size mismatch");
  if (!v.allFinite()) throw invalid_input("bregman_prox: non-finite input");

  // Fold the Bregman anchor into the plain penalized maximization:
  //   Chi2Half: v~ = v + c*(q_anchor - 1/n),   nu_eff = nu_pen + c
  //   KL:       v~ = v + c*ln(n*q_anchor),     nu_eff = nu_pen + c
  // (for Chi2Half any uniform shift of v~ leaves the argmax unchanged).
  const double nu_eff = nu_pen + anchor_weight;
  Vec shifted(n);
  if (spec.penalty_kind == PenaltyKind::kChi2Half) {
    shifted = v.array() + anchor_weight * (q_anchor.array() -
                                           1.0 / static_cast<double>(n));
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double qa = std::max(q_anchor[i], 1e-300);
      shifted[i] = v[i] +
                   anchor_weight * std::log(static_cast<double>(n) * qa);
    }
  }
  if (spec.set_kind == SetKind::kChi2Ball)
    return chi2_ball_prox(shifted, spec.rho, nu_eff).q;
  return pav_isotonic_prox(shifted, spec, nu_eff).q;
}

Vec dual_prox_step(const Vec& q_prev, const Vec& v_dual, double beta,
                   const UncertaintySpec& spec, double nu) {
  if (!(beta >= 0.0)) throw invalid_input("dual_prox_step: beta must be >= 0");
  if (!(nu > 0.0)) throw invalid_input("dual_prox_step: nu must be > 0");
  if (q_prev.size() != v_dual.size())
    throw invalid_input("dual_prox_step: size mismatch");
  if (std::abs(q_prev.sum() - 1.0) > 1e-6 || q_prev.minCoeff() < -1e-9)
    throw invalid_input("dual_prox_step: q_prev is not a probability vector");
  if (beta == 0.0) return max_oracle(v_dual, spec, nu);
  return bregman_prox(q_prev, v_dual, beta * nu, spec, nu);
}

double penalty_value(const Vec& q, PenaltyKind penalty) {
  const Eigen::Index n = q.size();
  if (penalty == PenaltyKind::kChi2Half)
    return 0.5 * (q.array() - 1.0 / static_cast<double>(n)).matrix().squaredNorm();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (q[i] > 0.0) total += q[i] * std::log(static_cast<double>(n) * q[i]);
  return total;
}

double bregman_divergence(const Vec& q, const Vec& q_bar, PenaltyKind penalty) {
  if (q.size() != q_bar.size())
    throw invalid_input("bregman_divergence: size mismatch");
  if (penalty == PenaltyKind::kChi2Half) return 0.5 * (q - q_bar).squaredNorm();
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    if (q[i] > 0.0) {
      if (q_bar[i] <= 0.0) return kInf;
      total += q[i] * std::log(q[i] / q_bar[i]);
    }
    total += q_bar[i] - q[i];
  }
  return total;
}

double set_residual(const Vec& q, const UncertaintySpec& spec) {
  const Eigen::Index n = q.size();
  spec.validate(n);
  double residual = std::max(0.0, -q.minCoeff());
  residual = std::max(residual, std::abs(q.sum() - 1.0));
  if (spec.set_kind == SetKind::kChi2Ball) {
    const double ball =
        0.5 * (q.array() - 1.0 / static_cast<double>(n)).matrix().squaredNorm() -
        spec.rho;
    return std::max(residual, ball);
  }
  // Permutahedron membership: every top-k sum of q is bounded by the top-k
  // sum of sigma (equality at k = n is the simplex sum constraint above).
  const Vec sigma = spec.spectrum(n);
  std::vector<double> sorted(q.data(), q.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double q_top = 0.0, sigma_top = 0.0;
  for (Eigen::Index k = 0; k < n - 1; ++k) {
    q_top += sorted[static_cast<std::size_t>(k)];
    sigma_top += sigma[n - 1 - k];
    residual = std::max(residual, q_top - sigma_top);
  }
  return residual;
}

}  // namespace dro
