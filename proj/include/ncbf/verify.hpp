#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>

#include "ncbf/barrier.hpp"
#include "ncbf/dynamics.hpp"
#include "ncbf/numeric.hpp"
#include "ncbf/smoothing.hpp"

namespace ncbf {

// integral of |sign − transition polynomial| across the band, split at the
// sign jump so the quadrature sees two smooth halves
inline double l1_transition_error(double beta, int k) {
  if (!(beta > 0.0)) throw std::invalid_argument("l1_transition_error: beta must be positive");
  TransitionPolynomial poly(k, beta);
  auto err = [&](double l) { return std::abs(phi_exact(l) - poly.value(l)); };
  return integrate(err, -beta, 0.0, 5e-11) + integrate(err, 0.0, beta, 5e-11);
}

// integral over the transition band of |pair smooth-min − exact min| along
// the difference variable, holding the pair sum fixed
inline double pair_error_integral(double pair_sum, const SmoothingConfig& cfg) {
  TransitionPolynomial poly(cfg.k, cfg.beta);
  auto err = [&](double l) {
    const double h1 = 0.5 * (pair_sum - l);
    const double h2 = 0.5 * (pair_sum + l);
    return std::abs(smooth_min_pair(h1, h2, poly) - std::min(h1, h2));
  };
  return integrate(err, -cfg.beta, 0.0, 5e-11) + integrate(err, 0.0, cfg.beta, 5e-11);
}

struct BoundCheck {
  double bound = 0.0;         // 15 beta^2 / 8
  double max_integral = 0.0;  // largest banded error integral seen
  double max_ratio = 0.0;     // max_integral / bound
  int violations = 0;
  int samples = 0;
};

// samples random pair sums and checks every banded error integral against
// the quadratic envelope
inline BoundCheck cbf_error_bound_check(double beta, int n_pairs,
                                        std::uint64_t seed) {
  if (!(beta > 0.0) || n_pairs < 1)
    throw std::invalid_argument("cbf_error_bound_check: bad arguments");
  SmoothingConfig cfg;
  cfg.beta = beta;
  cfg.k = 2;
  BoundCheck out;
  out.bound = 15.0 * beta * beta / 8.0;
  out.samples = n_pairs;
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> sum_dist(-5.0, 5.0);
  for (int i = 0; i < n_pairs; ++i) {
    const double integral = pair_error_integral(sum_dist(eng), cfg);
    out.max_integral = std::max(out.max_integral, integral);
    if (integral > out.bound) ++out.violations;
  }
  out.max_ratio = out.max_integral / out.bound;
  return out;
}

// drift and diffusion of the smoothed barrier along the closed-loop vector
// field, disturbance covariance included in both
struct SafetyDriftDiffusion {
  double mu = 0.0;
  Vec sigma;
  double h = 0.0;
};

inline SafetyDriftDiffusion drift_diffusion(const Vec& x, const Vec& u,
                                            const BarrierExpr& expr,
                                            const SmoothingConfig& scfg,
                                            const EnsembleModel& model,
                                            const Vec& sigma_axis) {
  if (sigma_axis.size() != model.agent().dim_x)
    throw std::invalid_argument("drift_diffusion: sigma_axis size mismatch");
  EvalResult e = smooth_eval_derivs(expr, x, scfg, DerivOrder::Hessian);

  const Mat& k_ens = model.noise_gain();
  const int nd = model.state_dim();
  Vec sigma_stack(nd);
  for (int i = 0; i < model.n_agents(); ++i)
    sigma_stack.segment(i * sigma_axis.size(), sigma_axis.size()) = sigma_axis;

  SafetyDriftDiffusion out;
  out.h = e.value;
  Mat khk = k_ens.transpose() * e.hess * k_ens;
  double trace = 0.0;
  for (int i = 0; i < nd; ++i) trace += sigma_stack(i) * khk(i, i);
  out.mu = e.grad.dot(model.drift(x) + model.input_map(x) * u) + 0.5 * trace;
  out.sigma = sigma_stack.cwiseSqrt().asDiagonal() * (k_ens.transpose() * e.grad);
  return out;
}

struct MonitorResult {
  bool satisfied = false;
  bool boundary_reached = false;  // barrier nonpositive, inequality undefined
  double lhs = 0.0;               // mu − |sigma|^2 / h
  double rhs = 0.0;               // −h^2 alpha_star(h)
  double h = 0.0;
  double mu = 0.0;
  double sigma_sq = 0.0;
};

// almost-sure-safety condition at one (state, control) pair:
// mu − |sigma|^2/h >= −h^2 alpha_star(h) on the safe-set interior
inline MonitorResult safety_condition_monitor(
    const Vec& x, const Vec& u, const BarrierExpr& expr,
    const SmoothingConfig& scfg, const EnsembleModel& model,
    const Vec& sigma_axis, const KappaFunction& alpha_star = KappaFunction{1.0, 1}) {
  SafetyDriftDiffusion dd = drift_diffusion(x, u, expr, scfg, model, sigma_axis);
  MonitorResult out;
  out.h = dd.h;
  out.mu = dd.mu;
  out.sigma_sq = dd.sigma.squaredNorm();
  if (!(dd.h > 0.0)) {
    out.boundary_reached = true;
    return out;
  }
  out.lhs = dd.mu - out.sigma_sq / dd.h;
  out.rhs = -dd.h * dd.h * alpha_star(dd.h);
  out.satisfied = out.lhs >= out.rhs - 1e-9;
  return out;
}

// central-difference oracles; steps sized for ~1e-9 truncation error on the
// barrier's scale
template <class F>
Vec fd_gradient(F&& f, const Vec& x, double step = 1e-6) {
  if (!(step > 0.0)) throw std::invalid_argument("fd_gradient: step must be positive");
  Vec g(x.size());
  Vec xp = x;
  for (int i = 0; i < x.size(); ++i) {
    const double xi = x(i);
    xp(i) = xi + step;
    const double fp = f(xp);
    xp(i) = xi - step;
    const double fm = f(xp);
    xp(i) = xi;
    g(i) = (fp - fm) / (2.0 * step);
  }
  return g;
}

// rows are output components, columns the perturbed coordinate
template <class F>
Mat fd_jacobian(F&& f, const Vec& x, double step = 1e-5) {
  if (!(step > 0.0)) throw std::invalid_argument("fd_jacobian: step must be positive");
  Vec xp = x;
  Mat j;
  for (int c = 0; c < x.size(); ++c) {
    const double xc = x(c);
    xp(c) = xc + step;
    Vec fp = f(xp);
    xp(c) = xc - step;
    Vec fm = f(xp);
    xp(c) = xc;
    if (j.size() == 0) j.resize(fp.size(), x.size());
    j.col(c) = (fp - fm) / (2.0 * step);
  }
  return j;
}

namespace detail {

inline double brute_extremum(const BarrierExpr& e, const Vec& x, bool negated) {
  switch (e.kind()) {
    case ExprKind::Leaf: {
      const double v = e.atom().value(x);
      return negated ? -v : v;
    }
    case ExprKind::Not:
      return brute_extremum(e.children().front(), x, !negated);
    case ExprKind::And:
    case ExprKind::Or: {
      // under negation the connective flips (De Morgan)
      const bool take_min = (e.kind() == ExprKind::And) != negated;
      double acc = take_min ? std::numeric_limits<double>::infinity()
                            : -std::numeric_limits<double>::infinity();
      for (const auto& c : e.children()) {
        const double v = brute_extremum(c, x, negated);
        acc = take_min ? std::min(acc, v) : std::max(acc, v);
      }
      return acc;
    }
  }
  throw std::logic_error("brute_extremum: unreachable");
}

}  // namespace detail

// exhaustive evaluation over all leaves with negation signs pushed down;
// independent of the recursive evaluator it cross-checks
inline double brute_min_oracle(const BarrierExpr& expr, const Vec& x) {
  return detail::brute_extremum(expr, x, false);
}

}  // namespace ncbf
