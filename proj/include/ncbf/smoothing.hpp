#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ncbf/barrier.hpp"

namespace ncbf {

enum class SmoothScheme { Polynomial, LogSumExp };

struct SmoothingConfig {
  double beta = 0.1;        // transition band half-width
  int k = 2;                // junction smoothness order (C^k)
  SmoothScheme scheme = SmoothScheme::Polynomial;
  double lse_sharpness = 0.0;  // <= 0 picks 10/beta

  double sharpness() const {
    return lse_sharpness > 0.0 ? lse_sharpness : 10.0 / beta;
  }

  void check() const {
    if (!(beta > 0.0))
      throw std::invalid_argument("smoothing: beta must be positive");
    if (k < 1) throw std::invalid_argument("smoothing: k must be >= 1");
  }
};

// Odd polynomial M of degree 2k+1 on [-beta, beta] with M(+-beta) = +-1 and
// derivatives 1..k vanishing at both endpoints. Coefficients come from the
// 2(k+1)-condition Hermite system, solved with partial-pivot LU.
class TransitionPolynomial {
 public:
  TransitionPolynomial(int k, double beta) : k_(k), beta_(beta) {
    if (!(beta > 0.0))
      throw std::invalid_argument("transition polynomial: beta must be > 0");
    if (k < 1)
      throw std::invalid_argument("transition polynomial: k must be >= 1");
    // Odd ansatz sum_i c_i l^(2i+1): the matching conditions at -beta then
    // hold by symmetry, and the polynomial vanishes at zero exactly instead
    // of carrying round-off in the even coefficients.
    const int n = k + 1;
    Mat a(n, n);
    Vec rhs(n);
    for (int r = 0; r <= k; ++r) {  // derivative order r at +beta
      for (int i = 0; i < n; ++i) {
        const int p = 2 * i + 1;
        if (p < r) {
          a(r, i) = 0.0;
          continue;
        }
        double f = 1.0;
        for (int t = 0; t < r; ++t) f *= (p - t);
        a(r, i) = f * std::pow(beta, p - r);
      }
      rhs(r) = (r == 0) ? 1.0 : 0.0;
    }
    const Vec odd = a.partialPivLu().solve(rhs);
    coeffs_ = Vec::Zero(2 * k + 2);
    for (int i = 0; i < n; ++i) coeffs_(2 * i + 1) = odd(i);
  }

  int order() const { return k_; }
  double beta() const { return beta_; }
  const Vec& coefficients() const { return coeffs_; }

  double value(double l) const { return horner(l, 0); }
  double d1(double l) const { return horner(l, 1); }
  double d2(double l) const { return horner(l, 2); }

 private:
  double horner(double l, int deriv) const {
    const int n = static_cast<int>(coeffs_.size());
    double acc = 0.0;
    for (int j = n - 1; j >= deriv; --j) {
      double f = 1.0;
      for (int t = 0; t < deriv; ++t) f *= (j - t);
      acc = acc * l + f * coeffs_(j);
    }
    return acc;
  }

  int k_;
  double beta_;
  Vec coeffs_;
};

// sign switch: +1 on [0, inf), -1 below
inline double phi_exact(double l) { return l >= 0.0 ? 1.0 : -1.0; }

inline double phi_smooth(double l, const TransitionPolynomial& p) {
  if (l > p.beta()) return 1.0;
  if (l < -p.beta()) return -1.0;
  return p.value(l);
}

inline double phi_smooth(double l, const SmoothingConfig& cfg) {
  cfg.check();
  return phi_smooth(l, TransitionPolynomial(cfg.k, cfg.beta));
}

namespace detail {

// two-argument smooth minimum and its derivatives with respect to (h1, h2):
//   m = -(l*phi(l) - lp)/2,  l = h2 - h1, lp = h1 + h2
//   dm/dh1 = (1 + psi)/2, dm/dh2 = (1 - psi)/2, psi = phi + l*phi'
struct PairSmoothMin {
  double value;
  double w1, w2;    // first partials wrt h1, h2
  double psi_d;     // d(psi)/dl, feeds the curvature correction
};

inline PairSmoothMin smooth_min_pair_parts(double h1, double h2,
                                           const TransitionPolynomial& p) {
  const double l = h2 - h1;
  const double lp = h1 + h2;
  double phi, dphi, ddphi;
  if (l > p.beta()) {
    phi = 1.0;
    dphi = ddphi = 0.0;
  } else if (l < -p.beta()) {
    phi = -1.0;
    dphi = ddphi = 0.0;
  } else {
    phi = p.value(l);
    dphi = p.d1(l);
    ddphi = p.d2(l);
  }
  PairSmoothMin out;
  out.value = -0.5 * (l * phi - lp);
  const double psi = phi + l * dphi;
  out.w1 = 0.5 * (1.0 + psi);
  out.w2 = 0.5 * (1.0 - psi);
  out.psi_d = 2.0 * dphi + l * ddphi;
  return out;
}

}  // namespace detail

inline double smooth_min_pair(double h1, double h2,
                              const TransitionPolynomial& p) {
  return detail::smooth_min_pair_parts(h1, h2, p).value;
}

inline double smooth_min_pair(double h1, double h2,
                              const SmoothingConfig& cfg) {
  cfg.check();
  return smooth_min_pair(h1, h2, TransitionPolynomial(cfg.k, cfg.beta));
}

inline double smooth_max_pair(double h1, double h2,
                              const TransitionPolynomial& p) {
  return -smooth_min_pair(-h1, -h2, p);
}

enum class DerivOrder { Value = 0, Gradient = 1, Hessian = 2 };

struct EvalResult {
  double value = 0.0;
  Vec grad;
  Mat hess;
};

namespace detail {

inline EvalResult combine_pair_min(const EvalResult& a, const EvalResult& b,
                                   const TransitionPolynomial& p,
                                   DerivOrder order) {
  PairSmoothMin parts = smooth_min_pair_parts(a.value, b.value, p);
  EvalResult out;
  out.value = parts.value;
  if (order >= DerivOrder::Gradient)
    out.grad = parts.w1 * a.grad + parts.w2 * b.grad;
  if (order >= DerivOrder::Hessian) {
    Vec dg = a.grad - b.grad;
    out.hess = parts.w1 * a.hess + parts.w2 * b.hess -
               0.5 * parts.psi_d * (dg * dg.transpose());
  }
  return out;
}

inline EvalResult negate_result(EvalResult r, DerivOrder order) {
  r.value = -r.value;
  if (order >= DerivOrder::Gradient) r.grad = -r.grad;
  if (order >= DerivOrder::Hessian) r.hess = -r.hess;
  return r;
}

inline EvalResult eval_rec(const BarrierExpr& e, const Vec& x,
                           const SmoothingConfig& cfg,
                           const TransitionPolynomial* poly, DerivOrder order);

// n-ary soft minimum -log(sum exp(-s*h_i))/s with softmax-weighted
// derivatives; shift by the smallest child for overflow safety
inline EvalResult lse_min(const std::vector<EvalResult>& ch, double s,
                          const Vec& x, DerivOrder order) {
  double lo = ch.front().value;
  for (const auto& c : ch) lo = std::min(lo, c.value);
  double z = 0.0;
  std::vector<double> w(ch.size());
  for (size_t i = 0; i < ch.size(); ++i) {
    w[i] = std::exp(-s * (ch[i].value - lo));
    z += w[i];
  }
  for (auto& wi : w) wi /= z;

  EvalResult out;
  out.value = lo - std::log(z) / s;
  if (order >= DerivOrder::Gradient) {
    out.grad = Vec::Zero(x.size());
    for (size_t i = 0; i < ch.size(); ++i) out.grad += w[i] * ch[i].grad;
  }
  if (order >= DerivOrder::Hessian) {
    out.hess = Mat::Zero(x.size(), x.size());
    for (size_t i = 0; i < ch.size(); ++i) {
      Vec d = ch[i].grad - out.grad;
      out.hess += w[i] * ch[i].hess - s * w[i] * (d * d.transpose());
    }
  }
  return out;
}

inline EvalResult eval_node_children_min(const BarrierExpr& e, const Vec& x,
                                         const SmoothingConfig& cfg,
                                         const TransitionPolynomial* poly,
                                         DerivOrder order, bool is_and) {
  const auto& children = e.children();
  if (cfg.scheme == SmoothScheme::LogSumExp) {
    std::vector<EvalResult> ch;
    ch.reserve(children.size());
    for (const auto& c : children) {
      EvalResult r = eval_rec(c, x, cfg, poly, order);
      ch.push_back(is_and ? std::move(r) : negate_result(std::move(r), order));
    }
    EvalResult r = lse_min(ch, cfg.sharpness(), x, order);
    return is_and ? r : negate_result(std::move(r), order);
  }
  // polynomial scheme: left fold of the two-argument smooth min;
  // max(a, b) = -min(-a, -b)
  EvalResult acc = eval_rec(children.front(), x, cfg, poly, order);
  if (!is_and) acc = negate_result(std::move(acc), order);
  for (size_t i = 1; i < children.size(); ++i) {
    EvalResult next = eval_rec(children[i], x, cfg, poly, order);
    if (!is_and) next = negate_result(std::move(next), order);
    acc = combine_pair_min(acc, next, *poly, order);
  }
  return is_and ? acc : negate_result(std::move(acc), order);
}

inline EvalResult eval_rec(const BarrierExpr& e, const Vec& x,
                           const SmoothingConfig& cfg,
                           const TransitionPolynomial* poly,
                           DerivOrder order) {
  switch (e.kind()) {
    case ExprKind::Leaf: {
      EvalResult r;
      r.value = e.atom().value(x);
      if (order >= DerivOrder::Gradient) r.grad = e.atom().gradient(x);
      if (order >= DerivOrder::Hessian) r.hess = e.atom().hessian(x);
      return r;
    }
    case ExprKind::Not:
      return negate_result(eval_rec(e.children().front(), x, cfg, poly, order),
                           order);
    case ExprKind::And:
      return eval_node_children_min(e, x, cfg, poly, order, true);
    case ExprKind::Or:
      return eval_node_children_min(e, x, cfg, poly, order, false);
  }
  throw std::logic_error("unreachable");
}

}  // namespace detail

inline EvalResult smooth_eval_derivs(const BarrierExpr& e, const Vec& x,
                                     const SmoothingConfig& cfg,
                                     DerivOrder order) {
  cfg.check();
  if (order >= DerivOrder::Hessian &&
      cfg.scheme == SmoothScheme::Polynomial && cfg.k < 2)
    throw std::invalid_argument(
        "smoothing Hessian requires a C2 transition; set k >= 2");
  if (cfg.scheme == SmoothScheme::Polynomial) {
    TransitionPolynomial poly(cfg.k, cfg.beta);
    return detail::eval_rec(e, x, cfg, &poly, order);
  }
  return detail::eval_rec(e, x, cfg, nullptr, order);
}

inline double smooth_eval(const BarrierExpr& e, const Vec& x,
                          const SmoothingConfig& cfg) {
  return smooth_eval_derivs(e, x, cfg, DerivOrder::Value).value;
}

inline Vec smooth_grad(const BarrierExpr& e, const Vec& x,
                       const SmoothingConfig& cfg) {
  return smooth_eval_derivs(e, x, cfg, DerivOrder::Gradient).grad;
}

inline Mat smooth_hessian(const BarrierExpr& e, const Vec& x,
                          const SmoothingConfig& cfg) {
  return smooth_eval_derivs(e, x, cfg, DerivOrder::Hessian).hess;
}

}  // namespace ncbf
