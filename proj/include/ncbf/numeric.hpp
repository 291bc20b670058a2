#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

namespace ncbf {

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// Inverse standard normal CDF. Rational approximation (Acklam) polished with
// one Halley step, good to ~1e-15 over (0,1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("normal_quantile: p must lie in (0,1)");

  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};

  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    double q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley refinement against erfc-based CDF
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

namespace detail {

inline double simpson_rule(const std::function<double(double)>& f, double a,
                           double fa, double b, double fb, double& fm) {
  double m = 0.5 * (a + b);
  fm = f(m);
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adaptive_simpson_rec(const std::function<double(double)>& f,
                                   double a, double fa, double b, double fb,
                                   double whole, double fm, double tol,
                                   int depth) {
  double m = 0.5 * (a + b);
  double flm, frm;
  double left = simpson_rule(f, a, fa, m, fm, flm);
  double right = simpson_rule(f, m, fm, b, fb, frm);
  double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, fa, m, fm, left, flm, tol / 2.0,
                              depth - 1) +
         adaptive_simpson_rec(f, m, fm, b, fb, right, frm, tol / 2.0,
                              depth - 1);
}

}  // namespace detail

// Adaptive Simpson quadrature to absolute tolerance `tol`.
inline double integrate(const std::function<double(double)>& f, double a,
                        double b, double tol = 1e-10, int max_depth = 48) {
  if (a == b) return 0.0;
  double fa = f(a), fb = f(b), fm;
  double whole = detail::simpson_rule(f, a, fa, b, fb, fm);
  return detail::adaptive_simpson_rec(f, a, fa, b, fb, whole, fm, tol,
                                      max_depth);
}

}  // namespace ncbf
