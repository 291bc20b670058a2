#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "ncbf/barrier.hpp"

namespace ncbf {

enum class SolveStatus { Optimal, Infeasible, MaxIter };

// min 0.5 u'Hu + c'u  s.t.  A u >= b,  |u_i| <= u_max
struct QPProblem {
  Mat H;  // strictly convex
  Vec c;
  Mat A;  // general inequality rows, may be empty
  Vec b;
  double u_max = std::numeric_limits<double>::infinity();
  int max_iterations = 200;
};

struct SafeControlResult {
  Mat u_seq;  // solver: single column; receding-horizon filter: dim_u x T
  SolveStatus status = SolveStatus::MaxIter;
  Vec margins;  // slack of each general row at the solution
  double objective = 0.0;
  double solve_time = 0.0;  // seconds
  double kkt_residual = 0.0;
  int iterations = 0;
  int infeasible_row = -1;   // general row certifying infeasibility, if any
  int infeasible_step = -1;  // horizon step of that row (filter fills this)
  bool start_unsafe = false; // filter warning: x0 outside the safe set
};

namespace detail {

// constraint catalogue: general rows first, then lower bounds, then upper;
// the enter scan walks this order so ties resolve to the lowest index
class ConstraintSet {
 public:
  ConstraintSet(const Mat& a, const Vec& b, double u_max, int n)
      : a_(a), b_(b), u_max_(u_max), n_(n) {
    m_ = static_cast<int>(a_.rows());
    boxed_ = std::isfinite(u_max_);
    total_ = m_ + (boxed_ ? 2 * n_ : 0);
  }

  int total() const { return total_; }
  int general_rows() const { return m_; }

  double slack(int idx, const Vec& x) const {
    if (idx < m_) return a_.row(idx).dot(x) - b_(idx);
    int k = idx - m_;
    if (k < n_) return x(k) + u_max_;  // x_k >= -u_max
    return u_max_ - x(k - n_);         // x_k <= u_max
  }

  Vec normal(int idx) const {
    Vec v = Vec::Zero(n_);
    if (idx < m_) {
      v = a_.row(idx).transpose();
    } else {
      int k = idx - m_;
      if (k < n_)
        v(k) = 1.0;
      else
        v(k - n_) = -1.0;
    }
    return v;
  }

 private:
  const Mat& a_;
  const Vec& b_;
  double u_max_;
  int n_, m_, total_;
  bool boxed_;
};

}  // namespace detail

// Dual active-set solve: start at the unconstrained minimum, add the
// lowest-index violated constraint, trade active constraints off against the
// incoming one until it fits, repeat. Strict convexity keeps every full step
// a strict improvement, so the loop terminates.
inline SafeControlResult solve_qp(const QPProblem& prob) {
  const auto t_start = std::chrono::steady_clock::now();
  const int n = static_cast<int>(prob.H.rows());
  if (prob.H.cols() != n || prob.c.size() != n)
    throw std::invalid_argument("solve_qp: inconsistent H/c dimensions");
  if (prob.A.rows() != prob.b.size())
    throw std::invalid_argument("solve_qp: inconsistent A/b dimensions");
  if (prob.A.rows() > 0 && prob.A.cols() != n)
    throw std::invalid_argument("solve_qp: A column count mismatch");

  const Mat h_sym = 0.5 * (prob.H + prob.H.transpose());
  Eigen::LLT<Mat> llt(h_sym);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("solve_qp: H must be positive definite");

  detail::ConstraintSet cons(prob.A, prob.b, prob.u_max, n);

  Vec x = llt.solve(-prob.c);
  std::vector<int> act;
  std::vector<double> lam;

  const double tol_violation = 1e-9;
  const double tol_dir = 1e-12;

  SafeControlResult res;
  int iter = 0;
  bool done = false;

  while (!done) {
    // lowest-index violated constraint enters first
    int p = -1;
    for (int i = 0; i < cons.total(); ++i) {
      if (cons.slack(i, x) < -tol_violation) {
        p = i;
        break;
      }
    }
    if (p < 0) {
      res.status = SolveStatus::Optimal;
      break;
    }

    Vec n_p = cons.normal(p);
    double lam_p = 0.0;

    while (true) {
      if (++iter > prob.max_iterations) {
        res.status = SolveStatus::MaxIter;
        done = true;
        break;
      }
      const int q = static_cast<int>(act.size());
      Vec v = llt.solve(n_p);
      Vec r;
      Vec z;
      if (q > 0) {
        Mat n_act(n, q);
        for (int j = 0; j < q; ++j) n_act.col(j) = cons.normal(act[j]);
        Mat hi_n = llt.solve(n_act);
        Mat bmat = n_act.transpose() * hi_n;
        r = bmat.ldlt().solve(n_act.transpose() * v);
        z = v - hi_n * r;
      } else {
        z = v;
      }

      // longest dual step before an active multiplier hits zero
      double t1 = std::numeric_limits<double>::infinity();
      int k_drop = -1;
      for (int j = 0; j < q; ++j) {
        if (r(j) > tol_dir) {
          double t = lam[j] / r(j);
          if (t < t1) {
            t1 = t;
            k_drop = j;
          }
        }
      }
      // primal step to the incoming constraint's boundary
      double zeta = n_p.dot(z);
      double t2 = std::numeric_limits<double>::infinity();
      if (zeta > tol_dir) t2 = -cons.slack(p, x) / zeta;

      if (!std::isfinite(t1) && !std::isfinite(t2)) {
        res.status = SolveStatus::Infeasible;
        res.infeasible_row = (p < cons.general_rows()) ? p : -1;
        done = true;
        break;
      }

      if (t2 <= t1) {  // full step, p becomes active
        x += t2 * z;
        for (int j = 0; j < q; ++j) lam[j] -= t2 * r(j);
        lam_p += t2;
        act.push_back(p);
        lam.push_back(lam_p);
        break;
      }

      // partial step, drop the blocking constraint and retry p
      x += t1 * z;
      for (int j = 0; j < q; ++j) lam[j] -= t1 * r(j);
      lam_p += t1;
      act.erase(act.begin() + k_drop);
      lam.erase(lam.begin() + k_drop);
    }
  }

  res.iterations = iter;
  res.u_seq = x;
  res.objective = 0.5 * x.dot(h_sym * x) + prob.c.dot(x);
  res.margins = prob.A.rows() > 0 ? Vec(prob.A * x - prob.b) : Vec(0);

  if (res.status == SolveStatus::Optimal) {
    Vec grad = h_sym * x + prob.c;
    for (size_t j = 0; j < act.size(); ++j)
      grad -= lam[j] * cons.normal(act[j]);
    double stat = grad.lpNorm<Eigen::Infinity>();
    double feas = 0.0;
    for (int i = 0; i < cons.total(); ++i)
      feas = std::max(feas, -cons.slack(i, x));
    res.kkt_residual = std::max(stat, feas);
  }

  res.solve_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return res;
}

}  // namespace ncbf
