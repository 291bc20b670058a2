#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ncbf/barrier.hpp"
#include "ncbf/dynamics.hpp"
#include "ncbf/numeric.hpp"
#include "ncbf/qp.hpp"
#include "ncbf/smoothing.hpp"

namespace ncbf {

// per-step violation budget for the tightened safety constraint
struct ChanceSpec {
  double delta_h = 0.01;

  // one-sided Gaussian quantile multiplier
  double quantile() const {
    if (!(delta_h > 0.0 && delta_h < 1.0))
      throw std::invalid_argument("chance spec: delta_h must lie in (0,1)");
    return normal_quantile(1.0 - delta_h);
  }
};

// proportional goal feedback, optionally passing the sampled disturbance
// through so the tracked reference absorbs it
class NominalController {
 public:
  NominalController(double k_p, Vec goal, const EnsembleModel& model,
                    bool noise_feedthrough = true, bool flip_sign = false)
      : k_p_(k_p),
        goal_(std::move(goal)),
        feedthrough_(noise_feedthrough),
        flip_sign_(flip_sign),
        k_ens_(model.noise_gain()) {
    if (goal_.size() != model.state_dim())
      throw std::invalid_argument("nominal controller: goal size mismatch");
    if (feedthrough_ && model.agent().dim_u != model.agent().dim_x)
      throw std::invalid_argument(
          "noise feedthrough needs matching state and input dimensions");
  }

  double k_p() const { return k_p_; }
  const Vec& goal() const { return goal_; }
  bool noise_feedthrough() const { return feedthrough_; }

  Vec control(const Vec& x, const Vec& w) const {
    Vec u = flip_sign_ ? Vec(k_p_ * (x - goal_)) : Vec(-k_p_ * (x - goal_));
    if (feedthrough_) u += k_ens_ * w;
    return u;
  }

 private:
  double k_p_;
  Vec goal_;
  bool feedthrough_;
  bool flip_sign_;
  Mat k_ens_;
};

inline Vec nominal_control(const NominalController& ctrl, const Vec& x,
                           const Vec& w) {
  return ctrl.control(x, w);
}

// one tightened safety constraint  row . u >= rhs  at a given state
struct CbfRow {
  Vec row;
  double rhs = 0.0;
  double h_smooth = 0.0;
};

// The constraint asks the smoothed barrier's drift to clear the class-K
// margin despite the disturbance: the second-order drift correction and the
// tightening both carry the disturbance covariance, and the quantile factor
// converts the per-step violation budget into a deterministic offset.
// h_margin shifts the level the allowance is measured from: the smoothed
// composition sits above the exact min by up to the per-fold band error, so
// the shift keeps the exact barrier positive when the smoothed one rides the
// constraint. The shifted argument is floored at zero: a predicted-unsafe
// rollout state gets the boundary's zero allowance, not a depth-proportional
// recovery demand that the box-bounded input could never honor.
inline CbfRow build_cbf_row(const Vec& x, const BarrierExpr& expr,
                            const SmoothingConfig& scfg,
                            const EnsembleModel& model, const Vec& sigma_axis,
                            const KappaFunction& alpha,
                            const ChanceSpec& chance,
                            double h_margin = 0.0) {
  if (sigma_axis.size() != model.agent().dim_x)
    throw std::invalid_argument("build_cbf_row: sigma_axis size mismatch");

  EvalResult h = smooth_eval_derivs(expr, x, scfg, DerivOrder::Hessian);

  const Mat& k_ens = model.noise_gain();
  const int nd = model.state_dim();
  Vec sigma_stack(nd);
  for (int i = 0; i < model.n_agents(); ++i)
    sigma_stack.segment(i * sigma_axis.size(), sigma_axis.size()) = sigma_axis;

  const double lf = h.grad.dot(model.drift(x));
  Vec row = model.input_map(x).transpose() * h.grad;

  Mat khk = k_ens.transpose() * h.hess * k_ens;
  double trace = 0.0;
  for (int i = 0; i < nd; ++i) trace += sigma_stack(i) * khk(i, i);
  trace *= 0.5;

  Vec kg = k_ens.transpose() * h.grad;
  double var = 0.0;
  for (int i = 0; i < nd; ++i) var += sigma_stack(i) * kg(i) * kg(i);
  const double tightening = chance.quantile() * std::sqrt(var);

  CbfRow out;
  out.row = std::move(row);
  const double level = std::max(h.value - h_margin, 0.0);
  out.rhs = -(lf + trace + alpha(level)) + tightening;
  out.h_smooth = h.value;
  return out;
}

// scenario-static inputs of the receding-horizon filter
struct FilterSetup {
  SmoothingConfig smoothing;
  ChanceSpec chance;
  KappaFunction alpha;   // class-K margin of the safety constraint
  Vec sigma_axis;        // per-axis disturbance variances
  int horizon = 10;      // T_u
  double u_max = 2.0;
  double dt = 0.05;
  double eps_goal = 0.05;
  double cost_floor = 1e-8;  // keeps the cost strictly convex on goal-reached steps
  double h_margin = 0.0;     // shift of the class-K allowance level
};

// Roll the nominal controller forward under the drift dynamics, pin one
// safety row per predicted step, and solve for the control sequence closest
// to the nominal one. Cost blocks of steps already inside the goal ball are
// switched off (up to the strict-convexity floor).
inline SafeControlResult filter_controls(const Vec& x0,
                                         const BarrierExpr& expr,
                                         const EnsembleModel& model,
                                         const NominalController& ctrl,
                                         const FilterSetup& fs, const Vec& w) {
  if (fs.horizon < 1)
    throw std::invalid_argument("filter_controls: horizon must be >= 1");
  if (!(fs.u_max > 0.0))
    throw std::invalid_argument("filter_controls: u_max must be positive");

  const int nu = model.input_dim();
  const int t_u = fs.horizon;
  const int nv = nu * t_u;

  const bool start_unsafe = !in_safe_set(expr, x0);

  // nominal rollout under the drift dynamics, disturbance feed fixed; the
  // prediction saturates the nominal at the input box, since the plant can
  // never execute anything outside it and an unsaturated rollout invents
  // phantom states (for crossing missions, even phantom collisions whose
  // vanishing-gradient rows poison the program)
  std::vector<Vec> xs(t_u);
  std::vector<Vec> ud(t_u);
  std::vector<double> weight(t_u);
  const Vec w_zero = Vec::Zero(model.state_dim());
  Vec x = x0;
  for (int t = 0; t < t_u; ++t) {
    xs[t] = x;
    ud[t] = ctrl.control(x, w);
    weight[t] = ((x - ctrl.goal()).norm() <= fs.eps_goal) ? 0.0 : 1.0;
    if (t + 1 < t_u) {
      const Vec ud_box = ud[t].cwiseMax(-fs.u_max).cwiseMin(fs.u_max);
      x = model.step(x, ud_box, w_zero, fs.dt);
    }
  }

  QPProblem qp;
  qp.H = Mat::Zero(nv, nv);
  qp.c = Vec::Zero(nv);
  qp.A = Mat::Zero(t_u, nv);
  qp.b = Vec(t_u);
  qp.u_max = fs.u_max;
  for (int t = 0; t < t_u; ++t) {
    const double wt = std::max(weight[t], fs.cost_floor);
    qp.H.block(t * nu, t * nu, nu, nu) =
        2.0 * wt * Mat::Identity(nu, nu);
    qp.c.segment(t * nu, nu) = -2.0 * wt * ud[t];
    CbfRow row = build_cbf_row(xs[t], expr, fs.smoothing, model,
                               fs.sigma_axis, fs.alpha, fs.chance,
                               fs.h_margin);
    qp.A.block(t, t * nu, 1, nu) = row.row.transpose();
    qp.b(t) = row.rhs;
  }

  SafeControlResult res = solve_qp(qp);
  res.start_unsafe = start_unsafe;
  if (res.status == SolveStatus::Infeasible) {
    res.infeasible_step = res.infeasible_row;  // one row per step
    // the solver may certify infeasibility on a box face; point at the
    // first safety row no box-bounded control can satisfy instead
    for (int t = 0; t < t_u && res.infeasible_step < 0; ++t)
      if (fs.u_max * qp.A.row(t).cwiseAbs().sum() < qp.b(t))
        res.infeasible_step = t;
  }

  Vec flat = res.u_seq.col(0);
  Mat seq(nu, t_u);
  for (int t = 0; t < t_u; ++t) seq.col(t) = flat.segment(t * nu, nu);
  res.u_seq = seq;

  // report the indicator-weighted tracking cost, not the floored QP value
  double obj = 0.0;
  for (int t = 0; t < t_u; ++t)
    obj += weight[t] * (seq.col(t) - ud[t]).squaredNorm();
  res.objective = obj;
  return res;
}

}  // namespace ncbf
