#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>

#include "ncbf/barrier.hpp"
#include "ncbf/dynamics.hpp"
#include "ncbf/filter.hpp"
#include "ncbf/smoothing.hpp"

using namespace ncbf;

namespace {

BarrierExpr origin_obstacle(double clearance) {
  return BarrierExpr::leaf(
      AtomicBarrier::obstacle_distance(0, Vec::Zero(2), clearance));
}

FilterSetup basic_setup(double gamma = 1.0) {
  FilterSetup fs;
  fs.smoothing.beta = 0.1;
  fs.smoothing.k = 2;
  fs.chance.delta_h = 0.01;
  fs.alpha = KappaFunction{gamma, 3};
  fs.sigma_axis = Vec::Constant(2, 0.1);
  fs.horizon = 5;
  fs.u_max = 2.0;
  fs.dt = 0.05;
  fs.eps_goal = 0.05;
  return fs;
}

}  // namespace

TEST_CASE("chance tightening quantile frozen values") {
  ChanceSpec spec;
  spec.delta_h = 0.01;
  CHECK(spec.quantile() == Catch::Approx(2.3263478740408408).margin(1e-9));
  spec.delta_h = 0.5;
  CHECK(spec.quantile() == Catch::Approx(0.0).margin(1e-12));
  spec.delta_h = 0.025;
  CHECK(spec.quantile() == Catch::Approx(1.959963984540054).margin(1e-9));

  spec.delta_h = 0.0;
  CHECK_THROWS_AS(spec.quantile(), std::invalid_argument);
  spec.delta_h = 1.0;
  CHECK_THROWS_AS(spec.quantile(), std::invalid_argument);
}

TEST_CASE("nominal feedback pulls toward the goal and absorbs the draw") {
  EnsembleModel model(builtin_single_integrator(), 1);
  Vec goal(2);
  goal << 1.0, 0.0;
  Vec x = Vec::Zero(2);
  Vec w(2);
  w << 0.5, -0.25;

  NominalController ctrl(2.0, goal, model);
  Vec u = ctrl.control(x, w);
  CHECK(u(0) == Catch::Approx(2.5).margin(1e-14));
  CHECK(u(1) == Catch::Approx(-0.25).margin(1e-14));

  NominalController repelling(2.0, goal, model, true, true);
  u = repelling.control(x, w);
  CHECK(u(0) == Catch::Approx(-1.5).margin(1e-14));
  CHECK(u(1) == Catch::Approx(-0.25).margin(1e-14));

  NominalController pure(2.0, goal, model, false);
  u = pure.control(x, w);
  CHECK(u(0) == Catch::Approx(2.0).margin(1e-14));
  CHECK(u(1) == Catch::Approx(0.0).margin(1e-14));

  CHECK(nominal_control(ctrl, x, w) == ctrl.control(x, w));
}

TEST_CASE("nominal controller validation") {
  EnsembleModel model(builtin_single_integrator(), 2);
  CHECK_THROWS_AS(NominalController(1.0, Vec::Zero(3), model),
                  std::invalid_argument);

  AgentModel thin = builtin_single_integrator();
  thin.dim_u = 1;
  thin.input_map = [](const Vec&) { return Mat::Ones(2, 1); };
  EnsembleModel thin_model(thin, 1);
  CHECK_THROWS_AS(NominalController(1.0, Vec::Zero(2), thin_model, true),
                  std::invalid_argument);
  CHECK_NOTHROW(NominalController(1.0, Vec::Zero(2), thin_model, false));
}

TEST_CASE("safety row assembles drift, curvature and tightening exactly") {
  // single agent, single clearance leaf: every ingredient in closed form
  EnsembleModel model(builtin_single_integrator(), 1);
  BarrierExpr expr = origin_obstacle(0.5);
  SmoothingConfig scfg;
  scfg.beta = 0.1;
  Vec sigma = Vec::Constant(2, 0.1);
  KappaFunction alpha{1.0, 3};
  ChanceSpec chance;
  chance.delta_h = 0.01;

  Vec x(2);
  x << 1.0, 0.0;  // h = 1 - 0.25, grad (2, 0), hessian 2 I

  CbfRow row = build_cbf_row(x, expr, scfg, model, sigma, alpha, chance);
  CHECK(row.h_smooth == Catch::Approx(0.75).margin(1e-15));
  REQUIRE(row.row.size() == 2);
  CHECK(row.row(0) == Catch::Approx(2.0).margin(1e-14));
  CHECK(row.row(1) == Catch::Approx(0.0).margin(1e-14));

  // trace term: (1/2) sum_i sigma_i (K^T H K)_ii = 0.5 * (0.1*2 + 0.1*2)
  // variance: sum_i sigma_i (K^T grad)_i^2 = 0.1 * 4
  const double tightening = chance.quantile() * std::sqrt(0.4);
  CHECK(row.rhs ==
        Catch::Approx(-(0.0 + 0.2 + 0.75) + tightening).margin(1e-12));
}

TEST_CASE("safety row validation") {
  EnsembleModel model(builtin_single_integrator(), 1);
  BarrierExpr expr = origin_obstacle(0.5);
  SmoothingConfig scfg;
  CHECK_THROWS_AS(build_cbf_row(Vec::Ones(2), expr, scfg, model, Vec::Ones(3),
                                KappaFunction{}, ChanceSpec{}),
                  std::invalid_argument);
}

TEST_CASE("tighter violation budgets give monotonically stricter rows") {
  EnsembleModel model(builtin_single_integrator(), 1);
  BarrierExpr expr = origin_obstacle(0.5);
  SmoothingConfig scfg;
  Vec sigma = Vec::Constant(2, 0.1);
  KappaFunction alpha{1.0, 3};
  Vec x(2);
  x << 1.0, 0.0;

  double prev = -1e100;
  for (double dh : {0.2, 0.05, 0.01, 0.001}) {
    ChanceSpec chance;
    chance.delta_h = dh;
    CbfRow row = build_cbf_row(x, expr, scfg, model, sigma, alpha, chance);
    CHECK(row.rhs > prev);
    prev = row.rhs;
  }
}

TEST_CASE("filter leaves the nominal plan untouched far from any boundary") {
  EnsembleModel model(builtin_single_integrator(), 1);
  BarrierExpr expr = origin_obstacle(0.2);
  FilterSetup fs = basic_setup();
  Vec goal(2);
  goal << 6.0, 6.0;
  NominalController ctrl(1.0, goal, model);

  Vec x0(2);
  x0 << 5.0, 5.0;
  Vec w(2);
  w << 0.3, -0.2;

  SafeControlResult res = filter_controls(x0, expr, model, ctrl, fs, w);
  REQUIRE(res.status == SolveStatus::Optimal);
  CHECK_FALSE(res.start_unsafe);
  CHECK(res.infeasible_step == -1);
  REQUIRE(res.u_seq.rows() == 2);
  REQUIRE(res.u_seq.cols() == fs.horizon);

  // replay the prediction: drift-only rollout, disturbance enters through
  // the nominal feedthrough
  Vec x = x0;
  for (int t = 0; t < fs.horizon; ++t) {
    Vec ud = ctrl.control(x, w);
    CHECK((res.u_seq.col(t) - ud).cwiseAbs().maxCoeff() < 1e-8);
    x = model.step(x, ud, Vec::Zero(2), fs.dt);
  }
  CHECK(res.objective < 1e-12);
  CHECK(res.margins.minCoeff() > 0.0);
}

TEST_CASE("filter projects a colliding command onto the certified halfspace") {
  EnsembleModel model(builtin_single_integrator(), 1);
  BarrierExpr expr = origin_obstacle(0.5);
  FilterSetup fs = basic_setup();
  fs.horizon = 1;  // single step: the answer is a closed-form projection

  Vec goal(2);
  goal << -1.0, 0.0;
  NominalController ctrl(1.0, goal, model);
  Vec x0(2);
  x0 << 0.6, 0.0;  // h = 0.11, heading straight at the disk

  SafeControlResult res =
      filter_controls(x0, expr, model, ctrl, fs, Vec::Zero(2));
  REQUIRE(res.status == SolveStatus::Optimal);

  CbfRow row = build_cbf_row(x0, expr, fs.smoothing, model, fs.sigma_axis,
                             fs.alpha, fs.chance);
  Vec ud = ctrl.control(x0, Vec::Zero(2));
  const double lift =
      std::max(0.0, (row.rhs - row.row.dot(ud)) / row.row.squaredNorm());
  Vec expected = ud + lift * row.row;
  CHECK(lift > 0.0);  // the constraint really bites
  CHECK((res.u_seq.col(0) - expected).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(res.margins(0) > -1e-9);
  CHECK(res.objective ==
        Catch::Approx((expected - ud).squaredNorm()).margin(1e-8));
}

TEST_CASE("every returned step satisfies its safety row") {
  EnsembleModel model(builtin_single_integrator(), 1);
  BarrierExpr expr = origin_obstacle(0.5);
  // gentle decay: the nominal rollout dives into the disk, and a steeper
  // certified decay would make the deep-horizon rows plainly unsatisfiable
  FilterSetup fs = basic_setup(1.0);
  Vec goal(2);
  goal << -1.0, 0.05;
  NominalController ctrl(2.0, goal, model);
  Vec x0(2);
  x0 << 0.75, 0.0;

  SafeControlResult res =
      filter_controls(x0, expr, model, ctrl, fs, Vec::Zero(2));
  REQUIRE(res.status == SolveStatus::Optimal);
  REQUIRE(res.margins.size() == fs.horizon);
  CHECK(res.margins.minCoeff() > -1e-9);
  // controls respect the box
  CHECK(res.u_seq.cwiseAbs().maxCoeff() <= fs.u_max + 1e-9);
}

TEST_CASE("an interior-violating start is flagged but still solved") {
  EnsembleModel model(builtin_single_integrator(), 1);
  BarrierExpr expr = origin_obstacle(0.5);
  FilterSetup fs = basic_setup();
  Vec goal(2);
  goal << 3.0, 0.0;
  NominalController ctrl(1.0, goal, model);
  Vec x0(2);
  x0 << 0.45, 0.0;  // inside the clearance disk

  SafeControlResult res =
      filter_controls(x0, expr, model, ctrl, fs, Vec::Zero(2));
  CHECK(res.start_unsafe);
}

TEST_CASE("hopeless rows are reported with their horizon step") {
  EnsembleModel model(builtin_single_integrator(), 1);
  // dead center between two overlapping clearance disks: the two leaf
  // gradients cancel, so the composed row has no control authority, while the
  // concave transition-band curvature turns the noise trace into a positive
  // demand no input can meet
  Vec top(2), bottom(2);
  top << 0.0, 0.3;
  bottom << 0.0, -0.3;
  BarrierExpr expr = BarrierExpr::all_of(
      {BarrierExpr::leaf(AtomicBarrier::obstacle_distance(0, top, 0.5)),
       BarrierExpr::leaf(AtomicBarrier::obstacle_distance(0, bottom, 0.5))});
  FilterSetup fs = basic_setup();
  fs.horizon = 3;
  Vec goal(2);
  goal << 3.0, 0.0;
  NominalController ctrl(1.0, goal, model);
  Vec x0 = Vec::Zero(2);

  SafeControlResult res =
      filter_controls(x0, expr, model, ctrl, fs, Vec::Zero(2));
  REQUIRE(res.status == SolveStatus::Infeasible);
  CHECK(res.start_unsafe);
  CHECK(res.infeasible_step >= 0);
  CHECK(res.infeasible_step < fs.horizon);
}

TEST_CASE("steps already inside the goal ball stop paying tracking cost") {
  EnsembleModel model(builtin_single_integrator(), 1);
  BarrierExpr expr = origin_obstacle(0.2);
  FilterSetup fs = basic_setup();
  fs.eps_goal = 0.5;
  Vec goal(2);
  goal << 5.0, 5.0;
  NominalController ctrl(1.0, goal, model);
  Vec x0(2);
  x0 << 4.9, 5.0;  // already in the ball, far from the obstacle

  SafeControlResult res =
      filter_controls(x0, expr, model, ctrl, fs, Vec::Zero(2));
  REQUIRE(res.status == SolveStatus::Optimal);
  // indicator-weighted objective vanishes, and the floored cost still pins
  // the solution to the nominal plan
  CHECK(res.objective == 0.0);
  Vec x = x0;
  for (int t = 0; t < fs.horizon; ++t) {
    Vec ud = ctrl.control(x, Vec::Zero(2));
    CHECK((res.u_seq.col(t) - ud).cwiseAbs().maxCoeff() < 1e-7);
    x = model.step(x, ud, Vec::Zero(2), fs.dt);
  }
}

TEST_CASE("filter setup validation") {
  EnsembleModel model(builtin_single_integrator(), 1);
  BarrierExpr expr = origin_obstacle(0.2);
  NominalController ctrl(1.0, Vec::Zero(2), model);
  FilterSetup fs = basic_setup();
  fs.horizon = 0;
  CHECK_THROWS_AS(
      filter_controls(Vec::Ones(2), expr, model, ctrl, fs, Vec::Zero(2)),
      std::invalid_argument);
  fs = basic_setup();
  fs.u_max = 0.0;
  CHECK_THROWS_AS(
      filter_controls(Vec::Ones(2), expr, model, ctrl, fs, Vec::Zero(2)),
      std::invalid_argument);
}
