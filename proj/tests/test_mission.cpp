#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncbf/mission.hpp"

using namespace ncbf;
using Catch::Matchers::ContainsSubstring;

namespace {

bool mentions(const std::vector<std::string>& violations,
              const std::string& needle) {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const std::string& v) {
                       return v.find(needle) != std::string::npos;
                     });
}

}  // namespace

TEST_CASE("bundled scenarios validate cleanly and round-trip through json") {
  for (const Scenario& s :
       {single_obstacle_scenario(), multi_obstacle_scenario()}) {
    CHECK(validate(s).empty());
    Scenario back = parse_scenario(to_json(s).dump());
    CHECK(back == s);
  }
}

TEST_CASE("bundled scenario files match the programmatic builders") {
  Scenario single =
      load_scenario(std::string(NCBF_SCENARIO_DIR) + "/single_obstacle.json");
  CHECK(single == single_obstacle_scenario());

  Scenario multi =
      load_scenario(std::string(NCBF_SCENARIO_DIR) + "/multi_obstacle.json");
  CHECK(multi == multi_obstacle_scenario());
}

TEST_CASE("save and load preserve every field") {
  const auto path =
      (std::filesystem::temp_directory_path() / "ncbf_roundtrip.json").string();
  Scenario s = multi_obstacle_scenario();
  s.scheme = SmoothScheme::LogSumExp;
  s.sigma_w << 0.07, 0.12;
  s.k_w << 1.0, 0.25, 0.25, 1.0;
  s.seed = 1234567890123ULL;
  save_scenario(s, path);
  Scenario back = load_scenario(path);
  CHECK(back == s);
  std::filesystem::remove(path);
}

TEST_CASE("missing scenario file reports its path") {
  CHECK_THROWS_WITH(load_scenario("/nonexistent/nowhere.json"),
                    ContainsSubstring("nowhere.json"));
}

TEST_CASE("unknown fields are rejected by name") {
  CHECK_THROWS_WITH(parse_scenario(R"({"n_agents": 1, "bogus": 2})"),
                    ContainsSubstring("bogus"));
  CHECK_THROWS_WITH(
      parse_scenario(
          R"({"obstacles": [{"center": [0,0], "radius": 0.1, "extra": 1}]})"),
      ContainsSubstring("extra"));
}

TEST_CASE("type errors name the offending field") {
  CHECK_THROWS_WITH(parse_scenario(R"({"delta": "wide"})"),
                    ContainsSubstring("delta"));
  CHECK_THROWS_WITH(parse_scenario(R"({"starts": [[1, 2], [3]]})"),
                    ContainsSubstring("starts"));
  CHECK_THROWS_WITH(parse_scenario(R"({"scheme": "spline"})"),
                    ContainsSubstring("spline"));
  CHECK_THROWS_WITH(parse_scenario(R"({"obstacles": [{"center": [0,0]}]})"),
                    ContainsSubstring("obstacles"));
  CHECK_THROWS_WITH(parse_scenario(R"({"k_w": [[1, 0]]})"),
                    ContainsSubstring("k_w"));
  CHECK_THROWS_WITH(parse_scenario(R"([1, 2])"),
                    ContainsSubstring("object"));
}

TEST_CASE("scalar shorthands expand to the full disturbance model") {
  Scenario s = parse_scenario(R"({"sigma_w": 0.2, "k_w": 0.5})");
  CHECK(s.sigma_w == Eigen::Vector2d::Constant(0.2));
  CHECK(s.k_w == 0.5 * Eigen::Matrix2d::Identity());

  s = parse_scenario(R"({"sigma_w": [0.1, 0.3], "k_w": [[1, 0.2], [0.2, 1]]})");
  CHECK(s.sigma_w(0) == 0.1);
  CHECK(s.sigma_w(1) == 0.3);
  CHECK(s.k_w(0, 1) == 0.2);
}

TEST_CASE("absent fields keep the documented defaults") {
  Scenario s = parse_scenario(R"({"n_agents": 2})");
  CHECK(s.delta == 0.14);
  CHECK(s.delta_o == 0.15);
  CHECK(s.eps_g == 0.05);
  CHECK(s.sigma_w == Eigen::Vector2d::Constant(0.1));
  CHECK(s.k_w == Eigen::Matrix2d::Identity());
  CHECK(s.beta == 0.1);
  CHECK(s.scheme == SmoothScheme::Polynomial);
  CHECK(s.k_smooth == 2);
  CHECK(s.horizon == 10);
  CHECK(s.t_max == 400);
  CHECK(s.dt == 0.05);
  CHECK(s.u_max == 2.0);
  CHECK(s.gamma == 1.0);
  CHECK(s.delta_h == 0.01);
  CHECK(s.k_p == 1.0);
  CHECK(s.seed == 0);
}

TEST_CASE("scheme names round-trip") {
  CHECK(format_scheme(SmoothScheme::Polynomial) == "poly");
  CHECK(format_scheme(SmoothScheme::LogSumExp) == "lse");
  CHECK(parse_scheme("poly") == SmoothScheme::Polynomial);
  CHECK(parse_scheme("lse") == SmoothScheme::LogSumExp);
  CHECK_THROWS_AS(parse_scheme("LSE"), std::runtime_error);
}

TEST_CASE("validation enforces the clearance ordering and interior start") {
  Scenario s = single_obstacle_scenario();
  CHECK(validate(s).empty());

  Scenario bad = s;
  bad.delta_o = bad.delta;  // must be strictly larger
  CHECK(mentions(validate(bad), "clearance ordering"));

  bad = s;
  bad.starts[1] = bad.starts[0] + Eigen::Vector2d(0.1, 0.0);
  CHECK(mentions(validate(bad), "initial state not interior"));
  CHECK(mentions(validate(bad), "agents 0 and 1"));

  bad = s;
  bad.starts[2] = bad.obstacles[0].center + Eigen::Vector2d(0.1, 0.0);
  CHECK(mentions(validate(bad), "within obstacle 0 clearance"));
}

TEST_CASE("validation covers parameter ranges") {
  Scenario s = single_obstacle_scenario();

  Scenario bad = s;
  bad.n_agents = 0;
  CHECK(mentions(validate(bad), "n_agents"));

  bad = s;
  bad.starts.pop_back();
  CHECK(mentions(validate(bad), "one point per agent"));

  bad = s;
  bad.k_w << 1.0, 2.0, 2.0, 1.0;  // indefinite
  CHECK(mentions(validate(bad), "symmetric positive definite"));

  bad = s;
  bad.k_w << 1.0, 0.5, 0.0, 1.0;  // asymmetric
  CHECK(mentions(validate(bad), "symmetric positive definite"));

  bad = s;
  bad.k_smooth = 1;  // too rough for a curvature-bearing constraint
  CHECK(mentions(validate(bad), "k_smooth"));

  bad = s;
  bad.scheme = SmoothScheme::LogSumExp;
  bad.k_smooth = 1;  // fine for the exponential scheme
  CHECK(validate(bad).empty());

  bad = s;
  bad.delta_h = 0.0;
  CHECK(mentions(validate(bad), "delta_h"));
  bad.delta_h = 1.0;
  CHECK(mentions(validate(bad), "delta_h"));

  bad = s;
  bad.sigma_w(0) = -0.1;
  CHECK(mentions(validate(bad), "sigma_w"));

  bad = s;
  bad.obstacles[0].radius = -1.0;
  CHECK(mentions(validate(bad), "radius"));

  bad = s;
  bad.horizon = 0;
  CHECK(mentions(validate(bad), "horizon"));

  bad = s;
  bad.t_max = -1;
  CHECK(mentions(validate(bad), "t_max"));

  bad = s;
  bad.k_p = 0.0;
  CHECK(mentions(validate(bad), "k_p"));

  bad = s;
  bad.eps_g = 0.0;
  CHECK(mentions(validate(bad), "eps_g"));

  bad = s;
  bad.gamma = 0.0;
  CHECK(mentions(validate(bad), "gamma"));

  bad = s;
  bad.u_max = 0.0;
  CHECK(mentions(validate(bad), "u_max"));

  bad = s;
  bad.dt = 0.0;
  CHECK(mentions(validate(bad), "dt"));

  bad = s;
  bad.beta = 0.0;
  CHECK(mentions(validate(bad), "beta"));
}

TEST_CASE("effective obstacle clearance never falls below the disk radius") {
  Scenario s;
  s.delta_o = 0.15;
  Obstacle small{Eigen::Vector2d::Zero(), 0.05};
  Obstacle large{Eigen::Vector2d::Zero(), 0.3};
  CHECK(obstacle_clearance(s, small) == 0.15);
  CHECK(obstacle_clearance(s, large) == 0.3);
}

TEST_CASE("barrier tree shape for three agents and two obstacles") {
  Scenario s;
  s.n_agents = 3;
  s.delta = 0.14;
  s.delta_o = 0.15;
  s.obstacles = {{{0.0, 2.0}, 0.1}, {{0.0, -1.0}, 0.1}};

  BarrierExpr tree = build_barrier_tree(s);
  CHECK(tree.leaf_count() == 9);  // 3 pairs + 3 agents x 2 obstacles
  CHECK(tree.depth() == 2);
  REQUIRE(tree.kind() == ExprKind::And);
  REQUIRE(tree.children().size() == 2);

  const BarrierExpr& pairs = tree.children()[0];
  const BarrierExpr& obstacles = tree.children()[1];
  REQUIRE(pairs.children().size() == 3);
  REQUIRE(obstacles.children().size() == 6);

  // agents on a line at 0, 1, 3; every leaf value is distinct, which pins
  // the construction order: pairs (0,1), (0,2), (1,2), then obstacle leaves
  // grouped by agent
  Vec x(6);
  x << 0.0, 0.0, 1.0, 0.0, 3.0, 0.0;
  const double dd = s.delta * s.delta, cc = 0.15 * 0.15;
  const double pair_want[3] = {1.0 - dd, 9.0 - dd, 4.0 - dd};
  for (int i = 0; i < 3; ++i)
    CHECK(pairs.children()[i].atom().value(x) ==
          Catch::Approx(pair_want[i]).margin(1e-12));

  const double obs_want[6] = {4.0 - cc, 1.0 - cc,  5.0 - cc,
                              2.0 - cc, 13.0 - cc, 10.0 - cc};
  for (int i = 0; i < 6; ++i)
    CHECK(obstacles.children()[i].atom().value(x) ==
          Catch::Approx(obs_want[i]).margin(1e-12));

  // conjunction value is the least leaf
  CHECK(eval_exact(tree, x) == Catch::Approx(1.0 - cc).margin(1e-12));
}

TEST_CASE("barrier tree degenerate and small shapes") {
  Scenario lonely;
  lonely.n_agents = 1;
  CHECK_THROWS_AS(build_barrier_tree(lonely), std::invalid_argument);

  Scenario one_ob = lonely;
  one_ob.obstacles = {{{1.0, 0.0}, 0.1}};
  BarrierExpr single = build_barrier_tree(one_ob);
  CHECK(single.kind() == ExprKind::Leaf);
  CHECK(single.leaf_count() == 1);

  Scenario two_agents;
  two_agents.n_agents = 2;
  BarrierExpr pair_only = build_barrier_tree(two_agents);
  CHECK(pair_only.kind() == ExprKind::Leaf);

  Scenario two_one = two_agents;
  two_one.obstacles = {{{1.0, 0.0}, 0.1}};
  BarrierExpr combo = build_barrier_tree(two_one);
  CHECK(combo.kind() == ExprKind::And);
  CHECK(combo.leaf_count() == 3);
  CHECK(combo.depth() == 2);
  CHECK(combo.children()[0].kind() == ExprKind::Leaf);
  CHECK(combo.children()[1].kind() == ExprKind::And);
}

TEST_CASE("stacked start and goal interleave agent coordinates") {
  Scenario s;
  s.n_agents = 2;
  s.starts = {{1.0, 2.0}, {3.0, 4.0}};
  s.goals = {{5.0, 6.0}, {7.0, 8.0}};
  Vec x0 = stacked_start(s);
  Vec xg = stacked_goal(s);
  Vec want0(4), wantg(4);
  want0 << 1.0, 2.0, 3.0, 4.0;
  wantg << 5.0, 6.0, 7.0, 8.0;
  CHECK(x0 == want0);
  CHECK(xg == wantg);
}

TEST_CASE("factories wire scenario fields through to the components") {
  Scenario s = single_obstacle_scenario();
  s.sigma_w << 0.2, 0.05;
  s.k_w << 1.0, 0.1, 0.1, 1.0;

  EnsembleModel model = make_ensemble(s);
  CHECK(model.n_agents() == 3);
  CHECK(model.agent().noise_gain == Mat(s.k_w));

  NoiseModel noise = make_noise(s, 77);
  CHECK(noise.variances() == Vec(s.sigma_w));
  CHECK(noise.sigma_max() == 0.2);
  NoiseModel again = make_noise(s, 77);
  CHECK(noise.sample(3) == again.sample(3));

  SmoothingConfig scfg = make_smoothing(s);
  CHECK(scfg.beta == s.beta);
  CHECK(scfg.k == s.k_smooth);
  CHECK(scfg.scheme == s.scheme);

  FilterSetup fs = make_filter_setup(s);
  CHECK(fs.chance.delta_h == s.delta_h);
  CHECK(fs.alpha.gamma == s.gamma);
  CHECK(fs.alpha.exponent == 3);
  CHECK(fs.sigma_axis == Vec(s.sigma_w));
  CHECK(fs.horizon == s.horizon);
  CHECK(fs.u_max == s.u_max);
  CHECK(fs.dt == s.dt);
  CHECK(fs.eps_goal == s.eps_g);

  NominalController ctrl = make_controller(s, model);
  CHECK(ctrl.k_p() == s.k_p);
  CHECK(ctrl.goal() == stacked_goal(s));
  CHECK(ctrl.noise_feedthrough());
}

TEST_CASE("the bundled missions start strictly inside the safe set") {
  for (const Scenario& s :
       {single_obstacle_scenario(), multi_obstacle_scenario()}) {
    BarrierExpr tree = build_barrier_tree(s);
    CHECK(eval_exact(tree, stacked_start(s)) > 0.0);
  }
}
