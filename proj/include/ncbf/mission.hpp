#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncbf/barrier.hpp"
#include "ncbf/dynamics.hpp"
#include "ncbf/filter.hpp"
#include "ncbf/smoothing.hpp"

namespace ncbf {

struct Obstacle {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double radius = 0.1;
};

inline bool operator==(const Obstacle& a, const Obstacle& b) {
  return a.center == b.center && a.radius == b.radius;
}

// Planar reach-avoid mission: every field mirrors one scenario-file key.
// sigma_w holds per-axis disturbance variances (the diagonal of the
// disturbance covariance); k_w is the gain the disturbance enters through.
struct Scenario {
  int n_agents = 0;
  std::vector<Eigen::Vector2d> starts;
  std::vector<Eigen::Vector2d> goals;
  std::vector<Obstacle> obstacles;
  double delta = 0.14;    // inter-agent clearance
  double delta_o = 0.15;  // obstacle clearance (from the obstacle center)
  double eps_g = 0.05;    // goal-ball radius on the stacked state
  Eigen::Vector2d sigma_w = Eigen::Vector2d::Constant(0.1);
  Eigen::Matrix2d k_w = Eigen::Matrix2d::Identity();
  double beta = 0.1;
  SmoothScheme scheme = SmoothScheme::Polynomial;
  int k_smooth = 2;
  int horizon = 10;
  int t_max = 400;
  double dt = 0.05;
  double u_max = 2.0;
  double gamma = 1.0;
  double delta_h = 0.01;
  double k_p = 1.0;
  std::uint64_t seed = 0;

  friend bool operator==(const Scenario& a, const Scenario& b) {
    return a.n_agents == b.n_agents && a.starts == b.starts &&
           a.goals == b.goals && a.obstacles == b.obstacles &&
           a.delta == b.delta && a.delta_o == b.delta_o &&
           a.eps_g == b.eps_g && a.sigma_w == b.sigma_w && a.k_w == b.k_w &&
           a.beta == b.beta && a.scheme == b.scheme &&
           a.k_smooth == b.k_smooth && a.horizon == b.horizon &&
           a.t_max == b.t_max && a.dt == b.dt && a.u_max == b.u_max &&
           a.gamma == b.gamma && a.delta_h == b.delta_h && a.k_p == b.k_p &&
           a.seed == b.seed;
  }
};

inline std::string format_scheme(SmoothScheme s) {
  return s == SmoothScheme::Polynomial ? "poly" : "lse";
}

inline SmoothScheme parse_scheme(const std::string& name) {
  if (name == "poly") return SmoothScheme::Polynomial;
  if (name == "lse") return SmoothScheme::LogSumExp;
  throw std::runtime_error("scenario schema: scheme must be \"poly\" or \"lse\", got \"" +
                           name + "\"");
}

namespace detail {

inline const std::vector<std::string>& scenario_keys() {
  static const std::vector<std::string> keys = {
      "n_agents", "starts", "goals",  "obstacles", "delta",   "delta_o",
      "eps_g",    "sigma_w", "k_w",   "beta",      "scheme",  "k_smooth",
      "horizon",  "t_max",  "dt",     "u_max",     "gamma",   "delta_h",
      "k_p",      "seed"};
  return keys;
}

template <class T>
T field_as(const nlohmann::json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::runtime_error("scenario schema: field \"" + key +
                             "\" has the wrong type");
  }
}

inline Eigen::Vector2d point_from(const nlohmann::json& j,
                                  const std::string& key) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw std::runtime_error("scenario schema: field \"" + key +
                             "\" entries must be [x, y] pairs");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

inline Scenario scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object())
    throw std::runtime_error("scenario schema: top level must be an object");
  const auto& keys = detail::scenario_keys();
  for (const auto& item : j.items()) {
    if (std::find(keys.begin(), keys.end(), item.key()) == keys.end())
      throw std::runtime_error("scenario schema: unknown field \"" +
                               item.key() + "\"");
  }

  Scenario s;
  if (j.contains("n_agents")) s.n_agents = detail::field_as<int>(j, "n_agents");
  for (const char* key : {"starts", "goals"}) {
    if (!j.contains(key)) continue;
    if (!j.at(key).is_array())
      throw std::runtime_error(std::string("scenario schema: field \"") + key +
                               "\" must be an array of points");
    auto& dst = std::string(key) == "starts" ? s.starts : s.goals;
    dst.clear();
    for (const auto& p : j.at(key)) dst.push_back(detail::point_from(p, key));
  }
  if (j.contains("obstacles")) {
    if (!j.at("obstacles").is_array())
      throw std::runtime_error(
          "scenario schema: field \"obstacles\" must be an array");
    s.obstacles.clear();
    for (const auto& o : j.at("obstacles")) {
      if (!o.is_object() || !o.contains("center") || !o.contains("radius"))
        throw std::runtime_error(
            "scenario schema: obstacles need {center, radius}");
      for (const auto& item : o.items()) {
        if (item.key() != "center" && item.key() != "radius")
          throw std::runtime_error(
              "scenario schema: unknown obstacle field \"" + item.key() +
              "\"");
      }
      Obstacle ob;
      ob.center = detail::point_from(o.at("center"), "obstacles.center");
      if (!o.at("radius").is_number())
        throw std::runtime_error(
            "scenario schema: field \"obstacles.radius\" has the wrong type");
      ob.radius = o.at("radius").get<double>();
      s.obstacles.push_back(ob);
    }
  }
  if (j.contains("delta")) s.delta = detail::field_as<double>(j, "delta");
  if (j.contains("delta_o")) s.delta_o = detail::field_as<double>(j, "delta_o");
  if (j.contains("eps_g")) s.eps_g = detail::field_as<double>(j, "eps_g");
  if (j.contains("sigma_w")) {
    const auto& v = j.at("sigma_w");
    if (v.is_number()) {
      s.sigma_w.setConstant(v.get<double>());
    } else if (v.is_array() && v.size() == 2 && v[0].is_number() &&
               v[1].is_number()) {
      s.sigma_w << v[0].get<double>(), v[1].get<double>();
    } else {
      throw std::runtime_error(
          "scenario schema: field \"sigma_w\" must be a number or [vx, vy]");
    }
  }
  if (j.contains("k_w")) {
    const auto& v = j.at("k_w");
    if (v.is_number()) {
      s.k_w = v.get<double>() * Eigen::Matrix2d::Identity();
    } else if (v.is_array() && v.size() == 2) {
      for (int r = 0; r < 2; ++r) {
        if (!v[r].is_array() || v[r].size() != 2)
          throw std::runtime_error(
              "scenario schema: field \"k_w\" must be a number or 2x2 rows");
        for (int c = 0; c < 2; ++c) s.k_w(r, c) = v[r][c].get<double>();
      }
    } else {
      throw std::runtime_error(
          "scenario schema: field \"k_w\" must be a number or 2x2 rows");
    }
  }
  if (j.contains("beta")) s.beta = detail::field_as<double>(j, "beta");
  if (j.contains("scheme"))
    s.scheme = parse_scheme(detail::field_as<std::string>(j, "scheme"));
  if (j.contains("k_smooth")) s.k_smooth = detail::field_as<int>(j, "k_smooth");
  if (j.contains("horizon")) s.horizon = detail::field_as<int>(j, "horizon");
  if (j.contains("t_max")) s.t_max = detail::field_as<int>(j, "t_max");
  if (j.contains("dt")) s.dt = detail::field_as<double>(j, "dt");
  if (j.contains("u_max")) s.u_max = detail::field_as<double>(j, "u_max");
  if (j.contains("gamma")) s.gamma = detail::field_as<double>(j, "gamma");
  if (j.contains("delta_h")) s.delta_h = detail::field_as<double>(j, "delta_h");
  if (j.contains("k_p")) s.k_p = detail::field_as<double>(j, "k_p");
  if (j.contains("seed")) s.seed = detail::field_as<std::uint64_t>(j, "seed");
  return s;
}

inline nlohmann::json to_json(const Scenario& s) {
  nlohmann::json j;
  j["n_agents"] = s.n_agents;
  j["starts"] = nlohmann::json::array();
  for (const auto& p : s.starts) j["starts"].push_back({p.x(), p.y()});
  j["goals"] = nlohmann::json::array();
  for (const auto& p : s.goals) j["goals"].push_back({p.x(), p.y()});
  j["obstacles"] = nlohmann::json::array();
  for (const auto& o : s.obstacles)
    j["obstacles"].push_back(
        {{"center", {o.center.x(), o.center.y()}}, {"radius", o.radius}});
  j["delta"] = s.delta;
  j["delta_o"] = s.delta_o;
  j["eps_g"] = s.eps_g;
  j["sigma_w"] = {s.sigma_w(0), s.sigma_w(1)};
  j["k_w"] = {{s.k_w(0, 0), s.k_w(0, 1)}, {s.k_w(1, 0), s.k_w(1, 1)}};
  j["beta"] = s.beta;
  j["scheme"] = format_scheme(s.scheme);
  j["k_smooth"] = s.k_smooth;
  j["horizon"] = s.horizon;
  j["t_max"] = s.t_max;
  j["dt"] = s.dt;
  j["u_max"] = s.u_max;
  j["gamma"] = s.gamma;
  j["delta_h"] = s.delta_h;
  j["k_p"] = s.k_p;
  j["seed"] = s.seed;
  return j;
}

inline Scenario parse_scenario(const std::string& text) {
  // comments allowed so bundled files can carry a provenance header
  return scenario_from_json(
      nlohmann::json::parse(text, nullptr, true, true));
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

inline void save_scenario(const Scenario& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scenario file: " + path);
  out << to_json(s).dump(2) << "\n";
}

// effective clearance kept from an obstacle's center: the configured margin,
// but never less than the disk's own radius
inline double obstacle_clearance(const Scenario& s, const Obstacle& o) {
  return std::max(s.delta_o, o.radius);
}

inline std::vector<std::string> validate(const Scenario& s) {
  std::vector<std::string> v;
  auto fail = [&v](const std::string& msg) { v.push_back(msg); };

  if (s.n_agents < 1) fail("n_agents: must be >= 1");
  if (static_cast<int>(s.starts.size()) != s.n_agents)
    fail("starts: expected one point per agent");
  if (static_cast<int>(s.goals.size()) != s.n_agents)
    fail("goals: expected one point per agent");
  if (!(s.delta > 0.0)) fail("delta: must be positive");
  if (!(s.delta_o > 0.0)) fail("delta_o: must be positive");
  if (!(s.delta_o > s.delta))
    fail("delta_o: clearance ordering requires delta_o > delta");
  if (!(s.eps_g > 0.0)) fail("eps_g: must be positive");
  if (!(s.sigma_w.minCoeff() >= 0.0))
    fail("sigma_w: variances must be nonnegative");
  {
    Eigen::Matrix2d sym = 0.5 * (s.k_w + s.k_w.transpose());
    if (s.k_w != s.k_w.transpose() ||
        Eigen::LLT<Eigen::Matrix2d>(sym).info() != Eigen::Success)
      fail("k_w: must be symmetric positive definite");
  }
  if (!(s.beta > 0.0)) fail("beta: must be positive");
  if (s.k_smooth < 1) fail("k_smooth: must be >= 1");
  if (s.scheme == SmoothScheme::Polynomial && s.k_smooth < 2)
    fail("k_smooth: polynomial scheme needs k >= 2 for a twice-differentiable barrier");
  if (s.horizon < 1) fail("horizon: must be >= 1");
  if (s.t_max < 0) fail("t_max: must be >= 0");
  if (!(s.dt > 0.0)) fail("dt: must be positive");
  if (!(s.u_max > 0.0)) fail("u_max: must be positive");
  if (!(s.gamma > 0.0)) fail("gamma: must be positive");
  if (!(s.delta_h > 0.0 && s.delta_h < 1.0))
    fail("delta_h: must lie in (0,1)");
  if (!(s.k_p > 0.0)) fail("k_p: must be positive");
  for (const auto& o : s.obstacles)
    if (!(o.radius >= 0.0)) fail("obstacles: radius must be nonnegative");

  if (static_cast<int>(s.starts.size()) == s.n_agents) {
    for (int i = 0; i < s.n_agents; ++i)
      for (int k = i + 1; k < s.n_agents; ++k)
        if ((s.starts[i] - s.starts[k]).norm() <= s.delta)
          fail("starts: agents " + std::to_string(i) + " and " +
               std::to_string(k) + " within delta (initial state not interior)");
    for (int i = 0; i < s.n_agents; ++i)
      for (std::size_t k = 0; k < s.obstacles.size(); ++k)
        if ((s.starts[i] - s.obstacles[k].center).norm() <=
            obstacle_clearance(s, s.obstacles[k]))
          fail("starts: agent " + std::to_string(i) + " within obstacle " +
               std::to_string(k) + " clearance (initial state not interior)");
  }
  return v;
}

namespace detail {

inline BarrierExpr combine_all(std::vector<BarrierExpr> nodes) {
  if (nodes.size() == 1) return nodes.front();
  return BarrierExpr::all_of(std::move(nodes));
}

}  // namespace detail

// conjunction of all pairwise-separation leaves (i < j) with all
// agent/obstacle clearance leaves, ordered by (i, j) then (i, k)
inline BarrierExpr build_barrier_tree(const Scenario& s) {
  std::vector<BarrierExpr> pair_leaves;
  for (int i = 0; i < s.n_agents; ++i)
    for (int j = i + 1; j < s.n_agents; ++j)
      pair_leaves.push_back(
          BarrierExpr::leaf(AtomicBarrier::pair_distance(i, j, s.delta)));

  std::vector<BarrierExpr> obstacle_leaves;
  for (int i = 0; i < s.n_agents; ++i)
    for (const auto& o : s.obstacles)
      obstacle_leaves.push_back(BarrierExpr::leaf(
          AtomicBarrier::obstacle_distance(i, Vec(o.center), obstacle_clearance(s, o))));

  if (pair_leaves.empty() && obstacle_leaves.empty())
    throw std::invalid_argument(
        "degenerate mission: no agent pairs and no obstacles to compose");
  if (pair_leaves.empty()) return detail::combine_all(std::move(obstacle_leaves));
  if (obstacle_leaves.empty()) return detail::combine_all(std::move(pair_leaves));
  return BarrierExpr::all_of({detail::combine_all(std::move(pair_leaves)),
                              detail::combine_all(std::move(obstacle_leaves))});
}

inline Vec stacked_start(const Scenario& s) {
  Vec x(2 * s.n_agents);
  for (int i = 0; i < s.n_agents; ++i) x.segment<2>(2 * i) = s.starts[i];
  return x;
}

inline Vec stacked_goal(const Scenario& s) {
  Vec x(2 * s.n_agents);
  for (int i = 0; i < s.n_agents; ++i) x.segment<2>(2 * i) = s.goals[i];
  return x;
}

inline EnsembleModel make_ensemble(const Scenario& s) {
  AgentModel agent = builtin_single_integrator();
  agent.noise_gain = s.k_w;
  return EnsembleModel(agent, s.n_agents);
}

inline NoiseModel make_noise(const Scenario& s, std::uint64_t seed) {
  const double sigma_max = std::max(s.sigma_w.maxCoeff(), 0.0);
  return NoiseModel(Vec(s.sigma_w), sigma_max, seed);
}

inline SmoothingConfig make_smoothing(const Scenario& s) {
  SmoothingConfig cfg;
  cfg.beta = s.beta;
  cfg.k = s.k_smooth;
  cfg.scheme = s.scheme;
  return cfg;
}

inline FilterSetup make_filter_setup(const Scenario& s) {
  FilterSetup fs;
  fs.smoothing = make_smoothing(s);
  fs.chance.delta_h = s.delta_h;
  fs.alpha = KappaFunction{s.gamma, 3};
  fs.sigma_axis = Vec(s.sigma_w);
  fs.horizon = s.horizon;
  fs.u_max = s.u_max;
  fs.dt = s.dt;
  fs.eps_goal = s.eps_g;
  // the smoothed composition over-approximates the exact min by up to the
  // per-fold band error (a fraction of beta), and the per-step quantile only
  // bounds one step's slippage; measuring the class-K allowance this far below
  // the smoothed value keeps the exact barrier positive while riding the
  // constraint
  fs.h_margin = 0.3 * s.beta;
  return fs;
}

inline NominalController make_controller(const Scenario& s,
                                         const EnsembleModel& model,
                                         bool flip_sign = false) {
  return NominalController(s.k_p, stacked_goal(s), model,
                           /*noise_feedthrough=*/true, flip_sign);
}

// bundled missions: three agents crossing a field of disk obstacles. Layout
// rules learned the hard way:
//   - keep every straight start-goal line off obstacle centers (impact
//     parameter around the clearance radius, not near zero): a predicted
//     state at a disk center has a vanishing barrier gradient, so a rollout
//     row there demands recovery the input box cannot supply;
//   - stagger pair crossings in x so two agents never swap sides at close
//     range, which would park two pair barriers in the same transition band
//     where the curvature correction of the smoothed min is harshest;
//   - a short rollout horizon (a few steps) keeps those predicted-state
//     pathologies from aborting an otherwise recoverable run.
inline Scenario single_obstacle_scenario() {
  Scenario s;
  s.n_agents = 3;
  s.starts = {{0.0, 0.9}, {-0.7, -0.07}, {0.55, -0.9}};
  s.goals = {{2.6, -0.6}, {2.6, 0.22}, {2.6, 0.8}};
  s.obstacles = {{{1.3, 0.0}, 0.1}};
  s.eps_g = 0.25;
  s.gamma = 6.0;
  s.horizon = 5;
  s.dt = 0.02;
  s.k_p = 2.0;
  s.t_max = 600;
  s.seed = 1;
  return s;
}

inline Scenario multi_obstacle_scenario() {
  Scenario s;
  s.n_agents = 3;
  s.starts = {{0.0, 0.9}, {-0.45, -0.15}, {0.3, -0.95}};
  s.goals = {{3.0, -0.9}, {3.0, 0.85}, {3.0, 0.05}};
  s.obstacles = {{{0.7, 0.35}, 0.1}, {{1.6, 0.57}, 0.12}, {{2.2, -0.13}, 0.1}};
  s.eps_g = 0.25;
  s.gamma = 6.0;
  s.horizon = 5;
  s.dt = 0.02;
  s.k_p = 2.0;
  s.t_max = 600;
  s.seed = 2;
  return s;
}

}  // namespace ncbf
