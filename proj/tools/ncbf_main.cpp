#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "ncbf/barrier.hpp"
#include "ncbf/harness.hpp"
#include "ncbf/mission.hpp"
#include "ncbf/smoothing.hpp"
#include "ncbf/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitUnsafe = 2;
constexpr int kExitInfeasible = 3;

struct RunOverrides {
  double beta = -1.0;
  std::string scheme;
  int k_smooth = -1;
  int horizon = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

ncbf::Scenario apply_overrides(ncbf::Scenario s, const RunOverrides& o) {
  if (o.beta > 0.0) s.beta = o.beta;
  if (!o.scheme.empty()) s.scheme = ncbf::parse_scheme(o.scheme);
  if (o.k_smooth > 0) s.k_smooth = o.k_smooth;
  if (o.horizon > 0) s.horizon = o.horizon;
  if (o.seed_set) s.seed = o.seed;
  return s;
}

int check_valid(const ncbf::Scenario& s) {
  const auto violations = ncbf::validate(s);
  for (const auto& v : violations) std::cerr << "invalid scenario: " << v << "\n";
  return violations.empty() ? kExitOk : kExitConfig;
}

int do_run(const std::string& path, const RunOverrides& o, int runs,
           const std::string& out_dir, bool flip_sign) {
  ncbf::Scenario s = apply_overrides(ncbf::load_scenario(path), o);
  if (int rc = check_valid(s); rc != kExitOk) return rc;

  ncbf::BatchSummary batch = ncbf::run_monte_carlo(s, runs, flip_sign);
  ncbf::export_record(batch.runs.front(), out_dir);
  if (runs > 1) ncbf::export_batch(batch, out_dir);

  for (const auto& r : batch.runs)
    std::cout << "seed " << r.seed << ": " << ncbf::format_status(r.status)
              << ", steps " << r.steps() << ", min h "
              << (r.steps() ? r.min_h_exact() : 0.0) << "\n";
  std::cout << "safe " << batch.safe_runs << "/" << batch.runs.size()
            << ", reached " << batch.reached_runs << ", aborted "
            << batch.aborted_runs << ", mean solve "
            << 1e3 * batch.mean_solve_time << " ms\n";
  std::cout << "outputs written to " << out_dir << "\n";

  if (batch.safe_runs != static_cast<int>(batch.runs.size()))
    return kExitUnsafe;
  if (batch.aborted_runs > 0) return kExitInfeasible;
  return kExitOk;
}

int do_verify(const std::string& path, const std::string& out_dir, int pairs) {
  ncbf::Scenario s =
      path.empty() ? ncbf::multi_obstacle_scenario() : ncbf::load_scenario(path);
  if (int rc = check_valid(s); rc != kExitOk) return rc;

  nlohmann::json report;
  bool all_ok = true;
  const std::vector<double> betas = {1.0, 0.5, 0.1};

  {
    nlohmann::json rows = nlohmann::json::array();
    bool ok = true;
    for (double b : betas) {
      const double v = ncbf::l1_transition_error(b, 2);
      const double v2 = ncbf::l1_transition_error(2.0 * b, 2);
      const double envelope = 15.0 * b / 4.0;
      const double ratio = v2 / v;
      const bool row_ok = v <= envelope && std::abs(ratio - 2.0) <= 1e-6;
      ok = ok && row_ok;
      rows.push_back({{"beta", b},
                      {"measured", v},
                      {"measured_over_beta", v / b},
                      {"envelope", envelope},
                      {"scaling_ratio", ratio},
                      {"ok", row_ok}});
    }
    report["transition_error"] = rows;
    report["transition_error_ok"] = ok;
    all_ok = all_ok && ok;
  }

  {
    nlohmann::json rows = nlohmann::json::array();
    bool ok = true;
    for (double b : betas) {
      const ncbf::BoundCheck c = ncbf::cbf_error_bound_check(b, pairs, 97);
      ok = ok && c.violations == 0;
      rows.push_back({{"beta", b},
                      {"bound", c.bound},
                      {"max_integral", c.max_integral},
                      {"max_ratio", c.max_ratio},
                      {"violations", c.violations},
                      {"samples", c.samples}});
    }
    report["pair_error_bound"] = rows;
    report["pair_error_bound_ok"] = ok;
    all_ok = all_ok && ok;
  }

  {
    const ncbf::BarrierExpr tree = ncbf::build_barrier_tree(s);
    const ncbf::SmoothingConfig cfg = ncbf::make_smoothing(s);
    const int nd = 2 * s.n_agents;
    std::mt19937_64 eng(12345);
    std::uniform_real_distribution<double> coord(-1.5, 3.5);
    double worst_grad = 0.0, worst_hess = 0.0;
    const int n_states = 200;
    for (int i = 0; i < n_states; ++i) {
      ncbf::Vec x(nd);
      for (int j = 0; j < nd; ++j) x(j) = coord(eng);
      const ncbf::Vec g = ncbf::smooth_grad(tree, x, cfg);
      const ncbf::Vec g_fd = ncbf::fd_gradient(
          [&](const ncbf::Vec& y) { return ncbf::smooth_eval(tree, y, cfg); }, x);
      worst_grad = std::max(worst_grad, (g - g_fd).lpNorm<Eigen::Infinity>() /
                                            std::max(1.0, g.lpNorm<Eigen::Infinity>()));
      const ncbf::Mat h = ncbf::smooth_hessian(tree, x, cfg);
      const ncbf::Mat h_fd = ncbf::fd_jacobian(
          [&](const ncbf::Vec& y) { return ncbf::smooth_grad(tree, y, cfg); }, x);
      worst_hess = std::max(worst_hess,
                            (h - h_fd).lpNorm<Eigen::Infinity>() /
                                std::max(1.0, h.lpNorm<Eigen::Infinity>()));
    }
    const bool ok = worst_grad <= 1e-6 && worst_hess <= 1e-4;
    report["derivative_check"] = {{"states", n_states},
                                  {"max_grad_rel_err", worst_grad},
                                  {"max_hess_rel_err", worst_hess},
                                  {"grad_tol", 1e-6},
                                  {"hess_tol", 1e-4},
                                  {"ok", ok}};
    all_ok = all_ok && ok;
  }

  {
    // noise-free monitored episode; the margin gain is lowered so that a
    // nonnegative QP margin implies the almost-sure-safety inequality on
    // every state with smoothed barrier above the cutoff
    ncbf::Scenario m = s;
    m.sigma_w.setZero();
    m.gamma = 0.1;
    const ncbf::RunRecord rec = ncbf::run_episode(m, m.seed);
    const ncbf::EpisodeMonitorReport mr = ncbf::monitor_episode(rec, m, 0.05);
    const bool ok = mr.violations == 0 && rec.status != ncbf::EpisodeStatus::Aborted;
    report["monitor"] = {{"episode_status", ncbf::format_status(rec.status)},
                         {"steps", mr.steps},
                         {"checked", mr.checked},
                         {"violations", mr.violations},
                         {"boundary", mr.boundary},
                         {"worst_slack", mr.worst_slack},
                         {"h_cutoff", 0.05},
                         {"gamma", m.gamma},
                         {"noise_free", true},
                         {"ok", ok}};
    all_ok = all_ok && ok;
  }

  report["all_ok"] = all_ok;
  std::filesystem::create_directories(out_dir);
  const auto report_path = std::filesystem::path(out_dir) / "verify_report.json";
  std::ofstream out(report_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + report_path.string());
  out << report.dump(2) << "\n";
  std::cout << "verify: " << (all_ok ? "all checks passed" : "CHECK FAILED")
            << ", report at " << report_path.string() << "\n";
  return all_ok ? kExitOk : kExitUnsafe;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"safety-filtered control for ensembles of noisy agents"};
  app.require_subcommand(1);

  std::string scenario_path, out_dir = "out";
  RunOverrides overrides;
  int runs = 1;
  bool flip_sign = false;
  int pairs = 2000;

  auto* run_cmd =
      app.add_subcommand("run", "simulate a scenario under the safety filter");
  run_cmd->add_option("--scenario", scenario_path, "scenario file")->required();
  run_cmd->add_option("--beta", overrides.beta, "smoothing band half-width override");
  run_cmd->add_option("--scheme", overrides.scheme, "smoothing scheme override")
      ->check(CLI::IsMember({"poly", "lse"}));
  run_cmd->add_option("--k", overrides.k_smooth, "transition smoothness order override");
  run_cmd->add_option("--runs", runs, "number of Monte Carlo episodes")
      ->check(CLI::PositiveNumber);
  auto* seed_opt = run_cmd->add_option("--seed", overrides.seed, "base seed override");
  run_cmd->add_option("--horizon", overrides.horizon, "control horizon override");
  run_cmd->add_option("--out", out_dir, "output directory (default: out)");
  run_cmd->add_flag("--flip-nominal-sign", flip_sign,
                    "use the goal-repelling feedback sign +k_p (x - x_g)");

  auto* validate_cmd =
      app.add_subcommand("validate", "check a scenario file against the schema");
  validate_cmd->add_option("--scenario", scenario_path, "scenario file")->required();

  auto* verify_cmd = app.add_subcommand(
      "verify", "run quadrature, derivative, and safety-monitor checks");
  verify_cmd->add_option("--scenario", scenario_path,
                         "scenario file (default: bundled multi-obstacle)");
  verify_cmd->add_option("--out", out_dir, "output directory (default: out)");
  verify_cmd->add_option("--pairs", pairs, "sampled pairs per bound check")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  overrides.seed_set = seed_opt->count() > 0;

  try {
    if (run_cmd->parsed())
      return do_run(scenario_path, overrides, runs, out_dir, flip_sign);
    if (validate_cmd->parsed()) {
      const int rc = check_valid(ncbf::load_scenario(scenario_path));
      if (rc == kExitOk) std::cout << "scenario valid\n";
      return rc;
    }
    if (verify_cmd->parsed()) return do_verify(scenario_path, out_dir, pairs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
