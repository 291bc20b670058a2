#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncbf/barrier.hpp"
#include "ncbf/dynamics.hpp"
#include "ncbf/filter.hpp"
#include "ncbf/mission.hpp"
#include "ncbf/qp.hpp"
#include "ncbf/smoothing.hpp"
#include "ncbf/verify.hpp"

namespace ncbf {

enum class EpisodeStatus { Reached, CapReached, Aborted };

inline std::string format_status(EpisodeStatus s) {
  switch (s) {
    case EpisodeStatus::Reached: return "reached";
    case EpisodeStatus::CapReached: return "cap-reached";
    case EpisodeStatus::Aborted: return "aborted";
  }
  return "unknown";
}

// One control loop execution. All trajectory-aligned fields share the same
// row count: row t holds the state the t-th control was computed at, that
// control, and the diagnostics of its solve.
struct RunRecord {
  Mat trajectory;        // steps x Nd
  Mat controls;          // steps x Nm, applied first control per solve
  Mat nominal_controls;  // steps x Nm
  Vec h_exact;           // barrier at the trajectory rows
  Vec h_smooth;
  Vec margins;      // first-step constraint slack at the solution
  Vec solve_times;  // seconds; wall clock, excluded from reproducible outputs
  EpisodeStatus status = EpisodeStatus::CapReached;
  int reached_at = -1;  // row whose state lies in the goal ball
  int abort_step = -1;  // loop index of a failed solve
  std::uint64_t seed = 0;
  double dt = 0.05;

  int steps() const { return static_cast<int>(trajectory.rows()); }
  double min_h_exact() const {
    return h_exact.size() > 0 ? h_exact.minCoeff()
                              : std::numeric_limits<double>::infinity();
  }
  double control_deviation() const {
    double sum = 0.0;
    for (int t = 0; t < controls.rows(); ++t)
      sum += (controls.row(t) - nominal_controls.row(t)).norm();
    return sum;
  }
};

// Closed loop: sample one disturbance per iteration, solve the filter QP,
// apply the first control, march the plant with the same disturbance. The
// goal test runs on the measured state after the control is issued, so every
// recorded state carries a control; a failed solve aborts the episode.
inline RunRecord run_episode(const Scenario& s, std::uint64_t seed,
                             bool flip_sign = false) {
  {
    auto violations = validate(s);
    if (!violations.empty())
      throw std::invalid_argument("invalid scenario: " + violations.front());
  }
  const BarrierExpr tree = build_barrier_tree(s);
  const EnsembleModel model = make_ensemble(s);
  NoiseModel noise = make_noise(s, seed);
  const NominalController ctrl = make_controller(s, model, flip_sign);
  const FilterSetup fs = make_filter_setup(s);
  const Vec goal = stacked_goal(s);

  RunRecord rec;
  rec.seed = seed;
  rec.dt = s.dt;

  std::vector<Vec> xs, us, uds;
  std::vector<double> hx, hs, mg, st;
  Vec x = stacked_start(s);
  for (int t = 0; t < s.t_max; ++t) {
    const Vec w = noise.sample(s.n_agents);
    const SafeControlResult res = filter_controls(x, tree, model, ctrl, fs, w);
    if (res.status != SolveStatus::Optimal) {
      rec.status = EpisodeStatus::Aborted;
      rec.abort_step = t;
      break;
    }
    const Vec u0 = res.u_seq.col(0);
    xs.push_back(x);
    us.push_back(u0);
    uds.push_back(ctrl.control(x, w));
    hx.push_back(eval_exact(tree, x));
    hs.push_back(smooth_eval(tree, x, fs.smoothing));
    mg.push_back(res.margins(0));
    st.push_back(res.solve_time);
    const bool reached = (x - goal).norm() <= s.eps_g;
    x = model.step(x, u0, w, s.dt);
    if (reached) {
      rec.status = EpisodeStatus::Reached;
      rec.reached_at = t;
      break;
    }
  }

  const int n = static_cast<int>(xs.size());
  rec.trajectory.resize(n, model.state_dim());
  rec.controls.resize(n, model.input_dim());
  rec.nominal_controls.resize(n, model.input_dim());
  rec.h_exact.resize(n);
  rec.h_smooth.resize(n);
  rec.margins.resize(n);
  rec.solve_times.resize(n);
  for (int t = 0; t < n; ++t) {
    rec.trajectory.row(t) = xs[t].transpose();
    rec.controls.row(t) = us[t].transpose();
    rec.nominal_controls.row(t) = uds[t].transpose();
    rec.h_exact(t) = hx[t];
    rec.h_smooth(t) = hs[t];
    rec.margins(t) = mg[t];
    rec.solve_times(t) = st[t];
  }
  return rec;
}

struct BatchSummary {
  std::vector<RunRecord> runs;
  int safe_runs = 0;     // min over recorded rows of exact barrier > 0
  int reached_runs = 0;
  int aborted_runs = 0;
  double mean_solve_time = 0.0;  // seconds across all solves of all runs
  double std_solve_time = 0.0;
  double control_deviation = 0.0;  // summed over runs; scheme-comparison metric
  Mat envelope_min;  // per-step componentwise extremes across runs
  Mat envelope_max;
};

inline void summarize_batch(BatchSummary& b) {
  b.safe_runs = b.reached_runs = b.aborted_runs = 0;
  b.control_deviation = 0.0;
  int max_steps = 0;
  int cols = 0;
  for (const auto& r : b.runs) {
    if (r.min_h_exact() > 0.0) ++b.safe_runs;
    if (r.status == EpisodeStatus::Reached) ++b.reached_runs;
    if (r.status == EpisodeStatus::Aborted) ++b.aborted_runs;
    b.control_deviation += r.control_deviation();
    max_steps = std::max(max_steps, r.steps());
    cols = std::max(cols, static_cast<int>(r.trajectory.cols()));
  }

  double sum = 0.0, sum_sq = 0.0;
  long count = 0;
  for (const auto& r : b.runs)
    for (int t = 0; t < r.solve_times.size(); ++t) {
      sum += r.solve_times(t);
      sum_sq += r.solve_times(t) * r.solve_times(t);
      ++count;
    }
  b.mean_solve_time = count ? sum / count : 0.0;
  b.std_solve_time =
      count ? std::sqrt(std::max(0.0, sum_sq / count -
                                          b.mean_solve_time * b.mean_solve_time))
            : 0.0;

  b.envelope_min.resize(max_steps, cols);
  b.envelope_max.resize(max_steps, cols);
  b.envelope_min.setConstant(std::numeric_limits<double>::infinity());
  b.envelope_max.setConstant(-std::numeric_limits<double>::infinity());
  for (const auto& r : b.runs)
    for (int t = 0; t < r.steps(); ++t) {
      b.envelope_min.row(t) = b.envelope_min.row(t).cwiseMin(r.trajectory.row(t));
      b.envelope_max.row(t) = b.envelope_max.row(t).cwiseMax(r.trajectory.row(t));
    }
}

// independent episodes with consecutive seeds
inline BatchSummary run_monte_carlo(const Scenario& s, int runs,
                                    bool flip_sign = false) {
  if (runs < 1) throw std::invalid_argument("run_monte_carlo: runs must be >= 1");
  BatchSummary b;
  b.runs.reserve(runs);
  for (int i = 0; i < runs; ++i)
    b.runs.push_back(run_episode(s, s.seed + static_cast<std::uint64_t>(i), flip_sign));
  summarize_batch(b);
  return b;
}

struct EpisodeMonitorReport {
  int steps = 0;       // recorded rows examined
  int checked = 0;     // rows with the smoothed barrier above the cutoff
  int violations = 0;
  int boundary = 0;    // rows with nonpositive smoothed barrier
  double worst_slack = std::numeric_limits<double>::infinity();  // min lhs − rhs
};

// almost-sure-safety inequality at every applied control of a record
inline EpisodeMonitorReport monitor_episode(
    const RunRecord& rec, const Scenario& s, double h_cutoff = 0.05,
    const KappaFunction& alpha_star = KappaFunction{1.0, 1}) {
  const BarrierExpr tree = build_barrier_tree(s);
  const EnsembleModel model = make_ensemble(s);
  const SmoothingConfig cfg = make_smoothing(s);
  EpisodeMonitorReport out;
  out.steps = rec.steps();
  for (int t = 0; t < rec.steps(); ++t) {
    const Vec x = rec.trajectory.row(t).transpose();
    const Vec u = rec.controls.row(t).transpose();
    MonitorResult m = safety_condition_monitor(x, u, tree, cfg, model,
                                               Vec(s.sigma_w), alpha_star);
    if (m.boundary_reached) {
      ++out.boundary;
      continue;
    }
    if (m.h < h_cutoff) continue;
    ++out.checked;
    out.worst_slack = std::min(out.worst_slack, m.lhs - m.rhs);
    if (!m.satisfied) ++out.violations;
  }
  return out;
}

namespace detail {

inline std::string fmt_double(double v) {
  std::array<char, 40> buf;
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::ofstream open_output(const std::string& dir,
                                 const std::string& name) {
  std::filesystem::create_directories(dir);
  const auto path = std::filesystem::path(dir) / name;
  std::ofstream out(path, std::ios::binary);  // LF line endings everywhere
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

inline void write_timings(const Vec& solve_times, const std::string& dir) {
  double sum = 0.0, sum_sq = 0.0, mx = 0.0;
  for (int i = 0; i < solve_times.size(); ++i) {
    sum += solve_times(i);
    sum_sq += solve_times(i) * solve_times(i);
    mx = std::max(mx, solve_times(i));
  }
  const long n = solve_times.size();
  const double mean = n ? sum / n : 0.0;
  const double var = n ? std::max(0.0, sum_sq / n - mean * mean) : 0.0;
  nlohmann::json j;
  j["solves"] = n;
  j["mean_solve_time_ms"] = 1e3 * mean;
  j["std_solve_time_ms"] = 1e3 * std::sqrt(var);
  j["max_solve_time_ms"] = 1e3 * mx;
  j["note"] =
      "wall-clock diagnostics; varies across runs and is excluded from "
      "byte-reproducibility guarantees";
  auto out = open_output(dir, "timings.json");
  out << j.dump(2) << "\n";
}

}  // namespace detail

// trajectory.csv, controls.csv, cbf.csv, summary.json for one episode;
// solve times go to timings.json so everything else is byte-reproducible
inline void export_record(const RunRecord& rec, const std::string& dir) {
  const int n = rec.steps();
  const int n_agents = static_cast<int>(rec.trajectory.cols()) / 2;

  {
    auto out = detail::open_output(dir, "trajectory.csv");
    out << "t";
    for (int i = 1; i <= n_agents; ++i)
      out << ",p_x_" << i << ",p_y_" << i;
    out << "\n";
    for (int t = 0; t < n; ++t) {
      out << detail::fmt_double(t * rec.dt);
      for (int c = 0; c < rec.trajectory.cols(); ++c)
        out << "," << detail::fmt_double(rec.trajectory(t, c));
      out << "\n";
    }
  }
  {
    auto out = detail::open_output(dir, "controls.csv");
    out << "t,norm_u_nominal,norm_u_filtered\n";
    for (int t = 0; t < n; ++t)
      out << detail::fmt_double(t * rec.dt) << ","
          << detail::fmt_double(rec.nominal_controls.row(t).norm()) << ","
          << detail::fmt_double(rec.controls.row(t).norm()) << "\n";
  }
  {
    auto out = detail::open_output(dir, "cbf.csv");
    out << "t,h_exact,h_smooth\n";
    for (int t = 0; t < n; ++t)
      out << detail::fmt_double(t * rec.dt) << ","
          << detail::fmt_double(rec.h_exact(t)) << ","
          << detail::fmt_double(rec.h_smooth(t)) << "\n";
  }
  {
    nlohmann::json j;
    j["status"] = format_status(rec.status);
    j["steps"] = n;
    j["reached_at"] = rec.reached_at;
    j["abort_step"] = rec.abort_step;
    j["seed"] = rec.seed;
    j["dt"] = rec.dt;
    j["min_h_exact"] = n ? rec.min_h_exact() : 0.0;
    j["min_margin"] = n ? rec.margins.minCoeff() : 0.0;
    j["control_deviation"] = rec.control_deviation();
    auto out = detail::open_output(dir, "summary.json");
    out << j.dump(2) << "\n";
  }
  detail::write_timings(rec.solve_times, dir);
}

// envelope.csv plus batch-level summary.json / timings.json
inline void export_batch(const BatchSummary& b, const std::string& dir) {
  const int n = static_cast<int>(b.envelope_min.rows());
  const int n_agents = static_cast<int>(b.envelope_min.cols()) / 2;
  const double dt = b.runs.empty() ? 0.0 : b.runs.front().dt;

  {
    auto out = detail::open_output(dir, "envelope.csv");
    out << "t";
    for (int i = 1; i <= n_agents; ++i)
      out << ",p_x_" << i << "_min,p_x_" << i << "_max,p_y_" << i
          << "_min,p_y_" << i << "_max";
    out << "\n";
    for (int t = 0; t < n; ++t) {
      out << detail::fmt_double(t * dt);
      for (int i = 0; i < n_agents; ++i)
        out << "," << detail::fmt_double(b.envelope_min(t, 2 * i)) << ","
            << detail::fmt_double(b.envelope_max(t, 2 * i)) << ","
            << detail::fmt_double(b.envelope_min(t, 2 * i + 1)) << ","
            << detail::fmt_double(b.envelope_max(t, 2 * i + 1));
      out << "\n";
    }
  }
  {
    nlohmann::json j;
    j["runs"] = b.runs.size();
    j["safe_runs"] = b.safe_runs;
    j["reached_runs"] = b.reached_runs;
    j["aborted_runs"] = b.aborted_runs;
    j["control_deviation"] = b.control_deviation;
    nlohmann::json per_run = nlohmann::json::array();
    for (const auto& r : b.runs) {
      nlohmann::json e;
      e["seed"] = r.seed;
      e["status"] = format_status(r.status);
      e["steps"] = r.steps();
      e["reached_at"] = r.reached_at;
      e["min_h_exact"] = r.steps() ? r.min_h_exact() : 0.0;
      per_run.push_back(e);
    }
    j["per_run"] = per_run;
    auto out = detail::open_output(dir, "summary.json");
    out << j.dump(2) << "\n";
  }
  {
    long total = 0;
    for (const auto& r : b.runs) total += r.solve_times.size();
    Vec all(total);
    long k = 0;
    for (const auto& r : b.runs)
      for (int t = 0; t < r.solve_times.size(); ++t) all(k++) = r.solve_times(t);
    detail::write_timings(all, dir);
  }
}

}  // namespace ncbf
