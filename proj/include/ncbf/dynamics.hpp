#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <utility>

#include "ncbf/barrier.hpp"

namespace ncbf {

// control-affine agent: xdot = f(x) + g(x) u + K_w w
struct AgentModel {
  int dim_x = 2;
  int dim_u = 2;
  std::function<Vec(const Vec&)> drift;      // f
  std::function<Mat(const Vec&)> input_map;  // g
  Mat noise_gain;                            // K_w, positive definite
  double lipschitz = 0.0;  // declared Lipschitz bound for f and g
};

inline AgentModel builtin_single_integrator() {
  AgentModel m;
  m.dim_x = 2;
  m.dim_u = 2;
  m.drift = [](const Vec& x) { return Vec::Zero(x.size()); };
  m.input_map = [](const Vec&) { return Mat::Identity(2, 2); };
  m.noise_gain = Mat::Identity(2, 2);
  m.lipschitz = 0.0;
  return m;
}

// N copies of one agent on a stacked state x = (x_1; ...; x_N).
class EnsembleModel {
 public:
  EnsembleModel(AgentModel agent, int n_agents)
      : agent_(std::move(agent)), n_(n_agents) {
    if (n_ < 1) throw std::invalid_argument("ensemble needs n_agents >= 1");
    if (agent_.noise_gain.rows() != agent_.dim_x ||
        agent_.noise_gain.cols() != agent_.dim_x)
      throw std::invalid_argument("noise gain must be dim_x by dim_x");
    Eigen::LLT<Mat> llt(agent_.noise_gain);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("noise gain must be positive definite");
    // Each agent's disturbance passes through its own copy of K_w. On the
    // agent-major stack x = (x_1; ...; x_N) that is the block diagonal
    // diag(K_w, ..., K_w); for a scalar gain it equals s * I regardless of
    // stacking order.
    k_ens_ = Mat::Zero(n_ * agent_.dim_x, n_ * agent_.dim_x);
    for (int b = 0; b < n_; ++b)
      k_ens_.block(b * agent_.dim_x, b * agent_.dim_x, agent_.dim_x,
                   agent_.dim_x) = agent_.noise_gain;
  }

  const AgentModel& agent() const { return agent_; }
  int n_agents() const { return n_; }
  int state_dim() const { return n_ * agent_.dim_x; }
  int input_dim() const { return n_ * agent_.dim_u; }
  const Mat& noise_gain() const { return k_ens_; }

  Vec drift(const Vec& x) const {
    check_state(x);
    Vec f(state_dim());
    for (int i = 0; i < n_; ++i)
      f.segment(i * agent_.dim_x, agent_.dim_x) =
          agent_.drift(x.segment(i * agent_.dim_x, agent_.dim_x));
    return f;
  }

  Mat input_map(const Vec& x) const {
    check_state(x);
    Mat g = Mat::Zero(state_dim(), input_dim());
    for (int i = 0; i < n_; ++i)
      g.block(i * agent_.dim_x, i * agent_.dim_u, agent_.dim_x,
              agent_.dim_u) =
          agent_.input_map(x.segment(i * agent_.dim_x, agent_.dim_x));
    return g;
  }

  // Euler step with the disturbance held constant over the interval:
  //   x+ = x + dt (f(x) + g(x) u) + dt K w
  Vec step(const Vec& x, const Vec& u, const Vec& w, double dt) const {
    check_state(x);
    if (u.size() != input_dim())
      throw std::invalid_argument("step: control has wrong size");
    if (w.size() != state_dim())
      throw std::invalid_argument("step: disturbance has wrong size");
    if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
    return x + dt * (drift(x) + input_map(x) * u) + dt * (k_ens_ * w);
  }

 private:
  void check_state(const Vec& x) const {
    if (x.size() != state_dim())
      throw std::invalid_argument("ensemble state has wrong size");
  }

  AgentModel agent_;
  int n_;
  Mat k_ens_;
};

// Zero-mean Gaussian disturbance with diagonal covariance per agent axis.
// Draws are generated with a Marsaglia polar transform over mt19937_64 so a
// seed fully determines the stream.
class NoiseModel {
 public:
  NoiseModel(Vec variances, double sigma_max, std::uint64_t seed)
      : var_(std::move(variances)), sigma_max_(sigma_max), eng_(seed) {
    for (int i = 0; i < var_.size(); ++i) {
      if (var_(i) < 0.0)
        throw std::invalid_argument("noise variance must be >= 0");
      if (var_(i) > sigma_max_)
        throw std::invalid_argument("noise variance exceeds declared bound");
    }
  }

  const Vec& variances() const { return var_; }
  double sigma_max() const { return sigma_max_; }

  // stacked draw for n agents, each block iid N(0, diag(variances))
  Vec sample(int n_agents) {
    Vec w(n_agents * var_.size());
    for (int i = 0; i < n_agents; ++i)
      for (int a = 0; a < var_.size(); ++a)
        w(i * var_.size() + a) = std::sqrt(var_(a)) * gauss();
    return w;
  }

 private:
  double uniform() {
    // 53-bit mantissa in [0, 1)
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double gauss() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  Vec var_;
  double sigma_max_;
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ncbf
