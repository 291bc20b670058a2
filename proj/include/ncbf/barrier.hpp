#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace ncbf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// class-K map a(h) = gamma^exponent * h, strictly increasing, a(0) = 0
struct KappaFunction {
  double gamma = 1.0;
  int exponent = 3;

  double operator()(double h) const {
    if (!(gamma > 0.0))
      throw std::invalid_argument("KappaFunction: gamma must be positive");
    return std::pow(gamma, exponent) * h;
  }
};

enum class AtomicKind { PairDistance, ObstacleDistance, Custom };

// Scalar constraint h(x) >= 0 on the stacked ensemble state, with analytic
// first and second derivatives. Built-in kinds are squared-distance barriers;
// Custom accepts user callables.
class AtomicBarrier {
 public:
  using ValueFn = std::function<double(const Vec&)>;
  using GradFn = std::function<Vec(const Vec&)>;
  using HessFn = std::function<Mat(const Vec&)>;

  static AtomicBarrier pair_distance(int i, int j, double min_separation,
                                     int dim = 2) {
    if (i == j)
      throw std::invalid_argument("pair_distance: agent indices must differ");
    if (i < 0 || j < 0)
      throw std::invalid_argument("pair_distance: negative agent index");
    if (!(min_separation > 0.0))
      throw std::invalid_argument("pair_distance: separation must be > 0");
    AtomicBarrier b;
    b.kind_ = AtomicKind::PairDistance;
    b.i_ = i;
    b.j_ = j;
    b.dim_ = dim;
    b.sq_clearance_ = min_separation * min_separation;
    return b;
  }

  static AtomicBarrier obstacle_distance(int i, Vec center, double clearance) {
    if (i < 0)
      throw std::invalid_argument("obstacle_distance: negative agent index");
    if (!(clearance > 0.0))
      throw std::invalid_argument("obstacle_distance: clearance must be > 0");
    AtomicBarrier b;
    b.kind_ = AtomicKind::ObstacleDistance;
    b.i_ = i;
    b.dim_ = static_cast<int>(center.size());
    b.center_ = std::move(center);
    b.sq_clearance_ = clearance * clearance;
    return b;
  }

  static AtomicBarrier custom(ValueFn value, GradFn grad, HessFn hess) {
    if (!value || !grad || !hess)
      throw std::invalid_argument("custom barrier needs value, grad and hess");
    AtomicBarrier b;
    b.kind_ = AtomicKind::Custom;
    b.value_fn_ = std::move(value);
    b.grad_fn_ = std::move(grad);
    b.hess_fn_ = std::move(hess);
    return b;
  }

  AtomicKind kind() const { return kind_; }
  int agent_i() const { return i_; }
  int agent_j() const { return j_; }
  double sq_clearance() const { return sq_clearance_; }

  double value(const Vec& x) const {
    switch (kind_) {
      case AtomicKind::PairDistance: {
        auto [xi, xj] = blocks(x);
        return (xi - xj).squaredNorm() - sq_clearance_;
      }
      case AtomicKind::ObstacleDistance: {
        Vec xi = block(x, i_);
        return (xi - center_).squaredNorm() - sq_clearance_;
      }
      case AtomicKind::Custom:
        return value_fn_(x);
    }
    throw std::logic_error("unreachable");
  }

  Vec gradient(const Vec& x) const {
    switch (kind_) {
      case AtomicKind::PairDistance: {
        auto [xi, xj] = blocks(x);
        Vec g = Vec::Zero(x.size());
        Vec diff = 2.0 * (xi - xj);
        g.segment(i_ * dim_, dim_) = diff;
        g.segment(j_ * dim_, dim_) = -diff;
        return g;
      }
      case AtomicKind::ObstacleDistance: {
        Vec g = Vec::Zero(x.size());
        g.segment(i_ * dim_, dim_) = 2.0 * (block(x, i_) - center_);
        return g;
      }
      case AtomicKind::Custom:
        return grad_fn_(x);
    }
    throw std::logic_error("unreachable");
  }

  Mat hessian(const Vec& x) const {
    switch (kind_) {
      case AtomicKind::PairDistance: {
        check_block(x, std::max(i_, j_));
        Mat h = Mat::Zero(x.size(), x.size());
        Mat id = 2.0 * Mat::Identity(dim_, dim_);
        h.block(i_ * dim_, i_ * dim_, dim_, dim_) = id;
        h.block(j_ * dim_, j_ * dim_, dim_, dim_) = id;
        h.block(i_ * dim_, j_ * dim_, dim_, dim_) = -id;
        h.block(j_ * dim_, i_ * dim_, dim_, dim_) = -id;
        return h;
      }
      case AtomicKind::ObstacleDistance: {
        check_block(x, i_);
        Mat h = Mat::Zero(x.size(), x.size());
        h.block(i_ * dim_, i_ * dim_, dim_, dim_) =
            2.0 * Mat::Identity(dim_, dim_);
        return h;
      }
      case AtomicKind::Custom:
        return hess_fn_(x);
    }
    throw std::logic_error("unreachable");
  }

 private:
  AtomicBarrier() = default;

  Vec block(const Vec& x, int idx) const {
    check_block(x, idx);
    return x.segment(idx * dim_, dim_);
  }

  std::pair<Vec, Vec> blocks(const Vec& x) const {
    return {block(x, i_), block(x, j_)};
  }

  void check_block(const Vec& x, int idx) const {
    if ((idx + 1) * dim_ > x.size())
      throw std::invalid_argument(
          "atomic barrier: state too short for agent index");
  }

  AtomicKind kind_ = AtomicKind::Custom;
  int i_ = 0, j_ = 0, dim_ = 2;
  double sq_clearance_ = 0.0;
  Vec center_;
  ValueFn value_fn_;
  GradFn grad_fn_;
  HessFn hess_fn_;
};

enum class ExprKind { Leaf, And, Or, Not };

// Immutable Boolean composition tree over atomic barriers. Conjunction is
// pointwise min, disjunction pointwise max, negation sign flip.
class BarrierExpr {
 public:
  static BarrierExpr leaf(AtomicBarrier atom) {
    auto n = std::make_shared<Node>();
    n->kind = ExprKind::Leaf;
    n->atom = std::move(atom);
    return BarrierExpr(std::move(n));
  }

  static BarrierExpr all_of(std::vector<BarrierExpr> children) {
    return combine(ExprKind::And, std::move(children));
  }

  static BarrierExpr any_of(std::vector<BarrierExpr> children) {
    return combine(ExprKind::Or, std::move(children));
  }

  static BarrierExpr negate(BarrierExpr child) {
    auto n = std::make_shared<Node>();
    n->kind = ExprKind::Not;
    n->children.push_back(std::move(child));
    return BarrierExpr(std::move(n));
  }

  ExprKind kind() const { return node_->kind; }

  const AtomicBarrier& atom() const {
    if (node_->kind != ExprKind::Leaf)
      throw std::logic_error("atom() on a non-leaf node");
    return *node_->atom;
  }

  const std::vector<BarrierExpr>& children() const { return node_->children; }

  int leaf_count() const {
    if (node_->kind == ExprKind::Leaf) return 1;
    int n = 0;
    for (const auto& c : node_->children) n += c.leaf_count();
    return n;
  }

  int depth() const {
    if (node_->kind == ExprKind::Leaf) return 0;
    int d = 0;
    for (const auto& c : node_->children) d = std::max(d, c.depth());
    return d + 1;
  }

 private:
  struct Node {
    ExprKind kind = ExprKind::Leaf;
    std::optional<AtomicBarrier> atom;
    std::vector<BarrierExpr> children;
  };

  static BarrierExpr combine(ExprKind kind, std::vector<BarrierExpr> children) {
    if (children.size() < 2)
      throw std::invalid_argument(
          "barrier composition needs at least two children");
    auto n = std::make_shared<Node>();
    n->kind = kind;
    n->children = std::move(children);
    return BarrierExpr(std::move(n));
  }

  explicit BarrierExpr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

  std::shared_ptr<const Node> node_;
};

// non-smooth composed barrier value: min over And, max over Or
inline double eval_exact(const BarrierExpr& e, const Vec& x) {
  switch (e.kind()) {
    case ExprKind::Leaf:
      return e.atom().value(x);
    case ExprKind::Not:
      return -eval_exact(e.children().front(), x);
    case ExprKind::And: {
      double v = std::numeric_limits<double>::infinity();
      for (const auto& c : e.children()) v = std::min(v, eval_exact(c, x));
      return v;
    }
    case ExprKind::Or: {
      double v = -std::numeric_limits<double>::infinity();
      for (const auto& c : e.children()) v = std::max(v, eval_exact(c, x));
      return v;
    }
  }
  throw std::logic_error("unreachable");
}

// boundary counts as safe
inline bool in_safe_set(const BarrierExpr& e, const Vec& x) {
  return eval_exact(e, x) >= 0.0;
}

inline Vec eval_atomic_grad(const AtomicBarrier& b, const Vec& x) {
  return b.gradient(x);
}

inline Mat eval_atomic_hessian(const AtomicBarrier& b, const Vec& x) {
  return b.hessian(x);
}

}  // namespace ncbf
