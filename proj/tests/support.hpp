#pragma once

// Test-side oracles: central finite differences, brute-force geometry and a
// dense ray marcher. Kept independent of the library's implementations.

#include "deepmap/autodiff.hpp"
#include "deepmap/geometry.hpp"
#include "deepmap/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace testing {

using deepmap::ad::Graph;
using deepmap::ad::Matrix;
using deepmap::ad::Shape;
using deepmap::ad::Tensor;
using deepmap::ad::Var;

// Builds a scalar loss from leaves registered for `inputs` (same order).
using LossFn = std::function<Var(Graph&, const std::vector<Var>&)>;

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(shape, true);
  std::uniform_real_distribution<double> u(lo, hi);
  for (Eigen::Index i = 0; i < t.values().size(); ++i) t.values().data()[i] = u(rng);
  return t;
}

inline double eval_loss(const LossFn& f, const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.leaf(t));
  return f(g, vars).item();
}

struct GradCheck {
  double worst_rel = 0.0;  // largest relative error among entries above the absolute floor
  double worst_abs = 0.0;
  bool ok = true;
  std::size_t entries = 0;
};

// Compares backward() against central differences for every input entry.
// An entry passes if |a - n| <= rel * max(|a|, |n|) or |a - n| <= abs_tol.
inline GradCheck check_gradients(const LossFn& f, std::vector<Tensor> inputs, double h = 1e-5, double rel = 1e-4,
                                 double abs_tol = 1e-6) {
  for (auto& t : inputs) t.clear_grad();
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.leaf(t));
    g.backward(f(g, vars));
  }
  GradCheck out;
  for (auto& t : inputs) {
    const Matrix analytic = t.has_grad() ? Matrix(t.grad()) : Matrix::Zero(t.values().rows(), t.values().cols());
    for (Eigen::Index i = 0; i < t.values().size(); ++i) {
      double& x = t.values().data()[i];
      const double saved = x;
      x = saved + h;
      const double up = eval_loss(f, inputs);
      x = saved - h;
      const double down = eval_loss(f, inputs);
      x = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.data()[i];
      const double diff = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      ++out.entries;
      if (diff > abs_tol) out.worst_rel = std::max(out.worst_rel, diff / scale);
      out.worst_abs = std::max(out.worst_abs, diff);
      if (!(diff <= rel * scale || diff <= abs_tol)) out.ok = false;
    }
  }
  return out;
}

// ---- geometry oracles -------------------------------------------------------

inline std::pair<Eigen::Index, double> brute_nearest(const Eigen::Vector2d& q, const deepmap::Points2& target) {
  Eigen::Index best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < target.rows(); ++i) {
    const double dx = target(i, 0) - q.x();
    const double dy = target(i, 1) - q.y();
    const double d2 = dx * dx + dy * dy;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return {best, std::sqrt(best_d2)};
}

inline double brute_chamfer(const deepmap::Points2& x, const deepmap::Points2& y) {
  double a = 0, b = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) a += brute_nearest(x.row(i).transpose(), y).second;
  for (Eigen::Index i = 0; i < y.rows(); ++i) b += brute_nearest(y.row(i).transpose(), x).second;
  return a / static_cast<double>(x.rows()) + b / static_cast<double>(y.rows());
}

inline deepmap::Points2 random_points(std::mt19937_64& rng, int n, double lo = -10, double hi = 10) {
  std::uniform_real_distribution<double> u(lo, hi);
  deepmap::Points2 p(n, 2);
  for (int i = 0; i < n; ++i) p.row(i) << u(rng), u(rng);
  return p;
}

// ---- simulator oracles ------------------------------------------------------

// First point along the ray, marched in steps of `step`, that enters an
// obstacle cell or leaves the image.
inline Eigen::Vector2d march_ray(const deepmap::OccupancyWorld& w, const Eigen::Vector2d& o, const Eigen::Vector2d& d,
                                 double step = 0.01) {
  for (long i = 1;; ++i) {
    const Eigen::Vector2d p = o + d * (step * static_cast<double>(i));
    const int cx = static_cast<int>(std::floor(p.x()));
    const int cy = static_cast<int>(std::floor(p.y()));
    if (!w.in_bounds(cx, cy) || w.obstacle(cx, cy)) return p;
  }
}

// Distance from p to the closest obstacle-cell edge or image border.
inline double boundary_distance(const deepmap::OccupancyWorld& w, const Eigen::Vector2d& p) {
  double best = std::min({p.x(), p.y(), w.width() - p.x(), w.height() - p.y()});
  best = std::abs(best);
  const int r = 2;
  const int px = static_cast<int>(std::floor(p.x())), py = static_cast<int>(std::floor(p.y()));
  for (int cy = py - r; cy <= py + r; ++cy) {
    for (int cx = px - r; cx <= px + r; ++cx) {
      if (!w.in_bounds(cx, cy) || !w.obstacle(cx, cy)) continue;
      const double dx = std::max({cx - p.x(), 0.0, p.x() - (cx + 1)});
      const double dy = std::max({cy - p.y(), 0.0, p.y() - (cy + 1)});
      best = std::min(best, std::hypot(dx, dy));
    }
  }
  return best;
}

}  // namespace testing
