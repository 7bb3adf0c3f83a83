#include "deepmap/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace deepmap {

Points2 transform_points(const Points2& points, const Pose2& pose) {
  const Eigen::Matrix2d r = pose.rotation();
  Points2 out = points * r.transpose();
  out.col(0).array() += pose.tx;
  out.col(1).array() += pose.ty;
  return out;
}

PointCloud transform(const PointCloud& cloud, const Pose2& pose) {
  return {transform_points(cloud.points, pose), Frame::Global};
}

namespace {

inline double dist2(const Vec2& q, const Points2& pts, Index i) {
  const double dx = q.x() - pts(i, 0);
  const double dy = q.y() - pts(i, 1);
  return dx * dx + dy * dy;
}

}  // namespace

Neighbor nearest_neighbor(const Vec2& query, const Points2& target) {
  if (target.rows() == 0) throw GeometryError("nearest_neighbor: empty target");
  Index best = 0;
  double best_d2 = dist2(query, target, 0);
  for (Index i = 1; i < target.rows(); ++i) {
    const double d2 = dist2(query, target, i);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return {best, std::sqrt(best_d2)};
}

KdTree2::KdTree2(const Points2& points) : points_(points) {
  if (points_.rows() == 0) throw GeometryError("KdTree2: empty point set");
  std::vector<Index> idx(static_cast<std::size_t>(points_.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  nodes_.reserve(idx.size());
  root_ = build(idx, 0);
}

int KdTree2::build(std::span<Index> idx, int depth) {
  if (idx.empty()) return -1;
  const int axis = depth % 2;
  const auto mid = idx.begin() + static_cast<std::ptrdiff_t>(idx.size() / 2);
  std::nth_element(idx.begin(), mid, idx.end(), [&](Index a, Index b) {
    return points_(a, axis) < points_(b, axis) || (points_(a, axis) == points_(b, axis) && a < b);
  });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({*mid, axis});
  const std::size_t m = idx.size() / 2;
  const int left = build(idx.subspan(0, m), depth + 1);
  const int right = build(idx.subspan(m + 1), depth + 1);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

void KdTree2::search(int node, const Vec2& q, Index& best, double& best_d2) const {
  if (node < 0) return;
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  const double d2 = dist2(q, points_, n.point);
  if (d2 < best_d2 || (d2 == best_d2 && n.point < best)) {
    best_d2 = d2;
    best = n.point;
  }
  const double diff = q(n.axis) - points_(n.point, n.axis);
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best, best_d2);
  // Points on the far side are at least |diff| away along the split axis;
  // equality is still searched so the lowest-index tie can be found.
  if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

Neighbor KdTree2::nearest(const Vec2& query) const {
  Index best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  search(root_, query, best, best_d2);
  return {best, std::sqrt(best_d2)};
}

std::vector<Index> nearest_indices(const Points2& queries, const Points2& target) {
  std::vector<Index> out(static_cast<std::size_t>(queries.rows()));
  // Small targets are cheaper to scan than to index.
  if (target.rows() <= 64) {
    for (Index i = 0; i < queries.rows(); ++i) out[static_cast<std::size_t>(i)] = nearest_neighbor(queries.row(i).transpose(), target).index;
    return out;
  }
  const KdTree2 tree(target);
  for (Index i = 0; i < queries.rows(); ++i) out[static_cast<std::size_t>(i)] = tree.nearest(queries.row(i).transpose()).index;
  return out;
}

double chamfer(const Points2& x, const Points2& y) {
  if (x.rows() == 0 || y.rows() == 0) throw GeometryError("chamfer: empty point cloud");
  auto one_way = [](const Points2& from, const Points2& to) {
    const std::vector<Index> nn = nearest_indices(from, to);
    double s = 0.0;
    for (Index i = 0; i < from.rows(); ++i) s += std::sqrt(dist2(from.row(i).transpose(), to, nn[static_cast<std::size_t>(i)]));
    return s / static_cast<double>(from.rows());
  };
  const double a = one_way(x, y);
  const double b = one_way(y, x);
  return a + b;
}

double chamfer(const PointCloud& x, const PointCloud& y) { return chamfer(x.points, y.points); }

Points2 positions(const Trajectory& traj) {
  Points2 p(static_cast<Index>(traj.size()), 2);
  for (std::size_t i = 0; i < traj.size(); ++i) p.row(static_cast<Index>(i)) << traj[i].tx, traj[i].ty;
  return p;
}

std::pair<Pose2, Trajectory> align_trajectories(const Trajectory& est, const Trajectory& gt) {
  if (est.size() != gt.size()) {
    throw GeometryError("align_trajectories: length mismatch " + std::to_string(est.size()) + " vs " +
                        std::to_string(gt.size()));
  }
  if (est.size() < 2) throw GeometryError("align_trajectories: need at least 2 poses");
  const Pose2 t = fit_rigid<double>(positions(est), positions(gt));
  Trajectory aligned;
  aligned.reserve(est.size());
  for (const Pose2& p : est) aligned.push_back(t * p);
  return {t, std::move(aligned)};
}

double ate(const Trajectory& est, const Trajectory& gt) {
  const auto [t, aligned] = align_trajectories(est, gt);
  double s = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double dx = aligned[i].tx - gt[i].tx;
    const double dy = aligned[i].ty - gt[i].ty;
    s += dx * dx + dy * dy;
  }
  return std::sqrt(s / static_cast<double>(gt.size()));
}

namespace {

void check_correspondence(std::span<const PointCloud> est, std::span<const PointCloud> gt) {
  if (est.size() != gt.size()) {
    throw GeometryError("point_distance: cloud count mismatch " + std::to_string(est.size()) + " vs " +
                        std::to_string(gt.size()));
  }
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (est[i].size() != gt[i].size()) {
      throw GeometryError("point_distance: cloud " + std::to_string(i) + " has " + std::to_string(est[i].size()) +
                          " vs " + std::to_string(gt[i].size()) + " points");
    }
  }
}

}  // namespace

double point_distance(std::span<const PointCloud> est, std::span<const PointCloud> gt, const Pose2& alignment) {
  check_correspondence(est, gt);
  double s = 0.0;
  Index n = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Points2 moved = transform_points(est[i].points, alignment);
    s += (moved - gt[i].points).rowwise().norm().sum();
    n += moved.rows();
  }
  if (n == 0) throw GeometryError("point_distance: no points");
  return s / static_cast<double>(n);
}

double point_distance(std::span<const PointCloud> est, std::span<const PointCloud> gt) {
  check_correspondence(est, gt);
  Index n = 0;
  for (const auto& c : est) n += c.size();
  Points2 a(n, 2), b(n, 2);
  Index at = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    a.middleRows(at, est[i].size()) = est[i].points;
    b.middleRows(at, gt[i].size()) = gt[i].points;
    at += est[i].size();
  }
  return point_distance(est, gt, fit_rigid<double>(a, b));
}

}  // namespace deepmap
