#pragma once

// SE(2) poses, planar point clouds, nearest-neighbour queries, Chamfer
// distance and closed-form rigid alignment for trajectory evaluation.
// Units are pixels and radians throughout.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace deepmap {

using Index = Eigen::Index;
using Vec2 = Eigen::Vector2d;
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Wraps an angle to (-pi, pi].
template <class Scalar>
Scalar wrap_angle(Scalar a) {
  using std::numbers::pi;
  a = std::remainder(a, Scalar(2 * pi));
  return a <= Scalar(-pi) ? a + Scalar(2 * pi) : a;
}

/// Rigid motion in the plane: p -> R(alpha) p + (tx, ty).
template <class Scalar>
struct Pose2T {
  using Vec = Eigen::Matrix<Scalar, 2, 1>;
  using Rot = Eigen::Matrix<Scalar, 2, 2>;

  Scalar tx{0};
  Scalar ty{0};
  Scalar alpha{0};

  static Pose2T identity() { return {}; }

  Rot rotation() const {
    const Scalar c = std::cos(alpha), s = std::sin(alpha);
    Rot r;
    r << c, -s, s, c;
    return r;
  }
  Vec translation() const { return Vec(tx, ty); }

  Vec operator*(const Vec& p) const { return rotation() * p + translation(); }

  /// Composition: (a * b)(p) = a(b(p)).
  Pose2T operator*(const Pose2T& b) const {
    const Vec t = rotation() * b.translation() + translation();
    return {t.x(), t.y(), alpha + b.alpha};
  }

  Pose2T inverse() const {
    const Vec t = -(rotation().transpose() * translation());
    return {t.x(), t.y(), -alpha};
  }
};

using Pose2 = Pose2T<double>;
using Trajectory = std::vector<Pose2>;

template <class Scalar>
Pose2T<Scalar> compose(const Pose2T<Scalar>& a, const Pose2T<Scalar>& b) {
  return a * b;
}

template <class Scalar>
Pose2T<Scalar> inverse(const Pose2T<Scalar>& p) {
  return p.inverse();
}

enum class Frame { Local, Global };

/// Ordered planar point set. Row i is beam i for organised scans.
struct PointCloud {
  Points2 points;
  Frame frame = Frame::Local;

  Index size() const { return points.rows(); }
  bool empty() const { return points.rows() == 0; }
};

/// Applies a pose to every row, preserving order.
Points2 transform_points(const Points2& points, const Pose2& pose);

/// Maps a local-frame cloud to the global frame.
PointCloud transform(const PointCloud& cloud, const Pose2& pose);

struct Neighbor {
  Index index = -1;
  double distance = 0.0;
};

/// Reference nearest neighbour by linear scan; ties go to the lowest index.
Neighbor nearest_neighbor(const Vec2& query, const Points2& target);
inline Neighbor nearest_neighbor(const Vec2& query, const PointCloud& target) {
  return nearest_neighbor(query, target.points);
}

/// Static 2-d tree returning exactly the same answer as nearest_neighbor(),
/// tie rule included.
class KdTree2 {
 public:
  explicit KdTree2(const Points2& points);
  Neighbor nearest(const Vec2& query) const;
  Index size() const { return points_.rows(); }

 private:
  struct Node {
    Index point;
    int axis;
    int left = -1;
    int right = -1;
  };
  int build(std::span<Index> idx, int depth);
  void search(int node, const Vec2& q, Index& best, double& best_d2) const;

  Points2 points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Index of the nearest target point for every query row.
std::vector<Index> nearest_indices(const Points2& queries, const Points2& target);

/// Symmetric mean nearest-neighbour distance (unsquared).
double chamfer(const PointCloud& x, const PointCloud& y);
double chamfer(const Points2& x, const Points2& y);

/// Closed-form least-squares rigid fit: the pose T minimising
/// sum |T(src_i) - dst_i|^2. Throws if src collapses to a single point.
template <class Scalar>
Pose2T<Scalar> fit_rigid(const Eigen::Matrix<Scalar, Eigen::Dynamic, 2, Eigen::RowMajor>& src,
                         const Eigen::Matrix<Scalar, Eigen::Dynamic, 2, Eigen::RowMajor>& dst) {
  using Vec = Eigen::Matrix<Scalar, 2, 1>;
  if (src.rows() != dst.rows()) throw GeometryError("fit_rigid: point counts differ");
  if (src.rows() < 1) throw GeometryError("fit_rigid: no points");
  const Vec cs = src.colwise().mean().transpose();
  const Vec cd = dst.colwise().mean().transpose();
  Scalar dot{0}, cross{0}, spread{0};
  for (Index i = 0; i < src.rows(); ++i) {
    const Vec a = src.row(i).transpose() - cs;
    const Vec b = dst.row(i).transpose() - cd;
    dot += a.dot(b);
    cross += a.x() * b.y() - a.y() * b.x();
    spread += a.squaredNorm();
  }
  if (!(spread > Scalar(0))) throw GeometryError("fit_rigid: degenerate point set (all points coincide)");
  Pose2T<Scalar> t;
  t.alpha = std::atan2(cross, dot);
  const Vec off = cd - t.rotation() * cs;
  t.tx = off.x();
  t.ty = off.y();
  return t;
}

Points2 positions(const Trajectory& traj);

/// Rigid transform mapping estimated positions onto ground truth, and the
/// estimated trajectory after applying it.
std::pair<Pose2, Trajectory> align_trajectories(const Trajectory& est, const Trajectory& gt);

/// Absolute trajectory error: RMSE of positions after alignment.
double ate(const Trajectory& est, const Trajectory& gt);

/// Mean per-point distance after applying `alignment` to the estimated clouds.
double point_distance(std::span<const PointCloud> est, std::span<const PointCloud> gt, const Pose2& alignment);

/// As above with the alignment fitted over all corresponding points.
double point_distance(std::span<const PointCloud> est, std::span<const PointCloud> gt);

}  // namespace deepmap
