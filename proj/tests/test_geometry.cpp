#include "support.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

using namespace deepmap;
using testing::brute_chamfer;
using testing::brute_nearest;
using testing::random_points;

namespace {

constexpr double kPi = std::numbers::pi;

Trajectory random_trajectory(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-50, 50), a(-kPi, kPi);
  Trajectory t;
  for (int i = 0; i < n; ++i) t.push_back({u(rng), u(rng), a(rng)});
  return t;
}

// Umeyama (SVD) rigid fit, independent of the closed-form angle solution.
double umeyama_rmse(const Trajectory& est, const Trajectory& gt) {
  Eigen::Matrix2Xd src(2, est.size()), dst(2, gt.size());
  for (std::size_t i = 0; i < est.size(); ++i) {
    src.col(static_cast<Index>(i)) << est[i].tx, est[i].ty;
    dst.col(static_cast<Index>(i)) << gt[i].tx, gt[i].ty;
  }
  const Eigen::Matrix3d t = Eigen::umeyama(src, dst, false);
  const Eigen::Matrix2Xd moved = (t.topLeftCorner<2, 2>() * src).colwise() + t.topRightCorner<2, 1>();
  return std::sqrt((moved - dst).colwise().squaredNorm().mean());
}

}  // namespace

TEST_CASE("pose examples") {
  Points2 p(1, 2);
  p << 1, 0;
  CHECK(transform_points(p, Pose2{}) == p);
  const Points2 q = transform_points(p, Pose2{0, 0, kPi / 2});
  CHECK(std::abs(q(0, 0)) < 1e-12);
  CHECK(std::abs(q(0, 1) - 1) < 1e-12);
  p << 1, 2;
  const Points2 r = transform_points(p, Pose2{3, 4, 0});
  CHECK(r(0, 0) == 4);
  CHECK(r(0, 1) == 6);
}

TEST_CASE("pose algebra on random triples") {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 100; ++k) {
    const auto t = random_trajectory(rng, 3);
    const Vec2 x(3.5, -1.25);
    CHECK(((t[0] * t[1]) * x - t[0] * (t[1] * x)).norm() < 1e-9);
    CHECK((((t[0] * t[1]) * t[2]) * x - (t[0] * (t[1] * t[2])) * x).norm() < 1e-9);
    CHECK(((t[0].inverse() * t[0]) * x - x).norm() < 1e-9);
  }
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
}

TEST_CASE("chamfer examples") {
  std::mt19937_64 rng(2);
  const Points2 x = random_points(rng, 20);
  CHECK(chamfer(x, x) == 0.0);
  Points2 a(1, 2), b(1, 2);
  a << 0, 0;
  b << 3, 4;
  CHECK(chamfer(a, b) == 10.0);
  CHECK_THROWS_AS(chamfer(Points2(0, 2), b), GeometryError);
}

TEST_CASE("chamfer and nearest neighbour match brute force on 100 instances") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const Points2 x = random_points(rng, 20 + static_cast<int>(seed % 7));
    const Points2 y = random_points(rng, 20);
    CHECK(chamfer(x, y) == brute_chamfer(x, y));
    CHECK(chamfer(x, y) == chamfer(y, x));
    const Points2 q = random_points(rng, 10, -15, 15);
    const auto idx = nearest_indices(q, y);
    for (Index i = 0; i < q.rows(); ++i) {
      const auto [bi, bd] = brute_nearest(q.row(i).transpose(), y);
      const Neighbor n = nearest_neighbor(q.row(i).transpose(), y);
      CHECK(n.index == bi);
      CHECK(n.distance == bd);
      CHECK(idx[static_cast<std::size_t>(i)] == bi);
    }
  }
}

TEST_CASE("nearest neighbour examples and kd-tree at scale") {
  Points2 t(2, 2);
  t << 1, 0, 0, 2;
  const Neighbor n = nearest_neighbor(Vec2(0, 0), t);
  CHECK(n.index == 0);
  CHECK(n.distance == 1.0);
  CHECK(nearest_neighbor(Vec2(0, 2), t).distance == 0.0);

  std::mt19937_64 rng(9);
  const Points2 target = random_points(rng, 500);
  const Points2 queries = random_points(rng, 1000, -12, 12);
  const KdTree2 tree(target);
  int mismatches = 0;
  for (Index i = 0; i < queries.rows(); ++i) {
    const auto [bi, bd] = brute_nearest(queries.row(i).transpose(), target);
    const Neighbor k = tree.nearest(queries.row(i).transpose());
    if (k.index != bi || k.distance != bd) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("alignment recovers rigid perturbations exactly") {
  std::mt19937_64 rng(4);
  const Trajectory gt = random_trajectory(rng, 16);
  {
    const auto [t, aligned] = align_trajectories(gt, gt);
    CHECK(std::abs(t.tx) < 1e-12);
    CHECK(std::abs(t.alpha) < 1e-12);
    CHECK(ate(gt, gt) < 1e-12);
  }
  const Pose2 motion{5, -2, 30 * kPi / 180};
  Trajectory est;
  for (const auto& p : gt) est.push_back(motion * p);
  const auto [t, aligned] = align_trajectories(est, gt);
  const Pose2 expect = motion.inverse();
  CHECK(std::abs(t.tx - expect.tx) < 1e-9);
  CHECK(std::abs(t.ty - expect.ty) < 1e-9);
  CHECK(std::abs(wrap_angle(t.alpha - expect.alpha)) < 1e-9);
  CHECK(ate(est, gt) < 1e-9);
  CHECK_THROWS_AS(align_trajectories(Trajectory(1), Trajectory(1)), GeometryError);
  CHECK_THROWS_AS(align_trajectories(Trajectory(2), Trajectory(3)), GeometryError);
}

TEST_CASE("alignment under Gaussian noise keeps the residual near sigma") {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const Trajectory gt = random_trajectory(rng, 64);
    std::normal_distribution<double> n(0, 0.1);
    Trajectory est = gt;
    for (auto& p : est) {
      p.tx += n(rng);
      p.ty += n(rng);
    }
    worst = std::max(worst, ate(est, gt));
  }
  // RMS of a 2-d Gaussian with sigma 0.1 per axis is 0.141.
  CHECK(worst <= 0.2);
}

TEST_CASE("ate matches an independent SVD fit and is rigid-invariant") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed + 1000);
    const Trajectory gt = random_trajectory(rng, 32);
    std::normal_distribution<double> n(0, 2.0);
    Trajectory est = gt;
    for (auto& p : est) {
      p.tx += n(rng);
      p.ty += n(rng);
    }
    const double e = ate(est, gt);
    CHECK(std::abs(e - umeyama_rmse(est, gt)) < 1e-9);
    std::uniform_real_distribution<double> u(-100, 100), a(-kPi, kPi);
    const Pose2 g{u(rng), u(rng), a(rng)};
    Trajectory moved;
    for (const auto& p : est) moved.push_back(g * p);
    CHECK(std::abs(ate(moved, gt) - e) < 1e-9);
  }
}

TEST_CASE("one displaced pose bounds the ate by d over root K") {
  std::mt19937_64 rng(8);
  const Trajectory gt = random_trajectory(rng, 25);
  Trajectory est = gt;
  est[7].tx += 3.0;
  const double e = ate(est, gt);
  CHECK(e <= 3.0 / 5.0 + 1e-12);
  CHECK(std::abs(e - umeyama_rmse(est, gt)) < 1e-9);
}

TEST_CASE("point distance") {
  std::mt19937_64 rng(6);
  std::vector<PointCloud> gt;
  for (int i = 0; i < 4; ++i) gt.push_back({random_points(rng, 30), Frame::Global});
  CHECK(point_distance(gt, gt) < 1e-12);
  const Pose2 g{4, -7, 0.7};
  std::vector<PointCloud> rotated;
  for (const auto& c : gt) rotated.push_back(transform(c, g));
  CHECK(point_distance(rotated, gt) < 1e-9);

  std::vector<PointCloud> big{{random_points(rng, 10000, -1000, 1000), Frame::Global}};
  std::vector<PointCloud> noisy = big;
  std::normal_distribution<double> n(0, 0.5);
  for (Index i = 0; i < noisy[0].points.rows(); ++i) noisy[0].points.row(i) += Eigen::RowVector2d(n(rng), n(rng));
  const double expected = 0.5 * std::sqrt(kPi / 2);
  CHECK(std::abs(point_distance(noisy, big) - expected) < 0.05 * expected);

  std::vector<PointCloud> short_one{gt[0]};
  CHECK_THROWS_AS(point_distance(short_one, gt), GeometryError);
}
