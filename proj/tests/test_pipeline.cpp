#include "support.hpp"

#include "deepmap/pipeline.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace deepmap;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

SimDataset small_dataset(std::uint64_t seed, int poses = 6, int beams = 64) {
  const OccupancyWorld w = generate_world(128, 128, 6, seed);
  SensorConfig sensor;
  sensor.n_beams = beams;
  TrajectoryConfig traj;
  traj.n_poses = poses;
  return simulate(w, sensor, traj, seed);
}

RunConfig small_config(int epochs) {
  RunConfig c;
  c.epochs = epochs;
  c.lnet.features = {8, 16, 32};
  c.lnet.head = {16};
  c.mnet.hidden = {16, 16};
  c.loss.samples_per_ray = 4;
  return c;
}

Points2 dense_scan(std::uint64_t seed) {
  const OccupancyWorld w = generate_world(128, 128, 6, seed);
  SensorConfig sensor;
  sensor.n_beams = 360;
  TrajectoryConfig one;
  one.n_poses = 1;
  const Trajectory t = sample_trajectory(w, one, seed);
  return scan(w, t[0], sensor).points;
}

// Sort-based order statistic with linear interpolation between neighbours.
double sorted_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

TEST_CASE("icp recovers a small synthetic motion") {
  // Point-to-point has a local minimum on one of these scans (seed 2 settles
  // 0.8 degrees off); point-to-plane recovers every pair.
  const Pose2 motion{2, 1, 3 * kDeg};
  for (const auto metric : {IcpMetric::Point, IcpMetric::Plane}) {
    int recovered = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Points2 target = dense_scan(seed);
      const Points2 source = transform_points(target, motion.inverse());
      IcpConfig cfg;
      cfg.metric = metric;
      const IcpReport r = icp_pair(source, target, cfg);
      CHECK(r.converged);
      recovered += std::abs(r.transform.tx - motion.tx) < 0.1 && std::abs(r.transform.ty - motion.ty) < 0.1 &&
                   std::abs(wrap_angle(r.transform.alpha - motion.alpha)) < 0.2 * kDeg;
    }
    CHECK(recovered >= (metric == IcpMetric::Plane ? 5 : 4));
  }
}

TEST_CASE("icp on identical scans returns the identity") {
  const Points2 s = dense_scan(3);
  for (const auto metric : {IcpMetric::Point, IcpMetric::Plane}) {
    IcpConfig cfg;
    cfg.metric = metric;
    const IcpReport r = icp_pair(s, s, cfg);
    CHECK(std::abs(r.transform.tx) < 1e-6);
    CHECK(std::abs(r.transform.ty) < 1e-6);
    CHECK(std::abs(r.transform.alpha) < 1e-6);
    CHECK(r.converged);
  }
}

TEST_CASE("one point-to-point iteration with perfect correspondences is exact") {
  Points2 target(4, 2);
  target << 0, 0, 40, 0, 40, 30, 0, 30;
  const Pose2 motion{0.5, -0.3, 0.01};
  const Points2 source = transform_points(target, motion.inverse());
  IcpConfig cfg;
  cfg.max_iter = 1;
  const IcpReport r = icp_pair(source, target, cfg);
  CHECK(std::abs(r.transform.tx - motion.tx) < 1e-12);
  CHECK(std::abs(r.transform.ty - motion.ty) < 1e-12);
  CHECK(std::abs(r.transform.alpha - motion.alpha) < 1e-12);
}

TEST_CASE("icp errors") {
  Points2 two(2, 2);
  two << 0, 0, 1, 0;
  CHECK_THROWS(icp_pair(two, two, IcpConfig{}));
  Points2 far = two;
  far.col(0).array() += 1000;
  Points2 three(3, 2);
  three << 0, 0, 1, 0, 0, 1;
  Points2 three_far = three;
  three_far.col(0).array() += 1000;
  CHECK_THROWS(icp_pair(three_far, three, IcpConfig{}));
}

TEST_CASE("normals of a line are perpendicular to it") {
  Points2 line(20, 2);
  for (int i = 0; i < 20; ++i) line.row(i) << i, 2 * i;
  const Points2 n = estimate_normals(line, 8);
  const Vec2 dir = Vec2(1, 2).normalized();
  for (Index i = 0; i < n.rows(); ++i) {
    CHECK(std::abs(n.row(i).norm() - 1) < 1e-12);
    CHECK(std::abs(n.row(i).dot(dir.transpose())) < 1e-9);
  }
}

TEST_CASE("incremental icp drifts with trajectory length") {
  double short_sum = 0, long_sum = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SimDataset d = small_dataset(seed, 64, 128);
    const auto scans = d.scans();
    const auto gt = d.ground_truth();
    const Trajectory est = incremental_icp(scans, IcpConfig{});
    CHECK(est.front().tx == 0);
    const Trajectory e8(est.begin(), est.begin() + 8), g8(gt.begin(), gt.begin() + 8);
    short_sum += ate(e8, g8);
    long_sum += ate(est, gt);
  }
  CHECK(long_sum > short_sum);
}

TEST_CASE("warm start composition") {
  std::mt19937_64 rng(1);
  const SimDataset d = small_dataset(1);
  const auto scans = d.scans();
  const WarmStartData same = warm_start_compose(scans, Trajectory(scans.size()));
  for (std::size_t i = 0; i < scans.size(); ++i) {
    CHECK(same.scans[i].points == scans[i].points);
    CHECK(same.origins[i].norm() == 0.0);
  }
  std::uniform_real_distribution<double> u(-30, 30), a(-kPi, kPi);
  for (int k = 0; k < 100; ++k) {
    Trajectory coarse, refine;
    for (std::size_t i = 0; i < scans.size(); ++i) {
      coarse.push_back({u(rng), u(rng), a(rng)});
      refine.push_back({u(rng), u(rng), a(rng)});
    }
    const WarmStartData w = warm_start_compose(scans, coarse);
    const Trajectory final_poses = compose_refinement(refine, coarse);
    for (std::size_t i = 0; i < scans.size(); ++i) {
      const Points2 a1 = transform_points(w.scans[i].points, refine[i]);
      const Points2 a2 = transform_points(scans[i].points, final_poses[i]);
      CHECK((a1 - a2).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
  CHECK_THROWS(warm_start_compose(scans, Trajectory(2)));
}

TEST_CASE("quantiles and suite statistics") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 50);
  for (int n : {1, 2, 5, 10, 31}) {
    std::vector<double> v;
    for (int i = 0; i < n; ++i) v.push_back(u(rng));
    for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) CHECK(quantile(v, q) == doctest::Approx(sorted_quantile(v, q)));
  }
  CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(default_ate_threshold(1024) == doctest::Approx(20.48));
  CHECK(default_ate_threshold(256) == doctest::Approx(5.12));

  std::vector<RegistrationResult> results;
  std::vector<double> ates;
  for (int i = 0; i < 9; ++i) {
    RegistrationResult r;
    r.method = i % 2 ? "b" : "a";
    r.metrics = Metrics{i % 2 ? 0.0 : u(rng), 1.0 * i};
    r.wall_time = 2.0;
    if (i % 2 == 0) ates.push_back(r.metrics->ate);
    results.push_back(r);
  }
  const SuiteReport rep = evaluate_suite(results, 25.0);
  REQUIRE(rep.methods.size() == 2);
  CHECK(rep.methods[0].method == "a");
  CHECK(rep.methods[0].runs == 5);
  CHECK(rep.methods[0].ate_median == doctest::Approx(sorted_quantile(ates, 0.5)));
  CHECK(rep.methods[0].ate_q1 == doctest::Approx(sorted_quantile(ates, 0.25)));
  CHECK(rep.methods[0].ate_q3 == doctest::Approx(sorted_quantile(ates, 0.75)));
  const double succ = static_cast<double>(std::count_if(ates.begin(), ates.end(), [](double a) { return a < 25; }));
  CHECK(rep.methods[0].success_rate == doctest::Approx(succ / 5));
  CHECK(rep.methods[1].success_rate == 1.0);
  CHECK(rep.methods[1].wall_time_mean == 2.0);
  CHECK_THROWS(evaluate_suite({}, 5.0));
}

TEST_CASE("method and warm start names round trip") {
  for (const auto m : {Method::DeepMapping, Method::Direct, Method::IcpPoint, Method::IcpPlane}) {
    CHECK(parse_method(method_name(m)) == m);
  }
  for (const auto w : {WarmStart::None, WarmStart::IcpPoint, WarmStart::IcpPlane}) {
    CHECK(parse_warm_start(warm_start_name(w)) == w);
  }
  CHECK_THROWS(parse_method("gicp"));
}

TEST_CASE("run configuration validation") {
  RunConfig c;
  c.epochs = 0;
  CHECK_THROWS(c.validate());
  c.epochs = 1;
  c.lr = 0;
  CHECK_THROWS(c.validate());
  c.lr = 1e-3;
  c.checkpoints = {2};
  CHECK_THROWS(c.validate());
}

TEST_CASE("direct optimisation starts from the untrained l-net poses") {
  const SimDataset d = small_dataset(4);
  RunConfig c = small_config(2);
  c.seed = 17;
  c.checkpoints = {0};
  const auto dm = run_deepmapping(d, c);
  const auto direct = run_direct_opt(d, c);
  const Trajectory init = initial_poses(d, c);
  REQUIRE(dm.checkpoints.size() == 1);
  REQUIRE(direct.checkpoints.size() == 1);
  for (std::size_t i = 0; i < init.size(); ++i) {
    CHECK(dm.checkpoints[0].poses[i].tx == init[i].tx);
    CHECK(dm.checkpoints[0].poses[i].alpha == init[i].alpha);
    CHECK(direct.checkpoints[0].poses[i].tx == init[i].tx);
    CHECK(direct.checkpoints[0].poses[i].ty == init[i].ty);
  }
}

TEST_CASE("runs are deterministic and report consistent traces") {
  const SimDataset d = small_dataset(5);
  RunConfig c = small_config(5);
  c.seed = 3;
  const auto a = run_deepmapping(d, c);
  const auto b = run_deepmapping(d, c);
  REQUIRE(a.estimated_poses.size() == d.frames.size());
  for (std::size_t i = 0; i < a.estimated_poses.size(); ++i) {
    CHECK(a.estimated_poses[i].tx == b.estimated_poses[i].tx);
    CHECK(a.estimated_poses[i].ty == b.estimated_poses[i].ty);
    CHECK(a.estimated_poses[i].alpha == b.estimated_poses[i].alpha);
  }
  CHECK(a.loss_trace == b.loss_trace);
  CHECK(a.loss_trace.size() == 5);
  CHECK(a.ate_trace.size() == 5);
  CHECK(a.metrics.has_value());
  for (double l : a.loss_trace) CHECK(std::isfinite(l));
  c.seed = 4;
  CHECK(run_deepmapping(d, c).loss_trace != a.loss_trace);
}

TEST_CASE("chunked epochs follow the batch size") {
  const SimDataset d = small_dataset(6, 7);
  RunConfig c = small_config(3);
  c.batch_size = 3;
  const auto r = run_deepmapping(d, c);
  CHECK(r.loss_trace.size() == 3);
  CHECK(r.estimated_poses.size() == 7);
}

TEST_CASE("loss trace with lambda 0 equals the occupancy loss of the parameter snapshots") {
  const SimDataset d = small_dataset(7);
  RunConfig c = small_config(6);
  c.loss.lambda = 0;
  c.seed = 9;
  const auto scans = d.scans();
  std::map<int, double> recomputed;
  const auto r = run_deepmapping(d, c, [&](int epoch, const TrainedModel& m) {
    if (epoch != 0 && epoch != 2 && epoch != 4) return;
    const ScanBatch batch = make_batch(scans, m.scale);
    ad::Graph g;
    const auto samples = sample_free_space(batch, c.loss.samples_per_ray, sample_seed(c.seed, epoch + 1, 0));
    recomputed[epoch + 1] = registration_loss(g, m.lnet, m.mnet, batch, samples, c.loss).occupancy.item();
  });
  REQUIRE(recomputed.size() == 3);
  for (const auto& [epoch, loss] : recomputed) {
    CAPTURE(epoch);
    CHECK(std::abs(r.loss_trace[static_cast<std::size_t>(epoch)] - loss) < 1e-12);
  }
}

TEST_CASE("reported poses are evaluated independently of the global frame") {
  const SimDataset d = small_dataset(8);
  const auto r = run_icp(d, IcpConfig{});
  const Pose2 g{17, -4, 1.1};
  Trajectory moved;
  for (const auto& p : r.estimated_poses) moved.push_back(g * p);
  const auto [m1, a1] = evaluate_poses(d, r.estimated_poses);
  const auto [m2, a2] = evaluate_poses(d, moved);
  CHECK(std::abs(m1.ate - m2.ate) < 1e-9);
  CHECK(std::abs(m1.point_distance - m2.point_distance) < 1e-9);
}

TEST_CASE("a numerical blow-up aborts with the epoch") {
  const SimDataset d = small_dataset(9);
  RunConfig c = small_config(50);
  c.lr = 1e200;
  CHECK_THROWS_AS(run_deepmapping(d, c), NumericalError);
}

TEST_CASE("two identical scans register to the identity") {
  const OccupancyWorld w = generate_world(128, 128, 6, 10);
  SensorConfig sensor;
  TrajectoryConfig one;
  one.n_poses = 1;
  const Trajectory t = sample_trajectory(w, one, 10);
  SimDataset d;
  d.world = w;
  d.sensor = sensor;
  const PointCloud s = scan(w, Pose2{t[0].tx, t[0].ty, 0}, sensor);
  d.frames = {{Pose2{}, s}, {Pose2{}, s}};
  RunConfig c = small_config(200);
  c.mnet.hidden = {16, 16, 16};
  c.loss.samples_per_ray = 19;
  for (const auto method : {Method::DeepMapping, Method::Direct}) {
    c.method = method;
    const auto r = run_method(d, c);
    CHECK_FALSE(r.metrics.has_value());
    const Pose2 rel = r.estimated_poses[0].inverse() * r.estimated_poses[1];
    const double lim_px = method == Method::DeepMapping ? 1.0 : 2.0;
    const double lim_deg = method == Method::DeepMapping ? 2.0 : 4.0;
    CAPTURE(method_name(method));
    CHECK(std::hypot(rel.tx, rel.ty) < lim_px);
    CHECK(std::abs(wrap_angle(rel.alpha)) < lim_deg * kDeg);
  }
}

TEST_CASE("re-localisation field") {
  const SimDataset d = small_dataset(11);
  RunConfig c = small_config(3);
  const auto r = run_deepmapping(d, c);
  REQUIRE(r.model);
  const auto f = relocalization_study(*r.model, *d.world, d.sensor, 8, mean_heading(d.ground_truth()), *r.alignment);
  CHECK(f.width == 16);
  for (int cy = 0; cy < f.height; ++cy) {
    for (int cx = 0; cx < f.width; ++cx) {
      const bool free = d.world->free_at(Vec2((cx + 0.5) * 8, (cy + 0.5) * 8));
      CHECK(std::isfinite(f.at(cx, cy)) == free);
    }
  }
  // A query at a training pose reproduces that pose's training residual.
  const Pose2 p0 = d.frames[0].pose;
  const ScanBatch one = make_batch(std::span(&d.frames[0].points, 1), r.model->scale);
  const Vec2 est = *r.alignment * predict_poses(r.model->lnet, one)[0].translation();
  const Vec2 rep = *r.alignment * r.estimated_poses[0].translation();
  CHECK((est - rep).norm() < 1e-9);
  CHECK((est - p0.translation()).norm() == doctest::Approx((rep - p0.translation()).norm()));

  c.warm_start = WarmStart::IcpPoint;
  const auto warm = run_deepmapping(d, c);
  CHECK_THROWS(relocalization_study(*warm.model, *d.world, d.sensor, 8, 0.0, *warm.alignment));
  CHECK(mean_heading({{0, 0, kPi - 0.1}, {0, 0, -kPi + 0.1}}) == doctest::Approx(kPi).epsilon(1e-12));
}

TEST_CASE("1-d demo") {
  CHECK(demo_objective(0) == 0);
  CHECK(demo_objective(1) == doctest::Approx(0.5 + 5 * std::sin(10.0) + 20 * std::sin(1.0)));
  CHECK(demo_objective(1) == doctest::Approx(14.61).epsilon(1e-3));
  for (double x : {-2.0, -0.3, 0.7, 3.1}) {
    const double h = 1e-6;
    CHECK(demo_objective_grad(x) ==
          doctest::Approx((demo_objective(x + h) - demo_objective(x - h)) / (2 * h)).epsilon(1e-6));
  }
  const auto r = demo_1d(1000, 2e-4, 3);
  CHECK(r.x_direct.size() == 1000);
  CHECK(r.x_net.size() == 1000);
  CHECK(r.z.size() == 1000);
  CHECK(r.final_direct == demo_objective(r.x_direct.back()));
  CHECK(r.final_net == demo_objective(r.x_net.back()));
  const auto again = demo_1d(1000, 2e-4, 3);
  CHECK(again.x_net == r.x_net);
}

TEST_CASE("a warm-started run begins at the coarse registration") {
  const SimDataset d = small_dataset(12);
  RunConfig c = small_config(2);
  c.warm_start = WarmStart::IcpPoint;
  const auto scans = d.scans();
  const Trajectory coarse = incremental_icp(scans, IcpConfig{});
  const Trajectory init = initial_poses(d, c);
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    CHECK(std::abs(init[i].tx - coarse[i].tx) < 1e-9);
    CHECK(std::abs(init[i].ty - coarse[i].ty) < 1e-9);
    CHECK(std::abs(wrap_angle(init[i].alpha - coarse[i].alpha)) < 1e-9);
  }
  const auto r = run_deepmapping(d, c);
  CHECK(r.method == "deepmapping+icp_point");
  CHECK(r.model->coarse.has_value());
}
