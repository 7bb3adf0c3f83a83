#include "deepmap/pipeline.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numbers>

namespace deepmap {

using ad::Graph;
using ad::Matrix;
using ad::Tensor;
using ad::Var;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent streams per run component.
enum Stream : std::uint64_t { kLNetStream = 1, kMNetStream = 2, kDemoStream = 3 };

std::uint64_t stream_seed(std::uint64_t seed, Stream s) { return splitmix(splitmix(seed) ^ s); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

// ---- ICP ------------------------------------------------------------------

Points2 estimate_normals(const Points2& points, int k) {
  if (k < 2) throw std::invalid_argument("estimate_normals: k must be >= 2");
  const Index n = points.rows();
  if (n < 2) throw GeometryError("estimate_normals: need at least 2 points");
  const Index kk = std::min<Index>(k, n);
  Points2 normals(n, 2);
  std::vector<std::pair<double, Index>> d(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) d[static_cast<std::size_t>(j)] = {(points.row(j) - points.row(i)).squaredNorm(), j};
    std::partial_sort(d.begin(), d.begin() + kk, d.end());
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (Index a = 0; a < kk; ++a) mean += points.row(d[static_cast<std::size_t>(a)].second).transpose();
    mean /= static_cast<double>(kk);
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (Index a = 0; a < kk; ++a) {
      const Eigen::Vector2d c = points.row(d[static_cast<std::size_t>(a)].second).transpose() - mean;
      cov += c * c.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    normals.row(i) = es.eigenvectors().col(0).transpose();  // eigenvalues ascending
  }
  return normals;
}

IcpReport icp_pair(const Points2& source, const Points2& target, const IcpConfig& cfg, const Pose2& init) {
  if (cfg.max_iter < 1) throw std::invalid_argument("icp: max_iter must be >= 1");
  if (target.rows() == 0 || source.rows() == 0) throw GeometryError("icp: empty point cloud");
  const KdTree2 tree(target);
  Points2 normals;
  if (cfg.metric == IcpMetric::Plane) normals = estimate_normals(target, cfg.normal_neighbors);

  IcpReport rep;
  rep.transform = init;
  for (int it = 0; it < cfg.max_iter; ++it) {
    const Points2 moved = transform_points(source, rep.transform);
    std::vector<Index> src_idx, dst_idx;
    for (Index i = 0; i < moved.rows(); ++i) {
      const Neighbor nb = tree.nearest(moved.row(i).transpose());
      if (nb.distance <= cfg.max_correspondence) {
        src_idx.push_back(i);
        dst_idx.push_back(nb.index);
      }
    }
    if (src_idx.size() < 3) {
      throw GeometryError("icp: only " + std::to_string(src_idx.size()) + " correspondences within " +
                          std::to_string(cfg.max_correspondence) + " px");
    }
    const Index m = static_cast<Index>(src_idx.size());
    Pose2 step;
    if (cfg.metric == IcpMetric::Point) {
      Points2 a(m, 2), b(m, 2);
      for (Index i = 0; i < m; ++i) {
        a.row(i) = moved.row(src_idx[static_cast<std::size_t>(i)]);
        b.row(i) = target.row(dst_idx[static_cast<std::size_t>(i)]);
      }
      step = fit_rigid(a, b);
    } else {
      // Linearised about the current estimate: p + t + theta * perp(p).
      Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
      Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
      for (Index i = 0; i < m; ++i) {
        const Eigen::Vector2d p = moved.row(src_idx[static_cast<std::size_t>(i)]).transpose();
        const Eigen::Vector2d q = target.row(dst_idx[static_cast<std::size_t>(i)]).transpose();
        const Eigen::Vector2d nrm = normals.row(dst_idx[static_cast<std::size_t>(i)]).transpose();
        const Eigen::Vector3d j(nrm.x(), nrm.y(), nrm.y() * p.x() - nrm.x() * p.y());
        h += j * j.transpose();
        rhs -= j * nrm.dot(p - q);
      }
      const Eigen::Vector3d delta = h.ldlt().solve(rhs);
      if (!delta.allFinite()) throw GeometryError("icp: singular point-to-plane system");
      step = {delta(0), delta(1), delta(2)};
    }
    rep.transform = step * rep.transform;
    rep.iterations = it + 1;
    if (std::sqrt(step.tx * step.tx + step.ty * step.ty + step.alpha * step.alpha) < cfg.tol) {
      rep.converged = true;
      break;
    }
  }
  return rep;
}

Trajectory incremental_icp(std::span<const PointCloud> scans, const IcpConfig& cfg) {
  if (scans.size() < 2) throw std::invalid_argument("incremental_icp: need at least 2 scans");
  Trajectory poses{Pose2::identity()};
  for (std::size_t i = 1; i < scans.size(); ++i) {
    const Pose2 rel = icp_pair(scans[i].points, scans[i - 1].points, cfg).transform;
    poses.push_back(poses.back() * rel);
  }
  return poses;
}

// ---- names ------------------------------------------------------------------

const char* method_name(Method m) {
  switch (m) {
    case Method::DeepMapping: return "deepmapping";
    case Method::Direct: return "direct";
    case Method::IcpPoint: return "icp-point";
    case Method::IcpPlane: return "icp-plane";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (Method m : {Method::DeepMapping, Method::Direct, Method::IcpPoint, Method::IcpPlane}) {
    if (s == method_name(m)) return m;
  }
  throw std::invalid_argument("unknown method '" + s + "'");
}

const char* warm_start_name(WarmStart w) {
  switch (w) {
    case WarmStart::None: return "none";
    case WarmStart::IcpPoint: return "icp_point";
    case WarmStart::IcpPlane: return "icp_plane";
  }
  return "?";
}

WarmStart parse_warm_start(const std::string& s) {
  std::string t = s;
  std::replace(t.begin(), t.end(), '-', '_');
  for (WarmStart w : {WarmStart::None, WarmStart::IcpPoint, WarmStart::IcpPlane}) {
    if (t == warm_start_name(w)) return w;
  }
  throw std::invalid_argument("unknown warm start '" + s + "'");
}

void RunConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(lr > 0)) throw std::invalid_argument("lr must be > 0");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (scale < 0) throw std::invalid_argument("scale must be >= 0");
  loss.validate();
  for (int c : checkpoints) {
    if (c < 0 || c > epochs) throw std::invalid_argument("checkpoint epoch " + std::to_string(c) + " outside [0, epochs]");
  }
}

void use_desk_networks(RunConfig& cfg) {
  cfg.lnet.features = {16, 32, 128};
  cfg.lnet.head = {64, 32};
  cfg.mnet.hidden = {16, 16, 16};
}

std::uint64_t sample_seed(std::uint64_t run_seed, int epoch, int chunk) {
  return splitmix(splitmix(splitmix(run_seed) ^ static_cast<std::uint64_t>(epoch)) ^ static_cast<std::uint64_t>(chunk));
}

// ---- warm start -------------------------------------------------------------

WarmStartData warm_start_compose(std::span<const PointCloud> scans, const Trajectory& coarse) {
  if (scans.size() != coarse.size()) {
    throw std::invalid_argument("warm_start_compose: " + std::to_string(coarse.size()) + " poses for " +
                                std::to_string(scans.size()) + " scans");
  }
  WarmStartData out;
  out.coarse = coarse;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    PointCloud c{transform_points(scans[i].points, coarse[i]), Frame::Local};
    out.scans.push_back(std::move(c));
    out.origins.push_back(coarse[i].translation());
  }
  return out;
}

Trajectory compose_refinement(const Trajectory& refinement, const Trajectory& coarse) {
  if (refinement.size() != coarse.size()) throw std::invalid_argument("compose_refinement: length mismatch");
  Trajectory out;
  for (std::size_t i = 0; i < coarse.size(); ++i) out.push_back(refinement[i] * coarse[i]);
  return out;
}

// ---- registration runs ------------------------------------------------------

std::pair<Metrics, Pose2> evaluate_poses(const SimDataset& data, const Trajectory& est) {
  const Trajectory gt = data.ground_truth();
  const auto [align, aligned] = align_trajectories(est, gt);
  (void)aligned;
  Metrics m;
  m.ate = ate(est, gt);
  const auto est_clouds = data.global_clouds(est);
  const auto gt_clouds = data.global_clouds(gt);
  m.point_distance = point_distance(est_clouds, gt_clouds, align);
  return {m, align};
}

namespace {

// Metrics need a ground truth whose positions span more than a point; the
// rigid alignment is undefined otherwise.
bool evaluable(const SimDataset& data) {
  if (!data.has_ground_truth || data.frames.size() < 2) return false;
  const Vec2 first = data.frames.front().pose.translation();
  for (const auto& f : data.frames) {
    if (f.pose.translation() != first) return true;
  }
  return false;
}

struct Chunk {
  Index begin = 0;
  Index count = 0;
};

// Near-equal contiguous chunks of at most batch_size scans.
std::vector<Chunk> make_chunks(Index k, int batch_size) {
  const Index n = (k + batch_size - 1) / batch_size;
  std::vector<Chunk> out;
  Index begin = 0;
  for (Index c = 0; c < n; ++c) {
    const Index count = k / n + (c < k % n ? 1 : 0);
    out.push_back({begin, count});
    begin += count;
  }
  return out;
}

ScanBatch slice(const ScanBatch& b, const Chunk& c) {
  ScanBatch s;
  s.count = c.count;
  s.per_scan = b.per_scan;
  s.scale = b.scale;
  s.points = b.points.middleRows(c.begin * b.per_scan, c.count * b.per_scan);
  s.origins = b.origins.middleRows(c.begin, c.count);
  return s;
}

struct Setup {
  ScanBatch batch;
  std::vector<ScanBatch> chunks;
  std::optional<Trajectory> coarse;
  double scale = 1.0;
};

Setup prepare(const SimDataset& data, const RunConfig& cfg) {
  cfg.validate();
  if (data.frames.size() < 2) throw std::invalid_argument("registration needs at least 2 scans");
  const std::vector<PointCloud> scans = data.scans();
  Setup s;
  s.scale = cfg.scale > 0 ? cfg.scale : auto_scale(scans);
  if (cfg.warm_start == WarmStart::None) {
    s.batch = make_batch(scans, s.scale);
  } else {
    IcpConfig icp = cfg.icp;
    icp.metric = cfg.warm_start == WarmStart::IcpPoint ? IcpMetric::Point : IcpMetric::Plane;
    const WarmStartData ws = warm_start_compose(scans, incremental_icp(scans, icp));
    s.batch = make_batch(ws.scans, s.scale, ws.origins);
    s.coarse = ws.coarse;
  }
  for (const Chunk& c : make_chunks(s.batch.count, cfg.batch_size)) s.chunks.push_back(slice(s.batch, c));
  return s;
}

// With a warm start the L-Net predicts a refinement of the coarse poses; a
// zero output layer makes that refinement start at the identity.
LNetConfig lnet_config(const RunConfig& cfg) {
  LNetConfig c = cfg.lnet;
  if (cfg.warm_start != WarmStart::None) c.output_gain = 0.0;
  return c;
}

std::string run_label(const RunConfig& cfg) {
  std::string label = method_name(cfg.method);
  if (cfg.warm_start != WarmStart::None) label += std::string("+") + warm_start_name(cfg.warm_start);
  return label;
}

// Per-chunk forward passes, so the untrained poses match the first epoch of
// training bit for bit.
Matrix chunked_lnet_poses(const LNet& lnet, const std::vector<ScanBatch>& chunks) {
  Index total = 0;
  for (const auto& c : chunks) total += c.count;
  Matrix out(total, 3);
  Index row = 0;
  for (const auto& c : chunks) {
    Graph g;
    out.middleRows(row, c.count) = lnet.forward(g, g.constant(c.points, {c.count, c.per_scan, 2})).value();
    row += c.count;
  }
  return out;
}

Trajectory final_trajectory(const Matrix& normalized, const Setup& s) {
  Trajectory t = to_pixels(normalized, s.scale);
  for (auto& p : t) p.alpha = wrap_angle(p.alpha);
  if (s.coarse) t = compose_refinement(t, *s.coarse);
  for (auto& p : t) p.alpha = wrap_angle(p.alpha);
  return t;
}

// Shared optimisation loop. `pose_of_chunk` builds the [count, 3] pose
// variable for a chunk inside its graph.
template <class PoseFn>
void optimise(const SimDataset& data, const RunConfig& cfg, const Setup& s, MNet& mnet, std::vector<Tensor> params,
              PoseFn pose_of_chunk, RegistrationResult& res, const std::function<void(int)>& after_epoch) {
  ad::AdamState adam;
  adam.lr = cfg.lr;
  std::vector<int> marks = cfg.checkpoints;
  std::sort(marks.begin(), marks.end());
  for (int e = 0; e < cfg.epochs; ++e) {
    double weighted = 0.0;
    Matrix poses(s.batch.count, 3);
    Index row = 0;
    for (std::size_t c = 0; c < s.chunks.size(); ++c) {
      const ScanBatch& chunk = s.chunks[c];
      Graph g;
      const FreeSpaceSamples samples =
          sample_free_space(chunk, cfg.loss.samples_per_ray, sample_seed(cfg.seed, e, static_cast<int>(c)));
      Var pose = pose_of_chunk(g, chunk, row);
      const LossTerms terms = registration_loss(g, mnet, chunk, pose, samples, cfg.loss);
      const double value = terms.total.item();
      if (!std::isfinite(value)) {
        throw NumericalError(e, "non-finite loss (" + std::to_string(value) + ") in chunk " + std::to_string(c));
      }
      poses.middleRows(row, chunk.count) = pose.value();
      weighted += value * static_cast<double>(chunk.count);
      row += chunk.count;
      g.backward(terms.total);
      ad::adam_step(params, adam);
    }
    res.loss_trace.push_back(weighted / static_cast<double>(s.batch.count));
    const Trajectory current = final_trajectory(poses, s);
    std::optional<double> err;
    if (evaluable(data)) {
      err = ate(current, data.ground_truth());
      res.ate_trace.push_back(*err);
    }
    if (std::binary_search(marks.begin(), marks.end(), e)) res.checkpoints.push_back({e, current, err});
    if (after_epoch) after_epoch(e);
  }
}

void finish(const SimDataset& data, const RunConfig& cfg, RegistrationResult& res,
            std::chrono::steady_clock::time_point t0) {
  if (evaluable(data)) {
    const auto [m, align] = evaluate_poses(data, res.estimated_poses);
    res.metrics = m;
    res.alignment = align;
  }
  if (std::find(cfg.checkpoints.begin(), cfg.checkpoints.end(), cfg.epochs) != cfg.checkpoints.end()) {
    std::optional<double> err;
    if (res.metrics) err = res.metrics->ate;
    res.checkpoints.push_back({cfg.epochs, res.estimated_poses, err});
  }
  res.wall_time = seconds_since(t0);
}

}  // namespace

Trajectory initial_poses(const SimDataset& data, const RunConfig& cfg) {
  const Setup s = prepare(data, cfg);
  std::mt19937_64 lnet_rng(stream_seed(cfg.seed, kLNetStream));
  const LNet lnet(lnet_config(cfg), lnet_rng);
  return final_trajectory(chunked_lnet_poses(lnet, s.chunks), s);
}

RegistrationResult run_deepmapping(const SimDataset& data, const RunConfig& cfg, const EpochHook& hook) {
  const auto t0 = std::chrono::steady_clock::now();
  const Setup s = prepare(data, cfg);
  std::mt19937_64 lnet_rng(stream_seed(cfg.seed, kLNetStream));
  std::mt19937_64 mnet_rng(stream_seed(cfg.seed, kMNetStream));
  auto model = std::make_shared<TrainedModel>(
      TrainedModel{LNet(lnet_config(cfg), lnet_rng), MNet(cfg.mnet, mnet_rng), s.scale, s.coarse});

  std::vector<Tensor> params = model->lnet.parameters();
  for (const Tensor& t : model->mnet.parameters()) params.push_back(t);

  RegistrationResult res;
  res.method = run_label(cfg);
  res.config = cfg;
  const LNet& lnet = model->lnet;
  auto pose_of_chunk = [&lnet](Graph& g, const ScanBatch& chunk, Index) {
    return lnet.forward(g, g.constant(chunk.points, {chunk.count, chunk.per_scan, 2}));
  };
  std::function<void(int)> after;
  if (hook) after = [&](int e) { hook(e, *model); };
  optimise(data, cfg, s, model->mnet, params, pose_of_chunk, res, after);

  res.estimated_poses = final_trajectory(chunked_lnet_poses(lnet, s.chunks), s);
  res.model = model;
  finish(data, cfg, res, t0);
  return res;
}

RegistrationResult run_direct_opt(const SimDataset& data, const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const Setup s = prepare(data, cfg);
  std::mt19937_64 lnet_rng(stream_seed(cfg.seed, kLNetStream));
  std::mt19937_64 mnet_rng(stream_seed(cfg.seed, kMNetStream));
  const LNet lnet(lnet_config(cfg), lnet_rng);
  MNet mnet(cfg.mnet, mnet_rng);

  Tensor pose(ad::Shape{s.batch.count, 3}, chunked_lnet_poses(lnet, s.chunks), true);
  pose.set_name("poses");
  std::vector<Tensor> params = mnet.parameters();
  params.push_back(pose);

  RegistrationResult res;
  res.method = run_label(cfg);
  res.config = cfg;
  auto pose_of_chunk = [&pose](Graph& g, const ScanBatch& chunk, Index row) {
    return ad::rows(g.leaf(pose), row, chunk.count);
  };
  optimise(data, cfg, s, mnet, params, pose_of_chunk, res, {});

  res.estimated_poses = final_trajectory(pose.values(), s);
  finish(data, cfg, res, t0);
  return res;
}

RegistrationResult run_icp(const SimDataset& data, const IcpConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  RegistrationResult res;
  res.method = cfg.metric == IcpMetric::Point ? method_name(Method::IcpPoint) : method_name(Method::IcpPlane);
  res.config.method = cfg.metric == IcpMetric::Point ? Method::IcpPoint : Method::IcpPlane;
  res.config.icp = cfg;
  const std::vector<PointCloud> scans = data.scans();
  res.estimated_poses = incremental_icp(scans, cfg);
  for (auto& p : res.estimated_poses) p.alpha = wrap_angle(p.alpha);
  if (evaluable(data)) {
    const auto [m, align] = evaluate_poses(data, res.estimated_poses);
    res.metrics = m;
    res.alignment = align;
  }
  res.wall_time = seconds_since(t0);
  return res;
}

RegistrationResult run_method(const SimDataset& data, const RunConfig& cfg) {
  switch (cfg.method) {
    case Method::DeepMapping: return run_deepmapping(data, cfg);
    case Method::Direct: return run_direct_opt(data, cfg);
    case Method::IcpPoint:
    case Method::IcpPlane: {
      IcpConfig icp = cfg.icp;
      icp.metric = cfg.method == Method::IcpPoint ? IcpMetric::Point : IcpMetric::Plane;
      RegistrationResult r = run_icp(data, icp);
      r.config = cfg;
      return r;
    }
  }
  throw std::invalid_argument("run_method: bad method");
}

// ---- evaluation -------------------------------------------------------------

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile: empty input");
  if (!(q >= 0 && q <= 1)) throw std::invalid_argument("quantile: q outside [0, 1]");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

SuiteReport evaluate_suite(std::span<const RegistrationResult> results, double ate_threshold) {
  if (!(ate_threshold > 0)) throw std::invalid_argument("evaluate_suite: threshold must be positive");
  struct Acc {
    std::vector<double> ate, pd, wall;
  };
  std::map<std::string, Acc> by_method;
  for (const auto& r : results) {
    if (!r.metrics) continue;
    Acc& a = by_method[r.method];
    a.ate.push_back(r.metrics->ate);
    a.pd.push_back(r.metrics->point_distance);
    a.wall.push_back(r.wall_time);
  }
  if (by_method.empty()) throw std::invalid_argument("evaluate_suite: no results with ground-truth metrics");
  SuiteReport rep;
  rep.ate_threshold = ate_threshold;
  for (const auto& [name, a] : by_method) {
    MethodSummary m;
    m.method = name;
    m.runs = static_cast<int>(a.ate.size());
    m.ate_median = quantile(a.ate, 0.5);
    m.ate_q1 = quantile(a.ate, 0.25);
    m.ate_q3 = quantile(a.ate, 0.75);
    m.point_distance_median = quantile(a.pd, 0.5);
    const auto ok = std::count_if(a.ate.begin(), a.ate.end(), [&](double x) { return x < ate_threshold; });
    m.success_rate = static_cast<double>(ok) / static_cast<double>(a.ate.size());
    double wall = 0;
    for (double w : a.wall) wall += w;
    m.wall_time_mean = wall / static_cast<double>(a.wall.size());
    rep.methods.push_back(m);
  }
  return rep;
}

// ---- re-localisation --------------------------------------------------------

double mean_heading(const Trajectory& traj) {
  if (traj.empty()) throw std::invalid_argument("mean_heading: empty trajectory");
  double s = 0, c = 0;
  for (const auto& p : traj) {
    s += std::sin(p.alpha);
    c += std::cos(p.alpha);
  }
  return std::atan2(s, c);
}

ErrorField relocalization_study(const TrainedModel& model, const OccupancyWorld& world, const SensorConfig& sensor,
                                int stride, double heading, const Pose2& alignment) {
  if (stride < 1) throw std::invalid_argument("relocalization_study: stride must be >= 1");
  if (model.coarse) throw std::invalid_argument("relocalization_study: needs a model trained without warm start");
  ErrorField f;
  f.stride = stride;
  f.width = world.width() / stride;
  f.height = world.height() / stride;
  f.error.assign(static_cast<std::size_t>(f.width) * f.height, std::numeric_limits<double>::quiet_NaN());

  constexpr std::size_t kBatch = 64;
  std::vector<PointCloud> pending;
  std::vector<std::pair<std::size_t, Vec2>> where;
  auto flush = [&] {
    if (pending.empty()) return;
    const Trajectory est = predict_poses(model.lnet, make_batch(pending, model.scale));
    for (std::size_t i = 0; i < est.size(); ++i) {
      const Vec2 p = alignment * est[i].translation();
      f.error[where[i].first] = (p - where[i].second).norm();
    }
    pending.clear();
    where.clear();
  };
  for (int cy = 0; cy < f.height; ++cy) {
    for (int cx = 0; cx < f.width; ++cx) {
      const Vec2 centre((cx + 0.5) * stride, (cy + 0.5) * stride);
      if (!world.free_at(centre)) continue;
      pending.push_back(scan(world, Pose2{centre.x(), centre.y(), heading}, sensor));
      where.emplace_back(static_cast<std::size_t>(cy) * f.width + cx, centre);
      if (pending.size() == kBatch) flush();
    }
  }
  flush();
  return f;
}

// ---- 1-d demo ---------------------------------------------------------------

double demo_objective(double x) { return 0.5 * x * x + 5.0 * std::sin(10.0 * x) + 20.0 * std::sin(x); }
double demo_objective_grad(double x) { return x + 50.0 * std::cos(10.0 * x) + 20.0 * std::cos(x); }

Demo1DResult demo_1d(int iterations, double lr, std::uint64_t seed) {
  if (iterations < 1) throw std::invalid_argument("demo_1d: iterations must be >= 1");
  if (!(lr > 0)) throw std::invalid_argument("demo_1d: lr must be > 0");
  std::mt19937_64 rng(stream_seed(seed, kDemoStream));
  Mlp net({1, 10, 20, 30, 40, 1}, Activation::Elu, std::numbers::sqrt3, rng);
  std::uniform_real_distribution<double> uz(-1.0, 1.0);
  Tensor z(ad::Shape{1, 1}, Matrix::Constant(1, 1, uz(rng)), true);

  auto objective = [](Var x) {
    return ad::sum(ad::add(ad::add(ad::scale(ad::mul(x, x), 0.5), ad::scale(ad::sin(ad::scale(x, 10.0)), 5.0)),
                           ad::scale(ad::sin(x), 20.0)));
  };

  Demo1DResult r;
  {
    Graph g;
    r.x0 = net.forward(g, g.leaf(z)).item();
  }

  double x = r.x0;
  for (int i = 0; i < iterations; ++i) {
    x -= lr * demo_objective_grad(x);
    r.x_direct.push_back(x);
  }
  r.final_direct = demo_objective(x);

  std::vector<Tensor> params = net.parameters();
  params.push_back(z);
  double xn = r.x0;
  for (int i = 0; i < iterations; ++i) {
    Graph g;
    Var loss = objective(net.forward(g, g.leaf(z)));
    g.backward(loss);
    ad::sgd_step(params, lr);
    Graph h;
    xn = net.forward(h, h.leaf(z)).item();
    r.x_net.push_back(xn);
    r.z.push_back(z.values()(0, 0));
  }
  r.final_net = demo_objective(xn);
  return r;
}

}  // namespace deepmap
