#include "deepmap/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace deepmap {

using ad::Graph;
using ad::Matrix;
using ad::Tensor;
using ad::Var;

// ---- layers -------------------------------------------------------------

Linear::Linear(int in, int out, double gain, std::mt19937_64& rng)
    : weight({in, out}, true), bias({out}, true) {
  const double fan_in = in;
  ad::init_uniform(weight, gain / std::sqrt(fan_in), rng);
  ad::init_uniform(bias, 1.0 / std::sqrt(fan_in), rng);
}

Var Linear::operator()(Graph& g, Var x) const {
  return ad::dense(x, g.leaf(weight), g.leaf(bias), ad::DenseActivation::Identity);
}

Mlp::Mlp(std::vector<int> widths, Activation act, double gain, std::mt19937_64& rng) : act_(act) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) layers_.emplace_back(widths[i], widths[i + 1], gain, rng);
}

Var Mlp::forward(Graph& g, Var x) const {
  const auto hidden = act_ == Activation::Relu ? ad::DenseActivation::Relu : ad::DenseActivation::Elu;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto act = i + 1 < layers_.size() ? hidden : ad::DenseActivation::Identity;
    x = ad::dense(x, g.leaf(layers_[i].weight), g.leaf(layers_[i].bias), act);
  }
  return x;
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

void Mlp::name_parameters(const std::string& prefix) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].weight.set_name(prefix + std::to_string(i) + ".weight");
    layers_[i].bias.set_name(prefix + std::to_string(i) + ".bias");
  }
}

namespace {

ad::NamedTensors by_name(const std::vector<Tensor>& params) {
  ad::NamedTensors out;
  for (const auto& p : params) out.emplace(p.name(), p);
  return out;
}

void load_into(std::vector<Tensor> params, const ad::NamedTensors& src) {
  for (Tensor& p : params) {
    auto it = src.find(p.name());
    if (it == src.end()) throw std::invalid_argument("checkpoint is missing '" + p.name() + "'");
    if (it->second.shape() != p.shape()) {
      throw ad::ShapeError("checkpoint '" + p.name() + "': shape " + ad::to_string(it->second.shape()) +
                           " vs " + ad::to_string(p.shape()));
    }
    p.values() = it->second.values();
  }
}

}  // namespace

// ---- L-Net --------------------------------------------------------------

LNet::LNet(const LNetConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.features.empty()) throw std::invalid_argument("LNet: no feature layers");
  if (cfg.kernel % 2 == 0 || cfg.dilation < 1) throw std::invalid_argument("LNet: kernel must be odd, dilation >= 1");
  int in = 2;
  if (cfg.variant == LNetVariant::Conv) {
    for (std::size_t i = 0; i < cfg.features.size(); ++i) {
      const int out = cfg.features[i];
      Conv c{Tensor({cfg.kernel, in, out}, true), Tensor({out}, true)};
      const double fan_in = static_cast<double>(cfg.kernel) * in;
      ad::init_uniform(c.weight, cfg.gain / std::sqrt(fan_in), rng);
      ad::init_uniform(c.bias, 1.0 / std::sqrt(fan_in), rng);
      c.weight.set_name("lnet.conv" + std::to_string(i) + ".weight");
      c.bias.set_name("lnet.conv" + std::to_string(i) + ".bias");
      convs_.push_back(std::move(c));
      in = out;
    }
  } else {
    std::vector<int> widths{2};
    widths.insert(widths.end(), cfg.features.begin(), cfg.features.end());
    pointwise_ = Mlp(widths, Activation::Relu, cfg.gain, rng);
    pointwise_.name_parameters("lnet.point");
    in = cfg.features.back();
  }
  std::vector<int> widths{in};
  widths.insert(widths.end(), cfg.head.begin(), cfg.head.end());
  widths.push_back(3);
  head_ = Mlp(widths, Activation::Relu, cfg.gain, rng);
  head_.name_parameters("lnet.head");
  head_.layers().back().weight.values() *= cfg.output_gain;
  head_.layers().back().bias.values() *= cfg.output_gain;
}

Var LNet::forward(Graph& g, Var scans) const {
  const ad::Shape& s = scans.shape();
  if (s.size() != 3 || s[2] != 2) throw ad::ShapeError("lnet: expected scans [K, N, 2], got " + ad::to_string(s));
  const Index k = s[0], n = s[1];
  Var x = scans;
  if (cfg_.variant == LNetVariant::Conv) {
    for (const Conv& c : convs_) x = ad::relu(ad::add_bias(ad::conv1d(x, g.leaf(c.weight), cfg_.dilation), g.leaf(c.bias)));
  } else {
    for (const Linear& l : pointwise_.layers()) {
      x = ad::dense(x, g.leaf(l.weight), g.leaf(l.bias), ad::DenseActivation::Relu);
    }
    x = ad::reshape(x, {k, n, ad::view_cols(x.shape())});
  }
  return head_.forward(g, ad::max_pool_points(x));
}

std::vector<Tensor> LNet::parameters() const {
  std::vector<Tensor> out;
  for (const Conv& c : convs_) {
    out.push_back(c.weight);
    out.push_back(c.bias);
  }
  for (const Tensor& t : pointwise_.parameters()) out.push_back(t);
  for (const Tensor& t : head_.parameters()) out.push_back(t);
  return out;
}

ad::NamedTensors LNet::named_parameters() const { return by_name(parameters()); }
void LNet::load(const ad::NamedTensors& tensors) { load_into(parameters(), tensors); }

// ---- M-Net --------------------------------------------------------------

MNet::MNet(const MNetConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  std::vector<int> widths{cfg.input_dim};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  mlp_ = Mlp(widths, Activation::Relu, cfg.gain, rng);
  mlp_.name_parameters("mnet.fc");
}

Var MNet::forward(Graph& g, Var points) const {
  if (ad::view_cols(points.shape()) != cfg_.input_dim) {
    throw ad::ShapeError("mnet: expected points [M, " + std::to_string(cfg_.input_dim) + "], got " +
                         ad::to_string(points.shape()));
  }
  return ad::clamp(ad::sigmoid(mlp_.forward(g, points)), kProbabilityFloor, 1.0 - kProbabilityFloor);
}

Eigen::VectorXd MNet::predict(const Points2& points) const {
  Eigen::VectorXd out(points.rows());
  constexpr Index chunk = 8192;
  for (Index at = 0; at < points.rows(); at += chunk) {
    const Index n = std::min(chunk, points.rows() - at);
    Graph g;
    Var p = forward(g, g.constant(Matrix(points.middleRows(at, n)), {n, 2}));
    out.segment(at, n) = Eigen::Map<const Eigen::VectorXd>(p.value().data(), n);
  }
  return out;
}

std::vector<Tensor> MNet::parameters() const { return mlp_.parameters(); }
ad::NamedTensors MNet::named_parameters() const { return by_name(parameters()); }
void MNet::load(const ad::NamedTensors& tensors) { load_into(parameters(), tensors); }

// ---- data ---------------------------------------------------------------

ScanBatch make_batch(std::span<const PointCloud> scans, double scale, std::span<const Vec2> origins) {
  if (scans.empty()) throw std::invalid_argument("make_batch: no scans");
  if (!(scale > 0)) throw std::invalid_argument("make_batch: scale must be positive");
  if (!origins.empty() && origins.size() != scans.size()) throw std::invalid_argument("make_batch: origin count mismatch");
  const Index n = scans.front().size();
  ScanBatch b;
  b.count = static_cast<Index>(scans.size());
  b.per_scan = n;
  b.scale = scale;
  b.points.resize(b.count * n, 2);
  b.origins = Matrix::Zero(b.count, 2);
  for (std::size_t i = 0; i < scans.size(); ++i) {
    if (scans[i].size() != n || n == 0) {
      throw std::invalid_argument("make_batch: scan " + std::to_string(i) + " has " + std::to_string(scans[i].size()) +
                                  " points, expected " + std::to_string(n));
    }
    b.points.middleRows(static_cast<Index>(i) * n, n) = scans[i].points / scale;
    if (!origins.empty()) b.origins.row(static_cast<Index>(i)) = origins[i].transpose() / scale;
  }
  return b;
}

double auto_scale(std::span<const PointCloud> scans) {
  double s = 0.0;
  Index n = 0;
  for (const auto& c : scans) {
    s += c.points.rowwise().squaredNorm().sum();
    n += c.size();
  }
  if (n == 0 || !(s > 0)) throw std::invalid_argument("auto_scale: no nonzero points");
  return std::sqrt(s / static_cast<double>(n));
}

FreeSpaceSamples sample_free_space(const ScanBatch& batch, int per_ray, std::uint64_t seed) {
  if (per_ray < 1) throw std::invalid_argument("sample_free_space: per_ray must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FreeSpaceSamples s;
  s.per_ray = per_ray;
  s.seed = seed;
  s.points.resize(batch.points.rows() * per_ray, 2);
  Index row = 0;
  for (Index k = 0; k < batch.count; ++k) {
    const Eigen::RowVector2d o = batch.origins.row(k);
    for (Index j = 0; j < batch.per_scan; ++j) {
      const Eigen::RowVector2d ray = batch.points.row(k * batch.per_scan + j) - o;
      for (int r = 0; r < per_ray; ++r) {
        double t = u(rng);
        while (t <= 0.0) t = u(rng);
        s.points.row(row++) = o + t * ray;
      }
    }
  }
  return s;
}

FreeSpaceSamples sample_free_space(const PointCloud& scan, int per_ray, std::uint64_t seed) {
  return sample_free_space(make_batch(std::span(&scan, 1), 1.0), per_ray, seed);
}

void LossConfig::validate() const {
  if (samples_per_ray < 1) throw std::invalid_argument("loss: samples_per_ray must be >= 1");
  if (!(lambda >= 0)) throw std::invalid_argument("loss: lambda must be >= 0");
  if (neighbor_window < 1) throw std::invalid_argument("loss: neighbor_window must be >= 1");
}

// ---- losses -------------------------------------------------------------

Var bce(Var p, int label) {
  if (label == 1) return ad::scale(ad::mean(ad::log(p)), -1.0);
  if (label == 0) return ad::scale(ad::mean(ad::log(ad::add_scalar(ad::scale(p, -1.0), 1.0))), -1.0);
  throw std::invalid_argument("bce: label must be 0 or 1");
}

Var chamfer_distance(Var x, Var y) {
  const Points2 xv = x.value();
  const Points2 yv = y.value();
  if (xv.rows() == 0 || yv.rows() == 0) throw GeometryError("chamfer: empty point cloud");
  auto one_way = [](Var from, Var to, const Points2& fv, const Points2& tv) {
    return ad::mean(ad::row_norm(ad::sub(from, ad::gather_rows(to, nearest_indices(fv, tv)))));
  };
  return ad::add(one_way(x, y, xv, yv), one_way(y, x, yv, xv));
}

Var chamfer_loss(Graph&, Var global_points, Index count, int window) {
  if (window < 1) throw std::invalid_argument("chamfer_loss: window must be >= 1");
  if (count < 2) throw std::invalid_argument("chamfer_loss: need at least 2 clouds");
  const Index rows_total = global_points.value().rows();
  if (rows_total % count != 0) throw ad::ShapeError("chamfer_loss: point count not divisible by cloud count");
  const Index n = rows_total / count;
  std::vector<Var> clouds;
  for (Index i = 0; i < count; ++i) clouds.push_back(ad::rows(global_points, i * n, n));
  Var total;
  for (Index i = 0; i < count; ++i) {
    for (Index j = i + 1; j <= std::min(count - 1, i + window); ++j) {
      // d(G_i, G_j) appears for both (i, j) and (j, i).
      Var d = ad::scale(chamfer_distance(clouds[static_cast<std::size_t>(i)], clouds[static_cast<std::size_t>(j)]), 2.0);
      total = total.graph ? ad::add(total, d) : d;
    }
  }
  return total;
}

LossTerms registration_loss(Graph& g, const MNet& mnet, const ScanBatch& batch, Var poses,
                            const FreeSpaceSamples& samples, const LossConfig& cfg) {
  cfg.validate();
  const Index occupied = batch.points.rows();
  if (samples.points.rows() != occupied * samples.per_ray) {
    throw ad::ShapeError("registration_loss: free-space samples do not match the batch");
  }
  LossTerms t;
  t.poses = poses;
  t.global_points = ad::transform2d(g.constant(batch.points, {occupied, 2}), poses);
  Var free_global = ad::transform2d(g.constant(samples.points, {samples.points.rows(), 2}), poses);
  const std::vector<Var> parts{t.global_points, free_global};
  Var p = mnet.forward(g, ad::concat_rows(parts));
  // Every scan has the same number of points, so the mean over all rows is
  // the mean over scans of the per-scan means.
  t.occupancy = ad::add(bce(ad::rows(p, 0, occupied), 1), bce(ad::rows(p, occupied, samples.points.rows()), 0));
  t.total = t.occupancy;
  if (cfg.lambda > 0) {
    t.chamfer = chamfer_loss(g, t.global_points, batch.count, cfg.neighbor_window);
    t.total = ad::add(t.occupancy, ad::scale(t.chamfer, cfg.lambda));
  }
  return t;
}

LossTerms registration_loss(Graph& g, const LNet& lnet, const MNet& mnet, const ScanBatch& batch,
                            const FreeSpaceSamples& samples, const LossConfig& cfg) {
  Var scans = g.constant(batch.points, {batch.count, batch.per_scan, 2});
  return registration_loss(g, mnet, batch, lnet.forward(g, scans), samples, cfg);
}

Var occupancy_loss(Graph& g, const LNet& lnet, const MNet& mnet, const ScanBatch& batch, int samples_per_ray,
                   std::uint64_t seed) {
  LossConfig cfg;
  cfg.lambda = 0.0;
  cfg.samples_per_ray = samples_per_ray;
  return registration_loss(g, lnet, mnet, batch, sample_free_space(batch, samples_per_ray, seed), cfg).occupancy;
}

Trajectory to_pixels(const Matrix& normalized_poses, double scale) {
  Trajectory out;
  out.reserve(static_cast<std::size_t>(normalized_poses.rows()));
  for (Index k = 0; k < normalized_poses.rows(); ++k) {
    out.push_back({normalized_poses(k, 0) * scale, normalized_poses(k, 1) * scale, normalized_poses(k, 2)});
  }
  return out;
}

Trajectory predict_poses(const LNet& lnet, const ScanBatch& batch) {
  Graph g;
  Var poses = lnet.forward(g, g.constant(batch.points, {batch.count, batch.per_scan, 2}));
  return to_pixels(poses.value(), batch.scale);
}

// ---- rasterisation ------------------------------------------------------

namespace {

struct GridDims {
  int w = 0;
  int h = 0;
};

GridDims grid_dims(const Region& region, double resolution) {
  if (!(resolution > 0)) throw std::invalid_argument("rasterize: resolution must be positive");
  if (!(region.x1 > region.x0 && region.y1 > region.y0)) throw std::invalid_argument("rasterize: empty region");
  return {static_cast<int>(std::ceil((region.x1 - region.x0) / resolution)),
          static_cast<int>(std::ceil((region.y1 - region.y0) / resolution))};
}

}  // namespace

std::vector<bool> explored_mask(const Region& region, double resolution, std::span<const PointCloud> global_clouds,
                                const Trajectory& poses, double radius) {
  if (global_clouds.size() != poses.size()) throw std::invalid_argument("explored_mask: pose count mismatch");
  const GridDims d = grid_dims(region, resolution);
  std::vector<bool> mask(static_cast<std::size_t>(d.w) * d.h, false);
  auto mark = [&](const Vec2& p) {
    const int cx0 = static_cast<int>(std::floor((p.x() - radius - region.x0) / resolution));
    const int cx1 = static_cast<int>(std::floor((p.x() + radius - region.x0) / resolution));
    const int cy0 = static_cast<int>(std::floor((p.y() - radius - region.y0) / resolution));
    const int cy1 = static_cast<int>(std::floor((p.y() + radius - region.y0) / resolution));
    for (int cy = std::max(cy0, 0); cy <= std::min(cy1, d.h - 1); ++cy) {
      for (int cx = std::max(cx0, 0); cx <= std::min(cx1, d.w - 1); ++cx) {
        const Vec2 c(region.x0 + (cx + 0.5) * resolution, region.y0 + (cy + 0.5) * resolution);
        if ((c - p).norm() <= radius) mask[static_cast<std::size_t>(cy) * d.w + cx] = true;
      }
    }
  };
  const double step = std::min(0.5 * resolution, radius);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Vec2 o = poses[i].translation();
    for (Index j = 0; j < global_clouds[i].size(); ++j) {
      const Vec2 p = global_clouds[i].points.row(j).transpose();
      const int n = std::max(1, static_cast<int>(std::ceil((p - o).norm() / step)));
      for (int s = 0; s <= n; ++s) mark(o + (p - o) * (static_cast<double>(s) / n));
    }
  }
  return mask;
}

MapImage rasterize_map(const MNet& mnet, const Region& region, double resolution, const std::vector<bool>& explored,
                       double scale) {
  const GridDims d = grid_dims(region, resolution);
  const std::size_t cells = static_cast<std::size_t>(d.w) * d.h;
  if (explored.size() != cells) throw std::invalid_argument("rasterize: explored mask size mismatch");
  MapImage img{d.w, d.h, std::vector<std::uint8_t>(cells, MapImage::kUnexplored)};
  std::vector<std::size_t> which;
  for (std::size_t i = 0; i < cells; ++i) {
    if (explored[i]) which.push_back(i);
  }
  if (which.empty()) return img;
  Points2 q(static_cast<Index>(which.size()), 2);
  for (std::size_t k = 0; k < which.size(); ++k) {
    const int cx = static_cast<int>(which[k] % static_cast<std::size_t>(d.w));
    const int cy = static_cast<int>(which[k] / static_cast<std::size_t>(d.w));
    q.row(static_cast<Index>(k)) << (region.x0 + (cx + 0.5) * resolution) / scale,
        (region.y0 + (cy + 0.5) * resolution) / scale;
  }
  const Eigen::VectorXd p = mnet.predict(q);
  for (std::size_t k = 0; k < which.size(); ++k) {
    img.pixels[which[k]] = p(static_cast<Index>(k)) >= 0.5 ? MapImage::kOccupied : MapImage::kFree;
  }
  return img;
}

}  // namespace deepmap
