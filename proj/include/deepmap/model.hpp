#pragma once

// Localisation network (scan -> pose), occupancy network (point -> p), free
// space sampling and the unsupervised registration losses.
//
// The networks work in normalised coordinates: pixel coordinates divided by a
// per-dataset scale, so point inputs and translation outputs are O(1).

#include "deepmap/autodiff.hpp"
#include "deepmap/geometry.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace deepmap {

enum class Activation { Relu, Elu };

/// Fully connected layer, weight [in, out], bias [out].
struct Linear {
  ad::Tensor weight;
  ad::Tensor bias;

  Linear() = default;
  Linear(int in, int out, double gain, std::mt19937_64& rng);
  ad::Var operator()(ad::Graph& g, ad::Var x) const;
};

/// Stack of Linear layers with an activation after every layer but the last.
class Mlp {
 public:
  Mlp() = default;
  /// widths = {in, hidden..., out}
  Mlp(std::vector<int> widths, Activation act, double gain, std::mt19937_64& rng);

  ad::Var forward(ad::Graph& g, ad::Var x) const;
  std::vector<ad::Tensor> parameters() const;
  void name_parameters(const std::string& prefix);
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::vector<Linear> layers_;
  Activation act_ = Activation::Relu;
};

enum class LNetVariant { Conv, Pointwise };

struct LNetConfig {
  LNetVariant variant = LNetVariant::Conv;
  std::vector<int> features{64, 128, 1024};  // C(n) channels, or shared per-point FC(n)
  std::vector<int> head{512, 256};           // FC(n) before the FC(3) output
  int kernel = 3;
  int dilation = 2;
  double gain = 2.449489742783178;  // sqrt(6): Kaiming uniform for ReLU
  double output_gain = 1.0;         // extra factor on the output layer's init range
};

/// f_theta: organised scan [N, 2] -> (tx, ty, alpha), parameters shared by all scans.
class LNet {
 public:
  LNet() = default;
  LNet(const LNetConfig& cfg, std::mt19937_64& rng);

  /// scans: [K, N, 2] -> [K, 3]
  ad::Var forward(ad::Graph& g, ad::Var scans) const;
  std::vector<ad::Tensor> parameters() const;
  ad::NamedTensors named_parameters() const;
  void load(const ad::NamedTensors& tensors);
  const LNetConfig& config() const { return cfg_; }

 private:
  struct Conv {
    ad::Tensor weight;  // [kernel, in, out]
    ad::Tensor bias;
  };
  LNetConfig cfg_;
  std::vector<Conv> convs_;
  Mlp pointwise_;
  Mlp head_;
};

struct MNetConfig {
  std::vector<int> hidden{64, 512, 512, 256, 128};
  int input_dim = 2;
  double gain = 2.449489742783178;
};

inline constexpr double kProbabilityFloor = 1e-7;

/// m_phi: global coordinate -> occupancy probability in [1e-7, 1 - 1e-7].
class MNet {
 public:
  MNet() = default;
  MNet(const MNetConfig& cfg, std::mt19937_64& rng);

  /// points [M, D] -> probabilities [M, 1]
  ad::Var forward(ad::Graph& g, ad::Var points) const;
  /// Evaluation without recording gradients.
  Eigen::VectorXd predict(const Points2& points) const;
  std::vector<ad::Tensor> parameters() const;
  ad::NamedTensors named_parameters() const;
  void load(const ad::NamedTensors& tensors);
  Mlp& mlp() { return mlp_; }

 private:
  MNetConfig cfg_;
  Mlp mlp_;
};

/// K organised scans of N points each, in normalised units.
struct ScanBatch {
  ad::Matrix points;   // [K*N, 2], scan-major
  ad::Matrix origins;  // [K, 2], sensor centre of each scan in its own frame
  Index count = 0;
  Index per_scan = 0;
  double scale = 1.0;  // pixels per normalised unit
};

/// origins may be empty (all sensors at their local origin).
ScanBatch make_batch(std::span<const PointCloud> scans, double scale, std::span<const Vec2> origins = {});

/// Default normalisation: RMS range of all scan points about their sensor.
double auto_scale(std::span<const PointCloud> scans);

struct FreeSpaceSamples {
  ad::Matrix points;  // [K*N*per_ray, 2], grouped by scan, then beam
  int per_ray = 0;
  std::uint64_t seed = 0;
};

/// For every point p with sensor origin o: per_ray samples o + u (p - o), u ~ U(0, 1) open.
FreeSpaceSamples sample_free_space(const ScanBatch& batch, int per_ray, std::uint64_t seed);
FreeSpaceSamples sample_free_space(const PointCloud& scan, int per_ray, std::uint64_t seed);

struct LossConfig {
  double lambda = 10.0;
  int samples_per_ray = 19;
  int neighbor_window = 1;

  void validate() const;
};

/// Mean binary cross entropy of probabilities p against a constant label.
ad::Var bce(ad::Var p, int label);

/// Sum over i of Chamfer distances to the temporal neighbours j in
/// {i-w, ..., i+w} \ {i}. global_points: [K*N, 2] scan-major. Nearest
/// neighbours are fixed at their forward-pass values.
ad::Var chamfer_loss(ad::Graph& g, ad::Var global_points, Index count, int window);

/// Differentiable two-way Chamfer distance between two point sets.
ad::Var chamfer_distance(ad::Var x, ad::Var y);

struct LossTerms {
  ad::Var total;
  ad::Var occupancy;
  ad::Var chamfer;  // unset when lambda == 0
  ad::Var poses;
  ad::Var global_points;
};

/// Occupancy loss (and lambda-weighted Chamfer term) for given pose variables [K, 3].
LossTerms registration_loss(ad::Graph& g, const MNet& mnet, const ScanBatch& batch, ad::Var poses,
                            const FreeSpaceSamples& samples, const LossConfig& cfg);

/// Full loss with poses predicted by the L-Net.
LossTerms registration_loss(ad::Graph& g, const LNet& lnet, const MNet& mnet, const ScanBatch& batch,
                            const FreeSpaceSamples& samples, const LossConfig& cfg);

/// Occupancy loss alone with fresh free-space samples.
ad::Var occupancy_loss(ad::Graph& g, const LNet& lnet, const MNet& mnet, const ScanBatch& batch, int samples_per_ray,
                       std::uint64_t seed);

/// Pose predictions in pixel units, no gradient.
Trajectory predict_poses(const LNet& lnet, const ScanBatch& batch);
Trajectory to_pixels(const ad::Matrix& normalized_poses, double scale);

struct Region {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct MapImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major; 0 occupied, 255 free, 128 unexplored

  static constexpr std::uint8_t kOccupied = 0;
  static constexpr std::uint8_t kFree = 255;
  static constexpr std::uint8_t kUnexplored = 128;
};

/// Cells within `radius` pixels of a ray segment or scan point (pixel units).
std::vector<bool> explored_mask(const Region& region, double resolution, std::span<const PointCloud> global_clouds,
                                const Trajectory& poses, double radius = 2.0);

/// Thresholds M-Net probabilities at cell centres: p >= 0.5 is occupied.
/// `scale` converts the pixel region into the network's normalised frame.
MapImage rasterize_map(const MNet& mnet, const Region& region, double resolution, const std::vector<bool>& explored,
                       double scale);

}  // namespace deepmap
