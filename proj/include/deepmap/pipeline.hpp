#pragma once

// End-to-end registration runs: network-parameterised optimisation, the
// direct pose optimisation baseline, incremental ICP, warm starts, suite
// evaluation, re-localisation and the 1-d change-of-variables demo.

#include "deepmap/geometry.hpp"
#include "deepmap/model.hpp"
#include "deepmap/simulator.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepmap {

class NumericalError : public std::runtime_error {
 public:
  NumericalError(int epoch, const std::string& what)
      : std::runtime_error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

// ---- ICP ------------------------------------------------------------------

enum class IcpMetric { Point, Plane };

struct IcpConfig {
  IcpMetric metric = IcpMetric::Point;
  int max_iter = 50;
  double tol = 1e-6;
  double max_correspondence = 20.0;  // pixels; pairs farther apart are dropped
  int normal_neighbors = 8;
};

struct IcpReport {
  Pose2 transform;
  int iterations = 0;
  bool converged = false;
};

/// Pose T with T(source) ~ target, starting from `init`.
IcpReport icp_pair(const Points2& source, const Points2& target, const IcpConfig& cfg,
                   const Pose2& init = Pose2::identity());

/// Unit normals of each point from the smaller-eigenvalue direction of its k
/// nearest neighbours.
Points2 estimate_normals(const Points2& points, int k);

/// Chains pairwise ICP over consecutive scans; pose 0 is the identity.
Trajectory incremental_icp(std::span<const PointCloud> scans, const IcpConfig& cfg);

// ---- registration runs ------------------------------------------------------

enum class Method { DeepMapping, Direct, IcpPoint, IcpPlane };
enum class WarmStart { None, IcpPoint, IcpPlane };

const char* method_name(Method m);
Method parse_method(const std::string& s);
const char* warm_start_name(WarmStart w);
WarmStart parse_warm_start(const std::string& s);

struct RunConfig {
  Method method = Method::DeepMapping;
  int epochs = 3000;
  double lr = 1e-3;
  int batch_size = 128;
  LossConfig loss;
  std::uint64_t seed = 0;
  WarmStart warm_start = WarmStart::None;
  LNetConfig lnet;
  MNetConfig mnet;
  IcpConfig icp;
  double scale = 0.0;            // pixels per network unit; 0 = auto_scale()
  std::vector<int> checkpoints;  // epochs whose poses are kept in the result

  void validate() const;
};

/// Reduced L-Net and M-Net widths that keep a 32-scan, 128-beam run near
/// 0.08 s per epoch on one CPU core. Other settings are left unchanged.
void use_desk_networks(RunConfig& cfg);

struct Metrics {
  double ate = 0.0;
  double point_distance = 0.0;
};

struct PoseCheckpoint {
  int epoch = 0;
  Trajectory poses;
  std::optional<double> ate;
};

/// Networks and normalisation of a finished network-based run.
struct TrainedModel {
  LNet lnet;
  MNet mnet;
  double scale = 1.0;
  std::optional<Trajectory> coarse;  // warm-start poses, if any
};

struct RegistrationResult {
  std::string method;
  Trajectory estimated_poses;
  std::vector<double> loss_trace;  // one value per epoch, before that epoch's update
  std::vector<double> ate_trace;   // per epoch when ground truth is known
  std::optional<Metrics> metrics;
  std::optional<Pose2> alignment;  // estimated frame -> ground-truth frame
  std::vector<PoseCheckpoint> checkpoints;
  double wall_time = 0.0;  // seconds
  RunConfig config;
  std::shared_ptr<TrainedModel> model;
};

/// Called after every epoch's updates with (epoch index, model).
using EpochHook = std::function<void(int epoch, const TrainedModel&)>;

/// Seed of the free-space samples drawn for (epoch, chunk) of a run.
std::uint64_t sample_seed(std::uint64_t run_seed, int epoch, int chunk);

RegistrationResult run_deepmapping(const SimDataset& data, const RunConfig& cfg, const EpochHook& hook = {});
RegistrationResult run_direct_opt(const SimDataset& data, const RunConfig& cfg);
RegistrationResult run_icp(const SimDataset& data, const IcpConfig& cfg);
/// Dispatches on cfg.method.
RegistrationResult run_method(const SimDataset& data, const RunConfig& cfg);

/// Untrained L-Net poses for the run's seed: the shared starting point of the
/// network-based and direct runs.
Trajectory initial_poses(const SimDataset& data, const RunConfig& cfg);

/// Ground-truth metrics of a trajectory on a dataset, with the alignment used.
std::pair<Metrics, Pose2> evaluate_poses(const SimDataset& data, const Trajectory& est);

// ---- warm start -------------------------------------------------------------

struct WarmStartData {
  std::vector<PointCloud> scans;  // scans moved by their coarse poses
  std::vector<Vec2> origins;      // sensor centres in that frame
  Trajectory coarse;
};

WarmStartData warm_start_compose(std::span<const PointCloud> scans, const Trajectory& coarse);
/// Final pose of scan i: refinement[i] * coarse[i].
Trajectory compose_refinement(const Trajectory& refinement, const Trajectory& coarse);

// ---- evaluation -------------------------------------------------------------

/// Linear-interpolation quantile (q in [0, 1]) of unsorted data.
double quantile(std::vector<double> v, double q);

struct MethodSummary {
  std::string method;
  int runs = 0;
  double ate_median = 0, ate_q1 = 0, ate_q3 = 0;
  double point_distance_median = 0;
  double success_rate = 0;
  double wall_time_mean = 0;
};

struct SuiteReport {
  double ate_threshold = 0;
  std::vector<MethodSummary> methods;  // sorted by method name
};

/// Box-plot statistics and success rate (ATE < threshold) per method.
/// Results without metrics are skipped; throws if none remain.
SuiteReport evaluate_suite(std::span<const RegistrationResult> results, double ate_threshold);

inline double default_ate_threshold(int world_width) { return 0.02 * world_width; }

// ---- re-localisation --------------------------------------------------------

struct ErrorField {
  int width = 0;   // cells
  int height = 0;  // cells
  int stride = 1;  // pixels per cell
  std::vector<double> error;  // row-major; NaN where the cell is not free

  double at(int cx, int cy) const { return error[static_cast<std::size_t>(cy) * width + cx]; }
};

/// Simulates a scan at every free stride-grid cell centre with the given
/// heading, localises it with the trained L-Net and records the position
/// error after mapping the estimate through `alignment`.
ErrorField relocalization_study(const TrainedModel& model, const OccupancyWorld& world, const SensorConfig& sensor,
                                int stride, double heading, const Pose2& alignment);

/// Circular mean of the headings of a trajectory.
double mean_heading(const Trajectory& traj);

// ---- 1-d demo ---------------------------------------------------------------

/// 0.5 x^2 + 5 sin(10 x) + 20 sin(x)
double demo_objective(double x);
double demo_objective_grad(double x);

struct Demo1DResult {
  std::vector<double> x_direct;  // x at each iteration of direct descent
  std::vector<double> x_net;     // f_theta(z) at each iteration
  std::vector<double> z;         // z at each iteration
  double final_direct = 0;       // L at the final direct iterate
  double final_net = 0;          // L at the final f_theta(z)
  double x0 = 0;
};

Demo1DResult demo_1d(int iterations = 1000, double lr = 2e-4, std::uint64_t seed = 0);

}  // namespace deepmap
