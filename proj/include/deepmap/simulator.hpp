#pragma once

// Planar Lidar simulator over a binary occupancy image.
//
// Cell (cx, cy) covers [cx, cx+1) x [cy, cy+1) in pixel coordinates, with cy
// the image row. Obstacle boundaries are cell edges, so ray hits are
// continuous sub-pixel points.

#include "deepmap/geometry.hpp"

#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepmap {

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OccupancyWorld {
 public:
  OccupancyWorld() = default;
  /// All-free world.
  OccupancyWorld(int width, int height);
  /// cells: row-major, nonzero = obstacle.
  OccupancyWorld(int width, int height, std::vector<std::uint8_t> cells);

  int width() const { return width_; }
  int height() const { return height_; }

  bool in_bounds(int cx, int cy) const { return cx >= 0 && cy >= 0 && cx < width_ && cy < height_; }
  bool obstacle(int cx, int cy) const { return cells_[index(cx, cy)] != 0; }
  void set_obstacle(int cx, int cy, bool on) { cells_[index(cx, cy)] = on ? 1 : 0; }

  /// True when (x, y) is inside the image and its cell is free.
  bool free_at(const Vec2& p) const;
  /// Distance from p to the nearest obstacle cell or image border, capped at `cap`.
  double clearance(const Vec2& p, double cap) const;

  Index free_count() const;
  const std::vector<std::uint8_t>& cells() const { return cells_; }

  friend bool operator==(const OccupancyWorld&, const OccupancyWorld&) = default;

 private:
  std::size_t index(int cx, int cy) const {
    return static_cast<std::size_t>(cy) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(cx);
  }
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> cells_;
};

struct SensorConfig {
  int n_beams = 128;
  double fov = 2 * std::numbers::pi;
  double max_range = std::numeric_limits<double>::infinity();

  void validate() const;
};

/// First intersection of the ray with an obstacle edge, else with the image
/// border. Beyond max_range the ray is clipped to its max_range point.
Vec2 cast_ray(const OccupancyWorld& world, const Vec2& origin, const Vec2& direction,
              double max_range = std::numeric_limits<double>::infinity());

/// Beam angles relative to the sensor heading.
std::vector<double> beam_angles(const SensorConfig& cfg);

/// Organised scan in the sensor frame, one point per beam in beam order.
PointCloud scan(const OccupancyWorld& world, const Pose2& pose, const SensorConfig& cfg);

struct TrajectoryConfig {
  int n_poses = 32;
  double rot_max = 10.0 * std::numbers::pi / 180.0;
  double trans_mean = 8.16;
  double clearance = 2.0;  // minimum distance kept from obstacles and border
  int retries = 64;
};

struct TrajectoryStats {
  std::vector<double> rotations;  // sampled heading increments of accepted steps
  std::vector<double> steps;      // accepted step lengths
  int reversals = 0;
};

/// Seeded random walk. Heading increments are uniform in [-rot_max, rot_max]
/// and step lengths uniform in [0.5, 1.5] * trans_mean; candidates that leave
/// the world or come within `clearance` of an obstacle are resampled, and the
/// direction of travel is reversed after `retries` failures (the sensor heading
/// keeps its bounded increments).
Trajectory sample_trajectory(const OccupancyWorld& world, const TrajectoryConfig& cfg, std::uint64_t seed,
                             TrajectoryStats* stats = nullptr);

/// Free background with random rectangles and discs. Free pockets cut off from
/// the largest free region are filled, and the remaining free region covers at
/// least a quarter of the image.
OccupancyWorld generate_world(int width, int height, int n_obstacles, std::uint64_t seed);

struct ScanFrame {
  Pose2 pose;  // ground truth
  PointCloud points;
};

struct SimDataset {
  std::string world_path;
  std::optional<OccupancyWorld> world;
  SensorConfig sensor;
  std::uint64_t seed = 0;
  std::vector<ScanFrame> frames;
  bool has_ground_truth = true;

  std::vector<PointCloud> scans() const;
  Trajectory ground_truth() const;
  std::vector<PointCloud> global_clouds(const Trajectory& poses) const;
};

SimDataset simulate(const OccupancyWorld& world, const SensorConfig& sensor, const TrajectoryConfig& traj,
                    std::uint64_t seed);

}  // namespace deepmap
