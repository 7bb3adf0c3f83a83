#include "deepmap/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>

namespace deepmap {

OccupancyWorld::OccupancyWorld(int width, int height)
    : OccupancyWorld(width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 0)) {}

OccupancyWorld::OccupancyWorld(int width, int height, std::vector<std::uint8_t> cells)
    : width_(width), height_(height), cells_(std::move(cells)) {
  if (width < 1 || height < 1) throw SimulationError("world: dimensions must be positive");
  if (cells_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw SimulationError("world: cell count does not match dimensions");
  }
}

bool OccupancyWorld::free_at(const Vec2& p) const {
  if (!(p.x() >= 0 && p.y() >= 0 && p.x() < width_ && p.y() < height_)) return false;
  return !obstacle(static_cast<int>(p.x()), static_cast<int>(p.y()));
}

double OccupancyWorld::clearance(const Vec2& p, double cap) const {
  double best = std::min({p.x(), p.y(), width_ - p.x(), height_ - p.y(), cap});
  const int r = static_cast<int>(std::ceil(best)) + 1;
  const int cx = static_cast<int>(std::floor(p.x())), cy = static_cast<int>(std::floor(p.y()));
  for (int y = cy - r; y <= cy + r; ++y) {
    for (int x = cx - r; x <= cx + r; ++x) {
      if (!in_bounds(x, y) || !obstacle(x, y)) continue;
      const double dx = std::max({x - p.x(), 0.0, p.x() - (x + 1)});
      const double dy = std::max({y - p.y(), 0.0, p.y() - (y + 1)});
      best = std::min(best, std::hypot(dx, dy));
    }
  }
  return best;
}

Index OccupancyWorld::free_count() const {
  return static_cast<Index>(std::count(cells_.begin(), cells_.end(), std::uint8_t{0}));
}

void SensorConfig::validate() const {
  if (n_beams < 1) throw SimulationError("sensor: n_beams must be >= 1");
  if (!(fov > 0 && fov <= 2 * std::numbers::pi + 1e-12)) throw SimulationError("sensor: fov must be in (0, 2pi]");
  if (!(max_range > 0)) throw SimulationError("sensor: max_range must be positive");
}

Vec2 cast_ray(const OccupancyWorld& world, const Vec2& origin, const Vec2& direction, double max_range) {
  if (!world.free_at(origin)) throw SimulationError("cast_ray: origin is not in a free cell");
  const Vec2 dir = direction.normalized();
  int cx = static_cast<int>(std::floor(origin.x()));
  int cy = static_cast<int>(std::floor(origin.y()));
  const int step_x = dir.x() > 0 ? 1 : -1;
  const int step_y = dir.y() > 0 ? 1 : -1;
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double delta_x = dir.x() != 0 ? 1.0 / std::abs(dir.x()) : inf;
  const double delta_y = dir.y() != 0 ? 1.0 / std::abs(dir.y()) : inf;
  double next_x = dir.x() > 0 ? (cx + 1 - origin.x()) * delta_x : dir.x() < 0 ? (origin.x() - cx) * delta_x : inf;
  double next_y = dir.y() > 0 ? (cy + 1 - origin.y()) * delta_y : dir.y() < 0 ? (origin.y() - cy) * delta_y : inf;

  double t = 0.0;
  bool crossed_x = false;
  for (;;) {
    crossed_x = next_x < next_y;
    if (crossed_x) {
      t = next_x;
      next_x += delta_x;
      cx += step_x;
    } else {
      t = next_y;
      next_y += delta_y;
      cy += step_y;
    }
    if (t >= max_range) return origin + max_range * dir;
    if (!world.in_bounds(cx, cy) || world.obstacle(cx, cy)) break;
  }
  Vec2 hit = origin + t * dir;
  // The crossed coordinate lies exactly on the entered cell's edge.
  if (crossed_x) {
    hit.x() = step_x > 0 ? cx : cx + 1;
  } else {
    hit.y() = step_y > 0 ? cy : cy + 1;
  }
  return hit;
}

std::vector<double> beam_angles(const SensorConfig& cfg) {
  cfg.validate();
  const bool full = cfg.fov >= 2 * std::numbers::pi - 1e-12;
  const double spacing = full ? cfg.fov / cfg.n_beams : (cfg.n_beams > 1 ? cfg.fov / (cfg.n_beams - 1) : 0.0);
  std::vector<double> a(static_cast<std::size_t>(cfg.n_beams));
  for (int k = 0; k < cfg.n_beams; ++k) a[static_cast<std::size_t>(k)] = k * spacing;
  return a;
}

PointCloud scan(const OccupancyWorld& world, const Pose2& pose, const SensorConfig& cfg) {
  const std::vector<double> angles = beam_angles(cfg);
  const Vec2 origin = pose.translation();
  const Pose2 to_local = pose.inverse();
  PointCloud out{Points2(cfg.n_beams, 2), Frame::Local};
  for (int k = 0; k < cfg.n_beams; ++k) {
    const double a = pose.alpha + angles[static_cast<std::size_t>(k)];
    const Vec2 hit = cast_ray(world, origin, Vec2(std::cos(a), std::sin(a)), cfg.max_range);
    out.points.row(k) = (to_local * hit).transpose();
  }
  return out;
}

namespace {

bool segment_clear(const OccupancyWorld& world, const Vec2& a, const Vec2& b, double clearance) {
  const double len = (b - a).norm();
  const int n = std::max(1, static_cast<int>(std::ceil(len / 0.5)));
  for (int i = 1; i <= n; ++i) {
    const Vec2 p = a + (b - a) * (static_cast<double>(i) / n);
    if (!world.free_at(p) || world.clearance(p, clearance) < clearance) return false;
  }
  return true;
}

}  // namespace

Trajectory sample_trajectory(const OccupancyWorld& world, const TrajectoryConfig& cfg, std::uint64_t seed,
                             TrajectoryStats* stats) {
  if (cfg.n_poses < 1) throw SimulationError("sample_trajectory: n_poses must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, world.width());
  std::uniform_real_distribution<double> uy(0.0, world.height());
  std::uniform_real_distribution<double> uh(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> urot(-cfg.rot_max, cfg.rot_max);
  std::uniform_real_distribution<double> ustep(0.5 * cfg.trans_mean, 1.5 * cfg.trans_mean);

  Vec2 pos;
  bool placed = false;
  for (int attempt = 0; attempt < 100000 && !placed; ++attempt) {
    pos = Vec2(ux(rng), uy(rng));
    placed = world.free_at(pos) && world.clearance(pos, cfg.clearance) >= cfg.clearance;
  }
  if (!placed) throw SimulationError("sample_trajectory: no free start position with the required clearance");

  double heading = uh(rng);
  double travel = 1.0;  // -1 after a reversal: the sensor backs up without turning
  Trajectory traj{{pos.x(), pos.y(), heading}};
  for (int i = 1; i < cfg.n_poses; ++i) {
    bool moved = false;
    for (int phase = 0; phase < 2 && !moved; ++phase) {
      for (int attempt = 0; attempt < cfg.retries; ++attempt) {
        const double dh = urot(rng);
        const double step = ustep(rng);
        const double h = heading + dh;
        const Vec2 cand = pos + travel * step * Vec2(std::cos(h), std::sin(h));
        if (!segment_clear(world, pos, cand, cfg.clearance)) continue;
        heading = wrap_angle(h);
        pos = cand;
        if (stats) {
          stats->rotations.push_back(dh);
          stats->steps.push_back(step);
        }
        moved = true;
        break;
      }
      if (!moved && phase == 0) {
        travel = -travel;
        if (stats) ++stats->reversals;
      }
    }
    if (!moved) throw SimulationError("sample_trajectory: stuck at pose " + std::to_string(i));
    traj.push_back({pos.x(), pos.y(), heading});
  }
  return traj;
}

namespace {

// Keeps only the largest 4-connected free component; returns its size.
Index keep_largest_free_component(OccupancyWorld& world) {
  const int w = world.width(), h = world.height();
  std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
  std::vector<Index> sizes;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t at = static_cast<std::size_t>(y) * w + x;
      if (world.obstacle(x, y) || label[at] >= 0) continue;
      const int id = static_cast<int>(sizes.size());
      Index count = 0;
      std::queue<std::pair<int, int>> q;
      q.push({x, y});
      label[at] = id;
      while (!q.empty()) {
        const auto [px, py] = q.front();
        q.pop();
        ++count;
        constexpr int dx[] = {1, -1, 0, 0};
        constexpr int dy[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int nx = px + dx[k], ny = py + dy[k];
          if (!world.in_bounds(nx, ny) || world.obstacle(nx, ny)) continue;
          const std::size_t n = static_cast<std::size_t>(ny) * w + nx;
          if (label[n] >= 0) continue;
          label[n] = id;
          q.push({nx, ny});
        }
      }
      sizes.push_back(count);
    }
  }
  if (sizes.empty()) return 0;
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int l = label[static_cast<std::size_t>(y) * w + x];
      if (l >= 0 && l != keep) world.set_obstacle(x, y, true);
    }
  }
  return sizes[static_cast<std::size_t>(keep)];
}

}  // namespace

OccupancyWorld generate_world(int width, int height, int n_obstacles, std::uint64_t seed) {
  if (width < 32 || height < 32) throw SimulationError("generate_world: dimensions must be >= 32");
  if (n_obstacles < 0) throw SimulationError("generate_world: negative obstacle count");
  std::mt19937_64 rng(seed);
  const double scale = std::min(width, height);
  std::uniform_real_distribution<double> ux(0.0, width), uy(0.0, height);
  std::uniform_real_distribution<double> uside(scale / 32.0, scale / 6.0);
  std::uniform_real_distribution<double> uradius(scale / 64.0, scale / 14.0);
  std::bernoulli_distribution is_disc(0.35);

  for (int attempt = 0; attempt < 50; ++attempt) {
    OccupancyWorld world(width, height);
    for (int o = 0; o < n_obstacles; ++o) {
      const double cx = ux(rng), cy = uy(rng);
      if (is_disc(rng)) {
        const double r = uradius(rng);
        for (int y = std::max(0, static_cast<int>(cy - r)); y < std::min(height, static_cast<int>(cy + r) + 1); ++y) {
          for (int x = std::max(0, static_cast<int>(cx - r)); x < std::min(width, static_cast<int>(cx + r) + 1); ++x) {
            if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r) world.set_obstacle(x, y, true);
          }
        }
      } else {
        const double hw = 0.5 * uside(rng), hh = 0.5 * uside(rng);
        for (int y = std::max(0, static_cast<int>(cy - hh)); y < std::min(height, static_cast<int>(cy + hh) + 1); ++y) {
          for (int x = std::max(0, static_cast<int>(cx - hw)); x < std::min(width, static_cast<int>(cx + hw) + 1); ++x) {
            world.set_obstacle(x, y, true);
          }
        }
      }
    }
    const Index kept = keep_largest_free_component(world);
    if (4 * kept >= static_cast<Index>(width) * height) return world;
  }
  throw SimulationError("generate_world: could not reach 25% connected free space after 50 attempts");
}

std::vector<PointCloud> SimDataset::scans() const {
  std::vector<PointCloud> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(f.points);
  return out;
}

Trajectory SimDataset::ground_truth() const {
  Trajectory out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(f.pose);
  return out;
}

std::vector<PointCloud> SimDataset::global_clouds(const Trajectory& poses) const {
  if (poses.size() != frames.size()) throw GeometryError("global_clouds: pose count mismatch");
  std::vector<PointCloud> out;
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) out.push_back(transform(frames[i].points, poses[i]));
  return out;
}

SimDataset simulate(const OccupancyWorld& world, const SensorConfig& sensor, const TrajectoryConfig& traj,
                    std::uint64_t seed) {
  sensor.validate();
  SimDataset ds;
  ds.world = world;
  ds.sensor = sensor;
  ds.seed = seed;
  for (const Pose2& p : sample_trajectory(world, traj, seed)) ds.frames.push_back({p, scan(world, p, sensor)});
  return ds;
}

}  // namespace deepmap
