// deepmap: simulate datasets, register scans, evaluate results, run the 1-d demo.
//
// Exit codes: 0 success, 2 input error, 3 numerical abort.

#include "deepmap/io.hpp"
#include "deepmap/pipeline.hpp"
#include "deepmap/runtime.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>

namespace fs = std::filesystem;
using namespace deepmap;
using io::json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int kInputError = 2;
constexpr int kNumericalAbort = 3;

struct SimulateArgs {
  int width = 256;
  int height = 256;
  int obstacles = 12;
  std::string world_in;
  int poses = 32;
  int beams = 128;
  double fov_deg = 360.0;
  double max_range = 0.0;
  double rot_max_deg = 10.0;
  double trans_mean = 8.16;
  double clearance = 2.0;
  std::uint64_t seed = 0;
  std::string out = "dataset";
};

struct RegisterArgs {
  std::string dataset;
  std::string out_dir;
  std::string config;
  std::string preset = "paper";
  std::string method = "deepmapping";
  std::string warm_start = "none";
  double lambda = 10.0;
  int samples_per_ray = 19;
  int batch = 128;
  double lr = 1e-3;
  int epochs = 3000;
  std::uint64_t seed = 0;
  double scale = 0.0;
  std::vector<int> checkpoints;
  double map_resolution = 1.0;
};

struct EvaluateArgs {
  std::vector<std::string> inputs;
  double ate_threshold_frac = 0.02;
  double ate_threshold = 0.0;
  int world_width = 0;
  std::string out;
};

struct DemoArgs {
  double lr = 2e-4;
  int iterations = 1000;
  std::uint64_t seed = 0;
  std::string out = "demo1d.csv";
};

json flags_json(const CLI::App& sub) {
  json j;
  j["command"] = sub.get_name();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_name() == "--help") continue;
    const auto results = opt->results();
    const std::string key = opt->get_name();
    if (results.size() == 1) {
      j["flags"][key] = results.front();
    } else if (!results.empty()) {
      j["flags"][key] = results;
    } else {
      j["flags"][key] = opt->get_default_str();
    }
  }
  return j;
}

int cmd_simulate(const SimulateArgs& a, const json& meta) {
  OccupancyWorld world;
  if (!a.world_in.empty()) {
    world = io::world_from_image(io::read_pgm(a.world_in));
  } else {
    world = generate_world(a.width, a.height, a.obstacles, a.seed);
  }
  SensorConfig sensor;
  sensor.n_beams = a.beams;
  sensor.fov = a.fov_deg * kDeg;
  if (a.max_range > 0) sensor.max_range = a.max_range;
  TrajectoryConfig traj;
  traj.n_poses = a.poses;
  traj.rot_max = a.rot_max_deg * kDeg;
  traj.trans_mean = a.trans_mean;
  traj.clearance = a.clearance;
  SimDataset data = simulate(world, sensor, traj, a.seed);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  data.world_path = "world.pgm";
  io::write_pgm(dir / "world.pgm", io::world_image(world));
  io::save_dataset(dir / "dataset.json", data, meta);
  std::cout << "poses " << data.frames.size() << ", beams " << sensor.n_beams << ", world " << world.width() << "x"
            << world.height() << ", seed " << a.seed << "\n"
            << "wrote " << (dir / "dataset.json").string() << "\n";
  return 0;
}

RunConfig build_run_config(const RegisterArgs& a, const CLI::App& sub) {
  RunConfig c;
  if (a.preset == "desk") use_desk_networks(c);
  if (!a.config.empty()) c = io::run_config_from_json(io::read_json(a.config), c);
  auto given = [&](const char* name) { return sub.get_option(name)->count() > 0; };
  if (given("--method") || a.config.empty()) c.method = parse_method(a.method);
  if (given("--warm-start") || a.config.empty()) c.warm_start = parse_warm_start(a.warm_start);
  if (given("--lambda") || a.config.empty()) c.loss.lambda = a.lambda;
  if (given("--samples-per-ray") || a.config.empty()) c.loss.samples_per_ray = a.samples_per_ray;
  if (given("--batch") || a.config.empty()) c.batch_size = a.batch;
  if (given("--lr") || a.config.empty()) c.lr = a.lr;
  if (given("--epochs") || a.config.empty()) c.epochs = a.epochs;
  if (given("--seed") || a.config.empty()) c.seed = a.seed;
  if (given("--scale") || a.config.empty()) c.scale = a.scale;
  if (given("--checkpoint") || a.config.empty()) c.checkpoints = a.checkpoints;
  c.validate();
  return c;
}

Region cloud_region(std::span<const PointCloud> clouds, double margin) {
  Region r{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
           -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& c : clouds) {
    if (c.empty()) continue;
    r.x0 = std::min(r.x0, c.points.col(0).minCoeff());
    r.y0 = std::min(r.y0, c.points.col(1).minCoeff());
    r.x1 = std::max(r.x1, c.points.col(0).maxCoeff());
    r.y1 = std::max(r.y1, c.points.col(1).maxCoeff());
  }
  return {std::floor(r.x0 - margin), std::floor(r.y0 - margin), std::ceil(r.x1 + margin), std::ceil(r.y1 + margin)};
}

int cmd_register(const RegisterArgs& a, const RunConfig& cfg, json meta) {
  const SimDataset data = io::load_dataset(a.dataset);
  meta["run_config"] = io::run_config_json(cfg);
  const RegistrationResult r = run_method(data, cfg);

  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  io::write_json(dir / "result.json", io::result_json(r, &data, meta));
  io::write_loss_csv(dir / "loss.csv", r, meta);
  const auto clouds = data.global_clouds(r.estimated_poses);
  io::write_cloud_csv(dir / "cloud.csv", clouds, meta);
  if (r.model) {
    const Region region = cloud_region(clouds, 4.0);
    const auto explored = explored_mask(region, a.map_resolution, clouds, r.estimated_poses);
    const MapImage map = rasterize_map(r.model->mnet, region, a.map_resolution, explored, r.model->scale);
    io::write_pgm(dir / "map.pgm", io::map_image(map));
    ad::save_checkpoint(dir / "lnet.json", r.model->lnet.named_parameters());
    ad::save_checkpoint(dir / "mnet.json", r.model->mnet.named_parameters());
  }
  std::cout << "method " << r.method << ", " << r.estimated_poses.size() << " poses, " << std::fixed
            << std::setprecision(3) << r.wall_time << " s";
  if (r.metrics) std::cout << ", ate " << r.metrics->ate << " px, point distance " << r.metrics->point_distance << " px";
  std::cout << "\nwrote " << (dir / "result.json").string() << "\n";
  return 0;
}

int cmd_evaluate(const EvaluateArgs& a, const json& meta) {
  std::vector<fs::path> files;
  for (const auto& in : a.inputs) {
    if (fs::is_directory(in)) {
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && e.path().filename() == "result.json") files.push_back(e.path());
      }
    } else {
      files.emplace_back(in);
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    std::cerr << "evaluate: no result files found\n";
    return kInputError;
  }
  std::vector<RegistrationResult> results;
  int width = a.world_width;
  for (const auto& f : files) {
    const json j = io::read_json(f);
    RegistrationResult r = io::result_from_json(j);
    if (!r.metrics) {
      std::cerr << "warning: " << f.string() << " has no ground truth, excluded\n";
      continue;
    }
    if (width == 0 && j.contains("world_width")) width = j["world_width"].get<int>();
    results.push_back(std::move(r));
  }
  if (results.empty()) {
    std::cerr << "evaluate: no results with ground truth\n";
    return kInputError;
  }
  double threshold = a.ate_threshold;
  if (threshold <= 0) {
    if (width <= 0) {
      std::cerr << "evaluate: world width unknown; pass --world-width or --ate-threshold\n";
      return kInputError;
    }
    threshold = a.ate_threshold_frac * width;
  }
  const SuiteReport rep = evaluate_suite(results, threshold);
  json m = meta;
  m["ate_threshold"] = threshold;
  m["files"] = files.size();
  std::ostringstream csv;
  csv << std::setprecision(17);
  io::write_report_csv(csv, rep, m);
  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) throw io::IoError("cannot write " + a.out);
    os << csv.str();
  }
  std::cout << std::left << std::setw(24) << "method" << std::right << std::setw(6) << "runs" << std::setw(12)
            << "ate_median" << std::setw(10) << "ate_q1" << std::setw(10) << "ate_q3" << std::setw(12) << "pd_median"
            << std::setw(10) << "success" << std::setw(10) << "wall_s" << "\n";
  std::cout << std::fixed << std::setprecision(3);
  for (const auto& s : rep.methods) {
    std::cout << std::left << std::setw(24) << s.method << std::right << std::setw(6) << s.runs << std::setw(12)
              << s.ate_median << std::setw(10) << s.ate_q1 << std::setw(10) << s.ate_q3 << std::setw(12)
              << s.point_distance_median << std::setw(10) << s.success_rate << std::setw(10) << s.wall_time_mean
              << "\n";
  }
  std::cout << "threshold " << threshold << " px\n";
  return 0;
}

int cmd_demo1d(const DemoArgs& a, const json& meta) {
  const Demo1DResult r = demo_1d(a.iterations, a.lr, a.seed);
  io::write_demo_csv(a.out, r, meta);
  std::cout << std::setprecision(10) << "x0 " << r.x0 << "\n"
            << "direct  L(x) = " << r.final_direct << " at x = " << r.x_direct.back() << "\n"
            << "network L(x) = " << r.final_net << " at x = " << r.x_net.back() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  deepmap::tune_allocator();
  CLI::App app{"Unsupervised multi-scan 2D Lidar registration"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Generate a world, trajectory and scans");
  s->add_option("--width", sim.width, "World width in pixels")->capture_default_str()->check(CLI::Range(32, 1 << 14));
  s->add_option("--height", sim.height, "World height in pixels")->capture_default_str()->check(CLI::Range(32, 1 << 14));
  s->add_option("--obstacles", sim.obstacles, "Random obstacles in a generated world")->capture_default_str();
  s->add_option("--world", sim.world_in, "Use this PGM world instead of generating one")->check(CLI::ExistingFile);
  s->add_option("--poses", sim.poses, "Trajectory length")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--beams", sim.beams, "Beams per scan")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--fov-deg", sim.fov_deg, "Field of view in degrees")->capture_default_str();
  s->add_option("--max-range", sim.max_range, "Sensor range in pixels, 0 = unlimited")->capture_default_str();
  s->add_option("--rot-max-deg", sim.rot_max_deg, "Max heading change per step, degrees")->capture_default_str();
  s->add_option("--trans-mean", sim.trans_mean, "Mean step length in pixels")->capture_default_str();
  s->add_option("--clearance", sim.clearance, "Min distance to obstacles in pixels")->capture_default_str();
  s->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  s->add_option("-o,--out", sim.out, "Output directory")->capture_default_str();

  RegisterArgs reg;
  auto* r = app.add_subcommand("register", "Register the scans of a dataset");
  r->add_option("dataset", reg.dataset, "Dataset JSON")->required()->check(CLI::ExistingFile);
  r->add_option("out", reg.out_dir, "Output directory")->required();
  r->add_option("--config", reg.config, "JSON run configuration, overridden by explicit flags")
      ->check(CLI::ExistingFile);
  r->add_option("--preset", reg.preset, "Network sizes: paper or desk")
      ->capture_default_str()
      ->check(CLI::IsMember({"paper", "desk"}));
  r->add_option("--method", reg.method, "deepmapping, direct, icp-point or icp-plane")
      ->capture_default_str()
      ->check(CLI::IsMember({"deepmapping", "direct", "icp-point", "icp-plane"}));
  r->add_option("--warm-start", reg.warm_start, "none, icp_point or icp_plane")
      ->capture_default_str()
      ->check(CLI::IsMember({"none", "icp_point", "icp_plane", "icp-point", "icp-plane"}));
  r->add_option("--lambda", reg.lambda, "Chamfer weight")->capture_default_str();
  r->add_option("--samples-per-ray", reg.samples_per_ray, "Free-space samples per beam")->capture_default_str();
  r->add_option("--batch", reg.batch, "Scans per optimisation step")->capture_default_str();
  r->add_option("--lr", reg.lr, "Adam learning rate")->capture_default_str();
  r->add_option("--epochs", reg.epochs, "Optimisation epochs (>= 1)")->capture_default_str();
  r->add_option("--seed", reg.seed, "Random seed")->capture_default_str();
  r->add_option("--scale", reg.scale, "Pixels per network unit, 0 = automatic")->capture_default_str();
  r->add_option("--checkpoint", reg.checkpoints, "Epochs whose poses are stored in the result");
  r->add_option("--map-resolution", reg.map_resolution, "Occupancy map cell size in pixels")->capture_default_str();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Summarise result files");
  e->add_option("results", ev.inputs, "Result JSON files or directories searched for result.json")->required();
  e->add_option("--ate-threshold-frac", ev.ate_threshold_frac, "Success threshold as a fraction of world width")
      ->capture_default_str();
  e->add_option("--ate-threshold", ev.ate_threshold, "Absolute success threshold in pixels, overrides the fraction");
  e->add_option("--world-width", ev.world_width, "World width when results do not record it");
  e->add_option("-o,--out", ev.out, "CSV report path");

  DemoArgs demo;
  auto* d = app.add_subcommand("demo1d", "Direct versus network-parameterised descent on a 1-d objective");
  d->add_option("--lr", demo.lr, "Learning rate")->capture_default_str();
  d->add_option("--iterations", demo.iterations, "Gradient steps")->capture_default_str()->check(CLI::PositiveNumber);
  d->add_option("--seed", demo.seed, "Random seed")->capture_default_str();
  d->add_option("-o,--out", demo.out, "Trace CSV path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kInputError;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim, flags_json(*s));
    if (r->parsed()) {
      RunConfig cfg;
      try {
        cfg = build_run_config(reg, *r);
      } catch (const std::invalid_argument& err) {
        std::cerr << "register: " << err.what() << "\n" << r->help();
        return kInputError;
      }
      return cmd_register(reg, cfg, flags_json(*r));
    }
    if (e->parsed()) return cmd_evaluate(ev, flags_json(*e));
    if (d->parsed()) return cmd_demo1d(demo, flags_json(*d));
  } catch (const NumericalError& err) {
    std::cerr << "numerical abort at " << err.what() << "\n";
    return kNumericalAbort;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kInputError;
  }
  return kInputError;
}
