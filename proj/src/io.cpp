#include "deepmap/io.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

namespace deepmap::io {

namespace fs = std::filesystem;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, mode);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(17);
  return os;
}

// Field access with the JSON path in error messages.
const json& field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object()) throw IoError(where + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw IoError(where + ": missing field '" + key + "'");
  return *it;
}

double number(const json& j, const std::string& where) {
  if (!j.is_number()) throw IoError(where + ": expected a number");
  return j.get<double>();
}

Points2 points_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw IoError(where + ": expected an array of [x, y]");
  Points2 p(static_cast<Index>(j.size()), 2);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string w = where + "[" + std::to_string(i) + "]";
    if (!j[i].is_array() || j[i].size() != 2) throw IoError(w + ": expected [x, y]");
    p(static_cast<Index>(i), 0) = number(j[i][0], w);
    p(static_cast<Index>(i), 1) = number(j[i][1], w);
  }
  return p;
}

json points_json(const Points2& p) {
  json a = json::array();
  for (Index i = 0; i < p.rows(); ++i) a.push_back({p(i, 0), p(i, 1)});
  return a;
}

void write_meta_line(std::ostream& os, const json& meta) { os << "# " << meta.dump() << "\n"; }

json trajectory_json(const Trajectory& t) {
  json a = json::array();
  for (const auto& p : t) a.push_back(pose_json(p));
  return a;
}

Trajectory trajectory_from_json(const json& j) {
  Trajectory t;
  for (const auto& p : j) t.push_back(pose_from_json(p));
  return t;
}

}  // namespace

// ---- images -----------------------------------------------------------------

void write_pgm(const fs::path& path, const GrayImage& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height) {
    throw std::invalid_argument("write_pgm: pixel count does not match size");
  }
  auto os = open_out(path, std::ios::out | std::ios::binary);
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

GrayImage read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  auto token = [&]() {
    std::string t;
    while (is >> std::ws && is.peek() == '#') {
      std::string comment;
      std::getline(is, comment);
    }
    is >> t;
    return t;
  };
  if (token() != "P5") throw IoError(path.string() + ": not a binary PGM (P5)");
  GrayImage img;
  int maxval = 0;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PGM header");
  }
  if (img.width <= 0 || img.height <= 0 || maxval != 255) {
    throw IoError(path.string() + ": unsupported PGM (need positive size and maxval 255)");
  }
  is.get();  // single whitespace after the header
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw IoError(path.string() + ": truncated");
  return img;
}

GrayImage world_image(const OccupancyWorld& world) {
  GrayImage img{world.width(), world.height(), {}};
  img.pixels.reserve(world.cells().size());
  for (auto c : world.cells()) img.pixels.push_back(c ? 0 : 255);
  return img;
}

OccupancyWorld world_from_image(const GrayImage& img) {
  std::vector<std::uint8_t> cells;
  cells.reserve(img.pixels.size());
  for (auto p : img.pixels) cells.push_back(p < 128 ? 1 : 0);
  return OccupancyWorld(img.width, img.height, std::move(cells));
}

GrayImage error_image(const ErrorField& field, double max_error) {
  if (!(max_error > 0)) throw std::invalid_argument("error_image: max_error must be positive");
  GrayImage img{field.width, field.height, {}};
  for (double e : field.error) {
    if (std::isnan(e)) {
      img.pixels.push_back(128);
    } else {
      const double t = std::min(e / max_error, 1.0);
      img.pixels.push_back(static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - t))));
    }
  }
  return img;
}

GrayImage map_image(const MapImage& map) { return {map.width, map.height, map.pixels}; }

// ---- datasets ---------------------------------------------------------------

json pose_json(const Pose2& p) { return json::array({p.tx, p.ty, p.alpha}); }

Pose2 pose_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw IoError("pose: expected [tx, ty, alpha]");
  return {number(j[0], "pose"), number(j[1], "pose"), number(j[2], "pose")};
}

json dataset_json(const SimDataset& data, const json& meta) {
  json j;
  j["meta"] = meta;
  j["world"] = data.world_path;
  j["seed"] = data.seed;
  j["sensor"] = {{"n_beams", data.sensor.n_beams},
                 {"fov_deg", data.sensor.fov / kDeg},
                 {"max_range", std::isfinite(data.sensor.max_range) ? json(data.sensor.max_range) : json(nullptr)}};
  json frames = json::array();
  for (const auto& f : data.frames) {
    json fr;
    if (data.has_ground_truth) fr["pose"] = pose_json(f.pose);
    fr["points"] = points_json(f.points.points);
    frames.push_back(std::move(fr));
  }
  j["frames"] = std::move(frames);
  return j;
}

SimDataset dataset_from_json(const json& j, const fs::path& base_dir) {
  SimDataset d;
  const json& world = field(j, "world", "dataset");
  if (!world.is_string()) throw IoError("dataset.world: expected a path string");
  d.world_path = world.get<std::string>();
  if (j.contains("seed")) d.seed = field(j, "seed", "dataset").get<std::uint64_t>();
  const json& sensor = field(j, "sensor", "dataset");
  d.sensor.n_beams = static_cast<int>(number(field(sensor, "n_beams", "dataset.sensor"), "dataset.sensor.n_beams"));
  d.sensor.fov = number(field(sensor, "fov_deg", "dataset.sensor"), "dataset.sensor.fov_deg") * kDeg;
  if (sensor.contains("max_range") && !sensor["max_range"].is_null()) {
    d.sensor.max_range = number(sensor["max_range"], "dataset.sensor.max_range");
  }
  const json& frames = field(j, "frames", "dataset");
  if (!frames.is_array()) throw IoError("dataset.frames: expected an array");
  d.has_ground_truth = true;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string w = "dataset.frames[" + std::to_string(i) + "]";
    ScanFrame f;
    if (frames[i].contains("pose")) {
      try {
        f.pose = pose_from_json(frames[i]["pose"]);
      } catch (const IoError& e) {
        throw IoError(w + "." + e.what());
      }
    } else {
      d.has_ground_truth = false;
    }
    f.points.points = points_from_json(field(frames[i], "points", w), w + ".points");
    d.frames.push_back(std::move(f));
  }
  if (!d.world_path.empty()) {
    const fs::path wp = fs::path(d.world_path).is_absolute() ? fs::path(d.world_path) : base_dir / d.world_path;
    if (fs::exists(wp)) d.world = world_from_image(read_pgm(wp));
  }
  return d;
}

void save_dataset(const fs::path& path, const SimDataset& data, const json& meta) {
  write_json(path, dataset_json(data, meta));
}

SimDataset load_dataset(const fs::path& path) { return dataset_from_json(read_json(path), path.parent_path()); }

void write_json(const fs::path& path, const json& j) {
  auto os = open_out(path);
  os << j.dump(1) << "\n";
  if (!os) throw IoError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// ---- run configuration -------------------------------------------------------

json run_config_json(const RunConfig& c) {
  json j;
  j["method"] = method_name(c.method);
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["lambda"] = c.loss.lambda;
  j["samples_per_ray"] = c.loss.samples_per_ray;
  j["neighbor_window"] = c.loss.neighbor_window;
  j["seed"] = c.seed;
  j["warm_start"] = warm_start_name(c.warm_start);
  j["scale"] = c.scale;
  j["checkpoints"] = c.checkpoints;
  j["lnet"] = {{"variant", c.lnet.variant == LNetVariant::Conv ? "conv" : "pointwise"},
               {"features", c.lnet.features},
               {"head", c.lnet.head},
               {"kernel", c.lnet.kernel},
               {"dilation", c.lnet.dilation},
               {"gain", c.lnet.gain},
               {"output_gain", c.lnet.output_gain}};
  j["mnet"] = {{"hidden", c.mnet.hidden}, {"gain", c.mnet.gain}};
  j["icp"] = {{"max_iter", c.icp.max_iter},
              {"tol", c.icp.tol},
              {"max_correspondence", c.icp.max_correspondence},
              {"normal_neighbors", c.icp.normal_neighbors}};
  return j;
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  if (!j.is_object()) throw IoError("config: expected an object");
  try {
    if (j.contains("method")) c.method = parse_method(j["method"].get<std::string>());
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("lambda")) c.loss.lambda = j["lambda"].get<double>();
    if (j.contains("samples_per_ray")) c.loss.samples_per_ray = j["samples_per_ray"].get<int>();
    if (j.contains("neighbor_window")) c.loss.neighbor_window = j["neighbor_window"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("warm_start")) c.warm_start = parse_warm_start(j["warm_start"].get<std::string>());
    if (j.contains("scale")) c.scale = j["scale"].get<double>();
    if (j.contains("checkpoints")) c.checkpoints = j["checkpoints"].get<std::vector<int>>();
    if (j.contains("lnet")) {
      const json& l = j["lnet"];
      if (l.contains("variant")) {
        const auto v = l["variant"].get<std::string>();
        if (v != "conv" && v != "pointwise") throw IoError("config.lnet.variant: expected conv or pointwise");
        c.lnet.variant = v == "conv" ? LNetVariant::Conv : LNetVariant::Pointwise;
      }
      if (l.contains("features")) c.lnet.features = l["features"].get<std::vector<int>>();
      if (l.contains("head")) c.lnet.head = l["head"].get<std::vector<int>>();
      if (l.contains("kernel")) c.lnet.kernel = l["kernel"].get<int>();
      if (l.contains("dilation")) c.lnet.dilation = l["dilation"].get<int>();
      if (l.contains("gain")) c.lnet.gain = l["gain"].get<double>();
      if (l.contains("output_gain")) c.lnet.output_gain = l["output_gain"].get<double>();
    }
    if (j.contains("mnet")) {
      const json& m = j["mnet"];
      if (m.contains("hidden")) c.mnet.hidden = m["hidden"].get<std::vector<int>>();
      if (m.contains("gain")) c.mnet.gain = m["gain"].get<double>();
    }
    if (j.contains("icp")) {
      const json& i = j["icp"];
      if (i.contains("max_iter")) c.icp.max_iter = i["max_iter"].get<int>();
      if (i.contains("tol")) c.icp.tol = i["tol"].get<double>();
      if (i.contains("max_correspondence")) c.icp.max_correspondence = i["max_correspondence"].get<double>();
      if (i.contains("normal_neighbors")) c.icp.normal_neighbors = i["normal_neighbors"].get<int>();
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("config: ") + e.what());
  }
  return c;
}

// ---- results ----------------------------------------------------------------

json result_json(const RegistrationResult& r, const SimDataset* data, const json& meta) {
  json j;
  j["meta"] = meta;
  j["method"] = r.method;
  j["config"] = run_config_json(r.config);
  j["poses"] = trajectory_json(r.estimated_poses);
  j["loss_trace"] = r.loss_trace;
  j["ate_trace"] = r.ate_trace;
  j["wall_time"] = r.wall_time;
  if (r.metrics) {
    j["metrics"] = {{"ate", r.metrics->ate}, {"point_distance", r.metrics->point_distance}};
  } else {
    j["metrics"] = nullptr;
  }
  if (r.alignment) j["alignment"] = pose_json(*r.alignment);
  json cps = json::array();
  for (const auto& c : r.checkpoints) {
    cps.push_back({{"epoch", c.epoch}, {"poses", trajectory_json(c.poses)}, {"ate", c.ate ? json(*c.ate) : json(nullptr)}});
  }
  j["checkpoints"] = std::move(cps);
  if (data) {
    if (data->has_ground_truth) j["ground_truth"] = trajectory_json(data->ground_truth());
    if (data->world) j["world_width"] = data->world->width();
  }
  return j;
}

RegistrationResult result_from_json(const json& j) {
  RegistrationResult r;
  try {
    r.method = field(j, "method", "result").get<std::string>();
    r.estimated_poses = trajectory_from_json(field(j, "poses", "result"));
    if (j.contains("loss_trace")) r.loss_trace = j["loss_trace"].get<std::vector<double>>();
    if (j.contains("ate_trace")) r.ate_trace = j["ate_trace"].get<std::vector<double>>();
    if (j.contains("wall_time")) r.wall_time = j["wall_time"].get<double>();
    if (j.contains("metrics") && !j["metrics"].is_null()) {
      r.metrics = Metrics{j["metrics"]["ate"].get<double>(), j["metrics"]["point_distance"].get<double>()};
    }
    if (j.contains("alignment")) r.alignment = pose_from_json(j["alignment"]);
    if (j.contains("config")) r.config = run_config_from_json(j["config"]);
  } catch (const json::exception& e) {
    throw IoError(std::string("result: ") + e.what());
  }
  return r;
}

RegistrationResult load_result(const fs::path& path) {
  try {
    return result_from_json(read_json(path));
  } catch (const IoError& e) {
    const std::string what = e.what();
    if (what.rfind(path.string(), 0) == 0) throw;
    throw IoError(path.string() + ": " + what);
  }
}

// ---- CSV --------------------------------------------------------------------

void write_loss_csv(const fs::path& path, const RegistrationResult& r, const json& meta) {
  auto os = open_out(path);
  write_meta_line(os, meta);
  os << "epoch,loss" << (r.ate_trace.empty() ? "" : ",ate") << "\n";
  for (std::size_t e = 0; e < r.loss_trace.size(); ++e) {
    os << e << "," << r.loss_trace[e];
    if (e < r.ate_trace.size()) os << "," << r.ate_trace[e];
    os << "\n";
  }
}

void write_cloud_csv(const fs::path& path, std::span<const PointCloud> clouds, const json& meta) {
  auto os = open_out(path);
  write_meta_line(os, meta);
  os << "scan,beam,x,y\n";
  for (std::size_t k = 0; k < clouds.size(); ++k) {
    for (Index i = 0; i < clouds[k].size(); ++i) {
      os << k << "," << i << "," << clouds[k].points(i, 0) << "," << clouds[k].points(i, 1) << "\n";
    }
  }
}

void write_report_csv(std::ostream& os, const SuiteReport& report, const json& meta) {
  write_meta_line(os, meta);
  os << "method,runs,ate_median,ate_q1,ate_q3,point_distance_median,success_rate,wall_time_mean\n";
  for (const auto& m : report.methods) {
    os << m.method << "," << m.runs << "," << m.ate_median << "," << m.ate_q1 << "," << m.ate_q3 << ","
       << m.point_distance_median << "," << m.success_rate << "," << m.wall_time_mean << "\n";
  }
}

void write_demo_csv(const fs::path& path, const Demo1DResult& r, const json& meta) {
  auto os = open_out(path);
  write_meta_line(os, meta);
  os << "iteration,x_direct,x_net,z\n";
  for (std::size_t i = 0; i < r.x_direct.size(); ++i) {
    os << i << "," << r.x_direct[i] << "," << r.x_net[i] << "," << r.z[i] << "\n";
  }
}

}  // namespace deepmap::io
