#pragma once

// File formats: binary PGM images, dataset and result JSON, CSV tables.
// Every JSON document and CSV file carries a "meta" block echoing the
// settings that produced it; in CSV files it is the first line, "# {json}".

#include "deepmap/pipeline.hpp"
#include "deepmap/simulator.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepmap::io {

using nlohmann::json;

/// Malformed or unreadable input.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);

/// Obstacles are black (0), free space white (255); on reading, pixels
/// below 128 are obstacles.
GrayImage world_image(const OccupancyWorld& world);
OccupancyWorld world_from_image(const GrayImage& img);

/// Error field as an 8-bit image: 0 error is white, `max_error` and above
/// black, non-free cells mid gray.
GrayImage error_image(const ErrorField& field, double max_error);
GrayImage map_image(const MapImage& map);

json pose_json(const Pose2& p);
Pose2 pose_from_json(const json& j);

json dataset_json(const SimDataset& data, const json& meta = json::object());
/// world_path inside the document is resolved against base_dir.
SimDataset dataset_from_json(const json& j, const std::filesystem::path& base_dir = {});

void save_dataset(const std::filesystem::path& path, const SimDataset& data, const json& meta = json::object());
SimDataset load_dataset(const std::filesystem::path& path);

json run_config_json(const RunConfig& cfg);
/// Fields absent from j keep the values in `base`.
RunConfig run_config_from_json(const json& j, RunConfig base = {});

json result_json(const RegistrationResult& r, const SimDataset* data, const json& meta = json::object());
/// Reads back poses, metrics, traces and wall time.
RegistrationResult result_from_json(const json& j);
RegistrationResult load_result(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

void write_loss_csv(const std::filesystem::path& path, const RegistrationResult& r, const json& meta);
/// One row per point: scan index, beam index, x, y in the estimated frame.
void write_cloud_csv(const std::filesystem::path& path, std::span<const PointCloud> clouds, const json& meta);
void write_report_csv(std::ostream& os, const SuiteReport& report, const json& meta);
void write_demo_csv(const std::filesystem::path& path, const Demo1DResult& r, const json& meta);

}  // namespace deepmap::io
