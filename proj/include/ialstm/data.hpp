#pragma once

// Annotation loading, scene normalization, 20-frame window cutting and
// leave-one-out splits.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ialstm/geometry.hpp"

namespace ialstm {

struct RawRecord {
  long frame_id = 0;
  int ped_id = 0;
  double x = 0.0;
  double y = 0.0;
};

enum class Delimiter { whitespace, comma };

struct FormatConfig {
  // Column roles in file order: "frame", "ped", "x", "y"; "_" skips a column.
  std::vector<std::string> columns{"frame", "ped", "x", "y"};
  Delimiter delimiter = Delimiter::whitespace;
  // Expected frame id step; 0 infers it as the gcd of observed gaps.
  long frame_stride = 0;
};

struct Observation {
  int ped_id = 0;
  Position position;

  bool operator==(const Observation&) const = default;
};

// Frames on a uniform id grid (gaps that are whole multiples of the stride
// become empty frames). Observations within a frame are sorted by ped id.
struct Scene {
  std::string name;
  std::vector<long> frame_ids;
  std::vector<std::vector<Observation>> frames;
  long stride = 1;
  Units units = Units::world;
  NormalizationTransform transform;  // world -> normalized; identity until normalized
  std::size_t duplicates_dropped = 0;

  std::size_t pedestrian_count() const;
  std::size_t frame_count() const { return frame_ids.size(); }
  std::size_t annotated_frame_count() const;
  // Frames with more than one pedestrian.
  std::size_t crowded_frame_count() const;
  std::size_t record_count() const;

  bool operator==(const Scene&) const = default;
};

Scene parse_dataset(std::istream& in, const FormatConfig& format, std::string name);
Scene load_dataset(const std::filesystem::path& path, const FormatConfig& format,
                   std::string name = {});

// Single-scale affine map sending the bounding box into [-1, 1]^2 with its
// center at the origin. DataError on a degenerate (single point) box.
Scene normalize_scene(const Scene& scene);

inline constexpr std::size_t kObsLen = 8;
inline constexpr std::size_t kPredLen = 12;

struct TrajectoryWindow {
  std::string dataset;
  std::size_t start_index = 0;  // index into the scene's frame list
  std::size_t obs_len = kObsLen;
  std::size_t pred_len = kPredLen;
  std::vector<long> frame_ids;
  // Pedestrians present in each frame, positions in the scene's units.
  std::vector<std::map<int, Position>> frames;
  // Present in every frame of the window, ascending.
  std::vector<int> targets;
  NormalizationTransform transform;

  std::size_t length() const { return obs_len + pred_len; }
};

std::vector<TrajectoryWindow> cut_windows(const Scene& scene, std::size_t obs_len = kObsLen,
                                          std::size_t pred_len = kPredLen, std::size_t stride = 1);

struct SplitPlan {
  std::vector<std::string> train;
  std::string test;
};

// Canonical dataset names in the leave-one-out rotation.
std::span<const std::string_view> canonical_datasets();

// Needs exactly five distinct dataset names; ConfigError if `held_out` is
// not among them.
SplitPlan leave_one_out(std::span<const std::string> dataset_names, std::string_view held_out);

struct ManifestEntry {
  std::string name;
  std::filesystem::path path;
  FormatConfig format;
};

// INI-style manifest: one [name] section per dataset with path, columns,
// delimiter and stride keys. Relative paths resolve against the manifest's
// directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

struct DatasetStats {
  std::string name;
  std::size_t pedestrians = 0;
  std::size_t frames = 0;
  std::size_t annotated_frames = 0;
  std::size_t crowded_frames = 0;
  std::size_t windows = 0;
  std::size_t window_targets = 0;
};

DatasetStats dataset_stats(const Scene& scene);
void write_stats_report(std::ostream& out, std::span<const DatasetStats> stats);

}  // namespace ialstm
