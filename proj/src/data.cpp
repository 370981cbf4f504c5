#include "ialstm/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace ialstm {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split_fields(const std::string& line, Delimiter delimiter) {
  std::vector<std::string> fields;
  if (delimiter == Delimiter::whitespace) {
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) fields.push_back(tok);
  } else {
    std::string tok;
    std::istringstream in(line);
    while (std::getline(in, tok, ',')) fields.push_back(trim(tok));
  }
  return fields;
}

double parse_number(const std::string& tok, std::size_t line, const char* column) {
  double v = 0.0;
  const char* begin = tok.data();
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line) + ": bad " + column + " value '" + tok + "'",
                     line);
  }
  return v;
}

long parse_integral(const std::string& tok, std::size_t line, const char* column) {
  const double v = parse_number(tok, line, column);
  const double r = std::round(v);
  if (std::abs(v - r) > 1e-6) {
    throw ParseError("line " + std::to_string(line) + ": " + column + " '" + tok +
                         "' is not an integer",
                     line);
  }
  return static_cast<long>(r);
}

struct ColumnMap {
  std::size_t frame = 0, ped = 0, x = 0, y = 0, width = 0;
};

ColumnMap column_map(const FormatConfig& format) {
  std::array<int, 4> where{-1, -1, -1, -1};
  const std::array<std::string_view, 4> roles{"frame", "ped", "x", "y"};
  for (std::size_t i = 0; i < format.columns.size(); ++i) {
    const std::string& c = format.columns[i];
    if (c == "_") continue;
    auto it = std::find(roles.begin(), roles.end(), c);
    if (it == roles.end()) throw ConfigError("unknown column role '" + c + "'");
    auto& slot = where[static_cast<std::size_t>(it - roles.begin())];
    if (slot >= 0) throw ConfigError("column role '" + c + "' given twice");
    slot = static_cast<int>(i);
  }
  for (std::size_t r = 0; r < roles.size(); ++r) {
    if (where[r] < 0) throw ConfigError("column order lacks '" + std::string(roles[r]) + "'");
  }
  return {static_cast<std::size_t>(where[0]), static_cast<std::size_t>(where[1]),
          static_cast<std::size_t>(where[2]), static_cast<std::size_t>(where[3]),
          format.columns.size()};
}

}  // namespace

std::size_t Scene::pedestrian_count() const {
  std::set<int> ids;
  for (const auto& frame : frames)
    for (const auto& o : frame) ids.insert(o.ped_id);
  return ids.size();
}

std::size_t Scene::annotated_frame_count() const {
  return static_cast<std::size_t>(
      std::count_if(frames.begin(), frames.end(), [](const auto& f) { return !f.empty(); }));
}

std::size_t Scene::crowded_frame_count() const {
  return static_cast<std::size_t>(
      std::count_if(frames.begin(), frames.end(), [](const auto& f) { return f.size() > 1; }));
}

std::size_t Scene::record_count() const {
  std::size_t n = 0;
  for (const auto& f : frames) n += f.size();
  return n;
}

Scene parse_dataset(std::istream& in, const FormatConfig& format, std::string name) {
  const ColumnMap cols = column_map(format);
  std::vector<RawRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string content = trim(line);
    if (content.empty() || content.front() == '#') continue;
    const auto fields = split_fields(content, format.delimiter);
    if (fields.size() != cols.width) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                           std::to_string(cols.width) + " fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    RawRecord r;
    r.frame_id = parse_integral(fields[cols.frame], line_no, "frame");
    r.ped_id = static_cast<int>(parse_integral(fields[cols.ped], line_no, "ped"));
    r.x = parse_number(fields[cols.x], line_no, "x");
    r.y = parse_number(fields[cols.y], line_no, "y");
    records.push_back(r);
  }

  Scene scene;
  scene.name = std::move(name);
  if (records.empty()) {
    scene.stride = format.frame_stride > 0 ? format.frame_stride : 1;
    return scene;
  }

  // Keep the first occurrence of every (frame, ped) pair.
  std::stable_sort(records.begin(), records.end(), [](const RawRecord& a, const RawRecord& b) {
    return a.frame_id != b.frame_id ? a.frame_id < b.frame_id : a.ped_id < b.ped_id;
  });
  std::vector<RawRecord> unique;
  unique.reserve(records.size());
  for (const auto& r : records) {
    if (!unique.empty() && unique.back().frame_id == r.frame_id && unique.back().ped_id == r.ped_id) {
      ++scene.duplicates_dropped;
      continue;
    }
    unique.push_back(r);
  }

  std::vector<long> ids;
  for (const auto& r : unique)
    if (ids.empty() || ids.back() != r.frame_id) ids.push_back(r.frame_id);

  long stride = format.frame_stride;
  if (stride <= 0) {
    stride = 0;
    for (std::size_t i = 1; i < ids.size(); ++i) stride = std::gcd(stride, ids[i] - ids[i - 1]);
    if (stride == 0) stride = 1;
  } else {
    std::vector<std::string> bad;
    for (std::size_t i = 1; i < ids.size(); ++i) {
      const long gap = ids[i] - ids[i - 1];
      if (gap % stride != 0) {
        bad.push_back(std::to_string(ids[i - 1]) + "->" + std::to_string(ids[i]));
      }
    }
    if (!bad.empty()) {
      std::string msg = "frame ids are not on a stride of " + std::to_string(stride) +
                        "; offending gaps:";
      for (std::size_t i = 0; i < bad.size() && i < 10; ++i) msg += " " + bad[i];
      if (bad.size() > 10) msg += " (+" + std::to_string(bad.size() - 10) + " more)";
      throw StrideError(msg);
    }
  }
  scene.stride = stride;

  const long first = ids.front();
  const std::size_t n_frames = static_cast<std::size_t>((ids.back() - first) / stride) + 1;
  scene.frame_ids.resize(n_frames);
  scene.frames.resize(n_frames);
  for (std::size_t k = 0; k < n_frames; ++k) scene.frame_ids[k] = first + static_cast<long>(k) * stride;
  for (const auto& r : unique) {
    const auto k = static_cast<std::size_t>((r.frame_id - first) / stride);
    scene.frames[k].push_back({r.ped_id, Position{r.x, r.y, Units::world}});
  }
  return scene;
}

Scene load_dataset(const std::filesystem::path& path, const FormatConfig& format, std::string name) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  if (name.empty()) name = path.stem().string();
  try {
    return parse_dataset(in, format, std::move(name));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  } catch (const StrideError& e) {
    throw StrideError(path.string() + ": " + e.what());
  }
}

Scene normalize_scene(const Scene& scene) {
  if (scene.units != Units::world) throw UnitsError("normalize_scene: scene is already normalized");
  if (scene.record_count() == 0) throw DataError("normalize_scene: scene '" + scene.name + "' is empty");
  double min_x = INFINITY, min_y = INFINITY, max_x = -INFINITY, max_y = -INFINITY;
  for (const auto& f : scene.frames) {
    for (const auto& o : f) {
      min_x = std::min(min_x, o.position.x);
      max_x = std::max(max_x, o.position.x);
      min_y = std::min(min_y, o.position.y);
      max_y = std::max(max_y, o.position.y);
    }
  }
  const double extent = std::max(max_x - min_x, max_y - min_y);
  if (!(extent > 0.0)) {
    throw DataError("normalize_scene: degenerate bounding box in scene '" + scene.name + "'");
  }
  NormalizationTransform t{0.5 * (min_x + max_x), 0.5 * (min_y + max_y), 2.0 / extent};
  Scene out = scene;
  out.units = Units::normalized;
  out.transform = t;
  for (auto& f : out.frames)
    for (auto& o : f) o.position = t.normalize(o.position);
  return out;
}

std::vector<TrajectoryWindow> cut_windows(const Scene& scene, std::size_t obs_len,
                                          std::size_t pred_len, std::size_t stride) {
  if (stride == 0) throw ConfigError("cut_windows: stride must be positive");
  std::vector<TrajectoryWindow> windows;
  const std::size_t len = obs_len + pred_len;
  if (len == 0 || scene.frames.size() < len) return windows;
  for (std::size_t start = 0; start + len <= scene.frames.size(); start += stride) {
    std::map<int, std::size_t> presence;
    for (std::size_t k = start; k < start + len; ++k)
      for (const auto& o : scene.frames[k]) ++presence[o.ped_id];
    std::vector<int> targets;
    for (const auto& [id, count] : presence)
      if (count == len) targets.push_back(id);
    if (targets.empty()) continue;

    TrajectoryWindow w;
    w.dataset = scene.name;
    w.start_index = start;
    w.obs_len = obs_len;
    w.pred_len = pred_len;
    w.targets = std::move(targets);
    w.transform = scene.transform;
    for (std::size_t k = start; k < start + len; ++k) {
      w.frame_ids.push_back(scene.frame_ids[k]);
      std::map<int, Position> frame;
      for (const auto& o : scene.frames[k]) frame.emplace(o.ped_id, o.position);
      w.frames.push_back(std::move(frame));
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

std::span<const std::string_view> canonical_datasets() {
  static constexpr std::array<std::string_view, 5> names{"eth", "hotel", "zara01", "zara02", "ucy"};
  return names;
}

SplitPlan leave_one_out(std::span<const std::string> dataset_names, std::string_view held_out) {
  if (dataset_names.size() != 5) {
    throw ConfigError("leave-one-out needs exactly five datasets, got " +
                      std::to_string(dataset_names.size()));
  }
  std::set<std::string> seen;
  for (const auto& n : dataset_names) {
    if (!seen.insert(lower(n)).second) throw ConfigError("dataset '" + n + "' listed twice");
  }
  const std::string wanted = lower(std::string(held_out));
  SplitPlan plan;
  for (const auto& n : dataset_names) {
    if (lower(n) == wanted) {
      plan.test = n;
    } else {
      plan.train.push_back(n);
    }
  }
  if (plan.test.empty()) {
    std::string known;
    for (const auto& n : dataset_names) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown held-out dataset '" + std::string(held_out) + "' (known: " + known +
                      ")");
  }
  return plan;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError(path.string() + ":" + std::to_string(line_no) + ": " + msg, line_no);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string content = trim(line);
    if (content.empty() || content.front() == '#' || content.front() == ';') continue;
    if (content.front() == '[') {
      if (content.back() != ']') throw fail("unterminated section header");
      ManifestEntry e;
      e.name = trim(std::string_view(content).substr(1, content.size() - 2));
      if (e.name.empty()) throw fail("empty dataset name");
      for (const auto& other : entries)
        if (other.name == e.name) throw fail("dataset '" + e.name + "' declared twice");
      entries.push_back(std::move(e));
      continue;
    }
    const auto eq = content.find('=');
    if (eq == std::string::npos) throw fail("expected key = value");
    if (entries.empty()) throw fail("key outside of a [dataset] section");
    const std::string key = lower(trim(std::string_view(content).substr(0, eq)));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    ManifestEntry& e = entries.back();
    if (key == "path") {
      std::filesystem::path p(value);
      e.path = p.is_absolute() ? p : base / p;
    } else if (key == "columns") {
      std::istringstream cs(value);
      std::vector<std::string> cols;
      std::string c;
      while (cs >> c) cols.push_back(c);
      e.format.columns = std::move(cols);
    } else if (key == "delimiter") {
      if (value == "whitespace") {
        e.format.delimiter = Delimiter::whitespace;
      } else if (value == "comma") {
        e.format.delimiter = Delimiter::comma;
      } else {
        throw fail("delimiter must be 'whitespace' or 'comma'");
      }
    } else if (key == "stride") {
      long s = 0;
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), s);
      if (ec != std::errc() || ptr != value.data() + value.size() || s < 0) {
        throw fail("stride must be a non-negative integer");
      }
      e.format.frame_stride = s;
    } else {
      throw fail("unknown key '" + key + "'");
    }
  }
  for (const auto& e : entries) {
    if (e.path.empty()) throw DataError(path.string() + ": dataset '" + e.name + "' has no path");
  }
  if (entries.empty()) throw DataError(path.string() + ": manifest lists no datasets");
  return entries;
}

DatasetStats dataset_stats(const Scene& scene) {
  DatasetStats s;
  s.name = scene.name;
  s.pedestrians = scene.pedestrian_count();
  s.frames = scene.frame_count();
  s.annotated_frames = scene.annotated_frame_count();
  s.crowded_frames = scene.crowded_frame_count();
  const auto windows = cut_windows(scene);
  s.windows = windows.size();
  for (const auto& w : windows) s.window_targets += w.targets.size();
  return s;
}

void write_stats_report(std::ostream& out, std::span<const DatasetStats> stats) {
  out << "dataset\tpedestrians\tframes\tannotated_frames\tcrowded_frames\twindows\twindow_targets\n";
  for (const auto& s : stats) {
    out << s.name << '\t' << s.pedestrians << '\t' << s.frames << '\t' << s.annotated_frames << '\t'
        << s.crowded_frames << '\t' << s.windows << '\t' << s.window_targets << '\n';
  }
}

}  // namespace ialstm
