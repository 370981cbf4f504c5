#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ialstm/data.hpp"

namespace ialstm::testing {

struct Walker {
  int id;
  long first_frame;  // index, not id
  long frames;
  double x0, y0, vx, vy;
};

// Whitespace annotation text with frame ids 10 apart.
inline std::string annotations(const std::vector<Walker>& walkers) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& w : walkers) {
    for (long k = 0; k < w.frames; ++k) {
      out << (w.first_frame + k) * 10 << ' ' << w.id << ' ' << w.x0 + w.vx * k << ' '
          << w.y0 + w.vy * k << '\n';
    }
  }
  return out.str();
}

inline Scene scene_of(const std::vector<Walker>& walkers, const std::string& name = "synthetic") {
  std::istringstream in(annotations(walkers));
  return parse_dataset(in, FormatConfig{}, name);
}

// A small crowd of straight walkers with random starts and velocities.
inline std::vector<Walker> random_walkers(std::mt19937_64& rng, int count, long length) {
  std::uniform_real_distribution<double> pos(-6.0, 6.0), vel(-0.5, 0.5);
  std::uniform_int_distribution<long> start(0, 6);
  std::vector<Walker> out;
  for (int i = 0; i < count; ++i) {
    out.push_back({i + 1, start(rng), length, pos(rng), pos(rng), vel(rng), vel(rng)});
  }
  return out;
}

// Normalized windows cut from a few straight walkers.
inline std::vector<TrajectoryWindow> synthetic_windows(std::uint64_t seed, int walkers = 3,
                                                       long length = 22) {
  std::mt19937_64 rng(seed);
  return cut_windows(normalize_scene(scene_of(random_walkers(rng, walkers, length))));
}

// Five small straight-walker scenes under the canonical names plus a
// manifest listing them. Returns the manifest path.
inline std::filesystem::path write_synthetic_manifest(const std::filesystem::path& dir,
                                                      int walkers = 3, long length = 24) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.ini");
  std::uint64_t seed = 100;
  for (const char* name : {"eth", "hotel", "zara01", "zara02", "ucy"}) {
    std::mt19937_64 rng(seed++);
    std::ofstream(dir / (std::string(name) + ".txt")) << annotations(random_walkers(rng, walkers, length));
    manifest << '[' << name << "]\npath = " << name << ".txt\n\n";
  }
  return dir / "manifest.ini";
}

}  // namespace ialstm::testing
