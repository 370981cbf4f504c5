#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "ialstm/errors.hpp"

namespace ialstm {

enum class Units { world, normalized };

inline const char* to_string(Units u) { return u == Units::world ? "world" : "normalized"; }

// A 2-D position. World positions are in meters.
struct Position {
  double x = 0.0;
  double y = 0.0;
  Units units = Units::world;

  bool operator==(const Position&) const = default;
};

inline void require_units(const Position& p, Units expected, const char* where) {
  if (p.units != expected) {
    throw UnitsError(std::string(where) + ": expected " + to_string(expected) + " position, got " +
                     to_string(p.units));
  }
}

inline double distance(const Position& a, const Position& b) {
  if (a.units != b.units) throw UnitsError("distance between world and normalized positions");
  return std::hypot(a.x - b.x, a.y - b.y);
}

// Single-scale affine map world -> normalized: n = (p - center) * scale.
struct NormalizationTransform {
  double center_x = 0.0;
  double center_y = 0.0;
  double scale = 1.0;

  Position normalize(const Position& p) const {
    require_units(p, Units::world, "normalize");
    return {(p.x - center_x) * scale, (p.y - center_y) * scale, Units::normalized};
  }

  Position denormalize(const Position& p) const {
    require_units(p, Units::normalized, "denormalize");
    return {p.x / scale + center_x, p.y / scale + center_y, Units::world};
  }

  bool operator==(const NormalizationTransform&) const = default;
};

}  // namespace ialstm
