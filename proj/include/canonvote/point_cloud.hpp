#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "canonvote/common.hpp"

namespace canonvote {

using Rgb = std::array<std::uint8_t, 3>;

/// Scene points in world coordinates (meters), with optional per-point color.
struct PointCloud {
  std::vector<Vec3> positions;
  std::optional<std::vector<Rgb>> colors;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }

  /// Axis-aligned bounds; requires a non-empty cloud.
  std::pair<Vec3, Vec3> bounds() const {
    if (positions.empty()) throw InputError("PointCloud::bounds: empty cloud");
    Vec3 lo = positions.front();
    Vec3 hi = positions.front();
    for (const Vec3& p : positions) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    return {lo, hi};
  }
};

}  // namespace canonvote
