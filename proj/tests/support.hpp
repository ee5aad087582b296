#pragma once

// Shared fixtures for the test suites.

#include <filesystem>
#include <string>

#include "canonvote/canonvote.hpp"

namespace canonvote::testing {

/// Three furniture-like classes: asymmetric chairs, order-2 tables, order-4 bins.
inline SceneRecipe furniture_recipe(int points_min = 500, int points_max = 800, int background = 3000) {
  SceneRecipe r;
  r.classes = {{"chair", 1, 0, 2, Vec3(0.25, 0.35, 0.25), Vec3(0.4, 0.5, 0.4)},
               {"table", 2, 0, 2, Vec3(0.4, 0.3, 0.3), Vec3(0.8, 0.45, 0.6)},
               {"bin", 4, 0, 2, Vec3(0.15, 0.25, 0.15), Vec3(0.25, 0.4, 0.25)}};
  r.total_min = 1;
  r.total_max = 6;
  r.floor_x = r.floor_z = 5.0;
  r.points_min = points_min;
  r.points_max = points_max;
  r.background_points = background;
  return r;
}

/// A recipe producing exactly one box of the given class index.
inline SceneRecipe single_box_recipe(int class_index, int points, int background = 0) {
  SceneRecipe r = furniture_recipe(points, points, background);
  for (auto& c : r.classes) c.count_min = c.count_max = 0;
  r.classes[static_cast<std::size_t>(class_index)].count_min = 1;
  r.classes[static_cast<std::size_t>(class_index)].count_max = 1;
  r.total_min = r.total_max = 1;
  return r;
}

inline DetectConfig config_for(const Scene& scene, double delta) {
  DetectConfig cfg;
  cfg.boxgen.delta = delta;
  for (const auto& c : scene.classes) cfg.boxgen.symmetry_order[c.id] = c.symmetry_order;
  return cfg;
}

inline BoxPose random_pose(SplitMix64& rng) {
  return BoxPose::make(Vec3(rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0)),
                       rng.uniform(-10.0, 10.0),
                       Vec3(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)));
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("canonvote_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace canonvote::testing
