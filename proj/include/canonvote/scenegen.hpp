#pragma once

// Synthetic scenes: boxes resting on a floor, surface-sampled points,
// floor and wall clutter, and occlusion by cutting plane plus thinning.

#include <string>
#include <vector>

#include "canonvote/geometry.hpp"
#include "canonvote/point_cloud.hpp"

namespace canonvote {

inline constexpr int kBackground = -1;

struct ClassInfo {
  int id = 0;
  std::string name;
  int symmetry_order = 1;
};

struct GroundTruthBox {
  OrientedBox box;
  int symmetry_order = 1;
};

struct Scene {
  std::vector<GroundTruthBox> boxes;
  /// Per-point box index, or kBackground.
  std::vector<int> point_instance;
  std::vector<ClassInfo> classes;

  int num_classes() const { return static_cast<int>(classes.size()); }

  int symmetry_of_class(int class_id) const {
    for (const ClassInfo& c : classes) {
      if (c.id == class_id) return c.symmetry_order;
    }
    return 1;
  }

  std::vector<OrientedBox> ground_truth() const {
    std::vector<OrientedBox> out;
    out.reserve(boxes.size());
    for (const auto& b : boxes) out.push_back(b.box);
    return out;
  }

  /// Checks the instance table and the strict containment of object points.
  void validate(const PointCloud& cloud) const {
    if (point_instance.size() != cloud.size()) {
      throw InputError("Scene: point_instance length does not match the cloud");
    }
    for (std::size_t i = 0; i < point_instance.size(); ++i) {
      const int inst = point_instance[i];
      if (inst == kBackground) continue;
      if (inst < 0 || inst >= static_cast<int>(boxes.size())) {
        throw InputError("Scene: point " + std::to_string(i) + " references missing box " +
                         std::to_string(inst));
      }
      const Vec3 l = world_to_lcc(boxes[static_cast<std::size_t>(inst)].box.pose, cloud.positions[i]);
      if (!strictly_inside_unit_cube(l)) {
        throw InputError("Scene: point " + std::to_string(i) + " lies outside its box");
      }
    }
  }
};

struct ClassRecipe {
  std::string name;
  int symmetry_order = 1;
  int count_min = 1;
  int count_max = 1;
  Vec3 scale_min = Vec3::Constant(0.25);
  Vec3 scale_max = Vec3::Constant(0.5);
};

struct SceneRecipe {
  std::vector<ClassRecipe> classes;
  /// Floor spans [-x/2, x/2] x [-z/2, z/2] at y = 0.
  double floor_x = 4.0;
  double floor_z = 4.0;
  /// Gap between box footprint circumcircles, meters.
  double clearance = 0.3;
  int points_min = 500;
  int points_max = 800;
  int background_points = 2000;
  /// Fraction of background points on walls rather than the floor.
  double wall_fraction = 0.3;
  double wall_height = 2.0;
  /// Floor points within this margin of a footprint are treated as occluded.
  double floor_margin = 0.1;
  /// Canonical face coordinate of surface samples (strictly below 1).
  double surface_inset = 0.99;
  int max_attempts = 2000;
  /// Fraction of removed points taken by the cutting plane during occlusion.
  double occlusion_plane_fraction = 0.7;
  /// Total boxes per scene is clamped to this range after per-class draws.
  int total_min = 0;
  int total_max = 1 << 20;

  void validate() const {
    if (classes.empty()) throw ConfigError("SceneRecipe: classes must not be empty");
    for (const auto& c : classes) {
      if (c.count_min < 0 || c.count_max < c.count_min) {
        throw ConfigError("SceneRecipe: class '" + c.name + "' has an invalid count range");
      }
      if (!(c.scale_min.array() > 0.0).all() || !(c.scale_max.array() >= c.scale_min.array()).all()) {
        throw ConfigError("SceneRecipe: class '" + c.name + "' has an invalid scale range");
      }
      if (c.symmetry_order < 1) {
        throw ConfigError("SceneRecipe: class '" + c.name + "' symmetry_order must be >= 1");
      }
    }
    if (!(floor_x > 0.0 && floor_z > 0.0)) throw ConfigError("SceneRecipe: floor extent must be > 0");
    if (clearance < 0.0) throw ConfigError("SceneRecipe: clearance must be >= 0");
    if (points_min < 1 || points_max < points_min) {
      throw ConfigError("SceneRecipe: invalid points_per_object range");
    }
    if (background_points < 0) throw ConfigError("SceneRecipe: background_points must be >= 0");
    if (!(surface_inset > 0.0 && surface_inset < 1.0)) {
      throw ConfigError("SceneRecipe: surface_inset must be in (0,1)");
    }
    if (!(wall_fraction >= 0.0 && wall_fraction <= 1.0)) {
      throw ConfigError("SceneRecipe: wall_fraction must be in [0,1]");
    }
    if (!(occlusion_plane_fraction >= 0.0 && occlusion_plane_fraction <= 1.0)) {
      throw ConfigError("SceneRecipe: occlusion_plane_fraction must be in [0,1]");
    }
    if (max_attempts < 1) throw ConfigError("SceneRecipe: max_attempts must be >= 1");
  }
};

/// Number of points strictly inside the box divided by its volume (8 sx sy sz).
inline double partial_index(const BoxPose& box, const PointCloud& cloud) {
  const double vol = box.volume();
  if (!(vol > 0.0)) throw std::invalid_argument("partial_index: box volume must be > 0");
  std::size_t count = 0;
  for (const Vec3& p : cloud.positions) {
    if (strictly_inside_unit_cube(world_to_lcc(box, p))) ++count;
  }
  return static_cast<double>(count) / vol;
}

/// Partial index of every ground-truth box of a scene.
inline std::vector<double> partial_indexes(const Scene& scene, const PointCloud& cloud) {
  std::vector<double> out;
  out.reserve(scene.boxes.size());
  for (const auto& b : scene.boxes) out.push_back(partial_index(b.box.pose, cloud));
  return out;
}

namespace detail {

// Uniform sample on the surface of the canonical cube inset by `inset`,
// faces chosen proportionally to their world area.
inline Vec3 sample_box_surface(const Vec3& scale, double inset, SplitMix64& rng) {
  const double ax = scale.y() * scale.z();
  const double ay = scale.x() * scale.z();
  const double az = scale.x() * scale.y();
  const double u = rng.uniform() * (ax + ay + az);
  const int axis = u < ax ? 0 : (u < ax + ay ? 1 : 2);
  Vec3 l(rng.uniform(-inset, inset), rng.uniform(-inset, inset), rng.uniform(-inset, inset));
  l[axis] = rng.uniform() < 0.5 ? -inset : inset;
  return l;
}

inline bool near_footprint(const BoxPose& pose, double x, double z, double margin) {
  const double dx = x - pose.center.x();
  const double dz = z - pose.center.z();
  const double c = std::cos(pose.alpha);
  const double s = std::sin(pose.alpha);
  // Inverse rotation in the xz-plane.
  const double lx = c * dx + s * dz;
  const double lz = -s * dx + c * dz;
  return std::fabs(lx) < pose.scale.x() + margin && std::fabs(lz) < pose.scale.z() + margin;
}

}  // namespace detail

/// Generates a scene and its point cloud. Deterministic in (recipe, seed).
inline std::pair<Scene, PointCloud> make_scene(const SceneRecipe& recipe, std::uint64_t seed) {
  recipe.validate();
  SplitMix64 rng(stream_seed(seed, 0x5ce7e));

  Scene scene;
  for (std::size_t c = 0; c < recipe.classes.size(); ++c) {
    scene.classes.push_back(
        {static_cast<int>(c), recipe.classes[c].name, recipe.classes[c].symmetry_order});
  }

  // Per-class counts, then the total clamp.
  std::vector<int> class_of_box;
  for (std::size_t c = 0; c < recipe.classes.size(); ++c) {
    const auto& cr = recipe.classes[c];
    const int n = cr.count_min + static_cast<int>(rng() % static_cast<std::uint64_t>(
                                                              cr.count_max - cr.count_min + 1));
    for (int k = 0; k < n; ++k) class_of_box.push_back(static_cast<int>(c));
  }
  while (static_cast<int>(class_of_box.size()) > recipe.total_max) {
    class_of_box.erase(class_of_box.begin() +
                       static_cast<std::ptrdiff_t>(rng() % class_of_box.size()));
  }
  while (static_cast<int>(class_of_box.size()) < recipe.total_min) {
    class_of_box.push_back(static_cast<int>(rng() % recipe.classes.size()));
  }

  // Placement by rejection sampling against circumcircle clearance.
  std::vector<double> radius;
  for (int cls : class_of_box) {
    const auto& cr = recipe.classes[static_cast<std::size_t>(cls)];
    bool placed = false;
    for (int attempt = 0; attempt < recipe.max_attempts && !placed; ++attempt) {
      Vec3 s;
      for (int a = 0; a < 3; ++a) s[a] = rng.uniform(cr.scale_min[a], cr.scale_max[a]);
      const double r = std::hypot(s.x(), s.z());
      const double half_x = 0.5 * recipe.floor_x - r - recipe.floor_margin;
      const double half_z = 0.5 * recipe.floor_z - r - recipe.floor_margin;
      const double alpha = rng.uniform(0.0, kTwoPi);
      const double x = rng.uniform(-1.0, 1.0) * half_x;
      const double z = rng.uniform(-1.0, 1.0) * half_z;
      if (half_x < 0.0 || half_z < 0.0) continue;
      bool clear = true;
      for (std::size_t b = 0; b < scene.boxes.size() && clear; ++b) {
        const Vec3& t = scene.boxes[b].box.pose.center;
        clear = std::hypot(t.x() - x, t.z() - z) >= r + radius[b] + recipe.clearance;
      }
      if (!clear) continue;
      GroundTruthBox gt;
      gt.box.pose = BoxPose::make(s, alpha, Vec3(x, s.y(), z));
      gt.box.class_id = cls;
      gt.box.score = 1.0;
      gt.symmetry_order = cr.symmetry_order;
      scene.boxes.push_back(gt);
      radius.push_back(r);
      placed = true;
    }
    if (!placed) {
      throw ConfigError("make_scene: could not place box " + std::to_string(scene.boxes.size()) +
                        " of class '" + cr.name + "' after " + std::to_string(recipe.max_attempts) +
                        " attempts; reduce clearance, counts or scale_max, or enlarge floor_extent");
    }
  }

  PointCloud cloud;
  for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
    const BoxPose& pose = scene.boxes[b].box.pose;
    const int n = recipe.points_min +
                  static_cast<int>(rng() % static_cast<std::uint64_t>(recipe.points_max -
                                                                      recipe.points_min + 1));
    for (int k = 0; k < n; ++k) {
      cloud.positions.push_back(
          lcc_to_world(pose, detail::sample_box_surface(pose.scale, recipe.surface_inset, rng)));
      scene.point_instance.push_back(static_cast<int>(b));
    }
  }

  const double hx = 0.5 * recipe.floor_x;
  const double hz = 0.5 * recipe.floor_z;
  const double perimeter = 2.0 * (recipe.floor_x + recipe.floor_z);
  int emitted = 0;
  int guard = 0;
  while (emitted < recipe.background_points) {
    if (++guard > 100 * recipe.background_points + 1000) {
      throw ConfigError("make_scene: floor is fully covered by boxes; cannot place background");
    }
    Vec3 p;
    if (rng.uniform() < recipe.wall_fraction) {
      // Wall strip along the floor boundary.
      double u = rng.uniform() * perimeter;
      const double y = rng.uniform(0.0, recipe.wall_height);
      if (u < recipe.floor_x) {
        p = Vec3(-hx + u, y, -hz);
      } else if ((u -= recipe.floor_x) < recipe.floor_z) {
        p = Vec3(hx, y, -hz + u);
      } else if ((u -= recipe.floor_z) < recipe.floor_x) {
        p = Vec3(hx - u, y, hz);
      } else {
        u -= recipe.floor_x;
        p = Vec3(-hx, y, hz - u);
      }
    } else {
      p = Vec3(rng.uniform(-hx, hx), 0.0, rng.uniform(-hz, hz));
      bool occluded = false;
      for (const auto& b : scene.boxes) {
        if (detail::near_footprint(b.box.pose, p.x(), p.z(), recipe.floor_margin)) {
          occluded = true;
          break;
        }
      }
      if (occluded) continue;
    }
    cloud.positions.push_back(p);
    scene.point_instance.push_back(kBackground);
    ++emitted;
  }
  return {std::move(scene), std::move(cloud)};
}

/// Removes object points until each box's partial index reaches its target:
/// first the points beyond a random cutting plane (plane_fraction of the
/// removal), then uniform thinning. Each box keeps at least one point.
/// Background points and box poses are untouched.
inline std::pair<Scene, PointCloud> occlude(const Scene& scene, const PointCloud& cloud,
                                            const std::vector<double>& target_partial_index,
                                            std::uint64_t seed, double plane_fraction = 0.7) {
  if (target_partial_index.size() != scene.boxes.size()) {
    throw std::invalid_argument("occlude: one target per box is required");
  }
  if (scene.point_instance.size() != cloud.size()) {
    throw InputError("occlude: point_instance length does not match the cloud");
  }
  const std::size_t nb = scene.boxes.size();
  std::vector<std::vector<std::size_t>> members(nb);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int inst = scene.point_instance[i];
    if (inst >= 0) members[static_cast<std::size_t>(inst)].push_back(i);
  }

  std::vector<char> keep(cloud.size(), 1);
  for (std::size_t b = 0; b < nb; ++b) {
    const BoxPose& pose = scene.boxes[b].box.pose;
    const double current = partial_index(pose, cloud);
    const double target = target_partial_index[b];
    if (!(target >= 0.0)) throw std::invalid_argument("occlude: target must be >= 0");
    if (target > current * (1.0 + 1e-12)) {
      throw std::invalid_argument("occlude: target partial index " + std::to_string(target) +
                                  " of box " + std::to_string(b) + " exceeds current index " +
                                  std::to_string(current));
    }
    const double vol = pose.volume();
    const auto inside_now = static_cast<std::size_t>(std::llround(current * vol));
    const auto want = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(target * vol)));
    if (want >= inside_now) continue;
    std::size_t to_remove = inside_now - want;
    to_remove = std::min(to_remove, members[b].size() - 1);

    SplitMix64 rng(stream_seed(seed, b));
    std::vector<std::size_t> pool = members[b];
    const auto plane_count = static_cast<std::size_t>(
        std::llround(plane_fraction * static_cast<double>(to_remove)));

    // Cutting plane: drop the points with the largest projection on a random
    // direction.
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    if (dir.norm() < 1e-12) dir = Vec3::UnitX();
    dir.normalize();
    std::stable_sort(pool.begin(), pool.end(), [&](std::size_t l, std::size_t r) {
      return cloud.positions[l].dot(dir) > cloud.positions[r].dot(dir);
    });
    for (std::size_t k = 0; k < plane_count; ++k) keep[pool[k]] = 0;
    pool.erase(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(plane_count));

    // Thinning: partial Fisher-Yates over the survivors.
    const std::size_t thin = to_remove - plane_count;
    for (std::size_t k = 0; k < thin; ++k) {
      const std::size_t j = k + static_cast<std::size_t>(rng() % (pool.size() - k));
      std::swap(pool[k], pool[j]);
      keep[pool[k]] = 0;
    }
  }

  Scene out_scene;
  out_scene.boxes = scene.boxes;
  out_scene.classes = scene.classes;
  PointCloud out_cloud;
  if (cloud.colors) out_cloud.colors.emplace();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!keep[i]) continue;
    out_cloud.positions.push_back(cloud.positions[i]);
    if (cloud.colors) out_cloud.colors->push_back((*cloud.colors)[i]);
    out_scene.point_instance.push_back(scene.point_instance[i]);
  }
  return {std::move(out_scene), std::move(out_cloud)};
}

}  // namespace canonvote
