#pragma once

// Prediction fields computed from ground truth, optionally corrupted with
// noise, plus the regression-error metrics used to characterize them.

#include <limits>
#include <map>
#include <vector>

#include "canonvote/geometry.hpp"
#include "canonvote/point_cloud.hpp"
#include "canonvote/prediction.hpp"
#include "canonvote/scenegen.hpp"

namespace canonvote {

/// Mean absolute errors of pointwise regression on ScanNet reported for a
/// direct-regression network and for random guessing. Offsets are in
/// meters; orientation vectors are unit-free.
inline constexpr double kDirectOffsetMae = 0.197;
inline constexpr double kRandomOffsetMae = 0.228;
inline constexpr double kDirectOrientationMae = 0.806;
inline constexpr double kRandomOrientationMae = 0.801;

/// E|X| / sigma for a zero-mean Gaussian.
inline const double kGaussianMaeFactor = std::sqrt(2.0 / std::numbers::pi);

/// Gaussian sigma whose per-component mean absolute error equals `mae`.
inline double sigma_for_mae(double mae) { return mae / kGaussianMaeFactor; }

struct NoiseModel {
  double lcc_sigma = 0.0;
  double scale_sigma = 0.0;
  double objectness_flip = 0.0;
  double offset_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lcc_sigma >= 0.0) || !(scale_sigma >= 0.0) || !(offset_sigma >= 0.0)) {
      throw ConfigError("NoiseModel: sigmas must be >= 0");
    }
    if (!(objectness_flip >= 0.0 && objectness_flip <= 0.5)) {
      throw ConfigError("NoiseModel: objectness_flip must be in [0, 0.5]");
    }
  }
};

/// Smallest predicted scale component; noisy scales are clamped to it.
inline constexpr double kMinPredictedScale = 1e-3;

namespace detail {

inline void check_labels(const Scene& scene, const PointCloud& cloud) {
  if (scene.point_instance.size() != cloud.size()) {
    throw InputError("oracle: every point needs an instance label (got " +
                     std::to_string(scene.point_instance.size()) + " labels for " +
                     std::to_string(cloud.size()) + " points)");
  }
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int inst = scene.point_instance[i];
    if (inst != kBackground && (inst < 0 || inst >= static_cast<int>(scene.boxes.size()))) {
      throw InputError("oracle: point " + std::to_string(i) + " has invalid instance label " +
                       std::to_string(inst));
    }
  }
}

inline Vec3 gaussian3(SplitMix64& rng, double sigma) {
  if (sigma == 0.0) return Vec3::Zero();
  return sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
}

}  // namespace detail

/// Per-point canonical coordinates, scales, objectness and one-hot classes
/// from ground truth. Noise is added in canonical space. Background points
/// get objectness 0, canonical coordinates uniform in [-1,1]^3 and scales
/// uniform in [0.1, 1.5]. Flips invert the binary objectness label.
inline PredictionField oracle_field(const Scene& scene, const PointCloud& cloud,
                                    const NoiseModel& noise) {
  noise.validate();
  detail::check_labels(scene, cloud);
  const int nc = std::max(1, scene.num_classes());
  PredictionField f;
  f.num_classes = nc;
  const std::size_t n = cloud.size();
  f.lcc.resize(n);
  f.scale.resize(n);
  f.objectness.resize(n);
  f.class_scores.assign(n * static_cast<std::size_t>(nc), 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    SplitMix64 rng(stream_seed(noise.seed, i));
    const int inst = scene.point_instance[i];
    const bool flip = noise.objectness_flip > 0.0 && rng.uniform() < noise.objectness_flip;
    int cls = 0;
    if (inst != kBackground) {
      const OrientedBox& gt = scene.boxes[static_cast<std::size_t>(inst)].box;
      f.lcc[i] = world_to_lcc(gt.pose, cloud.positions[i]) + detail::gaussian3(rng, noise.lcc_sigma);
      f.scale[i] = (gt.pose.scale + detail::gaussian3(rng, noise.scale_sigma))
                       .cwiseMax(Vec3::Constant(kMinPredictedScale));
      f.objectness[i] = flip ? 0.0 : 1.0;
      cls = gt.class_id;
    } else {
      f.lcc[i] = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      f.scale[i] = Vec3(rng.uniform(0.1, 1.5), rng.uniform(0.1, 1.5), rng.uniform(0.1, 1.5));
      f.objectness[i] = flip ? 1.0 : 0.0;
      cls = static_cast<int>(rng() % static_cast<std::uint64_t>(nc));
    }
    f.class_scores[i * static_cast<std::size_t>(nc) + static_cast<std::size_t>(cls)] = 1.0;
  }
  return f;
}

/// Per-point center offsets for the direct-voting baseline.
struct OffsetField {
  std::vector<Vec3> offset;
  std::vector<Vec3> scale;
  std::vector<double> objectness;
  std::vector<int> class_id;

  std::size_t size() const { return offset.size(); }
};

/// Object points: offset = (t* - p) + N(0, offset_sigma^2) per component,
/// scale = s* + N(0, scale_sigma^2). Background points carry objectness 0
/// (subject to flips) and a uniform offset in [-1, 1]^3 m.
inline OffsetField direct_offset_field(const Scene& scene, const PointCloud& cloud,
                                       const NoiseModel& noise) {
  noise.validate();
  detail::check_labels(scene, cloud);
  const int nc = std::max(1, scene.num_classes());
  OffsetField f;
  const std::size_t n = cloud.size();
  f.offset.resize(n);
  f.scale.resize(n);
  f.objectness.resize(n);
  f.class_id.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // A stream distinct from oracle_field's for the same seed.
    SplitMix64 rng(stream_seed(noise.seed ^ 0x0ff5e7ULL, i));
    const int inst = scene.point_instance[i];
    const bool flip = noise.objectness_flip > 0.0 && rng.uniform() < noise.objectness_flip;
    if (inst != kBackground) {
      const OrientedBox& gt = scene.boxes[static_cast<std::size_t>(inst)].box;
      f.offset[i] = (gt.pose.center - cloud.positions[i]) + detail::gaussian3(rng, noise.offset_sigma);
      f.scale[i] = (gt.pose.scale + detail::gaussian3(rng, noise.scale_sigma))
                       .cwiseMax(Vec3::Constant(kMinPredictedScale));
      f.objectness[i] = flip ? 0.0 : 1.0;
      f.class_id[i] = gt.class_id;
    } else {
      f.offset[i] = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      f.scale[i] = Vec3(rng.uniform(0.1, 1.5), rng.uniform(0.1, 1.5), rng.uniform(0.1, 1.5));
      f.objectness[i] = flip ? 1.0 : 0.0;
      f.class_id[i] = static_cast<int>(rng() % static_cast<std::uint64_t>(nc));
    }
  }
  return f;
}

/// Mean per-component absolute error of object-point offsets against
/// the true center offsets.
inline double offset_mae(const OffsetField& field, const Scene& scene, const PointCloud& cloud) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int inst = scene.point_instance[i];
    if (inst == kBackground) continue;
    const Vec3 truth = scene.boxes[static_cast<std::size_t>(inst)].box.pose.center - cloud.positions[i];
    sum += (field.offset[i] - truth).cwiseAbs().sum();
    count += 3;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

struct ClassRegressionError {
  std::size_t points = 0;
  /// Mean per-component |s* - s|.
  double scale_mae = 0.0;
  /// Mean per-component canonical error, minimized over the class symmetries.
  double lcc_mae = 0.0;
  /// Same without symmetry minimization.
  double lcc_mae_naive = 0.0;
};

/// Regression error of a field against the scene's ground truth, per class.
/// Background points are ignored.
inline std::map<int, ClassRegressionError> lcc_error(const PredictionField& field,
                                                     const Scene& scene, const PointCloud& cloud) {
  detail::check_labels(scene, cloud);
  if (field.size() != cloud.size()) throw InputError("lcc_error: field and cloud lengths differ");
  std::map<int, ClassRegressionError> out;
  std::map<int, std::vector<Mat3>> syms;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int inst = scene.point_instance[i];
    if (inst == kBackground) continue;
    const GroundTruthBox& gt = scene.boxes[static_cast<std::size_t>(inst)];
    auto it = syms.find(gt.box.class_id);
    if (it == syms.end()) {
      it = syms.emplace(gt.box.class_id, symmetry_rotations(gt.symmetry_order)).first;
    }
    const Vec3 target = world_to_lcc(gt.box.pose, cloud.positions[i]);
    double best = std::numeric_limits<double>::infinity();
    double naive = 0.0;
    for (std::size_t m = 0; m < it->second.size(); ++m) {
      const double e = (it->second[m] * target - field.lcc[i]).cwiseAbs().sum() / 3.0;
      if (m == 0) naive = e;
      best = std::min(best, e);
    }
    ClassRegressionError& acc = out[gt.box.class_id];
    acc.points += 1;
    acc.scale_mae += (gt.box.pose.scale - field.scale[i]).cwiseAbs().sum() / 3.0;
    acc.lcc_mae += best;
    acc.lcc_mae_naive += naive;
  }
  for (auto& [cls, e] : out) {
    const double n = static_cast<double>(e.points);
    e.scale_mae /= n;
    e.lcc_mae /= n;
    e.lcc_mae_naive /= n;
  }
  return out;
}

/// Appends a cluster of positive points whose canonical predictions are
/// mutually inconsistent: each point's coordinate is exact for a box at
/// `center` with scale `scale` but a randomly drawn heading. Their votes meet
/// at `center`, yet no single pose explains them. The points are labeled
/// background in the scene, so they never match ground truth.
inline void inject_spurious_cluster(Scene& scene, PointCloud& cloud, PredictionField& field,
                                    const Vec3& center, const Vec3& scale, int class_id,
                                    std::size_t count, std::uint64_t seed) {
  if (field.size() != cloud.size()) {
    throw InputError("inject_spurious_cluster: field and cloud lengths differ");
  }
  if (class_id < 0 || class_id >= field.num_classes) {
    throw std::invalid_argument("inject_spurious_cluster: class id out of range");
  }
  SplitMix64 rng(stream_seed(seed, 0x5b0011ULL));
  const double radius = 0.9 * scale.minCoeff();
  const auto scores = one_hot(class_id, field.num_classes);
  for (std::size_t k = 0; k < count; ++k) {
    Vec3 u;
    do {
      u = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    } while (u.squaredNorm() > 1.0);
    const Vec3 offset = radius * u;
    const double heading = rng.uniform(0.0, kTwoPi);
    const Vec3 lcc = (rotation_y(heading).transpose() * offset).cwiseQuotient(scale);
    cloud.positions.push_back(center + offset);
    if (cloud.colors) cloud.colors->push_back(Rgb{128, 128, 128});
    scene.point_instance.push_back(kBackground);
    field.push_back(lcc, scale, 1.0, scores);
  }
}

}  // namespace canonvote
