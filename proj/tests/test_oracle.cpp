#include <gtest/gtest.h>

#include <numbers>

#include "support.hpp"

namespace cv = canonvote;
using cv::Vec3;

namespace {

constexpr double kPi = std::numbers::pi;

double mean_abs_lcc_error(const cv::Scene& scene, const cv::PointCloud& cloud, const cv::PredictionField& f) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int inst = scene.point_instance[i];
    if (inst < 0) continue;
    const Vec3 exact = cv::world_to_lcc(scene.boxes[static_cast<std::size_t>(inst)].box.pose, cloud.positions[i]);
    sum += (f.lcc[i] - exact).cwiseAbs().sum();
    n += 3;
  }
  return sum / static_cast<double>(n);
}

bool same_field(const cv::PredictionField& a, const cv::PredictionField& b) {
  return a.lcc == b.lcc && a.scale == b.scale && a.objectness == b.objectness && a.class_scores == b.class_scores;
}

}  // namespace

TEST(Oracle, NoiselessInverse) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 1);
  const auto f = cv::oracle_field(scene, cloud, cv::NoiseModel{});
  f.validate();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int inst = scene.point_instance[i];
    if (inst < 0) continue;
    const auto& pose = scene.boxes[static_cast<std::size_t>(inst)].box.pose;
    EXPECT_TRUE(cv::strictly_inside_unit_cube(f.lcc[i]));
    EXPECT_LT((cv::lcc_to_world(pose, f.lcc[i]) - cloud.positions[i]).norm(), 1e-9);
    EXPECT_EQ(f.scale[i], pose.scale);
  }
}

TEST(Oracle, ObjectnessIsInstanceIndicatorWithoutFlips) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 2);
  cv::NoiseModel noise;
  noise.lcc_sigma = 0.1;
  const auto f = cv::oracle_field(scene, cloud, noise);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    EXPECT_EQ(f.objectness[i], scene.point_instance[i] >= 0 ? 1.0 : 0.0);
    if (scene.point_instance[i] >= 0) {
      EXPECT_EQ(f.predicted_class(i), scene.boxes[static_cast<std::size_t>(scene.point_instance[i])].box.class_id);
    }
  }
}

TEST(Oracle, FlipRateMatchesProbability) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(500, 800, 20000), 3);
  cv::NoiseModel noise;
  noise.objectness_flip = 0.1;
  const auto f = cv::oracle_field(scene, cloud, noise);
  std::size_t flips = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    flips += f.objectness[i] != (scene.point_instance[i] >= 0 ? 1.0 : 0.0);
  }
  const double rate = static_cast<double>(flips) / static_cast<double>(cloud.size());
  // Binomial standard error at n > 20000 is about 0.002.
  EXPECT_NEAR(rate, 0.1, 0.01);
}

TEST(Oracle, GaussianLccMaeAt100kSamples) {
  // 34 000 points x 3 components gives just over 10^5 samples.
  const auto [scene, cloud] = cv::make_scene(cv::testing::single_box_recipe(0, 34000), 4);
  cv::NoiseModel noise;
  noise.lcc_sigma = 0.1;
  noise.seed = 4;
  const auto f = cv::oracle_field(scene, cloud, noise);
  const double want = 0.1 * std::sqrt(2.0 / kPi);
  EXPECT_NEAR(mean_abs_lcc_error(scene, cloud, f), want, 0.02 * want);
}

TEST(Oracle, LccErrorMatchesSimulatedMae) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 5);
  cv::NoiseModel noise;
  noise.lcc_sigma = 0.05;
  noise.seed = 9;
  const auto f = cv::oracle_field(scene, cloud, noise);
  const auto errs = cv::lcc_error(f, scene, cloud);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [cls, e] : errs) {
    sum += e.lcc_mae * static_cast<double>(e.points);
    n += e.points;
    EXPECT_LE(e.lcc_mae, e.lcc_mae_naive);
    EXPECT_EQ(e.scale_mae, 0.0);
  }
  const double want = 0.05 * std::sqrt(2.0 / kPi);
  EXPECT_NEAR(sum / static_cast<double>(n), want, 0.05 * want);
}

TEST(Oracle, ExactFieldHasZeroError) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 6);
  const auto f = cv::oracle_field(scene, cloud, cv::NoiseModel{});
  for (const auto& [cls, e] : cv::lcc_error(f, scene, cloud)) {
    EXPECT_GT(e.points, 0u);
    EXPECT_LT(e.lcc_mae, 1e-12);
    EXPECT_LT(e.lcc_mae_naive, 1e-12);
    EXPECT_EQ(e.scale_mae, 0.0);
  }
}

TEST(Oracle, SymmetricMinimumForRotatedFrame) {
  auto [scene, cloud] = cv::make_scene(cv::testing::single_box_recipe(1, 800), 7);
  ASSERT_EQ(scene.boxes[0].symmetry_order, 2);
  cv::Scene rotated = scene;
  auto& pose = rotated.boxes[0].box.pose;
  pose = cv::BoxPose::make(pose.scale, pose.alpha + kPi, pose.center);
  const auto f = cv::oracle_field(rotated, cloud, cv::NoiseModel{});
  const auto errs = cv::lcc_error(f, scene, cloud);
  const auto& e = errs.at(scene.boxes[0].box.class_id);
  EXPECT_LT(e.lcc_mae, 1e-12);
  EXPECT_GT(e.lcc_mae_naive, 0.1);
}

TEST(Oracle, SymmetricMinimumNeverExceedsNaive) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 8);
  for (double sigma : {0.05, 0.3, 1.0}) {
    cv::NoiseModel noise;
    noise.lcc_sigma = sigma;
    noise.seed = 8;
    for (const auto& [cls, e] : cv::lcc_error(cv::oracle_field(scene, cloud, noise), scene, cloud)) {
      EXPECT_LE(e.lcc_mae, e.lcc_mae_naive);
    }
  }
}

TEST(Oracle, DeterministicForSeed) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 9);
  cv::NoiseModel noise;
  noise.lcc_sigma = 0.05;
  noise.scale_sigma = 0.02;
  noise.objectness_flip = 0.05;
  noise.seed = 123;
  EXPECT_TRUE(same_field(cv::oracle_field(scene, cloud, noise), cv::oracle_field(scene, cloud, noise)));
  auto other = noise;
  other.seed = 124;
  EXPECT_FALSE(same_field(cv::oracle_field(scene, cloud, noise), cv::oracle_field(scene, cloud, other)));
}

TEST(Oracle, ZeroNoiseOffsetsHitCenters) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 10);
  const auto f = cv::direct_offset_field(scene, cloud, cv::NoiseModel{});
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int inst = scene.point_instance[i];
    if (inst < 0) {
      EXPECT_EQ(f.objectness[i], 0.0);
      continue;
    }
    EXPECT_EQ(f.objectness[i], 1.0);
    EXPECT_LT((cloud.positions[i] + f.offset[i] - scene.boxes[static_cast<std::size_t>(inst)].box.pose.center).norm(),
              1e-12);
  }
  EXPECT_LT(cv::offset_mae(f, scene, cloud), 1e-12);
}

TEST(Oracle, CalibratedOffsetMae) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 11);
  cv::NoiseModel noise;
  noise.offset_sigma = cv::sigma_for_mae(cv::kDirectOffsetMae);
  noise.seed = 11;
  const auto f = cv::direct_offset_field(scene, cloud, noise);
  EXPECT_NEAR(cv::offset_mae(f, scene, cloud), 0.197, 0.01);
}

TEST(Oracle, RejectsBadLabelsAndNoise) {
  auto [scene, cloud] = cv::make_scene(cv::testing::single_box_recipe(0, 100), 12);
  auto missing = scene;
  missing.point_instance.pop_back();
  EXPECT_THROW(cv::oracle_field(missing, cloud, {}), cv::InputError);
  EXPECT_THROW(cv::direct_offset_field(missing, cloud, {}), cv::InputError);
  auto invalid = scene;
  invalid.point_instance[0] = 7;
  EXPECT_THROW(cv::oracle_field(invalid, cloud, {}), cv::InputError);
  cv::NoiseModel bad;
  bad.objectness_flip = 0.6;
  EXPECT_THROW(cv::oracle_field(scene, cloud, bad), cv::ConfigError);
  bad = {};
  bad.lcc_sigma = -0.1;
  EXPECT_THROW(cv::oracle_field(scene, cloud, bad), cv::ConfigError);
}

TEST(Oracle, SpuriousClusterIsInconsistent) {
  auto [scene, cloud] = cv::make_scene(cv::testing::single_box_recipe(0, 100), 13);
  auto field = cv::oracle_field(scene, cloud, {});
  const std::size_t before = cloud.size();
  const Vec3 center(1.5, 0.5, 1.5);
  const Vec3 scale(0.35, 0.4, 0.35);
  cv::inject_spurious_cluster(scene, cloud, field, center, scale, 0, 200, 1);
  ASSERT_EQ(cloud.size(), before + 200);
  ASSERT_EQ(field.size(), cloud.size());
  ASSERT_EQ(scene.point_instance.size(), cloud.size());
  // Each point is exact under its own heading, so its vote for that heading
  // lands on the center; averaged over one common pose the error is large.
  const auto common = cv::BoxPose::make(scale, 0.0, center);
  double err = 0.0;
  for (std::size_t i = before; i < cloud.size(); ++i) {
    EXPECT_EQ(scene.point_instance[i], cv::kBackground);
    EXPECT_EQ(field.objectness[i], 1.0);
    EXPECT_LT(std::abs(field.lcc[i].y() * scale.y() - (cloud.positions[i] - center).y()), 1e-12);
    err += (field.lcc[i] - cv::world_to_lcc(common, cloud.positions[i])).norm();
  }
  EXPECT_GT(err / 200.0, 0.3);
}
