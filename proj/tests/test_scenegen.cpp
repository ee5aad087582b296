#include <gtest/gtest.h>

#include "support.hpp"

namespace cv = canonvote;
using cv::Vec3;

namespace {

// Containment by projection on the box's own axes, independent of world_to_lcc.
std::size_t brute_force_inside(const cv::BoxPose& box, const cv::PointCloud& cloud) {
  const Vec3 ax(std::cos(box.alpha), 0.0, std::sin(box.alpha));
  const Vec3 az(-std::sin(box.alpha), 0.0, std::cos(box.alpha));
  std::size_t n = 0;
  for (const auto& p : cloud.positions) {
    const Vec3 d = p - box.center;
    n += std::abs(d.dot(ax)) < box.scale.x() && std::abs(d.y()) < box.scale.y() && std::abs(d.dot(az)) < box.scale.z();
  }
  return n;
}

bool same_cloud(const cv::PointCloud& a, const cv::PointCloud& b) { return a.positions == b.positions; }

}  // namespace

TEST(SceneGen, SingleBoxWithoutBackground) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::single_box_recipe(2, 437, 0), 1);
  ASSERT_EQ(scene.boxes.size(), 1u);
  EXPECT_EQ(cloud.size(), 437u);
  for (const auto& p : cloud.positions) {
    EXPECT_TRUE(cv::strictly_inside_unit_cube(cv::world_to_lcc(scene.boxes[0].box.pose, p)));
  }
  EXPECT_NO_THROW(scene.validate(cloud));
  EXPECT_EQ(scene.boxes[0].box.class_id, 2);
  EXPECT_EQ(scene.boxes[0].symmetry_order, 4);
}

TEST(SceneGen, PointsLieOnTheInsetSurface) {
  const auto recipe = cv::testing::single_box_recipe(0, 2000, 0);
  const auto [scene, cloud] = cv::make_scene(recipe, 2);
  for (const auto& p : cloud.positions) {
    const Vec3 l = cv::world_to_lcc(scene.boxes[0].box.pose, p);
    EXPECT_NEAR(l.cwiseAbs().maxCoeff(), recipe.surface_inset, 1e-9);
  }
}

TEST(SceneGen, ClearanceAndNoOverlap) {
  auto recipe = cv::testing::furniture_recipe();
  recipe.clearance = 0.5;
  recipe.floor_x = recipe.floor_z = 7.0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto [scene, cloud] = cv::make_scene(recipe, seed);
    EXPECT_GE(scene.boxes.size(), 1u);
    EXPECT_LE(scene.boxes.size(), 6u);
    EXPECT_NO_THROW(scene.validate(cloud));
    for (std::size_t a = 0; a < scene.boxes.size(); ++a) {
      for (std::size_t b = a + 1; b < scene.boxes.size(); ++b) {
        const auto& pa = scene.boxes[a].box.pose;
        const auto& pb = scene.boxes[b].box.pose;
        EXPECT_EQ(cv::box_iou_3d(pa, pb), 0.0);
        const double gap = std::hypot(pa.center.x() - pb.center.x(), pa.center.z() - pb.center.z()) -
                           std::hypot(pa.scale.x(), pa.scale.z()) - std::hypot(pb.scale.x(), pb.scale.z());
        EXPECT_GE(gap, 0.5 - 1e-12);
      }
    }
  }
}

TEST(SceneGen, BoxesRestOnTheFloorInsideTheRoom) {
  const auto recipe = cv::testing::furniture_recipe();
  const auto [scene, cloud] = cv::make_scene(recipe, 3);
  for (const auto& b : scene.boxes) {
    EXPECT_DOUBLE_EQ(b.box.pose.center.y(), b.box.pose.scale.y());
    EXPECT_LE(std::abs(b.box.pose.center.x()), recipe.floor_x / 2);
    EXPECT_LE(std::abs(b.box.pose.center.z()), recipe.floor_z / 2);
  }
  std::size_t background = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (scene.point_instance[i] != cv::kBackground) continue;
    ++background;
    for (const auto& b : scene.boxes) {
      EXPECT_FALSE(cv::strictly_inside_unit_cube(cv::world_to_lcc(b.box.pose, cloud.positions[i])));
    }
  }
  EXPECT_EQ(background, static_cast<std::size_t>(recipe.background_points));
}

TEST(SceneGen, Deterministic) {
  const auto recipe = cv::testing::furniture_recipe();
  const auto [s1, c1] = cv::make_scene(recipe, 99);
  const auto [s2, c2] = cv::make_scene(recipe, 99);
  EXPECT_TRUE(same_cloud(c1, c2));
  EXPECT_EQ(s1.point_instance, s2.point_instance);
  ASSERT_EQ(s1.boxes.size(), s2.boxes.size());
  for (std::size_t b = 0; b < s1.boxes.size(); ++b) {
    EXPECT_EQ(s1.boxes[b].box.pose.center, s2.boxes[b].box.pose.center);
    EXPECT_EQ(s1.boxes[b].box.pose.alpha, s2.boxes[b].box.pose.alpha);
  }
  const auto [s3, c3] = cv::make_scene(recipe, 100);
  EXPECT_FALSE(same_cloud(c1, c3));
}

TEST(SceneGen, PlacementFailureNamesConstraint) {
  auto recipe = cv::testing::furniture_recipe();
  recipe.floor_x = recipe.floor_z = 1.0;
  recipe.total_min = 6;
  recipe.max_attempts = 50;
  try {
    cv::make_scene(recipe, 1);
    FAIL() << "expected a placement failure";
  } catch (const cv::ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("could not place"), std::string::npos);
    EXPECT_NE(msg.find("floor_extent"), std::string::npos);
  }
}

TEST(SceneGen, RecipeValidation) {
  auto recipe = cv::testing::furniture_recipe();
  recipe.classes[0].count_max = -1;
  EXPECT_THROW(recipe.validate(), cv::ConfigError);
  recipe = cv::testing::furniture_recipe();
  recipe.surface_inset = 1.0;
  EXPECT_THROW(recipe.validate(), cv::ConfigError);
  recipe = cv::testing::furniture_recipe();
  recipe.classes.clear();
  EXPECT_THROW(recipe.validate(), cv::ConfigError);
}

TEST(SceneGen, PartialIndexFormula) {
  const auto box = cv::BoxPose::make(Vec3(1.0, 0.5, 0.5), 0.3, Vec3(1, 2, 3));
  cv::PointCloud cloud;
  cv::SplitMix64 rng(1);
  for (int i = 0; i < 80; ++i) {
    cloud.positions.push_back(cv::lcc_to_world(box, Vec3(rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9),
                                                         rng.uniform(-0.9, 0.9))));
  }
  EXPECT_DOUBLE_EQ(cv::partial_index(box, cloud), 40.0);
  EXPECT_EQ(cv::partial_index(box, cv::PointCloud{}), 0.0);
  EXPECT_THROW(cv::partial_index(cv::BoxPose{Vec3(1, 0, 1), 0, Vec3::Zero()}, cloud), std::invalid_argument);
}

TEST(SceneGen, PartialIndexMatchesBruteForce) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 7);
  const auto idx = cv::partial_indexes(scene, cloud);
  ASSERT_EQ(idx.size(), scene.boxes.size());
  cv::SplitMix64 rng(3);
  for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
    const auto& pose = scene.boxes[b].box.pose;
    EXPECT_DOUBLE_EQ(idx[b], static_cast<double>(brute_force_inside(pose, cloud)) / pose.volume());
  }
  for (int t = 0; t < 20; ++t) {
    const auto probe = cv::testing::random_pose(rng);
    EXPECT_DOUBLE_EQ(cv::partial_index(probe, cloud),
                     static_cast<double>(brute_force_inside(probe, cloud)) / probe.volume());
  }
}

TEST(SceneGen, OccludeIdentity) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 11);
  const auto idx = cv::partial_indexes(scene, cloud);
  const auto [s2, c2] = cv::occlude(scene, cloud, idx, 5);
  EXPECT_TRUE(same_cloud(cloud, c2));
  EXPECT_EQ(s2.point_instance, scene.point_instance);
}

TEST(SceneGen, OccludeToHalf) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 20 + seed);
    auto targets = cv::partial_indexes(scene, cloud);
    for (double& t : targets) t *= 0.5;
    const auto [s2, c2] = cv::occlude(scene, cloud, targets, seed);
    const auto got = cv::partial_indexes(s2, c2);
    for (std::size_t b = 0; b < targets.size(); ++b) {
      EXPECT_NEAR(got[b], targets[b], 0.05 * targets[b]) << "box " << b;
    }
    EXPECT_NO_THROW(s2.validate(c2));
  }
}

TEST(SceneGen, OccludeKeepsAtLeastOnePoint) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 30);
  const std::vector<double> targets(scene.boxes.size(), 1e-9);
  const auto [s2, c2] = cv::occlude(scene, cloud, targets, 1);
  for (const auto& b : s2.boxes) EXPECT_GE(brute_force_inside(b.box.pose, c2), 1u);
}

TEST(SceneGen, OccludePreservesPosesAndBackground) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 31);
  auto targets = cv::partial_indexes(scene, cloud);
  for (double& t : targets) t *= 0.2;
  const auto [s2, c2] = cv::occlude(scene, cloud, targets, 2);
  ASSERT_EQ(s2.boxes.size(), scene.boxes.size());
  for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
    EXPECT_EQ(s2.boxes[b].box.pose.center, scene.boxes[b].box.pose.center);
    EXPECT_EQ(s2.boxes[b].box.pose.scale, scene.boxes[b].box.pose.scale);
    EXPECT_EQ(s2.boxes[b].box.pose.alpha, scene.boxes[b].box.pose.alpha);
    EXPECT_EQ(s2.boxes[b].box.class_id, scene.boxes[b].box.class_id);
  }
  EXPECT_EQ(s2.classes.size(), scene.classes.size());
  std::vector<Vec3> bg_before, bg_after;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (scene.point_instance[i] == cv::kBackground) bg_before.push_back(cloud.positions[i]);
  }
  for (std::size_t i = 0; i < c2.size(); ++i) {
    if (s2.point_instance[i] == cv::kBackground) bg_after.push_back(c2.positions[i]);
  }
  EXPECT_EQ(bg_before, bg_after);
}

TEST(SceneGen, OccludeRejectsLargerTarget) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::single_box_recipe(0, 300), 40);
  auto targets = cv::partial_indexes(scene, cloud);
  targets[0] *= 1.5;
  EXPECT_THROW(cv::occlude(scene, cloud, targets, 1), std::invalid_argument);
  EXPECT_THROW(cv::occlude(scene, cloud, {}, 1), std::invalid_argument);
}

TEST(SceneGen, OccludeIsDeterministic) {
  const auto [scene, cloud] = cv::make_scene(cv::testing::furniture_recipe(), 41);
  auto targets = cv::partial_indexes(scene, cloud);
  for (double& t : targets) t *= 0.3;
  const auto a = cv::occlude(scene, cloud, targets, 9);
  const auto b = cv::occlude(scene, cloud, targets, 9);
  EXPECT_TRUE(same_cloud(a.second, b.second));
}
