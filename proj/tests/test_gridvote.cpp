#include <gtest/gtest.h>

#include <cstring>
#include <numbers>

#include "support.hpp"

namespace cv = canonvote;
using cv::Vec3;

namespace {

constexpr double kPi = std::numbers::pi;

// Tent-kernel reference: each axis weights every cell by max(0, 1 - |g - c|)
// with c the cell center in grid units, renormalized so a vote that hangs
// over the border keeps its full mass on the border cell.
std::vector<double> reference_mass(const cv::PointCloud& cloud, const cv::PredictionField& field,
                                   const cv::GridGeometry& g, int k) {
  std::vector<double> mass(g.cell_count(), 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double o = field.objectness[i];
    if (o <= 0.0) continue;
    const Vec3 v = field.scale[i].cwiseProduct(field.lcc[i]);
    for (int j = 0; j < k; ++j) {
      const double r = 2.0 * kPi * j / k;
      const Vec3 target = cloud.positions[i] - cv::rotation_y(r) * v;
      const Vec3 gc = (target - g.origin) / g.tau;
      bool inside = true;
      std::array<std::vector<std::pair<int, double>>, 3> axis;
      for (int a = 0; a < 3; ++a) {
        if (!(gc[a] >= 0.0 && gc[a] <= g.dims[a])) inside = false;
        double total = 0.0;
        for (int c = 0; c < g.dims[a]; ++c) {
          const double w = std::max(0.0, 1.0 - std::abs(gc[a] - (c + 0.5)));
          if (w > 0.0) {
            axis[a].push_back({c, w});
            total += w;
          }
        }
        for (auto& e : axis[a]) e.second /= total;
      }
      if (!inside) continue;
      for (const auto& [x, wx] : axis[0]) {
        for (const auto& [y, wy] : axis[1]) {
          for (const auto& [z, wz] : axis[2]) mass[g.linear(x, y, z)] += o * wx * wy * wz;
        }
      }
    }
  }
  return mass;
}

// Random field over points scattered in a small region.
std::pair<cv::PointCloud, cv::PredictionField> random_field(std::size_t n, std::uint64_t seed) {
  cv::SplitMix64 rng(seed);
  cv::PointCloud cloud;
  cv::PredictionField field;
  field.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    cloud.positions.emplace_back(rng.uniform(-1, 1), rng.uniform(0, 1), rng.uniform(-1, 1));
    field.push_back(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)),
                    Vec3(rng.uniform(0.1, 0.6), rng.uniform(0.1, 0.6), rng.uniform(0.1, 0.6)),
                    rng.uniform(), cv::one_hot(static_cast<int>(rng() % 2), 2));
  }
  return {cloud, field};
}

cv::VoteGrid padded_grid(const cv::PointCloud& cloud, const cv::PredictionField& field, double tau) {
  Vec3 max_scale = Vec3::Zero();
  for (const auto& s : field.scale) max_scale = max_scale.cwiseMax(s);
  return cv::grid_from_extent(cloud, max_scale, cv::GridOptions{tau});
}

bool bit_identical(const cv::VoteGrid& a, const cv::VoteGrid& b) {
  if (a.cells.size() != b.cells.size()) return false;
  return std::memcmp(a.cells.data(), b.cells.data(), a.cells.size() * sizeof(cv::VoteCell)) == 0;
}

}  // namespace

TEST(GridVote, SinglePointDims) {
  cv::PointCloud cloud{{Vec3::Zero()}, std::nullopt};
  const auto grid = cv::grid_from_extent(cloud, Vec3::Zero(), cv::GridOptions{1.0});
  EXPECT_EQ(grid.geometry.dims, (std::array<int, 3>{2, 2, 2}));
  EXPECT_EQ(grid.geometry.origin, Vec3::Zero());
  EXPECT_EQ(grid.cells.size(), 8u);
}

TEST(GridVote, TwoPointDims) {
  cv::PointCloud cloud{{Vec3::Zero(), Vec3(1, 0, 0)}, std::nullopt};
  const auto grid = cv::grid_from_extent(cloud, Vec3::Zero(), cv::GridOptions{0.5});
  EXPECT_EQ(grid.geometry.dims[0], 3);
}

TEST(GridVote, PaddedRoomDims) {
  cv::PointCloud cloud{{Vec3(-3, 0, -3), Vec3(3, 3, 3)}, std::nullopt};
  const auto grid = cv::grid_from_extent(cloud, Vec3(1, 1, 1), cv::GridOptions{0.05});
  // pad = sqrt 3; x: ceil((6 + 2 sqrt 3) / 0.05) + 1 = ceil(189.28) + 1.
  EXPECT_EQ(grid.geometry.dims, (std::array<int, 3>{191, 131, 191}));
  EXPECT_LT((grid.geometry.origin - Vec3(-3 - std::sqrt(3.0), -std::sqrt(3.0), -3 - std::sqrt(3.0))).norm(), 1e-12);
}

TEST(GridVote, GridErrors) {
  EXPECT_THROW(cv::grid_from_extent(cv::PointCloud{}, Vec3::Ones(), {}), cv::InputError);
  cv::PointCloud cloud{{Vec3::Zero(), Vec3(10, 10, 10)}, std::nullopt};
  EXPECT_THROW(cv::grid_from_extent(cloud, Vec3::Ones(), cv::GridOptions{0.01, 1 << 20}), cv::ConfigError);
  EXPECT_THROW(cv::grid_from_extent(cloud, Vec3::Ones(), cv::GridOptions{0.0}), cv::ConfigError);
}

TEST(GridVote, ZeroObjectnessLeavesGridEmpty) {
  cv::PointCloud cloud{{Vec3(0.3, 0.2, 0.1)}, std::nullopt};
  cv::PredictionField field;
  field.push_back(Vec3(0.5, 0.5, 0.5), Vec3(1, 1, 1), 0.0, {1.0});
  auto grid = cv::grid_from_extent(cloud, Vec3::Ones(), cv::GridOptions{0.25});
  cv::canonical_vote(cloud, field, grid);
  for (const auto& c : grid.cells) {
    EXPECT_EQ(c.obj, 0.0);
    EXPECT_EQ(c.dir[0], 0.0);
    EXPECT_EQ(c.scale[0], 0.0);
  }
}

TEST(GridVote, ZeroLccVotesAtOwnPosition) {
  const Vec3 p(0.37, 0.21, -0.13);
  cv::PointCloud cloud{{p}, std::nullopt};
  cv::PredictionField field;
  field.push_back(Vec3::Zero(), Vec3(0.4, 0.7, 0.2), 1.0, {1.0});
  auto grid = cv::grid_from_extent(cloud, Vec3(0.4, 0.7, 0.2), cv::GridOptions{0.1});
  cv::canonical_vote(cloud, field, grid, cv::VoteOptions{120});
  EXPECT_NEAR(grid.total_mass(), 120.0, 1e-6);
  std::size_t nonzero = 0;
  for (std::size_t c = 0; c < grid.cells.size(); ++c) {
    if (grid.cells[c].obj == 0.0) continue;
    ++nonzero;
    EXPECT_LE((grid.geometry.cell_center(c) - p).cwiseAbs().maxCoeff(), grid.geometry.tau);
  }
  EXPECT_LE(nonzero, 8u);
  EXPECT_GE(nonzero, 1u);
}

TEST(GridVote, MatchesTentReference) {
  auto [cloud, field] = random_field(60, 4);
  auto fast = padded_grid(cloud, field, 0.1);
  auto fixed = fast;
  const auto want = reference_mass(cloud, field, fast.geometry, 24);
  cv::accumulate_votes(cloud, field, fast, cv::VoteOptions{24, cv::AccumulationMode::kFast, 1});
  cv::accumulate_votes(cloud, field, fixed, cv::VoteOptions{24, cv::AccumulationMode::kDeterministic, 1});
  for (std::size_t c = 0; c < want.size(); ++c) {
    ASSERT_NEAR(fast.cells[c].obj, want[c], 1e-9) << "cell " << c;
    ASSERT_NEAR(fixed.cells[c].obj, want[c], 1e-6) << "cell " << c;
  }
}

TEST(GridVote, VotesBeyondGridAreDropped) {
  cv::PointCloud cloud{{Vec3::Zero()}, std::nullopt};
  cv::PredictionField field;
  field.push_back(Vec3(1, 0, 0), Vec3(5, 1, 1), 1.0, {1.0});
  // Pad from a smaller scale so every vote lands outside.
  auto grid = cv::grid_from_extent(cloud, Vec3::Constant(0.5), cv::GridOptions{0.1});
  cv::canonical_vote(cloud, field, grid, cv::VoteOptions{8});
  EXPECT_EQ(grid.total_mass(), 0.0);
}

TEST(GridVote, SingleBoxPeakAndHeading) {
  const auto recipe = cv::testing::single_box_recipe(0, 2000);
  const auto [scene, cloud] = cv::make_scene(recipe, 42);
  const auto field = cv::oracle_field(scene, cloud, cv::NoiseModel{});
  cv::DetectConfig cfg;
  auto grid = *cv::make_vote_grid(cloud, field, cfg);
  const auto want = reference_mass(cloud, field, grid.geometry, 120);
  cv::canonical_vote(cloud, field, grid, cv::VoteOptions{120});

  const std::size_t peak = grid.argmax();
  std::size_t ref_peak = 0;
  for (std::size_t c = 1; c < want.size(); ++c) {
    if (want[c] > want[ref_peak]) ref_peak = c;
  }
  EXPECT_EQ(peak, ref_peak);
  EXPECT_NEAR(grid.cells[peak].obj, want[ref_peak], 1e-6 * want[ref_peak]);

  const auto& truth = scene.boxes.at(0).box.pose;
  const auto truth_cell = grid.geometry.unravel(*grid.geometry.cell_of(truth.center));
  const auto got_cell = grid.geometry.unravel(peak);
  for (int a = 0; a < 3; ++a) EXPECT_LE(std::abs(truth_cell[a] - got_cell[a]), 1);
  const auto reading = cv::read_cell(grid, peak);
  EXPECT_FALSE(reading.low_confidence);
  EXPECT_LE(cv::angle_distance(reading.alpha, truth.alpha), 2.0 * kPi / 120.0);
}

TEST(GridVote, MassConservation) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto [cloud, field] = random_field(200, seed);
    auto grid = padded_grid(cloud, field, 0.1);
    cv::canonical_vote(cloud, field, grid, cv::VoteOptions{30});
    double want = 0.0;
    for (double o : field.objectness) want += 30.0 * o;
    EXPECT_NEAR(grid.total_mass(), want, 1e-6 * want);
  }
}

TEST(GridVote, Linearity) {
  auto [a_cloud, a_field] = random_field(150, 31);
  auto [b_cloud, b_field] = random_field(150, 32);
  cv::PointCloud both = a_cloud;
  cv::PredictionField both_field = a_field;
  both.positions.insert(both.positions.end(), b_cloud.positions.begin(), b_cloud.positions.end());
  for (std::size_t i = 0; i < b_field.size(); ++i) {
    both_field.push_back(b_field.lcc[i], b_field.scale[i], b_field.objectness[i],
                         {b_field.class_row(i)[0], b_field.class_row(i)[1]});
  }
  for (auto mode : {cv::AccumulationMode::kDeterministic, cv::AccumulationMode::kFast}) {
    const auto empty = padded_grid(both, both_field, 0.1);
    auto ga = empty, gb = empty, gab = empty;
    const cv::VoteOptions opts{16, mode, 1};
    cv::accumulate_votes(a_cloud, a_field, ga, opts);
    cv::accumulate_votes(b_cloud, b_field, gb, opts);
    cv::accumulate_votes(both, both_field, gab, opts);
    for (std::size_t c = 0; c < gab.cells.size(); ++c) {
      ASSERT_NEAR(gab.cells[c].obj, ga.cells[c].obj + gb.cells[c].obj, 1e-9);
      for (int d = 0; d < 2; ++d) ASSERT_NEAR(gab.cells[c].dir[d], ga.cells[c].dir[d] + gb.cells[c].dir[d], 1e-9);
      for (int d = 0; d < 3; ++d) {
        ASSERT_NEAR(gab.cells[c].scale[d], ga.cells[c].scale[d] + gb.cells[c].scale[d], 1e-9);
      }
    }
  }
}

TEST(GridVote, TranslationEquivariance) {
  // Dyadic coordinates keep p - origin exact under the shift.
  cv::SplitMix64 rng(77);
  cv::PointCloud cloud;
  cv::PredictionField field;
  for (int i = 0; i < 100; ++i) {
    cloud.positions.emplace_back(static_cast<double>(rng() % 64) / 64.0, static_cast<double>(rng() % 64) / 64.0,
                                 static_cast<double>(rng() % 64) / 64.0);
    field.push_back(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)),
                    Vec3(rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5)), rng.uniform(), {1.0});
  }
  cv::VoteGrid base;
  base.geometry.origin = Vec3(-1, -1, -1);
  base.geometry.tau = 0.125;
  base.geometry.dims = {24, 24, 24};
  base.cells.assign(base.geometry.cell_count(), {});
  auto moved_grid = base;
  const Vec3 shift(3.5, -2.25, 17.0);
  moved_grid.geometry.origin += shift;
  cv::PointCloud moved = cloud;
  for (auto& p : moved.positions) p += shift;
  cv::canonical_vote(cloud, field, base, cv::VoteOptions{40});
  cv::canonical_vote(moved, field, moved_grid, cv::VoteOptions{40});
  EXPECT_TRUE(bit_identical(base, moved_grid));
  EXPECT_GT(base.total_mass(), 0.0);
}

TEST(GridVote, DeterministicAcrossJobs) {
  auto [cloud, field] = random_field(3000, 9);
  const auto empty = padded_grid(cloud, field, 0.05);
  auto serial = empty;
  cv::canonical_vote(cloud, field, serial, cv::VoteOptions{60, cv::AccumulationMode::kDeterministic, 1});
  for (unsigned jobs : {2u, 3u, 8u}) {
    auto par = empty;
    cv::canonical_vote(cloud, field, par, cv::VoteOptions{60, cv::AccumulationMode::kDeterministic, jobs});
    EXPECT_TRUE(bit_identical(serial, par)) << "jobs " << jobs;
  }
  auto again = empty;
  cv::canonical_vote(cloud, field, again, cv::VoteOptions{60, cv::AccumulationMode::kDeterministic, 1});
  EXPECT_TRUE(bit_identical(serial, again));

  auto fast = empty;
  cv::canonical_vote(cloud, field, fast, cv::VoteOptions{60, cv::AccumulationMode::kFast, 4});
  EXPECT_NEAR(fast.total_mass(), serial.total_mass(), 1e-6 * serial.total_mass());
}

TEST(GridVote, ReadCellSingleVote) {
  // k = 6 puts the votes on a unit circle one meter apart, so each cell near
  // the pi/3 target receives that vote alone.
  cv::PointCloud cloud{{Vec3::Zero()}, std::nullopt};
  cv::PredictionField field;
  field.push_back(Vec3(1, 0, 0), Vec3(1, 2, 3), 0.7, {1.0});
  auto grid = cv::grid_from_extent(cloud, Vec3(1, 2, 3), cv::GridOptions{0.1});
  cv::canonical_vote(cloud, field, grid, cv::VoteOptions{6, cv::AccumulationMode::kFast, 1});
  const Vec3 target(-std::cos(kPi / 3), 0.0, -std::sin(kPi / 3));
  const std::size_t cell = *grid.geometry.cell_of(target);
  const Vec3 gc = (target - grid.geometry.origin) / grid.geometry.tau;
  const auto idx = grid.geometry.unravel(cell);
  double w = 1.0;
  for (int a = 0; a < 3; ++a) w *= 1.0 - std::abs(gc[a] - (idx[a] + 0.5));
  const auto r = cv::read_cell(grid, idx[0], idx[1], idx[2]);
  EXPECT_NEAR(r.obj, 0.7 * w, 1e-12);
  EXPECT_NEAR(r.alpha, kPi / 3, 1e-12);
  EXPECT_LT((r.scale - Vec3(1, 2, 3)).norm(), 1e-12);
  EXPECT_FALSE(r.low_confidence);
}

TEST(GridVote, ReadCellEmptyAndAntipodal) {
  cv::PointCloud cloud{{Vec3::Zero()}, std::nullopt};
  cv::PredictionField field;
  field.push_back(Vec3::Zero(), Vec3(0.5, 0.5, 0.5), 1.0, {1.0});
  auto grid = cv::grid_from_extent(cloud, Vec3::Constant(0.5), cv::GridOptions{0.1});
  // k = 2: headings 0 and pi, both landing on the point itself.
  cv::canonical_vote(cloud, field, grid, cv::VoteOptions{2});
  const std::size_t peak = grid.argmax();
  const auto r = cv::read_cell(grid, peak);
  EXPECT_GT(r.obj, 0.0);
  EXPECT_TRUE(r.low_confidence);
  EXPECT_EQ(r.alpha, 0.0);

  const auto empty = cv::read_cell(grid, 0);
  EXPECT_EQ(empty.obj, 0.0);
  EXPECT_EQ(empty.alpha, 0.0);
  EXPECT_EQ(empty.scale, Vec3::Zero());
  EXPECT_TRUE(empty.low_confidence);

  EXPECT_THROW(cv::read_cell(grid, grid.cells.size()), std::out_of_range);
  EXPECT_THROW(cv::read_cell(grid, -1, 0, 0), std::out_of_range);
}

TEST(GridVote, NormalizedInvariants) {
  for (auto mode : {cv::AccumulationMode::kDeterministic, cv::AccumulationMode::kFast}) {
    auto [cloud, field] = random_field(500, 12);
    auto grid = padded_grid(cloud, field, 0.05);
    cv::canonical_vote(cloud, field, grid, cv::VoteOptions{50, mode, 1});
    for (const auto& c : grid.cells) {
      ASSERT_GE(c.obj, 0.0);
      if (c.obj > 0.0) {
        ASSERT_LE(std::hypot(c.dir[0], c.dir[1]), 1.0 + 1e-6);
        for (double s : c.scale) ASSERT_GE(s, 0.0);
      }
    }
    const auto copy = grid.cells;
    cv::normalize_grid(grid);
    EXPECT_EQ(std::memcmp(copy.data(), grid.cells.data(), copy.size() * sizeof(cv::VoteCell)), 0);
    EXPECT_THROW(cv::accumulate_votes(cloud, field, grid), std::logic_error);
  }
}

TEST(GridVote, InputErrors) {
  auto [cloud, field] = random_field(10, 1);
  auto grid = padded_grid(cloud, field, 0.1);
  cv::PointCloud shorter = cloud;
  shorter.positions.pop_back();
  EXPECT_THROW(cv::canonical_vote(shorter, field, grid), cv::InputError);
  EXPECT_THROW(cv::canonical_vote(cloud, field, grid, cv::VoteOptions{0}), cv::ConfigError);
}

TEST(GridVote, MaxPredictedScaleRespectsCut) {
  cv::PredictionField field;
  field.push_back(Vec3::Zero(), Vec3(5, 5, 5), 0.2, {1.0});
  field.push_back(Vec3::Zero(), Vec3(0.5, 0.7, 0.3), 0.9, {1.0});
  field.push_back(Vec3::Zero(), Vec3(0.6, 0.1, 0.2), 0.31, {1.0});
  const auto s = cv::max_predicted_scale(field, 0.3);
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(*s, Vec3(0.6, 0.7, 0.3));
  EXPECT_FALSE(cv::max_predicted_scale(field, 0.95).has_value());
}
