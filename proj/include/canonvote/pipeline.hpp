#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "canonvote/boxgen.hpp"
#include "canonvote/geometry.hpp"
#include "canonvote/gridvote.hpp"

namespace canonvote {

/// Parameters of the full detection pipeline.
struct DetectConfig {
  double tau = kDefaultTau;
  int k = kDefaultOrientations;
  BoxGenConfig boxgen;
  double nms_iou = 0.3;
  AccumulationMode mode = AccumulationMode::kDeterministic;
  unsigned jobs = 1;
  std::size_t memory_budget_bytes = GridOptions{}.memory_budget_bytes;
  /// Forces every objectness to 1 during voting only.
  bool ignore_objectness = false;

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (k < 1) throw ConfigError("k must be >= 1");
    if (!(nms_iou >= 0.0 && nms_iou <= 1.0)) throw ConfigError("nms_iou must be in [0,1]");
    boxgen.validate();
  }
};

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct DetectResult {
  std::vector<OrientedBox> boxes;
  std::vector<StageTiming> timings;
  /// Filled normalized grid, when requested.
  std::optional<VoteGrid> grid;
  std::size_t candidates = 0;
};

namespace detail {

class StageClock {
 public:
  explicit StageClock(std::vector<StageTiming>& out) : out_(out) {}
  void lap(const char* stage) {
    const auto now = std::chrono::steady_clock::now();
    out_.push_back({stage, std::chrono::duration<double>(now - last_).count()});
    last_ = now;
  }

 private:
  std::vector<StageTiming>& out_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace detail

/// Grid sized from the cloud and the largest scale predicted for points whose
/// objectness passes the cut; nullopt when no point passes.
inline std::optional<VoteGrid> make_vote_grid(const PointCloud& cloud, const PredictionField& field,
                                              const DetectConfig& cfg) {
  const auto max_scale = max_predicted_scale(field, cfg.boxgen.objectness_cut);
  if (!max_scale || cloud.empty()) return std::nullopt;
  return grid_from_extent(cloud, *max_scale, GridOptions{cfg.tau, cfg.memory_budget_bytes});
}

/// Grid construction, canonical voting, greedy extraction with back-projection
/// checking, then per-class NMS.
inline DetectResult detect(const PointCloud& cloud, const PredictionField& field,
                           const DetectConfig& cfg, bool keep_grid = false) {
  cfg.validate();
  if (cloud.size() != field.size()) {
    throw InputError("detect: cloud has " + std::to_string(cloud.size()) +
                     " points but the field has " + std::to_string(field.size()));
  }
  DetectResult out;
  detail::StageClock clock(out.timings);
  auto grid = make_vote_grid(cloud, field, cfg);
  clock.lap("grid");
  if (!grid) return out;

  VoteOptions vopts{cfg.k, cfg.mode, cfg.jobs};
  if (cfg.ignore_objectness) {
    PredictionField forced = field;
    std::fill(forced.objectness.begin(), forced.objectness.end(), 1.0);
    canonical_vote(cloud, forced, *grid, vopts);
  } else {
    canonical_vote(cloud, field, *grid, vopts);
  }
  clock.lap("vote");

  BoxGenResult gen = extract_boxes(*grid, cloud, field, cfg.boxgen);
  out.candidates = gen.candidates.size();
  clock.lap("boxgen");

  out.boxes = nms(gen.boxes, cfg.nms_iou);
  clock.lap("nms");
  if (keep_grid) out.grid = std::move(grid);
  return out;
}

}  // namespace canonvote
