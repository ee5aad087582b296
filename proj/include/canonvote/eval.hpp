#pragma once

// Detection metrics, the direct-offset voting baseline and ablation runs.
//
// AP follows the usual protocol: detections of a class are pooled over all
// scenes and visited by descending score (ties: scene id, then detection
// index). Each one claims the unmatched ground-truth box of its class in its
// scene with the highest IoU at or above the threshold, otherwise it is a
// false positive. The precision-recall curve is integrated with all-point
// interpolation. Detection scores are peak vote masses, so the ranking across
// scenes depends on point density.

#include <map>
#include <queue>
#include <optional>
#include <string>
#include <vector>

#include "canonvote/boxgen.hpp"
#include "canonvote/geometry.hpp"
#include "canonvote/gridvote.hpp"
#include "canonvote/oracle.hpp"
#include "canonvote/pipeline.hpp"
#include "canonvote/scenegen.hpp"

namespace canonvote {

using SceneBoxes = std::vector<std::vector<OrientedBox>>;

struct ClassAp {
  double ap = 0.0;
  std::size_t num_gt = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct ApResult {
  double iou_threshold = 0.5;
  /// Classes with at least one ground-truth box.
  std::map<int, ClassAp> per_class;
  double map = 0.0;
  /// matched[scene][gt] after greedy matching.
  std::vector<std::vector<bool>> gt_matched;
};

/// All-point interpolated AP from a ranked list of TP flags.
inline double ap_from_ranked(const std::vector<bool>& is_tp, std::size_t num_gt) {
  if (num_gt == 0 || is_tp.empty()) return 0.0;
  std::vector<double> recall(is_tp.size());
  std::vector<double> precision(is_tp.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    if (is_tp[i]) ++tp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = is_tp.size() - 1; i > 0; --i) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    ap += (recall[i] - prev) * precision[i];
    prev = recall[i];
  }
  return ap;
}

inline ApResult average_precision(const SceneBoxes& detections, const SceneBoxes& ground_truth,
                                  double iou_threshold) {
  if (detections.size() != ground_truth.size()) {
    throw std::invalid_argument("average_precision: detections and ground truth scene counts differ");
  }
  ApResult res;
  res.iou_threshold = iou_threshold;
  res.gt_matched.resize(ground_truth.size());
  for (std::size_t s = 0; s < ground_truth.size(); ++s) {
    res.gt_matched[s].assign(ground_truth[s].size(), false);
    for (const auto& g : ground_truth[s]) res.per_class[g.class_id].num_gt += 1;
  }

  struct Ranked {
    double score;
    std::size_t scene;
    std::size_t index;
  };
  std::map<int, std::vector<Ranked>> by_class;
  for (std::size_t s = 0; s < detections.size(); ++s) {
    for (std::size_t d = 0; d < detections[s].size(); ++d) {
      by_class[detections[s][d].class_id].push_back({detections[s][d].score, s, d});
    }
  }

  for (auto& [cls, ranked] : by_class) {
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.scene != b.scene) return a.scene < b.scene;
      return a.index < b.index;
    });
    std::vector<bool> is_tp;
    is_tp.reserve(ranked.size());
    for (const Ranked& r : ranked) {
      const OrientedBox& det = detections[r.scene][r.index];
      const auto& gts = ground_truth[r.scene];
      double best_iou = -1.0;
      std::size_t best = gts.size();
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].class_id != cls || res.gt_matched[r.scene][g]) continue;
        const double iou = box_iou_3d(det, gts[g]);
        if (iou >= iou_threshold && iou > best_iou) {
          best_iou = iou;
          best = g;
        }
      }
      const bool tp = best < gts.size();
      if (tp) res.gt_matched[r.scene][best] = true;
      is_tp.push_back(tp);
    }
    auto it = res.per_class.find(cls);
    if (it == res.per_class.end()) continue;  // no ground truth: excluded
    ClassAp& c = it->second;
    c.tp = static_cast<std::size_t>(std::count(is_tp.begin(), is_tp.end(), true));
    c.fp = is_tp.size() - c.tp;
    c.ap = ap_from_ranked(is_tp, c.num_gt);
  }
  double sum = 0.0;
  for (auto& [cls, c] : res.per_class) {
    c.fn = c.num_gt - c.tp;
    sum += c.ap;
  }
  res.map = res.per_class.empty() ? 0.0 : sum / static_cast<double>(res.per_class.size());
  return res;
}

struct RecallBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t total = 0;
  std::size_t matched = 0;
  /// Absent for empty bins.
  std::optional<double> recall;
};

/// Decile-style edges of the observed distribution: bins + 1 quantiles from
/// the minimum to the maximum.
inline std::vector<double> quantile_bin_edges(std::vector<double> values, int bins = 10) {
  if (values.empty() || bins < 1) return {};
  std::sort(values.begin(), values.end());
  std::vector<double> edges;
  for (int b = 0; b <= bins; ++b) {
    const double q = static_cast<double>(b) / bins * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(q));
    const auto hi = std::min(values.size() - 1, lo + 1);
    edges.push_back(values[lo] + (q - static_cast<double>(lo)) * (values[hi] - values[lo]));
  }
  return edges;
}

/// Recall of ground-truth boxes binned by partial index. Box b of scene s
/// falls in bin i when edges[i] <= index < edges[i+1]; the last bin includes
/// its upper edge and indexes outside the edges are clamped into the end bins.
inline std::vector<RecallBin> recall_by_partial_index(const SceneBoxes& detections,
                                                      const SceneBoxes& ground_truth,
                                                      const std::vector<std::vector<double>>& indexes,
                                                      double iou_threshold,
                                                      const std::vector<double>& bin_edges) {
  if (bin_edges.size() < 2) throw std::invalid_argument("recall_by_partial_index: need >= 2 edges");
  if (!std::is_sorted(bin_edges.begin(), bin_edges.end())) {
    throw std::invalid_argument("recall_by_partial_index: edges must be ascending");
  }
  if (indexes.size() != ground_truth.size()) {
    throw std::invalid_argument("recall_by_partial_index: one index list per scene is required");
  }
  const ApResult match = average_precision(detections, ground_truth, iou_threshold);
  std::vector<RecallBin> bins(bin_edges.size() - 1);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    bins[b].lo = bin_edges[b];
    bins[b].hi = bin_edges[b + 1];
  }
  for (std::size_t s = 0; s < ground_truth.size(); ++s) {
    if (indexes[s].size() != ground_truth[s].size()) {
      throw std::invalid_argument("recall_by_partial_index: index count differs from box count");
    }
    for (std::size_t g = 0; g < ground_truth[s].size(); ++g) {
      const double v = indexes[s][g];
      const auto it = std::upper_bound(bin_edges.begin(), bin_edges.end(), v);
      std::size_t b = it == bin_edges.begin() ? 0 : static_cast<std::size_t>(it - bin_edges.begin()) - 1;
      b = std::min(b, bins.size() - 1);
      bins[b].total += 1;
      if (match.gt_matched[s][g]) bins[b].matched += 1;
    }
  }
  for (RecallBin& b : bins) {
    if (b.total > 0) b.recall = static_cast<double>(b.matched) / static_cast<double>(b.total);
  }
  return bins;
}

struct EvalReport {
  std::vector<double> iou_thresholds{0.25, 0.5};
  std::vector<ApResult> ap;
  double map_25 = 0.0;
  double map_50 = 0.0;
  std::vector<double> bin_edges;
  std::vector<RecallBin> recall_50;
};

/// AP at every threshold plus recall@0.5 by partial index. Empty
/// `bin_edges` selects decile edges of the observed indexes.
inline EvalReport evaluate(const SceneBoxes& detections, const SceneBoxes& ground_truth,
                           const std::vector<std::vector<double>>& partial_idx,
                           std::vector<double> bin_edges = {},
                           std::vector<double> thresholds = {0.25, 0.5}) {
  EvalReport rep;
  rep.iou_thresholds = thresholds;
  for (double t : thresholds) {
    rep.ap.push_back(average_precision(detections, ground_truth, t));
    if (t == 0.25) rep.map_25 = rep.ap.back().map;
    if (t == 0.5) rep.map_50 = rep.ap.back().map;
  }
  if (bin_edges.empty()) {
    std::vector<double> all;
    for (const auto& v : partial_idx) all.insert(all.end(), v.begin(), v.end());
    bin_edges = quantile_bin_edges(all);
  }
  rep.bin_edges = bin_edges;
  if (bin_edges.size() >= 2) {
    rep.recall_50 = recall_by_partial_index(detections, ground_truth, partial_idx, 0.5, bin_edges);
  }
  return rep;
}

/// Thresholds of the direct-offset baseline.
struct DirectVoteConfig {
  double tau = kDefaultTau;
  double delta = 60.0;
  double objectness_cut = 0.3;
  std::size_t max_boxes = 1000;
  std::size_t memory_budget_bytes = GridOptions{}.memory_budget_bytes;
};

/// Baseline: each point casts one vote at p + offset weighted by its
/// objectness; peaks at or above delta become axis-aligned boxes with the
/// mean voted scale. Without canonical predictions there is nothing to check,
/// so each emitted box simply clears the grid cells whose centers it covers.
/// The class is the majority over positive points voting into the box.
inline std::vector<OrientedBox> direct_vote_detect(const PointCloud& cloud, const OffsetField& offsets,
                                                   const DirectVoteConfig& cfg) {
  if (cloud.size() != offsets.size()) {
    throw InputError("direct_vote_detect: cloud and offset field lengths differ");
  }
  if (!(cfg.delta > 0.0)) throw ConfigError("direct_vote_detect: delta must be > 0");
  std::vector<std::size_t> voters;
  PointCloud extent;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!(offsets.objectness[i] > 0.0)) continue;
    voters.push_back(i);
    extent.positions.push_back(cloud.positions[i]);
    extent.positions.push_back(cloud.positions[i] + offsets.offset[i]);
  }
  if (voters.empty()) return {};
  VoteGrid grid = grid_from_extent(extent, Vec3::Zero(), GridOptions{cfg.tau, cfg.memory_budget_bytes});
  const GridGeometry& g = grid.geometry;

  for (std::size_t i : voters) {
    const Vec3 rel = (cloud.positions[i] + offsets.offset[i] - g.origin) / g.tau;
    detail::Stencil st[3];
    if (!detail::axis_stencil(rel.x(), g.dims[0], st[0]) ||
        !detail::axis_stencil(rel.y(), g.dims[1], st[1]) ||
        !detail::axis_stencil(rel.z(), g.dims[2], st[2])) {
      continue;
    }
    const double o = offsets.objectness[i];
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        for (int c = 0; c < 2; ++c) {
          const double w = o * st[0].w[a] * st[1].w[b] * st[2].w[c];
          if (w == 0.0) continue;
          VoteCell& cell = grid.cells[g.linear(st[0].idx[a], st[1].idx[b], st[2].idx[c])];
          cell.obj += w;
          for (int d = 0; d < 3; ++d) cell.scale[d] += w * offsets.scale[i][d];
        }
      }
    }
  }
  normalize_grid(grid);

  std::vector<detail::HeapEntry> seeds;
  std::vector<double> mass(grid.cells.size());
  for (std::size_t c = 0; c < grid.cells.size(); ++c) {
    mass[c] = grid.cells[c].obj;
    if (mass[c] >= cfg.delta) seeds.push_back({mass[c], c});
  }
  std::priority_queue<detail::HeapEntry, std::vector<detail::HeapEntry>, detail::HeapLess> heap(
      detail::HeapLess{}, std::move(seeds));

  std::vector<OrientedBox> boxes;
  int num_classes = 1;
  for (int c : offsets.class_id) num_classes = std::max(num_classes, c + 1);
  while (!heap.empty() && boxes.size() < cfg.max_boxes) {
    const detail::HeapEntry top = heap.top();
    heap.pop();
    if (mass[top.cell] != top.mass) continue;
    const VoteCell& cell = grid.cells[top.cell];
    const Vec3 center = g.cell_center(top.cell);
    const Vec3 scale(cell.scale[0], cell.scale[1], cell.scale[2]);
    mass[top.cell] = 0.0;
    if (!(scale.array() > 0.0).all()) continue;

    // Clear the cells covered by the box.
    const auto lo = g.unravel(top.cell);
    std::array<int, 3> r{};
    for (int a = 0; a < 3; ++a) r[a] = static_cast<int>(std::ceil(scale[a] / g.tau));
    for (int x = lo[0] - r[0]; x <= lo[0] + r[0]; ++x) {
      for (int y = lo[1] - r[1]; y <= lo[1] + r[1]; ++y) {
        for (int z = lo[2] - r[2]; z <= lo[2] + r[2]; ++z) {
          if (!g.contains(x, y, z)) continue;
          const Vec3 d = (g.cell_center(x, y, z) - center).cwiseAbs();
          if ((d.array() <= scale.array()).all()) mass[g.linear(x, y, z)] = 0.0;
        }
      }
    }

    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (std::size_t i : voters) {
      if (!(offsets.objectness[i] > cfg.objectness_cut)) continue;
      const Vec3 d = (cloud.positions[i] + offsets.offset[i] - center).cwiseAbs();
      if ((d.array() < scale.array()).all()) ++counts[static_cast<std::size_t>(offsets.class_id[i])];
    }
    int best = 0;
    for (int c = 1; c < num_classes; ++c) {
      if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
    }
    boxes.push_back(OrientedBox{BoxPose{scale, 0.0, center}, best, top.mass});
  }
  return boxes;
}

/// One scene of an ablation suite with both kinds of predictions.
struct AblationCase {
  Scene scene;
  PointCloud cloud;
  PredictionField field;
  OffsetField offsets;
};

/// Adversarial additions to an ablation scene.
struct SpuriousClusterOptions {
  /// Points in the cluster; 0 disables it.
  std::size_t points = 0;
  Vec3 scale = Vec3(0.35, 0.4, 0.35);
  int class_id = 0;
};

/// Generates one ablation scene: oracle and direct-offset fields under the
/// same noise model, plus an optional spurious cluster placed on free floor.
inline AblationCase make_ablation_case(const SceneRecipe& recipe, const NoiseModel& noise,
                                       std::uint64_t seed, const SpuriousClusterOptions& spurious = {}) {
  auto [scene, cloud] = make_scene(recipe, seed);
  NoiseModel nm = noise;
  nm.seed = seed;
  PredictionField field = oracle_field(scene, cloud, nm);
  if (spurious.points > 0) {
    SplitMix64 rng(stream_seed(seed, 0xab1a7e));
    const double r_spur = std::hypot(spurious.scale.x(), spurious.scale.z());
    const double hx = recipe.floor_x / 2.0 - r_spur;
    const double hz = recipe.floor_z / 2.0 - r_spur;
    std::optional<Vec3> center;
    for (int attempt = 0; attempt < recipe.max_attempts && !center && hx > 0.0 && hz > 0.0; ++attempt) {
      // Lifted slightly so floor samples stay outside the cluster's box.
      const Vec3 c(rng.uniform(-hx, hx), spurious.scale.y() + 0.02, rng.uniform(-hz, hz));
      bool clear = true;
      for (const auto& b : scene.boxes) {
        const Vec3& s = b.box.pose.scale;
        const Vec3 d = b.box.pose.center - c;
        clear = clear && std::hypot(d.x(), d.z()) >= std::hypot(s.x(), s.z()) + r_spur + recipe.clearance;
      }
      if (clear) center = c;
    }
    if (!center) throw ConfigError("make_ablation_case: no free floor area for the spurious cluster");
    inject_spurious_cluster(scene, cloud, field, *center, spurious.scale, spurious.class_id, spurious.points,
                            seed);
  }
  OffsetField offsets = direct_offset_field(scene, cloud, nm);
  return {std::move(scene), std::move(cloud), std::move(field), std::move(offsets)};
}

struct AblationRow {
  std::string name;
  double map_50 = 0.0;
};

inline const char* const kAblationFinal = "Ours (final)";
inline const char* const kAblationDirect = "Ours (direct voting)";
inline const char* const kAblationNoBackProjection = "Ours (no back projection check)";
inline const char* const kAblationNoObjectness = "Ours (no objectness)";

/// Runs the suite four ways and reports mAP@0.5 for each:
/// the full pipeline; direct-offset voting; extraction accepting on the
/// positive-fraction test alone; voting with all objectness forced to 1.
inline std::vector<AblationRow> run_ablations(const std::vector<AblationCase>& suite,
                                              const DetectConfig& cfg,
                                              const DirectVoteConfig& direct_cfg) {
  SceneBoxes gt;
  for (const auto& c : suite) gt.push_back(c.scene.ground_truth());

  auto run = [&](const DetectConfig& variant) {
    SceneBoxes dets;
    for (const auto& c : suite) {
      DetectConfig v = variant;
      for (const auto& cls : c.scene.classes) v.boxgen.symmetry_order[cls.id] = cls.symmetry_order;
      dets.push_back(detect(c.cloud, c.field, v).boxes);
    }
    return average_precision(dets, gt, 0.5).map;
  };

  std::vector<AblationRow> rows;
  rows.push_back({kAblationFinal, run(cfg)});

  SceneBoxes direct;
  for (const auto& c : suite) {
    direct.push_back(nms(direct_vote_detect(c.cloud, c.offsets, direct_cfg), cfg.nms_iou));
  }
  rows.push_back({kAblationDirect, average_precision(direct, gt, 0.5).map});

  DetectConfig no_bp = cfg;
  no_bp.boxgen.check_backprojection = false;
  rows.push_back({kAblationNoBackProjection, run(no_bp)});

  DetectConfig no_obj = cfg;
  no_obj.ignore_objectness = true;
  rows.push_back({kAblationNoObjectness, run(no_obj)});
  return rows;
}

}  // namespace canonvote
