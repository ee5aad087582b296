#pragma once

// Greedy box extraction from a normalized vote grid with canonical
// back-projection checking.
//
// Repeatedly take the highest-mass cell; stop once it falls below delta.
// The cell center, mean heading and mean scale form a candidate pose. Every
// point is mapped back into the candidate's canonical frame; points strictly
// inside the unit cube clear the grid cell they occupy and, when their
// objectness exceeds the cut, are compared with their predicted canonical
// coordinate. The candidate is accepted when enough inside points are
// positive (pos > beta * cnt) and the mean objectness-weighted discrepancy
// stays below gamma.

#include <map>
#include <limits>
#include <queue>
#include <vector>

#include "canonvote/geometry.hpp"
#include "canonvote/gridvote.hpp"
#include "canonvote/point_cloud.hpp"
#include "canonvote/prediction.hpp"

namespace canonvote {

struct BoxGenConfig {
  double delta = 60.0;
  double beta = 0.2;
  double gamma = 0.3;
  double objectness_cut = 0.3;
  std::size_t max_boxes = 1000;
  /// Disables the canonical-consistency test (acceptance on beta alone).
  bool check_backprojection = true;
  /// Rotational symmetry order per class id; classes not listed are order 1.
  std::map<int, int> symmetry_order;

  void validate() const {
    if (!(delta > 0.0)) throw ConfigError("BoxGenConfig: delta must be > 0");
    if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("BoxGenConfig: beta must be in (0,1)");
    if (!(gamma > 0.0)) throw ConfigError("BoxGenConfig: gamma must be > 0");
    if (!(objectness_cut > 0.0 && objectness_cut < 1.0)) {
      throw ConfigError("BoxGenConfig: objectness_cut must be in (0,1)");
    }
    if (max_boxes == 0) throw ConfigError("BoxGenConfig: max_boxes must be >= 1");
  }

  int symmetry_of(int class_id) const {
    const auto it = symmetry_order.find(class_id);
    return it == symmetry_order.end() ? 1 : it->second;
  }
};

/// Paper-scale peak threshold rescaled to a different expected number of
/// points per object. The reference of 1000 points per object is a working
/// assumption; the result should be checked against measured peak masses.
inline double delta_for_density(double points_per_object, double reference_delta = 60.0,
                                 double reference_points = 1000.0) {
  return reference_delta * points_per_object / reference_points;
}

/// Majority class among the given points (argmax of each point's scores);
/// ties go to the smaller class id. Requires at least one point.
inline int assign_class(const std::vector<std::size_t>& positive_inside,
                        const PredictionField& field) {
  if (positive_inside.empty()) {
    throw std::invalid_argument("assign_class: no positive points inside the box");
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(field.num_classes), 0);
  for (std::size_t i : positive_inside) ++counts[static_cast<std::size_t>(field.predicted_class(i))];
  int best = 0;
  for (int c = 1; c < field.num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

/// Bookkeeping for one extracted candidate.
struct CandidateRecord {
  std::size_t peak_cell = 0;
  double peak_mass = 0.0;
  BoxPose pose;
  bool low_confidence = false;
  std::size_t cnt = 0;
  std::size_t pos = 0;
  double o_sum = 0.0;
  double err = 0.0;
  int class_id = -1;
  bool accepted = false;

  double mean_error() const { return o_sum > 0.0 ? err / o_sum : 0.0; }
};

struct BoxGenResult {
  std::vector<OrientedBox> boxes;
  std::vector<CandidateRecord> candidates;
  /// Number of cells with mass >= delta before extraction began.
  std::size_t cells_above_delta = 0;
  /// Objectness channel after extraction.
  std::vector<double> residual_mass;
};

namespace detail {

// Points bucketed on a coarse uniform grid (CSR layout) for box queries.
class PointBuckets {
 public:
  PointBuckets(const PointCloud& cloud, double bucket_size) : size_(bucket_size) {
    if (cloud.empty()) return;
    const auto [lo, hi] = cloud.bounds();
    lo_ = lo;
    for (int a = 0; a < 3; ++a) {
      dims_[a] = std::max(1, static_cast<int>(std::floor((hi[a] - lo[a]) / size_)) + 1);
    }
    const std::size_t nb = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
    start_.assign(nb + 1, 0);
    std::vector<std::size_t> bucket(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      bucket[i] = bucket_of(cloud.positions[i]);
      ++start_[bucket[i] + 1];
    }
    for (std::size_t b = 0; b < nb; ++b) start_[b + 1] += start_[b];
    items_.resize(cloud.size());
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < cloud.size(); ++i) items_[fill[bucket[i]]++] = i;
  }

  // Visits indices of all points whose bucket overlaps [lo, hi], in bucket
  // order and ascending point index within a bucket.
  template <typename Fn>
  void query(const Vec3& lo, const Vec3& hi, Fn&& fn) const {
    if (items_.empty()) return;
    std::array<int, 3> b0{};
    std::array<int, 3> b1{};
    for (int a = 0; a < 3; ++a) {
      b0[a] = std::clamp(static_cast<int>(std::floor((lo[a] - lo_[a]) / size_)), 0, dims_[a] - 1);
      b1[a] = std::clamp(static_cast<int>(std::floor((hi[a] - lo_[a]) / size_)), 0, dims_[a] - 1);
      if (hi[a] < lo_[a] || lo[a] > lo_[a] + size_ * dims_[a]) return;
    }
    for (int x = b0[0]; x <= b1[0]; ++x) {
      for (int y = b0[1]; y <= b1[1]; ++y) {
        for (int z = b0[2]; z <= b1[2]; ++z) {
          const std::size_t b = (static_cast<std::size_t>(x) * dims_[1] + y) * dims_[2] + z;
          for (std::size_t k = start_[b]; k < start_[b + 1]; ++k) fn(items_[k]);
        }
      }
    }
  }

 private:
  std::size_t bucket_of(const Vec3& p) const {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a) {
      c[a] = std::clamp(static_cast<int>(std::floor((p[a] - lo_[a]) / size_)), 0, dims_[a] - 1);
    }
    return (static_cast<std::size_t>(c[0]) * dims_[1] + c[1]) * dims_[2] + c[2];
  }

  double size_;
  Vec3 lo_ = Vec3::Zero();
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::size_t> start_;
  std::vector<std::size_t> items_;
};

struct HeapEntry {
  double mass;
  std::size_t cell;
};

// Max-heap on mass; among equal masses the lower cell index pops first.
struct HeapLess {
  bool operator()(const HeapEntry& a, const HeapEntry& b) const {
    if (a.mass != b.mass) return a.mass < b.mass;
    return a.cell > b.cell;
  }
};

}  // namespace detail

/// Runs the greedy extraction and returns every candidate with its statistics.
/// The grid is not modified; the objectness channel is consumed on a copy.
inline BoxGenResult extract_boxes(const VoteGrid& grid, const PointCloud& cloud,
                                  const PredictionField& field, const BoxGenConfig& cfg) {
  cfg.validate();
  if (!grid.normalized) throw std::logic_error("generate_boxes: grid must be normalized");
  if (cloud.size() != field.size()) {
    throw InputError("generate_boxes: cloud and prediction field lengths differ");
  }

  const GridGeometry& g = grid.geometry;
  BoxGenResult result;
  result.residual_mass.resize(grid.cells.size());
  std::vector<detail::HeapEntry> seeds;
  for (std::size_t c = 0; c < grid.cells.size(); ++c) {
    const double m = grid.cells[c].obj;
    result.residual_mass[c] = m;
    if (m >= cfg.delta) seeds.push_back({m, c});
  }
  result.cells_above_delta = seeds.size();
  if (seeds.empty()) return result;

  std::vector<double>& mass = result.residual_mass;
  std::priority_queue<detail::HeapEntry, std::vector<detail::HeapEntry>, detail::HeapLess> heap(
      detail::HeapLess{}, std::move(seeds));

  const Vec3 max_scale = [&] {
    Vec3 m = Vec3::Zero();
    for (const VoteCell& c : grid.cells) {
      if (c.obj > 0.0) m = m.cwiseMax(Vec3(c.scale[0], c.scale[1], c.scale[2]));
    }
    return m;
  }();
  const double bucket = std::max({g.tau * 4.0, max_scale.maxCoeff() * 0.5, 1e-3});
  const detail::PointBuckets buckets(cloud, bucket);

  std::vector<std::size_t> inside_positive;
  std::vector<Vec3> inside_positive_lcc;
  std::size_t accepted = 0;

  while (!heap.empty() && accepted < cfg.max_boxes) {
    const detail::HeapEntry top = heap.top();
    heap.pop();
    // Masses only ever drop to zero, so a mismatch marks a consumed cell.
    if (mass[top.cell] != top.mass) continue;

    const CellReading reading = read_cell(grid, top.cell);
    CandidateRecord rec;
    rec.peak_cell = top.cell;
    rec.peak_mass = top.mass;
    rec.low_confidence = reading.low_confidence;
    rec.pose.center = g.cell_center(top.cell);
    rec.pose.alpha = reading.alpha;
    rec.pose.scale = reading.scale;

    // Zero the peak and its 3x3x3 neighborhood so every iteration makes
    // progress even when no point lands inside the candidate.
    const auto pc = g.unravel(top.cell);
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          if (g.contains(pc[0] + dx, pc[1] + dy, pc[2] + dz)) {
            mass[g.linear(pc[0] + dx, pc[1] + dy, pc[2] + dz)] = 0.0;
          }
        }
      }
    }

    if (!(reading.scale.array() > 0.0).all()) {
      result.candidates.push_back(rec);
      continue;
    }

    const Mat3 rt = rotation_y(rec.pose.alpha).transpose();
    const Vec3 inv_scale = reading.scale.cwiseInverse();
    const double ca = std::fabs(std::cos(rec.pose.alpha));
    const double sa = std::fabs(std::sin(rec.pose.alpha));
    const Vec3 half(ca * reading.scale.x() + sa * reading.scale.z(), reading.scale.y(),
                    sa * reading.scale.x() + ca * reading.scale.z());

    inside_positive.clear();
    inside_positive_lcc.clear();
    buckets.query(rec.pose.center - half, rec.pose.center + half, [&](std::size_t i) {
      const Vec3 back = (rt * (cloud.positions[i] - rec.pose.center)).cwiseProduct(inv_scale);
      if (!strictly_inside_unit_cube(back)) return;
      ++rec.cnt;
      if (const auto cell = g.cell_of(cloud.positions[i])) mass[*cell] = 0.0;
      if (field.objectness[i] > cfg.objectness_cut) {
        inside_positive.push_back(i);
        inside_positive_lcc.push_back(back);
      }
    });
    rec.pos = inside_positive.size();

    if (rec.pos > 0) {
      rec.class_id = assign_class(inside_positive, field);
      const auto syms = symmetry_rotations(cfg.symmetry_of(rec.class_id));
      for (std::size_t n = 0; n < inside_positive.size(); ++n) {
        const std::size_t i = inside_positive[n];
        const double o = field.objectness[i];
        double best = std::numeric_limits<double>::infinity();
        for (const Mat3& sym : syms) {
          best = std::min(best, (sym * field.lcc[i] - inside_positive_lcc[n]).norm());
        }
        rec.o_sum += o;
        rec.err += o * best;
      }
    }

    const bool enough_positive =
        static_cast<double>(rec.pos) > cfg.beta * static_cast<double>(rec.cnt) && rec.pos > 0;
    const bool consistent = !cfg.check_backprojection || rec.err / rec.o_sum < cfg.gamma;
    rec.accepted = enough_positive && consistent;
    if (rec.accepted) {
      result.boxes.push_back(OrientedBox{rec.pose, rec.class_id, rec.peak_mass});
      ++accepted;
    }
    result.candidates.push_back(rec);
  }
  return result;
}

/// Boxes accepted by the greedy extraction, in extraction order, each scored
/// by its peak vote mass. NMS is applied separately.
inline std::vector<OrientedBox> generate_boxes(const VoteGrid& grid, const PointCloud& cloud,
                                               const PredictionField& field,
                                               const BoxGenConfig& cfg) {
  return extract_boxes(grid, cloud, field, cfg).boxes;
}

}  // namespace canonvote
