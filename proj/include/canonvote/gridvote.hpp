#pragma once

// Objectness-weighted canonical voting onto a dense grid.
//
// Every point i votes, for each of k candidate headings r_j = 2*pi*j/k, at the
// box center implied by its canonical coordinate and scale:
//
//     center = p_i - R_y(r_j) * (s_i (*) lcc_i)
//
// The vote carries weight o_i and is splatted trilinearly over the 8 nearest
// cell centers. Alongside the objectness mass the grid accumulates the
// weighted heading direction (cos r_j, sin r_j) and the weighted scale; a final
// normalization divides both by the mass.

#include <array>
#include <atomic>
#include <cstdint>
#include <optional>
#include <vector>

#include "canonvote/common.hpp"
#include "canonvote/point_cloud.hpp"
#include "canonvote/prediction.hpp"

namespace canonvote {

inline constexpr int kDefaultOrientations = 120;
inline constexpr double kDefaultTau = 0.05;

/// Dense grid layout. Cell (ix, iy, iz) covers
/// [origin + i * tau, origin + (i + 1) * tau) per axis; dims are ordered x, y, z.
struct GridGeometry {
  Vec3 origin = Vec3::Zero();
  double tau = kDefaultTau;
  std::array<int, 3> dims{0, 0, 0};

  std::size_t cell_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  bool contains(int ix, int iy, int iz) const {
    return ix >= 0 && iy >= 0 && iz >= 0 && ix < dims[0] && iy < dims[1] && iz < dims[2];
  }

  std::size_t linear(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(ix) * static_cast<std::size_t>(dims[1]) +
            static_cast<std::size_t>(iy)) *
               static_cast<std::size_t>(dims[2]) +
           static_cast<std::size_t>(iz);
  }

  std::array<int, 3> unravel(std::size_t idx) const {
    const auto d1 = static_cast<std::size_t>(dims[1]);
    const auto d2 = static_cast<std::size_t>(dims[2]);
    return {static_cast<int>(idx / (d1 * d2)), static_cast<int>((idx / d2) % d1),
            static_cast<int>(idx % d2)};
  }

  Vec3 cell_center(int ix, int iy, int iz) const {
    return origin + tau * Vec3(ix + 0.5, iy + 0.5, iz + 0.5);
  }

  Vec3 cell_center(std::size_t idx) const {
    const auto c = unravel(idx);
    return cell_center(c[0], c[1], c[2]);
  }

  /// Index of the cell containing a world point, if it is inside the grid.
  std::optional<std::size_t> cell_of(const Vec3& p) const {
    const Vec3 g = (p - origin) / tau;
    const int ix = static_cast<int>(std::floor(g.x()));
    const int iy = static_cast<int>(std::floor(g.y()));
    const int iz = static_cast<int>(std::floor(g.z()));
    if (!g.allFinite() || !contains(ix, iy, iz)) return std::nullopt;
    return linear(ix, iy, iz);
  }
};

/// Accumulators of one cell: objectness mass, heading direction (cos, sin)
/// and scale. After normalization `dir` and `scale` hold mass-weighted means.
struct VoteCell {
  double obj = 0.0;
  std::array<double, 2> dir{0.0, 0.0};
  std::array<double, 3> scale{0.0, 0.0, 0.0};
};

struct VoteGrid {
  GridGeometry geometry;
  std::vector<VoteCell> cells;
  bool normalized = false;

  std::size_t size() const { return cells.size(); }

  double total_mass() const {
    double sum = 0.0;
    for (const VoteCell& c : cells) sum += c.obj;
    return sum;
  }

  /// Linear index of the largest-mass cell (lowest index on ties).
  std::size_t argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      if (cells[i].obj > cells[best].obj) best = i;
    }
    return best;
  }
};

struct GridOptions {
  double tau = kDefaultTau;
  /// Upper bound on grid memory (cells * sizeof(VoteCell) plus accumulation
  /// scratch of the same size).
  std::size_t memory_budget_bytes = std::size_t{3} << 29;
};

/// Bytes needed to fill a grid with the given number of cells.
inline std::size_t grid_bytes(std::size_t cells) {
  return cells * (sizeof(VoteCell) + 6 * sizeof(std::int64_t));
}

/// Allocates an empty grid covering the cloud's bounding box padded on every
/// side by max(max_scale) * sqrt(3), which bounds |R_y(r) (s (*) lcc)| for
/// canonical coordinates in the unit cube. dims = ceil(extent / tau) + 1 per
/// axis, never fewer than 2 so a trilinear stencil always fits.
inline VoteGrid grid_from_extent(const PointCloud& cloud, const Vec3& max_scale,
                                 const GridOptions& opts = {}) {
  if (cloud.empty()) throw InputError("grid_from_extent: empty point cloud");
  if (!(opts.tau > 0.0) || !std::isfinite(opts.tau)) {
    throw ConfigError("grid_from_extent: tau must be > 0");
  }
  if (!max_scale.allFinite()) throw InputError("grid_from_extent: non-finite max_scale");
  const auto [lo, hi] = cloud.bounds();
  const double pad = max_scale.cwiseAbs().maxCoeff() * std::sqrt(3.0);
  VoteGrid grid;
  grid.geometry.tau = opts.tau;
  grid.geometry.origin = lo - Vec3::Constant(pad);
  const Vec3 extent = (hi - lo) + Vec3::Constant(2.0 * pad);
  double cells = 1.0;
  for (int a = 0; a < 3; ++a) {
    // The small slack keeps exact multiples (1.0 / 0.5) from rounding up.
    const double n = std::ceil(extent[a] / opts.tau - 1e-9) + 1.0;
    const double d = std::max(n, 2.0);
    if (d > 2e9) throw ConfigError("grid_from_extent: grid dimension overflow");
    grid.geometry.dims[a] = static_cast<int>(d);
    cells *= d;
  }
  if (cells * static_cast<double>(sizeof(VoteCell) + 6 * sizeof(std::int64_t)) >
      static_cast<double>(opts.memory_budget_bytes)) {
    throw ConfigError("grid_from_extent: grid of " + std::to_string(static_cast<long long>(cells)) +
                      " cells exceeds the memory budget of " +
                      std::to_string(opts.memory_budget_bytes) + " bytes; increase tau");
  }
  grid.cells.assign(grid.geometry.cell_count(), VoteCell{});
  return grid;
}

enum class AccumulationMode {
  /// Fixed-point integer accumulation: integer addition is associative, so
  /// the result is bit-identical for any shard count or thread interleaving.
  kDeterministic,
  /// Floating-point accumulation with relaxed atomics; result depends on the
  /// interleaving of threads.
  kFast,
};

struct VoteOptions {
  int k = kDefaultOrientations;
  AccumulationMode mode = AccumulationMode::kDeterministic;
  unsigned jobs = 1;
};

namespace detail {

// 2^28 fixed-point units per unit of objectness mass.
inline constexpr double kFixedScale = 268435456.0;
inline constexpr double kFixedInv = 1.0 / kFixedScale;

struct Stencil {
  std::array<int, 2> idx;
  std::array<double, 2> w;
};

// Cell-center stencil along one axis. Returns false when the coordinate
// (in cells, relative to the origin) falls outside [0, dim].
inline bool axis_stencil(double g, int dim, Stencil& out) {
  if (!(g >= 0.0 && g <= static_cast<double>(dim))) return false;
  const double u = g - 0.5;
  const double fl = std::floor(u);
  const double f = u - fl;
  const int i0 = static_cast<int>(fl);
  out.idx = {std::clamp(i0, 0, dim - 1), std::clamp(i0 + 1, 0, dim - 1)};
  out.w = {1.0 - f, f};
  return true;
}

template <bool kAtomic, typename T>
inline void add_to(T& slot, T value) {
  if constexpr (kAtomic) {
    std::atomic_ref<T>(slot).fetch_add(value, std::memory_order_relaxed);
  } else {
    slot += value;
  }
}

// Calls sink(cell_index, weight, cos, sin, point) for each nonzero stencil
// weight of each in-grid vote of points [begin, end).
template <typename Sink>
void for_each_vote(const PointCloud& cloud, const PredictionField& field, const GridGeometry& g,
                   const std::vector<double>& cos_table, const std::vector<double>& sin_table,
                   std::size_t begin, std::size_t end, Sink&& sink) {
  const int k = static_cast<int>(cos_table.size());
  const double inv_tau = 1.0 / g.tau;
  for (std::size_t i = begin; i < end; ++i) {
    const double o = field.objectness[i];
    if (!(o > 0.0)) continue;
    const Vec3 rel = cloud.positions[i] - g.origin;
    const Vec3 v = field.scale[i].cwiseProduct(field.lcc[i]);
    Stencil sy;
    if (!axis_stencil((rel.y() - v.y()) * inv_tau, g.dims[1], sy)) continue;
    for (int j = 0; j < k; ++j) {
      const double c = cos_table[static_cast<std::size_t>(j)];
      const double s = sin_table[static_cast<std::size_t>(j)];
      Stencil sx;
      Stencil sz;
      if (!axis_stencil((rel.x() - (c * v.x() - s * v.z())) * inv_tau, g.dims[0], sx)) continue;
      if (!axis_stencil((rel.z() - (s * v.x() + c * v.z())) * inv_tau, g.dims[2], sz)) continue;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          const double wab = sx.w[a] * sy.w[b];
          for (int d = 0; d < 2; ++d) {
            const double w = wab * sz.w[d];
            if (w == 0.0) continue;
            sink(g.linear(sx.idx[a], sy.idx[b], sz.idx[d]), o * w, c, s, i);
          }
        }
      }
    }
  }
}

inline void orientation_tables(int k, std::vector<double>& cos_table,
                               std::vector<double>& sin_table) {
  cos_table.resize(static_cast<std::size_t>(k));
  sin_table.resize(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    const double r = kTwoPi * j / k;
    cos_table[static_cast<std::size_t>(j)] = std::cos(r);
    sin_table[static_cast<std::size_t>(j)] = std::sin(r);
  }
}

template <bool kAtomic>
void accumulate_fixed(const PointCloud& cloud, const PredictionField& field,
                      const GridGeometry& g, const std::vector<double>& ct,
                      const std::vector<double>& st, std::size_t begin, std::size_t end,
                      std::vector<std::int64_t>& acc) {
  for_each_vote(cloud, field, g, ct, st, begin, end,
                [&](std::size_t cell, double weight, double c, double s, std::size_t i) {
                  const auto q = static_cast<std::int64_t>(weight * kFixedScale + 0.5);
                  if (q == 0) return;
                  const double qd = static_cast<double>(q);
                  const Vec3& sc = field.scale[i];
                  std::int64_t* slot = acc.data() + 6 * cell;
                  // Truncation toward zero keeps |dir| <= mass and scale >= 0
                  // exactly after normalization.
                  add_to<kAtomic>(slot[0], q);
                  add_to<kAtomic>(slot[1], static_cast<std::int64_t>(qd * c));
                  add_to<kAtomic>(slot[2], static_cast<std::int64_t>(qd * s));
                  add_to<kAtomic>(slot[3], static_cast<std::int64_t>(qd * sc.x()));
                  add_to<kAtomic>(slot[4], static_cast<std::int64_t>(qd * sc.y()));
                  add_to<kAtomic>(slot[5], static_cast<std::int64_t>(qd * sc.z()));
                });
}

template <bool kAtomic>
void accumulate_float(const PointCloud& cloud, const PredictionField& field,
                      const GridGeometry& g, const std::vector<double>& ct,
                      const std::vector<double>& st, std::size_t begin, std::size_t end,
                      std::vector<VoteCell>& cells) {
  for_each_vote(cloud, field, g, ct, st, begin, end,
                [&](std::size_t cell, double weight, double c, double s, std::size_t i) {
                  VoteCell& vc = cells[cell];
                  const Vec3& sc = field.scale[i];
                  add_to<kAtomic>(vc.obj, weight);
                  add_to<kAtomic>(vc.dir[0], weight * c);
                  add_to<kAtomic>(vc.dir[1], weight * s);
                  add_to<kAtomic>(vc.scale[0], weight * sc.x());
                  add_to<kAtomic>(vc.scale[1], weight * sc.y());
                  add_to<kAtomic>(vc.scale[2], weight * sc.z());
                });
}

}  // namespace detail

/// Adds the canonical votes of every point to the (unnormalized) grid.
/// Runs in O(N * k) independent of grid size.
inline void accumulate_votes(const PointCloud& cloud, const PredictionField& field,
                             VoteGrid& grid, const VoteOptions& opts = {}) {
  if (cloud.size() != field.size()) {
    throw InputError("canonical_vote: cloud has " + std::to_string(cloud.size()) +
                     " points but the prediction field has " + std::to_string(field.size()));
  }
  if (field.scale.size() != field.size() || field.objectness.size() != field.size()) {
    throw InputError("canonical_vote: prediction field arrays have mismatched lengths");
  }
  if (opts.k < 1) throw ConfigError("canonical_vote: orientation count k must be >= 1");
  if (grid.normalized) throw std::logic_error("canonical_vote: grid is already normalized");
  if (grid.cells.size() != grid.geometry.cell_count()) {
    throw std::logic_error("canonical_vote: grid storage does not match its geometry");
  }

  std::vector<double> ct;
  std::vector<double> st;
  detail::orientation_tables(opts.k, ct, st);
  const unsigned jobs = resolve_jobs(opts.jobs);
  const GridGeometry& g = grid.geometry;

  if (opts.mode == AccumulationMode::kFast) {
    parallel_for_shards(cloud.size(), jobs, [&](std::size_t b, std::size_t e, unsigned) {
      if (jobs > 1) {
        detail::accumulate_float<true>(cloud, field, g, ct, st, b, e, grid.cells);
      } else {
        detail::accumulate_float<false>(cloud, field, g, ct, st, b, e, grid.cells);
      }
    });
    return;
  }

  std::vector<std::int64_t> acc(6 * grid.cells.size(), 0);
  parallel_for_shards(cloud.size(), jobs, [&](std::size_t b, std::size_t e, unsigned) {
    if (jobs > 1) {
      detail::accumulate_fixed<true>(cloud, field, g, ct, st, b, e, acc);
    } else {
      detail::accumulate_fixed<false>(cloud, field, g, ct, st, b, e, acc);
    }
  });
  for (std::size_t c = 0; c < grid.cells.size(); ++c) {
    const std::int64_t* a = acc.data() + 6 * c;
    if (a[0] == 0) continue;
    VoteCell& vc = grid.cells[c];
    vc.obj += static_cast<double>(a[0]) * detail::kFixedInv;
    vc.dir[0] += static_cast<double>(a[1]) * detail::kFixedInv;
    vc.dir[1] += static_cast<double>(a[2]) * detail::kFixedInv;
    for (int d = 0; d < 3; ++d) vc.scale[d] += static_cast<double>(a[3 + d]) * detail::kFixedInv;
  }
}

/// Divides the direction and scale accumulators by the objectness mass.
/// Cells without mass get zero direction and scale.
inline void normalize_grid(VoteGrid& grid) {
  if (grid.normalized) return;
  for (VoteCell& c : grid.cells) {
    if (c.obj > 0.0) {
      const double inv = 1.0 / c.obj;
      c.dir[0] *= inv;
      c.dir[1] *= inv;
      for (double& s : c.scale) s *= inv;
    } else {
      c.obj = 0.0;
      c.dir = {0.0, 0.0};
      c.scale = {0.0, 0.0, 0.0};
    }
  }
  grid.normalized = true;
}

/// Fills an empty grid with the votes of every point and normalizes it.
inline void canonical_vote(const PointCloud& cloud, const PredictionField& field, VoteGrid& grid,
                           const VoteOptions& opts = {}) {
  accumulate_votes(cloud, field, grid, opts);
  normalize_grid(grid);
}

/// Decoded contents of one normalized cell.
struct CellReading {
  double obj = 0.0;
  double alpha = 0.0;
  Vec3 scale = Vec3::Zero();
  /// Direction magnitude below 1e-9: the heading is undefined and reported as 0.
  bool low_confidence = true;
};

inline CellReading read_cell(const VoteGrid& grid, std::size_t idx) {
  if (idx >= grid.cells.size()) throw std::out_of_range("read_cell: cell index out of range");
  const VoteCell& c = grid.cells[idx];
  CellReading r;
  r.obj = c.obj;
  r.scale = Vec3(c.scale[0], c.scale[1], c.scale[2]);
  const double mag = std::hypot(c.dir[0], c.dir[1]);
  if (mag < 1e-9) {
    r.alpha = 0.0;
    r.low_confidence = true;
  } else {
    r.alpha = wrap_angle(std::atan2(c.dir[1], c.dir[0]));
    r.low_confidence = false;
  }
  return r;
}

inline CellReading read_cell(const VoteGrid& grid, int ix, int iy, int iz) {
  if (!grid.geometry.contains(ix, iy, iz)) {
    throw std::out_of_range("read_cell: cell index out of range");
  }
  return read_cell(grid, grid.geometry.linear(ix, iy, iz));
}

/// Component-wise maximum predicted scale over points whose objectness
/// exceeds `objectness_cut`; nullopt when there are none.
inline std::optional<Vec3> max_predicted_scale(const PredictionField& field,
                                               double objectness_cut) {
  std::optional<Vec3> out;
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (!(field.objectness[i] > objectness_cut)) continue;
    out = out ? Vec3(out->cwiseMax(field.scale[i])) : field.scale[i];
  }
  return out;
}

}  // namespace canonvote
