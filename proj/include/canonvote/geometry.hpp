#pragma once

#include <array>
#include <numeric>
#include <vector>

#include "canonvote/common.hpp"

namespace canonvote {

/// Rotation about the gravity (y) axis:
///
///     [ cos a   0  -sin a ]
///     [   0     1    0    ]
///     [ sin a   0   cos a ]
///
/// Every module uses this single sign convention.
inline Mat3 rotation_y(double alpha) {
  const double c = std::cos(alpha);
  const double s = std::sin(alpha);
  Mat3 r;
  r << c, 0.0, -s,
       0.0, 1.0, 0.0,
       s, 0.0, c;
  return r;
}

/// Gravity-aligned box pose.
///
/// `scale` is the multiplicative scale that maps the canonical cube [-1, 1]^3
/// onto the box, so the box extents are 2 * scale along each local axis.
struct BoxPose {
  Vec3 scale = Vec3::Ones();
  double alpha = 0.0;
  Vec3 center = Vec3::Zero();

  /// Builds a pose, wrapping alpha into [0, 2*pi). Throws on non-positive scale.
  static BoxPose make(const Vec3& scale, double alpha, const Vec3& center) {
    if (!(scale.array() > 0.0).all() || !scale.allFinite()) {
      throw std::invalid_argument("BoxPose: scale components must be finite and > 0");
    }
    return BoxPose{scale, wrap_angle(alpha), center};
  }

  Vec3 extents() const { return 2.0 * scale; }
  double volume() const { return 8.0 * scale.x() * scale.y() * scale.z(); }
};

/// A detection or ground-truth record.
struct OrientedBox {
  BoxPose pose;
  int class_id = 0;
  double score = 0.0;
};

/// Canonical (LCC) -> world: rotate the scaled canonical point about y, then
/// translate to the box center.
inline Vec3 lcc_to_world(const BoxPose& pose, const Vec3& lcc) {
  return rotation_y(pose.alpha) * lcc.cwiseProduct(pose.scale) + pose.center;
}

/// World -> canonical; exact inverse of lcc_to_world.
inline Vec3 world_to_lcc(const BoxPose& pose, const Vec3& p) {
  if (!(pose.scale.array() > 0.0).all()) {
    throw std::invalid_argument("world_to_lcc: scale components must be > 0");
  }
  return (rotation_y(pose.alpha).transpose() * (p - pose.center)).cwiseQuotient(pose.scale);
}

/// True when every canonical component lies strictly inside (-1, 1).
inline bool strictly_inside_unit_cube(const Vec3& lcc) {
  return (lcc.array().abs() < 1.0).all();
}

/// Rotations of the canonical frame that map an object of the given symmetry
/// order onto itself (order 1 = asymmetric).
inline std::vector<Mat3> symmetry_rotations(int order) {
  order = std::max(order, 1);
  std::vector<Mat3> out;
  out.reserve(static_cast<std::size_t>(order));
  for (int m = 0; m < order; ++m) out.push_back(rotation_y(kTwoPi * m / order));
  return out;
}

namespace detail {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline double cross2(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline double polygon_area(const std::vector<Point2>& poly) {
  if (poly.size() < 3) return 0.0;
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::fabs(a);
}

/// Counter-clockwise footprint corners in the (x, z) plane.
inline std::array<Point2, 4> footprint(const BoxPose& pose) {
  const double c = std::cos(pose.alpha);
  const double s = std::sin(pose.alpha);
  static constexpr double kSigns[4][2] = {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}};
  std::array<Point2, 4> out;
  for (int i = 0; i < 4; ++i) {
    const double lx = kSigns[i][0] * pose.scale.x();
    const double lz = kSigns[i][1] * pose.scale.z();
    out[i] = {pose.center.x() + c * lx - s * lz, pose.center.z() + s * lx + c * lz};
  }
  return out;
}

// Sutherland-Hodgman clip of a convex polygon against a convex CCW clip
// polygon. Points within kEps of a clip edge count as inside.
inline std::vector<Point2> clip_convex(std::vector<Point2> subject,
                                       const std::array<Point2, 4>& clip) {
  constexpr double kEps = 1e-12;
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Point2& a = clip[e];
    const Point2& b = clip[(e + 1) % clip.size()];
    std::vector<Point2> next;
    next.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Point2& p = subject[i];
      const Point2& q = subject[(i + 1) % subject.size()];
      const double sp = cross2(a, b, p);
      const double sq = cross2(a, b, q);
      const bool p_in = sp >= -kEps;
      const bool q_in = sq >= -kEps;
      if (p_in) next.push_back(p);
      if (p_in != q_in) {
        const double t = sp / (sp - sq);
        next.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
    subject = std::move(next);
  }
  return subject;
}

}  // namespace detail

/// Area of the intersection of the two boxes' footprints in the xz-plane.
inline double footprint_intersection_area(const BoxPose& a, const BoxPose& b) {
  const auto fa = detail::footprint(a);
  const auto fb = detail::footprint(b);
  std::vector<detail::Point2> subject(fa.begin(), fa.end());
  return detail::polygon_area(detail::clip_convex(std::move(subject), fb));
}

/// Intersection volume of two gravity-aligned oriented boxes.
inline double box_intersection_volume(const BoxPose& a, const BoxPose& b) {
  const double lo = std::max(a.center.y() - a.scale.y(), b.center.y() - b.scale.y());
  const double hi = std::min(a.center.y() + a.scale.y(), b.center.y() + b.scale.y());
  if (hi <= lo) return 0.0;
  return footprint_intersection_area(a, b) * (hi - lo);
}

/// Exact 3D IoU of two gravity-aligned oriented boxes.
inline double box_iou_3d(const BoxPose& a, const BoxPose& b) {
  const double va = a.volume();
  const double vb = b.volume();
  if (!(va > 0.0) || !(vb > 0.0)) return 0.0;
  const double inter = box_intersection_volume(a, b);
  const double uni = va + vb - inter;
  if (!(uni > 0.0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double box_iou_3d(const OrientedBox& a, const OrientedBox& b) {
  return box_iou_3d(a.pose, b.pose);
}

/// Greedy per-class non-maximum suppression. Boxes are visited by descending
/// score (ties: lower input index first); a box is dropped when its IoU with
/// an already kept box of the same class exceeds `iou_threshold`.
inline std::vector<OrientedBox> nms(const std::vector<OrientedBox>& boxes, double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return boxes[l].score > boxes[r].score;
  });
  std::vector<OrientedBox> kept;
  for (std::size_t idx : order) {
    const OrientedBox& cand = boxes[idx];
    bool suppressed = false;
    for (const OrientedBox& k : kept) {
      if (k.class_id == cand.class_id && box_iou_3d(k, cand) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

}  // namespace canonvote
