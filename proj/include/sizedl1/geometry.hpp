#pragma once

#include <algorithm>
#include <cmath>

namespace sizedl1::geometry {

/// Box in center/size parameterization, normalized image units.
/// Valid boxes have finite fields and strictly positive dimensions.
struct BoxCcwh {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
};

/// Box in corner parameterization, x1 < x2 and y1 < y2.
struct BoxXyxy {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
};

inline bool valid(const BoxCcwh& b) {
  return std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) &&
         std::isfinite(b.h) && b.w > 0.0 && b.h > 0.0;
}

inline bool valid(const BoxXyxy& b) {
  return std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) &&
         std::isfinite(b.y2) && b.x1 < b.x2 && b.y1 < b.y2;
}

inline BoxXyxy ccwh_to_xyxy(const BoxCcwh& b) {
  return {b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.cx + 0.5 * b.w,
          b.cy + 0.5 * b.h};
}

inline BoxCcwh xyxy_to_ccwh(const BoxXyxy& b) {
  return {0.5 * (b.x1 + b.x2), 0.5 * (b.y1 + b.y2), b.x2 - b.x1, b.y2 - b.y1};
}

inline double area(const BoxXyxy& b) { return (b.x2 - b.x1) * (b.y2 - b.y1); }

inline double intersection_area(const BoxXyxy& a, const BoxXyxy& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

/// Intersection over union. Union is at least the area of either box, so no
/// epsilon is needed in the denominator for valid (positive-area) inputs.
inline double iou(const BoxXyxy& a, const BoxXyxy& b) {
  const double inter = intersection_area(a, b);
  const double uni = area(a) + area(b) - inter;
  return inter / uni;
}

/// Smallest axis-aligned box enclosing both arguments.
inline BoxXyxy enclosing_box(const BoxXyxy& a, const BoxXyxy& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
          std::max(a.y2, b.y2)};
}

/// Generalized IoU: iou(a,b) - (|C| - |A u B|) / |C| with C the smallest
/// enclosing box. Ranges over (-1, 1]; equals IoU when C coincides with the
/// union.
inline double giou(const BoxXyxy& a, const BoxXyxy& b) {
  const double inter = intersection_area(a, b);
  const double uni = area(a) + area(b) - inter;
  const double c = area(enclosing_box(a, b));
  return inter / uni - (c - uni) / c;
}

inline double iou(const BoxCcwh& a, const BoxCcwh& b) {
  return iou(ccwh_to_xyxy(a), ccwh_to_xyxy(b));
}

inline double giou(const BoxCcwh& a, const BoxCcwh& b) {
  return giou(ccwh_to_xyxy(a), ccwh_to_xyxy(b));
}

}  // namespace sizedl1::geometry
