#pragma once

#include <algorithm>
#include <cmath>

#include "cobe/error.hpp"

namespace cobe {

/// Axis-aligned box in pixel coordinates; valid when x2 > x1 and y2 > y1.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  bool valid() const noexcept {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x2 > x1 && y2 > y1;
  }
  double area() const noexcept { return (x2 - x1) * (y2 - y1); }

  bool operator==(const Box&) const = default;
};

inline double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw Error(Errc::invalid_box, "eval", "degenerate box in IoU");
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

}  // namespace cobe
