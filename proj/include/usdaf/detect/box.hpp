#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "usdaf/core/error.hpp"

namespace usdaf::det {

/// Axis-aligned box in pixel coordinates; continuous, x_max/y_max exclusive.
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  bool valid() const { return x_max > x_min && y_max > y_min; }

  friend bool operator==(const Box&, const Box&) = default;
};

/// (tx, ty, tw, th) regression offsets relative to a reference box.
using BoxDelta = std::array<double, 4>;

/// Width/height log-scale clamp used when decoding, keeps exp() bounded.
inline constexpr double kMaxLogScale = 4.135166556742356;  // ln(1000/16)

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline Box box_transform(const Box& anchor, const BoxDelta& d) {
  if (!anchor.valid()) throw Error("box_transform: degenerate anchor");
  const double w = anchor.width(), h = anchor.height();
  const double cx = anchor.center_x() + d[0] * w;
  const double cy = anchor.center_y() + d[1] * h;
  const double nw = w * std::exp(std::min(d[2], kMaxLogScale));
  const double nh = h * std::exp(std::min(d[3], kMaxLogScale));
  return {cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh};
}

inline BoxDelta box_encode(const Box& anchor, const Box& gt) {
  if (!anchor.valid() || !gt.valid()) throw Error("box_encode: degenerate box");
  const double w = anchor.width(), h = anchor.height();
  return {(gt.center_x() - anchor.center_x()) / w, (gt.center_y() - anchor.center_y()) / h,
          std::log(gt.width() / w), std::log(gt.height() / h)};
}

inline Box clip(const Box& b, double width, double height) {
  return {std::clamp(b.x_min, 0.0, width), std::clamp(b.y_min, 0.0, height), std::clamp(b.x_max, 0.0, width),
          std::clamp(b.y_max, 0.0, height)};
}

/// Greedy NMS. Visits boxes by descending score (ties: lower index first) and
/// drops every box whose IoU with an already kept box exceeds the threshold.
inline std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                                    double iou_threshold = 0.5) {
  if (boxes.size() != scores.size()) throw Error("nms: boxes and scores differ in length");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<char> suppressed(boxes.size(), 0);
  std::vector<std::size_t> keep;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const auto i = order[oi];
    if (suppressed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const auto j = order[oj];
      if (!suppressed[j] && iou(boxes[i], boxes[j]) > iou_threshold) suppressed[j] = 1;
    }
  }
  return keep;
}

}  // namespace usdaf::det
