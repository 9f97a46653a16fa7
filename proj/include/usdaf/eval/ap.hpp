#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "usdaf/detect/box.hpp"

namespace usdaf::eval {

struct MatchResult {
  std::vector<bool> true_positive;   // per detection, input order
  std::vector<int> matched_gt;       // per detection, -1 when unmatched
  std::vector<bool> gt_matched;      // per GT
};

/// Descending-confidence order, ties broken by lower index.
inline std::vector<std::size_t> confidence_order(std::span<const double> confidences) {
  std::vector<std::size_t> order(confidences.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return confidences[a] > confidences[b]; });
  return order;
}

/// Greedy single-assignment matching of one class in one image: each
/// detection, by descending confidence, takes the unmatched GT of highest
/// IoU if that IoU reaches the threshold.
inline MatchResult match_detections(std::span<const det::Box> dets, std::span<const double> confidences,
                                    std::span<const det::Box> gts, double iou_threshold = 0.5) {
  MatchResult r;
  r.true_positive.assign(dets.size(), false);
  r.matched_gt.assign(dets.size(), -1);
  r.gt_matched.assign(gts.size(), false);
  for (auto d : confidence_order(confidences)) {
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (r.gt_matched[g]) continue;
      const double v = det::iou(dets[d], gts[g]);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      r.true_positive[d] = true;
      r.matched_gt[d] = best;
      r.gt_matched[static_cast<std::size_t>(best)] = true;
    }
  }
  return r;
}

/// All-point interpolated AP: area under the precision envelope. Returns
/// nullopt when there is nothing to evaluate (no GT, no detection) and 0 for
/// detections without any GT.
inline std::optional<double> average_precision(const std::vector<bool>& tp, std::span<const double> confidences,
                                               std::size_t num_gt) {
  if (tp.size() != confidences.size()) throw Error("average_precision: flag/confidence length mismatch");
  if (num_gt == 0) return tp.empty() ? std::nullopt : std::optional<double>(0.0);
  if (tp.empty()) return 0.0;
  if (static_cast<std::size_t>(std::count(tp.begin(), tp.end(), true)) > num_gt)
    throw Error("average_precision: more true positives than ground truth");
  const auto order = confidence_order(confidences);
  const std::size_t n = order.size();
  std::vector<double> precision(n), recall(n);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    hits += tp[order[k]] ? 1 : 0;
    precision[k] = double(hits) / double(k + 1);
    recall[k] = double(hits) / double(num_gt);
  }
  for (std::size_t k = n - 1; k-- > 0;) precision[k] = std::max(precision[k], precision[k + 1]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (recall[k] > prev_recall) {
      ap += (recall[k] - prev_recall) * precision[k];
      prev_recall = recall[k];
    }
  }
  return ap;
}

}  // namespace usdaf::eval
