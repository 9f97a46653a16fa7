#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "usdaf/adapt/scale.hpp"
#include "usdaf/detect/model.hpp"
#include "usdaf/eval/ap.hpp"
#include "usdaf/scene/label_space.hpp"
#include "usdaf/scene/render.hpp"

namespace usdaf::eval {

/// Detections and ground truth of one test image.
struct ImageEval {
  std::vector<det::Detection> detections;
  std::vector<scene::Annotation> ground_truth;
};

/// Per-class AP; absent entries are excluded from averaging.
using ClassAps = std::map<int, std::optional<double>>;

namespace detail {

struct ClassPool {
  std::vector<bool> tp;
  std::vector<double> confidence;
  std::size_t num_gt = 0;
};

/// Matches every (image, class) pair and records, per detection, its TP flag
/// and the box of the GT it matched (or nullopt).
struct MatchedDetection {
  int class_id;
  double confidence;
  bool tp;
  det::Box box;
  std::optional<det::Box> gt;
};

inline std::vector<MatchedDetection> match_all(std::span<const ImageEval> images, const std::vector<int>& classes,
                                               double iou_threshold) {
  std::vector<MatchedDetection> out;
  for (const auto& img : images) {
    for (int c : classes) {
      std::vector<det::Box> db, gb;
      std::vector<double> conf;
      for (const auto& d : img.detections)
        if (d.class_id == c) {
          db.push_back(d.box);
          conf.push_back(d.confidence);
        }
      for (const auto& g : img.ground_truth)
        if (g.class_id == c) gb.push_back(g.box);
      const auto m = match_detections(db, conf, gb, iou_threshold);
      for (std::size_t i = 0; i < db.size(); ++i) {
        std::optional<det::Box> gt;
        if (m.matched_gt[i] >= 0) gt = gb[static_cast<std::size_t>(m.matched_gt[i])];
        out.push_back({c, conf[i], m.true_positive[i], db[i], gt});
      }
    }
  }
  return out;
}

}  // namespace detail

/// AP of each listed class over a test set.
inline ClassAps per_class_ap(std::span<const ImageEval> images, const std::vector<int>& classes,
                             double iou_threshold = 0.5) {
  std::map<int, detail::ClassPool> pools;
  for (int c : classes) pools[c];
  for (const auto& img : images)
    for (const auto& g : img.ground_truth)
      if (auto it = pools.find(g.class_id); it != pools.end()) ++it->second.num_gt;
  for (const auto& m : detail::match_all(images, classes, iou_threshold)) {
    pools[m.class_id].tp.push_back(m.tp);
    pools[m.class_id].confidence.push_back(m.confidence);
  }
  ClassAps out;
  for (auto& [c, p] : pools) out[c] = average_precision(p.tp, p.confidence, p.num_gt);
  return out;
}

/// Mean of the available APs of the common classes.
inline double mean_ap(const ClassAps& aps, const std::vector<int>& common_classes) {
  if (common_classes.empty()) throw ConfigError("mean_ap: empty common class set");
  double s = 0.0;
  std::size_t n = 0;
  for (int c : common_classes) {
    auto it = aps.find(c);
    if (it == aps.end() || !it->second) continue;
    s += *it->second;
    ++n;
  }
  return n ? s / double(n) : 0.0;
}

/// Removes target-private GT and detections of source-private classes, so only
/// common classes are scored.
inline std::vector<ImageEval> restrict_to_common(std::span<const ImageEval> images,
                                                 const scene::LabelSpaceConfig& labels) {
  std::vector<ImageEval> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    ImageEval e;
    for (const auto& d : img.detections)
      if (labels.is_common(d.class_id)) e.detections.push_back(d);
    for (const auto& g : img.ground_truth)
      if (labels.is_common(g.class_id)) e.ground_truth.push_back(g);
    out.push_back(std::move(e));
  }
  return out;
}

/// mAP per scale bucket. A detection belongs to the bucket of the GT it
/// matched, an unmatched one to the bucket of its own box. Buckets without
/// any GT are absent.
inline std::array<std::optional<double>, 3> per_scale_map(std::span<const ImageEval> images,
                                                          const std::vector<int>& classes,
                                                          double scale_factor = adapt::kDefaultScaleFactor,
                                                          double iou_threshold = 0.5) {
  auto bucket_of = [&](const det::Box& b) {
    return b.area() > 0.0 ? std::optional<std::size_t>(adapt::index_of(adapt::scale_bucket_raw(b.area(), scale_factor)))
                          : std::nullopt;
  };
  std::array<std::map<int, detail::ClassPool>, 3> pools;
  std::array<std::size_t, 3> bucket_gt{};
  for (auto& p : pools)
    for (int c : classes) p[c];
  for (const auto& img : images)
    for (const auto& g : img.ground_truth) {
      const auto b = bucket_of(g.box);
      if (!b) continue;
      auto it = pools[*b].find(g.class_id);
      if (it == pools[*b].end()) continue;
      ++it->second.num_gt;
      ++bucket_gt[*b];
    }
  for (const auto& m : detail::match_all(images, classes, iou_threshold)) {
    const auto b = bucket_of(m.gt ? *m.gt : m.box);
    if (!b) continue;
    pools[*b][m.class_id].tp.push_back(m.tp);
    pools[*b][m.class_id].confidence.push_back(m.confidence);
  }
  std::array<std::optional<double>, 3> out;
  for (std::size_t b = 0; b < 3; ++b) {
    if (bucket_gt[b] == 0) continue;
    ClassAps aps;
    for (auto& [c, p] : pools[b]) aps[c] = average_precision(p.tp, p.confidence, p.num_gt);
    out[b] = mean_ap(aps, classes);
  }
  return out;
}

struct ClassGain {
  int class_id = 0;
  double gain = 0.0;  // adapted AP - baseline AP
  bool negative = false;
};

/// Per-class AP difference against a baseline over the same classes.
inline std::vector<ClassGain> negative_transfer_report(const ClassAps& adapted, const ClassAps& baseline) {
  std::vector<ClassGain> out;
  if (adapted.size() != baseline.size()) throw ConfigError("negative_transfer_report: class lists differ");
  for (auto a = adapted.begin(), b = baseline.begin(); a != adapted.end(); ++a, ++b) {
    if (a->first != b->first) throw ConfigError("negative_transfer_report: class lists differ");
    if (!a->second || !b->second) continue;
    const double g = *a->second - *b->second;
    out.push_back({a->first, g, g < 0.0});
  }
  return out;
}

}  // namespace usdaf::eval
