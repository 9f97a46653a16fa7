#pragma once

#include <array>
#include <optional>
#include <vector>

#include "usdaf/adapt/heads.hpp"
#include "usdaf/detect/model.hpp"
#include "usdaf/scene/dataset.hpp"

namespace usdaf::adapt {

/// Mean instance-level entry-0 prediction per (domain, common/private) group.
/// Empty groups stay absent.
struct GroupMeans {
  std::optional<double> source_private;
  std::optional<double> source_common;
  std::optional<double> target_common;
  std::optional<double> target_private;
  std::array<std::size_t, 4> counts{};

  /// source_private < source_common < target_common < target_private; nullopt
  /// when a group is missing.
  std::optional<bool> ordering_holds() const {
    if (!source_private || !source_common || !target_common || !target_private) return std::nullopt;
    return *source_private < *source_common && *source_common < *target_common && *target_common < *target_private;
  }
};

/// Runs the instance head on the GT boxes of evaluation scenes (annotation
/// access is diagnostic, never fed back into training).
inline GroupMeans discriminator_group_means(const det::Detector& det, const DiscriminatorHeads& heads,
                                            const scene::SceneSplit& source, const scene::SceneSplit& target,
                                            const scene::LabelSpaceConfig& labels, std::size_t max_images = 0) {
  std::array<double, 4> sums{};
  std::array<std::size_t, 4> counts{};
  for (const auto* split : {&source, &target}) {
    const bool is_target = split->domain() == scene::Domain::Target;
    const std::size_t n = max_images ? std::min(max_images, split->size()) : split->size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto anns = split->evaluation_annotations(i);
      if (anns.empty()) continue;
      std::vector<det::Box> boxes;
      for (const auto& a : anns) boxes.push_back(a.box);
      const auto features = det.backbone_forward(det.image_tensor(split->image(i)));
      const auto preds = heads.instance(det.roi_pool(features, boxes));
      for (std::size_t k = 0; k < anns.size(); ++k) {
        const bool common = labels.is_common(anns[k].class_id);
        const std::size_t g = is_target ? (common ? 2 : 3) : (common ? 1 : 0);
        sums[g] += preds[k * heads.entries()];
        ++counts[g];
      }
    }
  }
  GroupMeans out;
  out.counts = counts;
  auto mean = [&](std::size_t g) -> std::optional<double> {
    if (counts[g] == 0) return std::nullopt;
    return sums[g] / double(counts[g]);
  };
  out.source_private = mean(0);
  out.source_common = mean(1);
  out.target_common = mean(2);
  out.target_private = mean(3);
  return out;
}

}  // namespace usdaf::adapt
