#pragma once

#include <optional>
#include <span>
#include <vector>

#include "usdaf/adapt/heads.hpp"
#include "usdaf/adapt/multilabel.hpp"
#include "usdaf/adapt/scale.hpp"
#include "usdaf/detect/box.hpp"
#include "usdaf/detect/model.hpp"

namespace usdaf::adapt {

/// The adversarial path into a discriminator: grad_reverse with coefficient
/// eta, or a plain stop-gradient when eta is zero.
inline ad::Tensor adversarial_input(const ad::Tensor& features, double eta) {
  if (eta < 0.0) throw ConfigError("eta must be non-negative");
  return eta > 0.0 ? ad::grad_reverse(features, eta) : ad::detach(features);
}

/// Reduces a 4-entry label to the domain-only form used by 1-entry heads.
inline MultiLabelVector domain_only(const MultiLabelVector& v) {
  MultiLabelVector d;
  d.value[0] = v.value[0];
  return d;
}

/// Per-location labels for the image-level head. A location takes the scale
/// of the box with the highest IoU against its stride cell among the boxes
/// containing the cell centre; locations no box covers get no scale.
inline MultiLabelTargets image_label_map(scene::Domain domain, std::span<const det::Box> boxes, std::size_t grid,
                                         double stride, std::size_t entries, double scale_factor = kDefaultScaleFactor) {
  MultiLabelTargets out(entries);
  for (std::size_t y = 0; y < grid; ++y)
    for (std::size_t x = 0; x < grid; ++x) {
      const det::Box cell{x * stride, y * stride, (x + 1) * stride, (y + 1) * stride};
      const double cx = cell.center_x(), cy = cell.center_y();
      std::optional<ScaleBucket> bucket;
      double best = -1.0;
      for (const auto& b : boxes) {
        if (!(cx >= b.x_min && cx < b.x_max && cy >= b.y_min && cy < b.y_max) || !b.valid()) continue;
        const double v = det::iou(cell, b);
        if (v > best) {
          best = v;
          bucket = scale_bucket_raw(b.area(), scale_factor);
        }
      }
      const auto label = encode_multilabel(domain, bucket);
      out.push(entries == 4 ? label : domain_only(label));
    }
  return out;
}

/// Instance labels. Source ROIs take the bucket of their matched GT box when
/// IoU >= 0.5 and their own box otherwise; target ROIs (no GT) always use
/// their own box.
inline MultiLabelTargets instance_labels(scene::Domain domain, std::span<const det::Box> rois,
                                         std::span<const det::Box> gt_boxes, std::size_t entries,
                                         double scale_factor = kDefaultScaleFactor) {
  MultiLabelTargets out(entries);
  for (const auto& r : rois) {
    const det::Box* ref = &r;
    double best = 0.0;
    for (const auto& g : gt_boxes) {
      const double v = det::iou(r, g);
      if (v >= 0.5 && v > best) {
        best = v;
        ref = &g;
      }
    }
    const auto label = encode_multilabel(domain, scale_bucket_raw(ref->area(), scale_factor));
    out.push(entries == 4 ? label : domain_only(label));
  }
  return out;
}

/// One domain's contribution to the image-level loss.
struct ImageSide {
  ad::Tensor features;  // [1,C,G,G]
  MultiLabelTargets labels;
};

/// One domain's contribution to the instance-level loss.
struct InstanceSide {
  ad::Tensor features;  // [1,C,G,G]
  std::vector<det::Box> rois;
  MultiLabelTargets labels;
};

/// Masked multi-label loss of the image-level head over all locations of
/// both images, features entering through the adversarial path.
inline MaskedLoss image_level_loss(const ImageSide& source, const ImageSide& target, const DiscriminatorHeads& heads,
                                   std::optional<FilterConfig> filter, double eta) {
  if (source.features.shape() != target.features.shape()) throw ShapeError("image_level_loss: feature shapes differ");
  if (source.labels.size() != heads.locations() || target.labels.size() != heads.locations()) {
    throw ShapeError("image_level_loss: label map does not cover the feature grid");
  }
  const auto ps = heads.image(adversarial_input(source.features, eta));
  const auto pt = heads.image(adversarial_input(target.features, eta));
  MultiLabelTargets labels = source.labels;
  labels.append(target.labels);
  return multilabel_da_loss(ad::concat({ps, pt}), labels, filter);
}

/// Masked multi-label loss of the instance-level head over the ROIs of both images.
inline MaskedLoss instance_level_loss(const det::Detector& det, const InstanceSide& source, const InstanceSide& target,
                                      const DiscriminatorHeads& heads, std::optional<FilterConfig> filter, double eta) {
  std::vector<ad::Tensor> preds;
  MultiLabelTargets labels(heads.entries());
  for (const auto* side : {&source, &target}) {
    if (side->labels.size() != side->rois.size()) throw ShapeError("instance_level_loss: one label per ROI required");
    if (side->rois.empty()) continue;
    const auto pooled = det.roi_pool(adversarial_input(side->features, eta), side->rois);
    preds.push_back(heads.instance(pooled));
    labels.append(side->labels);
  }
  if (preds.empty()) {
    return {ad::Tensor::scalar(0.0), 0, 0};
  }
  return multilabel_da_loss(ad::concat(preds), labels, filter);
}

/// Unweighted sum of the filtered image- and instance-level losses.
inline ad::Tensor unida_loss(const ad::Tensor& image_loss, const ad::Tensor& instance_loss) {
  return ad::add(image_loss, instance_loss);
}

/// The single minimized scalar. The adversarial sign and the eta weight are
/// carried by the reversed feature paths, so discriminators descend on the
/// adaptation loss while the detector ascends on eta times it.
inline ad::Tensor total_objective(const ad::Tensor& detection_loss, const ad::Tensor& unida) {
  return ad::add(detection_loss, unida);
}

}  // namespace usdaf::adapt
