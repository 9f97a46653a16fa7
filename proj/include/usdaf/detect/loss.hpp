#pragma once

#include <span>
#include <vector>

#include "usdaf/core/ops.hpp"
#include "usdaf/detect/model.hpp"
#include "usdaf/scene/render.hpp"

namespace usdaf::det {

/// Annotations tagged with the domain they came from. Only source-domain
/// annotations may drive the supervised loss.
struct LabeledBoxes {
  scene::Domain domain = scene::Domain::Source;
  std::span<const scene::Annotation> annotations;
};

/// Per-anchor training assignment: 1 positive, 0 negative, -1 ignored.
struct AnchorAssignment {
  std::vector<int> label;
  std::vector<std::size_t> matched_gt;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// IoU >= positive_iou -> positive, < negative_iou -> negative, otherwise
/// ignored. Each GT's best anchor is also made positive so that objects
/// smaller than every anchor still receive a match.
inline AnchorAssignment assign_anchors(const AnchorGrid& anchors, std::span<const scene::Annotation> gts,
                                       double positive_iou, double negative_iou) {
  AnchorAssignment a;
  a.label.assign(anchors.size(), 0);
  a.matched_gt.assign(anchors.size(), 0);
  if (gts.empty()) {
    a.negatives = anchors.size();
    return a;
  }
  std::vector<double> best_iou(anchors.size(), 0.0);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[i], gts[g].box);
      if (v > best_iou[i]) {
        best_iou[i] = v;
        a.matched_gt[i] = g;
      }
    }
    a.label[i] = best_iou[i] >= positive_iou ? 1 : (best_iou[i] < negative_iou ? 0 : -1);
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    std::size_t best = 0;
    double bv = -1.0;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      const double v = iou(anchors[i], gts[g].box);
      if (v > bv) {
        bv = v;
        best = i;
      }
    }
    if (bv > 0.0) {
      a.label[best] = 1;
      a.matched_gt[best] = g;
    }
  }
  for (int l : a.label) {
    a.positives += l == 1;
    a.negatives += l == 0;
  }
  return a;
}

/// Class targets (0 = background) and matched GT of each ROI.
struct RoiAssignment {
  std::vector<int> label;
  std::vector<std::size_t> matched_gt;
  std::size_t positives = 0;
};

inline RoiAssignment assign_rois(const Detector& det, std::span<const Box> rois, std::span<const scene::Annotation> gts,
                                 double positive_iou) {
  RoiAssignment r;
  r.label.assign(rois.size(), 0);
  r.matched_gt.assign(rois.size(), 0);
  for (std::size_t i = 0; i < rois.size(); ++i) {
    double best = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(rois[i], gts[g].box);
      if (v > best) {
        best = v;
        r.matched_gt[i] = g;
      }
    }
    if (best >= positive_iou) {
      const int idx = det.label_index(gts[r.matched_gt[i]].class_id);
      if (idx < 0) throw Error("annotation class " + std::to_string(gts[r.matched_gt[i]].class_id) + " is unknown to the detector");
      r.label[i] = idx;
      ++r.positives;
    }
  }
  return r;
}

struct DetectionLoss {
  ad::Tensor rpn_objectness;
  ad::Tensor rpn_box;
  ad::Tensor roi_class;
  ad::Tensor roi_box;
  ad::Tensor total;
};

/// ROIs used by the second stage during training: proposals plus the GT boxes.
inline std::vector<Box> training_rois(std::span<const Proposal> proposals, std::span<const scene::Annotation> gts) {
  std::vector<Box> rois;
  for (const auto& p : proposals) rois.push_back(p.box);
  for (const auto& g : gts) rois.push_back(g.box);
  return rois;
}

/// Supervised two-stage loss on one source image:
///   RPN objectness BCE (positive and negative anchors each averaged)
/// + RPN smooth-L1 on positive anchors (averaged over positives)
/// + ROI softmax cross-entropy over background + source classes (averaged over ROIs)
/// + ROI smooth-L1 on positive ROIs (averaged over positives).
inline DetectionLoss detection_loss(const Detector& det, const ad::Tensor& features, const RpnOutput& rpn,
                                    std::span<const Proposal> proposals, const LabeledBoxes& targets) {
  if (targets.domain != scene::Domain::Source) {
    throw HiddenLabelError("detection_loss called with target-domain annotations");
  }
  const auto& cfg = det.config();
  const auto& anchors = det.anchors();
  const auto gts = targets.annotations;
  const auto A = assign_anchors(anchors, gts, cfg.positive_iou, cfg.negative_iou);

  std::vector<double> obj_label(anchors.size(), 0.0), obj_weight(anchors.size(), 0.0);
  std::vector<double> box_target(anchors.size() * 4, 0.0), box_weight(anchors.size() * 4, 0.0);
  const double wp = 1.0 / double(std::max<std::size_t>(1, A.positives));
  const double wn = 1.0 / double(std::max<std::size_t>(1, A.negatives));
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (A.label[i] == 1) {
      obj_label[i] = 1.0;
      obj_weight[i] = wp;
      const auto t = box_encode(anchors[i], gts[A.matched_gt[i]].box);
      for (std::size_t k = 0; k < 4; ++k) {
        box_target[i * 4 + k] = t[k];
        box_weight[i * 4 + k] = wp;
      }
    } else if (A.label[i] == 0) {
      obj_weight[i] = wn;
    }
  }
  DetectionLoss L;
  L.rpn_objectness =
      ad::binary_cross_entropy(rpn.objectness, ad::Tensor::from({anchors.size()}, std::move(obj_label)), obj_weight);
  L.rpn_box = ad::smooth_l1(rpn.deltas, ad::Tensor::from({anchors.size(), 4}, std::move(box_target)), box_weight);

  const auto rois = training_rois(proposals, gts);
  const auto R = assign_rois(det, rois, gts, cfg.positive_iou);
  const auto roi = det.roi_forward(det.roi_pool(features, rois));
  const std::vector<double> cls_weight(rois.size(), 1.0 / double(std::max<std::size_t>(1, rois.size())));
  L.roi_class = ad::softmax_cross_entropy(roi.class_logits, R.label, cls_weight);

  std::vector<double> roi_target(rois.size() * 4, 0.0), roi_weight(rois.size() * 4, 0.0);
  const double wr = 1.0 / double(std::max<std::size_t>(1, R.positives));
  for (std::size_t i = 0; i < rois.size(); ++i) {
    if (R.label[i] == 0) continue;
    const auto t = box_encode(rois[i], gts[R.matched_gt[i]].box);
    for (std::size_t k = 0; k < 4; ++k) {
      roi_target[i * 4 + k] = t[k];
      roi_weight[i * 4 + k] = wr;
    }
  }
  L.roi_box = ad::smooth_l1(roi.box_deltas, ad::Tensor::from({rois.size(), 4}, std::move(roi_target)), roi_weight);
  L.total = ad::add(ad::add(L.rpn_objectness, L.rpn_box), ad::add(L.roi_class, L.roi_box));
  return L;
}

}  // namespace usdaf::det
