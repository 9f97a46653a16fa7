#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "usdaf/core/ops.hpp"
#include "usdaf/core/optim.hpp"
#include "usdaf/core/random.hpp"
#include "usdaf/detect/anchors.hpp"
#include "usdaf/detect/box.hpp"

namespace usdaf::det {

using ad::Tensor;

/// 2-D convolution layer with per-channel bias.
struct Conv {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv() = default;
  Conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t padding_, Rng& rng)
      : weight(ad::fan_in_uniform({out, in, k, k}, in * k * k, rng)),
        bias(ad::Tensor::zeros({out}, true)),
        stride(stride_),
        padding(padding_) {}

  Tensor operator()(const Tensor& x) const { return ad::add_channel_bias(ad::conv2d(x, weight, stride, padding), bias); }

  void register_in(ad::ParameterSet& ps, const std::string& name) const {
    ps.add(name + ".weight", weight);
    ps.add(name + ".bias", bias);
  }
};

/// Fully connected layer, weight stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : weight(ad::fan_in_uniform({in, out}, in, rng)), bias(ad::Tensor::zeros({out}, true)) {}

  Tensor operator()(const Tensor& x) const { return ad::add_row_bias(ad::matmul(x, weight), bias); }

  void register_in(ad::ParameterSet& ps, const std::string& name) const {
    ps.add(name + ".weight", weight);
    ps.add(name + ".bias", bias);
  }
};

struct DetectorConfig {
  int image_size = 64;
  int stride = 8;  // three stride-2 convolutions
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t feature_channels = 32;
  std::size_t rpn_channels = 32;
  std::size_t roi_pool = 4;
  std::size_t roi_hidden = 64;
  std::vector<double> anchor_sides{6.0, 16.0, 40.0};
  int top_k = 32;
  double rpn_nms = 0.7;
  double min_proposal_side = 1.0;
  double positive_iou = 0.5;
  double negative_iou = 0.3;
  double score_threshold = 0.05;
  double detection_nms = 0.5;
  int max_detections = 100;
};

struct Proposal {
  Box box;
  double score = 0.0;  // objectness probability
  std::size_t anchor = 0;
};

struct Detection {
  Box box;
  int class_id = 0;
  double confidence = 0.0;
};

struct RpnOutput {
  Tensor objectness_logits;  // [anchors]
  Tensor objectness;         // sigmoid of the logits, [anchors]
  Tensor deltas;             // [anchors, 4]
};

struct RoiOutput {
  Tensor class_logits;  // [rois, classes + 1], column 0 = background
  Tensor box_deltas;    // [rois, 4]
};

/// Tiny two-stage detector: 3-conv backbone, anchor RPN, ROI head over
/// nearest-neighbour pooled region features. Knows only the source classes.
class Detector {
 public:
  Detector(DetectorConfig cfg, std::vector<int> class_ids, Rng& rng)
      : cfg_(std::move(cfg)),
        class_ids_(std::move(class_ids)),
        anchors_(cfg_.image_size, cfg_.stride, cfg_.anchor_sides) {
    if (class_ids_.empty()) throw ConfigError("detector needs at least one class");
    if (cfg_.stride != 8) throw ConfigError("backbone has a fixed stride of 8");
    const std::size_t A = anchors_.per_cell();
    conv1_ = Conv(3, cfg_.conv1_channels, 3, 2, 1, rng);
    conv2_ = Conv(cfg_.conv1_channels, cfg_.conv2_channels, 3, 2, 1, rng);
    conv3_ = Conv(cfg_.conv2_channels, cfg_.feature_channels, 3, 2, 1, rng);
    rpn_conv_ = Conv(cfg_.feature_channels, cfg_.rpn_channels, 3, 1, 1, rng);
    rpn_obj_ = Conv(cfg_.rpn_channels, A, 1, 1, 0, rng);
    rpn_box_ = Conv(cfg_.rpn_channels, 4 * A, 1, 1, 0, rng);
    roi_fc_ = Linear(roi_feature_size(), cfg_.roi_hidden, rng);
    roi_cls_ = Linear(cfg_.roi_hidden, class_ids_.size() + 1, rng);
    roi_box_ = Linear(cfg_.roi_hidden, 4, rng);

    conv1_.register_in(params_, "backbone.conv1");
    conv2_.register_in(params_, "backbone.conv2");
    conv3_.register_in(params_, "backbone.conv3");
    rpn_conv_.register_in(params_, "rpn.conv");
    rpn_obj_.register_in(params_, "rpn.objectness");
    rpn_box_.register_in(params_, "rpn.box");
    roi_fc_.register_in(params_, "roi.fc");
    roi_cls_.register_in(params_, "roi.cls");
    roi_box_.register_in(params_, "roi.box");

    // anchor-major reorder of the [A,H,W] / [4A,H,W] conv outputs
    const std::size_t G = static_cast<std::size_t>(anchors_.grid());
    obj_order_.resize(anchors_.size());
    box_order_.resize(anchors_.size() * 4);
    for (std::size_t y = 0; y < G; ++y)
      for (std::size_t x = 0; x < G; ++x)
        for (std::size_t a = 0; a < A; ++a) {
          const std::size_t anchor = (y * G + x) * A + a;
          obj_order_[anchor] = (a * G + y) * G + x;
          for (std::size_t k = 0; k < 4; ++k) box_order_[anchor * 4 + k] = ((a * 4 + k) * G + y) * G + x;
        }
  }

  // Layers and the parameter set share tensors; a copy would alias weights.
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;
  Detector(Detector&&) = default;
  Detector& operator=(Detector&&) = default;

  const DetectorConfig& config() const { return cfg_; }
  const AnchorGrid& anchors() const { return anchors_; }
  const std::vector<int>& class_ids() const { return class_ids_; }
  std::size_t num_classes() const { return class_ids_.size(); }
  const ad::ParameterSet& parameters() const { return params_; }
  std::size_t feature_channels() const { return cfg_.feature_channels; }
  std::size_t feature_grid() const { return static_cast<std::size_t>(anchors_.grid()); }
  std::size_t roi_feature_size() const { return cfg_.feature_channels * cfg_.roi_pool * cfg_.roi_pool; }

  /// Detector class index (1-based, 0 = background) of a class id, or -1.
  int label_index(int class_id) const {
    auto it = std::find(class_ids_.begin(), class_ids_.end(), class_id);
    return it == class_ids_.end() ? -1 : static_cast<int>(it - class_ids_.begin()) + 1;
  }

  /// HWC float image -> [1,3,H,W] tensor.
  Tensor image_tensor(std::span<const float> hwc) const {
    const auto S = static_cast<std::size_t>(cfg_.image_size);
    if (hwc.size() != S * S * 3) throw ShapeError("image must be " + std::to_string(S) + "x" + std::to_string(S) + "x3");
    std::vector<double> v(hwc.size());
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x)
        for (std::size_t c = 0; c < 3; ++c) v[(c * S + y) * S + x] = hwc[(y * S + x) * 3 + c];
    return Tensor::from({1, 3, S, S}, std::move(v));
  }

  /// [1,3,64,64] -> feature map [1,C,8,8].
  Tensor backbone_forward(const Tensor& image) const {
    const auto S = static_cast<std::size_t>(cfg_.image_size);
    if (image.shape() != ad::Shape{1, 3, S, S}) throw ShapeError("backbone expects [1,3," + std::to_string(S) + "," + std::to_string(S) + "]");
    auto h = ad::relu(conv1_(image));
    h = ad::relu(conv2_(h));
    return ad::relu(conv3_(h));
  }

  RpnOutput rpn_forward(const Tensor& features) const {
    const auto h = ad::relu(rpn_conv_(features));
    RpnOutput out;
    out.objectness_logits = ad::gather(rpn_obj_(h), obj_order_, {anchors_.size()});
    out.objectness = ad::sigmoid(out.objectness_logits);
    out.deltas = ad::gather(rpn_box_(h), box_order_, {anchors_.size(), 4});
    return out;
  }

  /// Decodes, clips, suppresses and keeps the top_k anchors by objectness.
  std::vector<Proposal> propose(const RpnOutput& rpn, int top_k) const {
    std::vector<Proposal> out;
    if (top_k <= 0) return out;
    const double S = cfg_.image_size;
    std::vector<Box> boxes;
    std::vector<double> scores;
    std::vector<std::size_t> source;
    for (std::size_t a = 0; a < anchors_.size(); ++a) {
      const BoxDelta d{rpn.deltas[a * 4], rpn.deltas[a * 4 + 1], rpn.deltas[a * 4 + 2], rpn.deltas[a * 4 + 3]};
      const Box b = clip(box_transform(anchors_[a], d), S, S);
      if (b.width() < cfg_.min_proposal_side || b.height() < cfg_.min_proposal_side) continue;
      boxes.push_back(b);
      scores.push_back(rpn.objectness[a]);
      source.push_back(a);
    }
    for (auto i : nms(boxes, scores, cfg_.rpn_nms)) {
      if (static_cast<int>(out.size()) >= top_k) break;
      out.push_back({boxes[i], scores[i], source[i]});
    }
    return out;
  }

  /// Flat feature-map indices sampled by nearest-neighbour ROI pooling.
  std::vector<std::size_t> roi_indices(std::span<const Box> boxes) const {
    const std::size_t C = cfg_.feature_channels, G = feature_grid(), P = cfg_.roi_pool;
    std::vector<std::size_t> idx;
    idx.reserve(boxes.size() * C * P * P);
    for (const auto& b : boxes) {
      std::vector<std::size_t> cells(P * P);
      for (std::size_t i = 0; i < P; ++i)
        for (std::size_t j = 0; j < P; ++j) {
          const double px = b.x_min + (j + 0.5) * b.width() / double(P);
          const double py = b.y_min + (i + 0.5) * b.height() / double(P);
          const auto fx = static_cast<std::size_t>(std::clamp(std::floor(px / cfg_.stride), 0.0, double(G - 1)));
          const auto fy = static_cast<std::size_t>(std::clamp(std::floor(py / cfg_.stride), 0.0, double(G - 1)));
          cells[i * P + j] = fy * G + fx;
        }
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < P * P; ++k) idx.push_back(c * G * G + cells[k]);
    }
    return idx;
  }

  /// [1,C,8,8] features -> [boxes, C*P*P] region features.
  Tensor roi_pool(const Tensor& features, std::span<const Box> boxes) const {
    return ad::gather(features, roi_indices(boxes), {boxes.size(), roi_feature_size()});
  }

  RoiOutput roi_forward(const Tensor& roi_features) const {
    const auto h = ad::relu(roi_fc_(roi_features));
    return {roi_cls_(h), roi_box_(h)};
  }

  /// Inference on one image. Runs without recording gradients when no tape is active.
  std::vector<Detection> detect(std::span<const float> hwc) const {
    const auto features = backbone_forward(image_tensor(hwc));
    const auto rpn = rpn_forward(features);
    const auto proposals = propose(rpn, cfg_.top_k);
    if (proposals.empty()) return {};
    std::vector<Box> boxes;
    for (const auto& p : proposals) boxes.push_back(p.box);
    const auto roi = roi_forward(roi_pool(features, boxes));
    return postprocess(boxes, roi);
  }

  std::vector<Detection> postprocess(std::span<const Box> rois, const RoiOutput& roi) const {
    const std::size_t K = class_ids_.size() + 1;
    const double S = cfg_.image_size;
    std::vector<Detection> all;
    for (std::size_t c = 1; c < K; ++c) {
      std::vector<Box> boxes;
      std::vector<double> scores;
      for (std::size_t r = 0; r < rois.size(); ++r) {
        const double* z = roi.class_logits.values().data() + r * K;
        const double zmax = *std::max_element(z, z + K);
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] - zmax);
        const double p = std::exp(z[c] - zmax) / s;
        if (p <= cfg_.score_threshold) continue;
        const BoxDelta d{roi.box_deltas[r * 4], roi.box_deltas[r * 4 + 1], roi.box_deltas[r * 4 + 2],
                         roi.box_deltas[r * 4 + 3]};
        const Box b = clip(box_transform(rois[r], d), S, S);
        if (!b.valid()) continue;
        boxes.push_back(b);
        scores.push_back(p);
      }
      for (auto i : nms(boxes, scores, cfg_.detection_nms)) {
        all.push_back({boxes[i], class_ids_[c - 1], scores[i]});
      }
    }
    std::stable_sort(all.begin(), all.end(), [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    if (static_cast<int>(all.size()) > cfg_.max_detections) all.resize(static_cast<std::size_t>(cfg_.max_detections));
    return all;
  }

  // Layer access for tests that hand-set weights.
  Conv& rpn_conv() { return rpn_conv_; }
  Conv& rpn_objectness() { return rpn_obj_; }
  Conv& rpn_box() { return rpn_box_; }

 private:
  DetectorConfig cfg_;
  std::vector<int> class_ids_;
  AnchorGrid anchors_;
  Conv conv1_, conv2_, conv3_, rpn_conv_, rpn_obj_, rpn_box_;
  Linear roi_fc_, roi_cls_, roi_box_;
  ad::ParameterSet params_;
  std::vector<std::size_t> obj_order_;
  std::vector<std::size_t> box_order_;
};

}  // namespace usdaf::det
