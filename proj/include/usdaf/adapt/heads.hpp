#pragma once

#include <string>
#include <vector>

#include "usdaf/core/ops.hpp"
#include "usdaf/core/optim.hpp"
#include "usdaf/core/random.hpp"
#include "usdaf/detect/model.hpp"

namespace usdaf::adapt {

struct DiscriminatorConfig {
  std::size_t entries = 4;  // 4 = domain + three scales, 1 = domain only
  std::size_t image_hidden = 32;
  std::size_t instance_hidden = 64;
};

/// Image-level head: 1x1 conv stack over the feature map, one sigmoid
/// E-vector per location. Instance-level head: 2-layer perceptron over a
/// flattened region feature.
class DiscriminatorHeads {
 public:
  DiscriminatorHeads(DiscriminatorConfig cfg, std::size_t feature_channels, std::size_t grid, std::size_t roi_feature_size,
                     Rng& rng)
      : cfg_(cfg), grid_(grid) {
    if (cfg_.entries != 1 && cfg_.entries != 4) throw ConfigError("discriminator heads have 1 or 4 entries");
    image1_ = det::Conv(feature_channels, cfg_.image_hidden, 1, 1, 0, rng);
    image2_ = det::Conv(cfg_.image_hidden, cfg_.entries, 1, 1, 0, rng);
    inst1_ = det::Linear(roi_feature_size, cfg_.instance_hidden, rng);
    inst2_ = det::Linear(cfg_.instance_hidden, cfg_.entries, rng);
    image1_.register_in(params_, "disc.image.conv1");
    image2_.register_in(params_, "disc.image.conv2");
    inst1_.register_in(params_, "disc.instance.fc1");
    inst2_.register_in(params_, "disc.instance.fc2");
    // [1,E,G,G] -> location-major [G*G, E]
    const std::size_t E = cfg_.entries, L = grid_ * grid_;
    location_order_.resize(L * E);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t k = 0; k < E; ++k) location_order_[l * E + k] = k * L + l;
  }

  DiscriminatorHeads(const DiscriminatorHeads&) = delete;
  DiscriminatorHeads& operator=(const DiscriminatorHeads&) = delete;
  DiscriminatorHeads(DiscriminatorHeads&&) = default;
  DiscriminatorHeads& operator=(DiscriminatorHeads&&) = default;

  std::size_t entries() const { return cfg_.entries; }
  std::size_t locations() const { return grid_ * grid_; }
  const ad::ParameterSet& parameters() const { return params_; }

  /// [1,C,G,G] features -> [G*G, E] probabilities, row = y * G + x.
  ad::Tensor image(const ad::Tensor& features) const {
    const auto h = ad::relu(image1_(features));
    return ad::gather(ad::sigmoid(image2_(h)), location_order_, {locations(), cfg_.entries});
  }

  /// [P, roi_size] region features -> [P, E] probabilities.
  ad::Tensor instance(const ad::Tensor& roi_features) const {
    return ad::sigmoid(inst2_(ad::relu(inst1_(roi_features))));
  }

 private:
  DiscriminatorConfig cfg_;
  std::size_t grid_;
  det::Conv image1_, image2_;
  det::Linear inst1_, inst2_;
  ad::ParameterSet params_;
  std::vector<std::size_t> location_order_;
};

}  // namespace usdaf::adapt
