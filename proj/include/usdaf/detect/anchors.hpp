#pragma once

#include <vector>

#include "usdaf/detect/box.hpp"

namespace usdaf::det {

/// Square anchors of several sides centred on every feature cell, clipped to
/// the image. Anchor index = (row * grid_w + col) * sides + side_index.
class AnchorGrid {
 public:
  AnchorGrid(int image_size = 64, int stride = 8, std::vector<double> sides = {6.0, 16.0, 40.0})
      : image_size_(image_size), stride_(stride), sides_(std::move(sides)) {
    if (stride_ <= 0 || image_size_ % stride_ != 0) throw ConfigError("image size must be a multiple of the stride");
    if (sides_.empty()) throw ConfigError("anchor grid needs at least one side length");
    grid_ = image_size_ / stride_;
    for (int y = 0; y < grid_; ++y)
      for (int x = 0; x < grid_; ++x)
        for (double s : sides_) {
          const double cx = (x + 0.5) * stride_, cy = (y + 0.5) * stride_;
          anchors_.push_back(clip({cx - s / 2, cy - s / 2, cx + s / 2, cy + s / 2}, image_size_, image_size_));
        }
  }

  int image_size() const { return image_size_; }
  int stride() const { return stride_; }
  int grid() const { return grid_; }
  std::size_t per_cell() const { return sides_.size(); }
  const std::vector<double>& sides() const { return sides_; }
  std::size_t size() const { return anchors_.size(); }
  const Box& operator[](std::size_t i) const { return anchors_[i]; }
  const std::vector<Box>& boxes() const { return anchors_; }

 private:
  int image_size_;
  int stride_;
  int grid_ = 0;
  std::vector<double> sides_;
  std::vector<Box> anchors_;
};

}  // namespace usdaf::det
