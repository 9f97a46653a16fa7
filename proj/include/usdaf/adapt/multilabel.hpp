#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "usdaf/adapt/scale.hpp"
#include "usdaf/core/ops.hpp"
#include "usdaf/scene/render.hpp"

namespace usdaf::adapt {

/// Domain + scale label. Entry 0 is the domain (0 source, 1 target);
/// entries 1..3 one-hot small/medium/large. When no scale is assigned the
/// scale entries are zero and excluded from the loss.
struct MultiLabelVector {
  std::array<double, 4> value{};
  std::array<bool, 4> excluded{};

  friend bool operator==(const MultiLabelVector&, const MultiLabelVector&) = default;
};

inline MultiLabelVector encode_multilabel(scene::Domain domain, std::optional<ScaleBucket> bucket) {
  MultiLabelVector v;
  v.value[0] = domain == scene::Domain::Target ? 1.0 : 0.0;
  if (bucket) {
    v.value[1 + index_of(*bucket)] = 1.0;
  } else {
    v.excluded = {false, true, true, true};
  }
  return v;
}

struct FilterConfig {
  double m = 0.3;

  void validate() const {
    if (!(m > 0.0 && m <= 0.5)) throw ConfigError("filter threshold m must lie in (0, 0.5]");
  }
};

/// Keep a sample iff its predicted domain probability is within m of 0.5.
inline bool filter_keep(double d0, double m) { return std::abs(d0 - 0.5) < m; }

/// Labels for a batch of items with E entries each (E = 4 scale-aware, E = 1 domain only).
class MultiLabelTargets {
 public:
  explicit MultiLabelTargets(std::size_t entries = 4) : entries_(entries) {
    if (entries_ != 1 && entries_ != 4) throw ConfigError("multi-label heads have 1 or 4 entries");
  }

  void push(const MultiLabelVector& v) {
    for (std::size_t k = 0; k < entries_; ++k) {
      labels_.push_back(v.value[k]);
      excluded_.push_back(v.excluded[k] ? 1 : 0);
    }
  }

  void append(const MultiLabelTargets& o) {
    if (o.entries_ != entries_) throw ShapeError("label width mismatch");
    labels_.insert(labels_.end(), o.labels_.begin(), o.labels_.end());
    excluded_.insert(excluded_.end(), o.excluded_.begin(), o.excluded_.end());
  }

  std::size_t entries() const { return entries_; }
  std::size_t size() const { return labels_.size() / entries_; }
  const std::vector<double>& labels() const { return labels_; }
  const std::vector<char>& excluded() const { return excluded_; }

 private:
  std::size_t entries_;
  std::vector<double> labels_;
  std::vector<char> excluded_;
};

struct MaskedLoss {
  ad::Tensor loss;
  std::size_t kept = 0;
  std::size_t total = 0;
};

/// Masked multi-label BCE. An item is kept when the filter is off or its
/// entry-0 prediction passes filter_keep; kept items contribute the BCE of
/// their non-excluded entries, dropped items contribute exactly nothing, and
/// the sum is divided by max(1, kept).
inline MaskedLoss multilabel_da_loss(const ad::Tensor& preds, const MultiLabelTargets& targets,
                                     std::optional<FilterConfig> filter) {
  const std::size_t E = targets.entries();
  if (preds.rank() != 2 || preds.dim(1) != E || preds.dim(0) != targets.size()) {
    throw ShapeError("multilabel_da_loss: predictions " + ad::to_string(preds.shape()) + " vs " +
                     std::to_string(targets.size()) + " labels of width " + std::to_string(E));
  }
  if (filter) filter->validate();
  const std::size_t N = targets.size();
  std::vector<double> weights(N * E, 0.0);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < N; ++i) {
    if (filter && !filter_keep(preds[i * E], filter->m)) continue;
    ++kept;
    for (std::size_t k = 0; k < E; ++k) weights[i * E + k] = targets.excluded()[i * E + k] ? 0.0 : 1.0;
  }
  const auto labels = ad::Tensor::from({N, E}, targets.labels());
  const auto bce = ad::binary_cross_entropy(preds, labels, weights);
  return {ad::scale(bce, 1.0 / double(std::max<std::size_t>(1, kept))), kept, N};
}

}  // namespace usdaf::adapt
