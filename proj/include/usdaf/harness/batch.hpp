#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "usdaf/core/random.hpp"
#include "usdaf/scene/dataset.hpp"

namespace usdaf::harness {

/// Endless index stream over [0, n): each epoch is a fresh seeded
/// permutation.
class EpochCycler {
 public:
  EpochCycler(std::size_t n, std::uint64_t seed, std::uint64_t stream) : n_(n), seed_(seed), stream_(stream) {
    if (n_ == 0) throw ConfigError("cannot cycle over an empty split");
    reshuffle();
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    return order_[pos_++];
  }

  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng(derive_seed(seed_, stream_, epoch_));
    std::shuffle(order_.begin(), order_.end(), rng);
    pos_ = 0;
  }

  std::size_t n_;
  std::uint64_t seed_, stream_;
  std::size_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> order_;
};

/// Indices of one source and one target training image. Indices only, so
/// target annotations never travel with a batch.
struct Batch {
  std::size_t source = 0;
  std::size_t target = 0;
};

class BatchStream {
 public:
  BatchStream(const scene::SceneSplit& source, const scene::SceneSplit& target, std::uint64_t seed)
      : source_(source.size(), seed, 0xba7c0), target_(target.size(), seed, 0xba7c1) {}

  Batch next() { return {source_.next(), target_.next()}; }

 private:
  EpochCycler source_, target_;
};

/// Convenience wrapper: next (source, target) pair of a stream.
inline Batch make_batch(BatchStream& stream) { return stream.next(); }

}  // namespace usdaf::harness
