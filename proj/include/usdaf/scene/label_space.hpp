#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "usdaf/core/error.hpp"
#include "usdaf/core/random.hpp"

namespace usdaf::scene {

enum class Scenario { ClosedSet, PartialSet, OpenSet };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::ClosedSet: return "closed";
    case Scenario::PartialSet: return "partial";
    case Scenario::OpenSet: return "open";
  }
  return "?";
}

inline Scenario scenario_from_string(const std::string& s) {
  if (s == "closed") return Scenario::ClosedSet;
  if (s == "partial") return Scenario::PartialSet;
  if (s == "open") return Scenario::OpenSet;
  throw ConfigError("unknown scenario: " + s);
}

/// Source/target label sets over a class universe, with the derived common
/// and private sets and their Jaccard overlap.
struct LabelSpaceConfig {
  std::vector<int> universe;
  std::vector<int> source_classes;
  std::vector<int> target_classes;
  std::vector<int> common;
  std::vector<int> source_private;
  std::vector<int> target_private;
  double xi = 1.0;

  bool in_source(int c) const { return std::binary_search(source_classes.begin(), source_classes.end(), c); }
  bool in_target(int c) const { return std::binary_search(target_classes.begin(), target_classes.end(), c); }
  bool is_common(int c) const { return std::binary_search(common.begin(), common.end(), c); }

  /// Position of a class inside the sorted source list; the detector's class index.
  int source_index(int c) const {
    auto it = std::lower_bound(source_classes.begin(), source_classes.end(), c);
    if (it == source_classes.end() || *it != c) return -1;
    return static_cast<int>(it - source_classes.begin());
  }

  friend bool operator==(const LabelSpaceConfig&, const LabelSpaceConfig&) = default;
};

inline double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> inter, uni;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
  if (uni.empty()) return 0.0;
  return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

/// Derives common/private sets and xi from explicit source and target sets.
inline LabelSpaceConfig make_label_space(std::vector<int> universe, std::vector<int> source, std::vector<int> target) {
  std::sort(universe.begin(), universe.end());
  std::sort(source.begin(), source.end());
  std::sort(target.begin(), target.end());
  source.erase(std::unique(source.begin(), source.end()), source.end());
  target.erase(std::unique(target.begin(), target.end()), target.end());
  for (const auto* set : {&source, &target}) {
    for (int c : *set) {
      if (!std::binary_search(universe.begin(), universe.end(), c)) {
        throw ConfigError("class " + std::to_string(c) + " is not in the universe");
      }
    }
  }
  LabelSpaceConfig cfg;
  cfg.universe = std::move(universe);
  cfg.source_classes = std::move(source);
  cfg.target_classes = std::move(target);
  std::set_intersection(cfg.source_classes.begin(), cfg.source_classes.end(), cfg.target_classes.begin(),
                        cfg.target_classes.end(), std::back_inserter(cfg.common));
  std::set_difference(cfg.source_classes.begin(), cfg.source_classes.end(), cfg.common.begin(), cfg.common.end(),
                      std::back_inserter(cfg.source_private));
  std::set_difference(cfg.target_classes.begin(), cfg.target_classes.end(), cfg.common.begin(), cfg.common.end(),
                      std::back_inserter(cfg.target_private));
  if (cfg.common.empty()) throw ConfigError("label spaces share no class");
  cfg.xi = jaccard(cfg.source_classes, cfg.target_classes);
  return cfg;
}

/// Split sizes (common, source-private, target-private).
struct SplitSizes {
  int common = 0, source_private = 0, target_private = 0;
  int total() const { return common + source_private + target_private; }
  double xi() const { return static_cast<double>(common) / static_cast<double>(total()); }
};

inline std::vector<SplitSizes> candidate_splits(int universe_size, Scenario scenario) {
  std::vector<SplitSizes> out;
  for (int c = 1; c <= universe_size; ++c)
    for (int ps = 0; c + ps <= universe_size; ++ps)
      for (int pt = 0; c + ps + pt <= universe_size; ++pt) {
        const bool ok = (scenario == Scenario::ClosedSet && ps == 0 && pt == 0) ||
                        (scenario == Scenario::PartialSet && ps >= 1 && pt == 0) ||
                        (scenario == Scenario::OpenSet && ps >= 1 && pt >= 1);
        if (ok) out.push_back({c, ps, pt});
      }
  return out;
}

inline std::vector<double> achievable_xi(int universe_size, Scenario scenario) {
  std::vector<double> xs;
  for (const auto& s : candidate_splits(universe_size, scenario)) xs.push_back(s.xi());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }), xs.end());
  return xs;
}

/// Picks split sizes realizing target_xi exactly: largest class coverage
/// first, then the most balanced private sets, source-private not larger.
inline SplitSizes choose_split(int universe_size, Scenario scenario, double target_xi) {
  if (universe_size < 4) throw ConfigError("universe must contain at least 4 classes");
  const SplitSizes* best = nullptr;
  const auto candidates = candidate_splits(universe_size, scenario);
  auto rank = [](const SplitSizes& s) {
    return std::make_tuple(-s.total(), std::abs(s.source_private - s.target_private),
                           s.source_private > s.target_private ? 1 : 0);
  };
  for (const auto& s : candidates) {
    if (std::abs(s.xi() - target_xi) > 1e-9) continue;
    if (!best || rank(s) < rank(*best)) best = &s;
  }
  if (!best) {
    std::ostringstream os;
    os << "xi=" << target_xi << " is not achievable for a " << to_string(scenario) << " split of " << universe_size
       << " classes; achievable values:";
    for (double x : achievable_xi(universe_size, scenario)) os << ' ' << x;
    throw ConfigError(os.str());
  }
  return *best;
}

/// Builds source/target label sets of the requested scenario whose Jaccard
/// index equals target_xi. Which classes land in each set is seeded.
inline LabelSpaceConfig build_label_spaces(int universe_size, Scenario scenario, double target_xi, std::uint64_t seed) {
  const auto split = choose_split(universe_size, scenario, target_xi);
  std::vector<int> universe(static_cast<std::size_t>(universe_size));
  std::iota(universe.begin(), universe.end(), 0);
  std::vector<int> order = universe;
  Rng rng(derive_seed(seed, 0x1abe15));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
  }
  std::vector<int> source, target;
  int k = 0;
  for (int i = 0; i < split.common; ++i, ++k) {
    source.push_back(order[k]);
    target.push_back(order[k]);
  }
  for (int i = 0; i < split.source_private; ++i, ++k) source.push_back(order[k]);
  for (int i = 0; i < split.target_private; ++i, ++k) target.push_back(order[k]);
  return make_label_space(std::move(universe), std::move(source), std::move(target));
}

}  // namespace usdaf::scene
