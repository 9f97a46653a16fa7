#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "usdaf/core/error.hpp"

namespace usdaf::adapt {

enum class ScaleBucket { Small = 0, Medium = 1, Large = 2 };

inline constexpr std::array<ScaleBucket, 3> kAllBuckets{ScaleBucket::Small, ScaleBucket::Medium, ScaleBucket::Large};

/// Thresholds live at a 600-px operating scale: Small < 20^2, Medium in
/// [20^2, 100^2], Large > 100^2.
inline constexpr double kSmallUpper = 400.0;
inline constexpr double kMediumUpper = 10000.0;

/// Linear factor mapping 64-px scene pixels onto the operating scale.
inline constexpr double kDefaultScaleFactor = 3.0;

inline double normalized_area(double raw_area_px, double linear_factor = kDefaultScaleFactor) {
  return raw_area_px * linear_factor * linear_factor;
}

/// Bucket of an area already expressed at the operating scale.
inline ScaleBucket scale_bucket(double normalized_area_px) {
  if (!(normalized_area_px > 0.0) || !std::isfinite(normalized_area_px)) {
    throw Error("scale_bucket: area must be positive, got " + std::to_string(normalized_area_px));
  }
  if (normalized_area_px < kSmallUpper) return ScaleBucket::Small;
  if (normalized_area_px <= kMediumUpper) return ScaleBucket::Medium;
  return ScaleBucket::Large;
}

/// Bucket of a raw scene-pixel area.
inline ScaleBucket scale_bucket_raw(double raw_area_px, double linear_factor = kDefaultScaleFactor) {
  return scale_bucket(normalized_area(raw_area_px, linear_factor));
}

inline constexpr std::string_view to_string(ScaleBucket b) {
  switch (b) {
    case ScaleBucket::Small: return "small";
    case ScaleBucket::Medium: return "medium";
    case ScaleBucket::Large: return "large";
  }
  return "?";
}

inline ScaleBucket bucket_from_string(std::string_view s) {
  if (s == "small") return ScaleBucket::Small;
  if (s == "medium") return ScaleBucket::Medium;
  if (s == "large") return ScaleBucket::Large;
  throw ConfigError("unknown scale bucket: " + std::string(s));
}

inline constexpr std::size_t index_of(ScaleBucket b) { return static_cast<std::size_t>(b); }

}  // namespace usdaf::adapt
