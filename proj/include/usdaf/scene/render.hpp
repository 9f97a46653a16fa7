#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "usdaf/core/error.hpp"
#include "usdaf/core/random.hpp"
#include "usdaf/detect/box.hpp"

namespace usdaf::scene {

enum class Domain { Source = 0, Target = 1 };

inline std::string to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

enum class FillMode { Solid, Outlined, Textured };

inline std::string to_string(FillMode f) {
  switch (f) {
    case FillMode::Solid: return "solid";
    case FillMode::Outlined: return "outlined";
    case FillMode::Textured: return "textured";
  }
  return "?";
}

inline FillMode fill_from_string(const std::string& s) {
  if (s == "solid") return FillMode::Solid;
  if (s == "outlined") return FillMode::Outlined;
  if (s == "textured") return FillMode::Textured;
  throw ConfigError("unknown fill mode: " + s);
}

using Rgb = std::array<double, 3>;

/// Per-domain rendering style. Background is a vertical blend from
/// background_top to background_bottom.
struct DomainStyle {
  Domain domain = Domain::Source;
  Rgb background_top{0.82, 0.82, 0.80};
  Rgb background_bottom{0.72, 0.74, 0.78};
  FillMode fill = FillMode::Solid;
  double noise = 0.02;
  double brightness = 0.0;

  /// How many style axes differ (background, fill, noise, brightness).
  int differences(const DomainStyle& o) const {
    return int(background_top != o.background_top || background_bottom != o.background_bottom) + int(fill != o.fill) +
           int(noise != o.noise) + int(brightness != o.brightness);
  }

  friend bool operator==(const DomainStyle&, const DomainStyle&) = default;
};

inline DomainStyle default_style(Domain d) {
  DomainStyle s;
  s.domain = d;
  if (d == Domain::Target) {
    s.background_top = {0.25, 0.22, 0.30};
    s.background_bottom = {0.36, 0.31, 0.22};
    s.fill = FillMode::Textured;
    s.noise = 0.10;
    s.brightness = -0.05;
  }
  return s;
}

enum class ShapeKind { Circle, Square, Triangle, Cross, Ring, Star, Diamond, Bar };

inline constexpr int kShapeKinds = 8;

inline ShapeKind shape_of_class(int class_id) { return static_cast<ShapeKind>(class_id % kShapeKinds); }

/// Width/height ratio a shape is drawn with.
inline double aspect_of(ShapeKind k) { return k == ShapeKind::Bar ? 2.0 : 1.0; }

/// Classes beyond the 8 primitives reuse the shapes in a different colour.
inline Rgb color_of_class(int class_id) {
  static constexpr std::array<Rgb, 6> palette{{{0.90, 0.15, 0.12},
                                               {0.10, 0.72, 0.25},
                                               {0.15, 0.35, 0.95},
                                               {0.95, 0.80, 0.10},
                                               {0.80, 0.20, 0.85},
                                               {0.10, 0.80, 0.85}}};
  return palette[static_cast<std::size_t>(class_id / kShapeKinds) % palette.size()];
}

/// Whether the point (u, v) of the unit square belongs to the shape.
inline bool shape_contains(ShapeKind kind, double u, double v) {
  const double du = u - 0.5, dv = v - 0.5;
  const double r2 = du * du + dv * dv;
  switch (kind) {
    case ShapeKind::Circle: return r2 <= 0.25;
    case ShapeKind::Square:
    case ShapeKind::Bar: return true;
    case ShapeKind::Triangle: return std::abs(du) <= 0.5 * v;
    case ShapeKind::Cross: return std::abs(du) <= 1.0 / 6.0 || std::abs(dv) <= 1.0 / 6.0;
    case ShapeKind::Ring: return r2 <= 0.25 && r2 >= 0.09;
    case ShapeKind::Star:
      return r2 <= 0.25 && (std::abs(du) <= 0.125 || std::abs(dv) <= 0.125 || std::abs(du - dv) <= 0.125 ||
                            std::abs(du + dv) <= 0.125);
    case ShapeKind::Diamond: return std::abs(du) + std::abs(dv) <= 0.5;
  }
  return false;
}

struct Annotation {
  int class_id = 0;
  det::Box box;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// Synthetic image (row-major H x W x 3, values in [0,1]) plus its ground truth.
struct SceneSample {
  int height = 64;
  int width = 64;
  std::vector<float> image;
  std::vector<Annotation> annotations;
  Domain domain = Domain::Source;

  float pixel(int y, int x, int c) const {
    return image[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 +
                 static_cast<std::size_t>(c)];
  }
};

/// One requested object. Without a position the renderer places it.
struct ObjectSpec {
  int class_id = 0;
  int width = 8;
  int height = 8;
  std::optional<std::array<int, 2>> position;  // top-left (x, y)
};

/// Binary mask of a shape drawn in a w x h box.
inline std::vector<char> rasterize(ShapeKind kind, int w, int h) {
  std::vector<char> mask(static_cast<std::size_t>(w * h), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = (x + 0.5) / w, v = (y + 0.5) / h;
      mask[static_cast<std::size_t>(y * w + x)] = shape_contains(kind, u, v) ? 1 : 0;
    }
  return mask;
}

namespace detail {

inline bool boxes_touch(const det::Box& a, const det::Box& b, double gap) {
  return a.x_min < b.x_max + gap && b.x_min < a.x_max + gap && a.y_min < b.y_max + gap && b.y_min < a.y_max + gap;
}

}  // namespace detail

inline constexpr int kPlacementAttempts = 10;

/// An object with its final top-left origin, mask and tight box.
struct PlacedObject {
  ObjectSpec spec;
  std::array<int, 2> origin{};
  std::vector<char> mask;
  det::Box box;
};

/// Chooses non-touching positions for the objects in order. Throws
/// RenderError when an object cannot be placed in kPlacementAttempts tries.
inline std::vector<PlacedObject> place_objects(const std::vector<ObjectSpec>& objects, Rng& rng, int height = 64,
                                               int width = 64) {
  std::vector<PlacedObject> placed;
  for (const auto& obj : objects) {
    if (obj.width <= 0 || obj.height <= 0) throw RenderError("object with non-positive size");
    const auto kind = shape_of_class(obj.class_id);
    auto mask = rasterize(kind, obj.width, obj.height);
    int min_x = obj.width, min_y = obj.height, max_x = -1, max_y = -1;
    for (int y = 0; y < obj.height; ++y)
      for (int x = 0; x < obj.width; ++x)
        if (mask[static_cast<std::size_t>(y * obj.width + x)]) {
          min_x = std::min(min_x, x), max_x = std::max(max_x, x);
          min_y = std::min(min_y, y), max_y = std::max(max_y, y);
        }
    if (max_x < 0) throw RenderError("shape rasterized to no pixels");

    std::optional<PlacedObject> found;
    for (int attempt = 0; attempt < kPlacementAttempts && !found; ++attempt) {
      if (obj.width > width || obj.height > height) continue;
      std::array<int, 2> p = obj.position ? *obj.position
                                          : std::array<int, 2>{uniform_int(rng, 0, width - obj.width),
                                                               uniform_int(rng, 0, height - obj.height)};
      if (p[0] < 0 || p[1] < 0 || p[0] + obj.width > width || p[1] + obj.height > height) continue;
      const det::Box candidate{double(p[0] + min_x), double(p[1] + min_y), double(p[0] + max_x + 1),
                               double(p[1] + max_y + 1)};
      const bool clash = std::any_of(placed.begin(), placed.end(), [&](const PlacedObject& o) {
        return detail::boxes_touch(candidate, o.box, 1.0);
      });
      if (!clash) found = PlacedObject{obj, p, {}, candidate};
    }
    if (!found) {
      throw RenderError("could not place a " + std::to_string(obj.width) + "x" + std::to_string(obj.height) +
                        " object after " + std::to_string(kPlacementAttempts) + " attempts");
    }
    found->mask = std::move(mask);
    placed.push_back(std::move(*found));
  }
  return placed;
}

/// Renders the objects onto a styled background. Objects never overlap; each
/// annotation is the tight box of the pixels its shape actually covers.
inline SceneSample render_scene(const std::vector<ObjectSpec>& objects, const DomainStyle& style, Rng& rng,
                                int height = 64, int width = 64) {
  SceneSample s;
  s.height = height;
  s.width = width;
  s.domain = style.domain;
  const auto H = static_cast<std::size_t>(height), W = static_cast<std::size_t>(width);
  std::vector<double> img(H * W * 3);
  for (std::size_t y = 0; y < H; ++y) {
    const double t = H > 1 ? static_cast<double>(y) / static_cast<double>(H - 1) : 0.0;
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img[(y * W + x) * 3 + c] = (1.0 - t) * style.background_top[c] + t * style.background_bottom[c];
  }

  for (const auto& p : place_objects(objects, rng, height, width)) {
    const auto& obj = p.spec;
    const auto& mask = p.mask;
    const auto color = color_of_class(obj.class_id);
    const auto [ox, oy] = p.origin;
    for (int y = 0; y < obj.height; ++y)
      for (int x = 0; x < obj.width; ++x) {
        if (!mask[static_cast<std::size_t>(y * obj.width + x)]) continue;
        auto inside = [&](int xx, int yy) {
          return xx >= 0 && yy >= 0 && xx < obj.width && yy < obj.height &&
                 mask[static_cast<std::size_t>(yy * obj.width + xx)];
        };
        const bool edge = !inside(x - 1, y) || !inside(x + 1, y) || !inside(x, y - 1) || !inside(x, y + 1);
        const auto px = static_cast<std::size_t>(ox + x), py = static_cast<std::size_t>(oy + y);
        double* dst = &img[(py * W + px) * 3];
        switch (style.fill) {
          case FillMode::Solid:
            for (int c = 0; c < 3; ++c) dst[c] = color[c];
            break;
          case FillMode::Outlined:
            if (edge)
              for (int c = 0; c < 3; ++c) dst[c] = color[c];
            break;
          case FillMode::Textured: {
            const bool stripe = ((px + py) / 2) % 2 == 0;
            for (int c = 0; c < 3; ++c) dst[c] = stripe || edge ? color[c] : 0.55 * color[c] + 0.45 * dst[c];
            break;
          }
        }
      }
    s.annotations.push_back({obj.class_id, p.box});
  }

  s.image.resize(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = img[i] + style.brightness;
    if (style.noise > 0.0) v += style.noise * normal(rng);
    s.image[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return s;
}

}  // namespace usdaf::scene
