#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "usdaf/adapt/scale.hpp"
#include "usdaf/core/error.hpp"
#include "usdaf/core/random.hpp"
#include "usdaf/scene/label_space.hpp"
#include "usdaf/scene/render.hpp"

namespace usdaf::scene {

using Mixture = std::array<double, 3>;  // small, medium, large
using SideRanges = std::array<std::array<double, 2>, 3>;

enum class Split { Train, Test };

inline std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

/// Declarative description of a source/target dataset pair. Regenerating
/// from the same manifest gives bit-identical samples.
struct DatasetManifest {
  std::uint64_t seed = 7;
  int image_size = 64;

  // label space request; resolved into label_space by resolve()
  int universe_size = 8;
  Scenario scenario = Scenario::ClosedSet;
  double xi = 1.0;
  std::uint64_t label_seed = 0;
  LabelSpaceConfig label_space;

  int source_train = 800;
  int target_train = 800;
  int source_test = 200;
  int target_test = 200;

  DomainStyle source_style = default_style(Domain::Source);
  DomainStyle target_style = default_style(Domain::Target);

  Mixture source_mixture{0.2, 0.6, 0.2};
  Mixture target_mixture{0.5, 0.4, 0.1};
  bool scale_shift = true;  // when false the target uses the source mixture

  int min_objects = 1;
  int max_objects = 3;
  SideRanges side_ranges{{{4.6, 6.4}, {8.0, 28.0}, {34.0, 40.0}}};
  double scale_factor = adapt::kDefaultScaleFactor;

  const Mixture& mixture(Domain d) const {
    return d == Domain::Target && scale_shift ? target_mixture : source_mixture;
  }
  const DomainStyle& style(Domain d) const { return d == Domain::Source ? source_style : target_style; }
  const std::vector<int>& classes(Domain d) const {
    return d == Domain::Source ? label_space.source_classes : label_space.target_classes;
  }

  /// Mean object area implied by the mixture and side ranges (side ~ uniform).
  double expected_mean_area(Domain d) const {
    const auto& w = mixture(d);
    double m = 0.0;
    for (std::size_t b = 0; b < 3; ++b) {
      const double lo = side_ranges[b][0], hi = side_ranges[b][1];
      m += w[b] * (lo * lo + lo * hi + hi * hi) / 3.0;
    }
    return m;
  }

  void resolve() {
    if (label_space.source_classes.empty()) {
      label_space = build_label_spaces(universe_size, scenario, xi, label_seed);
    }
  }

  void validate() const {
    if (image_size < 16) throw ConfigError("image_size too small");
    if (min_objects < 0 || max_objects < min_objects || max_objects > 6) throw ConfigError("objects per scene must satisfy 0 <= min <= max <= 6");
    for (const auto* m : {&source_mixture, &target_mixture}) {
      double s = 0.0;
      for (double w : *m) {
        if (w < 0.0) throw ConfigError("negative mixture weight");
        s += w;
      }
      if (std::abs(s - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1");
    }
    for (const auto& r : side_ranges) {
      if (!(r[0] > 0.0 && r[1] >= r[0])) throw ConfigError("bad side range");
    }
    if (source_style.differences(target_style) < 2) throw ConfigError("source and target styles must differ in at least two parameters");
    if (label_space.source_classes.empty() || label_space.target_classes.empty()) throw ConfigError("label space not resolved");
    if (source_train < 0 || target_train < 0 || source_test < 0 || target_test < 0) throw ConfigError("negative split size");
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline nlohmann::json style_to_json(const DomainStyle& s) {
  return {{"background_top", s.background_top},
          {"background_bottom", s.background_bottom},
          {"fill", to_string(s.fill)},
          {"noise", s.noise},
          {"brightness", s.brightness}};
}

inline DomainStyle style_from_json(const nlohmann::json& j, Domain d) {
  DomainStyle s = default_style(d);
  s.background_top = j.value("background_top", s.background_top);
  s.background_bottom = j.value("background_bottom", s.background_bottom);
  if (j.contains("fill")) s.fill = fill_from_string(j.at("fill").get<std::string>());
  s.noise = j.value("noise", s.noise);
  s.brightness = j.value("brightness", s.brightness);
  return s;
}

}  // namespace detail

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json ls = {{"universe_size", m.universe_size},
                       {"scenario", to_string(m.scenario)},
                       {"xi", m.xi},
                       {"seed", m.label_seed}};
  if (!m.label_space.source_classes.empty()) {
    ls["source"] = m.label_space.source_classes;
    ls["target"] = m.label_space.target_classes;
  }
  return {{"seed", m.seed},
          {"image_size", m.image_size},
          {"label_space", ls},
          {"counts",
           {{"source_train", m.source_train},
            {"target_train", m.target_train},
            {"source_test", m.source_test},
            {"target_test", m.target_test}}},
          {"styles", {{"source", detail::style_to_json(m.source_style)}, {"target", detail::style_to_json(m.target_style)}}},
          {"scale",
           {{"source_mixture", m.source_mixture},
            {"target_mixture", m.target_mixture},
            {"scale_shift", m.scale_shift},
            {"side_ranges", m.side_ranges},
            {"scale_factor", m.scale_factor}}},
          {"objects_per_scene", {m.min_objects, m.max_objects}}};
}

/// Missing keys keep their defaults. Explicit source/target lists override
/// the (scenario, xi) request.
inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.seed = j.value("seed", m.seed);
  m.image_size = j.value("image_size", m.image_size);
  if (j.contains("label_space")) {
    const auto& ls = j.at("label_space");
    m.universe_size = ls.value("universe_size", m.universe_size);
    if (ls.contains("scenario")) m.scenario = scenario_from_string(ls.at("scenario").get<std::string>());
    m.xi = ls.value("xi", m.xi);
    m.label_seed = ls.value("seed", m.label_seed);
    if (ls.contains("source") && ls.contains("target")) {
      std::vector<int> universe(static_cast<std::size_t>(m.universe_size));
      std::iota(universe.begin(), universe.end(), 0);
      m.label_space = make_label_space(universe, ls.at("source").get<std::vector<int>>(),
                                       ls.at("target").get<std::vector<int>>());
    }
  }
  if (j.contains("counts")) {
    const auto& c = j.at("counts");
    m.source_train = c.value("source_train", m.source_train);
    m.target_train = c.value("target_train", m.target_train);
    m.source_test = c.value("source_test", m.source_test);
    m.target_test = c.value("target_test", m.target_test);
  }
  if (j.contains("styles")) {
    const auto& s = j.at("styles");
    if (s.contains("source")) m.source_style = detail::style_from_json(s.at("source"), Domain::Source);
    if (s.contains("target")) m.target_style = detail::style_from_json(s.at("target"), Domain::Target);
  }
  if (j.contains("scale")) {
    const auto& s = j.at("scale");
    m.source_mixture = s.value("source_mixture", m.source_mixture);
    m.target_mixture = s.value("target_mixture", m.target_mixture);
    m.scale_shift = s.value("scale_shift", m.scale_shift);
    m.side_ranges = s.value("side_ranges", m.side_ranges);
    m.scale_factor = s.value("scale_factor", m.scale_factor);
  }
  if (j.contains("objects_per_scene")) {
    const auto r = j.at("objects_per_scene").get<std::array<int, 2>>();
    m.min_objects = r[0];
    m.max_objects = r[1];
  }
  m.resolve();
  m.validate();
  return m;
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  return manifest_from_json(nlohmann::json::parse(in));
}

// ---------------------------------------------------------------------------
// Generation

/// Tight extent (min_x, min_y, max_x+1, max_y+1) of a rasterized shape.
inline std::array<int, 4> mask_extent(ShapeKind kind, int w, int h) {
  const auto mask = rasterize(kind, w, h);
  std::array<int, 4> e{w, h, -1, -1};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask[static_cast<std::size_t>(y * w + x)]) {
        e[0] = std::min(e[0], x), e[1] = std::min(e[1], y);
        e[2] = std::max(e[2], x + 1), e[3] = std::max(e[3], y + 1);
      }
  return e;
}

inline constexpr double kMinBoxArea = 16.0;

namespace detail {

inline std::size_t pick_bucket(const Mixture& w, Rng& rng) {
  const double r = uniform01(rng);
  double acc = 0.0;
  for (std::size_t b = 0; b < 3; ++b) {
    acc += w[b];
    if (r < acc) return b;
  }
  return 2;
}

/// Draws one object whose rendered box lands in the drawn scale bucket.
inline ObjectSpec sample_object(const DatasetManifest& m, Domain d, const Mixture& weights, Rng& rng) {
  const auto& classes = m.classes(d);
  ObjectSpec o;
  o.class_id = classes[static_cast<std::size_t>(rng() % classes.size())];
  const auto bucket = pick_bucket(weights, rng);
  const auto kind = shape_of_class(o.class_id);
  const double aspect = aspect_of(kind);
  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    const double side = uniform(rng, m.side_ranges[bucket][0], m.side_ranges[bucket][1]);
    o.width = std::max(1, static_cast<int>(std::lround(side * std::sqrt(aspect))));
    o.height = std::max(1, static_cast<int>(std::lround(side / std::sqrt(aspect))));
    const auto e = mask_extent(kind, o.width, o.height);
    const double area = double(e[2] - e[0]) * double(e[3] - e[1]);
    if (area >= kMinBoxArea && adapt::index_of(adapt::scale_bucket_raw(area, m.scale_factor)) == bucket) return o;
  }
  throw RenderError("could not size an object into its scale bucket");
}

inline std::uint64_t split_stream(Domain d, Split s) { return 0x5ce0000ULL + 2 * std::uint64_t(d) + std::uint64_t(s); }

inline std::vector<ObjectSpec> sample_objects(const DatasetManifest& m, Domain d, const Mixture& weights, Rng& rng) {
  const int n = uniform_int(rng, m.min_objects, m.max_objects);
  std::vector<ObjectSpec> objects;
  for (int i = 0; i < n; ++i) objects.push_back(sample_object(m, d, weights, rng));
  std::stable_sort(objects.begin(), objects.end(),
                   [](const ObjectSpec& a, const ObjectSpec& b) { return a.width * a.height > b.width * b.height; });
  return objects;
}

inline constexpr int kSceneAttempts = 100;
inline constexpr int kCalibrationRounds = 6;
inline constexpr int kCalibrationScenes = 3000;

}  // namespace detail

/// Per-object bucket weights that reproduce the configured mixture after
/// unplaceable scenes are redrawn. Large objects collide more often, so plain
/// rejection would under-represent them; a fixed-point iteration over
/// simulated placements corrects for that.
inline Mixture calibrated_mixture(const DatasetManifest& m, Domain d) {
  const Mixture& goal = m.mixture(d);
  Mixture w = goal;
  for (int round = 0; round < detail::kCalibrationRounds; ++round) {
    Rng rng(derive_seed(m.seed, 0xca11b0ULL + std::uint64_t(d), static_cast<std::uint64_t>(round)));
    std::array<double, 3> counts{};
    for (int s = 0; s < detail::kCalibrationScenes; ++s) {
      for (int attempt = 0; attempt < detail::kSceneAttempts; ++attempt) {
        const auto objects = detail::sample_objects(m, d, w, rng);
        try {
          for (const auto& p : place_objects(objects, rng, m.image_size, m.image_size))
            counts[adapt::index_of(adapt::scale_bucket_raw(p.box.area(), m.scale_factor))] += 1.0;
          break;
        } catch (const RenderError&) {
        }
      }
    }
    const double total = counts[0] + counts[1] + counts[2];
    if (total <= 0.0) break;
    double norm = 0.0;
    for (std::size_t b = 0; b < 3; ++b) {
      if (goal[b] > 0.0) w[b] *= counts[b] > 0.0 ? goal[b] * total / counts[b] : 2.0;
      norm += w[b];
    }
    for (auto& x : w) x /= norm;
  }
  return w;
}

/// Pure function of (manifest, domain, split, index, bucket weights). Scenes
/// whose objects cannot all be placed are redrawn from the same stream.
inline SceneSample generate_scene(const DatasetManifest& m, Domain d, Split split, std::size_t index,
                                  const Mixture& weights) {
  Rng rng(derive_seed(m.seed, detail::split_stream(d, split), index));
  for (int scene_attempt = 0; scene_attempt < detail::kSceneAttempts; ++scene_attempt) {
    const auto objects = detail::sample_objects(m, d, weights, rng);
    try {
      return render_scene(objects, m.style(d), rng, m.image_size, m.image_size);
    } catch (const RenderError&) {
      continue;
    }
  }
  throw RenderError("scene generation kept failing to place objects");
}

inline SceneSample generate_scene(const DatasetManifest& m, Domain d, Split split, std::size_t index) {
  return generate_scene(m, d, split, index, calibrated_mixture(m, d));
}

enum class AnnotationAccess { Open, Hidden };

/// Scenes of one (domain, split). Annotations reach training code only
/// through training_annotations(), which refuses target-domain data and
/// counts every such attempt.
class SceneSplit {
 public:
  SceneSplit() = default;
  SceneSplit(Domain domain, Split split, std::vector<SceneSample> samples)
      : domain_(domain), split_(split), samples_(std::move(samples)) {}

  Domain domain() const { return domain_; }
  Split split() const { return split_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  AnnotationAccess training_access() const { return domain_ == Domain::Source ? AnnotationAccess::Open : AnnotationAccess::Hidden; }

  const std::vector<float>& image(std::size_t i) const { return samples_.at(i).image; }
  int height(std::size_t i) const { return samples_.at(i).height; }
  int width(std::size_t i) const { return samples_.at(i).width; }

  std::span<const Annotation> training_annotations(std::size_t i) const {
    if (training_access() == AnnotationAccess::Hidden) {
      hidden_reads_->fetch_add(1);
      throw HiddenLabelError("training code read annotations of a " + to_string(domain_) + " scene");
    }
    return samples_.at(i).annotations;
  }

  /// Evaluation/diagnostic access; never used by the training loop.
  std::span<const Annotation> evaluation_annotations(std::size_t i) const { return samples_.at(i).annotations; }
  const SceneSample& evaluation_sample(std::size_t i) const { return samples_.at(i); }

  std::size_t hidden_read_attempts() const { return hidden_reads_->load(); }

 private:
  Domain domain_ = Domain::Source;
  Split split_ = Split::Train;
  std::vector<SceneSample> samples_;
  std::shared_ptr<std::atomic<std::size_t>> hidden_reads_ = std::make_shared<std::atomic<std::size_t>>(0);
};

struct Dataset {
  DatasetManifest manifest;
  SceneSplit source_train;
  SceneSplit target_train;
  SceneSplit source_test;
  SceneSplit target_test;

  std::size_t hidden_read_attempts() const {
    return source_train.hidden_read_attempts() + target_train.hidden_read_attempts() +
           source_test.hidden_read_attempts() + target_test.hidden_read_attempts();
  }
};

inline SceneSplit generate_split(const DatasetManifest& m, Domain d, Split s, int count, const Mixture& weights) {
  std::vector<SceneSample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) samples.push_back(generate_scene(m, d, s, static_cast<std::size_t>(i), weights));
  return SceneSplit(d, s, std::move(samples));
}

inline SceneSplit generate_split(const DatasetManifest& m, Domain d, Split s, int count) {
  return generate_split(m, d, s, count, count > 0 ? calibrated_mixture(m, d) : m.mixture(d));
}

inline Dataset generate_dataset(DatasetManifest m) {
  m.resolve();
  m.validate();
  Dataset ds;
  const auto ws = calibrated_mixture(m, Domain::Source), wt = calibrated_mixture(m, Domain::Target);
  ds.source_train = generate_split(m, Domain::Source, Split::Train, m.source_train, ws);
  ds.target_train = generate_split(m, Domain::Target, Split::Train, m.target_train, wt);
  ds.source_test = generate_split(m, Domain::Source, Split::Test, m.source_test, ws);
  ds.target_test = generate_split(m, Domain::Target, Split::Test, m.target_test, wt);
  ds.manifest = std::move(m);
  return ds;
}

/// FNV-1a over pixels and annotations of a split.
inline std::uint64_t checksum(const SceneSplit& split) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001b3ULL;
  };
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& s = split.evaluation_sample(i);
    mix(s.image.data(), s.image.size() * sizeof(float));
    for (const auto& a : s.annotations) {
      mix(&a.class_id, sizeof a.class_id);
      mix(&a.box, sizeof a.box);
    }
  }
  return h;
}

inline std::uint64_t checksum(const Dataset& ds) {
  return mix_seed(checksum(ds.source_train) ^ mix_seed(checksum(ds.target_train)) ^
                  mix_seed(mix_seed(checksum(ds.source_test))) ^ mix_seed(mix_seed(mix_seed(checksum(ds.target_test)))));
}

}  // namespace usdaf::scene
