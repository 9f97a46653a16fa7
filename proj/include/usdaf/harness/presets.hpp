#pragma once

#include <string>
#include <vector>

#include "usdaf/harness/config.hpp"
#include "usdaf/scene/dataset.hpp"

namespace usdaf::harness {

struct Preset {
  std::string name;
  scene::Scenario scenario;
  double xi;
};

/// Scenario presets over the 8-class default universe:
/// closed 8/0/0, partial 4 common + 4 source-private, open-0.75 6/1/1,
/// open-0.5 4/2/2, open-0.25 2/3/3 (common/source-private/target-private).
inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> p = {{"closed", scene::Scenario::ClosedSet, 1.0},
                                        {"partial", scene::Scenario::PartialSet, 0.5},
                                        {"open-0.75", scene::Scenario::OpenSet, 0.75},
                                        {"open-0.5", scene::Scenario::OpenSet, 0.5},
                                        {"open-0.25", scene::Scenario::OpenSet, 0.25}};
  return p;
}

inline const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  std::string known;
  for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown preset: " + name + " (known: " + known + ")");
}

inline scene::DatasetManifest preset_manifest(const std::string& name) {
  const auto& p = find_preset(name);
  scene::DatasetManifest m;
  m.scenario = p.scenario;
  m.xi = p.xi;
  m.resolve();
  m.validate();
  return m;
}

/// The manifest file when given, the preset's otherwise.
inline scene::DatasetManifest resolve_manifest(const ExperimentConfig& cfg) {
  if (cfg.manifest.empty()) return preset_manifest(cfg.preset);
  auto m = scene::load_manifest(cfg.manifest);
  m.resolve();
  m.validate();
  return m;
}

}  // namespace usdaf::harness
