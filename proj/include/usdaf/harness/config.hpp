#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "usdaf/adapt/multilabel.hpp"
#include "usdaf/core/error.hpp"

namespace usdaf::harness {

enum class Method { SourceOnly, DAF, USDAF, USDAF_noFM, USDAF_noSAA };

inline constexpr Method kAllMethods[] = {Method::SourceOnly, Method::DAF, Method::USDAF, Method::USDAF_noFM,
                                         Method::USDAF_noSAA};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::SourceOnly: return "source_only";
    case Method::DAF: return "daf";
    case Method::USDAF: return "usdaf";
    case Method::USDAF_noFM: return "usdaf_nofm";
    case Method::USDAF_noSAA: return "usdaf_nosaa";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (auto m : kAllMethods)
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method: " + s + " (expected source_only, daf, usdaf, usdaf_nofm or usdaf_nosaa)");
}

/// What a method switches on: adversarial heads, their width, and the filter.
struct MethodTraits {
  bool adapt = false;
  std::size_t entries = 0;
  bool filter = false;
};

inline MethodTraits traits_of(Method m) {
  switch (m) {
    case Method::SourceOnly: return {false, 0, false};
    case Method::DAF: return {true, 1, false};
    case Method::USDAF: return {true, 4, true};
    case Method::USDAF_noFM: return {true, 4, false};
    case Method::USDAF_noSAA: return {true, 1, true};
  }
  return {};
}

struct ExperimentConfig {
  std::string manifest;  // path to a manifest file; empty = the preset's manifest
  std::string preset = "closed";
  Method method = Method::USDAF;
  double eta = 0.01;
  double m = 0.3;
  double lr = 0.004;
  double drop_factor = 10.0;
  int drop_step = 3000;
  int total_steps = 6000;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string output_dir = "runs";
  int log_every = 10;
  int diagnostic_images = 100;  // per split, for the discriminator group means

  double learning_rate_at(int step) const { return step < drop_step ? lr : lr / drop_factor; }

  std::optional<adapt::FilterConfig> filter() const {
    if (!traits_of(method).filter) return std::nullopt;
    return adapt::FilterConfig{m};
  }

  void validate() const {
    if (total_steps <= 0) throw ConfigError("total_steps must be positive");
    if (!(drop_step < total_steps)) throw ConfigError("drop_step must be smaller than total_steps");
    if (drop_step < 0) throw ConfigError("drop_step must be non-negative");
    if (!(eta >= 0.0)) throw ConfigError("eta must be non-negative");
    if (!(m > 0.0 && m <= 0.5)) throw ConfigError("m must lie in (0, 0.5]");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(drop_factor >= 1.0)) throw ConfigError("drop_factor must be at least 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (log_every <= 0) throw ConfigError("log_every must be positive");
    if (diagnostic_images < 0) throw ConfigError("diagnostic_images must be non-negative");
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"manifest", c.manifest},       {"preset", c.preset},
          {"method", to_string(c.method)}, {"eta", c.eta},
          {"m", c.m},                      {"lr", c.lr},
          {"drop_factor", c.drop_factor},  {"drop_step", c.drop_step},
          {"total_steps", c.total_steps},  {"momentum", c.momentum},
          {"weight_decay", c.weight_decay}, {"seeds", c.seeds},
          {"output_dir", c.output_dir},    {"log_every", c.log_every},
          {"diagnostic_images", c.diagnostic_images}};
}

/// Sets one field from its textual value; unknown keys are an error.
inline void apply_override(ExperimentConfig& c, const std::string& key, const std::string& value) {
  auto num = [&](const std::string& v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw ConfigError("bad numeric value for " + key + ": " + v);
    return d;
  };
  auto integer = [&](const std::string& v) {
    const double d = num(v);
    if (d != static_cast<double>(static_cast<long long>(d))) throw ConfigError(key + " must be an integer");
    return static_cast<int>(d);
  };
  if (key == "manifest") c.manifest = value;
  else if (key == "preset") c.preset = value;
  else if (key == "method") c.method = method_from_string(value);
  else if (key == "eta") c.eta = num(value);
  else if (key == "m") c.m = num(value);
  else if (key == "lr") c.lr = num(value);
  else if (key == "drop_factor") c.drop_factor = num(value);
  else if (key == "drop_step") c.drop_step = integer(value);
  else if (key == "total_steps") c.total_steps = integer(value);
  else if (key == "momentum") c.momentum = num(value);
  else if (key == "weight_decay") c.weight_decay = num(value);
  else if (key == "output_dir") c.output_dir = value;
  else if (key == "log_every") c.log_every = integer(value);
  else if (key == "diagnostic_images") c.diagnostic_images = integer(value);
  else if (key == "seeds") {
    c.seeds.clear();
    std::size_t start = 0;
    while (start <= value.size()) {
      const auto end = value.find(',', start);
      const auto item = value.substr(start, end == std::string::npos ? std::string::npos : end - start);
      const double s = num(item);
      if (s < 0 || s != static_cast<double>(static_cast<std::uint64_t>(s))) throw ConfigError("bad seed: " + item);
      c.seeds.push_back(static_cast<std::uint64_t>(s));
      if (end == std::string::npos) break;
      start = end + 1;
    }
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (!j.is_object()) throw ConfigError("experiment config must be an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "seeds") {
      c.seeds = v.get<std::vector<std::uint64_t>>();
    } else if (v.is_string()) {
      apply_override(c, key, v.get<std::string>());
    } else if (v.is_number()) {
      apply_override(c, key, v.dump());
    } else {
      throw ConfigError("unsupported value for config key " + key);
    }
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config " + path + ": " + e.what());
  }
}

/// FNV-1a of the canonical JSON dump, output_dir excluded so a relocated run
/// keeps its hash.
inline std::string config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("output_dir");
  const auto text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) h = (h ^ ch) * 0x100000001b3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace usdaf::harness
