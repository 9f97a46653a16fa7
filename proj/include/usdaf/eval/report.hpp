#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "usdaf/adapt/diagnostics.hpp"
#include "usdaf/detect/model.hpp"
#include "usdaf/eval/metrics.hpp"
#include "usdaf/scene/dataset.hpp"

namespace usdaf::eval {

struct RunMetadata {
  std::string method;
  std::string preset;
  std::string config_hash;
  std::uint64_t seed = 0;
  double wall_time_seconds = 0.0;
};

struct MetricsReport {
  std::vector<int> common_classes;
  ClassAps per_class;
  double map = 0.0;
  std::array<std::optional<double>, 3> per_scale;
  std::string baseline;  // empty when no gain table is attached
  std::vector<ClassGain> gains;
  std::optional<adapt::GroupMeans> group_means;
  RunMetadata meta;
};

/// Shortest round-trip decimal form of a double.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace detail {

inline nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

inline std::string percent(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << 100.0 * *v;
  return os.str();
}

}  // namespace detail

/// Structured form. Wall time is left out when include_timing is false so two
/// runs of the same config compare equal.
inline nlohmann::json to_json(const MetricsReport& r, bool include_timing = true) {
  using nlohmann::json;
  json per_class = json::object();
  for (const auto& [c, ap] : r.per_class) per_class[std::to_string(c)] = detail::optional_json(ap);
  json gains = json::array();
  for (const auto& g : r.gains) gains.push_back({{"class_id", g.class_id}, {"gain", g.gain}, {"negative", g.negative}});
  json j = {{"common_classes", r.common_classes},
            {"per_class_ap", per_class},
            {"map", r.map},
            {"per_scale_map",
             {{"small", detail::optional_json(r.per_scale[0])},
              {"medium", detail::optional_json(r.per_scale[1])},
              {"large", detail::optional_json(r.per_scale[2])}}},
            {"baseline", r.baseline},
            {"gains", gains}};
  if (r.group_means) {
    const auto& g = *r.group_means;
    j["group_means"] = {{"source_private", detail::optional_json(g.source_private)},
                        {"source_common", detail::optional_json(g.source_common)},
                        {"target_common", detail::optional_json(g.target_common)},
                        {"target_private", detail::optional_json(g.target_private)},
                        {"counts", g.counts}};
  } else {
    j["group_means"] = nullptr;
  }
  json meta = {{"method", r.meta.method},
               {"preset", r.meta.preset},
               {"config_hash", r.meta.config_hash},
               {"seed", r.meta.seed}};
  if (include_timing) meta["wall_time_seconds"] = r.meta.wall_time_seconds;
  j["meta"] = meta;
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.common_classes = j.at("common_classes").get<std::vector<int>>();
  for (const auto& [k, v] : j.at("per_class_ap").items()) r.per_class[std::stoi(k)] = detail::optional_from(v);
  r.map = j.at("map").get<double>();
  const auto& s = j.at("per_scale_map");
  r.per_scale = {detail::optional_from(s.at("small")), detail::optional_from(s.at("medium")),
                 detail::optional_from(s.at("large"))};
  r.baseline = j.value("baseline", "");
  for (const auto& g : j.value("gains", nlohmann::json::array()))
    r.gains.push_back({g.at("class_id").get<int>(), g.at("gain").get<double>(), g.at("negative").get<bool>()});
  if (j.contains("group_means") && !j.at("group_means").is_null()) {
    const auto& g = j.at("group_means");
    adapt::GroupMeans m;
    m.source_private = detail::optional_from(g.at("source_private"));
    m.source_common = detail::optional_from(g.at("source_common"));
    m.target_common = detail::optional_from(g.at("target_common"));
    m.target_private = detail::optional_from(g.at("target_private"));
    m.counts = g.at("counts").get<std::array<std::size_t, 4>>();
    r.group_means = m;
  }
  const auto& meta = j.at("meta");
  r.meta.method = meta.value("method", "");
  r.meta.preset = meta.value("preset", "");
  r.meta.config_hash = meta.value("config_hash", "");
  r.meta.seed = meta.value("seed", std::uint64_t{0});
  r.meta.wall_time_seconds = meta.value("wall_time_seconds", 0.0);
  return r;
}

inline std::string to_markdown(const MetricsReport& r) {
  std::ostringstream os;
  os << "## " << (r.meta.method.empty() ? "run" : r.meta.method);
  if (!r.meta.preset.empty()) os << " on " << r.meta.preset;
  os << " (seed " << r.meta.seed << ")\n\n";
  os << "mAP@0.5 over common classes: " << detail::percent(r.map) << "\n\n";
  os << "| class | AP |";
  if (!r.gains.empty()) os << " gain vs " << r.baseline << " |";
  os << "\n|---|---|" << (r.gains.empty() ? "" : "---|") << "\n";
  for (const auto& [c, ap] : r.per_class) {
    os << "| " << c << " | " << detail::percent(ap) << " |";
    if (!r.gains.empty()) {
      std::string cell = "-";
      for (const auto& g : r.gains)
        if (g.class_id == c) cell = detail::percent(g.gain) + (g.negative ? " (negative)" : "");
      os << ' ' << cell << " |";
    }
    os << '\n';
  }
  os << "\n| small | medium | large |\n|---|---|---|\n| " << detail::percent(r.per_scale[0]) << " | "
     << detail::percent(r.per_scale[1]) << " | " << detail::percent(r.per_scale[2]) << " |\n";
  if (r.group_means) {
    const auto& g = *r.group_means;
    auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("-"); };
    os << "\nDiscriminator means: source private " << cell(g.source_private) << ", source common "
       << cell(g.source_common) << ", target common " << cell(g.target_common) << ", target private "
       << cell(g.target_private) << '\n';
  }
  return os.str();
}

/// Runs the detector over a split, pairing detections with evaluation GT.
inline std::vector<ImageEval> run_detector(const det::Detector& det, const scene::SceneSplit& split) {
  std::vector<ImageEval> out;
  out.reserve(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto gts = split.evaluation_annotations(i);
    out.push_back({det.detect(split.image(i)), {gts.begin(), gts.end()}});
  }
  return out;
}

/// Common-class evaluation of a trained detector on a target test split.
inline MetricsReport evaluate(const det::Detector& det, const scene::SceneSplit& test,
                              const scene::LabelSpaceConfig& labels, double scale_factor = adapt::kDefaultScaleFactor) {
  const auto raw = run_detector(det, test);
  const auto images = restrict_to_common(raw, labels);
  MetricsReport r;
  r.common_classes = labels.common;
  r.per_class = per_class_ap(images, labels.common);
  r.map = mean_ap(r.per_class, labels.common);
  r.per_scale = per_scale_map(images, labels.common, scale_factor);
  return r;
}

/// Attaches the per-class gain table against a baseline report.
inline void attach_baseline(MetricsReport& adapted, const MetricsReport& baseline, const std::string& name) {
  adapted.baseline = name;
  adapted.gains = negative_transfer_report(adapted.per_class, baseline.per_class);
}

/// CSV header of the instance feature export for D region-feature values.
inline std::string feature_csv_header(std::size_t D) {
  std::string h = "domain,class_id,is_common,bucket";
  for (std::size_t k = 0; k < D; ++k) h += ",f" + std::to_string(k);
  return h;
}

/// One row per annotated instance of the given splits, in split, image and
/// annotation order: domain, class, common flag, scale bucket and the pooled
/// region feature of the GT box.
inline std::size_t export_instance_features(const det::Detector& det, const std::vector<const scene::SceneSplit*>& splits,
                                            const scene::LabelSpaceConfig& labels, const std::string& path,
                                            double scale_factor = adapt::kDefaultScaleFactor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature export " + path);
  out << feature_csv_header(det.roi_feature_size()) << '\n';
  std::size_t rows = 0;
  for (const auto* split : splits) {
    for (std::size_t i = 0; i < split->size(); ++i) {
      const auto anns = split->evaluation_annotations(i);
      if (anns.empty()) continue;
      std::vector<det::Box> boxes;
      for (const auto& a : anns) boxes.push_back(a.box);
      const auto pooled = det.roi_pool(det.backbone_forward(det.image_tensor(split->image(i))), boxes);
      const std::size_t D = det.roi_feature_size();
      for (std::size_t k = 0; k < anns.size(); ++k) {
        out << scene::to_string(split->domain()) << ',' << anns[k].class_id << ','
            << (labels.is_common(anns[k].class_id) ? 1 : 0) << ','
            << adapt::to_string(adapt::scale_bucket_raw(anns[k].box.area(), scale_factor));
        for (std::size_t f = 0; f < D; ++f) out << ',' << format_double(pooled[k * D + f]);
        out << '\n';
        ++rows;
      }
    }
  }
  if (!out) throw IoError("failed writing feature export " + path);
  return rows;
}

}  // namespace usdaf::eval
