#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "usdaf/harness/presets.hpp"
#include "usdaf/harness/train.hpp"

namespace usdaf::harness {

struct SuiteSpec {
  std::vector<std::string> presets;
  std::vector<Method> methods;
  std::vector<std::uint64_t> seeds;
  ExperimentConfig base;  // everything but preset, method and seeds
  int jobs = 1;
  bool write_run_files = true;
};

using RunKey = std::tuple<std::string, Method, std::uint64_t>;

struct SuiteResult {
  SuiteSpec spec;
  std::map<RunKey, eval::MetricsReport> reports;
  std::map<RunKey, std::string> failures;

  const eval::MetricsReport* find(const std::string& preset, Method m, std::uint64_t seed) const {
    auto it = reports.find({preset, m, seed});
    return it == reports.end() ? nullptr : &it->second;
  }
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  r.n = v.size();
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= double(v.size());
  if (v.size() > 1) {
    double s = 0.0;
    for (double x : v) s += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(s / double(v.size() - 1));
  }
  return r;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

using ProgressFn = std::function<void(const std::string&)>;

/// Trains and evaluates every (preset, method, seed) cell. Datasets are
/// generated once per preset and shared read-only by the runs; each run owns
/// its model. Adapted reports get a gain table against SourceOnly of the same
/// seed when that run exists. Failed runs leave gaps.
inline SuiteResult run_suite(const SuiteSpec& spec, const ProgressFn& progress = {}) {
  if (spec.presets.empty() || spec.methods.empty() || spec.seeds.empty()) {
    throw ConfigError("suite needs at least one preset, method and seed");
  }
  SuiteResult result;
  result.spec = spec;
  std::mutex mu;
  for (const auto& preset : spec.presets) {
    auto cfg = spec.base;
    cfg.preset = preset;
    const auto data = scene::generate_dataset(resolve_manifest(cfg));
    std::vector<std::pair<Method, std::uint64_t>> cells;
    for (auto m : spec.methods)
      for (auto s : spec.seeds) cells.emplace_back(m, s);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) {
        auto run_cfg = cfg;
        run_cfg.method = cells[i].first;
        const RunKey key{preset, cells[i].first, cells[i].second};
        try {
          TrainOptions opts;
          opts.write_files = spec.write_run_files;
          auto rec = train(run_cfg, cells[i].second, data, opts);
          std::lock_guard lock(mu);
          result.reports[key] = std::move(rec.metrics);
          if (progress) {
            progress(run_name(run_cfg, cells[i].second) + " mAP " + eval::format_double(result.reports[key].map));
          }
        } catch (const std::exception& e) {
          std::lock_guard lock(mu);
          result.failures[key] = e.what();
          if (progress) progress(run_name(run_cfg, cells[i].second) + " failed: " + e.what());
        }
      }
    };
    const int jobs = std::max(1, spec.jobs);
    std::vector<std::thread> pool;
    for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
  }
  for (auto& [key, report] : result.reports) {
    const auto& [preset, method, seed] = key;
    if (method == Method::SourceOnly) continue;
    if (const auto* base = result.find(preset, Method::SourceOnly, seed)) {
      eval::attach_baseline(report, *base, to_string(Method::SourceOnly));
    }
  }
  return result;
}

namespace detail {

inline std::string pct(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << 100.0 * v;
  return os.str();
}

inline std::vector<double> maps_of(const SuiteResult& r, const std::string& preset, Method m) {
  std::vector<double> v;
  for (auto s : r.spec.seeds)
    if (const auto* rep = r.find(preset, m, s)) v.push_back(rep->map);
  return v;
}

}  // namespace detail

/// One row per (preset, method, seed) that produced a report.
inline std::string suite_csv(const SuiteResult& r) {
  std::string s = "preset,method,seed,map,small,medium,large,negative_classes,ordering_holds\n";
  for (const auto& preset : r.spec.presets)
    for (auto m : r.spec.methods)
      for (auto seed : r.spec.seeds) {
        const auto* rep = r.find(preset, m, seed);
        if (!rep) continue;
        std::size_t negatives = 0;
        for (const auto& g : rep->gains) negatives += g.negative ? 1 : 0;
        std::string ordering;
        if (rep->group_means) {
          const auto o = rep->group_means->ordering_holds();
          ordering = o ? (*o ? "1" : "0") : "";
        }
        s += preset + ',' + to_string(m) + ',' + std::to_string(seed) + ',' + eval::format_double(rep->map);
        for (const auto& b : rep->per_scale) s += ',' + (b ? eval::format_double(*b) : std::string());
        s += ',' + std::to_string(negatives) + ',' + ordering + '\n';
      }
  return s;
}

/// Methods x presets mean±std mAP table, per-class tables, negative-transfer
/// flags and the discriminator ordering diagnostic.
inline std::string suite_markdown(const SuiteResult& r) {
  std::ostringstream os;
  os << "# Suite results\n\nCommon-class mAP@0.5 (%), mean ± std over seeds; `n/a` marks missing runs.\n\n| method |";
  for (const auto& p : r.spec.presets) os << ' ' << p << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < r.spec.presets.size(); ++i) os << "---|";
  os << '\n';
  for (auto m : r.spec.methods) {
    os << "| " << to_string(m) << " |";
    for (const auto& p : r.spec.presets) {
      const auto v = detail::maps_of(r, p, m);
      if (v.empty()) {
        os << " n/a |";
        continue;
      }
      const auto ms = mean_std(v);
      os << ' ' << detail::pct(ms.mean) << " ± " << detail::pct(ms.std);
      if (ms.n < r.spec.seeds.size()) os << " (" << ms.n << '/' << r.spec.seeds.size() << ')';
      os << " |";
    }
    os << '\n';
  }

  for (const auto& p : r.spec.presets) {
    std::vector<int> classes;
    for (const auto& [key, rep] : r.reports)
      if (std::get<0>(key) == p) {
        classes = rep.common_classes;
        break;
      }
    if (classes.empty()) continue;
    os << "\n## " << p << ": per-class AP (%), mean over seeds\n\n| method |";
    for (int c : classes) os << " class " << c << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < classes.size(); ++i) os << "---|";
    os << '\n';
    for (auto m : r.spec.methods) {
      os << "| " << to_string(m) << " |";
      for (int c : classes) {
        std::vector<double> v;
        for (auto s : r.spec.seeds)
          if (const auto* rep = r.find(p, m, s))
            if (auto it = rep->per_class.find(c); it != rep->per_class.end() && it->second) v.push_back(*it->second);
        os << ' ' << (v.empty() ? std::string("n/a") : detail::pct(mean_std(v).mean)) << " |";
      }
      os << '\n';
    }

    os << "\nNegative transfer vs source_only (classes with lower AP, per seed):\n\n";
    for (auto m : r.spec.methods) {
      if (m == Method::SourceOnly) continue;
      os << "- " << to_string(m) << ':';
      for (auto s : r.spec.seeds) {
        const auto* rep = r.find(p, m, s);
        os << " seed " << s << " [";
        if (!rep || rep->baseline.empty()) {
          os << "n/a";
        } else {
          bool first = true;
          for (const auto& g : rep->gains)
            if (g.negative) {
              os << (first ? "" : " ") << g.class_id;
              first = false;
            }
        }
        os << ']';
      }
      os << '\n';
    }

    os << "\nDiscriminator ordering (source private < source common < target common < target private):\n\n";
    for (auto m : r.spec.methods) {
      if (!traits_of(m).adapt) continue;
      std::size_t holds = 0, measured = 0;
      for (auto s : r.spec.seeds)
        if (const auto* rep = r.find(p, m, s); rep && rep->group_means)
          if (auto o = rep->group_means->ordering_holds()) {
            ++measured;
            holds += *o ? 1 : 0;
          }
      os << "- " << to_string(m) << ": ";
      if (measured == 0) os << "not measurable (a group is empty)\n";
      else os << "holds on " << holds << " of " << measured << " seeds\n";
    }
  }
  if (!r.failures.empty()) {
    os << "\n## Failed runs\n\n";
    for (const auto& [key, msg] : r.failures) {
      os << "- " << std::get<0>(key) << ' ' << to_string(std::get<1>(key)) << " seed " << std::get<2>(key) << ": "
         << msg << '\n';
    }
  }
  return os.str();
}

/// Grouped bar chart of mean mAP: one group per preset, one bar per method.
inline std::string suite_svg(const SuiteResult& r) {
  static const char* colors[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f"};
  const double bar = 14, gap = 24, top = 30, height = 200, left = 40;
  const std::size_t nm = r.spec.methods.size();
  const double group_w = double(nm) * bar + gap;
  const double width = left + double(r.spec.presets.size()) * group_w + 160;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + height + 40 << "\">\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + height << "\" x2=\"" << width - 160 << "\" y2=\"" << top + height
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = top + height - height * t / 4.0;
    os << "<text x=\"" << left - 4 << "\" y=\"" << y + 4 << "\" font-size=\"10\" text-anchor=\"end\">" << t * 25
       << "</text>\n";
  }
  for (std::size_t pi = 0; pi < r.spec.presets.size(); ++pi) {
    const auto& p = r.spec.presets[pi];
    const double x0 = left + gap / 2 + double(pi) * group_w;
    for (std::size_t mi = 0; mi < nm; ++mi) {
      const auto v = detail::maps_of(r, p, r.spec.methods[mi]);
      if (v.empty()) continue;
      const double h = height * mean_std(v).mean;
      os << "<rect x=\"" << x0 + double(mi) * bar << "\" y=\"" << top + height - h << "\" width=\"" << bar - 2
         << "\" height=\"" << h << "\" fill=\"" << colors[mi % 5] << "\"/>\n";
    }
    os << "<text x=\"" << x0 + double(nm) * bar / 2 << "\" y=\"" << top + height + 16
       << "\" font-size=\"11\" text-anchor=\"middle\">" << p << "</text>\n";
  }
  for (std::size_t mi = 0; mi < nm; ++mi) {
    const double y = top + 14.0 * double(mi);
    os << "<rect x=\"" << width - 150 << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\"" << colors[mi % 5]
       << "\"/><text x=\"" << width - 135 << "\" y=\"" << y + 9 << "\" font-size=\"11\">"
       << to_string(r.spec.methods[mi]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Writes suite.md, suite.csv and (optionally) suite.svg into dir.
inline void write_suite(const SuiteResult& r, const std::string& dir, bool svg = true) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  detail::write_text(d / "suite.md", suite_markdown(r));
  detail::write_text(d / "suite.csv", suite_csv(r));
  if (svg) detail::write_text(d / "suite.svg", suite_svg(r));
}

}  // namespace usdaf::harness
