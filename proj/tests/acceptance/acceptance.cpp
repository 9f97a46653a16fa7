// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit on any
// failure. A1-A4 run the oracle-backed unit suites under a time budget; A5-A8
// train the method matrix on the open-set and partial-set presets.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "usdaf/harness/suite.hpp"

using namespace usdaf;
using namespace usdaf::harness;

namespace {

constexpr double kTie = 0.005;  // 0.5 mAP points
constexpr std::uint64_t kSeeds[] = {1, 2, 3};

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const char* id, const char* name, const Outcome& o) {
  std::cout << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << name << "  " << o.detail << std::endl;
  if (!o.pass) ++failures;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

/// Runs gtest suites of the sibling unit-test binaries and checks the budget.
/// A filter that selects no test counts as a failure.
Outcome run_suites(const std::vector<std::pair<std::string, std::string>>& runs, double budget_seconds) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o{true, ""};
  int total = 0;
  for (const auto& [binary, filter] : runs) {
    const auto exe = std::filesystem::path(USDAF_TEST_BIN_DIR) / binary;
    const std::string cmd = "\"" + exe.string() + "\" --gtest_brief=1 --gtest_filter='" + filter + "' 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw Error("cannot run " + exe.string());
    std::string output;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, pipe)) output += buf;
    const int rc = pclose(pipe);
    int ran = 0;
    if (const auto pos = output.find("[==========] "); pos != std::string::npos) ran = std::atoi(output.c_str() + pos + 13);
    total += ran;
    if (rc != 0 || ran == 0) {
      o.pass = false;
      o.detail += binary + " [" + filter + "] " + (ran == 0 ? "selected no tests" : "failed") + "; ";
    }
  }
  const double t = seconds_since(start);
  if (t > budget_seconds) {
    o.pass = false;
    o.detail += "over budget; ";
  }
  o.detail += std::to_string(total) + " tests, runtime " + fmt(t) + " s (budget " + fmt(budget_seconds) + " s)";
  return o;
}

struct Run {
  eval::MetricsReport report;
  std::size_t target_reads = 0;
};

using Matrix = std::map<std::pair<Method, std::uint64_t>, Run>;

ExperimentConfig base_config(const std::string& preset) {
  ExperimentConfig c;
  c.preset = preset;
  return c;
}

Matrix train_matrix(const std::string& preset, const std::vector<Method>& methods) {
  const auto data = scene::generate_dataset(preset_manifest(preset));
  TrainOptions opts;
  opts.write_files = false;
  Matrix out;
  for (auto m : methods)
    for (auto s : kSeeds) {
      auto cfg = base_config(preset);
      cfg.method = m;
      auto rec = train(cfg, s, data, opts);
      std::cerr << "  " << run_name(cfg, s) << " mAP " << fmt(rec.metrics.map) << " (" << fmt(rec.metrics.meta.wall_time_seconds)
                << " s)" << std::endl;
      out[{m, s}] = {std::move(rec.metrics), rec.target_annotation_reads};
    }
  if (data.hidden_read_attempts() != 0) throw Error("hidden target annotations were read");
  return out;
}

std::vector<double> maps(const Matrix& mx, Method m) {
  std::vector<double> v;
  for (auto s : kSeeds) v.push_back(mx.at({m, s}).report.map);
  return v;
}

std::optional<double> bucket_median(const Matrix& mx, Method m, std::size_t b) {
  std::vector<double> v;
  for (auto s : kSeeds)
    if (const auto& x = mx.at({m, s}).report.per_scale[b]) v.push_back(*x);
  if (v.empty()) return std::nullopt;
  return median(v);
}

}  // namespace

int main() {
  const auto start = std::chrono::steady_clock::now();

  report("A1", "gradient correctness",
         run_suites({{"test_core", "GradCheck.*:GradReverse.*"},
                     {"test_detect", "DetectionLoss.BackboneGradientsMatchFiniteDifferences"},
                     {"test_adapt", "TotalObjective.*"}},
                    120));
  report("A2", "loss oracles and filter masking",
         run_suites({{"test_core", "LossOracle.*:Losses.*:BinaryCrossEntropy.*"},
                     {"test_detect", "DetectionLoss.*"},
                     {"test_adapt", "MultiLabelLoss.*:Filter.*:ImageLevelLoss.*:InstanceLevelLoss.*"}},
                    60));
  report("A3", "ablation identities", run_suites({{"test_adapt", "Ablation.*"}}, 120));
  report("A4", "evaluation oracles",
         run_suites({{"test_detect", "Nms.*:Iou.*"},
                     {"test_eval", "Matching.*:AveragePrecision.*"},
                     {"test_adapt", "MultiLabel.*"}},
                    60));

  const auto training_start = std::chrono::steady_clock::now();
  const std::vector<Method> all(std::begin(kAllMethods), std::end(kAllMethods));
  std::cerr << "training open-0.5" << std::endl;
  const auto open = train_matrix("open-0.5", all);
  std::cerr << "training partial" << std::endl;
  const auto partial = train_matrix("partial", {Method::SourceOnly, Method::DAF, Method::USDAF});
  const double training_seconds = seconds_since(training_start);

  {
    const double so = median(maps(open, Method::SourceOnly)), daf = median(maps(open, Method::DAF)),
                 us = median(maps(open, Method::USDAF));
    Outcome o;
    o.pass = us > daf && us - daf >= 0.02 && daf >= so - kTie && training_seconds < 1800;
    o.detail = "median mAP usdaf " + fmt(us) + " daf " + fmt(daf) + " source_only " + fmt(so) + "; training " +
               fmt(training_seconds) + " s (budget 1800 s)";
    report("A5", "adaptation helps (open-0.5)", o);
  }
  {
    int daf_below = 0, usdaf_at_least = 0, ordering = 0;
    std::string per_seed;
    for (auto s : kSeeds) {
      const double so = partial.at({Method::SourceOnly, s}).report.map, daf = partial.at({Method::DAF, s}).report.map,
                   us = partial.at({Method::USDAF, s}).report.map;
      daf_below += daf < so;
      usdaf_at_least += us >= so;
      const auto& gm = open.at({Method::USDAF, s}).report.group_means;
      const bool holds = gm && gm->ordering_holds().value_or(false);
      ordering += holds;
      per_seed += " seed" + std::to_string(s) + " so/daf/usdaf " + fmt(so) + "/" + fmt(daf) + "/" + fmt(us);
      if (gm && gm->source_private && gm->source_common && gm->target_common && gm->target_private) {
        per_seed += " means " + fmt(*gm->source_private) + "<" + fmt(*gm->source_common) + "<" +
                    fmt(*gm->target_common) + "<" + fmt(*gm->target_private) + (holds ? " ok;" : " no;");
      }
    }
    Outcome o;
    o.pass = daf_below >= 1 && usdaf_at_least == 3 && ordering >= 2;
    o.detail = "partial: daf<so on " + std::to_string(daf_below) + "/3, usdaf>=so on " +
               std::to_string(usdaf_at_least) + "/3; open-0.5 ordering on " + std::to_string(ordering) + "/3;" +
               per_seed;
    report("A6", "negative transfer and discriminator ordering", o);
  }
  {
    const double us = median(maps(open, Method::USDAF)), nofm = median(maps(open, Method::USDAF_noFM)),
                 nosaa = median(maps(open, Method::USDAF_noSAA));
    int buckets = 0;
    std::string scales;
    static const char* names[] = {"small", "medium", "large"};
    for (std::size_t b = 0; b < 3; ++b) {
      const auto u = bucket_median(open, Method::USDAF, b), d = bucket_median(open, Method::DAF, b);
      if (!u || !d) {
        scales += std::string(" ") + names[b] + " absent";
        continue;
      }
      buckets += *u >= *d - kTie;
      scales += std::string(" ") + names[b] + " " + fmt(*u) + "/" + fmt(*d);
    }
    Outcome o;
    o.pass = us >= nofm - kTie && us >= nosaa - kTie && buckets >= 2;
    o.detail = "median mAP usdaf " + fmt(us) + " nofm " + fmt(nofm) + " nosaa " + fmt(nosaa) +
               "; usdaf>=daf in " + std::to_string(buckets) + "/3 buckets (usdaf/daf)" + scales;
    report("A7", "ablations and per-scale gains", o);
  }
  {
    const auto data = scene::generate_dataset(preset_manifest("open-0.5"));
    auto cfg = base_config("open-0.5");
    cfg.method = Method::USDAF;
    TrainOptions opts;
    opts.write_files = false;
    const auto again = train(cfg, 1, data, opts);
    const auto a = eval::to_json(open.at({Method::USDAF, 1}).report, false).dump();
    const auto b = eval::to_json(again.metrics, false).dump();
    std::size_t reads = again.target_annotation_reads;
    for (const auto* mx : {&open, &partial})
      for (const auto& [key, run] : *mx) reads += run.target_reads;
    Outcome o;
    o.pass = a == b && reads == 0;
    o.detail = std::string("repeat run ") + (a == b ? "bit-identical" : "differs") +
               "; target annotation reads " + std::to_string(reads);
    report("A8", "reproducibility", o);
  }

  std::cout << (failures ? "FAILED " : "ALL PASSED ") << "(" << failures << " failing, total " << fmt(seconds_since(start))
            << " s)" << std::endl;
  return failures ? 1 : 0;
}
