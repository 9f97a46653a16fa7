// Command-line front end: dataset generation, training, evaluation, suites and
// feature export.

#include <png.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "usdaf/usdaf.hpp"

namespace fs = std::filesystem;
using namespace usdaf;

namespace {

void write_png(const fs::path& path, const scene::SceneSample& s) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
    throw IoError("libpng failed on " + path.string());
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(s.width), static_cast<png_uint_32>(s.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(s.width) * 3);
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
            static_cast<png_byte>(std::lround(255.0f * s.pixel(y, x, c)));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

nlohmann::json split_stats(const scene::SceneSplit& split, double scale_factor) {
  std::array<std::size_t, 3> buckets{};
  std::map<int, std::size_t> classes;
  double area = 0.0;
  std::size_t objects = 0;
  for (std::size_t i = 0; i < split.size(); ++i)
    for (const auto& a : split.evaluation_annotations(i)) {
      ++buckets[adapt::index_of(adapt::scale_bucket_raw(a.box.area(), scale_factor))];
      ++classes[a.class_id];
      area += a.box.area();
      ++objects;
    }
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [c, n] : classes) per_class[std::to_string(c)] = n;
  auto frac = [&](std::size_t n) { return objects ? double(n) / double(objects) : 0.0; };
  return {{"domain", scene::to_string(split.domain())},
          {"split", scene::to_string(split.split())},
          {"scenes", split.size()},
          {"objects", objects},
          {"mean_box_area", objects ? area / double(objects) : 0.0},
          {"scale_fractions", {frac(buckets[0]), frac(buckets[1]), frac(buckets[2])}},
          {"class_counts", per_class},
          {"checksum", scene::checksum(split)}};
}

/// Adds one --<key> option per config field; values are applied in order after parsing.
struct Overrides {
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    const auto fields = harness::to_json(harness::ExperimentConfig{});
    for (const auto& [key, v] : fields.items()) app->add_option("--" + key, values[key], "override config field " + key);
  }

  void apply(harness::ExperimentConfig& cfg) const {
    for (const auto& [k, v] : values)
      if (!v.empty()) harness::apply_override(cfg, k, v);
  }
};

/// Relative output directories land under $USDAF_OUTPUT_ROOT when it is set.
std::string rooted(const std::string& dir) {
  const char* root = std::getenv("USDAF_OUTPUT_ROOT");
  if (!root || !*root || fs::path(dir).is_absolute()) return dir;
  return (fs::path(root) / dir).string();
}

harness::ExperimentConfig load_with_overrides(const std::string& config_path, const Overrides& ov) {
  harness::ExperimentConfig cfg = config_path.empty() ? harness::ExperimentConfig{} : harness::load_config(config_path);
  ov.apply(cfg);
  cfg.output_dir = rooted(cfg.output_dir);
  cfg.validate();
  return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(',', start);
    auto item = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!item.empty()) out.push_back(item);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

/// Config and seed of a finished run directory.
std::pair<harness::ExperimentConfig, std::uint64_t> load_run(const fs::path& dir) {
  auto cfg = harness::load_config((dir / "config.json").string());
  if (cfg.seeds.size() != 1) throw ConfigError("run config must hold exactly one seed");
  return {cfg, cfg.seeds.front()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scale-aware universal domain adaptive detection on synthetic shape scenes"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "generate a dataset and print its statistics");
  std::string gen_manifest, gen_preset = "closed", gen_out;
  int dump_images = 0;
  gen->add_option("--manifest", gen_manifest, "manifest file (JSON)");
  gen->add_option("--preset", gen_preset, "scenario preset used when no manifest is given");
  gen->add_option("--out", gen_out, "write stats.json (and dumped images) here");
  gen->add_option("--dump-images", dump_images, "write the first N scenes of every split as PNG")->check(CLI::NonNegativeNumber);

  // train
  auto* tr = app.add_subcommand("train", "train one method for every configured seed");
  std::string tr_config;
  Overrides tr_ov;
  tr->add_option("--config", tr_config, "experiment config file (JSON)");
  tr_ov.attach(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint from a run directory");
  std::string ev_run, ev_out;
  ev->add_option("--run", ev_run, "run directory written by train")->required();
  ev->add_option("--out", ev_out, "write metrics JSON here");

  // suite
  auto* su = app.add_subcommand("suite", "presets x methods x seeds comparison tables");
  std::string su_config, su_presets = "closed,partial,open-0.75,open-0.5,open-0.25",
                         su_methods = "source_only,daf,usdaf,usdaf_nofm,usdaf_nosaa";
  int su_jobs = 1;
  bool su_no_svg = false;
  Overrides su_ov;
  su->add_option("--config", su_config, "base experiment config file (JSON)");
  su->add_option("--presets", su_presets, "comma-separated preset list");
  su->add_option("--methods", su_methods, "comma-separated method list");
  su->add_option("--jobs", su_jobs, "parallel runs")->check(CLI::PositiveNumber);
  su->add_flag("--no-svg", su_no_svg, "skip the SVG chart");
  su_ov.attach(su);

  // export-features
  auto* ex = app.add_subcommand("export-features", "write per-instance region features as CSV");
  std::string ex_run, ex_out, ex_split = "test";
  ex->add_option("--run", ex_run, "run directory written by train")->required();
  ex->add_option("--out", ex_out, "CSV path")->required();
  ex->add_option("--split", ex_split, "train or test")->check(CLI::IsMember({"train", "test"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto m = gen_manifest.empty() ? harness::preset_manifest(gen_preset) : scene::load_manifest(gen_manifest);
      const auto ds = scene::generate_dataset(m);
      nlohmann::json stats = {{"manifest", scene::to_json(ds.manifest)},
                              {"checksum", scene::checksum(ds)},
                              {"splits",
                               {split_stats(ds.source_train, m.scale_factor), split_stats(ds.target_train, m.scale_factor),
                                split_stats(ds.source_test, m.scale_factor), split_stats(ds.target_test, m.scale_factor)}}};
      std::cout << stats.dump(2) << '\n';
      if (!gen_out.empty()) {
        const fs::path out = rooted(gen_out);
        fs::create_directories(out);
        std::ofstream(out / "stats.json") << stats.dump(2) << '\n';
        for (const auto* split : {&ds.source_train, &ds.target_train, &ds.source_test, &ds.target_test}) {
          const auto n = std::min<std::size_t>(split->size(), static_cast<std::size_t>(dump_images));
          for (std::size_t i = 0; i < n; ++i) {
            write_png(out / (scene::to_string(split->domain()) + "_" + scene::to_string(split->split()) + "_" +
                             std::to_string(i) + ".png"),
                      split->evaluation_sample(i));
          }
        }
      }
    } else if (*tr) {
      const auto cfg = load_with_overrides(tr_config, tr_ov);
      const auto data = scene::generate_dataset(harness::resolve_manifest(cfg));
      for (auto seed : cfg.seeds) {
        const auto rec = harness::train(cfg, seed, data);
        std::cout << eval::to_markdown(rec.metrics) << "checkpoint: " << rec.checkpoint_path << "\n\n";
      }
    } else if (*ev) {
      const auto [cfg, seed] = load_run(ev_run);
      const auto data = scene::generate_dataset(harness::resolve_manifest(cfg));
      const auto report = harness::evaluate_checkpoint(cfg, seed, (fs::path(ev_run) / "checkpoint.bin").string(), data);
      std::cout << eval::to_markdown(report);
      if (!ev_out.empty()) std::ofstream(ev_out) << eval::to_json(report).dump(2) << '\n';
    } else if (*su) {
      harness::SuiteSpec spec;
      spec.base = load_with_overrides(su_config, su_ov);
      spec.presets = split_list(su_presets);
      for (const auto& m : split_list(su_methods)) spec.methods.push_back(harness::method_from_string(m));
      spec.seeds = spec.base.seeds;
      spec.jobs = su_jobs;
      const auto result = harness::run_suite(spec, [](const std::string& line) { std::cerr << line << '\n'; });
      harness::write_suite(result, spec.base.output_dir, !su_no_svg);
      std::cout << harness::suite_markdown(result);
    } else if (*ex) {
      const auto [cfg, seed] = load_run(ex_run);
      const auto data = scene::generate_dataset(harness::resolve_manifest(cfg));
      harness::Trainer t(cfg, seed, data);
      det::load_checkpoint((fs::path(ex_run) / "checkpoint.bin").string(), t.parameters());
      const bool test = ex_split == "test";
      const auto rows = eval::export_instance_features(
          t.detector(), {test ? &data.source_test : &data.source_train, test ? &data.target_test : &data.target_train},
          data.manifest.label_space, ex_out, data.manifest.scale_factor);
      std::cout << rows << " instances written to " << ex_out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
