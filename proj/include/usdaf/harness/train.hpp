#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "usdaf/adapt/diagnostics.hpp"
#include "usdaf/adapt/heads.hpp"
#include "usdaf/adapt/losses.hpp"
#include "usdaf/core/optim.hpp"
#include "usdaf/detect/checkpoint.hpp"
#include "usdaf/detect/loss.hpp"
#include "usdaf/detect/model.hpp"
#include "usdaf/eval/report.hpp"
#include "usdaf/harness/batch.hpp"
#include "usdaf/harness/config.hpp"
#include "usdaf/harness/presets.hpp"

namespace usdaf::harness {

/// Losses of one optimizer step. Adaptation terms are absent (zero, with zero
/// counts) for SourceOnly.
struct StepLosses {
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double detection = 0.0;
  double image = 0.0;
  double instance = 0.0;
  std::size_t image_kept = 0, image_total = 0;
  std::size_t instance_kept = 0, instance_total = 0;
  bool adapted = false;
};

struct RunRecord {
  ExperimentConfig config;  // single-seed config of this run
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<StepLosses> loss_curve;  // every log_every-th step plus the last
  std::string checkpoint_path;        // empty when nothing was written
  eval::MetricsReport metrics;
  std::size_t target_annotation_reads = 0;
};

/// Directory name of one run inside an output root.
inline std::string run_name(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.preset + "_" + to_string(cfg.method) + "_seed" + std::to_string(seed);
}

/// Seeded model (detector and, for adaptive methods, discriminator heads) plus
/// its optimizer, advanced one step at a time.
class Trainer {
 public:
  Trainer(ExperimentConfig cfg, std::uint64_t seed, const scene::Dataset& data)
      : cfg_(std::move(cfg)),
        seed_(seed),
        data_(data),
        traits_(traits_of(cfg_.method)),
        rng_(derive_seed(seed, 0x30de1)),
        detector_(det::DetectorConfig{}, data.manifest.label_space.source_classes, rng_),
        batches_(data.source_train, data.target_train, derive_seed(seed, 0xba7c4)) {
    cfg_.validate();
    if (traits_.adapt) {
      heads_ = std::make_unique<adapt::DiscriminatorHeads>(adapt::DiscriminatorConfig{traits_.entries, 32, 64},
                                                           detector_.feature_channels(), detector_.feature_grid(),
                                                           detector_.roi_feature_size(), rng_);
    }
    params_.append(detector_.parameters());
    if (heads_) params_.append(heads_->parameters());
    tensors_ = params_.tensors();
    optim_.learning_rate = cfg_.lr;
    optim_.momentum = cfg_.momentum;
    optim_.weight_decay = cfg_.weight_decay;
  }

  const ExperimentConfig& config() const { return cfg_; }
  const det::Detector& detector() const { return detector_; }
  const adapt::DiscriminatorHeads* heads() const { return heads_.get(); }
  const ad::ParameterSet& parameters() const { return params_; }
  int steps_done() const { return step_; }
  const Batch& last_batch() const { return last_batch_; }

  /// One SGD step on the next (source, target) pair.
  StepLosses step() {
    last_batch_ = batches_.next();
    const Batch b = last_batch_;
    StepLosses out;
    out.step = step_;
    out.lr = cfg_.learning_rate_at(step_);
    optim_.learning_rate = out.lr;

    const auto anns = data_.source_train.training_annotations(b.source);
    std::vector<det::Box> gt_boxes;
    for (const auto& a : anns) gt_boxes.push_back(a.box);
    const double sf = data_.manifest.scale_factor;
    const int top_k = detector_.config().top_k;

    ad::Tape tape;
    ad::Tape::Scope scope(tape);
    const auto fs = detector_.backbone_forward(detector_.image_tensor(data_.source_train.image(b.source)));
    const auto rpn_s = detector_.rpn_forward(fs);
    const auto props_s = detector_.propose(rpn_s, top_k);
    const auto det_loss = det::detection_loss(detector_, fs, rpn_s, props_s, {scene::Domain::Source, anns});
    ad::Tensor total = det_loss.total;
    out.detection = det_loss.total.item();

    if (traits_.adapt) {
      out.adapted = true;
      const auto ft = detector_.backbone_forward(detector_.image_tensor(data_.target_train.image(b.target)));
      std::vector<det::Box> props_t;
      {
        // Target proposals only supply boxes; no gradient flows through them.
        const auto rpn_t = detector_.rpn_forward(ad::detach(ft));
        for (const auto& p : detector_.propose(rpn_t, top_k)) props_t.push_back(p.box);
      }
      std::vector<det::Box> rois_s;
      for (const auto& p : props_s) rois_s.push_back(p.box);

      const std::size_t E = traits_.entries, G = detector_.feature_grid();
      const double stride = detector_.config().stride;
      const auto filter = cfg_.filter();
      const adapt::ImageSide img_s{fs, adapt::image_label_map(scene::Domain::Source, gt_boxes, G, stride, E, sf)};
      const adapt::ImageSide img_t{ft, adapt::image_label_map(scene::Domain::Target, props_t, G, stride, E, sf)};
      const auto img = adapt::image_level_loss(img_s, img_t, *heads_, filter, cfg_.eta);
      const adapt::InstanceSide ins_s{fs, rois_s, adapt::instance_labels(scene::Domain::Source, rois_s, gt_boxes, E, sf)};
      const adapt::InstanceSide ins_t{ft, props_t, adapt::instance_labels(scene::Domain::Target, props_t, {}, E, sf)};
      const auto ins = adapt::instance_level_loss(detector_, ins_s, ins_t, *heads_, filter, cfg_.eta);
      total = adapt::total_objective(total, adapt::unida_loss(img.loss, ins.loss));
      out.image = img.loss.item();
      out.instance = ins.loss.item();
      out.image_kept = img.kept;
      out.image_total = img.total;
      out.instance_kept = ins.kept;
      out.instance_total = ins.total;
    }
    out.total = total.item();
    if (!std::isfinite(out.total)) throw NumericError("non-finite total loss");

    tape.backward(total);
    for (auto& p : tensors_)
      if (!p.has_grad()) p.zero_grad();
    ad::sgd_step(tensors_, optim_);
    ++step_;
    return out;
  }

 private:
  ExperimentConfig cfg_;
  std::uint64_t seed_;
  const scene::Dataset& data_;
  MethodTraits traits_;
  Rng rng_;
  det::Detector detector_;
  std::unique_ptr<adapt::DiscriminatorHeads> heads_;
  ad::ParameterSet params_;
  std::vector<ad::Tensor> tensors_;
  ad::OptimizerState optim_;
  BatchStream batches_;
  Batch last_batch_;
  int step_ = 0;
};

/// Evaluates a trained model on the target test split, with group means for
/// adaptive methods.
inline eval::MetricsReport evaluate_run(const Trainer& t, const scene::Dataset& data) {
  const auto& labels = data.manifest.label_space;
  auto report = eval::evaluate(t.detector(), data.target_test, labels, data.manifest.scale_factor);
  if (t.heads()) {
    report.group_means = adapt::discriminator_group_means(t.detector(), *t.heads(), data.source_test, data.target_test,
                                                          labels, static_cast<std::size_t>(t.config().diagnostic_images));
  }
  return report;
}

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("failed writing " + p.string());
}

inline std::string loss_curve_csv(const std::vector<StepLosses>& curve) {
  std::string s = "step,lr,total,detection,image,instance,image_kept,image_total,instance_kept,instance_total\n";
  for (const auto& l : curve) {
    s += std::to_string(l.step) + ',' + eval::format_double(l.lr) + ',' + eval::format_double(l.total) + ',' +
         eval::format_double(l.detection) + ',' + eval::format_double(l.image) + ',' +
         eval::format_double(l.instance) + ',' + std::to_string(l.image_kept) + ',' + std::to_string(l.image_total) +
         ',' + std::to_string(l.instance_kept) + ',' + std::to_string(l.instance_total) + '\n';
  }
  return s;
}

}  // namespace detail

struct TrainOptions {
  bool write_files = true;
  std::string preset_label;  // reported preset name; defaults to cfg.preset
};

/// Full training run of one seed: total_steps SGD steps, evaluation, and
/// (optionally) config, loss curve, checkpoint and metrics under
/// output_dir/<run name>/. A non-finite loss aborts the run after dumping the
/// offending batch to failure.json.
inline RunRecord train(ExperimentConfig cfg, std::uint64_t seed, const scene::Dataset& data,
                       const TrainOptions& opts = {}) {
  cfg.seeds = {seed};
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t target_reads_before = data.target_train.hidden_read_attempts();
  const std::filesystem::path dir = std::filesystem::path(cfg.output_dir) / run_name(cfg, seed);
  if (opts.write_files) std::filesystem::create_directories(dir);

  RunRecord rec;
  rec.config = cfg;
  rec.config_hash = config_hash(cfg);
  rec.seed = seed;
  Trainer trainer(cfg, seed, data);
  StepLosses last;
  for (int s = 0; s < cfg.total_steps; ++s) {
    try {
      last = trainer.step();
    } catch (const NumericError& e) {
      const auto& b = trainer.last_batch();
      nlohmann::json dump = {{"step", s},
                             {"seed", seed},
                             {"config_hash", rec.config_hash},
                             {"source_index", b.source},
                             {"target_index", b.target},
                             {"lr", cfg.learning_rate_at(s)},
                             {"error", e.what()}};
      nlohmann::json anns = nlohmann::json::array();
      for (const auto& a : data.source_train.training_annotations(b.source)) {
        anns.push_back({{"class_id", a.class_id}, {"box", {a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max}}});
      }
      dump["source_annotations"] = anns;
      if (!rec.loss_curve.empty()) dump["last_logged_total"] = rec.loss_curve.back().total;
      std::filesystem::create_directories(dir);
      detail::write_text(dir / "failure.json", dump.dump(2));
      throw NumericError("training diverged at step " + std::to_string(s) + " (" + e.what() + "); batch dumped to " +
                         (dir / "failure.json").string());
    }
    if (s % cfg.log_every == 0 || s + 1 == cfg.total_steps) rec.loss_curve.push_back(last);
  }

  rec.metrics = evaluate_run(trainer, data);
  rec.metrics.meta.method = to_string(cfg.method);
  rec.metrics.meta.preset = opts.preset_label.empty() ? cfg.preset : opts.preset_label;
  rec.metrics.meta.config_hash = rec.config_hash;
  rec.metrics.meta.seed = seed;
  rec.target_annotation_reads = data.target_train.hidden_read_attempts() - target_reads_before;
  rec.metrics.meta.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (opts.write_files) {
    detail::write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
    detail::write_text(dir / "loss_curve.csv", detail::loss_curve_csv(rec.loss_curve));
    rec.checkpoint_path = (dir / "checkpoint.bin").string();
    det::save_checkpoint(rec.checkpoint_path, trainer.parameters());
    detail::write_text(dir / "metrics.json", eval::to_json(rec.metrics).dump(2) + "\n");
    detail::write_text(dir / "metrics.md", eval::to_markdown(rec.metrics));
  }
  return rec;
}

/// Rebuilds a model from a checkpoint written by train() and evaluates it.
inline eval::MetricsReport evaluate_checkpoint(const ExperimentConfig& cfg, std::uint64_t seed,
                                               const std::string& checkpoint, const scene::Dataset& data) {
  auto run_cfg = cfg;
  run_cfg.seeds = {seed};
  Trainer t(run_cfg, seed, data);
  det::load_checkpoint(checkpoint, t.parameters());
  auto report = evaluate_run(t, data);
  report.meta.method = to_string(cfg.method);
  report.meta.preset = cfg.preset;
  report.meta.config_hash = config_hash(run_cfg);
  report.meta.seed = seed;
  return report;
}

}  // namespace usdaf::harness
