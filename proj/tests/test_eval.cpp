#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/oracles.hpp"
#include "usdaf/eval/report.hpp"

using namespace usdaf;
using namespace usdaf::eval;
using det::Box;

namespace {

Box jitter(const Box& b, Rng& rng, double amount) {
  Box j{b.x_min + uniform(rng, -amount, amount), b.y_min + uniform(rng, -amount, amount),
        b.x_max + uniform(rng, -amount, amount), b.y_max + uniform(rng, -amount, amount)};
  j.x_max = std::max(j.x_max, j.x_min + 1.0);
  j.y_max = std::max(j.y_max, j.y_min + 1.0);
  return j;
}

Box random_box(Rng& rng, double min_side = 3, double max_side = 40) {
  const double w = uniform(rng, min_side, max_side), h = uniform(rng, min_side, max_side);
  const double x = uniform(rng, 0, 64 - w), y = uniform(rng, 0, 64 - h);
  return {x, y, x + w, y + h};
}

/// Images whose detections are jittered GTs, duplicates and random false
/// positives, over classes 0..2.
std::vector<ImageEval> random_images(Rng& rng, int n) {
  std::vector<ImageEval> out;
  for (int i = 0; i < n; ++i) {
    ImageEval img;
    const int g = uniform_int(rng, 0, 3);
    for (int k = 0; k < g; ++k) img.ground_truth.push_back({uniform_int(rng, 0, 2), random_box(rng)});
    for (const auto& a : img.ground_truth) {
      if (uniform01(rng) < 0.8) img.detections.push_back({jitter(a.box, rng, 2.0), a.class_id, uniform01(rng)});
      if (uniform01(rng) < 0.2) img.detections.push_back({jitter(a.box, rng, 3.0), a.class_id, uniform01(rng)});
    }
    const int fp = uniform_int(rng, 0, 2);
    for (int k = 0; k < fp; ++k) img.detections.push_back({random_box(rng), uniform_int(rng, 0, 2), uniform01(rng)});
    out.push_back(std::move(img));
  }
  return out;
}

std::optional<double> oracle_ap(const std::vector<bool>& tp, const std::vector<double>& conf, std::size_t num_gt) {
  if (num_gt == 0) return tp.empty() ? std::nullopt : std::optional<double>(0.0);
  if (tp.empty()) return 0.0;
  return oracle::average_precision(tp, conf, num_gt);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Matching, HandExamples) {
  const std::vector<Box> gt{{0, 0, 10, 10}};
  const std::vector<Box> one{{0, 0, 10, 10}};
  const std::vector<double> c1{0.9};
  auto r = match_detections(one, c1, gt);
  EXPECT_TRUE(r.true_positive[0]);
  EXPECT_EQ(r.matched_gt[0], 0);
  EXPECT_TRUE(r.gt_matched[0]);

  const std::vector<Box> two{{0, 0, 10, 10}, {0, 0, 10, 9}};
  const std::vector<double> c2{0.4, 0.8};
  r = match_detections(two, c2, gt);
  EXPECT_FALSE(r.true_positive[0]);
  EXPECT_TRUE(r.true_positive[1]);

  const std::vector<Box> far{{30, 30, 40, 40}};
  EXPECT_FALSE(match_detections(far, c1, gt).true_positive[0]);
}

TEST(Matching, EqualsExhaustiveReference) {
  Rng rng(41);
  for (int t = 0; t < 200; ++t) {
    std::vector<Box> gts, dets;
    std::vector<oracle::B> og, od;
    std::vector<double> conf;
    for (int g = 0; g < 4; ++g) gts.push_back(random_box(rng, 5, 20));
    for (int d = 0; d < 6; ++d) {
      dets.push_back(d < 4 ? jitter(gts[static_cast<std::size_t>(d)], rng, 4.0) : jitter(gts[0], rng, 3.0));
      conf.push_back(std::floor(uniform01(rng) * 5) / 5);  // ties on purpose
    }
    for (const auto& b : gts) og.push_back(oracle::to_b(b));
    for (const auto& b : dets) od.push_back(oracle::to_b(b));
    const auto r = match_detections(dets, conf, gts);
    EXPECT_EQ(r.matched_gt, oracle::match(od, conf, og, 0.5)) << "trial " << t;
    std::size_t tps = 0;
    for (bool b : r.true_positive) tps += b;
    EXPECT_LE(tps, gts.size());
  }
}

TEST(AveragePrecision, HandExamples) {
  const std::vector<double> conf{0.9, 0.8, 0.7};
  EXPECT_DOUBLE_EQ(*average_precision({true, true, true}, conf, 3), 1.0);
  EXPECT_DOUBLE_EQ(*average_precision({}, std::vector<double>{}, 4), 0.0);
  EXPECT_FALSE(average_precision({}, std::vector<double>{}, 0).has_value());
  EXPECT_DOUBLE_EQ(*average_precision({false}, std::vector<double>{0.5}, 0), 0.0);
  // TP, FP, TP over 2 GT: 0.5 * 1 + 0.5 * 2/3
  EXPECT_NEAR(*average_precision({true, false, true}, conf, 2), 0.5 + 1.0 / 3.0, 1e-15);
  EXPECT_THROW(average_precision({true}, conf, 1), Error);
  EXPECT_THROW(average_precision({true, true, false}, conf, 1), Error);
}

TEST(AveragePrecision, MatchesBruteForceIntegration) {
  Rng rng(42);
  for (int t = 0; t < 500; ++t) {
    const int n = uniform_int(rng, 1, 8);
    std::vector<bool> tp;
    std::vector<double> conf;
    std::size_t hits = 0;
    for (int i = 0; i < n; ++i) {
      tp.push_back(uniform01(rng) < 0.5);
      hits += tp.back();
      conf.push_back(std::floor(uniform01(rng) * 6) / 6);
    }
    const std::size_t num_gt = hits + static_cast<std::size_t>(uniform_int(rng, hits ? 0 : 1, 3));
    EXPECT_NEAR(*average_precision(tp, conf, num_gt), oracle::average_precision(tp, conf, num_gt), 1e-12)
        << "trial " << t;
  }
}

TEST(AveragePrecision, MonotoneUnderTopTpAndBottomFp) {
  Rng rng(43);
  for (int t = 0; t < 200; ++t) {
    std::vector<bool> tp;
    std::vector<double> conf;
    for (int i = 0; i < 6; ++i) {
      tp.push_back(uniform01(rng) < 0.5);
      conf.push_back(uniform(rng, 0.1, 0.9));
    }
    const double base = *average_precision(tp, conf, 8);
    auto tp2 = tp;
    auto c2 = conf;
    tp2.push_back(true);
    c2.push_back(0.95);
    EXPECT_GE(*average_precision(tp2, c2, 8), base);
    auto tp3 = tp;
    auto c3 = conf;
    tp3.push_back(false);
    c3.push_back(0.05);
    EXPECT_LE(*average_precision(tp3, c3, 8), base + 1e-15);
  }
}

TEST(AveragePrecision, InvariantToInputOrder) {
  Rng rng(44);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::pair<bool, double>> items;
    for (int i = 0; i < 7; ++i) items.push_back({uniform01(rng) < 0.6, uniform01(rng)});
    auto ap_of = [](const std::vector<std::pair<bool, double>>& v) {
      std::vector<bool> tp;
      std::vector<double> c;
      for (auto [a, b] : v) tp.push_back(a), c.push_back(b);
      return *average_precision(tp, c, 7);
    };
    const double a = ap_of(items);
    std::shuffle(items.begin(), items.end(), rng);
    EXPECT_DOUBLE_EQ(ap_of(items), a);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(MeanAp, ArithmeticMeanOverCommonClasses) {
  EXPECT_DOUBLE_EQ(mean_ap({{3, 0.7}}, {3}), 0.7);
  EXPECT_NEAR(mean_ap({{0, 0.2}, {1, 0.4}, {2, 0.6}, {5, 1.0}}, {0, 1, 2}), 0.4, 1e-15);
  EXPECT_DOUBLE_EQ(mean_ap({{0, 0.2}, {1, std::nullopt}}, {0, 1}), 0.2);
  EXPECT_THROW(mean_ap({{0, 0.2}}, {}), ConfigError);
}

TEST(MeanAp, PerClassPoolingAndCommonRestriction) {
  scene::LabelSpaceConfig labels = scene::make_label_space({0, 1, 2, 3}, {0, 1, 2}, {1, 2, 3});
  ImageEval img;
  img.ground_truth = {{1, {0, 0, 10, 10}}, {3, {20, 20, 30, 30}}, {2, {40, 40, 50, 50}}};
  img.detections = {{{0, 0, 10, 10}, 1, 0.9}, {{20, 20, 30, 30}, 0, 0.8}, {{40, 40, 50, 50}, 2, 0.7}};
  const std::vector<ImageEval> images{img};
  const auto common = restrict_to_common(images, labels);
  EXPECT_EQ(common[0].ground_truth.size(), 2u);
  EXPECT_EQ(common[0].detections.size(), 2u);
  const auto aps = per_class_ap(common, labels.common);
  EXPECT_DOUBLE_EQ(*aps.at(1), 1.0);
  EXPECT_DOUBLE_EQ(*aps.at(2), 1.0);
  EXPECT_DOUBLE_EQ(mean_ap(aps, labels.common), 1.0);
}

TEST(NegativeTransfer, Gains) {
  const ClassAps base{{0, 0.5}, {1, 0.4}, {2, std::nullopt}};
  for (const auto& g : negative_transfer_report(base, base)) {
    EXPECT_EQ(g.gain, 0.0);
    EXPECT_FALSE(g.negative);
  }
  const ClassAps better{{0, 0.6}, {1, 0.45}, {2, 0.1}};
  for (const auto& g : negative_transfer_report(better, base)) EXPECT_FALSE(g.negative);
  const ClassAps mixed{{0, 0.6}, {1, 0.3}, {2, 0.1}};
  const auto r = negative_transfer_report(mixed, base);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_FALSE(r[0].negative);
  EXPECT_TRUE(r[1].negative);
  EXPECT_EQ(r[1].class_id, 1);
  EXPECT_NEAR(r[1].gain, -0.1, 1e-15);
  EXPECT_THROW(negative_transfer_report({{0, 0.1}}, base), ConfigError);
  EXPECT_THROW(negative_transfer_report({{0, 0.1}, {1, 0.1}, {7, 0.1}}, base), ConfigError);
}

TEST(PerScale, AbsentBucketsAndPerfectDetector) {
  ImageEval img;
  img.ground_truth = {{0, {0, 0, 5, 5}}, {1, {10, 10, 16, 16}}};
  img.detections = {{{0, 0, 5, 5}, 0, 0.9}, {{10, 10, 16, 16}, 1, 0.8}};
  const auto s = per_scale_map(std::vector<ImageEval>{img}, {0, 1});
  ASSERT_TRUE(s[0].has_value());
  EXPECT_DOUBLE_EQ(*s[0], 1.0);
  EXPECT_FALSE(s[1].has_value());
  EXPECT_FALSE(s[2].has_value());

  ImageEval all;
  all.ground_truth = {{0, {0, 0, 5, 5}}, {1, {10, 10, 30, 30}}, {0, {20, 0, 60, 40}}};
  for (const auto& g : all.ground_truth) all.detections.push_back({g.box, g.class_id, 0.5});
  const auto p = per_scale_map(std::vector<ImageEval>{all}, {0, 1});
  for (const auto& b : p) {
    ASSERT_TRUE(b.has_value());
    EXPECT_DOUBLE_EQ(*b, 1.0);
  }
}

TEST(PerScale, MatchesPerBucketOracle) {
  Rng rng(45);
  const std::vector<int> classes{0, 1, 2};
  auto bucket = [](const Box& b) { return adapt::index_of(adapt::scale_bucket(b.area() * 9.0)); };
  for (int t = 0; t < 30; ++t) {
    const auto images = random_images(rng, 12);
    const auto got = per_scale_map(images, classes);
    // independent: match each (image, class) with the reference matcher, then pool per bucket
    std::array<std::map<int, std::vector<bool>>, 3> tp;
    std::array<std::map<int, std::vector<double>>, 3> conf;
    std::array<std::map<int, std::size_t>, 3> ngt;
    std::array<std::size_t, 3> bucket_gt{};
    for (const auto& img : images) {
      for (const auto& g : img.ground_truth) ++ngt[bucket(g.box)][g.class_id], ++bucket_gt[bucket(g.box)];
      for (int c : classes) {
        std::vector<oracle::B> od, og;
        std::vector<double> cc;
        std::vector<Box> db, gb;
        for (const auto& d : img.detections)
          if (d.class_id == c) od.push_back(oracle::to_b(d.box)), cc.push_back(d.confidence), db.push_back(d.box);
        for (const auto& g : img.ground_truth)
          if (g.class_id == c) og.push_back(oracle::to_b(g.box)), gb.push_back(g.box);
        if (od.empty()) continue;
        const auto m = oracle::match(od, cc, og, 0.5);
        for (std::size_t i = 0; i < od.size(); ++i) {
          const auto b = m[i] >= 0 ? bucket(gb[static_cast<std::size_t>(m[i])]) : bucket(db[i]);
          tp[b][c].push_back(m[i] >= 0);
          conf[b][c].push_back(cc[i]);
        }
      }
    }
    for (std::size_t b = 0; b < 3; ++b) {
      if (bucket_gt[b] == 0) {
        EXPECT_FALSE(got[b].has_value());
        continue;
      }
      double s = 0;
      int n = 0;
      for (int c : classes) {
        const auto ap = oracle_ap(tp[b][c], conf[b][c], ngt[b][c]);
        if (ap) s += *ap, ++n;
      }
      ASSERT_TRUE(got[b].has_value());
      EXPECT_NEAR(*got[b], n ? s / n : 0.0, 1e-12) << "trial " << t << " bucket " << b;
    }
  }
}

TEST(PerClassAp, BoundsAndSingleAssignment) {
  Rng rng(46);
  for (int t = 0; t < 20; ++t) {
    const auto images = random_images(rng, 10);
    for (const auto& [c, ap] : per_class_ap(images, {0, 1, 2}))
      if (ap) {
        EXPECT_GE(*ap, 0.0);
        EXPECT_LE(*ap, 1.0);
      }
    for (const auto& m : detail::match_all(images, {0, 1, 2}, 0.5)) {
      EXPECT_TRUE(!m.tp || m.gt.has_value());
    }
  }
}

TEST(Report, JsonRoundTripAndTimingToggle) {
  MetricsReport r;
  r.common_classes = {1, 2};
  r.per_class = {{1, 0.25}, {2, std::nullopt}};
  r.map = 0.25;
  r.per_scale = {std::nullopt, 0.5, 1.0 / 3.0};
  r.baseline = "source_only";
  r.gains = {{1, -0.125, true}};
  adapt::GroupMeans g;
  g.source_common = 0.3;
  g.target_common = 0.7;
  g.counts = {0, 4, 5, 0};
  r.group_means = g;
  r.meta = {"usdaf", "open-0.5", "abc", 3, 12.5};
  const auto j = to_json(r);
  const auto back = report_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(to_json(back).dump(), j.dump());
  EXPECT_FALSE(to_json(r, false).at("meta").contains("wall_time_seconds"));
  const auto md = to_markdown(r);
  EXPECT_NE(md.find("25.00"), std::string::npos);
  EXPECT_NE(md.find("(negative)"), std::string::npos);
  EXPECT_EQ(format_double(0.1), "0.1");
}

TEST(FeatureExport, HeaderRowsAndDeterminism) {
  scene::DatasetManifest m;
  m.scenario = scene::Scenario::OpenSet;
  m.xi = 0.5;
  m.source_train = m.target_train = 0;
  m.source_test = m.target_test = 5;
  const auto data = scene::generate_dataset(m);
  Rng rng(47);
  const det::Detector det(det::DetectorConfig{}, data.manifest.label_space.source_classes, rng);
  const auto dir = std::filesystem::temp_directory_path();
  const auto p1 = (dir / "usdaf_test_features_1.csv").string(), p2 = (dir / "usdaf_test_features_2.csv").string();

  EXPECT_EQ(export_instance_features(det, {&data.source_train}, data.manifest.label_space, p1), 0u);
  EXPECT_EQ(slurp(p1), feature_csv_header(det.roi_feature_size()) + "\n");

  std::size_t instances = 0;
  for (const auto* s : {&data.source_test, &data.target_test})
    for (std::size_t i = 0; i < s->size(); ++i) instances += s->evaluation_annotations(i).size();
  const auto rows = export_instance_features(det, {&data.source_test, &data.target_test}, data.manifest.label_space, p1);
  EXPECT_EQ(rows, instances);
  export_instance_features(det, {&data.source_test, &data.target_test}, data.manifest.label_space, p2);
  const auto text = slurp(p1);
  EXPECT_EQ(text, slurp(p2));
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), instances + 1);
  EXPECT_EQ(text.rfind("domain,class_id,is_common,bucket,f0,", 0), 0u);
  EXPECT_EQ(data.hidden_read_attempts(), 0u);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}
