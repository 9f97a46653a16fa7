#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "usdaf/detect/checkpoint.hpp"
#include "usdaf/detect/loss.hpp"
#include "usdaf/scene/render.hpp"

using namespace usdaf;
using namespace usdaf::det;
using usdaf::ad::Tensor;

namespace {

const std::vector<int> kClasses{0, 1, 2, 3};

Detector make_detector(std::uint64_t seed) {
  Rng rng(seed);
  return Detector(DetectorConfig{}, kClasses, rng);
}

Box random_box(Rng& rng, double lo = 0.0, double hi = 64.0) {
  const double x = uniform(rng, lo, hi - 4), y = uniform(rng, lo, hi - 4);
  return {x, y, x + uniform(rng, 1.0, hi - x), y + uniform(rng, 1.0, hi - y)};
}

scene::SceneSample sample_scene(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<scene::ObjectSpec> objs{{0, 20, 20, {}}, {2, 10, 10, {}}, {3, 7, 7, {}}};
  return scene::render_scene(objs, scene::default_style(scene::Domain::Source), rng);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("usdaf_test_detect_" + name);
}

}  // namespace

TEST(Iou, HandExamples) {
  const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_NEAR(iou(a, b), 1.0 / 7.0, 1e-15);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, Box{5, 5, 6, 6}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, Box{2, 0, 4, 2}), 0.0);  // touching edges
}

TEST(Iou, MatchesOracleAndIsSymmetric) {
  Rng rng(11);
  for (int t = 0; t < 500; ++t) {
    const auto a = random_box(rng), b = random_box(rng);
    const double v = iou(a, b);
    EXPECT_NEAR(v, oracle::iou(oracle::to_b(a), oracle::to_b(b)), 1e-12);
    EXPECT_DOUBLE_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(BoxCoding, ZeroDeltaAndWidthDoubling) {
  const Box anchor{10, 20, 20, 26};
  EXPECT_EQ(box_transform(anchor, {0, 0, 0, 0}), anchor);
  const Box wide = box_transform(anchor, {0, 0, std::log(2.0), 0});
  EXPECT_NEAR(wide.width(), 20.0, 1e-12);
  EXPECT_NEAR(wide.center_x(), anchor.center_x(), 1e-12);
  EXPECT_NEAR(wide.height(), anchor.height(), 1e-12);
  EXPECT_THROW(box_transform(Box{1, 1, 1, 5}, {0, 0, 0, 0}), Error);
}

TEST(BoxCoding, EncodeDecodeRoundTrip) {
  Rng rng(12);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto a = random_box(rng), b = random_box(rng);
    const auto back = box_transform(a, box_encode(a, b));
    worst = std::max({worst, std::abs(back.x_min - b.x_min), std::abs(back.y_min - b.y_min),
                      std::abs(back.x_max - b.x_max), std::abs(back.y_max - b.y_max)});
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Nms, SingleAndIdenticalBoxes) {
  const std::vector<Box> one{{0, 0, 4, 4}};
  const std::vector<double> s1{0.3};
  EXPECT_EQ(nms(one, s1), std::vector<std::size_t>{0});
  const std::vector<Box> two{{0, 0, 4, 4}, {0, 0, 4, 4}};
  EXPECT_EQ(nms(two, std::vector<double>{0.2, 0.9}), std::vector<std::size_t>{1});
  EXPECT_EQ(nms(two, std::vector<double>{0.5, 0.5}), std::vector<std::size_t>{0});
  EXPECT_THROW(nms(two, s1), Error);
}

TEST(Nms, MatchesBruteForce) {
  Rng rng(13);
  for (int t = 0; t < 200; ++t) {
    std::vector<Box> boxes;
    std::vector<oracle::B> ob;
    std::vector<double> scores;
    for (int i = 0; i < 20; ++i) {
      boxes.push_back(random_box(rng, 0, 32));
      ob.push_back(oracle::to_b(boxes.back()));
      // coarse scores so ties occur
      scores.push_back(std::floor(uniform01(rng) * 8) / 8);
    }
    const double thr = t % 2 ? 0.5 : 0.3;
    EXPECT_EQ(nms(boxes, scores, thr), oracle::nms(ob, scores, thr)) << "trial " << t;
  }
}

TEST(AnchorGrid, CentresInsideAndClipped) {
  const AnchorGrid g;
  EXPECT_EQ(g.size(), 8u * 8u * 3u);
  for (const auto& a : g.boxes()) {
    EXPECT_TRUE(a.valid());
    EXPECT_GE(a.x_min, 0);
    EXPECT_GE(a.y_min, 0);
    EXPECT_LE(a.x_max, 64);
    EXPECT_LE(a.y_max, 64);
    EXPECT_TRUE(a.center_x() > 0 && a.center_x() < 64 && a.center_y() > 0 && a.center_y() < 64);
  }
  EXPECT_THROW(AnchorGrid(64, 7), ConfigError);
}

TEST(AnchorMatching, SymmetricUnderTranspose) {
  const AnchorGrid g;
  const std::size_t G = 8, A = 3;
  Rng rng(14);
  for (int t = 0; t < 20; ++t) {
    std::vector<scene::Annotation> gts, transposed;
    for (int i = 0; i < 3; ++i) {
      const auto b = random_box(rng);
      gts.push_back({0, b});
      transposed.push_back({0, Box{b.y_min, b.x_min, b.y_max, b.x_max}});
    }
    const auto a1 = assign_anchors(g, gts, 0.5, 0.3);
    const auto a2 = assign_anchors(g, transposed, 0.5, 0.3);
    for (std::size_t y = 0; y < G; ++y)
      for (std::size_t x = 0; x < G; ++x)
        for (std::size_t s = 0; s < A; ++s)
          EXPECT_EQ(a1.label[(y * G + x) * A + s], a2.label[(x * G + y) * A + s]);
  }
}

TEST(Backbone, ZeroImageGivesZeroFeaturesOfFixedShape) {
  const auto det = make_detector(1);
  const auto f = det.backbone_forward(Tensor::zeros({1, 3, 64, 64}));
  EXPECT_EQ(f.shape(), (ad::Shape{1, 32, 8, 8}));
  for (double v : f.values()) EXPECT_EQ(v, 0.0);
  const auto g = det.backbone_forward(det.image_tensor(sample_scene(2).image));
  EXPECT_EQ(g.shape(), (ad::Shape{1, 32, 8, 8}));
  EXPECT_THROW(det.backbone_forward(Tensor::zeros({1, 3, 32, 32})), ShapeError);
  EXPECT_THROW(det.image_tensor(std::vector<float>(10)), ShapeError);
}

TEST(Propose, TopKZeroAndBounds) {
  Rng rng(15);
  for (int t = 0; t < 10; ++t) {
    const auto det = make_detector(derive_seed(15, 0, t));
    const auto img = sample_scene(t).image;
    const auto rpn = det.rpn_forward(det.backbone_forward(det.image_tensor(img)));
    EXPECT_TRUE(det.propose(rpn, 0).empty());
    const auto props = det.propose(rpn, 32);
    EXPECT_LE(props.size(), 32u);
    EXPECT_FALSE(props.empty());
    for (const auto& p : props) {
      EXPECT_GT(p.box.area(), 0.0);
      EXPECT_TRUE(p.box.x_min >= 0 && p.box.y_min >= 0 && p.box.x_max <= 64 && p.box.y_max <= 64);
      EXPECT_TRUE(std::isfinite(p.score) && p.score >= 0 && p.score <= 1);
    }
    for (std::size_t i = 1; i < props.size(); ++i) EXPECT_GE(props[i - 1].score, props[i].score);
  }
}

TEST(Propose, HandSetObjectnessPicksItsAnchorFirst) {
  auto det = make_detector(3);
  const std::size_t C = det.feature_channels(), G = 8, A = 3;
  const std::size_t fy = 5, fx = 2, side = 1;
  // feature map with a single active cell, channel 0
  auto feat = Tensor::zeros({1, C, G, G});
  feat.mutable_values()[fy * G + fx] = 1.0;
  auto zero = [](Tensor t) { std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0); };
  zero(det.rpn_conv().weight);
  zero(det.rpn_conv().bias);
  zero(det.rpn_box().weight);
  zero(det.rpn_box().bias);
  zero(det.rpn_objectness().weight);
  // rpn conv: identity on channel 0 through the centre tap of the 3x3 kernel
  det.rpn_conv().weight.mutable_values()[(0 * C + 0) * 9 + 4] = 1.0;
  auto obj_w = det.rpn_objectness().weight.mutable_values();
  obj_w[side * det.config().rpn_channels + 0] = 20.0;
  auto obj_b = det.rpn_objectness().bias.mutable_values();
  for (auto& b : obj_b) b = -10.0;

  const auto rpn = det.rpn_forward(feat);
  const auto props = det.propose(rpn, 32);
  ASSERT_FALSE(props.empty());
  const std::size_t anchor = (fy * G + fx) * A + side;
  EXPECT_EQ(props[0].anchor, anchor);
  EXPECT_EQ(props[0].box, det.anchors()[anchor]);
  EXPECT_NEAR(props[0].score, oracle::sigmoid(10.0), 1e-12);
  for (std::size_t i = 1; i < props.size(); ++i) EXPECT_LT(props[i].score, 1e-4);
}

TEST(Detect, OutputsKnownClassesWithValidConfidence) {
  const auto det = make_detector(4);
  for (int t = 0; t < 5; ++t) {
    for (const auto& d : det.detect(sample_scene(100 + t).image)) {
      EXPECT_GE(det.label_index(d.class_id), 1);
      EXPECT_TRUE(d.confidence > 0 && d.confidence <= 1);
      EXPECT_TRUE(d.box.valid());
    }
  }
}

TEST(DetectionLoss, RejectsTargetAnnotations) {
  const auto det = make_detector(5);
  const auto s = sample_scene(5);
  const auto feat = det.backbone_forward(det.image_tensor(s.image));
  const auto rpn = det.rpn_forward(feat);
  const auto props = det.propose(rpn, 32);
  EXPECT_THROW(detection_loss(det, feat, rpn, props, {scene::Domain::Target, s.annotations}), HiddenLabelError);
}

TEST(DetectionLoss, NoGroundTruthLeavesNegativeTermsOnly) {
  const auto det = make_detector(6);
  const auto s = sample_scene(6);
  const auto feat = det.backbone_forward(det.image_tensor(s.image));
  const auto rpn = det.rpn_forward(feat);
  const auto props = det.propose(rpn, 32);
  const auto L = detection_loss(det, feat, rpn, props, {scene::Domain::Source, {}});
  EXPECT_EQ(L.rpn_box.item(), 0.0);
  EXPECT_EQ(L.roi_box.item(), 0.0);
  double obj = 0;
  for (double p : rpn.objectness.values()) obj += oracle::bce(p, 0.0);
  EXPECT_NEAR(L.rpn_objectness.item(), obj / double(rpn.objectness.size()), 1e-12);
  std::vector<Box> rois;
  for (const auto& p : props) rois.push_back(p.box);
  const auto roi = det.roi_forward(det.roi_pool(feat, rois));
  const std::size_t K = kClasses.size() + 1;
  double ce = 0;
  for (std::size_t r = 0; r < rois.size(); ++r) ce += oracle::cross_entropy(roi.class_logits.values().data() + r * K, K, 0);
  EXPECT_NEAR(L.roi_class.item(), ce / double(rois.size()), 1e-12);
}

TEST(DetectionLoss, MatchesPerTermOracle) {
  for (int t = 0; t < 5; ++t) {
    const auto det = make_detector(derive_seed(7, 0, t));
    const auto s = sample_scene(derive_seed(7, 1, t));
    const auto feat = det.backbone_forward(det.image_tensor(s.image));
    const auto rpn = det.rpn_forward(feat);
    const auto props = det.propose(rpn, 32);
    const auto L = detection_loss(det, feat, rpn, props, {scene::Domain::Source, s.annotations});

    const auto& gts = s.annotations;
    const auto& anchors = det.anchors().boxes();
    auto encode = [](const Box& a, const Box& g) {
      const double aw = a.x_max - a.x_min, ah = a.y_max - a.y_min;
      return std::array<double, 4>{((g.x_min + g.x_max) / 2 - (a.x_min + a.x_max) / 2) / aw,
                                   ((g.y_min + g.y_max) / 2 - (a.y_min + a.y_max) / 2) / ah,
                                   std::log((g.x_max - g.x_min) / aw), std::log((g.y_max - g.y_min) / ah)};
    };
    // anchor labels: threshold rule, then each GT's best anchor forced positive
    std::vector<int> label(anchors.size());
    std::vector<std::size_t> match(anchors.size(), 0);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      double best = 0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        const double v = oracle::iou(oracle::to_b(anchors[i]), oracle::to_b(gts[g].box));
        if (v > best) best = v, match[i] = g;
      }
      label[i] = best >= 0.5 ? 1 : best < 0.3 ? 0 : -1;
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
      std::size_t arg = 0;
      double best = -1;
      for (std::size_t i = 0; i < anchors.size(); ++i) {
        const double v = oracle::iou(oracle::to_b(anchors[i]), oracle::to_b(gts[g].box));
        if (v > best) best = v, arg = i;
      }
      label[arg] = 1, match[arg] = g;
    }
    double pos = 0, neg = 0, npos = 0, nneg = 0, box = 0;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      const double p = rpn.objectness[i];
      if (label[i] == 1) {
        pos += oracle::bce(p, 1), npos += 1;
        const auto e = encode(anchors[i], gts[match[i]].box);
        for (std::size_t k = 0; k < 4; ++k) box += oracle::smooth_l1(rpn.deltas[i * 4 + k] - e[k]);
      } else if (label[i] == 0) {
        neg += oracle::bce(p, 0), nneg += 1;
      }
    }
    EXPECT_NEAR(L.rpn_objectness.item(), pos / npos + neg / nneg, 1e-10);
    EXPECT_NEAR(L.rpn_box.item(), box / npos, 1e-10);

    std::vector<Box> rois;
    for (const auto& p : props) rois.push_back(p.box);
    for (const auto& g : gts) rois.push_back(g.box);
    const auto roi = det.roi_forward(det.roi_pool(feat, rois));
    const std::size_t K = kClasses.size() + 1;
    double ce = 0, rbox = 0, rpos = 0;
    for (std::size_t r = 0; r < rois.size(); ++r) {
      double best = 0;
      std::size_t g_best = 0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        const double v = oracle::iou(oracle::to_b(rois[r]), oracle::to_b(gts[g].box));
        if (v > best) best = v, g_best = g;
      }
      int cls = 0;
      if (best >= 0.5) {
        cls = gts[g_best].class_id + 1;  // kClasses are 0..3 in order
        rpos += 1;
        const auto e = encode(rois[r], gts[g_best].box);
        for (std::size_t k = 0; k < 4; ++k) rbox += oracle::smooth_l1(roi.box_deltas[r * 4 + k] - e[k]);
      }
      ce += oracle::cross_entropy(roi.class_logits.values().data() + r * K, K, cls);
    }
    EXPECT_NEAR(L.roi_class.item(), ce / double(rois.size()), 1e-10);
    EXPECT_NEAR(L.roi_box.item(), rbox / rpos, 1e-10);
    EXPECT_NEAR(L.total.item(), L.rpn_objectness.item() + L.rpn_box.item() + L.roi_class.item() + L.roi_box.item(),
                1e-12);
  }
}

TEST(DetectionLoss, PerfectRpnDeltasZeroTheBoxTerm) {
  const auto det = make_detector(8);
  const auto s = sample_scene(8);
  const auto feat = det.backbone_forward(det.image_tensor(s.image));
  auto rpn = det.rpn_forward(feat);
  const auto A = assign_anchors(det.anchors(), s.annotations, 0.5, 0.3);
  std::vector<double> d(det.anchors().size() * 4, 0.0);
  for (std::size_t i = 0; i < det.anchors().size(); ++i)
    if (A.label[i] == 1) {
      const auto e = box_encode(det.anchors()[i], s.annotations[A.matched_gt[i]].box);
      std::copy(e.begin(), e.end(), d.begin() + static_cast<std::ptrdiff_t>(i * 4));
    }
  rpn.deltas = Tensor::from({det.anchors().size(), 4}, d);
  const auto props = det.propose(rpn, 32);
  const auto L = detection_loss(det, feat, rpn, props, {scene::Domain::Source, s.annotations});
  EXPECT_NEAR(L.rpn_box.item(), 0.0, 1e-12);
}

TEST(DetectionLoss, BackboneGradientsMatchFiniteDifferences) {
  const auto det = make_detector(9);
  const auto s = sample_scene(9);
  const auto img = det.image_tensor(s.image);
  std::vector<Proposal> props;
  {
    const auto rpn = det.rpn_forward(det.backbone_forward(img));
    props = det.propose(rpn, 32);
  }
  auto f = [&] {
    const auto feat = det.backbone_forward(img);
    const auto rpn = det.rpn_forward(feat);
    return detection_loss(det, feat, rpn, props, {scene::Domain::Source, s.annotations}).total;
  };
  Rng rng(9);
  for (const char* name : {"backbone.conv1.weight", "backbone.conv2.weight", "backbone.conv3.weight"}) {
    const Tensor* w = det.parameters().find(name);
    ASSERT_NE(w, nullptr);
    const auto r = support::gradcheck(f, {*w}, 6, &rng);
    EXPECT_EQ(r.coordinates, 6u);
    EXPECT_LT(r.max_rel_error, 1e-4) << name;
  }
}

TEST(Checkpoint, RoundTripRestoresDetections) {
  const auto a = make_detector(10);
  auto b = make_detector(11);
  const auto path = temp_path("ckpt.bin").string();
  save_checkpoint(path, a.parameters());
  load_checkpoint(path, b.parameters());
  for (const auto& [name, t] : a.parameters()) {
    const Tensor* other = b.parameters().find(name);
    ASSERT_NE(other, nullptr);
    EXPECT_TRUE(std::equal(t.values().begin(), t.values().end(), other->values().begin())) << name;
  }
  const auto img = sample_scene(10).image;
  const auto da = a.detect(img), db = b.detect(img);
  ASSERT_EQ(da.size(), db.size());
  for (std::size_t i = 0; i < da.size(); ++i) {
    EXPECT_EQ(da[i].box, db[i].box);
    EXPECT_EQ(da[i].confidence, db[i].confidence);
  }
  const auto entries = read_checkpoint(path);
  EXPECT_EQ(entries.size(), a.parameters().size());
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsMissingAndForeignFiles) {
  auto d = make_detector(12);
  EXPECT_THROW(load_checkpoint(temp_path("does_not_exist").string(), d.parameters()), IoError);
  const auto path = temp_path("garbage.bin").string();
  std::ofstream(path) << "hello world\n";
  EXPECT_THROW(load_checkpoint(path, d.parameters()), IoError);
  ad::ParameterSet small;
  small.add("x", Tensor::zeros({2}));
  save_checkpoint(path, small);
  EXPECT_THROW(load_checkpoint(path, d.parameters()), IoError);
  std::filesystem::remove(path);
}
