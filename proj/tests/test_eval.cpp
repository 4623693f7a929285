#include <gtest/gtest.h>

#include <thread>

#include "maskwatch/eval.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace maskwatch;

TEST(Classify, WorkedExample) {
  const std::vector<int> labels{0, 0, 1, 2}, preds{0, 1, 1, 2};
  const auto r = classify_metrics(preds, labels, 3);
  ASSERT_EQ(r.per_class_accuracy.size(), 3u);
  EXPECT_DOUBLE_EQ(*r.per_class_accuracy[0], 0.5);
  EXPECT_DOUBLE_EQ(*r.per_class_accuracy[1], 1.0);
  EXPECT_DOUBLE_EQ(*r.per_class_accuracy[2], 1.0);
  EXPECT_DOUBLE_EQ(*r.total_accuracy, 0.75);
  EXPECT_EQ(r.confusion.counts[0][1], 1);
  EXPECT_EQ(r.confusion.total(), 4);
}

TEST(Classify, AbsentClassIsUndefined) {
  const std::vector<int> labels{0, 0}, preds{0, 1};
  const auto r = classify_metrics(preds, labels, 3);
  EXPECT_FALSE(r.per_class_accuracy[2].has_value());
  EXPECT_THROW(classify_metrics(std::vector<int>{}, std::vector<int>{}, 3), InvalidInput);
  EXPECT_THROW(classify_metrics(std::vector<int>{3}, std::vector<int>{0}, 3), InvalidInput);
}

TEST(Ap, SimpleCases) {
  const std::vector<GroundTruth> gt{{"a", {0.5, 0.5, 0.2, 0.2, 0}}};
  EXPECT_EQ(*ap_at_iou(std::vector<ImageDetection>{{"a", {0.5, 0.5, 0.2, 0.2, 0, 0.9}}}, gt, 0), 1.0);
  // shifted box with IoU 0.3 < 0.5 never matches
  EXPECT_EQ(*ap_at_iou(std::vector<ImageDetection>{{"a", {0.5 + 0.2 * 7 / 13.0, 0.5, 0.2, 0.2, 0, 0.9}}}, gt, 0),
            0.0);
  EXPECT_FALSE(ap_at_iou(std::vector<ImageDetection>{}, gt, 1).has_value());
}

TEST(Ap, TruePositiveThenFalsePositive) {
  const std::vector<GroundTruth> gt{{"a", {0.5, 0.5, 0.2, 0.2, 0}}};
  const std::vector<ImageDetection> d{{"a", {0.5, 0.5, 0.2, 0.2, 0, 0.9}}, {"a", {0.1, 0.1, 0.1, 0.1, 0, 0.8}}};
  const auto curve = *pr_curve(d, gt, 0);
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_EQ(curve[0].recall, 1.0);
  EXPECT_EQ(curve[0].precision, 1.0);
  EXPECT_EQ(curve[1].recall, 1.0);
  EXPECT_EQ(curve[1].precision, 0.5);
  EXPECT_EQ(average_precision(curve), 1.0);
  EXPECT_EQ(*oracle::ap(d, gt, 0, 0.5), 1.0);
}

TEST(Ap, DuplicateDetectionCountsOnce) {
  const std::vector<GroundTruth> gt{{"a", {0.5, 0.5, 0.2, 0.2, 0}}, {"a", {0.2, 0.2, 0.1, 0.1, 0}}};
  const std::vector<ImageDetection> d{{"a", {0.5, 0.5, 0.2, 0.2, 0, 0.9}}, {"a", {0.5, 0.5, 0.2, 0.2, 0, 0.8}}};
  EXPECT_DOUBLE_EQ(*ap_at_iou(d, gt, 0), 0.5);
}

TEST(Map, MeanOverDefinedClasses) {
  const std::vector<std::optional<double>> aps{0.894, 0.902};
  EXPECT_NEAR(mean_ap(aps), 0.898, 1e-12);
  const std::vector<std::optional<double>> one{0.7};
  EXPECT_EQ(mean_ap(one), 0.7);
  const std::vector<std::optional<double>> none{std::nullopt};
  EXPECT_THROW(mean_ap(none), InvalidInput);
}

TEST(Map, MatchesBruteForceOracle) {
  Rng rng(1);
  int checked = 0;
  while (checked < 1500) {
    const auto inst = oracle::random_instance(rng);
    if (inst.gts.empty()) continue;
    const double thr = index_below(rng, 2) ? 0.5 : uniform(rng, 0.1, 0.9);
    const auto m = map_at_iou(inst.dets, inst.gts, 2, thr);
    ASSERT_NEAR(m.mean, oracle::map(inst.dets, inst.gts, 2, thr), 1e-9);
    for (int c = 0; c < 2; ++c) ASSERT_EQ(m.per_class[c].has_value(), oracle::ap(inst.dets, inst.gts, c, thr).has_value());
    ++checked;
  }
}

TEST(Map, InvariantUnderMonotoneConfidenceTransform) {
  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    auto inst = oracle::random_instance(rng);
    if (inst.gts.empty()) continue;
    const double before = map_at_iou(inst.dets, inst.gts, 2).mean;
    for (auto& d : inst.dets) d.det.conf = 0.01 + 0.98 * d.det.conf * d.det.conf;
    ASSERT_NEAR(map_at_iou(inst.dets, inst.gts, 2).mean, before, 1e-12);
  }
}

TEST(Map, LowConfidenceFalsePositiveNeverHelps) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    auto inst = oracle::random_instance(rng);
    if (inst.gts.empty()) continue;
    const auto before = map_at_iou(inst.dets, inst.gts, 2);
    const int cls = static_cast<int>(index_below(rng, 2));
    inst.dets.push_back({"nowhere", {0.5, 0.5, 0.1, 0.1, cls, 0.001}});
    const auto after = map_at_iou(inst.dets, inst.gts, 2);
    if (before.per_class[cls]) ASSERT_LE(*after.per_class[cls], *before.per_class[cls] + 1e-15);
  }
}

TEST(Map, ApsInUnitInterval) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const auto inst = oracle::random_instance(rng);
    if (inst.gts.empty()) continue;
    for (const auto& v : map_at_iou(inst.dets, inst.gts, 2).per_class)
      if (v) ASSERT_TRUE(*v >= 0.0 && *v <= 1.0);
  }
}

TEST(Median, RobustToOutlier) {
  EXPECT_EQ(median({1, 2, 3, 1000}), 2.5);
  EXPECT_EQ(median({5, 1, 3}), 3);
  EXPECT_THROW(median({}), InvalidInput);
}

TEST(Bench, SleepingStubNearHundredPerSecond) {
  const std::vector<int> inputs(100, 0);
  const auto r = bench_inference<int>(
      inputs, [](int) { std::this_thread::sleep_for(std::chrono::milliseconds(10)); }, 0, 1, "test-host");
  EXPECT_NEAR(r.inferences_per_sec, 100.0, 10.0);
  EXPECT_EQ(r.hardware, "test-host");
  EXPECT_EQ(r.pass_rates.size(), 1u);
}

TEST(Bench, Preconditions) {
  const std::vector<int> none;
  EXPECT_THROW(bench_inference<int>(none, [](int) {}, 0, 1, ""), InvalidInput);
  const std::vector<int> one{1};
  EXPECT_THROW(bench_inference<int>(one, [](int) {}, 0, 0, ""), ConfigError);
}

namespace {

MetricsReport random_report(Rng& rng) {
  MetricsReport r;
  r.hardware = "cpu #" + std::to_string(rng() % 100);
  r.notes = "seed=" + std::to_string(rng());
  if (index_below(rng, 2)) {
    std::vector<int> y, p;
    for (int i = 0; i < 20; ++i) {
      y.push_back(static_cast<int>(index_below(rng, 3)));
      p.push_back(static_cast<int>(index_below(rng, 3)));
    }
    auto m = classify_metrics(p, y, 3);
    m.hardware = r.hardware;
    m.notes = r.notes;
    r = m;
  } else {
    auto inst = oracle::random_instance(rng);
    inst.gts.push_back({"im0", {0.5, 0.5, 0.2, 0.2, 0}});
    auto m = detection_report(inst.dets, inst.gts, 2);
    m.hardware = r.hardware;
    m.notes = r.notes;
    r = m;
  }
  if (index_below(rng, 2)) r.inferences_per_sec = uniform(rng, 1, 1e4);
  return r;
}

}  // namespace

TEST(Report, RoundTripProperty) {
  testutil::TempDir dir;
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const MetricsReport r = random_report(rng);
    write_report(r, dir / "r.json");
    ASSERT_EQ(read_report(dir / "r.json"), r);
  }
}

TEST(Report, KeysInFixedOrder) {
  const std::string text = report_to_string(classify_metrics(std::vector<int>{0}, std::vector<int>{0}, 3));
  std::size_t pos = 0;
  for (auto key : kReportKeys) {
    const auto at = text.find("\"" + std::string(key) + "\"");
    ASSERT_NE(at, std::string::npos) << key;
    ASSERT_GE(at, pos);
    pos = at;
  }
}

TEST(Report, MissingKeyRejected) {
  auto j = nlohmann::json::parse(report_to_string(classify_metrics(std::vector<int>{0}, std::vector<int>{0}, 3)));
  j.erase("hardware");
  try {
    parse_report(j.dump());
    FAIL();
  } catch (const FormatError& ex) {
    EXPECT_NE(std::string(ex.what()).find("hardware"), std::string::npos);
  }
}

TEST(Report, InconsistentMapRejected) {
  MetricsReport r;
  r.task = Task::Detection;
  r.ap_per_class = {0.894, 0.902};
  r.map = 0.9;
  EXPECT_THROW(validate(r), FormatError);
  r.map = 0.898;
  EXPECT_NO_THROW(validate(r));
}
