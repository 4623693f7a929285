#include <gtest/gtest.h>

#include "maskwatch/backends.hpp"
#include "maskwatch/pipeline.hpp"
#include "test_util.hpp"

using namespace maskwatch;
using std::chrono::milliseconds;

namespace {

PipelineConfig config(PipelineMode mode) {
  PipelineConfig c;
  c.mode = mode;
  return c;
}

}  // namespace

// w = h = 0.5 with margin 0.2 grows to 0.7: pixels [15, 85) on a 100x100 frame.
TEST(Crop, MarginBounds) {
  const PixelRect r = crop_region(100, 100, BBox{0.5, 0.5, 0.5, 0.5, 0}, 0.2);
  EXPECT_EQ(r, (PixelRect{15, 15, 85, 85}));
  const Image face = crop_face(Image(100, 100), BBox{0.5, 0.5, 0.5, 0.5, 0}, 0.2);
  EXPECT_EQ(face.height(), 128);
}

TEST(Crop, ClippedAtFrameEdge) {
  const PixelRect r = crop_region(100, 200, BBox{0.05, 0.95, 0.1, 0.1, 0}, 0.5);
  EXPECT_EQ(r.x0, 0);
  EXPECT_EQ(r.y1, 100);
  EXPECT_GT(r.width(), 0);
  EXPECT_GT(r.height(), 0);
}

TEST(Crop, BoundsAlwaysInsideFrameProperty) {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const int h = 1 + static_cast<int>(index_below(rng, 300)), w = 1 + static_cast<int>(index_below(rng, 300));
    const BBox b = testutil::random_box(rng);
    const PixelRect r = crop_region(h, w, b, uniform(rng, 0, 1));
    ASSERT_GE(r.x0, 0);
    ASSERT_GE(r.y0, 0);
    ASSERT_LE(r.x1, w);
    ASSERT_LE(r.y1, h);
    ASSERT_LT(r.x0, r.x1);
    ASSERT_LT(r.y0, r.y1);
  }
}

TEST(TwoStage, ClassifiesEveryFaceInOneBatch) {
  ScriptedDetector faces({{0.3, 0.3, 0.2, 0.2, 0, 0.9}, {0.7, 0.7, 0.2, 0.2, 0, 0.8}, {0.7, 0.3, 0.2, 0.2, 0, 0.1}});
  FixedClassifier cls(MaskClass::Incorrect);
  const auto r = run_two_stage(Image(60, 80), faces, cls, config(PipelineMode::TwoStage), 4);
  EXPECT_EQ(r.space, ClassSpace::Mask3);
  EXPECT_EQ(r.frame_index, 4u);
  ASSERT_EQ(r.detections.size(), 2u);
  EXPECT_EQ(cls.calls(), 2u);
  for (const auto& d : r.detections) {
    EXPECT_EQ(d.cls, static_cast<int>(MaskClass::Incorrect));
    EXPECT_NEAR(d.conf, softmax({0, 4, 0})[1], 1e-9);
  }
  EXPECT_DOUBLE_EQ(r.detections[0].cx, 0.3);
}

TEST(TwoStage, NoFacesSkipsClassifier) {
  ScriptedDetector faces({});
  FixedClassifier cls(MaskClass::Correct);
  EXPECT_TRUE(run_two_stage(Image(10, 10), faces, cls, config(PipelineMode::TwoStage)).detections.empty());
  EXPECT_EQ(cls.calls(), 0u);
}

TEST(SingleShot, EqualsPostNmsScript) {
  ScriptedDetector det({{0.50, 0.50, 0.40, 0.40, 0, 0.90},
                        {0.52, 0.50, 0.40, 0.40, 0, 0.80},
                        {0.50, 0.50, 0.40, 0.40, 1, 0.70},
                        {0.80, 0.20, 0.20, 0.20, 0, 0.60}});
  const auto r = run_single_shot(Image(10, 10), det, config(PipelineMode::SingleShot));
  EXPECT_EQ(r.space, ClassSpace::Det2);
  const std::vector<Detection> expected{
      {0.50, 0.50, 0.40, 0.40, 0, 0.90}, {0.50, 0.50, 0.40, 0.40, 1, 0.70}, {0.80, 0.20, 0.20, 0.20, 0, 0.60}};
  EXPECT_EQ(r.detections, expected);
  EXPECT_GT(r.latency_ms, 0.0);
}

TEST(SingleShot, ClassOutsideSpaceRejected) {
  ScriptedDetector det({{0.5, 0.5, 0.2, 0.2, 2, 0.9}});
  EXPECT_THROW(run_single_shot(Image(10, 10), det, config(PipelineMode::SingleShot)), Error);
}

TEST(FpsMeter, EvenlySpacedTimestamps) {
  FpsMeter m(4);
  std::optional<double> fps;
  for (double t : {0.0, 0.05, 0.1, 0.15}) fps = fps_update(m, t);
  EXPECT_NEAR(*fps, 20.0, 1e-9);
}

TEST(FpsMeter, WindowSlides) {
  FpsMeter m(3);
  EXPECT_FALSE(m.update(0.0).has_value());
  m.update(1.0);
  m.update(2.0);
  EXPECT_NEAR(*m.update(2.5), 2.0 / 1.5, 1e-12);
  EXPECT_EQ(m.size(), 3u);
}

TEST(FpsMeter, NonIncreasingTimestampRejected) {
  FpsMeter m;
  m.update(1.0);
  EXPECT_THROW(m.update(0.5), InvalidInput);
  EXPECT_THROW(m.update(1.0), InvalidInput);
}

TEST(RunVideo, FiftyMillisecondBackendNearTwentyFps) {
  SyntheticSource src(10);
  ScriptedDetector det({{0.5, 0.5, 0.3, 0.3, 0, 0.9}}, milliseconds(50));
  const auto run = run_video(src, config(PipelineMode::SingleShot), det);
  EXPECT_EQ(run.summary.frames, 10u);
  EXPECT_GE(run.summary.mean_fps, 18.0);
  EXPECT_LE(run.summary.mean_fps, 20.0);
  for (std::size_t i = 0; i < run.results.size(); ++i) EXPECT_EQ(run.results[i].frame_index, i);
}

TEST(RunVideo, SingleFrameAndEmptySource) {
  SyntheticSource one(1);
  ScriptedDetector det({});
  EXPECT_EQ(run_video(one, config(PipelineMode::SingleShot), det).summary.frames, 1u);
  SyntheticSource none(0);
  EXPECT_THROW(run_video(none, config(PipelineMode::SingleShot), det), InvalidInput);
}

TEST(RunVideo, TwoStageNeedsClassifier) {
  SyntheticSource src(1);
  ScriptedDetector det({});
  EXPECT_THROW(run_video(src, config(PipelineMode::TwoStage), det), ConfigError);
}

TEST(RunVideo, DirectorySourceDropsBadFramesAndSinkWrites) {
  testutil::TempDir dir;
  std::filesystem::create_directories(dir / "in");
  for (int i : {2, 10, 1}) write_ppm(solid_image(24, 32, {10, 20, 30}), dir / ("in/f" + std::to_string(i) + ".ppm"));
  std::ofstream(dir / "in/f5.ppm") << "garbage";
  DirectorySource src(dir / "in");
  DirectorySink sink(dir / "out");
  ScriptedDetector det({{0.5, 0.5, 0.3, 0.3, 1, 0.9}});
  std::vector<std::size_t> seen;
  const auto run = run_video(src, config(PipelineMode::SingleShot), det, nullptr, &sink,
                             [&](const FrameResult& r) { seen.push_back(r.frame_index); });
  EXPECT_EQ(run.summary.frames, 3u);
  EXPECT_EQ(run.summary.dropped, 1u);
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 3}));
  EXPECT_EQ(sink.written(), 3u);
  EXPECT_EQ(run.summary.class_counts.at(1), 3u);
}

TEST(RunReport, SchemaAndClassSpaces) {
  for (PipelineMode mode : {PipelineMode::TwoStage, PipelineMode::SingleShot}) {
    SyntheticSource src(3);
    ScriptedDetector det({{0.5, 0.5, 0.3, 0.3, 0, 0.9}});
    FixedClassifier cls(MaskClass::None);
    const auto run = run_video(src, config(mode), det, &cls);
    const auto j = validate_run_report(run_report_to_string(run.summary, "n"));
    EXPECT_EQ(j["class_space"].size(), mode == PipelineMode::TwoStage ? 3u : 2u);
  }
  EXPECT_THROW(validate_run_report("{\"mode\": \"two-stage\"}"), FormatError);
}

TEST(Percentile, Interpolates) {
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4}, 50), 2.5);
  EXPECT_DOUBLE_EQ(percentile({7}, 95), 7);
}
