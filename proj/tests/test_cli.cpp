#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "maskwatch/cli.hpp"
#include "test_util.hpp"

using namespace maskwatch;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "maskwatch");
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(Cli, HelpAndVersionSucceed) {
  auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("Usage"), std::string::npos);
  EXPECT_EQ(run({"--version"}).code, 0);
  EXPECT_EQ(run({"run", "--help"}).code, 0);
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  const auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("frobnicate"), std::string::npos);
  EXPECT_NE(r.err.find("dataset, train, distill, eval, bench, run"), std::string::npos);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, DiagnosticsArePrefixedWithSubcommand) {
  const auto r = run({"eval", "detector", "--dets", "/nonexistent/d.txt", "--gts", "/nonexistent/g.txt"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("eval detector: ", 0), 0u) << r.err;
  const auto bad_flag = run({"run", "--bogus", "1"});
  EXPECT_EQ(bad_flag.code, 2);
  EXPECT_EQ(bad_flag.err.rfind("maskwatch run: ", 0), 0u) << bad_flag.err;
}

TEST(Cli, SplitIsByteIdenticalAcrossRuns) {
  testutil::TempDir dir;
  std::ostringstream m;
  m << "{\"seed\":0}\n";
  for (int i = 0; i < 50; ++i) m << "{\"path\":\"i" << i << ".ppm\",\"split\":\"train\",\"label\":" << i % 3 << "}\n";
  write(dir / "in.jsonl", m.str());
  for (const char* name : {"a.jsonl", "b.jsonl"}) {
    const auto r = run({"dataset", "split", "--manifest", (dir / "in.jsonl").string(), "--ratios", "0.8,0.1,0.1",
                        "--seed", "7", "--out", (dir / name).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(testutil::slurp(dir / "a.jsonl"), testutil::slurp(dir / "b.jsonl"));
  const Manifest back = load_manifest(dir / "a.jsonl");
  EXPECT_EQ(back.split_sizes(), (std::array<std::size_t, 3>{40, 5, 5}));
}

TEST(Cli, BadRatiosAreUsageErrors) {
  testutil::TempDir dir;
  write(dir / "in.jsonl", "{\"seed\":0}\n{\"path\":\"a.ppm\",\"split\":\"train\",\"label\":0}\n");
  const auto r = run({"dataset", "split", "--manifest", (dir / "in.jsonl").string(), "--ratios", "0.5,0.5,0.5",
                      "--out", (dir / "o.jsonl").string()});
  EXPECT_EQ(r.code, 2);
}

// Fixture APs (0.8667, 0.5556) come from the brute-force oracle in
// tests/oracles/oracles.py, which also wrote the fixture files.
TEST(Cli, EvalDetectorOnTwoClassFixture) {
  testutil::TempDir dir;
  const std::string fixtures = MASKWATCH_FIXTURES;
  const auto r = run({"eval", "detector", "--dets", fixtures + "/two_class_dets.txt", "--gts",
                      fixtures + "/two_class_gts.txt", "--report", (dir / "r.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const MetricsReport rep = read_report(dir / "r.json");
  ASSERT_EQ(rep.ap_per_class.size(), 2u);
  EXPECT_NEAR(*rep.ap_per_class[0], 0.8666666666666667, 1e-12);
  EXPECT_NEAR(*rep.ap_per_class[1], 0.5555555555555556, 1e-12);
  EXPECT_NEAR(*rep.map, 0.7111111111111111, 1e-12);
  EXPECT_NE(rep.notes.find("iou=0.5"), std::string::npos);
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  testutil::TempDir dir;
  write(dir / "c.conf", "# pipeline settings\nconf = 0.3\npipeline = two-stage\n");
  auto r = run({"run", "--config", (dir / "c.conf").string(), "--source", "synthetic:2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("conf=0.3 "), std::string::npos);
  EXPECT_NE(r.out.find("\"mode\": \"two-stage\""), std::string::npos);

  r = run({"run", "--config", (dir / "c.conf").string(), "--source", "synthetic:2", "--conf", "0.25"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("conf=0.25 "), std::string::npos);
}

TEST(Cli, MisspelledConfigKeyNamed) {
  testutil::TempDir dir;
  write(dir / "c.conf", "confidence = 0.3\n");
  const auto r = run({"run", "--config", (dir / "c.conf").string(), "--source", "synthetic:1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("confidence"), std::string::npos);
}

TEST(Cli, EmptyConfigMeansDefaults) {
  testutil::TempDir dir;
  write(dir / "c.conf", "");
  const auto r = run({"run", "--config", (dir / "c.conf").string(), "--source", "synthetic:1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("conf=0.25 "), std::string::npos);
}

TEST(Cli, RuntimeFailureExitsOne) {
  testutil::TempDir dir;
  write(dir / "d.txt", "img 0 0.9 0.5 0.5 0.2\n");
  write(dir / "g.txt", "img 0 0.5 0.5 0.2 0.2\n");
  const auto r = run({"eval", "detector", "--dets", (dir / "d.txt").string(), "--gts", (dir / "g.txt").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("line 1"), std::string::npos);
}

TEST(Cli, PseudoLabelWithReplayDetector) {
  testutil::TempDir dir;
  std::filesystem::create_directories(dir / "imgs");
  std::filesystem::create_directories(dir / "labels");
  for (const char* n : {"a", "b"}) write_ppm(Image(8, 8), dir / (std::string("imgs/") + n + ".ppm"));
  write(dir / "dets.txt", "a 0 0.95 0.3 0.3 0.2 0.2\na 0 0.9 0.6 0.6 0.2 0.2\nb 0 0.85 0.5 0.5 0.1 0.1\n");
  const auto r = run({"dataset", "pseudo-label", "--images", (dir / "imgs").string(), "--detector",
                      "replay:" + (dir / "dets.txt").string(), "--class", "incorrect", "--labels",
                      (dir / "labels").string(), "--ratios", "1,0,0", "--out", (dir / "m.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Manifest m = load_manifest(dir / "m.jsonl");
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.entries()[0].image_path, "imgs/a.ppm");
  const BoxList boxes = read_box_labels(dir / "labels/a.txt");
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0].cls, static_cast<int>(DetClass::Negative));
}

TEST(Cli, SeedFromEnvironmentUnlessOverridden) {
  ::setenv("MASKWATCH_SEED", "123", 1);
  auto r = run({"run", "--source", "synthetic:1"});
  EXPECT_NE(r.out.find("seed=123 "), std::string::npos);
  r = run({"run", "--source", "synthetic:1", "--seed", "5"});
  EXPECT_NE(r.out.find("seed=5 "), std::string::npos);
  ::unsetenv("MASKWATCH_SEED");
}

TEST(Config, ParsesCommentsAndRejectsGarbage) {
  std::istringstream ok("  epochs = 3  # short run\n\nalpha=0.5\n");
  const auto v = parse_config_text(ok);
  EXPECT_EQ(v.at("epochs"), "3");
  EXPECT_EQ(v.at("alpha"), "0.5");
  std::istringstream bad("just words\n");
  EXPECT_THROW(parse_config_text(bad), ConfigError);
  RunConfig c;
  EXPECT_THROW(c.set("epochs", "many"), ConfigError);
  EXPECT_THROW(c.set("seed", "-1"), ConfigError);
  EXPECT_THROW(c.set("augment", "perhaps"), ConfigError);
}

TEST(Cli, BuildTrainDistillEvalBench) {
  testutil::TempDir dir;
  const auto toy = testutil::toy_set(24, 3, 32);
  for (std::size_t i = 0; i < toy.size(); ++i) {
    const auto cls = std::string(kMaskClassNames[static_cast<int>(toy[i].label)]);
    std::filesystem::create_directories(dir / ("root/" + cls));
    write_ppm(toy[i].image, dir / ("root/" + cls + "/" + std::to_string(i) + ".ppm"));
  }
  write(dir / "teacher.json", cnn_spec_to_json(testutil::small_spec(4, 8, 16)).dump());
  write(dir / "student.json", cnn_spec_to_json(testutil::small_spec(2, 4, 8)).dump());
  const auto p = [&](const char* name) { return (dir / name).string(); };
  std::filesystem::create_directories(dir / "data");

  auto r = run({"dataset", "build", "--root", p("root"), "--resized", p("resized"), "--out", p("data/m.jsonl"),
                "--seed", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(missing_images(load_manifest(p("data/m.jsonl")), dir / "data").empty());

  r = run({"train", "classifier", "--manifest", p("data/m.jsonl"), "--spec", p("teacher.json"), "--epochs", "2",
           "--batch", "4", "--out", p("t.mwm"), "--report", p("t.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(testutil::slurp(p("t.json")))["epochs"].size(), 2u);

  r = run({"distill", "--teacher", p("t.mwm"), "--student-spec", p("student.json"), "--manifest", p("data/m.jsonl"),
           "--epochs", "1", "--augment", "false", "--out", p("s.mwm"), "--report", p("s.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto dj = nlohmann::json::parse(testutil::slurp(p("s.json")));
  EXPECT_LT(dj["student_teacher_ratio"].get<double>(), 1.0);

  r = run({"eval", "classifier", "--model", p("s.mwm"), "--manifest", p("data/m.jsonl"), "--split", "train",
           "--report", p("e.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_report(p("e.json")).confusion.total(), 20);

  r = run({"bench", "--model", p("s.mwm"), "--inputs", "4", "--repeats", "1", "--hardware", "ci",
           "--report", p("b.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const MetricsReport b = read_report(p("b.json"));
  EXPECT_GT(*b.inferences_per_sec, 0.0);
  EXPECT_EQ(b.hardware, "ci");

  r = run({"distill", "--teacher", p("t.mwm"), "--student-spec", p("student.json"), "--manifest", p("data/m.jsonl"),
           "--alpha", "1.5", "--out", p("s2.mwm")});
  EXPECT_EQ(r.code, 2);
}
