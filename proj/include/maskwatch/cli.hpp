#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "augment.hpp"
#include "backends.hpp"
#include "config.hpp"
#include "data.hpp"
#include "detect.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "nn.hpp"
#include "pipeline.hpp"
#include "train.hpp"

namespace maskwatch::cli {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kSubcommands = "dataset, train, distill, eval, bench, run";

/// Usage problems detected after parsing (bad values, missing paths).
struct UsageError : Error {
  using Error::Error;
};

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// helpers

inline void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required --") + flag);
}

inline void require_file(const std::string& path, const char* flag) {
  require(path, flag);
  if (!fs::is_regular_file(path)) throw UsageError(std::string("--") + flag + ": no such file: " + path);
}

inline void require_dir(const std::string& path, const char* flag) {
  require(path, flag);
  if (!fs::is_directory(path)) throw UsageError(std::string("--") + flag + ": no such directory: " + path);
}

inline void require_parent(const std::string& path, const char* flag) {
  require(path, flag);
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent))
    throw UsageError(std::string("--") + flag + ": parent directory does not exist: " + parent.string());
}

inline SplitRatios parse_ratios(const std::string& text) {
  std::vector<double> parts;
  std::stringstream in(text);
  for (std::string tok; std::getline(in, tok, ',');) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::logic_error&) {
      throw UsageError("--ratios: not a number: '" + tok + "'");
    }
  }
  if (parts.size() != 3) throw UsageError("--ratios needs three comma-separated values");
  SplitRatios r{parts[0], parts[1], parts[2]};
  try {
    split_counts(1, r);
  } catch (const ConfigError& ex) {
    throw UsageError(std::string("--ratios: ") + ex.what());
  }
  return r;
}

inline std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

/// Manifest paths are stored relative to the manifest's own directory.
inline std::string manifest_relative(const fs::path& image, const fs::path& manifest) {
  const fs::path dir = fs::absolute(manifest).parent_path();
  return fs::proximate(fs::absolute(image), dir).generic_string();
}

inline std::string notes_for(const RunConfig& cfg) { return "config: " + cfg.describe(); }

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw Error(path.string() + ": write failed");
}

/// Detector ids: "scripted[:delay_ms]" (one centered face box at conf 0.9)
/// or "replay:<detections file>".
inline std::unique_ptr<DetectorBackend> make_detector(const std::string& id) {
  if (id.starts_with("replay:")) return std::make_unique<ReplayDetector>(read_detections(id.substr(7)), "replay");
  if (id == "scripted" || id.starts_with("scripted:")) {
    double delay_ms = 0;
    if (id.size() > 9) delay_ms = detail::parse_value<double>("detector delay", id.substr(9));
    if (delay_ms < 0) throw UsageError("--detector: delay must be >= 0");
    const std::vector<Detection> script{{0.5, 0.5, 0.3, 0.4, 0, 0.9}};
    return std::make_unique<ScriptedDetector>(
        script, std::chrono::microseconds(static_cast<long long>(std::llround(delay_ms * 1000))), "scripted");
  }
  throw UsageError("--detector: unknown backend '" + id + "' (expected scripted[:ms] or replay:<file>)");
}

/// Classifier ids: "fixed:<correct|incorrect|none>[:delay_ms]", "model:<path>"
/// or a bare model path.
inline std::unique_ptr<ClassifierBackend> make_classifier(const std::string& id) {
  if (id.starts_with("fixed:")) {
    std::string rest = id.substr(6), delay;
    if (auto colon = rest.find(':'); colon != std::string::npos) {
      delay = rest.substr(colon + 1);
      rest = rest.substr(0, colon);
    }
    auto it = std::find(kMaskClassNames.begin(), kMaskClassNames.end(), rest);
    if (it == kMaskClassNames.end()) throw UsageError("--classifier: unknown class '" + rest + "'");
    const double ms = delay.empty() ? 0.0 : detail::parse_value<double>("classifier delay", delay);
    return std::make_unique<FixedClassifier>(static_cast<MaskClass>(it - kMaskClassNames.begin()),
                                             std::chrono::microseconds(static_cast<long long>(std::llround(ms * 1000))));
  }
  const std::string path = id.starts_with("model:") ? id.substr(6) : id;
  return std::make_unique<Cnn>(load_model(path));
}

inline std::unique_ptr<FrameSource> make_source(const std::string& spec) {
  if (spec.starts_with("synthetic:")) {
    std::string rest = spec.substr(10), size;
    if (auto colon = rest.find(':'); colon != std::string::npos) {
      size = rest.substr(colon + 1);
      rest = rest.substr(0, colon);
    }
    const long long n = detail::parse_value<long long>("source frames", rest);
    if (n < 0) throw UsageError("--source: frame count must be >= 0");
    int w = 320, h = 240;
    if (!size.empty()) {
      const auto x = size.find('x');
      if (x == std::string::npos) throw UsageError("--source: size must be WxH");
      w = detail::parse_value<int>("source width", size.substr(0, x));
      h = detail::parse_value<int>("source height", size.substr(x + 1));
    }
    return std::make_unique<SyntheticSource>(static_cast<std::size_t>(n), w, h);
  }
  require_dir(spec, "source");
  return std::make_unique<DirectorySource>(spec);
}

inline nlohmann::ordered_json train_report_json(const TrainReport& r, const std::string& notes) {
  nlohmann::ordered_json j;
  auto epochs = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"train_loss", e.train_loss},
                      {"train_accuracy", e.train_accuracy},
                      {"val_accuracy", e.val_accuracy ? nlohmann::ordered_json(*e.val_accuracy) : nullptr},
                      {"seconds", e.seconds}});
  j["epochs"] = epochs;
  j["parameter_count"] = r.parameter_count;
  j["teacher_parameter_count"] =
      r.teacher_parameter_count ? nlohmann::ordered_json(*r.teacher_parameter_count) : nullptr;
  j["student_teacher_ratio"] = r.student_teacher_ratio() ? nlohmann::ordered_json(*r.student_teacher_ratio()) : nullptr;
  j["notes"] = notes;
  return j;
}

inline void print_epochs(const TrainReport& r, std::ostream& out) {
  for (std::size_t i = 0; i < r.epochs.size(); ++i) {
    const auto& e = r.epochs[i];
    out << "epoch " << i + 1 << ": loss " << std::setprecision(6) << e.train_loss << " train_acc " << e.train_accuracy;
    if (e.val_accuracy) out << " val_acc " << *e.val_accuracy;
    out << " (" << std::setprecision(3) << e.seconds << " s)\n";
  }
}

// ---------------------------------------------------------------------------
// subcommands

inline int cmd_dataset_build(const RunConfig& cfg, std::ostream& out) {
  require_parent(cfg.out, "out");
  const SplitRatios ratios = parse_ratios(cfg.ratios);
  std::vector<ManifestEntry> entries;

  if (!cfg.root.empty()) {
    require_dir(cfg.root, "root");
    if (!cfg.resized.empty() && cfg.side < 1) throw UsageError("--side must be >= 1");
    for (int c = 0; c < kMaskClassCount; ++c) {
      fs::path dir = fs::path(cfg.root) / std::string(kMaskClassNames[c]);
      if (!fs::is_directory(dir)) dir = fs::path(cfg.root) / std::to_string(c);
      if (!fs::is_directory(dir)) continue;
      for (const auto& img : list_images(dir)) {
        std::string path = img.string();
        if (!cfg.resized.empty()) {
          const fs::path target = fs::path(cfg.resized) / std::string(kMaskClassNames[c]) / img.filename();
          fs::create_directories(target.parent_path());
          write_ppm(resize_image(read_pnm(img), cfg.side), target);
          path = target.string();
        }
        entries.push_back({manifest_relative(path, cfg.out), Split::Train, static_cast<MaskClass>(c)});
      }
    }
  } else if (!cfg.images.empty() || !cfg.labels.empty()) {
    require_dir(cfg.images, "images");
    require_dir(cfg.labels, "labels");
    for (const auto& img : list_images(cfg.images)) {
      const fs::path label = fs::path(cfg.labels) / (img.stem().string() + ".txt");
      if (!fs::exists(label)) continue;
      entries.push_back({manifest_relative(img, cfg.out), Split::Train, read_box_labels(label)});
    }
  } else {
    throw UsageError("need --root (classification) or --images with --labels (detection)");
  }
  if (entries.empty()) throw InvalidInput("no images found");

  const Manifest m = split_manifest(std::move(entries), ratios, cfg.seed);
  save_manifest(m, cfg.out);
  const auto n = m.split_sizes();
  out << "wrote " << m.size() << " entries (train " << n[0] << ", val " << n[1] << ", test " << n[2] << ") to "
      << cfg.out << '\n';
  return 0;
}

inline int cmd_dataset_split(const RunConfig& cfg, std::ostream& out) {
  require_file(cfg.manifest, "manifest");
  require_parent(cfg.out, "out");
  const SplitRatios ratios = parse_ratios(cfg.ratios);
  const Manifest in = load_manifest(cfg.manifest);
  const Manifest m = split_manifest(in.entries(), ratios, cfg.seed);
  save_manifest(m, cfg.out);
  const auto n = m.split_sizes();
  out << "split " << m.size() << " entries into train " << n[0] << ", val " << n[1] << ", test " << n[2] << '\n';
  return 0;
}

inline DetClass parse_target_class(const std::string& name) {
  if (name == "positive") return DetClass::Positive;
  if (name == "negative") return DetClass::Negative;
  auto it = std::find(kMaskClassNames.begin(), kMaskClassNames.end(), name);
  if (it == kMaskClassNames.end())
    throw UsageError("--class must be one of positive, negative, correct, incorrect, none");
  return merge_to_detclass(static_cast<MaskClass>(it - kMaskClassNames.begin()));
}

inline int cmd_dataset_pseudo_label(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require_dir(cfg.images, "images");
  require_parent(cfg.out, "out");
  if (!(cfg.threshold > 0 && cfg.threshold < 1)) throw UsageError("--threshold must be in (0,1)");
  if (!cfg.labels.empty()) require_dir(cfg.labels, "labels");
  const DetClass target = parse_target_class(cfg.pseudo_class);
  const SplitRatios ratios = parse_ratios(cfg.ratios);
  auto detector = make_detector(cfg.detector);

  std::vector<std::string> images;
  for (const auto& p : list_images(cfg.images)) images.push_back(p.string());
  auto load = [&](const std::string& path) {
    detector->set_frame_id(fs::path(path).stem().string());
    return read_pnm(path);
  };
  const auto result = pseudo_label(images, *detector, cfg.threshold, target, load, err);
  if (result.labeled.empty()) throw InvalidInput("no image had a detection above the threshold");

  std::vector<ManifestEntry> entries;
  for (const auto& l : result.labeled) {
    entries.push_back({manifest_relative(l.image_path, cfg.out), Split::Train, l.boxes});
    if (!cfg.labels.empty())
      write_box_labels(l.boxes, fs::path(cfg.labels) / (fs::path(l.image_path).stem().string() + ".txt"));
  }
  const Manifest m = split_manifest(std::move(entries), ratios, cfg.seed);
  save_manifest(m, cfg.out);
  out << "pseudo-labeled " << result.labeled.size() << " of " << images.size() << " images ("
      << result.skipped.size() << " unreadable)\n";
  return 0;
}

inline std::optional<AugmentationSpec> augmentation_for(const RunConfig& cfg, int side, const Normalization& n) {
  if (!cfg.augment) return std::nullopt;
  AugmentationSpec spec;
  spec.side = side;
  spec.normalization = n;
  return spec;
}

inline void check_training_flags(const RunConfig& cfg) {
  if (cfg.epochs < 0) throw UsageError("--epochs must be >= 0");
  if (cfg.batch < 1) throw UsageError("--batch must be >= 1");
  if (!(cfg.lr >= 0)) throw UsageError("--lr must be >= 0");
}

inline int cmd_train_classifier(const RunConfig& cfg, std::ostream& out) {
  require_file(cfg.manifest, "manifest");
  require_parent(cfg.out, "out");
  if (!cfg.report.empty()) require_parent(cfg.report, "report");
  if (!cfg.spec.empty()) require_file(cfg.spec, "spec");
  check_training_flags(cfg);

  const CnnSpec spec = cfg.spec.empty() ? CnnSpec{} : load_cnn_spec(cfg.spec);
  const Manifest m = load_manifest(cfg.manifest);
  const fs::path base = fs::path(cfg.manifest).parent_path();
  const auto train = load_split(m, Split::Train, spec.input_side, base);
  const auto val = load_split(m, Split::Val, spec.input_side, base);

  Cnn model(spec, cfg.seed);
  TrainOptions opt;
  opt.epochs = cfg.epochs;
  opt.learning_rate = cfg.lr;
  opt.batch_size = cfg.batch;
  opt.momentum = cfg.momentum;
  opt.seed = cfg.seed;
  opt.augmentation = augmentation_for(cfg, spec.input_side, model.normalization());
  const TrainReport report = train_classifier(model, train, val, opt);
  print_epochs(report, out);
  save_model(model, cfg.out);
  if (!cfg.report.empty()) write_text(cfg.report, train_report_json(report, notes_for(cfg)).dump(2) + "\n");
  out << "saved model (" << model.parameter_count() << " parameters) to " << cfg.out << '\n';
  return 0;
}

inline int cmd_distill(const RunConfig& cfg, std::ostream& out) {
  require_file(cfg.teacher, "teacher");
  require_file(cfg.student_spec, "student-spec");
  require_file(cfg.manifest, "manifest");
  require_parent(cfg.out, "out");
  if (!cfg.report.empty()) require_parent(cfg.report, "report");
  check_training_flags(cfg);
  DistillConfig kd{cfg.temperature, cfg.alpha, cfg.epochs, cfg.lr, cfg.batch};
  try {
    validate(kd);
  } catch (const ConfigError& ex) {
    throw UsageError(ex.what());
  }

  const Cnn teacher = load_model(cfg.teacher);
  Cnn student(load_cnn_spec(cfg.student_spec), cfg.seed, teacher.normalization());
  const int side = student.spec().input_side;
  if (teacher.spec().input_side != side)
    throw UsageError("teacher and student input sides differ (" + std::to_string(teacher.spec().input_side) + " vs " +
                     std::to_string(side) + ")");
  const Manifest m = load_manifest(cfg.manifest);
  const fs::path base = fs::path(cfg.manifest).parent_path();
  const auto train = load_split(m, Split::Train, side, base);
  const auto val = load_split(m, Split::Val, side, base);

  TrainOptions opt;
  opt.momentum = cfg.momentum;
  opt.seed = cfg.seed;
  opt.augmentation = augmentation_for(cfg, side, teacher.normalization());
  const TrainReport report = distill(student, teacher, train, val, kd, opt);
  print_epochs(report, out);
  save_model(student, cfg.out);
  if (!cfg.report.empty()) write_text(cfg.report, train_report_json(report, notes_for(cfg)).dump(2) + "\n");
  out << "student/teacher parameters: " << report.parameter_count << " / " << *report.teacher_parameter_count
      << " (ratio " << std::setprecision(4) << *report.student_teacher_ratio() << ")\n";
  return 0;
}

inline int cmd_eval_classifier(const RunConfig& cfg, std::ostream& out) {
  require_file(cfg.model, "model");
  require_file(cfg.manifest, "manifest");
  if (!cfg.report.empty()) require_parent(cfg.report, "report");
  Split split;
  try {
    split = split_from_name(cfg.split);
  } catch (const InvalidInput& ex) {
    throw UsageError(std::string("--split: ") + ex.what());
  }
  const Cnn model = load_model(cfg.model);
  const Manifest m = load_manifest(cfg.manifest);
  const auto data = load_split(m, split, model.spec().input_side, fs::path(cfg.manifest).parent_path());
  if (data.empty()) throw InvalidInput("split '" + cfg.split + "' is empty");

  std::vector<int> predictions, labels;
  for (const auto& s : data) {
    predictions.push_back(argmax(model.predict_logits(std::span(&s.image, 1)).front()));
    labels.push_back(static_cast<int>(s.label));
  }
  MetricsReport report = classify_metrics(predictions, labels, kMaskClassCount);
  report.hardware = cfg.hardware;
  report.notes = notes_for(cfg);
  out << report_to_string(report);
  if (!cfg.report.empty()) write_report(report, cfg.report);
  return 0;
}

inline int cmd_eval_detector(const RunConfig& cfg, std::ostream& out) {
  require_file(cfg.dets, "dets");
  require_file(cfg.gts, "gts");
  if (!cfg.report.empty()) require_parent(cfg.report, "report");
  if (!(cfg.iou > 0 && cfg.iou < 1)) throw UsageError("--iou must be in (0,1)");
  if (cfg.classes < 1) throw UsageError("--classes must be >= 1");

  const auto dets = read_detections(cfg.dets, true);
  std::vector<GroundTruth> gts;
  for (auto& r : read_detections(cfg.gts, false)) gts.push_back({r.image_id, r.det});
  MetricsReport report = detection_report(dets, gts, cfg.classes, cfg.iou);
  report.hardware = cfg.hardware;
  report.notes = notes_for(cfg);
  out << report_to_string(report);
  if (!cfg.report.empty()) write_report(report, cfg.report);
  return 0;
}

inline int cmd_bench(const RunConfig& cfg, std::ostream& out) {
  if (!cfg.report.empty()) require_parent(cfg.report, "report");
  if (cfg.inputs < 1) throw UsageError("--inputs must be >= 1");
  if (cfg.repeats < 1) throw UsageError("--repeats must be >= 1");
  if (cfg.warmup < 0) throw UsageError("--warmup must be >= 0");

  Rng rng(cfg.seed);
  std::vector<Image> inputs;
  for (int i = 0; i < cfg.inputs; ++i) {
    Image img(128, 128);
    for (float& v : img.pixels()) v = static_cast<float>(index_below(rng, 256));
    inputs.push_back(std::move(img));
  }

  MetricsReport report;
  BenchResult result;
  if (!cfg.model.empty()) {
    require_file(cfg.model, "model");
    const Cnn model = load_model(cfg.model);
    report.task = Task::Classification;
    result = bench_inference<Image>(
        inputs, [&](const Image& img) { return model.predict_logits(std::span(&img, 1)); }, cfg.warmup, cfg.repeats,
        cfg.hardware);
  } else {
    auto detector = make_detector(cfg.detector);
    report.task = Task::Detection;
    result = bench_inference<Image>(
        inputs, [&](const Image& img) { return detector->detect(img); }, cfg.warmup, cfg.repeats, cfg.hardware);
  }
  report.inferences_per_sec = result.inferences_per_sec;
  report.hardware = result.hardware;
  report.notes = notes_for(cfg);
  out << "inferences/sec: " << std::fixed << std::setprecision(2) << result.inferences_per_sec << " ("
      << result.hardware << ")\n";
  if (!cfg.report.empty()) write_report(report, cfg.report);
  return 0;
}

inline int cmd_run(const RunConfig& cfg, std::ostream& out) {
  require(cfg.source, "source");
  if (!cfg.report.empty()) require_parent(cfg.report, "report");
  PipelineConfig pc;
  try {
    pc.mode = mode_from_name(cfg.pipeline);
    pc.conf_threshold = cfg.conf;
    pc.nms_threshold = cfg.nms;
    pc.crop_margin = cfg.margin;
    validate(pc);
  } catch (const ConfigError& ex) {
    throw UsageError(ex.what());
  }

  auto source = make_source(cfg.source);
  auto detector = make_detector(cfg.detector);
  std::unique_ptr<ClassifierBackend> classifier;
  if (pc.mode == PipelineMode::TwoStage) classifier = make_classifier(cfg.classifier);
  std::unique_ptr<DirectorySink> sink;
  if (!cfg.out.empty()) sink = std::make_unique<DirectorySink>(cfg.out);

  const VideoRun run = run_video(*source, pc, *detector, classifier.get(), sink.get());
  const std::string text = run_report_to_string(run.summary, notes_for(cfg));
  if (!cfg.report.empty()) write_text(cfg.report, text);
  out << text;
  return 0;
}

// ---------------------------------------------------------------------------
// entry point

/// Runs the CLI on argv-style arguments (args[0] is the program name).
/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"maskwatch: face-mask detection toolkit (dataset curation, training, distillation, evaluation, video)"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "flat key = value config file; flags override it");
  app.fallthrough();  // --config may follow the subcommand

  std::map<std::string, std::string> given;
  std::vector<std::pair<CLI::Option*, std::string>> bound;
  auto add = [&](CLI::App* sub, const std::string& key, const std::string& help) {
    bound.emplace_back(sub->add_option("--" + key, given[key], help), key);
  };
  auto add_common = [&](CLI::App* sub) {
    add(sub, "seed", "random seed (default: MASKWATCH_SEED or 0)");
    add(sub, "hardware", "hardware descriptor recorded in reports");
  };

  auto* dataset = app.add_subcommand("dataset", "dataset curation");
  dataset->require_subcommand(1)->fallthrough();
  auto* build = dataset->add_subcommand("build", "build a manifest from an image tree");
  add(build, "root", "classification root with correct/ incorrect/ none/ subdirectories");
  add(build, "images", "detection images directory");
  add(build, "labels", "detection box label directory (<stem>.txt)");
  add(build, "resized", "write side x side copies here and reference them");
  add(build, "side", "resize side in pixels (128)");
  add(build, "ratios", "train,val,test ratios (0.8,0.1,0.1)");
  add(build, "out", "output manifest");
  add_common(build);

  auto* split = dataset->add_subcommand("split", "reassign train/val/test splits");
  add(split, "manifest", "input manifest");
  add(split, "ratios", "train,val,test ratios (0.8,0.1,0.1)");
  add(split, "out", "output manifest");
  add_common(split);

  auto* pseudo = dataset->add_subcommand("pseudo-label", "turn confident detections into box labels");
  add(pseudo, "images", "directory of images to label");
  add(pseudo, "detector", "detector backend: scripted[:ms] or replay:<file>");
  add(pseudo, "threshold", "keep detections with confidence strictly above this (0.9)");
  add(pseudo, "class", "label for kept boxes: positive|negative|correct|incorrect|none");
  add(pseudo, "labels", "also write <stem>.txt label files here");
  add(pseudo, "ratios", "train,val,test ratios (0.8,0.1,0.1)");
  add(pseudo, "out", "output manifest");
  add_common(pseudo);

  auto* train = app.add_subcommand("train", "model training");
  train->require_subcommand(1)->fallthrough();
  auto* train_cls = train->add_subcommand("classifier", "train the CNN classifier");
  for (const auto& [k, h] : std::vector<std::pair<std::string, std::string>>{
           {"manifest", "classification manifest"},
           {"spec", "CNN spec JSON (default architecture if omitted)"},
           {"epochs", "epochs (10)"},
           {"lr", "learning rate (0.01)"},
           {"batch", "batch size (32)"},
           {"momentum", "SGD momentum (0.9)"},
           {"augment", "apply training augmentation (true)"},
           {"out", "output model file"},
           {"report", "training log JSON"}})
    add(train_cls, k, h);
  add_common(train_cls);

  auto* distill_cmd = app.add_subcommand("distill", "distill a teacher model into a student CNN");
  for (const auto& [k, h] : std::vector<std::pair<std::string, std::string>>{
           {"teacher", "teacher model file"},
           {"student-spec", "student CNN spec JSON"},
           {"manifest", "classification manifest"},
           {"temperature", "softening temperature (4)"},
           {"alpha", "hard-label weight (0.1)"},
           {"epochs", "epochs (10)"},
           {"lr", "learning rate (0.01)"},
           {"batch", "batch size (32)"},
           {"momentum", "SGD momentum (0.9)"},
           {"augment", "apply training augmentation (true)"},
           {"out", "output student model"},
           {"report", "training log JSON"}})
    add(distill_cmd, k, h);
  add_common(distill_cmd);

  auto* eval = app.add_subcommand("eval", "evaluation");
  eval->require_subcommand(1)->fallthrough();
  auto* eval_cls = eval->add_subcommand("classifier", "accuracy and confusion matrix");
  add(eval_cls, "model", "model file");
  add(eval_cls, "manifest", "classification manifest");
  add(eval_cls, "split", "split to evaluate (test)");
  add(eval_cls, "report", "metrics report JSON");
  add_common(eval_cls);
  auto* eval_det = eval->add_subcommand("detector", "AP per class and mAP");
  add(eval_det, "dets", "detections: <image_id> <class> <conf> <cx> <cy> <w> <h>");
  add(eval_det, "gts", "ground truth: <image_id> <class> <cx> <cy> <w> <h>");
  add(eval_det, "iou", "IoU match threshold (0.5)");
  add(eval_det, "classes", "number of classes (2)");
  add(eval_det, "report", "metrics report JSON");
  add_common(eval_det);

  auto* bench = app.add_subcommand("bench", "model throughput");
  add(bench, "model", "classifier model file (otherwise --detector is benchmarked)");
  add(bench, "detector", "detector backend");
  add(bench, "inputs", "number of synthetic inputs (32)");
  add(bench, "warmup", "untimed passes (1)");
  add(bench, "repeats", "timed passes (5)");
  add(bench, "report", "metrics report JSON");
  add_common(bench);

  auto* run = app.add_subcommand("run", "run a pipeline over a video");
  for (const auto& [k, h] : std::vector<std::pair<std::string, std::string>>{
           {"pipeline", "two-stage|single-shot"},
           {"source", "frame directory or synthetic:N[:WxH]"},
           {"out", "directory for annotated frames"},
           {"report", "run report JSON"},
           {"conf", "detection confidence threshold (0.25)"},
           {"nms", "NMS IoU threshold (0.45)"},
           {"margin", "face crop margin (0.2)"},
           {"detector", "detector backend: scripted[:ms] or replay:<file>"},
           {"classifier", "classifier: fixed:<class>[:ms], model:<path>"}})
    add(run, k, h);
  add_common(run);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("maskwatch");

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& ex) {
    if (args.size() > 1 && !args[1].starts_with("-") && !app.get_subcommand_no_throw(args[1])) {
      err << "maskwatch: usage error: unknown subcommand '" << args[1] << "' (valid subcommands: " << kSubcommands
          << ")\n";
      return 2;
    }
    std::string where = "maskwatch";
    for (auto* sub = &app; !sub->get_subcommands().empty();) {
      sub = sub->get_subcommands().front();
      where += " " + sub->get_name();
    }
    err << where << ": usage error: " << ex.what() << " (valid subcommands: " << kSubcommands
        << "; see --help)\n";
    return 2;
  }

  std::string name;
  std::vector<CLI::App*> chain;
  for (auto* sub = &app; !sub->get_subcommands().empty();) {
    sub = sub->get_subcommands().front();
    chain.push_back(sub);
    name += (name.empty() ? "" : " ") + sub->get_name();
  }

  RunConfig cfg;
  try {
    cfg = load_config(config_path);
    cfg.subcommand = name;
    for (const auto& [opt, key] : bound)
      if (opt->count() > 0) cfg.set(key, given[key]);
  } catch (const Error& ex) {
    err << name << ": usage error: " << ex.what() << '\n';
    return 2;
  }

  try {
    if (name == "dataset build") return cmd_dataset_build(cfg, out);
    if (name == "dataset split") return cmd_dataset_split(cfg, out);
    if (name == "dataset pseudo-label") return cmd_dataset_pseudo_label(cfg, out, err);
    if (name == "train classifier") return cmd_train_classifier(cfg, out);
    if (name == "distill") return cmd_distill(cfg, out);
    if (name == "eval classifier") return cmd_eval_classifier(cfg, out);
    if (name == "eval detector") return cmd_eval_detector(cfg, out);
    if (name == "bench") return cmd_bench(cfg, out);
    if (name == "run") return cmd_run(cfg, out);
  } catch (const UsageError& ex) {
    err << name << ": usage error: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    err << name << ": error: " << ex.what() << '\n';
    return 1;
  }
  err << name << ": usage error: unknown subcommand (valid subcommands: " << kSubcommands << ")\n";
  return 2;
}

}  // namespace maskwatch::cli
