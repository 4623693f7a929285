#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "augment.hpp"
#include "backend.hpp"
#include "detect.hpp"
#include "errors.hpp"
#include "image.hpp"
#include "nn.hpp"
#include "types.hpp"

namespace maskwatch {

enum class PipelineMode { TwoStage, SingleShot };

inline std::string_view mode_name(PipelineMode m) { return m == PipelineMode::TwoStage ? "two-stage" : "single-shot"; }

inline PipelineMode mode_from_name(std::string_view s) {
  if (s == "two-stage") return PipelineMode::TwoStage;
  if (s == "single-shot") return PipelineMode::SingleShot;
  throw ConfigError("unknown pipeline '" + std::string(s) + "' (expected two-stage or single-shot)");
}

struct PipelineConfig {
  PipelineMode mode = PipelineMode::SingleShot;
  double crop_margin = 0.2;
  int classifier_input_side = 128;
  double conf_threshold = 0.25;
  double nms_threshold = 0.45;
  std::map<int, Rgb> palette;  // empty: default per class space
};

inline void validate(const PipelineConfig& c) {
  if (!(c.crop_margin >= 0)) throw ConfigError("crop margin must be >= 0");
  if (c.classifier_input_side < 1) throw ConfigError("classifier input side must be >= 1");
  if (!(c.conf_threshold > 0 && c.conf_threshold < 1)) throw ConfigError("confidence threshold must be in (0,1)");
  if (!(c.nms_threshold > 0 && c.nms_threshold < 1)) throw ConfigError("NMS threshold must be in (0,1)");
}

inline ClassSpace class_space(PipelineMode m) { return m == PipelineMode::TwoStage ? ClassSpace::Mask3 : ClassSpace::Det2; }

inline Rgb default_color(ClassSpace space, int cls) {
  static constexpr Rgb green{0, 200, 0}, amber{255, 170, 0}, red{230, 0, 0};
  if (space == ClassSpace::Mask3) return cls == 0 ? green : cls == 1 ? amber : red;
  return cls == 0 ? green : red;
}

// ---------------------------------------------------------------------------
// Face cropping

/// Pixel bounds of `box` grown by `margin` of its size on each side and
/// clipped to the frame.
inline PixelRect crop_region(int frame_h, int frame_w, const BBox& box, double margin) {
  if (frame_h < 1 || frame_w < 1) throw InvalidInput("crop: empty frame");
  if (!(margin >= 0)) throw InvalidInput("crop: margin must be >= 0");
  const double hw = box.w * (1 + 2 * margin) / 2, hh = box.h * (1 + 2 * margin) / 2;
  const double x0 = std::max(0.0, box.cx - hw), x1 = std::min(1.0, box.cx + hw);
  const double y0 = std::max(0.0, box.cy - hh), y1 = std::min(1.0, box.cy + hh);
  if (!(x1 > x0 && y1 > y0)) throw InvalidInput("crop: box lies outside the frame");
  PixelRect r{static_cast<int>(std::floor(x0 * frame_w + 1e-9)), static_cast<int>(std::floor(y0 * frame_h + 1e-9)),
              static_cast<int>(std::ceil(x1 * frame_w - 1e-9)), static_cast<int>(std::ceil(y1 * frame_h - 1e-9))};
  r.x0 = std::clamp(r.x0, 0, frame_w - 1);
  r.y0 = std::clamp(r.y0, 0, frame_h - 1);
  r.x1 = std::clamp(r.x1, r.x0 + 1, frame_w);
  r.y1 = std::clamp(r.y1, r.y0 + 1, frame_h);
  return r;
}

inline Image crop_face(const Image& frame, const BBox& box, double margin, int side = 128) {
  const PixelRect r = crop_region(frame.height(), frame.width(), box, margin);
  return resize_image(crop(frame, r.x0, r.y0, r.x1, r.y1), side);
}

// ---------------------------------------------------------------------------
// Per-frame pipelines

struct FrameResult {
  std::size_t frame_index = 0;
  ClassSpace space = ClassSpace::Det2;
  std::vector<Detection> detections;  // cls is in `space`
  double latency_ms = 0;
};

inline void check_result(const FrameResult& r) {
  for (const auto& d : r.detections) {
    if (d.cls < 0 || d.cls >= class_count(r.space)) throw Error("detection class outside the pipeline's class space");
    if (auto why = box_violation(d)) throw Error("pipeline produced invalid box: " + *why);
  }
}

namespace detail {
inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
  return std::max(ms, 1e-6);
}
}  // namespace detail

/// Face detector, crop, 3-class classifier. Each face gets its argmax class
/// and max softmax probability as confidence.
inline FrameResult run_two_stage(const Image& frame, DetectorBackend& face_detector, const ClassifierBackend& classifier,
                                 const PipelineConfig& cfg, std::size_t frame_index = 0) {
  const auto start = std::chrono::steady_clock::now();
  FrameResult r;
  r.frame_index = frame_index;
  r.space = ClassSpace::Mask3;
  const auto faces = detect_frame(face_detector, frame, cfg.conf_threshold, cfg.nms_threshold);
  if (!faces.empty()) {
    std::vector<Image> crops;
    crops.reserve(faces.size());
    for (const auto& f : faces) crops.push_back(crop_face(frame, f, cfg.crop_margin, cfg.classifier_input_side));
    std::vector<Logits> logits;
    try {
      logits = classifier.predict_logits(crops);
    } catch (const BackendError&) {
      throw;
    } catch (const std::exception& ex) {
      throw BackendError(classifier.name(), ex.what());
    }
    if (logits.size() != faces.size()) throw BackendError(classifier.name(), "returned wrong number of logit rows");
    for (std::size_t i = 0; i < faces.size(); ++i) {
      const auto p = softmax(logits[i]);
      Detection d = faces[i];
      d.cls = argmax(logits[i]);
      d.conf = p[d.cls];
      r.detections.push_back(d);
    }
  }
  r.latency_ms = detail::elapsed_ms(start);
  check_result(r);
  return r;
}

inline FrameResult run_single_shot(const Image& frame, DetectorBackend& detector, const PipelineConfig& cfg,
                                   std::size_t frame_index = 0) {
  const auto start = std::chrono::steady_clock::now();
  FrameResult r;
  r.frame_index = frame_index;
  r.space = ClassSpace::Det2;
  r.detections = detect_frame(detector, frame, cfg.conf_threshold, cfg.nms_threshold);
  r.latency_ms = detail::elapsed_ms(start);
  check_result(r);
  return r;
}

inline void annotate(Image& frame, const FrameResult& r, const PipelineConfig& cfg) {
  for (const auto& d : r.detections) {
    auto it = cfg.palette.find(d.cls);
    const Rgb color = it != cfg.palette.end() ? it->second : default_color(r.space, d.cls);
    const int x0 = static_cast<int>(std::lround(d.x0() * frame.width()));
    const int y0 = static_cast<int>(std::lround(d.y0() * frame.height()));
    const int x1 = static_cast<int>(std::lround(d.x1() * frame.width())) - 1;
    const int y1 = static_cast<int>(std::lround(d.y1() * frame.height())) - 1;
    draw_rect(frame, x0, y0, x1, y1, color);
    std::ostringstream label;
    label << std::fixed << std::setprecision(2) << d.conf;
    draw_text(frame, x0 + 3, y0 + 3, label.str(), color);
  }
}

// ---------------------------------------------------------------------------
// FPS

/// Rolling frame-rate estimate over the most recent `window` timestamps.
class FpsMeter {
 public:
  explicit FpsMeter(std::size_t window = 30) : window_(window) {
    if (window < 2) throw ConfigError("FPS window must be >= 2");
  }

  /// Records a timestamp in seconds. Returns nullopt until two are present.
  std::optional<double> update(double now_seconds) {
    if (!std::isfinite(now_seconds)) throw InvalidInput("FPS timestamp must be finite");
    if (!stamps_.empty() && !(now_seconds > stamps_.back()))
      throw InvalidInput("FPS timestamps must be strictly increasing");
    stamps_.push_back(now_seconds);
    if (stamps_.size() > window_) stamps_.pop_front();
    return estimate();
  }

  std::optional<double> estimate() const {
    if (stamps_.size() < 2) return std::nullopt;
    return static_cast<double>(stamps_.size() - 1) / (stamps_.back() - stamps_.front());
  }

  std::size_t size() const noexcept { return stamps_.size(); }

 private:
  std::size_t window_;
  std::deque<double> stamps_;
};

inline std::optional<double> fps_update(FpsMeter& meter, double now_seconds) { return meter.update(now_seconds); }

// ---------------------------------------------------------------------------
// Frame sources and sinks

struct FrameRead {
  std::size_t index = 0;
  std::string id;
  std::optional<Image> image;  // empty when the frame failed to decode
  std::string error;
};

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  /// Next frame in order, or nullopt at end of stream.
  virtual std::optional<FrameRead> next() = 0;
};

/// Numbered PNM images in a directory, ordered by the last digit run in the
/// file name.
class DirectorySource final : public FrameSource {
 public:
  explicit DirectorySource(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw NotFoundError(dir.string() + ": not a readable frame directory");
    static const std::regex digits(R"((\d+)(?!.*\d))");
    std::vector<std::pair<long long, std::filesystem::path>> frames;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension().string();
      if (ext != ".ppm" && ext != ".pgm" && ext != ".pnm") continue;
      std::smatch m;
      const std::string stem = entry.path().stem().string();
      if (!std::regex_search(stem, m, digits)) continue;
      frames.emplace_back(std::stoll(m[1].str()), entry.path());
    }
    std::sort(frames.begin(), frames.end());
    for (auto& f : frames) paths_.push_back(std::move(f.second));
  }

  std::size_t size() const noexcept { return paths_.size(); }

  std::optional<FrameRead> next() override {
    if (pos_ >= paths_.size()) return std::nullopt;
    FrameRead r;
    r.index = pos_;
    r.id = paths_[pos_].stem().string();
    try {
      r.image = read_pnm(paths_[pos_]);
    } catch (const Error& ex) {
      r.error = ex.what();
    }
    ++pos_;
    return r;
  }

 private:
  std::vector<std::filesystem::path> paths_;
  std::size_t pos_ = 0;
};

/// Deterministic synthetic clip: a gray background with a square "face"
/// drifting left to right.
class SyntheticSource final : public FrameSource {
 public:
  SyntheticSource(std::size_t frames, int width = 320, int height = 240) : frames_(frames), w_(width), h_(height) {
    if (width < 8 || height < 8) throw InvalidInput("synthetic frames must be at least 8x8");
  }

  std::optional<FrameRead> next() override {
    if (pos_ >= frames_) return std::nullopt;
    Image img = solid_image(h_, w_, {90, 90, 90});
    const int side = std::min(w_, h_) / 3;
    const int x0 = static_cast<int>((w_ - side) * (frames_ > 1 ? static_cast<double>(pos_) / (frames_ - 1) : 0.5));
    const int y0 = (h_ - side) / 2;
    for (int y = y0; y < y0 + side; ++y)
      for (int x = x0; x < x0 + side; ++x) {
        img.at(y, x, 0) = 220;
        img.at(y, x, 1) = 180;
        img.at(y, x, 2) = 150;
      }
    FrameRead r{pos_, std::to_string(pos_), std::move(img), {}};
    ++pos_;
    return r;
  }

 private:
  std::size_t frames_;
  int w_, h_;
  std::size_t pos_ = 0;
};

class FrameSink {
 public:
  virtual ~FrameSink() = default;
  virtual void write(std::size_t index, const Image& frame) = 0;
};

class DirectorySink final : public FrameSink {
 public:
  explicit DirectorySink(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  void write(std::size_t index, const Image& frame) override {
    std::ostringstream name;
    name << "frame_" << std::setw(6) << std::setfill('0') << index << ".ppm";
    write_ppm(frame, dir_ / name.str());
    ++written_;
  }
  std::size_t written() const noexcept { return written_; }

 private:
  std::filesystem::path dir_;
  std::size_t written_ = 0;
};

// ---------------------------------------------------------------------------
// Video runs

struct VideoSummary {
  PipelineMode mode = PipelineMode::SingleShot;
  std::size_t frames = 0;  // processed
  std::size_t dropped = 0;
  double mean_fps = 0;
  std::vector<double> latencies_ms;
  std::map<int, std::size_t> class_counts;
};

struct VideoRun {
  std::vector<FrameResult> results;
  VideoSummary summary;
};

/// Linear-interpolated percentile, q in [0, 100].
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw InvalidInput("percentile of empty set");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Processes frames in order, one at a time. Undecodable frames are skipped and
/// counted as dropped. Mean FPS is processed frames over loop wall-clock time.
inline VideoRun run_video(FrameSource& source, const PipelineConfig& cfg, DetectorBackend& detector,
                          const ClassifierBackend* classifier = nullptr, FrameSink* sink = nullptr,
                          const std::function<void(const FrameResult&)>& on_result = {}) {
  validate(cfg);
  if (cfg.mode == PipelineMode::TwoStage && !classifier) throw ConfigError("two-stage pipeline needs a classifier");

  VideoRun run;
  run.summary.mode = cfg.mode;
  bool any = false;
  const auto start = std::chrono::steady_clock::now();
  while (auto read = source.next()) {
    any = true;
    if (!read->image) {
      ++run.summary.dropped;
      continue;
    }
    const auto frame_start = std::chrono::steady_clock::now();
    detector.set_frame_id(read->id);
    FrameResult r = cfg.mode == PipelineMode::TwoStage
                        ? run_two_stage(*read->image, detector, *classifier, cfg, read->index)
                        : run_single_shot(*read->image, detector, cfg, read->index);
    if (sink) {
      Image annotated = std::move(*read->image);
      annotate(annotated, r, cfg);
      sink->write(read->index, annotated);
    }
    r.latency_ms = detail::elapsed_ms(frame_start);
    for (const auto& d : r.detections) ++run.summary.class_counts[d.cls];
    run.summary.latencies_ms.push_back(r.latency_ms);
    if (on_result) on_result(r);
    run.results.push_back(std::move(r));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!any) throw InvalidInput("video source yielded no frames");

  run.summary.frames = run.results.size();
  run.summary.mean_fps = run.summary.frames == 0 ? 0.0 : static_cast<double>(run.summary.frames) / std::max(secs, 1e-12);
  return run;
}

// ---------------------------------------------------------------------------
// Run report: JSON with the run summary.

inline constexpr std::array<std::string_view, 9> kRunReportKeys = {
    "mode", "frames", "dropped", "mean_fps", "latency_ms_p50", "latency_ms_p95", "class_space", "class_counts", "notes"};

inline std::string run_report_to_string(const VideoSummary& s, const std::string& notes = {}) {
  const ClassSpace space = class_space(s.mode);
  nlohmann::ordered_json j;
  j["mode"] = mode_name(s.mode);
  j["frames"] = s.frames;
  j["dropped"] = s.dropped;
  j["mean_fps"] = s.mean_fps;
  j["latency_ms_p50"] = s.latencies_ms.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(percentile(s.latencies_ms, 50));
  j["latency_ms_p95"] = s.latencies_ms.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(percentile(s.latencies_ms, 95));
  auto names = nlohmann::ordered_json::array();
  nlohmann::ordered_json counts = nlohmann::ordered_json::object();
  for (int c = 0; c < class_count(space); ++c) {
    names.push_back(class_name(space, c));
    auto it = s.class_counts.find(c);
    counts[std::string(class_name(space, c))] = it == s.class_counts.end() ? 0 : it->second;
  }
  j["class_space"] = names;
  j["class_counts"] = counts;
  j["notes"] = notes;
  return j.dump(2) + "\n";
}

/// Checks a run report against its schema; returns the parsed document.
inline nlohmann::json validate_run_report(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& ex) {
    throw FormatError(std::string("malformed run report: ") + ex.what());
  }
  if (!j.is_object()) throw FormatError("run report must be an object");
  for (auto key : kRunReportKeys)
    if (!j.contains(std::string(key))) throw FormatError("run report missing required key '" + std::string(key) + "'");
  for (const auto& [key, _] : j.items())
    if (std::find(kRunReportKeys.begin(), kRunReportKeys.end(), key) == kRunReportKeys.end())
      throw FormatError("run report has unknown key '" + key + "'");
  if (!j["mode"].is_string()) throw FormatError("run report 'mode' must be a string");
  const PipelineMode mode = mode_from_name(j["mode"].get<std::string>());
  if (!j["frames"].is_number_unsigned() || !j["dropped"].is_number_unsigned())
    throw FormatError("run report frame counts must be non-negative integers");
  if (!j["mean_fps"].is_number() || j["mean_fps"].get<double>() < 0) throw FormatError("run report 'mean_fps' invalid");
  for (const char* key : {"latency_ms_p50", "latency_ms_p95"})
    if (!(j[key].is_null() || (j[key].is_number() && j[key].get<double>() > 0)))
      throw FormatError(std::string("run report '") + key + "' invalid");
  const ClassSpace space = class_space(mode);
  if (!j["class_space"].is_array() || static_cast<int>(j["class_space"].size()) != class_count(space))
    throw FormatError("run report class_space does not match mode");
  for (int c = 0; c < class_count(space); ++c)
    if (j["class_space"][c] != class_name(space, c)) throw FormatError("run report class_space names do not match mode");
  if (!j["class_counts"].is_object() || static_cast<int>(j["class_counts"].size()) != class_count(space))
    throw FormatError("run report class_counts does not match class_space");
  if (!j["notes"].is_string()) throw FormatError("run report 'notes' must be a string");
  return j;
}

}  // namespace maskwatch
