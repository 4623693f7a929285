#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "detect.hpp"
#include "errors.hpp"
#include "types.hpp"

namespace maskwatch {

/// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  std::vector<std::vector<long long>> counts;

  static ConfusionMatrix zeros(int classes) {
    return {std::vector<std::vector<long long>>(classes, std::vector<long long>(classes, 0))};
  }
  int classes() const noexcept { return static_cast<int>(counts.size()); }
  long long total() const {
    long long t = 0;
    for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
    return t;
  }
  long long trace() const {
    long long t = 0;
    for (int i = 0; i < classes(); ++i) t += counts[i][i];
    return t;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

enum class Task { Classification, Detection };

struct MetricsReport {
  Task task = Task::Classification;
  std::vector<std::optional<double>> per_class_accuracy;  // nullopt: class absent
  std::optional<double> total_accuracy;
  ConfusionMatrix confusion;
  std::vector<std::optional<double>> ap_per_class;  // nullopt: no ground truth
  std::optional<double> map;
  std::optional<double> inferences_per_sec;
  std::string hardware;
  std::string notes;

  bool operator==(const MetricsReport&) const = default;
};

// ---------------------------------------------------------------------------
// Classification

inline MetricsReport classify_metrics(std::span<const int> predictions, std::span<const int> labels, int classes) {
  if (classes < 1) throw InvalidInput("class count must be >= 1");
  if (predictions.size() != labels.size()) throw InvalidInput("predictions and labels differ in length");
  if (labels.empty()) throw InvalidInput("no samples to evaluate");

  MetricsReport r;
  r.task = Task::Classification;
  r.confusion = ConfusionMatrix::zeros(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes || predictions[i] < 0 || predictions[i] >= classes)
      throw InvalidInput("class id out of range at index " + std::to_string(i));
    ++r.confusion.counts[labels[i]][predictions[i]];
  }
  for (int c = 0; c < classes; ++c) {
    const auto& row = r.confusion.counts[c];
    const long long n = std::accumulate(row.begin(), row.end(), 0LL);
    r.per_class_accuracy.push_back(n == 0 ? std::nullopt
                                          : std::optional(static_cast<double>(row[c]) / static_cast<double>(n)));
  }
  r.total_accuracy = static_cast<double>(r.confusion.trace()) / static_cast<double>(r.confusion.total());
  return r;
}

// ---------------------------------------------------------------------------
// Detection AP

struct GroundTruth {
  std::string image_id;
  BBox box;
};

struct PrPoint {
  double recall;
  double precision;
};

/// Precision/recall after each detection of class `cls` in confidence order,
/// with greedy matching to the highest-IoU unmatched ground truth of the same
/// image. Returns nullopt when the class has no ground truth.
inline std::optional<std::vector<PrPoint>> pr_curve(std::span<const ImageDetection> dets,
                                                    std::span<const GroundTruth> gts, int cls, double iou_thr = 0.5) {
  if (!(iou_thr > 0.0 && iou_thr < 1.0)) throw ConfigError("IoU threshold must be in (0,1)");
  std::map<std::string, std::vector<std::size_t>> gt_by_image;
  std::size_t npos = 0;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gts[g].box.cls != cls) continue;
    gt_by_image[gts[g].image_id].push_back(g);
    ++npos;
  }
  if (npos == 0) return std::nullopt;

  std::vector<std::size_t> order;
  for (std::size_t d = 0; d < dets.size(); ++d)
    if (dets[d].det.cls == cls) order.push_back(d);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].det.conf > dets[b].det.conf; });

  std::vector<bool> matched(gts.size(), false);
  std::vector<PrPoint> curve;
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& d = dets[order[rank]];
    std::optional<std::size_t> best;
    double best_iou = -1;
    if (auto it = gt_by_image.find(d.image_id); it != gt_by_image.end()) {
      for (std::size_t g : it->second) {
        if (matched[g]) continue;
        const double o = iou(d.det, gts[g].box);
        if (o >= iou_thr && o > best_iou) {
          best_iou = o;
          best = g;
        }
      }
    }
    if (best) {
      matched[*best] = true;
      ++tp;
    }
    curve.push_back({static_cast<double>(tp) / static_cast<double>(npos),
                     static_cast<double>(tp) / static_cast<double>(rank + 1)});
  }
  return curve;
}

/// All-point interpolated area under the precision envelope.
inline double average_precision(std::span<const PrPoint> curve) {
  std::vector<double> rec{0.0}, prec{0.0};
  for (const auto& p : curve) {
    rec.push_back(p.recall);
    prec.push_back(p.precision);
  }
  rec.push_back(1.0);
  prec.push_back(0.0);
  for (std::size_t i = prec.size() - 1; i > 0; --i) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0;
  for (std::size_t i = 1; i < rec.size(); ++i)
    if (rec[i] != rec[i - 1]) ap += (rec[i] - rec[i - 1]) * prec[i];
  return ap;
}

inline std::optional<double> ap_at_iou(std::span<const ImageDetection> dets, std::span<const GroundTruth> gts, int cls,
                                       double iou_thr = 0.5) {
  auto curve = pr_curve(dets, gts, cls, iou_thr);
  if (!curve) return std::nullopt;
  return average_precision(*curve);
}

/// Arithmetic mean over the classes that have a defined AP.
inline double mean_ap(std::span<const std::optional<double>> per_class) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& ap : per_class)
    if (ap) {
      sum += *ap;
      ++n;
    }
  if (n == 0) throw InvalidInput("no class has a defined AP");
  return sum / static_cast<double>(n);
}

struct MapResult {
  std::vector<std::optional<double>> per_class;
  double mean = 0;
};

inline MapResult map_at_iou(std::span<const ImageDetection> dets, std::span<const GroundTruth> gts, int classes,
                            double iou_thr = 0.5) {
  MapResult r;
  for (int c = 0; c < classes; ++c) r.per_class.push_back(ap_at_iou(dets, gts, c, iou_thr));
  r.mean = mean_ap(r.per_class);
  return r;
}

inline MetricsReport detection_report(std::span<const ImageDetection> dets, std::span<const GroundTruth> gts,
                                      int classes, double iou_thr = 0.5) {
  MetricsReport r;
  r.task = Task::Detection;
  auto m = map_at_iou(dets, gts, classes, iou_thr);
  r.ap_per_class = std::move(m.per_class);
  r.map = m.mean;
  return r;
}

// ---------------------------------------------------------------------------
// Throughput

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidInput("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct BenchResult {
  double inferences_per_sec = 0;  // median over timed passes
  std::vector<double> pass_rates;
  std::string hardware;
};

/// Runs `infer` over every input: `warmup` untimed passes, then `repeats`
/// timed passes on the calling thread.
template <class Input, class Fn>
BenchResult bench_inference(std::span<const Input> inputs, Fn&& infer, int warmup, int repeats, std::string hardware) {
  if (inputs.empty()) throw InvalidInput("bench: no inputs");
  if (repeats < 1) throw ConfigError("bench: repeats must be >= 1");
  if (warmup < 0) throw ConfigError("bench: warmup must be >= 0");
  for (int w = 0; w < warmup; ++w)
    for (const auto& in : inputs) infer(in);

  BenchResult r;
  r.hardware = std::move(hardware);
  for (int p = 0; p < repeats; ++p) {
    const auto start = std::chrono::steady_clock::now();
    for (const auto& in : inputs) infer(in);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.pass_rates.push_back(static_cast<double>(inputs.size()) / std::max(secs, 1e-12));
  }
  r.inferences_per_sec = median(r.pass_rates);
  return r;
}

// ---------------------------------------------------------------------------
// Report files: JSON with a fixed key order.

inline constexpr std::array<std::string_view, 9> kReportKeys = {
    "task", "per_class_accuracy", "total_accuracy", "confusion", "ap_per_class",
    "map",  "inferences_per_sec", "hardware",       "notes"};

namespace detail {

inline nlohmann::ordered_json optional_list(const std::vector<std::optional<double>>& v) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& x : v) arr.push_back(x ? nlohmann::ordered_json(*x) : nlohmann::ordered_json(nullptr));
  return arr;
}

inline nlohmann::ordered_json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline std::optional<double> read_optional_number(const nlohmann::json& j, const std::string& key) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_number()) throw FormatError("report key '" + key + "' must be a number or null");
  return j.get<double>();
}

inline std::vector<std::optional<double>> read_optional_list(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array()) throw FormatError("report key '" + key + "' must be a list");
  std::vector<std::optional<double>> out;
  for (const auto& x : j) out.push_back(read_optional_number(x, key));
  return out;
}

}  // namespace detail

inline std::string report_to_string(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["task"] = r.task == Task::Classification ? "classification" : "detection";
  j["per_class_accuracy"] = detail::optional_list(r.per_class_accuracy);
  j["total_accuracy"] = detail::optional_number(r.total_accuracy);
  j["confusion"] = r.confusion.counts;
  j["ap_per_class"] = detail::optional_list(r.ap_per_class);
  j["map"] = detail::optional_number(r.map);
  j["inferences_per_sec"] = detail::optional_number(r.inferences_per_sec);
  j["hardware"] = r.hardware;
  j["notes"] = r.notes;
  return j.dump(2) + "\n";
}

/// Enforces the report invariants: accuracy matches the confusion matrix and
/// map matches the mean of the defined per-class APs.
inline void validate(const MetricsReport& r) {
  const int c = r.confusion.classes();
  for (const auto& row : r.confusion.counts) {
    if (static_cast<int>(row.size()) != c) throw FormatError("confusion matrix is not square");
    for (long long v : row)
      if (v < 0) throw FormatError("confusion matrix has a negative entry");
  }
  if (r.confusion.total() > 0) {
    const double expected = static_cast<double>(r.confusion.trace()) / static_cast<double>(r.confusion.total());
    if (!r.total_accuracy || std::abs(*r.total_accuracy - expected) > 1e-12)
      throw FormatError("total_accuracy inconsistent with confusion matrix");
  }
  const bool any_ap = std::any_of(r.ap_per_class.begin(), r.ap_per_class.end(), [](auto& a) { return a.has_value(); });
  if (any_ap) {
    for (const auto& a : r.ap_per_class)
      if (a && (*a < 0 || *a > 1)) throw FormatError("ap_per_class value outside [0,1]");
    if (!r.map || std::abs(*r.map - mean_ap(r.ap_per_class)) > 1e-12)
      throw FormatError("map inconsistent with the mean of ap_per_class");
  } else if (r.map) {
    throw FormatError("map present but no ap_per_class values");
  }
}

inline MetricsReport parse_report(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& ex) {
    throw FormatError(std::string("malformed report: ") + ex.what());
  }
  if (!j.is_object()) throw FormatError("report must be an object");
  for (auto key : kReportKeys)
    if (!j.contains(std::string(key))) throw FormatError("report missing required key '" + std::string(key) + "'");
  for (const auto& [key, _] : j.items())
    if (std::find(kReportKeys.begin(), kReportKeys.end(), key) == kReportKeys.end())
      throw FormatError("report has unknown key '" + key + "'");

  MetricsReport r;
  const auto task = j["task"];
  if (task == "classification")
    r.task = Task::Classification;
  else if (task == "detection")
    r.task = Task::Detection;
  else
    throw FormatError("report key 'task' must be classification or detection");
  r.per_class_accuracy = detail::read_optional_list(j["per_class_accuracy"], "per_class_accuracy");
  r.total_accuracy = detail::read_optional_number(j["total_accuracy"], "total_accuracy");
  try {
    r.confusion.counts = j["confusion"].get<std::vector<std::vector<long long>>>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError("report key 'confusion' must be a matrix of integers");
  }
  r.ap_per_class = detail::read_optional_list(j["ap_per_class"], "ap_per_class");
  r.map = detail::read_optional_number(j["map"], "map");
  r.inferences_per_sec = detail::read_optional_number(j["inferences_per_sec"], "inferences_per_sec");
  if (!j["hardware"].is_string() || !j["notes"].is_string())
    throw FormatError("report keys 'hardware' and 'notes' must be strings");
  r.hardware = j["hardware"].get<std::string>();
  r.notes = j["notes"].get<std::string>();
  validate(r);
  return r;
}

inline void write_report(const MetricsReport& r, const std::filesystem::path& path) {
  validate(r);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path.string() + ": cannot open for writing");
  out << report_to_string(r);
  if (!out) throw Error(path.string() + ": write failed");
}

inline MetricsReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError(path.string() + ": cannot open report");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_report(text);
}

}  // namespace maskwatch
