#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "backend.hpp"
#include "errors.hpp"
#include "types.hpp"

namespace maskwatch {

/// Intersection over union in normalized coordinates. Degenerate boxes give 0.
inline double iou(const BBox& a, const BBox& b) {
  if (!(a.w > 0 && a.h > 0 && b.w > 0 && b.h > 0)) return 0.0;
  const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
  const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Greedy class-wise NMS. Sorted by confidence (stable on input order); a box
/// is dropped if it overlaps an already kept box of its class by more than
/// iou_threshold. Output is in confidence order.
inline std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw ConfigError("NMS IoU threshold must be in (0,1)");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].conf > dets[b].conf; });

  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.cls == d.cls && iou(k, d) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Single-shot grid output

/// Activated S x S x (B*5 + C) tensor, row-major over (row, col, channel).
/// Per cell: B tuples (tx, ty, tw, th, conf), then C class probabilities.
struct GridOutput {
  int grid = 0;
  int boxes_per_cell = 1;
  int classes = kDetClassCount;
  std::vector<float> values;

  int cell_stride() const noexcept { return boxes_per_cell * 5 + classes; }
  float at(int row, int col, int channel) const {
    return values[(static_cast<std::size_t>(row) * grid + col) * cell_stride() + channel];
  }
  float& at(int row, int col, int channel) {
    return values[(static_cast<std::size_t>(row) * grid + col) * cell_stride() + channel];
  }

  static GridOutput zeros(int grid, int boxes_per_cell, int classes) {
    GridOutput g{grid, boxes_per_cell, classes, {}};
    g.values.assign(static_cast<std::size_t>(grid) * grid * g.cell_stride(), 0.0f);
    return g;
  }
};

/// Final confidence is box confidence times the top class probability; cells
/// below conf_threshold are skipped. Boxes are clipped to the unit image.
inline std::vector<Detection> decode_grid(const GridOutput& out, double conf_threshold) {
  if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0)) throw ConfigError("decode threshold must be in [0,1]");
  if (out.grid < 1 || out.boxes_per_cell < 1 || out.classes < 1) throw InvalidInput("grid dimensions must be >= 1");
  if (out.values.size() != static_cast<std::size_t>(out.grid) * out.grid * out.cell_stride())
    throw InvalidInput("grid tensor size does not match S*S*(B*5+C)");

  const double s = out.grid;
  std::vector<Detection> dets;
  for (int i = 0; i < out.grid; ++i)
    for (int j = 0; j < out.grid; ++j) {
      const int class_base = out.boxes_per_cell * 5;
      int cls = 0;
      for (int k = 1; k < out.classes; ++k)
        if (out.at(i, j, class_base + k) > out.at(i, j, class_base + cls)) cls = k;
      const double class_prob = out.at(i, j, class_base + cls);

      for (int b = 0; b < out.boxes_per_cell; ++b) {
        const int o = b * 5;
        const double conf = std::clamp(static_cast<double>(out.at(i, j, o + 4)) * class_prob, 0.0, 1.0);
        if (conf < conf_threshold || conf <= 0.0) continue;
        const double cx = (j + out.at(i, j, o + 0)) / s;
        const double cy = (i + out.at(i, j, o + 1)) / s;
        const double w = out.at(i, j, o + 2), h = out.at(i, j, o + 3);
        if (auto box = box_from_corners_clipped(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, cls, conf))
          dets.push_back(*box);
      }
    }
  return dets;
}

/// backend.detect, confidence filter, then NMS.
inline std::vector<Detection> detect_frame(DetectorBackend& backend, const Image& frame, double conf_threshold,
                                           double nms_threshold) {
  std::vector<Detection> raw;
  try {
    raw = backend.detect(frame);
  } catch (const BackendError&) {
    throw;
  } catch (const std::exception& ex) {
    throw BackendError(backend.name(), ex.what());
  }
  std::vector<Detection> passed;
  for (const auto& d : raw) {
    if (auto why = box_violation(d)) throw BackendError(backend.name(), "invalid detection: " + *why);
    if (d.conf >= conf_threshold) passed.push_back(d);
  }
  return nms(passed, nms_threshold);
}

// ---------------------------------------------------------------------------
// Detection interchange file: "<image_id> <class_id> <conf> <cx> <cy> <w> <h>".
// Ground-truth files use the same layout without the conf column.

struct ImageDetection {
  std::string image_id;
  Detection det;

  bool operator==(const ImageDetection&) const = default;
};

inline std::vector<ImageDetection> parse_detections(std::istream& in, bool with_conf = true) {
  const std::size_t expected = with_conf ? 7 : 6;
  std::vector<ImageDetection> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    std::istringstream fields(text);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    if (tok.empty() || tok[0].starts_with('#')) continue;
    if (tok.size() != expected)
      throw ParseError("expected " + std::to_string(expected) + " fields, got " + std::to_string(tok.size()), line);
    ImageDetection r;
    r.image_id = tok[0];
    try {
      std::size_t used = 0;
      r.det.cls = std::stoi(tok[1], &used);
      if (used != tok[1].size()) throw std::invalid_argument("class");
      std::vector<double> nums;
      for (std::size_t i = 2; i < tok.size(); ++i) {
        nums.push_back(std::stod(tok[i], &used));
        if (used != tok[i].size()) throw std::invalid_argument("number");
      }
      std::size_t k = 0;
      r.det.conf = with_conf ? nums[k++] : 1.0;
      r.det.cx = nums[k++];
      r.det.cy = nums[k++];
      r.det.w = nums[k++];
      r.det.h = nums[k++];
    } catch (const std::logic_error&) {
      throw ParseError("non-numeric field", line);
    }
    if (r.det.cls < 0) throw ParseError("negative class id", line);
    if (auto why = box_violation(r.det)) throw ParseError("invalid box: " + *why, line);
    out.push_back(r);
  }
  return out;
}

inline std::vector<ImageDetection> read_detections(const std::filesystem::path& path, bool with_conf = true) {
  std::ifstream in(path);
  if (!in) throw NotFoundError(path.string() + ": cannot open detection file");
  try {
    return parse_detections(in, with_conf);
  } catch (const ParseError& ex) {
    throw ParseError(ex.message(), ex.line(), path.string());
  }
}

inline void write_detections(std::ostream& out, std::span<const ImageDetection> dets, bool with_conf = true) {
  out << std::setprecision(17);
  for (const auto& r : dets) {
    out << r.image_id << ' ' << r.det.cls;
    if (with_conf) out << ' ' << r.det.conf;
    out << ' ' << r.det.cx << ' ' << r.det.cy << ' ' << r.det.w << ' ' << r.det.h << '\n';
  }
}

/// Replays precomputed detections keyed by image id, so output of an external
/// detector can drive the pipelines. Ids with no records yield nothing.
class ReplayDetector final : public DetectorBackend {
 public:
  explicit ReplayDetector(std::vector<ImageDetection> records, std::string name = "replay") : name_(std::move(name)) {
    for (auto& r : records) by_id_[r.image_id].push_back(r.det);
  }

  void set_frame_id(const std::string& image_id) override { current_ = image_id; }

  std::vector<Detection> detect(const Image&) override {
    auto it = by_id_.find(current_);
    return it == by_id_.end() ? std::vector<Detection>{} : it->second;
  }
  std::string name() const override { return name_; }

 private:
  std::map<std::string, std::vector<Detection>> by_id_;
  std::string current_;
  std::string name_;
};

}  // namespace maskwatch
