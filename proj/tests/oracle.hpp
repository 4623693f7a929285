#pragma once

// Reference implementations written independently of the library: plain
// loops, no sorting, no shared helpers beyond box geometry.

#include <optional>
#include <string>
#include <vector>

#include "maskwatch/detect.hpp"
#include "maskwatch/eval.hpp"
#include "maskwatch/random.hpp"

namespace oracle {

using maskwatch::Detection;
using maskwatch::GroundTruth;
using maskwatch::ImageDetection;

inline double box_iou(const maskwatch::BBox& a, const maskwatch::BBox& b) {
  const double ix = std::max(0.0, std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2));
  const double iy = std::max(0.0, std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2));
  const double inter = ix * iy;
  if (inter <= 0) return 0.0;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

/// Repeatedly take the highest remaining confidence (earliest on ties), then
/// drop same-class boxes overlapping it by more than thr.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double thr) {
  std::vector<Detection> kept;
  std::vector<bool> alive(dets.size(), true);
  for (;;) {
    int best = -1;
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (alive[i] && (best < 0 || dets[i].conf > dets[best].conf)) best = static_cast<int>(i);
    if (best < 0) break;
    alive[best] = false;
    kept.push_back(dets[best]);
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (alive[i] && dets[i].cls == dets[best].cls && box_iou(dets[i], dets[best]) > thr) alive[i] = false;
  }
  return kept;
}

/// AP by explicit selection: visit detections by descending confidence (earliest
/// on ties) via repeated max search, match greedily, then for every prefix k
/// take the best precision over prefixes j >= k and weight it by the recall gained at k.
inline std::optional<double> ap(const std::vector<ImageDetection>& dets, const std::vector<GroundTruth>& gts, int cls,
                                double thr) {
  std::size_t npos = 0;
  for (const auto& g : gts) npos += g.box.cls == cls;
  if (npos == 0) return std::nullopt;

  std::vector<bool> used_gt(gts.size(), false), visited(dets.size(), false);
  std::vector<int> hits;  // 1 for TP in visit order
  for (;;) {
    int pick = -1;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (visited[i] || dets[i].det.cls != cls) continue;
      if (pick < 0 || dets[i].det.conf > dets[pick].det.conf) pick = static_cast<int>(i);
    }
    if (pick < 0) break;
    visited[pick] = true;
    int match = -1;
    double best = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used_gt[g] || gts[g].box.cls != cls || gts[g].image_id != dets[pick].image_id) continue;
      const double v = box_iou(gts[g].box, dets[pick].det);
      if (v >= thr && v > best) {
        best = v;
        match = static_cast<int>(g);
      }
    }
    if (match >= 0) used_gt[match] = true;
    hits.push_back(match >= 0);
  }

  const std::size_t n = hits.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    tp += hits[k];
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(npos);
  }
  double area = 0, prev = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double env = 0;
    for (std::size_t j = k; j < n; ++j) env = std::max(env, precision[j]);
    area += (recall[k] - prev) * env;
    prev = recall[k];
  }
  return area;
}

inline double map(const std::vector<ImageDetection>& dets, const std::vector<GroundTruth>& gts, int classes,
                  double thr) {
  double sum = 0;
  int defined = 0;
  for (int c = 0; c < classes; ++c)
    if (auto v = ap(dets, gts, c, thr)) {
      sum += *v;
      ++defined;
    }
  return sum / defined;
}

/// Random instance: up to 5 images, up to 4 GT and 6 predictions per image,
/// two classes. Predictions are often jittered copies of GT boxes.
struct Instance {
  std::vector<ImageDetection> dets;
  std::vector<GroundTruth> gts;
};

inline Instance random_instance(maskwatch::Rng& rng) {
  using maskwatch::index_below;
  using maskwatch::uniform;
  auto box = [&] {
    const double w = uniform(rng, 0.05, 0.5), h = uniform(rng, 0.05, 0.5);
    return maskwatch::BBox{uniform(rng, w / 2, 1 - w / 2), uniform(rng, h / 2, 1 - h / 2), w, h,
                           static_cast<int>(index_below(rng, 2)), 1.0};
  };
  Instance inst;
  const std::size_t images = 1 + index_below(rng, 5);
  for (std::size_t i = 0; i < images; ++i) {
    const std::string id = "im" + std::to_string(i);
    std::vector<maskwatch::BBox> gt;
    for (std::uint64_t n = index_below(rng, 5); n > 0; --n) gt.push_back(box());
    for (const auto& g : gt) inst.gts.push_back({id, g});
    for (std::uint64_t n = index_below(rng, 7); n > 0; --n) {
      maskwatch::BBox d = box();
      if (!gt.empty() && index_below(rng, 3) > 0) {
        d = gt[index_below(rng, gt.size())];
        d.cx = std::clamp(d.cx + uniform(rng, -0.05, 0.05), d.w / 2, 1 - d.w / 2);
        d.cy = std::clamp(d.cy + uniform(rng, -0.05, 0.05), d.h / 2, 1 - d.h / 2);
        if (index_below(rng, 5) == 0) d.cls = 1 - d.cls;
      }
      // coarse confidences so ties happen
      d.conf = static_cast<double>(1 + index_below(rng, 10)) / 10.0;
      inst.dets.push_back({id, d});
    }
  }
  return inst;
}

}  // namespace oracle
