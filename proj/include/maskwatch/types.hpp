#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "errors.hpp"

namespace maskwatch {

/// Three-way mask-wearing label used by the classifier pipeline.
enum class MaskClass : int { Correct = 0, Incorrect = 1, None = 2 };

/// Two-way label used by the single-shot detector.
enum class DetClass : int { Positive = 0, Negative = 1 };

inline constexpr int kMaskClassCount = 3;
inline constexpr int kDetClassCount = 2;

inline constexpr std::array<std::string_view, 3> kMaskClassNames = {"correct", "incorrect", "none"};
inline constexpr std::array<std::string_view, 2> kDetClassNames = {"positive", "negative"};

inline MaskClass mask_class_from_id(int id) {
  if (id < 0 || id >= kMaskClassCount) throw InvalidInput("mask class id out of range: " + std::to_string(id));
  return static_cast<MaskClass>(id);
}

inline DetClass det_class_from_id(int id) {
  if (id < 0 || id >= kDetClassCount) throw InvalidInput("detection class id out of range: " + std::to_string(id));
  return static_cast<DetClass>(id);
}

constexpr DetClass merge_to_detclass(MaskClass label) noexcept {
  return label == MaskClass::Correct ? DetClass::Positive : DetClass::Negative;
}

/// Which label vocabulary a set of class ids belongs to.
enum class ClassSpace { Mask3, Det2 };

constexpr int class_count(ClassSpace space) noexcept { return space == ClassSpace::Mask3 ? 3 : 2; }

inline std::string_view class_name(ClassSpace space, int id) {
  if (id < 0 || id >= class_count(space)) return "?";
  return space == ClassSpace::Mask3 ? kMaskClassNames[id] : kDetClassNames[id];
}

inline constexpr double kBoxEpsilon = 1e-6;

/// Normalized center-format box. Ground truth carries conf 1.0.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  int cls = 0;
  double conf = 1.0;

  double x0() const noexcept { return cx - w / 2; }
  double x1() const noexcept { return cx + w / 2; }
  double y0() const noexcept { return cy - h / 2; }
  double y1() const noexcept { return cy + h / 2; }
  double area() const noexcept { return w * h; }

  bool operator==(const BBox&) const = default;
};

/// A detector output is a scored box; the class id lives in the box.
using Detection = BBox;

inline std::optional<std::string> box_violation(const BBox& b) {
  auto in_unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  if (!in_unit(b.cx) || !in_unit(b.cy)) return "center outside [0,1]";
  if (!(b.w > 0.0 && b.w <= 1.0) || !(b.h > 0.0 && b.h <= 1.0)) return "size outside (0,1]";
  if (b.x0() < -kBoxEpsilon || b.x1() > 1.0 + kBoxEpsilon) return "box extends past image in x";
  if (b.y0() < -kBoxEpsilon || b.y1() > 1.0 + kBoxEpsilon) return "box extends past image in y";
  if (!(b.conf >= 0.0 && b.conf <= 1.0)) return "confidence outside [0,1]";
  return std::nullopt;
}

inline bool box_valid(const BBox& b) { return !box_violation(b).has_value(); }

/// Builds a box from corner coordinates clipped to the unit square.
/// Returns nullopt when nothing with positive area is left.
inline std::optional<BBox> box_from_corners_clipped(double x0, double y0, double x1, double y1, int cls,
                                                    double conf) {
  x0 = std::clamp(x0, 0.0, 1.0);
  x1 = std::clamp(x1, 0.0, 1.0);
  y0 = std::clamp(y0, 0.0, 1.0);
  y1 = std::clamp(y1, 0.0, 1.0);
  if (!(x1 > x0) || !(y1 > y0)) return std::nullopt;
  return BBox{(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0, cls, conf};
}

}  // namespace maskwatch
