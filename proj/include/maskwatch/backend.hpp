#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "image.hpp"
#include "types.hpp"

namespace maskwatch {

using Logits = std::array<float, kMaskClassCount>;

/// Anything that maps 128x128x3 images to 3-class logits: the built-in CNN or
/// an adapter around an external backbone.
class ClassifierBackend {
 public:
  virtual ~ClassifierBackend() = default;

  /// Output order matches input order. Must be safe to call concurrently on a
  /// frozen model.
  virtual std::vector<Logits> predict_logits(std::span<const Image> batch) const = 0;
  virtual std::size_t parameter_count() const = 0;
  virtual std::string name() const = 0;
};

/// Face detector (two-stage) or mask detector (single-shot). Unless
/// concurrent_safe() says otherwise, callers serialize detect().
class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;

  virtual std::vector<Detection> detect(const Image& frame) = 0;
  virtual std::string name() const = 0;
  /// Called before detect() with the frame's id (file stem or index).
  virtual void set_frame_id(const std::string&) {}
  virtual bool concurrent_safe() const { return false; }
};

}  // namespace maskwatch
