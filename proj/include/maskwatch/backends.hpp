#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "backend.hpp"
#include "detect.hpp"

namespace maskwatch {

/// Returns the same scripted detections for every frame, optionally after a
/// fixed delay. Used to stand in for real detectors in tests and benchmarks.
class ScriptedDetector final : public DetectorBackend {
 public:
  explicit ScriptedDetector(std::vector<Detection> script, std::chrono::microseconds delay = {},
                            std::string name = "scripted")
      : script_(std::move(script)), delay_(delay), name_(std::move(name)) {}

  std::vector<Detection> detect(const Image&) override {
    ++calls_;
    if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
    return script_;
  }
  std::string name() const override { return name_; }
  bool concurrent_safe() const override { return true; }
  std::size_t calls() const noexcept { return calls_; }

 private:
  std::vector<Detection> script_;
  std::chrono::microseconds delay_;
  std::string name_;
  std::atomic<std::size_t> calls_{0};
};

/// Always favors one class. Counts how many crops it has seen.
class FixedClassifier final : public ClassifierBackend {
 public:
  explicit FixedClassifier(MaskClass winner, std::chrono::microseconds delay_per_image = {})
      : winner_(winner), delay_(delay_per_image) {}

  std::vector<Logits> predict_logits(std::span<const Image> batch) const override {
    calls_ += batch.size();
    std::vector<Logits> out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
      Logits z{0.0f, 0.0f, 0.0f};
      z[static_cast<int>(winner_)] = 4.0f;
      out.push_back(z);
    }
    return out;
  }
  std::size_t parameter_count() const override { return 0; }
  std::string name() const override { return "fixed-classifier"; }
  std::size_t calls() const noexcept { return calls_; }

 private:
  MaskClass winner_;
  std::chrono::microseconds delay_;
  mutable std::atomic<std::size_t> calls_{0};
};

/// Adapter for a single-shot network that emits an activated grid tensor.
class GridDetector final : public DetectorBackend {
 public:
  using Model = std::function<GridOutput(const Image&)>;

  GridDetector(Model model, double decode_threshold, std::string name = "grid")
      : model_(std::move(model)), threshold_(decode_threshold), name_(std::move(name)) {}

  std::vector<Detection> detect(const Image& frame) override { return decode_grid(model_(frame), threshold_); }
  std::string name() const override { return name_; }

 private:
  Model model_;
  double threshold_;
  std::string name_;
};

}  // namespace maskwatch
