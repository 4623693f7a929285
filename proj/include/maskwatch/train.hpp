#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <vector>

#include "augment.hpp"
#include "backend.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "nn.hpp"
#include "random.hpp"

namespace maskwatch {

struct LabeledImage {
  Image image;  // raw pixels, 128x128
  MaskClass label;
};

/// Reads every classification sample of one split from disk, resizing to side.
inline std::vector<LabeledImage> load_split(const Manifest& m, Split split, int side = 128,
                                            const std::filesystem::path& base = {}) {
  std::vector<LabeledImage> out;
  for (const auto& s : m.samples(split)) {
    std::filesystem::path p(s.image_path);
    if (p.is_relative() && !base.empty()) p = base / p;
    Image img = read_pnm(p);
    if (img.height() != side || img.width() != side) img = resize_image(img, side);
    out.push_back({std::move(img), s.label});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses. All in double precision and averaged over the batch.

struct DistillConfig {
  double temperature = 4.0;
  double alpha = 0.1;  // weight of the hard-label term
  int epochs = 10;
  double learning_rate = 0.01;
  int batch_size = 32;
};

inline void validate(const DistillConfig& c) {
  if (!(c.temperature > 0)) throw ConfigError("distillation temperature must be > 0");
  if (!(c.alpha >= 0 && c.alpha <= 1)) throw ConfigError("distillation alpha must be in [0,1]");
  if (c.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(c.learning_rate >= 0)) throw ConfigError("learning rate must be >= 0");
}

using LogitGrad = std::array<double, kMaskClassCount>;

struct LossAndGrad {
  double loss = 0;
  std::vector<LogitGrad> grad;  // d(loss)/d(student logits), per example
};

inline void check_labels(std::span<const int> labels) {
  for (int y : labels)
    if (y < 0 || y >= kMaskClassCount) throw InvalidInput("label out of range: " + std::to_string(y));
}

inline LossAndGrad cross_entropy_with_grad(std::span<const Logits> logits, std::span<const int> labels) {
  if (logits.size() != labels.size()) throw InvalidInput("cross entropy: batch size mismatch");
  if (logits.empty()) throw InvalidInput("cross entropy: empty batch");
  check_labels(labels);
  const double n = static_cast<double>(logits.size());
  LossAndGrad out;
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto p = softmax(logits[i]);
    out.loss -= std::log(std::max(p[labels[i]], 1e-300)) / n;
    for (int k = 0; k < kMaskClassCount; ++k) out.grad[i][k] = (p[k] - (k == labels[i] ? 1.0 : 0.0)) / n;
  }
  return out;
}

inline double cross_entropy(std::span<const Logits> logits, std::span<const int> labels) {
  return cross_entropy_with_grad(logits, labels).loss;
}

/// alpha * CE(student, labels) + (1 - alpha) * T^2 * KL(teacher_T || student_T).
inline LossAndGrad distill_loss_with_grad(std::span<const Logits> student, std::span<const Logits> teacher,
                                          std::span<const int> labels, const DistillConfig& cfg) {
  validate(cfg);
  if (student.size() != teacher.size() || student.size() != labels.size())
    throw InvalidInput("distill loss: batch size mismatch");
  LossAndGrad out = cross_entropy_with_grad(student, labels);
  out.loss *= cfg.alpha;
  for (auto& g : out.grad)
    for (double& v : g) v *= cfg.alpha;
  if (cfg.alpha == 1.0) return out;

  const double t = cfg.temperature, w = 1.0 - cfg.alpha, n = static_cast<double>(student.size());
  for (std::size_t i = 0; i < student.size(); ++i) {
    const auto ps = softmax(student[i], t);
    const auto pt = softmax(teacher[i], t);
    double kl = 0;
    for (int k = 0; k < kMaskClassCount; ++k)
      if (pt[k] > 0) kl += pt[k] * (std::log(pt[k]) - std::log(std::max(ps[k], 1e-300)));
    out.loss += w * t * t * std::max(kl, 0.0) / n;
    for (int k = 0; k < kMaskClassCount; ++k) out.grad[i][k] += w * t * (ps[k] - pt[k]) / n;
  }
  return out;
}

inline double distill_loss(std::span<const Logits> student, std::span<const Logits> teacher,
                           std::span<const int> labels, const DistillConfig& cfg) {
  return distill_loss_with_grad(student, teacher, labels, cfg).loss;
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  double train_loss = 0;
  double train_accuracy = 0;
  std::optional<double> val_accuracy;
  double seconds = 0;
};

struct TrainOptions {
  int epochs = 10;
  double learning_rate = 0.01;
  int batch_size = 32;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  std::optional<AugmentationSpec> augmentation;  // empty: normalize only
  // Called after each epoch; returning false stops training early.
  std::function<bool(int epoch, const EpochRecord&)> on_epoch;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t parameter_count = 0;
  std::optional<std::size_t> teacher_parameter_count;

  std::optional<double> student_teacher_ratio() const {
    if (!teacher_parameter_count || *teacher_parameter_count == 0) return std::nullopt;
    return static_cast<double>(parameter_count) / static_cast<double>(*teacher_parameter_count);
  }
};

inline double accuracy(const ClassifierBackend& model, std::span<const LabeledImage> data) {
  if (data.empty()) throw InvalidInput("accuracy: empty data set");
  std::size_t correct = 0;
  for (const auto& s : data) {
    const Image* img = &s.image;
    if (argmax(model.predict_logits(std::span(img, 1)).front()) == static_cast<int>(s.label)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace detail {

inline Image denormalize(const Image& img, const Normalization& n) {
  Image out = img;
  auto px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const int c = static_cast<int>(i % 3);
    px[i] = (px[i] * n.std[c] + n.mean[c]) * 255.0f;
  }
  return out;
}

/// Shared loop for supervised training and distillation. `teacher` null means
/// plain cross-entropy.
inline TrainReport fit(Cnn& model, std::span<const LabeledImage> train, std::span<const LabeledImage> val,
                       const TrainOptions& opt, const ClassifierBackend* teacher, const DistillConfig* kd) {
  if (train.empty()) throw InvalidInput("training split is empty");
  if (opt.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (opt.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(opt.learning_rate >= 0)) throw ConfigError("learning rate must be >= 0");
  if (opt.augmentation) validate(*opt.augmentation);

  TrainReport report;
  report.parameter_count = model.parameter_count();
  if (teacher) report.teacher_parameter_count = teacher->parameter_count();

  // Teacher targets are fixed when inputs are not augmented.
  std::vector<Logits> teacher_cache;
  if (teacher && !opt.augmentation) {
    std::vector<Image> raw;
    raw.reserve(train.size());
    for (const auto& s : train) raw.push_back(s.image);
    teacher_cache = teacher->predict_logits(raw);
  }

  std::vector<float> grad(model.parameter_count());
  std::vector<float> velocity(model.parameter_count(), 0.0f);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(mix_seed(opt.seed, 0x5eed));
  Cnn::Trace trace;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    shuffle(order, shuffle_rng);
    double loss_sum = 0;
    std::size_t correct = 0;

    for (std::size_t begin = 0; begin < order.size(); begin += opt.batch_size) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(opt.batch_size));
      std::vector<Cnn::Trace> traces(end - begin);
      std::vector<Logits> logits(end - begin), targets;
      std::vector<int> labels(end - begin);

      for (std::size_t i = begin; i < end; ++i) {
        const auto& s = train[order[i]];
        Image input;
        if (opt.augmentation) {
          const std::uint64_t aug_seed = mix_seed(opt.seed, (static_cast<std::uint64_t>(epoch) << 32) ^ order[i]);
          input = augment(s.image, *opt.augmentation, aug_seed);
        } else {
          input = normalize(s.image, model.normalization());
        }
        logits[i - begin] = model.forward(input, traces[i - begin]);
        labels[i - begin] = static_cast<int>(s.label);
        if (argmax(logits[i - begin]) == labels[i - begin]) ++correct;
        if (teacher) {
          if (!teacher_cache.empty()) {
            targets.push_back(teacher_cache[order[i]]);
          } else {
            Image raw = denormalize(input, opt.augmentation->normalization);
            targets.push_back(teacher->predict_logits(std::span(&raw, 1)).front());
          }
        }
      }

      const LossAndGrad lg =
          teacher ? distill_loss_with_grad(logits, targets, labels, *kd) : cross_entropy_with_grad(logits, labels);
      if (!std::isfinite(lg.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch starting at " << begin;
        throw TrainingError(msg.str());
      }
      loss_sum += lg.loss * static_cast<double>(end - begin);

      std::fill(grad.begin(), grad.end(), 0.0f);
      for (std::size_t i = 0; i < traces.size(); ++i) model.backward(traces[i], lg.grad[i], grad);

      auto params = model.parameters();
      const float lr = static_cast<float>(opt.learning_rate), mu = static_cast<float>(opt.momentum);
      for (std::size_t k = 0; k < params.size(); ++k) {
        velocity[k] = mu * velocity[k] + grad[k];
        params[k] -= lr * velocity[k];
      }
    }

    EpochRecord rec;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!val.empty()) rec.val_accuracy = accuracy(model, val);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.epochs.push_back(rec);
    if (opt.on_epoch && !opt.on_epoch(epoch, rec)) break;
  }
  return report;
}

}  // namespace detail

/// Mini-batch SGD with momentum on softmax cross-entropy.
inline TrainReport train_classifier(Cnn& model, std::span<const LabeledImage> train, std::span<const LabeledImage> val,
                                    const TrainOptions& opt) {
  return detail::fit(model, train, val, opt, nullptr, nullptr);
}

/// Trains `student` against a frozen teacher with the soft-target loss.
/// cfg supplies epochs, learning rate and batch size; momentum, seed and
/// augmentation come from `opt`.
inline TrainReport distill(Cnn& student, const ClassifierBackend& teacher, std::span<const LabeledImage> train,
                           std::span<const LabeledImage> val, const DistillConfig& cfg, TrainOptions opt = {}) {
  validate(cfg);
  opt.epochs = cfg.epochs;
  opt.learning_rate = cfg.learning_rate;
  opt.batch_size = cfg.batch_size;
  return detail::fit(student, train, val, opt, &teacher, &cfg);
}

}  // namespace maskwatch
