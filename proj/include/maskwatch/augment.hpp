#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "image.hpp"
#include "random.hpp"

namespace maskwatch {

using Range = std::pair<double, double>;

struct ColorJitter {
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
  double hue = 0.2;  // fraction of a full hue turn, at most 0.5
};

struct ResizedCrop {
  Range scale{0.8, 1.0};  // fraction of image area
  Range ratio{3.0 / 4.0, 4.0 / 3.0};
};

struct GaussianBlur {
  int kernel = 5;
  Range sigma{0.1, 2.0};
};

struct RandomErasing {
  double probability = 0.25;
  Range area{0.02, 0.2};
  Range ratio{0.3, 3.3};
  float value = 0.0f;
};

struct Normalization {
  Rgb mean{0.5f, 0.5f, 0.5f};
  Rgb std{0.5f, 0.5f, 0.5f};
};

/// Training-time augmentation. Each transform is disabled by leaving its
/// optional empty; normalization always runs first.
struct AugmentationSpec {
  int side = 128;
  Normalization normalization;
  std::optional<ColorJitter> color_jitter = ColorJitter{};
  std::optional<double> rotation_degrees = 15.0;
  std::optional<ResizedCrop> resized_crop = ResizedCrop{};
  std::optional<GaussianBlur> gaussian_blur = GaussianBlur{};
  std::optional<RandomErasing> random_erasing = RandomErasing{};

  static AugmentationSpec disabled() {
    AugmentationSpec s;
    s.color_jitter.reset();
    s.rotation_degrees.reset();
    s.resized_crop.reset();
    s.gaussian_blur.reset();
    s.random_erasing.reset();
    return s;
  }
};

inline void validate(const AugmentationSpec& s) {
  auto range_ok = [](Range r, double lo, double hi) { return r.first >= lo && r.second <= hi && r.first <= r.second; };
  if (s.side < 1) throw ConfigError("augmentation side must be >= 1");
  for (int c = 0; c < 3; ++c)
    if (!(s.normalization.std[c] > 0)) throw ConfigError("normalization std must be positive");
  if (const auto& j = s.color_jitter) {
    if (j->brightness < 0 || j->contrast < 0 || j->saturation < 0 || j->hue < 0 || j->hue > 0.5)
      throw ConfigError("color jitter strengths must be >= 0 and hue <= 0.5");
  }
  if (s.rotation_degrees && *s.rotation_degrees < 0) throw ConfigError("rotation degrees must be >= 0");
  if (const auto& c = s.resized_crop) {
    if (!range_ok(c->scale, 0.0, 1.0) || c->scale.first <= 0) throw ConfigError("crop scale must lie in (0,1]");
    if (!range_ok(c->ratio, 1e-3, 1e3)) throw ConfigError("crop ratio range invalid");
  }
  if (const auto& b = s.gaussian_blur) {
    if (b->kernel < 1 || b->kernel % 2 == 0) throw ConfigError("blur kernel must be a positive odd number");
    if (!range_ok(b->sigma, 1e-6, 1e6)) throw ConfigError("blur sigma range invalid");
  }
  if (const auto& e = s.random_erasing) {
    if (e->probability < 0 || e->probability > 1) throw ConfigError("erasing probability must be in [0,1]");
    if (!range_ok(e->area, 0.0, 1.0) || !range_ok(e->ratio, 1e-3, 1e3)) throw ConfigError("erasing ranges invalid");
  }
}

inline Image normalize(const Image& img, const Normalization& n) {
  Image out = img;
  auto px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const int c = static_cast<int>(i % 3);
    px[i] = (px[i] / 255.0f - n.mean[c]) / n.std[c];
  }
  return out;
}

// --- individual transforms ---------------------------------------------------

inline float luminance(const Image& img, int y, int x) {
  return 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
}

inline void adjust_brightness(Image& img, float factor) {
  for (float& v : img.pixels()) v *= factor;
}

inline void adjust_contrast(Image& img, float factor) {
  double sum = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) sum += luminance(img, y, x);
  const float mean = static_cast<float>(sum / (static_cast<double>(img.height()) * img.width()));
  for (float& v : img.pixels()) v = mean + factor * (v - mean);
}

inline void adjust_saturation(Image& img, float factor) {
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const float gray = luminance(img, y, x);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = gray + factor * (img.at(y, x, c) - gray);
    }
}

/// Rotates chroma in YIQ space by `turns` of a full circle.
inline void adjust_hue(Image& img, double turns) {
  const double a = 2.0 * std::numbers::pi * turns;
  const float cs = static_cast<float>(std::cos(a));
  const float sn = static_cast<float>(std::sin(a));
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const float r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
      const float yy = 0.299f * r + 0.587f * g + 0.114f * b;
      float i = 0.596f * r - 0.274f * g - 0.322f * b;
      float q = 0.211f * r - 0.523f * g + 0.312f * b;
      const float i2 = cs * i - sn * q;
      const float q2 = sn * i + cs * q;
      img.at(y, x, 0) = yy + 0.956f * i2 + 0.621f * q2;
      img.at(y, x, 1) = yy - 0.272f * i2 - 0.647f * q2;
      img.at(y, x, 2) = yy - 1.106f * i2 + 1.703f * q2;
    }
}

/// Rotates counter-clockwise (as displayed, y pointing down) about the image
/// center. Samples bilinearly; uncovered pixels get `fill`.
inline Image rotate(const Image& src, double degrees, float fill = 0.0f) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(a), sn = std::sin(a);
  const double cx = src.width() / 2.0, cy = src.height() / 2.0;
  Image out(src.height(), src.width(), fill);
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x) {
      // inverse map: output point -> source point
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double sx = cs * dx - sn * dy + cx - 0.5;
      const double sy = sn * dx + cs * dy + cy - 0.5;
      const int x0 = static_cast<int>(std::floor(sx + 1e-9));
      const int y0 = static_cast<int>(std::floor(sy + 1e-9));
      const double fx = std::max(0.0, sx - x0), fy = std::max(0.0, sy - y0);
      for (int c = 0; c < 3; ++c) {
        double acc = 0, weight = 0;
        const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
        const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int k = 0; k < 4; ++k) {
          if (wts[k] < 1e-9) continue;
          weight += wts[k];
          if (xs[k] < 0 || ys[k] < 0 || xs[k] >= src.width() || ys[k] >= src.height())
            acc += wts[k] * fill;
          else
            acc += wts[k] * src.at(ys[k], xs[k], c);
        }
        out.at(y, x, c) = weight > 0 ? static_cast<float>(acc / weight) : fill;
      }
    }
  return out;
}

inline Image gaussian_blur(const Image& src, int kernel, double sigma) {
  const int r = kernel / 2;
  std::vector<double> k(kernel);
  double total = 0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-(i * i) / (2 * sigma * sigma));
  for (double& v : k) v /= total;

  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };

  Image tmp(src.height(), src.width()), out(src.height(), src.width());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * src.at(y, reflect(x + i, src.width()), c);
        tmp.at(y, x, c) = static_cast<float>(acc);
      }
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(reflect(y + i, src.height()), x, c);
        out.at(y, x, c) = static_cast<float>(acc);
      }
  return out;
}

struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open

  int width() const noexcept { return x1 - x0; }
  int height() const noexcept { return y1 - y0; }
  bool operator==(const PixelRect&) const = default;
};

/// Samples a rectangle covering `area` fraction with aspect ratio drawn
/// log-uniformly from `ratio`. Falls back to the whole image after 10 misses.
inline PixelRect sample_rect(int h, int w, Range area, Range ratio, Rng& rng) {
  const double total = static_cast<double>(h) * w;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = total * uniform(rng, area.first, area.second);
    const double r = std::exp(uniform(rng, std::log(ratio.first), std::log(ratio.second)));
    const int cw = static_cast<int>(std::lround(std::sqrt(target * r)));
    const int ch = static_cast<int>(std::lround(std::sqrt(target / r)));
    if (cw > 0 && ch > 0 && cw <= w && ch <= h) {
      const int x0 = static_cast<int>(index_below(rng, static_cast<std::uint64_t>(w - cw + 1)));
      const int y0 = static_cast<int>(index_below(rng, static_cast<std::uint64_t>(h - ch + 1)));
      return {x0, y0, x0 + cw, y0 + ch};
    }
  }
  return {0, 0, w, h};
}

// --- pipeline ----------------------------------------------------------------

/// Normalize, then color jitter, rotation, resized crop, blur and erasing.
/// Deterministic in (image, spec, seed).
inline Image augment(const Image& img, const AugmentationSpec& spec, std::uint64_t seed) {
  validate(spec);
  if (img.height() != spec.side || img.width() != spec.side)
    throw InvalidInput("augment: image must be " + std::to_string(spec.side) + "x" + std::to_string(spec.side));

  Rng rng(seed);
  Image out = normalize(img, spec.normalization);

  if (const auto& j = spec.color_jitter) {
    auto factor = [&](double s) { return static_cast<float>(uniform(rng, std::max(0.0, 1.0 - s), 1.0 + s)); };
    const float b = factor(j->brightness), c = factor(j->contrast), s = factor(j->saturation);
    const double h = uniform(rng, -j->hue, j->hue);
    if (b != 1.0f) adjust_brightness(out, b);
    if (c != 1.0f) adjust_contrast(out, c);
    if (s != 1.0f) adjust_saturation(out, s);
    if (h != 0.0) adjust_hue(out, h);
  }
  if (spec.rotation_degrees) {
    const double deg = uniform(rng, -*spec.rotation_degrees, *spec.rotation_degrees);
    if (deg != 0.0) out = rotate(out, deg);
  }
  if (const auto& c = spec.resized_crop) {
    const PixelRect r = sample_rect(out.height(), out.width(), c->scale, c->ratio, rng);
    if (r != PixelRect{0, 0, out.width(), out.height()})
      out = resize_bilinear(crop(out, r.x0, r.y0, r.x1, r.y1), spec.side, spec.side);
  }
  if (const auto& b = spec.gaussian_blur) {
    out = gaussian_blur(out, b->kernel, uniform(rng, b->sigma.first, b->sigma.second));
  }
  if (const auto& e = spec.random_erasing) {
    if (unit_double(rng) < e->probability) {
      const PixelRect r = sample_rect(out.height(), out.width(), e->area, e->ratio, rng);
      for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x)
          for (int c = 0; c < 3; ++c) out.at(y, x, c) = e->value;
    }
  }
  return out;
}

}  // namespace maskwatch
