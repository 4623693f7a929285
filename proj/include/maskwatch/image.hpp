#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace maskwatch {

/// Interleaved H x W x 3 float image. Raw pixels are in [0, 255]; after
/// normalization values are unbounded.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, float fill = 0.0f)
      : height_(height), width_(width), data_(checked_size(height, width), fill) {}

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return data_.empty(); }

  float& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  float at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::span<float> pixels() noexcept { return data_; }
  std::span<const float> pixels() const noexcept { return data_; }

  bool operator==(const Image&) const = default;

 private:
  static std::size_t checked_size(int h, int w) {
    if (h < 0 || w < 0) throw InvalidInput("image dimensions must be non-negative");
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * kChannels;
  }
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

using Rgb = std::array<float, 3>;

inline Image solid_image(int height, int width, Rgb color) {
  Image img(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
  return img;
}

/// Bilinear resample with half-pixel centers and edge clamping. Aspect ratio
/// is not preserved: non-square inputs are stretched to the target size.
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
  if (src.empty() || src.height() <= 0 || src.width() <= 0)
    throw InvalidInput("resize: empty image");
  if (out_h < 1 || out_w < 1) throw InvalidInput("resize: target size must be >= 1");

  Image dst(out_h, out_w);
  const double sy = static_cast<double>(src.height()) / out_h;
  const double sx = static_cast<double>(src.width()) / out_w;
  const int max_y = src.height() - 1;
  const int max_x = src.width() - 1;

  for (int y = 0; y < out_h; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(max_y));
    int y0 = static_cast<int>(std::floor(fy));
    int y1 = std::min(y0 + 1, max_y);
    double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(max_x));
      int x0 = static_cast<int>(std::floor(fx));
      int x1 = std::min(x0 + 1, max_x);
      double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        double top = (1.0 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
        double bot = (1.0 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
        dst.at(y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return dst;
}

inline Image resize_image(const Image& src, int side) { return resize_bilinear(src, side, side); }

/// Copies the pixel rectangle [x0, x1) x [y0, y1); bounds must lie inside.
inline Image crop(const Image& src, int x0, int y0, int x1, int y1) {
  if (x0 < 0 || y0 < 0 || x1 > src.width() || y1 > src.height() || x1 <= x0 || y1 <= y0)
    throw InvalidInput("crop: rectangle outside image");
  Image out(y1 - y0, x1 - x0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int c = 0; c < 3; ++c) out.at(y - y0, x - x0, c) = src.at(y, x, c);
  return out;
}

// ---------------------------------------------------------------------------
// PNM (P5/P6) I/O. Frames and dataset images use binary PPM; grayscale PGM is
// accepted on read and replicated to three channels.

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string discard;
      std::getline(in, discard);
    } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& in, const std::string& path) {
  skip_pnm_space(in);
  int v = -1;
  if (!(in >> v) || v < 0) throw FormatError(path + ": bad PNM header");
  return v;
}

}  // namespace detail

inline Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError(path.string() + ": cannot open image");
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw FormatError(path.string() + ": not a binary PGM/PPM file");
  const bool color = magic[1] == '6';
  const int w = detail::read_pnm_int(in, path.string());
  const int h = detail::read_pnm_int(in, path.string());
  const int maxval = detail::read_pnm_int(in, path.string());
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255)
    throw FormatError(path.string() + ": unsupported PNM dimensions or depth");
  in.get();  // single whitespace before raster

  const std::size_t channels = color ? 3 : 1;
  std::vector<unsigned char> raster(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (in.gcount() != static_cast<std::streamsize>(raster.size()))
    throw FormatError(path.string() + ": truncated raster");

  const float scale = 255.0f / static_cast<float>(maxval);
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        std::size_t src = (static_cast<std::size_t>(y) * w + x) * channels + (color ? c : 0);
        img.at(y, x, c) = raster[src] * scale;
      }
  return img;
}

inline void write_ppm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path.string() + ": cannot open for writing");
  out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<unsigned char> raster(img.pixels().size());
  std::transform(img.pixels().begin(), img.pixels().end(), raster.begin(), [](float v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 255.0f)));
  });
  out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!out) throw Error(path.string() + ": write failed");
}

// ---------------------------------------------------------------------------
// Annotation drawing.

inline void draw_rect(Image& img, int x0, int y0, int x1, int y1, Rgb color, int thickness = 2) {
  auto put = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
    for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
  };
  for (int t = 0; t < thickness; ++t) {
    for (int x = x0; x <= x1; ++x) {
      put(x, y0 + t);
      put(x, y1 - t);
    }
    for (int y = y0; y <= y1; ++y) {
      put(x0 + t, y);
      put(x1 - t, y);
    }
  }
}

/// Renders digits and '.' with a 3x5 bitmap font; other characters are skipped.
inline void draw_text(Image& img, int x, int y, const std::string& text, Rgb color, int scale = 1) {
  static constexpr std::array<std::uint16_t, 11> glyphs = {
      0x7B6F, 0x2C97, 0x73E7, 0x73CF, 0x5BC9, 0x79CF, 0x79EF, 0x7249, 0x7BEF, 0x7BCF, 0x0002,
  };
  int cursor = x;
  for (char ch : text) {
    int g = ch == '.' ? 10 : (ch >= '0' && ch <= '9' ? ch - '0' : -1);
    if (g >= 0) {
      for (int row = 0; row < 5; ++row)
        for (int col = 0; col < 3; ++col) {
          if (!((glyphs[g] >> (14 - (row * 3 + col))) & 1)) continue;
          for (int dy = 0; dy < scale; ++dy)
            for (int dx = 0; dx < scale; ++dx) {
              int px = cursor + col * scale + dx;
              int py = y + row * scale + dy;
              if (px < 0 || py < 0 || px >= img.width() || py >= img.height()) continue;
              for (int c = 0; c < 3; ++c) img.at(py, px, c) = color[c];
            }
        }
    }
    cursor += 4 * scale;
  }
}

}  // namespace maskwatch
