#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "augment.hpp"
#include "backend.hpp"
#include "errors.hpp"
#include "image.hpp"
#include "random.hpp"

namespace maskwatch {

struct ConvBlock {
  int out_channels = 16;
  int kernel = 3;
  int pool = 2;

  bool operator==(const ConvBlock&) const = default;
};

/// The small classifier: two conv blocks (conv, leaky ReLU, max pool), then two
/// linear layers with a leaky ReLU between them.
struct CnnSpec {
  std::vector<ConvBlock> conv_blocks{{16, 3, 2}, {32, 3, 2}};
  float leaky_slope = 0.01f;
  std::vector<int> linear_layers{128, 3};
  int input_side = 128;

  bool operator==(const CnnSpec&) const = default;
};

inline void validate(const CnnSpec& s) {
  if (s.conv_blocks.size() != 2) throw ConfigError("CNN needs exactly two conv blocks");
  if (s.linear_layers.size() != 2) throw ConfigError("CNN needs exactly two linear layers");
  if (s.linear_layers.back() != kMaskClassCount) throw ConfigError("final linear width must be 3");
  if (s.linear_layers.front() < 1) throw ConfigError("hidden linear width must be >= 1");
  if (s.input_side != 128) throw ConfigError("CNN input side must be 128");
  if (!(s.leaky_slope >= 0.0f && s.leaky_slope < 1.0f)) throw ConfigError("leaky slope must be in [0,1)");
  int side = s.input_side;
  for (const auto& b : s.conv_blocks) {
    if (b.out_channels < 1 || b.kernel < 1 || b.kernel % 2 == 0 || b.pool < 1)
      throw ConfigError("conv block needs channels >= 1, odd kernel, pool >= 1");
    side /= b.pool;
    if (side < 1) throw ConfigError("pooling shrinks feature map to nothing");
  }
}

inline nlohmann::ordered_json cnn_spec_to_json(const CnnSpec& s) {
  nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
  for (const auto& b : s.conv_blocks)
    blocks.push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"pool", b.pool}});
  return {{"conv_blocks", blocks},
          {"leaky_slope", s.leaky_slope},
          {"linear_layers", s.linear_layers},
          {"input_side", s.input_side}};
}

inline CnnSpec cnn_spec_from_json(const nlohmann::json& j) {
  CnnSpec s;
  try {
    for (const auto& [key, _] : j.items())
      if (key != "conv_blocks" && key != "leaky_slope" && key != "linear_layers" && key != "input_side")
        throw ConfigError("unknown CNN spec key '" + key + "'");
    if (j.contains("conv_blocks")) {
      s.conv_blocks.clear();
      for (const auto& b : j.at("conv_blocks"))
        s.conv_blocks.push_back({b.at("out_channels").get<int>(), b.at("kernel").get<int>(), b.at("pool").get<int>()});
    }
    if (j.contains("leaky_slope")) s.leaky_slope = j.at("leaky_slope").get<float>();
    if (j.contains("linear_layers")) s.linear_layers = j.at("linear_layers").get<std::vector<int>>();
    if (j.contains("input_side")) s.input_side = j.at("input_side").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("malformed CNN spec: ") + ex.what());
  }
  validate(s);
  return s;
}

inline CnnSpec load_cnn_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError(path.string() + ": cannot open CNN spec");
  try {
    return cnn_spec_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& ex) {
    throw ConfigError(path.string() + ": " + ex.what());
  }
}

/// Numerically stable softmax in double precision.
inline std::array<double, kMaskClassCount> softmax(const Logits& z, double temperature = 1.0) {
  double m = z[0];
  for (float v : z) m = std::max(m, static_cast<double>(v));
  std::array<double, kMaskClassCount> p{};
  double sum = 0;
  for (int k = 0; k < kMaskClassCount; ++k) sum += p[k] = std::exp((z[k] - m) / temperature);
  for (double& v : p) v /= sum;
  return p;
}

inline int argmax(const Logits& z) {
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

// ---------------------------------------------------------------------------

class Cnn final : public ClassifierBackend {
 public:
  /// Intermediate activations of one forward pass, kept for backprop.
  struct Trace {
    std::vector<float> input;  // CHW
    std::vector<float> conv1, pool1, conv2, pool2, hidden_pre, hidden;
    std::vector<std::uint32_t> argmax1, argmax2;
    Logits logits{};
  };

  explicit Cnn(CnnSpec spec = {}, std::uint64_t seed = 0, Normalization norm = {})
      : spec_(std::move(spec)), norm_(norm) {
    validate(spec_);
    layout();
    initialize(seed);
  }

  const CnnSpec& spec() const noexcept { return spec_; }
  const Normalization& normalization() const noexcept { return norm_; }
  std::span<float> parameters() noexcept { return params_; }
  std::span<const float> parameters() const noexcept { return params_; }
  std::size_t parameter_count() const override { return params_.size(); }
  std::string name() const override { return "cnn"; }

  std::vector<Logits> predict_logits(std::span<const Image> batch) const override {
    std::vector<Logits> out;
    out.reserve(batch.size());
    Trace trace;
    for (const auto& img : batch) out.push_back(forward(normalize(img, norm_), trace));
    return out;
  }

  /// Forward on an already normalized image.
  Logits forward(const Image& normalized, Trace& t) const {
    if (normalized.height() != spec_.input_side || normalized.width() != spec_.input_side)
      throw InvalidInput("CNN input must be " + std::to_string(spec_.input_side) + "x" +
                         std::to_string(spec_.input_side));
    const int side = spec_.input_side;
    t.input.resize(static_cast<std::size_t>(3) * side * side);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        for (int c = 0; c < 3; ++c) t.input[(static_cast<std::size_t>(c) * side + y) * side + x] = normalized.at(y, x, c);

    conv_forward(0, t.input, t.conv1);
    leaky_inplace(t.conv1);
    pool_forward(0, t.conv1, t.pool1, t.argmax1);
    conv_forward(1, t.pool1, t.conv2);
    leaky_inplace(t.conv2);
    pool_forward(1, t.conv2, t.pool2, t.argmax2);

    linear_forward(0, t.pool2, t.hidden_pre);
    t.hidden = t.hidden_pre;
    leaky_inplace(t.hidden);
    std::vector<float> out;
    linear_forward(1, t.hidden, out);
    std::copy(out.begin(), out.end(), t.logits.begin());
    return t.logits;
  }

  /// Accumulates d(loss)/d(params) into grad given d(loss)/d(logits).
  void backward(const Trace& t, const std::array<double, kMaskClassCount>& dlogits, std::span<float> grad) const {
    std::vector<float> d_out(dlogits.begin(), dlogits.end());
    std::vector<float> d_hidden, d_flat, d_conv2, d_pool1, d_conv1;

    linear_backward(1, t.hidden, d_out, grad, &d_hidden);
    leaky_backward(t.hidden_pre, d_hidden);
    linear_backward(0, t.pool2, d_hidden, grad, &d_flat);

    pool_backward(1, d_flat, t.argmax2, d_conv2);
    leaky_backward(t.conv2, d_conv2);
    conv_backward(1, t.pool1, d_conv2, grad, &d_pool1);
    pool_backward(0, d_pool1, t.argmax1, d_conv1);
    leaky_backward(t.conv1, d_conv1);
    conv_backward(0, t.input, d_conv1, grad, nullptr);
  }

 private:
  struct ConvShape {
    int in_c, out_c, k, side, pool, pooled;
    std::size_t w_off, b_off;
  };
  struct LinearShape {
    int in, out;
    std::size_t w_off, b_off;
  };

  void layout() {
    std::size_t off = 0;
    int in_c = 3, side = spec_.input_side;
    for (int i = 0; i < 2; ++i) {
      const auto& b = spec_.conv_blocks[i];
      ConvShape s{in_c, b.out_channels, b.kernel, side, b.pool, side / b.pool, 0, 0};
      s.w_off = off;
      off += static_cast<std::size_t>(s.out_c) * s.in_c * s.k * s.k;
      s.b_off = off;
      off += s.out_c;
      conv_[i] = s;
      in_c = b.out_channels;
      side = s.pooled;
    }
    int in = in_c * side * side;
    for (int i = 0; i < 2; ++i) {
      LinearShape s{in, spec_.linear_layers[i], off, 0};
      off += static_cast<std::size_t>(s.in) * s.out;
      s.b_off = off;
      off += s.out;
      linear_[i] = s;
      in = s.out;
    }
    params_.assign(off, 0.0f);
  }

  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    auto fill = [&](std::size_t begin, std::size_t count, double bound) {
      for (std::size_t i = 0; i < count; ++i) params_[begin + i] = static_cast<float>(uniform(rng, -bound, bound));
    };
    for (const auto& c : conv_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(c.in_c) * c.k * c.k);
      fill(c.w_off, static_cast<std::size_t>(c.out_c) * c.in_c * c.k * c.k, bound);
      fill(c.b_off, c.out_c, bound);
    }
    for (const auto& l : linear_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
      fill(l.w_off, static_cast<std::size_t>(l.in) * l.out, bound);
      fill(l.b_off, l.out, bound);
    }
  }

  void leaky_inplace(std::vector<float>& v) const {
    const float slope = spec_.leaky_slope;
    for (float& x : v) x = x > 0 ? x : slope * x;
  }

  // pre-activation and post-activation share sign, so either works as `act`
  void leaky_backward(const std::vector<float>& act, std::vector<float>& d) const {
    const float slope = spec_.leaky_slope;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!(act[i] > 0)) d[i] *= slope;
  }

  // 'same' padding, stride 1, CHW
  void conv_forward(int layer, const std::vector<float>& in, std::vector<float>& out) const {
    const ConvShape& s = conv_[layer];
    const int n = s.side, pad = s.k / 2;
    const std::size_t plane = static_cast<std::size_t>(n) * n;
    out.assign(plane * s.out_c, 0.0f);
    for (int oc = 0; oc < s.out_c; ++oc) {
      float* o = out.data() + oc * plane;
      std::fill(o, o + plane, params_[s.b_off + oc]);
      for (int ic = 0; ic < s.in_c; ++ic) {
        const float* src = in.data() + ic * plane;
        for (int ky = 0; ky < s.k; ++ky)
          for (int kx = 0; kx < s.k; ++kx) {
            const float w = params_[s.w_off + ((static_cast<std::size_t>(oc) * s.in_c + ic) * s.k + ky) * s.k + kx];
            const int dy = ky - pad, dx = kx - pad;
            const int x_lo = std::max(0, -dx), x_hi = std::min(n, n - dx);
            for (int y = std::max(0, -dy); y < std::min(n, n - dy); ++y) {
              float* orow = o + static_cast<std::size_t>(y) * n;
              const float* irow = src + static_cast<std::size_t>(y + dy) * n + dx;
              for (int x = x_lo; x < x_hi; ++x) orow[x] += w * irow[x];
            }
          }
      }
    }
  }

  void conv_backward(int layer, const std::vector<float>& in, const std::vector<float>& d_out, std::span<float> grad,
                     std::vector<float>* d_in) const {
    const ConvShape& s = conv_[layer];
    const int n = s.side, pad = s.k / 2;
    const std::size_t plane = static_cast<std::size_t>(n) * n;
    if (d_in) d_in->assign(plane * s.in_c, 0.0f);
    for (int oc = 0; oc < s.out_c; ++oc) {
      const float* g = d_out.data() + oc * plane;
      double bsum = 0;
      for (std::size_t i = 0; i < plane; ++i) bsum += g[i];
      grad[s.b_off + oc] += static_cast<float>(bsum);
      for (int ic = 0; ic < s.in_c; ++ic) {
        const float* src = in.data() + ic * plane;
        float* dsrc = d_in ? d_in->data() + ic * plane : nullptr;
        for (int ky = 0; ky < s.k; ++ky)
          for (int kx = 0; kx < s.k; ++kx) {
            const std::size_t wi = s.w_off + ((static_cast<std::size_t>(oc) * s.in_c + ic) * s.k + ky) * s.k + kx;
            const float w = params_[wi];
            const int dy = ky - pad, dx = kx - pad;
            const int x_lo = std::max(0, -dx), x_hi = std::min(n, n - dx);
            float acc = 0.0f;
            for (int y = std::max(0, -dy); y < std::min(n, n - dy); ++y) {
              const float* grow = g + static_cast<std::size_t>(y) * n;
              const float* irow = src + static_cast<std::size_t>(y + dy) * n + dx;
              float row_acc = 0.0f;
              for (int x = x_lo; x < x_hi; ++x) row_acc += grow[x] * irow[x];
              acc += row_acc;
              if (dsrc) {
                float* drow = dsrc + static_cast<std::size_t>(y + dy) * n + dx;
                for (int x = x_lo; x < x_hi; ++x) drow[x] += w * grow[x];
              }
            }
            grad[wi] += acc;
          }
      }
    }
  }

  void pool_forward(int layer, const std::vector<float>& in, std::vector<float>& out,
                    std::vector<std::uint32_t>& arg) const {
    const ConvShape& s = conv_[layer];
    const int n = s.side, m = s.pooled, p = s.pool;
    out.assign(static_cast<std::size_t>(s.out_c) * m * m, 0.0f);
    arg.assign(out.size(), 0);
    for (int c = 0; c < s.out_c; ++c)
      for (int y = 0; y < m; ++y)
        for (int x = 0; x < m; ++x) {
          std::size_t best = (static_cast<std::size_t>(c) * n + y * p) * n + x * p;
          for (int py = 0; py < p; ++py)
            for (int px = 0; px < p; ++px) {
              std::size_t idx = (static_cast<std::size_t>(c) * n + y * p + py) * n + x * p + px;
              if (in[idx] > in[best]) best = idx;
            }
          const std::size_t o = (static_cast<std::size_t>(c) * m + y) * m + x;
          out[o] = in[best];
          arg[o] = static_cast<std::uint32_t>(best);
        }
  }

  void pool_backward(int layer, const std::vector<float>& d_out, const std::vector<std::uint32_t>& arg,
                     std::vector<float>& d_in) const {
    const ConvShape& s = conv_[layer];
    d_in.assign(static_cast<std::size_t>(s.out_c) * s.side * s.side, 0.0f);
    for (std::size_t i = 0; i < d_out.size(); ++i) d_in[arg[i]] += d_out[i];
  }

  void linear_forward(int layer, const std::vector<float>& in, std::vector<float>& out) const {
    const LinearShape& s = linear_[layer];
    out.resize(s.out);
    for (int o = 0; o < s.out; ++o) {
      const float* w = params_.data() + s.w_off + static_cast<std::size_t>(o) * s.in;
      float acc = 0.0f;
      for (int i = 0; i < s.in; ++i) acc += w[i] * in[i];
      out[o] = acc + params_[s.b_off + o];
    }
  }

  void linear_backward(int layer, const std::vector<float>& in, const std::vector<float>& d_out, std::span<float> grad,
                       std::vector<float>* d_in) const {
    const LinearShape& s = linear_[layer];
    if (d_in) d_in->assign(s.in, 0.0f);
    for (int o = 0; o < s.out; ++o) {
      const float g = d_out[o];
      grad[s.b_off + o] += g;
      if (g == 0.0f) continue;
      const float* w = params_.data() + s.w_off + static_cast<std::size_t>(o) * s.in;
      float* gw = grad.data() + s.w_off + static_cast<std::size_t>(o) * s.in;
      for (int i = 0; i < s.in; ++i) gw[i] += g * in[i];
      if (d_in)
        for (int i = 0; i < s.in; ++i) (*d_in)[i] += g * w[i];
    }
  }

  CnnSpec spec_;
  Normalization norm_;
  std::array<ConvShape, 2> conv_{};
  std::array<LinearShape, 2> linear_{};
  std::vector<float> params_;
};

// ---------------------------------------------------------------------------
// Model files: 8-byte magic, u32 version, u32 metadata length, JSON metadata
// (spec, normalization, parameter count), then little-endian float32 params.

inline constexpr char kModelMagic[8] = {'M', 'W', 'C', 'N', 'N', 'M', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw FormatError(path + ": truncated model file");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void save_model(const Cnn& model, const std::filesystem::path& path) {
  nlohmann::ordered_json meta;
  meta["format"] = "maskwatch-cnn";
  meta["spec"] = cnn_spec_to_json(model.spec());
  meta["normalization"] = {{"mean", model.normalization().mean}, {"std", model.normalization().std}};
  meta["parameter_count"] = model.parameter_count();
  const std::string text = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path.string() + ": cannot open for writing");
  out.write(kModelMagic, sizeof kModelMagic);
  detail::put_u32(out, kModelVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (float v : model.parameters()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw Error(path.string() + ": write failed");
}

inline Cnn load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError(path.string() + ": model file not found");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError(path.string() + ": cannot open model file");
  const std::string p = path.string();

  char magic[sizeof kModelMagic];
  in.read(magic, sizeof magic);
  if (in.gcount() != sizeof magic || std::memcmp(magic, kModelMagic, sizeof magic) != 0)
    throw FormatError(p + ": not a maskwatch model (bad magic)");
  const std::uint32_t version = detail::get_u32(in, p);
  if (version != kModelVersion) throw FormatError(p + ": unsupported model version " + std::to_string(version));
  const std::uint32_t meta_len = detail::get_u32(in, p);
  if (meta_len > (1u << 20)) throw FormatError(p + ": metadata block too large");
  std::string text(meta_len, '\0');
  in.read(text.data(), meta_len);
  if (in.gcount() != static_cast<std::streamsize>(meta_len)) throw FormatError(p + ": truncated metadata");

  CnnSpec spec;
  Normalization norm;
  std::size_t count = 0;
  try {
    auto meta = nlohmann::json::parse(text);
    spec = cnn_spec_from_json(meta.at("spec"));
    norm.mean = meta.at("normalization").at("mean").get<Rgb>();
    norm.std = meta.at("normalization").at("std").get<Rgb>();
    count = meta.at("parameter_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(p + ": bad metadata: " + ex.what());
  } catch (const ConfigError& ex) {
    throw FormatError(p + ": bad metadata: " + ex.what());
  }

  Cnn model(spec, 0, norm);
  if (count != model.parameter_count()) throw FormatError(p + ": parameter count does not match spec");
  for (float& v : model.parameters()) v = std::bit_cast<float>(detail::get_u32(in, p));
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(p + ": trailing bytes after parameters");
  return model;
}

}  // namespace maskwatch
