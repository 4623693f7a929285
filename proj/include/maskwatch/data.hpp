#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "backend.hpp"
#include "errors.hpp"
#include "image.hpp"
#include "random.hpp"
#include "types.hpp"

namespace maskwatch {

enum class Split { Train, Val, Test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split split_from_name(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw InvalidInput("unknown split '" + std::string(name) + "'");
}

using BoxList = std::vector<BBox>;

/// Either a classification label or a list of ground-truth boxes.
using Annotation = std::variant<MaskClass, BoxList>;

struct ManifestEntry {
  std::string image_path;
  Split split = Split::Train;
  Annotation annotation = MaskClass::Correct;

  bool operator==(const ManifestEntry&) const = default;
};

/// Classification view of a manifest entry.
struct Sample {
  std::string image_path;
  MaskClass label;
  Split split;
};

/// Ordered, immutable dataset description. Paths are unique.
class Manifest {
 public:
  Manifest() = default;
  Manifest(std::vector<ManifestEntry> entries, std::uint64_t seed) : entries_(std::move(entries)), seed_(seed) {
    std::set<std::string_view> seen;
    for (const auto& e : entries_) {
      if (e.image_path.empty()) throw InvalidInput("manifest entry with empty image path");
      if (!seen.insert(e.image_path).second) throw InvalidInput("duplicate image path in manifest: " + e.image_path);
    }
  }

  const std::vector<ManifestEntry>& entries() const noexcept { return entries_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  std::vector<ManifestEntry> in_split(Split s) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries_)
      if (e.split == s) out.push_back(e);
    return out;
  }

  std::array<std::size_t, 3> split_sizes() const {
    std::array<std::size_t, 3> n{};
    for (const auto& e : entries_) ++n[static_cast<int>(e.split)];
    return n;
  }

  std::vector<Sample> samples(std::optional<Split> only = std::nullopt) const {
    std::vector<Sample> out;
    for (const auto& e : entries_) {
      if (only && e.split != *only) continue;
      const auto* label = std::get_if<MaskClass>(&e.annotation);
      if (!label) throw InvalidInput("manifest entry is not a classification sample: " + e.image_path);
      out.push_back({e.image_path, *label, e.split});
    }
    return out;
  }

  bool operator==(const Manifest&) const = default;

 private:
  std::vector<ManifestEntry> entries_;
  std::uint64_t seed_ = 0;
};

// ---------------------------------------------------------------------------
// Splitting

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Target split sizes: val and test are rounded half away from zero, train
/// takes the remainder.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& r) {
  if (r.train < 0 || r.val < 0 || r.test < 0) throw ConfigError("split ratios must be non-negative");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  auto rounded = [n](double ratio) { return static_cast<std::size_t>(std::round(ratio * static_cast<double>(n))); };
  std::size_t val = std::min(rounded(r.val), n);
  std::size_t test = std::min(rounded(r.test), n - val);
  return {n - val - test, val, test};
}

/// Reassigns splits over the given entries. Deterministic in (entry order, seed).
inline Manifest split_manifest(std::vector<ManifestEntry> entries, const SplitRatios& ratios, std::uint64_t seed) {
  const auto counts = split_counts(entries.size(), ratios);
  if (entries.empty()) throw InvalidInput("cannot split an empty entry list");

  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(order, rng);

  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    Split s = rank < counts[0] ? Split::Train : rank < counts[0] + counts[1] ? Split::Val : Split::Test;
    entries[order[rank]].split = s;
  }
  return Manifest(std::move(entries), seed);
}

// ---------------------------------------------------------------------------
// Manifest file: JSON lines. The first record is a header {"seed": N}; each
// following record has path, split and either label or boxes.

namespace detail {

inline nlohmann::ordered_json entry_to_json(const ManifestEntry& e) {
  nlohmann::ordered_json j;
  j["path"] = e.image_path;
  j["split"] = split_name(e.split);
  if (const auto* label = std::get_if<MaskClass>(&e.annotation)) {
    j["label"] = static_cast<int>(*label);
  } else {
    auto boxes = nlohmann::ordered_json::array();
    for (const auto& b : std::get<BoxList>(e.annotation)) boxes.push_back({b.cls, b.cx, b.cy, b.w, b.h});
    j["boxes"] = std::move(boxes);
  }
  return j;
}

inline ManifestEntry entry_from_json(const nlohmann::json& j, std::size_t line) {
  auto fail = [line](const std::string& what) { return ParseError(what, line); };
  if (!j.is_object()) throw fail("record is not an object");
  for (const auto& [key, _] : j.items())
    if (key != "path" && key != "split" && key != "label" && key != "boxes") throw fail("unknown key '" + key + "'");
  if (!j.contains("path") || !j["path"].is_string()) throw fail("missing string 'path'");
  if (!j.contains("split") || !j["split"].is_string()) throw fail("missing string 'split'");

  ManifestEntry e;
  e.image_path = j["path"].get<std::string>();
  try {
    e.split = split_from_name(j["split"].get<std::string>());
  } catch (const InvalidInput& ex) {
    throw fail(ex.what());
  }

  const bool has_label = j.contains("label");
  const bool has_boxes = j.contains("boxes");
  if (has_label == has_boxes) throw fail("record needs exactly one of 'label' or 'boxes'");
  if (has_label) {
    if (!j["label"].is_number_integer()) throw fail("'label' must be an integer");
    int id = j["label"].get<int>();
    if (id < 0 || id >= kMaskClassCount) throw fail("'label' out of range 0-2");
    e.annotation = static_cast<MaskClass>(id);
  } else {
    if (!j["boxes"].is_array()) throw fail("'boxes' must be a list");
    BoxList boxes;
    for (const auto& item : j["boxes"]) {
      if (!item.is_array() || item.size() != 5)
        throw fail("box must have 5 fields, got " + std::to_string(item.is_array() ? item.size() : 1));
      for (const auto& v : item)
        if (!v.is_number()) throw fail("box fields must be numbers");
      if (!item[0].is_number_integer()) throw fail("box class id must be an integer");
      BBox b{item[1].get<double>(), item[2].get<double>(), item[3].get<double>(), item[4].get<double>(),
             item[0].get<int>(), 1.0};
      if (auto why = box_violation(b)) throw fail("invalid box: " + *why);
      boxes.push_back(b);
    }
    e.annotation = std::move(boxes);
  }
  return e;
}

}  // namespace detail

inline std::string manifest_to_string(const Manifest& m) {
  std::ostringstream out;
  out << nlohmann::ordered_json{{"seed", m.seed()}}.dump() << '\n';
  for (const auto& e : m.entries()) out << detail::entry_to_json(e).dump() << '\n';
  return out.str();
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path.string() + ": cannot open for writing");
  out << manifest_to_string(m);
  if (!out) throw Error(path.string() + ": write failed");
}

inline Manifest parse_manifest(std::istream& in) {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;
  bool seen_header = false;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& ex) {
      throw ParseError(std::string("malformed JSON: ") + ex.what(), line);
    }
    if (!seen_header) {
      seen_header = true;
      if (j.is_object() && j.contains("seed") && !j.contains("path")) {
        if (j.size() != 1 || !j["seed"].is_number_unsigned()) throw ParseError("header must be {\"seed\": N}", line);
        seed = j["seed"].get<std::uint64_t>();
        continue;
      }
      throw ParseError("first record must be the {\"seed\": N} header", line);
    }
    entries.push_back(detail::entry_from_json(j, line));
  }
  try {
    return Manifest(std::move(entries), seed);
  } catch (const InvalidInput& ex) {
    throw ParseError(ex.what(), line);
  }
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError(path.string() + ": cannot open manifest");
  return parse_manifest(in);
}

/// Entries whose image file does not exist. Relative paths resolve against base.
inline std::vector<std::string> missing_images(const Manifest& m, const std::filesystem::path& base = {}) {
  std::vector<std::string> missing;
  for (const auto& e : m.entries()) {
    std::filesystem::path p(e.image_path);
    if (p.is_relative() && !base.empty()) p = base / p;
    if (!std::filesystem::exists(p)) missing.push_back(e.image_path);
  }
  return missing;
}

// ---------------------------------------------------------------------------
// Per-image box label files: "<class_id> <cx> <cy> <w> <h>" per line.

inline std::string format_box_line(const BBox& b) {
  std::ostringstream out;
  out << b.cls << std::fixed << std::setprecision(6) << ' ' << b.cx << ' ' << b.cy << ' ' << b.w << ' ' << b.h
      << '\n';
  return out.str();
}

inline void write_box_labels(const BoxList& boxes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path.string() + ": cannot open for writing");
  for (const auto& b : boxes) out << format_box_line(b);
}

inline BoxList parse_box_labels(std::istream& in) {
  BoxList boxes;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    std::istringstream fields(text);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 5) throw ParseError("expected 5 fields, got " + std::to_string(tok.size()), line);
    BBox b;
    try {
      std::size_t used = 0;
      b.cls = std::stoi(tok[0], &used);
      if (used != tok[0].size()) throw std::invalid_argument("class");
      double* dst[] = {&b.cx, &b.cy, &b.w, &b.h};
      for (int i = 0; i < 4; ++i) {
        *dst[i] = std::stod(tok[i + 1], &used);
        if (used != tok[i + 1].size()) throw std::invalid_argument("number");
      }
    } catch (const std::logic_error&) {
      throw ParseError("non-numeric field", line);
    }
    if (auto why = box_violation(b)) throw ParseError("invalid box: " + *why, line);
    boxes.push_back(b);
  }
  return boxes;
}

inline BoxList read_box_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError(path.string() + ": cannot open label file");
  try {
    return parse_box_labels(in);
  } catch (const ParseError& ex) {
    throw ParseError(ex.message(), ex.line(), path.string());
  }
}

// ---------------------------------------------------------------------------
// Pseudo-labeling

struct PseudoLabel {
  std::string image_path;
  BoxList boxes;
};

struct PseudoLabelResult {
  std::vector<PseudoLabel> labeled;
  std::vector<std::string> skipped;  // unreadable images
};

using ImageLoader = std::function<Image(const std::string&)>;

/// Keeps detections strictly above the threshold and turns them into ground
/// truth of target_class. Images left with no boxes are dropped.
inline PseudoLabelResult pseudo_label(const std::vector<std::string>& images, DetectorBackend& detector,
                                      double threshold, DetClass target_class, const ImageLoader& load = {},
                                      std::ostream& log = std::cerr) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("pseudo-label threshold must be in (0,1)");
  PseudoLabelResult result;
  for (const auto& path : images) {
    Image img;
    try {
      img = load ? load(path) : read_pnm(path);
    } catch (const Error& ex) {
      log << "warning: pseudo-label: skipping " << path << ": " << ex.what() << '\n';
      result.skipped.push_back(path);
      continue;
    }
    BoxList kept;
    for (const auto& d : detector.detect(img)) {
      if (!(d.conf > threshold)) continue;
      BBox b = d;
      b.cls = static_cast<int>(target_class);
      b.conf = 1.0;
      if (box_valid(b)) kept.push_back(b);
    }
    if (!kept.empty()) result.labeled.push_back({path, std::move(kept)});
  }
  return result;
}

}  // namespace maskwatch
