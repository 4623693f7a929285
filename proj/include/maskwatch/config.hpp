#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "errors.hpp"

namespace maskwatch {

/// Effective settings for one CLI invocation. Sources, lowest precedence
/// first: built-in defaults, MASKWATCH_SEED (seed only), config file, flags.
struct RunConfig {
  std::string subcommand;

  // paths
  std::string manifest, out, report, source, model, teacher, student_spec, spec, images, labels, root, resized, dets,
      gts;

  std::uint64_t seed = 0;
  double conf = 0.25;
  double nms = 0.45;
  double threshold = 0.9;
  double iou = 0.5;
  double margin = 0.2;
  std::string ratios = "0.8,0.1,0.1";
  std::string pseudo_class = "negative";
  std::string split = "test";

  int epochs = 10;
  double lr = 0.01;
  int batch = 32;
  double momentum = 0.9;
  bool augment = true;
  double temperature = 4.0;
  double alpha = 0.1;
  int side = 128;

  std::string pipeline = "single-shot";
  std::string detector = "scripted";
  std::string classifier = "fixed:correct";
  std::string hardware = "unspecified";
  int warmup = 1;
  int repeats = 5;
  int inputs = 32;
  int classes = 2;

  /// Sets one key from its textual value; unknown keys are an error.
  void set(const std::string& key, const std::string& value);

  /// "key=value" pairs for every key, in a fixed order.
  std::string describe() const;

  static const std::vector<std::string>& keys();
};

namespace detail {

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "on" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "off" || text == "0" || text == "no") return false;
    throw ConfigError("value for '" + key + "' must be a boolean, got '" + text + "'");
  } else if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else {
    if (!(in >> v) || !(in >> std::ws).eof())
      throw ConfigError("value for '" + key + "' is not a valid number: '" + text + "'");
    if constexpr (std::is_unsigned_v<T>) {
      if (text.find('-') != std::string::npos) throw ConfigError("value for '" + key + "' must be non-negative");
    }
    return v;
  }
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

template <class T>
std::pair<Setter, Getter> field(T RunConfig::*member) {
  Setter set = [member](RunConfig& c, const std::string& k, const std::string& v) {
    c.*member = parse_value<T>(k, v);
  };
  Getter get = [member](const RunConfig& c) {
    if constexpr (std::is_same_v<T, std::string>) {
      return c.*member;
    } else if constexpr (std::is_same_v<T, bool>) {
      return std::string(c.*member ? "true" : "false");
    } else {
      std::ostringstream out;
      out << c.*member;
      return out.str();
    }
  };
  return {set, get};
}

inline const std::vector<std::pair<std::string, std::pair<Setter, Getter>>>& config_fields() {
  static const std::vector<std::pair<std::string, std::pair<Setter, Getter>>> fields = {
      {"manifest", field(&RunConfig::manifest)},
      {"out", field(&RunConfig::out)},
      {"report", field(&RunConfig::report)},
      {"source", field(&RunConfig::source)},
      {"model", field(&RunConfig::model)},
      {"teacher", field(&RunConfig::teacher)},
      {"student-spec", field(&RunConfig::student_spec)},
      {"spec", field(&RunConfig::spec)},
      {"images", field(&RunConfig::images)},
      {"labels", field(&RunConfig::labels)},
      {"root", field(&RunConfig::root)},
      {"resized", field(&RunConfig::resized)},
      {"dets", field(&RunConfig::dets)},
      {"gts", field(&RunConfig::gts)},
      {"seed", field(&RunConfig::seed)},
      {"conf", field(&RunConfig::conf)},
      {"nms", field(&RunConfig::nms)},
      {"threshold", field(&RunConfig::threshold)},
      {"iou", field(&RunConfig::iou)},
      {"margin", field(&RunConfig::margin)},
      {"ratios", field(&RunConfig::ratios)},
      {"class", field(&RunConfig::pseudo_class)},
      {"split", field(&RunConfig::split)},
      {"epochs", field(&RunConfig::epochs)},
      {"lr", field(&RunConfig::lr)},
      {"batch", field(&RunConfig::batch)},
      {"momentum", field(&RunConfig::momentum)},
      {"augment", field(&RunConfig::augment)},
      {"temperature", field(&RunConfig::temperature)},
      {"alpha", field(&RunConfig::alpha)},
      {"side", field(&RunConfig::side)},
      {"pipeline", field(&RunConfig::pipeline)},
      {"detector", field(&RunConfig::detector)},
      {"classifier", field(&RunConfig::classifier)},
      {"hardware", field(&RunConfig::hardware)},
      {"warmup", field(&RunConfig::warmup)},
      {"repeats", field(&RunConfig::repeats)},
      {"inputs", field(&RunConfig::inputs)},
      {"classes", field(&RunConfig::classes)},
  };
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, accessors] : detail::config_fields())
    if (name == key) return accessors.first(*this, key, value);
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string RunConfig::describe() const {
  std::string out;
  for (const auto& [name, accessors] : detail::config_fields()) {
    if (!out.empty()) out += ' ';
    out += name + "=" + accessors.second(*this);
  }
  return out;
}

inline const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& f : detail::config_fields()) v.push_back(f.first);
    return v;
  }();
  return names;
}

/// Parses "key = value" lines; '#' starts a comment.
inline std::map<std::string, std::string> parse_config_text(std::istream& in) {
  std::map<std::string, std::string> values;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (auto hash = text.find('#'); hash != std::string::npos) text.erase(hash);
    text = detail::trim(text);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line) + ": expected 'key = value'");
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = detail::trim(text.substr(eq + 1));
    const auto& known = RunConfig::keys();
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("config line " + std::to_string(line) + ": unknown key '" + key + "'");
    values[key] = value;
  }
  return values;
}

/// Defaults, then MASKWATCH_SEED, then the file (if path is non-empty).
inline RunConfig load_config(const std::filesystem::path& path) {
  RunConfig cfg;
  if (const char* env = std::getenv("MASKWATCH_SEED"); env && *env) cfg.set("seed", env);
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw NotFoundError(path.string() + ": cannot open config file");
  for (const auto& [key, value] : parse_config_text(in)) cfg.set(key, value);
  return cfg;
}

}  // namespace maskwatch
