#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sfnet/corpus.hpp"
#include "sfnet/error.hpp"
#include "sfnet/evaluation.hpp"
#include "sfnet/inference.hpp"
#include "sfnet/pseudo_labeling.hpp"

namespace sfnet {

enum class Precision { f32, f64 };

// Every training and inference knob. Defaults: alpha = beta = 1, eta = 5,
// r = 5, xi = 0.9, lr = 1e-3, batch 32.
struct TrainConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double eta = 5.0;
  std::size_t radius = 5;
  double xi = 0.9;
  double theta = 0.65;
  double video_threshold = 0.5;
  std::size_t k_ratio = 8;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t iterations = 500;
  std::uint64_t seed = 0;
  std::size_t hidden = 256;
  std::size_t conv_width = 3;
  std::string strategy = "human_like";
  bool use_background = true;
  bool use_actionness = true;
  bool use_expansion = true;
  bool weak_only = false;
  bool expand_stop_on_failure = true;
  bool expanded_actionness = true;
  ScoreScale score_scale = ScoreScale::probability;
  std::size_t gap_fill = 0;
  ApMode ap_mode = ApMode::uninterpolated;
  Precision precision = Precision::f32;
};

// Ablation ladder: weak (video loss only) -> sf -> sfb -> sfba -> sfbae.
inline void apply_ablation(TrainConfig& c, const std::string& name) {
  c.weak_only = name == "weak";
  c.use_background = name == "sfb" || name == "sfba" || name == "sfbae";
  c.use_actionness = name == "sfba" || name == "sfbae";
  c.use_expansion = name == "sfbae";
  if (name != "weak" && name != "sf" && name != "sfb" && name != "sfba" && name != "sfbae") {
    throw ConfigError("unknown ablation '" + name + "' (expected weak, sf, sfb, sfba or sfbae)");
  }
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long n = std::stoull(v, &pos);
      if (pos == v.size()) return n;
    }
  } catch (const std::logic_error&) {
  }
  throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

inline double non_negative(const std::string& key, double v) {
  if (!(v >= 0.0)) throw ConfigError("config key '" + key + "' must be >= 0");
  return v;
}

}  // namespace detail

inline void apply_setting(TrainConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  const std::string& k = key;
  const std::string& v = value;
  if (k == "alpha") c.alpha = non_negative(k, parse_real(k, v));
  else if (k == "beta") c.beta = non_negative(k, parse_real(k, v));
  else if (k == "eta") c.eta = non_negative(k, parse_real(k, v));
  else if (k == "radius") c.radius = parse_count(k, v);
  else if (k == "xi") {
    c.xi = parse_real(k, v);
    if (!(c.xi > 0.0 && c.xi <= 1.0)) throw ConfigError("xi must lie in (0, 1]");
  } else if (k == "theta") c.theta = parse_real(k, v);
  else if (k == "video_threshold") c.video_threshold = non_negative(k, parse_real(k, v));
  else if (k == "k_ratio") {
    c.k_ratio = parse_count(k, v);
    if (c.k_ratio == 0) throw ConfigError("k_ratio must be positive");
  } else if (k == "learning_rate" || k == "lr") c.learning_rate = non_negative(k, parse_real(k, v));
  else if (k == "batch_size") {
    c.batch_size = parse_count(k, v);
    if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  } else if (k == "iterations") c.iterations = parse_count(k, v);
  else if (k == "seed") c.seed = parse_count(k, v);
  else if (k == "hidden") c.hidden = parse_count(k, v);
  else if (k == "conv_width") c.conv_width = parse_count(k, v);
  else if (k == "strategy") {
    parse_strategy(v);
    c.strategy = v;
  } else if (k == "use_background") c.use_background = parse_flag(k, v);
  else if (k == "use_actionness") c.use_actionness = parse_flag(k, v);
  else if (k == "use_expansion") c.use_expansion = parse_flag(k, v);
  else if (k == "weak_only") c.weak_only = parse_flag(k, v);
  else if (k == "expand_stop_on_failure") c.expand_stop_on_failure = parse_flag(k, v);
  else if (k == "expanded_actionness") c.expanded_actionness = parse_flag(k, v);
  else if (k == "score_scale") c.score_scale = parse_score_scale(v);
  else if (k == "gap_fill") c.gap_fill = parse_count(k, v);
  else if (k == "ap_mode") {
    if (v == "uninterpolated") c.ap_mode = ApMode::uninterpolated;
    else if (v == "eleven_point") c.ap_mode = ApMode::eleven_point;
    else throw ConfigError("ap_mode must be uninterpolated or eleven_point");
  } else if (k == "precision") {
    if (v == "f32") c.precision = Precision::f32;
    else if (v == "f64") c.precision = Precision::f64;
    else throw ConfigError("precision must be f32 or f64");
  } else if (k == "ablation") apply_ablation(c, v);
  else throw ConfigError("unknown config key '" + k + "'");
}

// Applies "key = value" lines; '#' starts a comment.
inline void apply_config_text(TrainConfig& c, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    }
    apply_setting(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

// "key=value" override as given on the command line.
inline void apply_override(TrainConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  apply_setting(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

// Canonical text form; parses back to an identical config.
inline std::string to_text(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  auto flag = [](bool b) { return b ? "true" : "false"; };
  out << "alpha = " << c.alpha << "\n"
      << "beta = " << c.beta << "\n"
      << "eta = " << c.eta << "\n"
      << "radius = " << c.radius << "\n"
      << "xi = " << c.xi << "\n"
      << "theta = " << c.theta << "\n"
      << "video_threshold = " << c.video_threshold << "\n"
      << "k_ratio = " << c.k_ratio << "\n"
      << "learning_rate = " << c.learning_rate << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "iterations = " << c.iterations << "\n"
      << "seed = " << c.seed << "\n"
      << "hidden = " << c.hidden << "\n"
      << "conv_width = " << c.conv_width << "\n"
      << "strategy = " << c.strategy << "\n"
      << "use_background = " << flag(c.use_background) << "\n"
      << "use_actionness = " << flag(c.use_actionness) << "\n"
      << "use_expansion = " << flag(c.use_expansion) << "\n"
      << "weak_only = " << flag(c.weak_only) << "\n"
      << "expand_stop_on_failure = " << flag(c.expand_stop_on_failure) << "\n"
      << "expanded_actionness = " << flag(c.expanded_actionness) << "\n"
      << "score_scale = " << to_string(c.score_scale) << "\n"
      << "gap_fill = " << c.gap_fill << "\n"
      << "ap_mode = " << (c.ap_mode == ApMode::uninterpolated ? "uninterpolated" : "eleven_point")
      << "\n"
      << "precision = " << (c.precision == Precision::f32 ? "f32" : "f64") << "\n";
  return out.str();
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t config_hash(const TrainConfig& c) { return fnv1a(to_text(c)); }

inline void apply_spec_setting(SyntheticSpec& s, const std::string& k, const std::string& v) {
  using namespace detail;
  if (k == "num_classes") s.num_classes = parse_count(k, v);
  else if (k == "feature_dim") s.feature_dim = parse_count(k, v);
  else if (k == "train_videos") s.train_videos = parse_count(k, v);
  else if (k == "test_videos") s.test_videos = parse_count(k, v);
  else if (k == "min_length") s.min_length = parse_count(k, v);
  else if (k == "max_length") s.max_length = parse_count(k, v);
  else if (k == "min_instances") s.min_instances = parse_count(k, v);
  else if (k == "max_instances") s.max_instances = parse_count(k, v);
  else if (k == "min_instance_length") s.min_instance_length = parse_count(k, v);
  else if (k == "classes_per_video") s.classes_per_video = parse_count(k, v);
  else if (k == "background_fraction") s.background_fraction = parse_real(k, v);
  else if (k == "separation") s.separation = parse_real(k, v);
  else if (k == "noise") s.noise = parse_real(k, v);
  else if (k == "boundary_smoothing") s.boundary_smoothing = parse_count(k, v);
  else if (k == "seed") s.seed = parse_count(k, v);
  else throw ConfigError("unknown synthetic spec key '" + k + "'");
}

// Same "key = value" syntax as training configs.
inline void apply_spec_text(SyntheticSpec& s, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("spec line " + std::to_string(number) + ": expected key = value");
    }
    apply_spec_setting(s, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline InferenceSettings inference_settings(const TrainConfig& c) {
  InferenceSettings s;
  s.theta = c.theta;
  s.video_threshold = c.video_threshold;
  s.k_ratio = c.k_ratio;
  s.gap_fill = c.gap_fill;
  s.scale = c.score_scale;
  s.use_actionness = c.use_actionness && !c.weak_only;
  return s;
}

inline MiningOptions mining_options(const TrainConfig& c) {
  MiningOptions m;
  m.use_expansion = c.use_expansion && !c.weak_only;
  m.use_background = c.use_background && !c.weak_only;
  m.eta = c.eta;
  m.expansion.radius = c.radius;
  m.expansion.xi = c.xi;
  m.expansion.stop_on_failure = c.expand_stop_on_failure;
  return m;
}

}  // namespace sfnet
