#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfnet/error.hpp"
#include "sfnet/pseudo_labeling.hpp"
#include "sfnet/tensor.hpp"
#include "sfnet/types.hpp"

namespace sfnet {

struct Video {
  std::string id;
  std::size_t length = 0;
  std::string split = "train";
  std::vector<float> features;  // length x D, frame-major
  std::vector<Segment> segments;  // ground truth; Segment::video is this video's corpus index
  std::map<std::string, std::vector<FrameAnnotation>> annotations;  // keyed by strategy name

  friend bool operator==(const Video&, const Video&) = default;
};

struct FeatureCorpus {
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  std::vector<Video> videos;

  std::vector<std::size_t> split_indices(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < videos.size(); ++i) {
      if (videos[i].split == split) out.push_back(i);
    }
    return out;
  }

  friend bool operator==(const FeatureCorpus&, const FeatureCorpus&) = default;
};

struct SyntheticSpec {
  std::size_t num_classes = 5;
  std::size_t feature_dim = 32;
  std::size_t train_videos = 80;
  std::size_t test_videos = 20;
  std::size_t min_length = 150;
  std::size_t max_length = 250;
  std::size_t min_instances = 2;
  std::size_t max_instances = 4;
  std::size_t min_instance_length = 4;
  // Distinct action classes drawn per video; instances pick among them.
  std::size_t classes_per_video = 1;
  double background_fraction = 0.6;
  double separation = 2.0;
  // Expected Euclidean norm of the per-frame noise vector (per-dimension
  // standard deviation noise / sqrt(D)).
  double noise = 1.0;
  // Boxcar width applied to frames around action boundaries; <= 1 disables.
  std::size_t boundary_smoothing = 3;
  std::uint64_t seed = 0;
};

inline void validate(const SyntheticSpec& s) {
  auto fail = [](const std::string& m) { throw ConfigError("synthetic spec: " + m); };
  if (s.train_videos + s.test_videos == 0) fail("needs at least one video");
  if (s.num_classes == 0) fail("num_classes must be positive");
  if (s.feature_dim == 0) fail("feature_dim must be positive");
  if (s.min_length == 0 || s.min_length > s.max_length) fail("invalid length range");
  if (s.min_instances == 0 || s.min_instances > s.max_instances) fail("invalid instance range");
  if (s.min_instance_length == 0) fail("min_instance_length must be positive");
  if (s.classes_per_video == 0 || s.classes_per_video > s.num_classes) {
    fail("classes_per_video must lie in [1, num_classes]");
  }
  if (!(s.background_fraction >= 0.0 && s.background_fraction < 1.0)) {
    fail("background_fraction must lie in [0, 1)");
  }
  if (!(s.separation > 0.0)) fail("separation must be positive");
  if (!(s.noise >= 0.0)) fail("noise must be non-negative");
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over the combined words
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Unit-norm random class prototypes, row c-1 for class c.
inline std::vector<std::vector<double>> class_prototypes(const SyntheticSpec& spec) {
  std::mt19937_64 rng(mix_seed(spec.seed, 0x70726f746fULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> protos(spec.num_classes, std::vector<double>(spec.feature_dim));
  for (auto& p : protos) {
    double norm = 0.0;
    for (double& x : p) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : p) x /= norm;
  }
  return protos;
}

namespace detail {

// Splits `total` into `parts` non-negative integers, uniformly over compositions.
template <class Rng>
std::vector<std::size_t> random_partition(std::size_t total, std::size_t parts, Rng& rng) {
  std::vector<std::size_t> cuts;
  std::uniform_int_distribution<std::size_t> dist(0, total);
  for (std::size_t i = 0; i + 1 < parts; ++i) cuts.push_back(dist(rng));
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::size_t> out;
  std::size_t prev = 0;
  for (std::size_t c : cuts) {
    out.push_back(c - prev);
    prev = c;
  }
  out.push_back(total - prev);
  return out;
}

}  // namespace detail

// Planted-segment feature corpus: class-c action frames are the scaled class
// prototype plus Gaussian noise, background frames are noise only. Segments
// in a video never overlap or touch.
inline FeatureCorpus generate_corpus(const SyntheticSpec& spec) {
  validate(spec);
  const auto protos = class_prototypes(spec);
  FeatureCorpus corpus;
  corpus.feature_dim = spec.feature_dim;
  corpus.num_classes = spec.num_classes;
  const std::size_t total = spec.train_videos + spec.test_videos;
  const std::size_t d = spec.feature_dim;
  const double sigma = spec.noise / std::sqrt(static_cast<double>(d));

  for (std::size_t v = 0; v < total; ++v) {
    std::mt19937_64 rng(mix_seed(spec.seed, v + 1));
    Video video;
    video.split = v < spec.train_videos ? "train" : "test";
    char id[32];
    std::snprintf(id, sizeof(id), "video_%05zu", v);
    video.id = id;
    video.length = std::uniform_int_distribution<std::size_t>(spec.min_length, spec.max_length)(rng);
    const std::size_t n =
        std::uniform_int_distribution<std::size_t>(spec.min_instances, spec.max_instances)(rng);
    const std::size_t len = video.length;

    const auto wanted = static_cast<std::size_t>(
        std::llround((1.0 - spec.background_fraction) * static_cast<double>(len)));
    const std::size_t action_total = std::max(wanted, n * spec.min_instance_length);
    if (action_total + (n - 1) > len) {
      throw ConfigError("synthetic spec: " + std::to_string(n) + " instances of at least " +
                        std::to_string(spec.min_instance_length) + " frames do not fit in a " +
                        std::to_string(len) + "-frame video");
    }
    auto inst = detail::random_partition(action_total - n * spec.min_instance_length, n, rng);
    auto gaps = detail::random_partition(len - action_total - (n - 1), n + 1, rng);
    std::vector<int> pool(spec.num_classes);
    std::iota(pool.begin(), pool.end(), 1);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(spec.classes_per_video);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::size_t t = gaps[0];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t l = inst[i] + spec.min_instance_length;
      video.segments.push_back(Segment{v, t, t + l - 1, pool[pick(rng)], 1.0});
      t += l + gaps[i + 1] + 1;
    }

    std::vector<double> raw(len * d, 0.0);
    std::normal_distribution<double> normal(0.0, sigma);
    std::vector<int> frame_class(len, 0);
    for (const Segment& s : video.segments) {
      for (std::size_t f = s.start; f <= s.end; ++f) frame_class[f] = s.label;
    }
    for (std::size_t f = 0; f < len; ++f) {
      for (std::size_t k = 0; k < d; ++k) {
        double x = normal(rng);
        if (frame_class[f] > 0) x += spec.separation * protos[frame_class[f] - 1][k];
        raw[f * d + k] = x;
      }
    }
    if (spec.boundary_smoothing > 1) {
      const std::size_t half = spec.boundary_smoothing / 2;
      std::set<std::size_t> touched;
      for (const Segment& s : video.segments) {
        for (std::size_t edge : {s.start, s.end + 1}) {
          for (std::size_t f = edge >= half ? edge - half : 0; f < std::min(len, edge + half); ++f) {
            touched.insert(f);
          }
        }
      }
      const std::vector<double> src = raw;
      for (std::size_t f : touched) {
        const std::size_t lo = f >= half ? f - half : 0;
        const std::size_t hi = std::min(len - 1, f + half);
        for (std::size_t k = 0; k < d; ++k) {
          double acc = 0.0;
          for (std::size_t g = lo; g <= hi; ++g) acc += src[g * d + k];
          raw[f * d + k] = acc / static_cast<double>(hi - lo + 1);
        }
      }
    }
    video.features.assign(raw.begin(), raw.end());

    for (std::size_t s = 0; s < std::size(kAllStrategies); ++s) {
      const AnnotationStrategy strategy = kAllStrategies[s];
      video.annotations[std::string(to_string(strategy))] = simulate_annotations(
          video.segments, strategy, mix_seed(mix_seed(spec.seed, v + 1), s + 101));
    }
    corpus.videos.push_back(std::move(video));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Corpus file: "SFC1", u32 LE header length, JSON header, then one block of
// little-endian float32 features (length x D, frame-major) per video in header
// order.

inline constexpr char kCorpusMagic[4] = {'S', 'F', 'C', '1'};
inline constexpr int kCorpusVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open '" + path + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UserError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UserError("failed writing '" + path + "'");
}

}  // namespace detail

inline std::string serialize_corpus(const FeatureCorpus& corpus) {
  using nlohmann::json;
  json header;
  header["format"] = "sfnet-corpus";
  header["version"] = kCorpusVersion;
  header["feature_dim"] = corpus.feature_dim;
  header["num_classes"] = corpus.num_classes;
  json videos = json::array();
  for (const Video& v : corpus.videos) {
    json jv;
    jv["id"] = v.id;
    jv["length"] = v.length;
    jv["split"] = v.split;
    json segs = json::array();
    for (const Segment& s : v.segments) segs.push_back({s.start, s.end, s.label});
    jv["segments"] = segs;
    json ann = json::object();
    for (const auto& [name, list] : v.annotations) {
      json rows = json::array();
      for (const FrameAnnotation& a : list) rows.push_back({a.frame, a.label});
      ann[name] = rows;
    }
    jv["annotations"] = ann;
    videos.push_back(jv);
  }
  header["videos"] = videos;
  const std::string text = header.dump();

  std::string out(kCorpusMagic, 4);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const Video& v : corpus.videos) {
    for (float f : v.features) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline FeatureCorpus parse_corpus(std::string_view bytes) {
  using nlohmann::json;
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8) throw ParseError("corpus file truncated before header", bytes.size());
  if (std::memcmp(bytes.data(), kCorpusMagic, 4) != 0) {
    throw ParseError("not a corpus file: bad magic bytes", 0);
  }
  const std::size_t header_len = detail::get_u32(data + 4);
  if (8 + header_len > bytes.size()) {
    throw ParseError("header length " + std::to_string(header_len) + " runs past end of file", 4);
  }
  json header;
  try {
    header = json::parse(bytes.substr(8, header_len));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed corpus header: ") + e.what(), 8 + e.byte);
  }

  FeatureCorpus corpus;
  std::size_t offset = 8 + header_len;
  try {
    if (header.value("format", "") != "sfnet-corpus") {
      throw ParseError("header is not an sfnet corpus header", 8);
    }
    const int version = header.at("version").get<int>();
    if (version != kCorpusVersion) {
      throw ParseError("unsupported corpus version " + std::to_string(version) +
                           " (expected " + std::to_string(kCorpusVersion) + ")",
                       8);
    }
    corpus.feature_dim = header.at("feature_dim").get<std::size_t>();
    corpus.num_classes = header.at("num_classes").get<std::size_t>();
    if (corpus.feature_dim == 0 || corpus.num_classes == 0) {
      throw ParseError("feature_dim and num_classes must be positive", 8);
    }
    const std::size_t d = corpus.feature_dim;
    for (const json& jv : header.at("videos")) {
      Video v;
      const std::size_t index = corpus.videos.size();
      v.id = jv.at("id").get<std::string>();
      v.length = jv.at("length").get<std::size_t>();
      v.split = jv.at("split").get<std::string>();
      if (v.length == 0) throw ParseError("video '" + v.id + "' has zero length", 8);
      for (const json& s : jv.at("segments")) {
        Segment seg{index, s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(),
                    s.at(2).get<int>(), 1.0};
        if (seg.start > seg.end || seg.end >= v.length || seg.label < 1 ||
            static_cast<std::size_t>(seg.label) > corpus.num_classes) {
          throw ParseError("invalid segment in video '" + v.id + "'", 8);
        }
        v.segments.push_back(seg);
      }
      for (const auto& [name, rows] : jv.at("annotations").items()) {
        auto& list = v.annotations[name];
        for (const json& a : rows) {
          FrameAnnotation fa{index, a.at(0).get<std::size_t>(), a.at(1).get<int>()};
          if (fa.frame >= v.length || fa.label < 1 ||
              static_cast<std::size_t>(fa.label) > corpus.num_classes) {
            throw ParseError("invalid annotation in video '" + v.id + "'", 8);
          }
          list.push_back(fa);
        }
      }
      const std::size_t count = v.length * d;
      if (offset + 4 * count > bytes.size()) {
        throw ParseError("feature block of video '" + v.id + "' is truncated", offset);
      }
      v.features.resize(count);
      for (std::size_t i = 0; i < count; ++i, offset += 4) {
        const float f = std::bit_cast<float>(detail::get_u32(data + offset));
        if (!std::isfinite(f)) {
          throw ParseError("non-finite feature value in video '" + v.id + "'", offset);
        }
        v.features[i] = f;
      }
      corpus.videos.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid corpus header: ") + e.what(), 8);
  }
  if (offset != bytes.size()) {
    throw ParseError("unexpected trailing bytes after feature blocks", offset);
  }
  return corpus;
}

inline void save_corpus(const FeatureCorpus& corpus, const std::string& path) {
  detail::write_file(path, serialize_corpus(corpus));
}

inline FeatureCorpus load_corpus(const std::string& path) {
  return parse_corpus(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Batching

template <class S>
struct Batch {
  std::vector<std::size_t> video_indices;    // corpus indices
  Tensor<S> features;                        // [N, T, D], zero-padded
  std::vector<std::size_t> lengths;
  std::vector<FrameAnnotation> annotations;  // Frame/Segment::video is the batch row
  std::vector<Segment> ground_truth;
};

// Zero-padded batch of the given corpus videos with T = `pad_to` or the
// longest video when pad_to is 0.
template <class S>
Batch<S> make_batch(const FeatureCorpus& corpus, std::span<const std::size_t> indices,
                    const std::string& strategy, std::size_t pad_to = 0) {
  Batch<S> b;
  b.video_indices.assign(indices.begin(), indices.end());
  std::size_t frames = pad_to;
  for (std::size_t i : indices) frames = std::max(frames, corpus.videos.at(i).length);
  const std::size_t d = corpus.feature_dim;
  b.features = Tensor<S>(Shape{indices.size(), frames, d});
  for (std::size_t row = 0; row < indices.size(); ++row) {
    const Video& v = corpus.videos[indices[row]];
    b.lengths.push_back(v.length);
    std::copy(v.features.begin(), v.features.end(), b.features.raw() + row * frames * d);
    for (Segment s : v.segments) {
      s.video = row;
      b.ground_truth.push_back(s);
    }
    if (auto it = v.annotations.find(strategy); it != v.annotations.end()) {
      for (FrameAnnotation a : it->second) {
        a.video = row;
        b.annotations.push_back(a);
      }
    }
  }
  return b;
}

// Seeded per-epoch shuffles of a video index list cut into batches.
class BatchSchedule {
 public:
  BatchSchedule(std::vector<std::size_t> videos, std::size_t batch_size, std::uint64_t seed)
      : videos_(std::move(videos)), batch_size_(batch_size), seed_(seed) {
    if (batch_size_ == 0) throw ConfigError("batch size must be at least 1");
  }

  std::vector<std::vector<std::size_t>> epoch(std::size_t index) const {
    std::vector<std::size_t> order = videos_;
    std::mt19937_64 rng(mix_seed(seed_, 0xba7c0000ULL + index));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size_) {
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                       order.begin() + static_cast<std::ptrdiff_t>(
                                           std::min(order.size(), i + batch_size_)));
    }
    return out;
  }

  // Batch index lists of consecutive epochs until `count` batches exist.
  std::vector<std::vector<std::size_t>> take(std::size_t count) const {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t e = 0; out.size() < count && !videos_.empty(); ++e) {
      for (auto& b : epoch(e)) {
        if (out.size() == count) break;
        out.push_back(std::move(b));
      }
    }
    return out;
  }

 private:
  std::vector<std::size_t> videos_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

// One epoch of materialised batches over the given corpus videos.
template <class S = double>
std::vector<Batch<S>> make_batches(const FeatureCorpus& corpus, std::vector<std::size_t> videos,
                                   std::size_t batch_size, std::uint64_t seed,
                                   const std::string& strategy, std::size_t epoch = 0) {
  BatchSchedule schedule(std::move(videos), batch_size, seed);
  std::vector<Batch<S>> out;
  for (const auto& idx : schedule.epoch(epoch)) out.push_back(make_batch<S>(corpus, idx, strategy));
  return out;
}

}  // namespace sfnet
