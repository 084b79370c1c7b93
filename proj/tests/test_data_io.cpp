#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "sfnet/checkpoint.hpp"
#include "sfnet/config.hpp"
#include "sfnet/corpus.hpp"
#include "sfnet/csv.hpp"
#include "test_support.hpp"

namespace sfnet {
namespace {

SyntheticSpec tiny_spec(std::uint64_t seed = 0) {
  SyntheticSpec s;
  s.train_videos = 6;
  s.test_videos = 3;
  s.min_length = 30;
  s.max_length = 50;
  s.feature_dim = 4;
  s.num_classes = 3;
  s.seed = seed;
  return s;
}

TEST(Corpus, RoundTripIsLossless) {
  const FeatureCorpus c = generate_corpus(tiny_spec());
  const std::string bytes = serialize_corpus(c);
  EXPECT_EQ(parse_corpus(bytes), c);
  EXPECT_EQ(serialize_corpus(parse_corpus(bytes)), bytes);
}

TEST(Corpus, SameSeedSameBytes) {
  EXPECT_EQ(serialize_corpus(generate_corpus(tiny_spec(3))),
            serialize_corpus(generate_corpus(tiny_spec(3))));
  EXPECT_NE(serialize_corpus(generate_corpus(tiny_spec(3))),
            serialize_corpus(generate_corpus(tiny_spec(4))));
}

TEST(Corpus, SaveAndLoadThroughFiles) {
  const auto dir = testing::scratch_dir("corpus_io");
  const FeatureCorpus c = generate_corpus(tiny_spec(5));
  save_corpus(c, (dir / "c.sfc").string());
  EXPECT_EQ(load_corpus((dir / "c.sfc").string()), c);
  EXPECT_THROW(load_corpus((dir / "missing.sfc").string()), UserError);
}

std::string header_bytes(const std::string& json) {
  std::string out = "SFC1";
  detail::put_u32(out, static_cast<std::uint32_t>(json.size()));
  return out + json;
}

void put_f32(std::string& out, float f) { detail::put_u32(out, std::bit_cast<std::uint32_t>(f)); }

TEST(Corpus, HandWrittenFileParses) {
  std::string bytes = header_bytes(
      R"({"format":"sfnet-corpus","version":1,"feature_dim":2,"num_classes":2,"videos":[)"
      R"({"id":"a","length":3,"split":"train","segments":[[1,2,2]],)"
      R"("annotations":{"uniform":[[1,2]]}}]})");
  for (float f : {0.0f, 1.0f, 2.0f, 3.0f, 4.0f, 5.5f}) put_f32(bytes, f);
  const FeatureCorpus c = parse_corpus(bytes);
  ASSERT_EQ(c.videos.size(), 1u);
  EXPECT_EQ(c.videos[0].id, "a");
  EXPECT_EQ(c.videos[0].features, (std::vector<float>{0, 1, 2, 3, 4, 5.5f}));
  EXPECT_EQ(c.videos[0].segments[0].start, 1u);
  EXPECT_EQ(c.videos[0].segments[0].label, 2);
  EXPECT_EQ(c.videos[0].annotations.at("uniform")[0].frame, 1u);
}

TEST(Corpus, BadMagicNamesTheProblem) {
  std::string bytes = serialize_corpus(generate_corpus(tiny_spec()));
  bytes[0] = 'X';
  try {
    parse_corpus(bytes);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(Corpus, TruncationAndTrailingBytesAreParseErrors) {
  const std::string bytes = serialize_corpus(generate_corpus(tiny_spec()));
  EXPECT_THROW(parse_corpus(bytes.substr(0, 5)), ParseError);
  EXPECT_THROW(parse_corpus(bytes.substr(0, 40)), ParseError);
  EXPECT_THROW(parse_corpus(bytes.substr(0, bytes.size() - 2)), ParseError);
  EXPECT_THROW(parse_corpus(bytes + "x"), ParseError);
}

TEST(Corpus, NonFiniteFeatureReportsOffset) {
  std::string bytes = header_bytes(
      R"({"format":"sfnet-corpus","version":1,"feature_dim":1,"num_classes":1,"videos":[)"
      R"({"id":"a","length":2,"split":"test","segments":[],"annotations":{}}]})");
  const std::size_t first = bytes.size();
  put_f32(bytes, 1.0f);
  put_f32(bytes, std::numeric_limits<float>::quiet_NaN());
  try {
    parse_corpus(bytes);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), first + 4);
  }
}

TEST(Corpus, InvalidHeaderContent) {
  auto with = [](const std::string& video) {
    std::string b = header_bytes(
        R"({"format":"sfnet-corpus","version":1,"feature_dim":1,"num_classes":2,"videos":[)" +
        video + "]}");
    put_f32(b, 0.0f);
    put_f32(b, 0.0f);
    return b;
  };
  // Segment past the end, label 0, annotation outside the video, malformed JSON.
  EXPECT_THROW(parse_corpus(with(R"({"id":"a","length":2,"split":"train","segments":[[0,2,1]],"annotations":{}})")),
               ParseError);
  EXPECT_THROW(parse_corpus(with(R"({"id":"a","length":2,"split":"train","segments":[[0,1,0]],"annotations":{}})")),
               ParseError);
  EXPECT_THROW(parse_corpus(with(R"({"id":"a","length":2,"split":"train","segments":[],"annotations":{"uniform":[[2,1]]}})")),
               ParseError);
  EXPECT_THROW(parse_corpus(with(R"({"id":"a",)")), ParseError);
}

TEST(Generator, SpecValidation) {
  SyntheticSpec s = tiny_spec();
  s.train_videos = s.test_videos = 0;
  EXPECT_THROW(generate_corpus(s), ConfigError);
  s = tiny_spec();
  s.max_instances = 20;
  s.min_instances = 20;
  s.min_instance_length = 10;
  EXPECT_THROW(generate_corpus(s), ConfigError);
  s = tiny_spec();
  s.classes_per_video = 4;
  EXPECT_THROW(generate_corpus(s), ConfigError);
}

TEST(Generator, StructureFollowsSpec) {
  const SyntheticSpec spec;
  const FeatureCorpus c = generate_corpus(spec);
  EXPECT_EQ(c.split_indices("train").size(), 80u);
  EXPECT_EQ(c.split_indices("test").size(), 20u);
  for (const Video& v : c.videos) {
    EXPECT_GE(v.length, 150u);
    EXPECT_LE(v.length, 250u);
    EXPECT_EQ(v.features.size(), v.length * 32);
    EXPECT_GE(v.segments.size(), 2u);
    EXPECT_LE(v.segments.size(), 4u);
    std::set<int> classes;
    for (std::size_t i = 0; i < v.segments.size(); ++i) {
      classes.insert(v.segments[i].label);
      EXPECT_GE(v.segments[i].length(), 4u);
      if (i > 0) EXPECT_GT(v.segments[i].start, v.segments[i - 1].end + 1);  // no touching
    }
    EXPECT_EQ(classes.size(), 1u);
    for (AnnotationStrategy st : kAllStrategies) {
      const auto& ann = v.annotations.at(std::string(to_string(st)));
      ASSERT_EQ(ann.size(), v.segments.size());
      for (std::size_t i = 0; i < ann.size(); ++i) {
        EXPECT_GE(ann[i].frame, v.segments[i].start);
        EXPECT_LE(ann[i].frame, v.segments[i].end);
      }
    }
  }
}

// Fraction of action frames away from boundary smoothing whose nearest
// prototype is their own class.
double nearest_prototype_accuracy(const SyntheticSpec& spec) {
  const FeatureCorpus c = generate_corpus(spec);
  const auto protos = class_prototypes(spec);
  std::size_t right = 0, total = 0;
  for (const Video& v : c.videos) {
    for (const Segment& s : v.segments) {
      for (std::size_t f = s.start; f <= s.end; ++f) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < protos.size(); ++k) {
          double d = 0.0;
          for (std::size_t j = 0; j < spec.feature_dim; ++j) {
            const double diff = v.features[f * spec.feature_dim + j] - spec.separation * protos[k][j];
            d += diff * diff;
          }
          if (d < best_d) {
            best_d = d;
            best = k;
          }
        }
        right += static_cast<int>(best) + 1 == s.label;
        ++total;
      }
    }
  }
  return static_cast<double>(right) / static_cast<double>(total);
}

TEST(Generator, NoiselessFramesSitOnTheirPrototype) {
  SyntheticSpec s;
  s.noise = 0.0;
  s.boundary_smoothing = 0;
  EXPECT_EQ(nearest_prototype_accuracy(s), 1.0);
}

TEST(Generator, DefaultSpecIsSeparable) {
  EXPECT_GE(nearest_prototype_accuracy(SyntheticSpec{}), 0.95);
}

TEST(Batching, ZeroPaddedWithLengths) {
  const FeatureCorpus c = generate_corpus(tiny_spec(7));
  const std::vector<std::size_t> idx{0, 3};
  const Batch<double> b = make_batch<double>(c, idx, "uniform", 64);
  EXPECT_EQ(b.features.shape(), (Shape{2, 64, 4}));
  for (std::size_t row = 0; row < 2; ++row) {
    const Video& v = c.videos[idx[row]];
    EXPECT_EQ(b.lengths[row], v.length);
    for (std::size_t t = 0; t < 64; ++t) {
      for (std::size_t k = 0; k < 4; ++k) {
        const double expected = t < v.length ? v.features[t * 4 + k] : 0.0;
        EXPECT_EQ(b.features(row, t, k), expected);
      }
    }
  }
  for (const auto& a : b.annotations) EXPECT_LT(a.frame, b.lengths[a.video]);
  EXPECT_EQ(b.annotations.size(), c.videos[0].segments.size() + c.videos[3].segments.size());
}

TEST(Batching, TenVideosInBatchesOfThree) {
  std::vector<std::size_t> videos(10);
  std::iota(videos.begin(), videos.end(), 0);
  const BatchSchedule schedule(videos, 3, 1);
  const auto epoch = schedule.epoch(0);
  ASSERT_EQ(epoch.size(), 4u);
  EXPECT_EQ(epoch[0].size(), 3u);
  EXPECT_EQ(epoch[1].size(), 3u);
  EXPECT_EQ(epoch[2].size(), 3u);
  EXPECT_EQ(epoch[3].size(), 1u);
  std::vector<std::size_t> seen;
  for (const auto& b : epoch) seen.insert(seen.end(), b.begin(), b.end());
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(seen, videos);
  EXPECT_EQ(schedule.epoch(0), BatchSchedule(videos, 3, 1).epoch(0));
  EXPECT_EQ(schedule.take(6).size(), 6u);
  EXPECT_THROW(BatchSchedule(videos, 0, 1), ConfigError);
}

TEST(Csv, AnnotationsAndGroundTruthRoundTrip) {
  const FeatureCorpus c = generate_corpus(tiny_spec(8));
  std::vector<FrameAnnotation> ann;
  std::vector<Segment> gt;
  for (const Video& v : c.videos) {
    const auto& a = v.annotations.at("human_like");
    ann.insert(ann.end(), a.begin(), a.end());
    gt.insert(gt.end(), v.segments.begin(), v.segments.end());
  }
  const std::string text = csv::write_annotations(c, ann);
  EXPECT_EQ(text.substr(0, 21), "video_id,frame,class\n");
  EXPECT_EQ(csv::read_annotations(c, text), ann);
  const auto back = csv::read_ground_truth(c, csv::write_ground_truth(c, gt));
  ASSERT_EQ(back.size(), gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    EXPECT_EQ(back[i].video, gt[i].video);
    EXPECT_EQ(back[i].start, gt[i].start);
    EXPECT_EQ(back[i].end, gt[i].end);
    EXPECT_EQ(back[i].label, gt[i].label);
  }
  EXPECT_THROW(csv::read_annotations(c, "video_id,frame,class\nnope,1,1\n"), UserError);
  EXPECT_THROW(csv::read_annotations(c, "frame,class\n"), ParseError);
}

TEST(Checkpoint, RoundTripAndMetadata) {
  const auto p = init_params<double>(ModelDims{4, 6, 3, 3}, 2);
  const std::string bytes = serialize_checkpoint(p, {{"seed", "2"}});
  const Checkpoint ck = parse_checkpoint(bytes);
  EXPECT_EQ(ck.params, p);
  EXPECT_EQ(ck.metadata.at("seed"), "2");
  EXPECT_EQ(ck.metadata.at("hidden"), "6");
  EXPECT_EQ(serialize_checkpoint(ck.params, ck.metadata), bytes);
}

TEST(Checkpoint, CorruptionIsDiagnosed) {
  const auto p = init_params<double>(ModelDims{4, 6, 3, 3}, 2);
  std::string bytes = serialize_checkpoint(p, {});
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 1)), ParseError);
  EXPECT_THROW(parse_checkpoint(bytes + "z"), ParseError);
  std::string magic = bytes;
  magic[1] = 'X';
  EXPECT_THROW(parse_checkpoint(magic), ParseError);
  // Last value replaced by NaN.
  std::string nan = bytes;
  const auto bits = std::bit_cast<std::uint64_t>(std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < 8; ++i) nan[nan.size() - 8 + i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  EXPECT_THROW(parse_checkpoint(nan), ParseError);
}

}  // namespace
}  // namespace sfnet
