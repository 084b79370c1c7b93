#pragma once

#include <cstddef>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sfnet/corpus.hpp"
#include "sfnet/error.hpp"
#include "sfnet/types.hpp"

// Plain comma-separated text interfaces. Every file starts with a header row;
// videos are referenced by their corpus id.
namespace sfnet::csv {

inline constexpr const char* kAnnotationHeader = "video_id,frame,class";
inline constexpr const char* kGroundTruthHeader = "video_id,start,end,class";
inline constexpr const char* kSegmentHeader = "video_id,class,start,end,confidence";
inline constexpr const char* kDetectionHeader = "video_id,class,frame,confidence";

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string write_annotations(const FeatureCorpus& corpus,
                                     const std::vector<FrameAnnotation>& rows) {
  std::string out = std::string(kAnnotationHeader) + "\n";
  for (const auto& a : rows) {
    out += corpus.videos.at(a.video).id + "," + std::to_string(a.frame) + "," +
           std::to_string(a.label) + "\n";
  }
  return out;
}

inline std::string write_ground_truth(const FeatureCorpus& corpus,
                                      const std::vector<Segment>& rows) {
  std::string out = std::string(kGroundTruthHeader) + "\n";
  for (const auto& s : rows) {
    out += corpus.videos.at(s.video).id + "," + std::to_string(s.start) + "," +
           std::to_string(s.end) + "," + std::to_string(s.label) + "\n";
  }
  return out;
}

inline std::string write_segments(const FeatureCorpus& corpus, const std::vector<Segment>& rows) {
  std::string out = std::string(kSegmentHeader) + "\n";
  for (const auto& s : rows) {
    out += corpus.videos.at(s.video).id + "," + std::to_string(s.label) + "," +
           std::to_string(s.start) + "," + std::to_string(s.end) + "," +
           format_double(s.confidence) + "\n";
  }
  return out;
}

inline std::string write_detections(const FeatureCorpus& corpus,
                                    const std::vector<FrameDetection>& rows) {
  std::string out = std::string(kDetectionHeader) + "\n";
  for (const auto& d : rows) {
    out += corpus.videos.at(d.video).id + "," + std::to_string(d.label) + "," +
           std::to_string(d.frame) + "," + format_double(d.confidence) + "\n";
  }
  return out;
}

namespace detail {

inline std::vector<std::vector<std::string>> parse_rows(const std::string& text,
                                                        const char* header,
                                                        std::size_t columns) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw ParseError(std::string("expected CSV header '") + header + "'", 0);
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) {
      throw ParseError("expected " + std::to_string(columns) + " columns", line_start);
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline std::size_t to_index(const std::string& s) {
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return static_cast<std::size_t>(v);
}

inline std::map<std::string, std::size_t> id_index(const FeatureCorpus& corpus) {
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < corpus.videos.size(); ++i) out[corpus.videos[i].id] = i;
  return out;
}

inline std::size_t lookup(const std::map<std::string, std::size_t>& ids, const std::string& id) {
  auto it = ids.find(id);
  if (it == ids.end()) throw UserError("unknown video id '" + id + "'");
  return it->second;
}

}  // namespace detail

inline std::vector<FrameAnnotation> read_annotations(const FeatureCorpus& corpus,
                                                     const std::string& text) {
  const auto ids = detail::id_index(corpus);
  std::vector<FrameAnnotation> out;
  for (const auto& r : detail::parse_rows(text, kAnnotationHeader, 3)) {
    try {
      FrameAnnotation a{detail::lookup(ids, r[0]), detail::to_index(r[1]), std::stoi(r[2])};
      if (a.frame >= corpus.videos[a.video].length || a.label < 1 ||
          static_cast<std::size_t>(a.label) > corpus.num_classes) {
        throw UserError("annotation outside its video or with invalid class: " + r[0] + "," +
                        r[1] + "," + r[2]);
      }
      out.push_back(a);
    } catch (const std::logic_error&) {
      throw UserError("malformed annotation row: " + r[0] + "," + r[1] + "," + r[2]);
    }
  }
  return out;
}

inline std::vector<Segment> read_ground_truth(const FeatureCorpus& corpus,
                                              const std::string& text) {
  const auto ids = detail::id_index(corpus);
  std::vector<Segment> out;
  for (const auto& r : detail::parse_rows(text, kGroundTruthHeader, 4)) {
    try {
      Segment s{detail::lookup(ids, r[0]), detail::to_index(r[1]), detail::to_index(r[2]),
                std::stoi(r[3]), 1.0};
      if (s.start > s.end || s.end >= corpus.videos[s.video].length) {
        throw UserError("ground-truth segment outside its video: " + r[0]);
      }
      out.push_back(s);
    } catch (const std::logic_error&) {
      throw UserError("malformed ground-truth row for video " + r[0]);
    }
  }
  return out;
}

}  // namespace sfnet::csv
