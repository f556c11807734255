#pragma once

// Pseudo ground truth from a pretrained detector plus narrations: a detection
// is accepted when its score clears the threshold and its category is spoken
// in the frame's narration. Classes left with too few accepted boxes are
// dropped afterwards, along with any frame that ends up empty.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cobe/box.hpp"
#include "cobe/core_math.hpp"
#include "cobe/data_io.hpp"
#include "cobe/error.hpp"
#include "cobe/frame.hpp"
#include "cobe/text.hpp"

namespace cobe {

struct Detection {
  Box box;
  double score = 0.0;
  std::string category;
  std::optional<Vec64> feature;  // absent in detections-only inputs

  bool operator==(const Detection&) const = default;
};

struct PseudoLabelConfig {
  double score_threshold = 0.5;
  std::int64_t min_class_count = 50;
  bool plural_stripping = true;

  void validate() const {
    if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
      throw Error(Errc::invalid_config, "pseudo_label", "score_threshold must lie in [0, 1]");
    if (min_class_count < 1) throw Error(Errc::invalid_config, "pseudo_label", "min_class_count must be at least 1");
  }
};

/// One input frame before filtering.
struct RawFrame {
  std::string frame_id;
  std::vector<Detection> detections;
  std::vector<RoiRecord> background;  // passed through untouched
  std::vector<std::string> narration_tokens;
  std::vector<Vec64> token_embeddings;  // may be empty in detections-only inputs
};

struct PseudoStats {
  std::int64_t frames_in = 0;
  std::int64_t frames_kept = 0;
  std::int64_t boxes_in = 0;
  std::int64_t boxes_kept = 0;
  std::int64_t records_rejected = 0;
  std::vector<std::string> errors;
};

struct PseudoDataset {
  std::vector<FrameRecord> frames;
  std::map<std::string, std::int64_t> class_counts;  // after pruning
  PseudoStats stats;
};

/// Accepted detections in input order.
inline std::vector<Detection> filter_frame(std::span<const Detection> detections,
                                           std::span<const std::string> narration_tokens,
                                           const PseudoLabelConfig& cfg) {
  std::vector<Detection> out;
  for (const auto& d : detections)
    if (d.score >= cfg.score_threshold && token_match(d.category, narration_tokens, cfg.plural_stripping))
      out.push_back(d);
  return out;
}

/// Accepts both the raw detector layout ("detections", optional "background",
/// "narration" text or "narration_tokens") and the frame layout ("rois"), so a
/// pseudo-labeled file can be fed back in.
inline RawFrame raw_frame_from_json(const json& j) {
  RawFrame f;
  f.frame_id = io::require_as<std::string>(j, "frame_id");
  auto read_feature = [](const json& r) -> std::optional<Vec64> {
    if (auto it = r.find("feature"); it != r.end() && !it->is_null()) return io::vec_from_json(*it, "feature");
    return std::nullopt;
  };
  if (j.contains("rois")) {
    for (const auto& r : io::require(j, "rois")) {
      const bool bg = r.contains("is_background") && io::require_as<bool>(r, "is_background");
      if (bg) {
        RoiRecord roi;
        roi.box = io::box_from_json(io::require(r, "box"));
        roi.feature = read_feature(r).value_or(Vec64{});
        roi.roi_score = r.contains("roi_score") ? io::require_as<double>(r, "roi_score") : 1.0;
        roi.is_background = true;
        f.background.push_back(std::move(roi));
      } else {
        f.detections.push_back({io::box_from_json(io::require(r, "box")), io::require_as<double>(r, "roi_score"),
                                io::require_as<std::string>(r, "category"), read_feature(r)});
      }
    }
  } else {
    for (const auto& r : io::require(j, "detections"))
      f.detections.push_back({io::box_from_json(io::require(r, "box")), io::require_as<double>(r, "score"),
                              io::require_as<std::string>(r, "category"), read_feature(r)});
    if (auto it = j.find("background"); it != j.end()) {
      for (const auto& r : *it) {
        RoiRecord roi;
        roi.box = io::box_from_json(io::require(r, "box"));
        roi.feature = read_feature(r).value_or(Vec64{});
        roi.roi_score = r.contains("roi_score") ? io::require_as<double>(r, "roi_score") : 1.0;
        roi.is_background = true;
        f.background.push_back(std::move(roi));
      }
    }
  }
  if (j.contains("narration_tokens"))
    f.narration_tokens = io::require_as<std::vector<std::string>>(j, "narration_tokens");
  else
    f.narration_tokens = tokenize(io::require_as<std::string>(j, "narration"));
  if (auto it = j.find("token_embeddings"); it != j.end() && !it->is_null())
    for (const auto& t : *it) f.token_embeddings.push_back(io::vec_from_json(t, "token_embeddings"));
  return f;
}

namespace detail {

inline void validate_raw(const RawFrame& f, bool require_features) {
  auto fail = [&](const std::string& m) { throw Error(Errc::data, "pseudo_label", "frame " + f.frame_id + ": " + m); };
  for (const auto& d : f.detections) {
    if (!d.box.valid()) fail("detection box needs x2 > x1 and y2 > y1");
    if (!(d.score >= 0.0 && d.score <= 1.0)) fail("detection score outside [0, 1]");
    if (d.category.empty()) fail("detection without a category");
    if (require_features && (!d.feature || d.feature->empty())) fail("detection without a feature");
  }
  if (require_features) {
    if (f.token_embeddings.size() != f.narration_tokens.size())
      fail("token_embeddings must align with narration_tokens");
    for (const auto& b : f.background)
      if (b.feature.empty()) fail("background roi without a feature");
  }
}

}  // namespace detail

/// Filters every frame, then prunes sparse classes. Malformed records are
/// counted and reported by index; the rest are still processed. With
/// stats_only, features are optional and no frames are materialized.
inline PseudoDataset build_dataset(std::span<const RawFrame> raw, const PseudoLabelConfig& cfg,
                                   bool stats_only = false) {
  cfg.validate();
  PseudoDataset out;
  struct Kept {
    std::size_t index;
    std::vector<Detection> accepted;
  };
  std::vector<Kept> kept;
  std::map<std::string, std::int64_t> counts;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    ++out.stats.frames_in;
    try {
      detail::validate_raw(raw[i], !stats_only);
    } catch (const Error& e) {
      ++out.stats.records_rejected;
      out.stats.errors.push_back("record " + std::to_string(i) + ": " + e.what());
      continue;
    }
    out.stats.boxes_in += static_cast<std::int64_t>(raw[i].detections.size());
    auto acc = filter_frame(raw[i].detections, raw[i].narration_tokens, cfg);
    if (acc.empty()) continue;
    for (const auto& d : acc) ++counts[d.category];
    kept.push_back({i, std::move(acc)});
  }

  for (const auto& [cat, n] : counts)
    if (n >= cfg.min_class_count) out.class_counts[cat] = n;

  for (auto& k : kept) {
    std::vector<Detection> surviving;
    for (auto& d : k.accepted)
      if (out.class_counts.contains(d.category)) surviving.push_back(std::move(d));
    if (surviving.empty()) continue;
    ++out.stats.frames_kept;
    out.stats.boxes_kept += static_cast<std::int64_t>(surviving.size());
    if (stats_only) continue;
    const RawFrame& src = raw[k.index];
    FrameRecord fr{src.frame_id, {}, src.narration_tokens, src.token_embeddings};
    for (auto& d : surviving) fr.rois.push_back({d.box, *d.feature, d.category, d.score, false});
    for (const auto& b : src.background) fr.rois.push_back(b);
    out.frames.push_back(std::move(fr));
  }
  return out;
}

/// Reads raw records from JSONL; unparsable lines are tallied as rejected
/// records with their line number.
inline PseudoDataset build_dataset_from_jsonl(const std::filesystem::path& path, const PseudoLabelConfig& cfg,
                                              bool stats_only = false) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "pseudo_label", "cannot open " + path.string());
  std::vector<RawFrame> frames;
  std::vector<std::string> parse_errors;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      frames.push_back(raw_frame_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      parse_errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  PseudoDataset ds = build_dataset(frames, cfg, stats_only);
  ds.stats.frames_in += static_cast<std::int64_t>(parse_errors.size());
  ds.stats.records_rejected += static_cast<std::int64_t>(parse_errors.size());
  ds.stats.errors.insert(ds.stats.errors.begin(), parse_errors.begin(), parse_errors.end());
  return ds;
}

inline json stats_to_json(const PseudoDataset& ds) {
  return {{"frames_in", ds.stats.frames_in},
          {"frames_kept", ds.stats.frames_kept},
          {"boxes_in", ds.stats.boxes_in},
          {"boxes_kept", ds.stats.boxes_kept},
          {"records_rejected", ds.stats.records_rejected},
          {"errors", ds.stats.errors},
          {"class_counts", ds.class_counts}};
}

}  // namespace cobe
