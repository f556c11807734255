#pragma once

// JSONL readers and writers for frames, tuple vocabularies, predictions and
// ground truth. Doubles are written in shortest round-trip form, so a
// write/read cycle reproduces every value bit for bit.

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cobe/box.hpp"
#include "cobe/error.hpp"
#include "cobe/eval.hpp"
#include "cobe/frame.hpp"
#include "cobe/model.hpp"

namespace cobe {

using json = nlohmann::json;

namespace io {

inline json vec_to_json(const Vec64& v) { return json(v.values()); }

inline Vec64 vec_from_json(const json& j, const char* field) {
  if (!j.is_array()) throw Error(Errc::schema, "data_io", std::string(field) + " must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw Error(Errc::schema, "data_io", std::string(field) + " holds a non-number");
    out.push_back(x.get<double>());
  }
  Vec64 v(std::move(out));
  if (!v.all_finite()) throw Error(Errc::schema, "data_io", std::string(field) + " holds a non-finite value");
  return v;
}

inline json box_to_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(Errc::schema, "data_io", "box must be [x1, y1, x2, y2]");
  for (const auto& x : j)
    if (!x.is_number()) throw Error(Errc::schema, "data_io", "box holds a non-number");
  Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!b.valid()) throw Error(Errc::schema, "data_io", "box needs x2 > x1 and y2 > y1");
  return b;
}

inline const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(Errc::schema, "data_io", std::string("missing field '") + key + "'");
  return *it;
}

template <typename T>
T require_as(const json& j, const char* key) {
  try {
    return require(j, key).get<T>();
  } catch (const json::exception&) {
    throw Error(Errc::schema, "data_io", std::string("field '") + key + "' has the wrong type");
  }
}

/// Calls fn(record, line_number) for every non-blank line. Parse failures are
/// reported with their 1-based line number.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "data_io", "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(Errc::parse, "data_io",
                  path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      fn(j, line_no);
    } catch (const Error& e) {
      if (e.code() != Errc::schema) throw;
      throw Error(Errc::schema, "data_io",
                  path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "data_io", "cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
  if (!out) throw Error(Errc::io, "data_io", "write failed for " + path.string());
}

}  // namespace io

// ---------------------------------------------------------------------------
// FrameRecord

inline json to_json(const FrameRecord& f) {
  json rois = json::array();
  for (const auto& r : f.rois) {
    rois.push_back({{"box", io::box_to_json(r.box)},
                    {"feature", io::vec_to_json(r.feature)},
                    {"category", r.category ? json(*r.category) : json(nullptr)},
                    {"roi_score", r.roi_score},
                    {"is_background", r.is_background}});
  }
  json toks = json::array();
  for (const auto& t : f.token_embeddings) toks.push_back(io::vec_to_json(t));
  return {{"frame_id", f.frame_id},
          {"rois", rois},
          {"narration_tokens", f.narration_tokens},
          {"token_embeddings", toks}};
}

/// Parses one frame. Structural rules are checked here; cross-line dimension
/// consistency is checked by read_frames.
inline FrameRecord frame_from_json(const json& j) {
  FrameRecord f;
  f.frame_id = io::require_as<std::string>(j, "frame_id");
  const json& rois = io::require(j, "rois");
  if (!rois.is_array()) throw Error(Errc::schema, "data_io", "rois must be an array");
  for (const auto& r : rois) {
    RoiRecord roi;
    roi.box = io::box_from_json(io::require(r, "box"));
    roi.feature = io::vec_from_json(io::require(r, "feature"), "feature");
    if (auto it = r.find("category"); it != r.end() && !it->is_null()) {
      if (!it->is_string()) throw Error(Errc::schema, "data_io", "category must be a string");
      roi.category = it->get<std::string>();
    }
    roi.roi_score = r.contains("roi_score") ? io::require_as<double>(r, "roi_score") : 1.0;
    roi.is_background = r.contains("is_background") ? io::require_as<bool>(r, "is_background") : false;
    if (!roi.is_background && (!roi.category || roi.category->empty()))
      throw Error(Errc::schema, "data_io", "foreground roi without a category in frame " + f.frame_id);
    f.rois.push_back(std::move(roi));
  }
  f.narration_tokens = io::require_as<std::vector<std::string>>(j, "narration_tokens");
  const json& toks = io::require(j, "token_embeddings");
  if (!toks.is_array()) throw Error(Errc::schema, "data_io", "token_embeddings must be an array");
  for (const auto& t : toks) f.token_embeddings.push_back(io::vec_from_json(t, "token_embeddings"));
  if (f.token_embeddings.size() != f.narration_tokens.size())
    throw Error(Errc::schema, "data_io",
                "frame " + f.frame_id + " has " + std::to_string(f.narration_tokens.size()) +
                    " tokens but " + std::to_string(f.token_embeddings.size()) + " token embeddings");
  return f;
}

inline void write_frames(const std::filesystem::path& path, const std::vector<FrameRecord>& frames) {
  std::vector<json> rows;
  rows.reserve(frames.size());
  for (const auto& f : frames) rows.push_back(to_json(f));
  io::write_jsonl(path, rows);
}

/// Every feature in a file shares one dim, as does every token embedding.
inline std::vector<FrameRecord> read_frames(const std::filesystem::path& path) {
  std::vector<FrameRecord> frames;
  std::optional<std::size_t> feature_dim;
  std::optional<std::size_t> token_dim;
  io::for_each_jsonl(path, [&](const json& j, std::size_t) {
    FrameRecord f = frame_from_json(j);
    for (const auto& r : f.rois) {
      if (!feature_dim) feature_dim = r.feature.dim();
      if (r.feature.dim() != *feature_dim)
        throw Error(Errc::schema, "data_io",
                    "feature dim " + std::to_string(r.feature.dim()) + " in frame " + f.frame_id +
                        " differs from the file's dim " + std::to_string(*feature_dim));
    }
    for (const auto& t : f.token_embeddings) {
      if (!token_dim) token_dim = t.dim();
      if (t.dim() != *token_dim)
        throw Error(Errc::schema, "data_io",
                    "token embedding dim " + std::to_string(t.dim()) + " in frame " + f.frame_id +
                        " differs from the file's dim " + std::to_string(*token_dim));
    }
    frames.push_back(std::move(f));
  });
  return frames;
}

// ---------------------------------------------------------------------------
// TupleVocab

inline json to_json(const TupleEntry& t) {
  return {{"tuple_id", t.tuple_id},
          {"noun", t.noun},
          {"context", t.context},
          {"context_kind", context_kind_name(t.context_kind)},
          {"base_embedding", io::vec_to_json(t.base_embedding)}};
}

inline TupleEntry tuple_from_json(const json& j) {
  TupleEntry t;
  t.tuple_id = io::require_as<std::int64_t>(j, "tuple_id");
  t.noun = io::require_as<std::string>(j, "noun");
  t.context = io::require_as<std::string>(j, "context");
  t.context_kind = parse_context_kind(io::require_as<std::string>(j, "context_kind"));
  t.base_embedding = io::vec_from_json(io::require(j, "base_embedding"), "base_embedding");
  return t;
}

inline void write_vocab(const std::filesystem::path& path, const TupleVocab& vocab) {
  std::vector<json> rows;
  for (const auto& t : vocab.tuples) rows.push_back(to_json(t));
  io::write_jsonl(path, rows);
}

inline TupleVocab read_vocab(const std::filesystem::path& path) {
  TupleVocab v;
  io::for_each_jsonl(path, [&](const json& j, std::size_t) { v.tuples.push_back(tuple_from_json(j)); });
  v.validate();
  return v;
}

// ---------------------------------------------------------------------------
// Predictions and ground truth

inline json to_json(const PredBox& p) {
  return {{"frame_id", p.frame_id}, {"tuple_id", p.tuple_id}, {"box", io::box_to_json(p.box)}, {"score", p.score}};
}

inline json to_json(const GtBox& g) {
  return {{"frame_id", g.frame_id}, {"tuple_id", g.tuple_id}, {"box", io::box_to_json(g.box)}};
}

inline void write_preds(const std::filesystem::path& path, const std::vector<PredBox>& preds) {
  std::vector<json> rows;
  for (const auto& p : preds) rows.push_back(to_json(p));
  io::write_jsonl(path, rows);
}

inline void write_gts(const std::filesystem::path& path, const std::vector<GtBox>& gts) {
  std::vector<json> rows;
  for (const auto& g : gts) rows.push_back(to_json(g));
  io::write_jsonl(path, rows);
}

inline std::vector<PredBox> read_preds(const std::filesystem::path& path) {
  std::vector<PredBox> out;
  io::for_each_jsonl(path, [&](const json& j, std::size_t) {
    PredBox p{io::require_as<std::string>(j, "frame_id"), io::require_as<std::int64_t>(j, "tuple_id"),
              io::box_from_json(io::require(j, "box")), io::require_as<double>(j, "score")};
    if (!std::isfinite(p.score)) throw Error(Errc::schema, "data_io", "score must be finite");
    out.push_back(std::move(p));
  });
  return out;
}

inline std::vector<GtBox> read_gts(const std::filesystem::path& path) {
  std::vector<GtBox> out;
  io::for_each_jsonl(path, [&](const json& j, std::size_t) {
    out.push_back({io::require_as<std::string>(j, "frame_id"), io::require_as<std::int64_t>(j, "tuple_id"),
                   io::box_from_json(io::require(j, "box"))});
  });
  return out;
}

// ---------------------------------------------------------------------------
// Configs

inline json to_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"visual_in_dim", c.visual_in_dim},
          {"text_in_dim", c.text_in_dim},
          {"visual_layer_dims", c.visual_layer_dims},
          {"text_layer_dims", c.text_layer_dims}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.d = io::require_as<std::size_t>(j, "d");
  c.visual_in_dim = io::require_as<std::size_t>(j, "visual_in_dim");
  c.text_in_dim = io::require_as<std::size_t>(j, "text_in_dim");
  c.visual_layer_dims = io::require_as<std::vector<std::size_t>>(j, "visual_layer_dims");
  c.text_layer_dims = io::require_as<std::vector<std::size_t>>(j, "text_layer_dims");
  return c;
}

}  // namespace cobe
