#pragma once

// The two jointly trained heads. The visual head maps a region feature to an
// object embedding; the text head projects a frozen contextual token
// embedding into the same space. Discrete (noun, context) predictions come
// from softmax(Z f) where the rows of Z are projected tuple embeddings.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cobe/core_math.hpp"
#include "cobe/error.hpp"
#include "cobe/rng.hpp"

namespace cobe {

inline constexpr std::size_t kTextHeadLayers = 5;

struct ModelConfig {
  std::size_t d = 16;
  std::size_t visual_in_dim = 32;
  std::size_t text_in_dim = 32;
  std::vector<std::size_t> visual_layer_dims;
  std::vector<std::size_t> text_layer_dims;

  /// Visual head [in, 2d, 2d, d]; text head five layers of width 2d.
  static ModelConfig with_defaults(std::size_t d, std::size_t visual_in_dim, std::size_t text_in_dim) {
    ModelConfig c{d, visual_in_dim, text_in_dim, {}, {}};
    c.visual_layer_dims = {visual_in_dim, 2 * d, 2 * d, d};
    c.text_layer_dims = {text_in_dim};
    for (std::size_t k = 0; k + 1 < kTextHeadLayers; ++k) c.text_layer_dims.push_back(2 * d);
    c.text_layer_dims.push_back(d);
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(Errc::invalid_config, "model", m); };
    if (d == 0 || visual_in_dim == 0 || text_in_dim == 0) fail("dimensions must be positive");
    if (visual_layer_dims.size() < 2 || visual_layer_dims.front() != visual_in_dim ||
        visual_layer_dims.back() != d)
      fail("visual_layer_dims must run from visual_in_dim to d");
    if (text_layer_dims.size() != kTextHeadLayers + 1 || text_layer_dims.front() != text_in_dim ||
        text_layer_dims.back() != d)
      fail("text_layer_dims must have 5 layers running from text_in_dim to d");
    for (auto x : visual_layer_dims)
      if (x == 0) fail("visual layer widths must be positive");
    for (auto x : text_layer_dims)
      if (x == 0) fail("text layer widths must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct CobeModel {
  ModelConfig config;
  MlpParams visual_head;
  MlpParams text_head;

  static CobeModel create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    return {cfg, init_params(cfg.visual_layer_dims, derive_seed(seed, {1})),
            init_params(cfg.text_layer_dims, derive_seed(seed, {2}))};
  }

  bool operator==(const CobeModel&) const = default;
};

inline Vec64 embed_roi(const CobeModel& model, const Vec64& roi_feature) {
  if (roi_feature.dim() != model.config.visual_in_dim)
    throw Error(Errc::shape, "model",
                "roi feature dim " + std::to_string(roi_feature.dim()) + ", expected " +
                    std::to_string(model.config.visual_in_dim));
  return mlp_apply(model.visual_head, roi_feature);
}

inline Vec64 embed_text(const CobeModel& model, const Vec64& token_embedding) {
  if (token_embedding.dim() != model.config.text_in_dim)
    throw Error(Errc::shape, "model",
                "token embedding dim " + std::to_string(token_embedding.dim()) + ", expected " +
                    std::to_string(model.config.text_in_dim));
  return mlp_apply(model.text_head, token_embedding);
}

enum class ContextKind { noun, verb, adjective, adverb };

inline std::string context_kind_name(ContextKind k) {
  switch (k) {
    case ContextKind::noun: return "noun";
    case ContextKind::verb: return "verb";
    case ContextKind::adjective: return "adjective";
    case ContextKind::adverb: return "adverb";
  }
  return "noun";
}

inline ContextKind parse_context_kind(const std::string& s) {
  if (s == "noun") return ContextKind::noun;
  if (s == "verb") return ContextKind::verb;
  if (s == "adjective") return ContextKind::adjective;
  if (s == "adverb") return ContextKind::adverb;
  throw Error(Errc::schema, "model", "unknown context_kind '" + s + "'");
}

struct TupleEntry {
  std::int64_t tuple_id = 0;
  std::string noun;
  std::string context;
  ContextKind context_kind = ContextKind::noun;
  Vec64 base_embedding;

  std::string label() const { return "(" + noun + ", " + context + ")"; }

  bool operator==(const TupleEntry&) const = default;
};

struct TupleVocab {
  std::vector<TupleEntry> tuples;

  std::size_t size() const noexcept { return tuples.size(); }

  /// Dense ids 0..T-1 in order, nonempty nouns, uniform embedding dims.
  void validate() const {
    for (std::size_t t = 0; t < tuples.size(); ++t) {
      if (tuples[t].tuple_id != static_cast<std::int64_t>(t))
        throw Error(Errc::schema, "model", "tuple ids must be dense and ordered; entry " +
                                               std::to_string(t) + " has id " +
                                               std::to_string(tuples[t].tuple_id));
      if (tuples[t].noun.empty())
        throw Error(Errc::schema, "model", "tuple " + std::to_string(t) + " has an empty noun");
      if (tuples[t].base_embedding.dim() != tuples.front().base_embedding.dim())
        throw Error(Errc::schema, "model", "tuple " + std::to_string(t) + " embedding dim differs");
    }
  }

  bool operator==(const TupleVocab&) const = default;
};

struct TupleIndex {
  Mat64 z;  // T x d
  TupleVocab vocab;
};

inline TupleIndex build_tuple_index(const CobeModel& model, const TupleVocab& vocab) {
  TupleIndex index{Mat64(vocab.size(), model.config.d), vocab};
  for (std::size_t t = 0; t < vocab.size(); ++t) {
    const Vec64 row = embed_text(model, vocab.tuples[t].base_embedding);
    std::copy(row.begin(), row.end(), index.z.row(t).begin());
  }
  return index;
}

struct TupleDistribution {
  Vec64 probs;

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
};

/// Stable softmax of logits.
inline Vec64 softmax(const Vec64& logits) {
  Vec64 p(logits.dim());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.dim(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& x : p) x /= z;
  return p;
}

inline TupleDistribution predict_tuples(const TupleIndex& index, const Vec64& f) {
  if (index.z.rows() == 0) throw Error(Errc::invalid_index, "model", "tuple index is empty");
  if (f.dim() != index.z.cols())
    throw Error(Errc::shape, "model",
                "embedding dim " + std::to_string(f.dim()) + ", index has " +
                    std::to_string(index.z.cols()) + " columns");
  return {softmax(matvec(index.z, f.span()))};
}

}  // namespace cobe
