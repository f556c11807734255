#pragma once

// Planted-concept datasets. Every noun and context word gets a latent unit
// vector; a (noun, context) pair is planted at normalize(u_noun + u_context).
// Region features and token embeddings are fixed random linear maps of those
// latents plus Gaussian noise, so the true tuple of every RoI is known.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cobe/core_math.hpp"
#include "cobe/error.hpp"
#include "cobe/eval.hpp"
#include "cobe/frame.hpp"
#include "cobe/model.hpp"
#include "cobe/rng.hpp"

namespace cobe {

using NounContext = std::pair<std::size_t, std::size_t>;

struct SyntheticConfig {
  std::size_t n_nouns = 8;
  std::size_t n_contexts = 4;
  /// Pairs that occur in training frames. Empty selects every pair with
  /// context != noun % n_contexts (24 of the 8 x 4 grid).
  std::vector<NounContext> observed_pairs;
  std::size_t d_latent = 16;
  std::size_t visual_in_dim = 32;
  std::size_t text_in_dim = 32;
  double noise_sigma = 0.1;
  std::size_t frames = 500;
  std::size_t test_frames = 200;
  std::size_t shot_frames_per_pair = 10;
  std::size_t rois_per_frame = 2;
  std::size_t bg_per_frame = 2;
  std::uint64_t seed = 0;
  /// Pairs that appear only in test and shot frames.
  std::vector<NounContext> holdout_pairs;
  /// Token embeddings are pulled toward their phrase partner's latent.
  bool contextualized = true;
  std::size_t narration_min = 6;
  std::size_t narration_max = 12;
};

inline std::vector<NounContext> default_observed_pairs(std::size_t n_nouns, std::size_t n_contexts) {
  std::vector<NounContext> out;
  for (std::size_t n = 0; n < n_nouns; ++n)
    for (std::size_t c = 0; c < n_contexts; ++c)
      if (n_contexts < 2 || c != n % n_contexts) out.emplace_back(n, c);
  return out;
}

/// Pairs (n, n % n_contexts) for the first `count` nouns: each is missing from
/// the default observed set while its noun and context both occur there.
inline std::vector<NounContext> default_holdout_pairs(std::size_t count, std::size_t n_nouns, std::size_t n_contexts) {
  std::vector<NounContext> out;
  for (std::size_t n = 0; n < std::min(count, n_nouns); ++n) out.emplace_back(n, n % n_contexts);
  return out;
}

struct SyntheticDataset {
  std::vector<FrameRecord> train;
  std::vector<FrameRecord> test;
  std::vector<FrameRecord> shots;  // frames of holdout pairs only, disjoint from test
  TupleVocab vocab;                // observed pairs first, then holdout pairs
  std::vector<std::int64_t> holdout_tuple_ids;
  /// frame_id -> true tuple id of each roi, -1 for background.
  std::map<std::string, std::vector<std::int64_t>> answer_key;
  std::vector<GtBox> test_gt;
  std::vector<GtBox> shots_gt;
  nlohmann::json header;
};

namespace detail {

inline const std::vector<std::string>& noun_words() {
  static const std::vector<std::string> w{"dough", "fish",   "tomato", "onion",  "egg",   "potato",
                                          "carrot", "bread", "cheese", "pepper", "garlic", "apple",
                                          "butter", "chicken", "rice", "lemon"};
  return w;
}

inline const std::vector<std::pair<std::string, ContextKind>>& context_words() {
  static const std::vector<std::pair<std::string, ContextKind>> w{
      {"cut", ContextKind::verb},          {"fry", ContextKind::verb},      {"fresh", ContextKind::adjective},
      {"slowly", ContextKind::adverb},     {"knife", ContextKind::noun},    {"chopped", ContextKind::adjective},
      {"quickly", ContextKind::adverb},    {"board", ContextKind::noun},    {"peel", ContextKind::verb},
      {"sliced", ContextKind::adjective}};
  return w;
}

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> w{"the", "now", "we", "then", "and", "just", "a", "some", "into", "with", "you", "it"};
  return w;
}

inline Vec64 random_unit(Rng& rng, std::size_t dim) {
  Vec64 v(dim);
  for (auto& x : v) x = rng.normal();
  const double n = norm(v.span());
  for (auto& x : v) x /= n;
  return v;
}

/// `count` unit vectors, mutually orthogonal while count <= dim.
inline std::vector<Vec64> orthonormal_set(Rng& rng, std::size_t count, std::size_t dim) {
  std::vector<Vec64> out;
  for (std::size_t i = 0; i < count; ++i) {
    Vec64 v = random_unit(rng, dim);
    if (i < dim) {
      for (const auto& u : out) axpy(-dot(v.span(), u.span()), u.span(), v.span());
      const double n = norm(v.span());
      for (auto& x : v) x /= n;
    }
    out.push_back(std::move(v));
  }
  return out;
}

inline Mat64 gaussian_map(Rng& rng, std::size_t rows, std::size_t cols) {
  Mat64 m(rows, cols);
  for (auto& x : m.span()) x = rng.normal();
  return m;
}

inline Vec64 noisy_map(const Mat64& map, const Vec64& latent, double sigma, Rng& rng) {
  Vec64 v = matvec(map, latent.span());
  for (auto& x : v) x += sigma * rng.normal();
  return v;
}

inline Vec64 normalized_sum(const Vec64& a, const Vec64& b) {
  Vec64 s = a + b;
  const double n = norm(s.span());
  if (n > 0.0)
    for (auto& x : s) x /= n;
  return s;
}

}  // namespace detail

inline void validate(const SyntheticConfig& c) {
  auto fail = [](const std::string& m) { throw Error(Errc::invalid_config, "data_io", m); };
  if (c.n_nouns == 0 || c.n_contexts == 0) fail("need at least one noun and one context");
  if (c.d_latent == 0 || c.visual_in_dim == 0 || c.text_in_dim == 0) fail("dimensions must be positive");
  if (c.rois_per_frame == 0 || c.rois_per_frame > c.n_nouns) fail("rois_per_frame must lie in [1, n_nouns]");
  if (c.rois_per_frame + c.bg_per_frame > 12) fail("at most 12 rois fit in a frame");
  if (c.narration_min > c.narration_max) fail("narration_min exceeds narration_max");
  if (!(c.noise_sigma >= 0.0)) fail("noise_sigma must be non-negative");
  const auto observed = c.observed_pairs.empty() ? default_observed_pairs(c.n_nouns, c.n_contexts) : c.observed_pairs;
  std::set<NounContext> seen;
  for (const auto& p : observed) {
    if (p.first >= c.n_nouns || p.second >= c.n_contexts) fail("observed pair outside the noun x context grid");
    if (!seen.insert(p).second) fail("duplicate observed pair");
  }
  for (const auto& p : c.holdout_pairs) {
    if (p.first >= c.n_nouns || p.second >= c.n_contexts) fail("holdout pair outside the noun x context grid");
    if (!seen.insert(p).second) fail("holdout pairs must be disjoint from the training pairs");
  }
}

inline std::string noun_name(std::size_t n) {
  const auto& w = detail::noun_words();
  return n < w.size() ? w[n] : "noun" + std::to_string(n);
}

inline std::pair<std::string, ContextKind> context_name(std::size_t c) {
  const auto& w = detail::context_words();
  return c < w.size() ? w[c] : std::pair{"context" + std::to_string(c), ContextKind::noun};
}

inline SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  validate(cfg);
  const auto observed = cfg.observed_pairs.empty() ? default_observed_pairs(cfg.n_nouns, cfg.n_contexts)
                                                   : cfg.observed_pairs;

  Rng latent_rng(derive_seed(cfg.seed, {1}));
  const auto word_latents = detail::orthonormal_set(latent_rng, cfg.n_nouns + cfg.n_contexts, cfg.d_latent);
  const auto noun_latent = [&](std::size_t n) -> const Vec64& { return word_latents[n]; };
  const auto ctx_latent = [&](std::size_t c) -> const Vec64& { return word_latents[cfg.n_nouns + c]; };
  std::vector<Vec64> filler_latents;
  for (std::size_t i = 0; i < detail::filler_words().size(); ++i)
    filler_latents.push_back(detail::random_unit(latent_rng, cfg.d_latent));
  Rng map_rng(derive_seed(cfg.seed, {2}));
  const Mat64 visual_map = detail::gaussian_map(map_rng, cfg.visual_in_dim, cfg.d_latent);
  const Mat64 text_map = detail::gaussian_map(map_rng, cfg.text_in_dim, cfg.d_latent);

  SyntheticDataset ds;
  std::map<NounContext, std::int64_t> tuple_of;
  auto add_tuple = [&](const NounContext& p) {
    TupleEntry t;
    t.tuple_id = static_cast<std::int64_t>(ds.vocab.tuples.size());
    t.noun = noun_name(p.first);
    std::tie(t.context, t.context_kind) = context_name(p.second);
    const Vec64 latent = cfg.contextualized ? detail::normalized_sum(noun_latent(p.first), ctx_latent(p.second))
                                            : 0.5 * (noun_latent(p.first) + ctx_latent(p.second));
    t.base_embedding = matvec(text_map, latent.span());
    tuple_of[p] = t.tuple_id;
    ds.vocab.tuples.push_back(std::move(t));
  };
  for (const auto& p : observed) add_tuple(p);
  for (const auto& p : cfg.holdout_pairs) {
    add_tuple(p);
    ds.holdout_tuple_ids.push_back(tuple_of[p]);
  }

  auto make_frame = [&](const std::string& id, const std::vector<NounContext>& fg_pairs, Rng& rng,
                        std::vector<GtBox>* gt) {
    FrameRecord fr;
    fr.frame_id = id;
    std::vector<std::int64_t> key;

    // A 4 x 3 grid of 160 px cells on a 640 x 480 frame; each roi gets its own cell.
    std::vector<std::size_t> cells(12);
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
    rng.shuffle(cells);
    std::size_t next_cell = 0;
    auto cell_box = [&] {
      const std::size_t cell = cells[next_cell++];
      const double cx = 160.0 * static_cast<double>(cell % 4);
      const double cy = 160.0 * static_cast<double>(cell / 4);
      return Box{cx + rng.uniform(4.0, 32.0), cy + rng.uniform(4.0, 32.0), cx + 160.0 - rng.uniform(4.0, 32.0),
                 cy + 160.0 - rng.uniform(4.0, 32.0)};
    };

    // Narration units: a "context noun" phrase per foreground roi plus fillers.
    struct Unit {
      std::vector<std::string> words;
      std::vector<Vec64> latents;
    };
    std::vector<Unit> units;
    for (const auto& p : fg_pairs) {
      RoiRecord roi;
      roi.box = cell_box();
      const Vec64 pair_latent = detail::normalized_sum(noun_latent(p.first), ctx_latent(p.second));
      roi.feature = detail::noisy_map(visual_map, pair_latent, cfg.noise_sigma, rng);
      roi.category = noun_name(p.first);
      roi.roi_score = rng.uniform(0.7, 1.0);
      const std::int64_t tid = tuple_of.at(p);
      key.push_back(tid);
      if (gt) gt->push_back({id, tid, roi.box});
      fr.rois.push_back(std::move(roi));
      Unit u{{context_name(p.second).first, noun_name(p.first)}, {}};
      if (cfg.contextualized)
        u.latents = {detail::normalized_sum(ctx_latent(p.second), noun_latent(p.first)), pair_latent};
      else
        u.latents = {ctx_latent(p.second), noun_latent(p.first)};
      units.push_back(std::move(u));
    }
    for (std::size_t b = 0; b < cfg.bg_per_frame; ++b) {
      RoiRecord roi;
      roi.box = cell_box();
      roi.feature = detail::noisy_map(visual_map, detail::random_unit(rng, cfg.d_latent), cfg.noise_sigma, rng);
      roi.roi_score = rng.uniform(0.05, 0.3);
      roi.is_background = true;
      key.push_back(-1);
      fr.rois.push_back(std::move(roi));
    }
    const std::size_t min_len = std::max(cfg.narration_min, 2 * fg_pairs.size());
    const std::size_t len = min_len + static_cast<std::size_t>(rng.below(std::max(min_len, cfg.narration_max) - min_len + 1));
    for (std::size_t i = 2 * fg_pairs.size(); i < len; ++i) {
      const auto f = static_cast<std::size_t>(rng.below(detail::filler_words().size()));
      units.push_back({{detail::filler_words()[f]}, {filler_latents[f]}});
    }
    rng.shuffle(units);
    for (const auto& u : units) {
      for (std::size_t k = 0; k < u.words.size(); ++k) {
        fr.narration_tokens.push_back(u.words[k]);
        fr.token_embeddings.push_back(detail::noisy_map(text_map, u.latents[k], cfg.noise_sigma, rng));
      }
    }
    ds.answer_key[id] = std::move(key);
    return fr;
  };

  // Foreground pairs of one frame, with distinct nouns.
  auto draw_pairs = [&](const std::vector<NounContext>& from, Rng& rng) {
    std::vector<NounContext> out;
    std::set<std::size_t> nouns;
    for (std::size_t guard = 0; out.size() < cfg.rois_per_frame && guard < 10000; ++guard) {
      const auto& p = from[rng.below(from.size())];
      if (nouns.insert(p.first).second) out.push_back(p);
    }
    return out;
  };

  auto frame_name = [](const char* split, std::size_t i) {
    std::string n = std::to_string(i);
    return std::string(split) + "-" + std::string(6 - std::min<std::size_t>(6, n.size()), '0') + n;
  };

  if (observed.empty()) throw Error(Errc::invalid_config, "data_io", "no observed pairs");
  for (std::size_t i = 0; i < cfg.frames; ++i) {
    Rng rng(derive_seed(cfg.seed, {100, i}));
    ds.train.push_back(make_frame(frame_name("train", i), draw_pairs(observed, rng), rng, nullptr));
  }
  std::vector<NounContext> all_pairs = observed;
  all_pairs.insert(all_pairs.end(), cfg.holdout_pairs.begin(), cfg.holdout_pairs.end());
  for (std::size_t i = 0; i < cfg.test_frames; ++i) {
    Rng rng(derive_seed(cfg.seed, {200, i}));
    ds.test.push_back(make_frame(frame_name("test", i), draw_pairs(all_pairs, rng), rng, &ds.test_gt));
  }
  std::size_t shot_index = 0;
  for (const auto& p : cfg.holdout_pairs) {
    for (std::size_t s = 0; s < cfg.shot_frames_per_pair; ++s, ++shot_index) {
      Rng rng(derive_seed(cfg.seed, {300, shot_index}));
      ds.shots.push_back(make_frame(frame_name("shot", shot_index), {p}, rng, &ds.shots_gt));
    }
  }

  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : observed) pairs.push_back({p.first, p.second});
  nlohmann::json holdout = nlohmann::json::array();
  for (const auto& p : cfg.holdout_pairs) holdout.push_back({p.first, p.second});
  ds.header = {{"generator", "planted-concept"},
               {"seed", cfg.seed},
               {"n_nouns", cfg.n_nouns},
               {"n_contexts", cfg.n_contexts},
               {"observed_pairs", pairs},
               {"holdout_pairs", holdout},
               {"holdout_tuple_ids", ds.holdout_tuple_ids},
               {"d_latent", cfg.d_latent},
               {"visual_in_dim", cfg.visual_in_dim},
               {"text_in_dim", cfg.text_in_dim},
               {"noise_sigma", cfg.noise_sigma},
               {"frames", cfg.frames},
               {"test_frames", cfg.test_frames},
               {"shot_frames_per_pair", cfg.shot_frames_per_pair},
               {"rois_per_frame", cfg.rois_per_frame},
               {"bg_per_frame", cfg.bg_per_frame},
               {"contextualized", cfg.contextualized},
               {"narration_tokens_min", cfg.narration_min},
               {"narration_tokens_max", cfg.narration_max}};
  return ds;
}

// ---------------------------------------------------------------------------
// Zero-shot split

struct ZeroShotSplit {
  TupleVocab train_vocab;  // holdout removed, ids renumbered densely
  TupleVocab eval_vocab;   // the full vocabulary
  std::vector<std::int64_t> train_to_eval_id;
  std::vector<std::string> warnings;
};

/// True when every held-out tuple's noun and context each occur in some
/// remaining training tuple.
inline bool compositional_coverage(const TupleVocab& vocab, const std::set<std::int64_t>& holdout) {
  std::set<std::string> nouns;
  std::set<std::string> contexts;
  for (const auto& t : vocab.tuples) {
    if (holdout.contains(t.tuple_id)) continue;
    nouns.insert(t.noun);
    contexts.insert(t.context);
  }
  for (const auto& t : vocab.tuples)
    if (holdout.contains(t.tuple_id) && (!nouns.contains(t.noun) || !contexts.contains(t.context))) return false;
  return true;
}

inline ZeroShotSplit make_zero_shot_split(const TupleVocab& vocab, const std::vector<std::int64_t>& holdout) {
  std::set<std::int64_t> held(holdout.begin(), holdout.end());
  for (auto id : held)
    if (id < 0 || id >= static_cast<std::int64_t>(vocab.size()))
      throw Error(Errc::invalid_config, "data_io", "holdout tuple " + std::to_string(id) + " is not in the vocab");
  ZeroShotSplit split;
  split.eval_vocab = vocab;
  std::set<std::string> train_nouns;
  for (const auto& t : vocab.tuples) {
    if (held.contains(t.tuple_id)) continue;
    TupleEntry e = t;
    e.tuple_id = static_cast<std::int64_t>(split.train_vocab.tuples.size());
    split.train_to_eval_id.push_back(t.tuple_id);
    split.train_vocab.tuples.push_back(std::move(e));
    train_nouns.insert(t.noun);
  }
  for (const auto& t : vocab.tuples)
    if (held.contains(t.tuple_id) && !train_nouns.contains(t.noun))
      split.warnings.push_back("holdout removes every training tuple of noun '" + t.noun + "'");
  return split;
}

}  // namespace cobe
