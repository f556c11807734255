#pragma once

// Foreground/background noise-contrastive loss over dot-product similarities,
// plus the negative sampler that feeds it.
//
// For a foreground RoI with embedding f, positive g+ and negatives H (m x d):
//   l = -log( e^{f.g+} / (e^{f.g+} + sum_k e^{f.H_k}) )
// For a background RoI the positive term is replaced by the constant 1:
//   l = -log( 1 / (1 + sum_k e^{f.H_k}) )
// The batch loss is (sum_fg l + sum_bg l) / B with B the number of RoIs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cobe/core_math.hpp"
#include "cobe/error.hpp"
#include "cobe/rng.hpp"

namespace cobe {

/// One candidate negative: an identifier, the noun category of the token (empty
/// when the token names no category) and its embedding.
struct PoolEntry {
  std::size_t token_id = 0;
  std::string noun_category;
  Vec64 embedding;
};

struct NegativeSet {
  Mat64 embeddings;  // m x d
  std::vector<std::size_t> source_ids;

  std::size_t size() const noexcept { return source_ids.size(); }
};

/// Samples pool positions whose category differs from the excluded noun.
/// Draws without replacement when enough entries are eligible, otherwise with
/// replacement. Eligible lists are cached per excluded category.
class NegativeSampler {
 public:
  explicit NegativeSampler(std::vector<std::string> categories) : categories_(std::move(categories)) {}

  template <typename Range>
  static NegativeSampler from_pool(const Range& pool) {
    std::vector<std::string> cats;
    for (const auto& e : pool) cats.push_back(e.noun_category);
    return NegativeSampler(std::move(cats));
  }

  std::size_t pool_size() const noexcept { return categories_.size(); }

  std::vector<std::size_t> sample(const std::optional<std::string>& exclude_noun, std::size_t m,
                                  std::uint64_t seed) {
    if (m == 0) return {};
    const std::vector<std::size_t>& eligible = eligible_for(exclude_noun);
    if (eligible.empty())
      throw Error(Errc::no_negatives, "nce",
                  "no eligible negatives" +
                      (exclude_noun ? " after excluding '" + *exclude_noun + "'" : std::string()));
    Rng rng(seed);
    std::vector<std::size_t> out;
    out.reserve(m);
    if (eligible.size() >= m) {
      std::vector<std::size_t> work = eligible;
      for (std::size_t i = 0; i < m; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(work.size() - i));
        std::swap(work[i], work[j]);
        out.push_back(work[i]);
      }
    } else {
      for (std::size_t i = 0; i < m; ++i) out.push_back(eligible[rng.below(eligible.size())]);
    }
    return out;
  }

 private:
  const std::vector<std::size_t>& eligible_for(const std::optional<std::string>& exclude) {
    const std::string key = exclude ? "=" + *exclude : std::string();
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < categories_.size(); ++i)
      if (!exclude || categories_[i] != *exclude) idx.push_back(i);
    return cache_.emplace(key, std::move(idx)).first->second;
  }

  std::vector<std::string> categories_;
  std::map<std::string, std::vector<std::size_t>> cache_;
};

inline NegativeSet sample_negatives(std::span<const PoolEntry> pool,
                                    const std::optional<std::string>& exclude_noun, std::size_t m,
                                    std::uint64_t seed) {
  NegativeSampler sampler = NegativeSampler::from_pool(pool);
  const auto picks = sampler.sample(exclude_noun, m, seed);
  const std::size_t d = picks.empty() ? 0 : pool[picks.front()].embedding.dim();
  NegativeSet set{Mat64(picks.size(), d), {}};
  for (std::size_t r = 0; r < picks.size(); ++r) {
    const Vec64& e = pool[picks[r]].embedding;
    if (e.dim() != d) throw Error(Errc::shape, "nce", "pool embeddings have mixed dims");
    std::copy(e.begin(), e.end(), set.embeddings.row(r).begin());
    set.source_ids.push_back(pool[picks[r]].token_id);
  }
  return set;
}

struct FgItem {
  Vec64 f;
  Vec64 g_plus;
  NegativeSet negatives;
};

struct BgItem {
  Vec64 f;
  NegativeSet negatives;
};

struct NceBatch {
  std::vector<FgItem> fg;
  std::vector<BgItem> bg;
  std::size_t d = 0;

  std::size_t b_count() const noexcept { return fg.size() + bg.size(); }
};

struct LossReport {
  double l_fg = 0.0;
  double l_bg = 0.0;
  double total = 0.0;
  std::int64_t b_count = 0;

  /// Sums two reports; total is recomputed so it stays (l_fg + l_bg) / B.
  LossReport& merge(const LossReport& o) {
    l_fg += o.l_fg;
    l_bg += o.l_bg;
    b_count += o.b_count;
    total = b_count > 0 ? (l_fg + l_bg) / static_cast<double>(b_count) : 0.0;
    return *this;
  }

  bool operator==(const LossReport&) const = default;
};

namespace detail {

inline void check_negatives(const NegativeSet& n, std::size_t d, std::size_t item) {
  if (n.embeddings.rows() != n.source_ids.size() || (n.size() > 0 && n.embeddings.cols() != d))
    throw Error(Errc::shape, "nce", "negative set of item " + std::to_string(item) + " has wrong shape");
}

inline void check_batch(const NceBatch& b) {
  if (b.b_count() == 0) throw Error(Errc::invalid_batch, "nce", "batch has no RoIs");
  for (std::size_t i = 0; i < b.fg.size(); ++i) {
    if (b.fg[i].f.dim() != b.d || b.fg[i].g_plus.dim() != b.d)
      throw Error(Errc::shape, "nce", "foreground item " + std::to_string(i) + " has wrong dim");
    check_negatives(b.fg[i].negatives, b.d, i);
  }
  for (std::size_t i = 0; i < b.bg.size(); ++i) {
    if (b.bg[i].f.dim() != b.d)
      throw Error(Errc::shape, "nce", "background item " + std::to_string(i) + " has wrong dim");
    check_negatives(b.bg[i].negatives, b.d, i);
  }
}

/// logits[0] is the positive (or the constant 0 for background); returns
/// -log softmax(logits)[0] and fills probs with softmax(logits).
inline double neg_log_softmax0(std::span<const double> logits, std::vector<double>* probs) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double s : logits) z += std::exp(s - mx);
  if (probs) {
    probs->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) (*probs)[i] = std::exp(logits[i] - mx) / z;
  }
  return mx + std::log(z) - logits[0];
}

inline std::vector<double> logits_for(const Vec64& f, const Vec64* g_plus, const NegativeSet& neg) {
  std::vector<double> s;
  s.reserve(neg.size() + 1);
  s.push_back(g_plus ? dot(f.span(), g_plus->span()) : 0.0);
  for (std::size_t k = 0; k < neg.size(); ++k) s.push_back(dot(f.span(), neg.embeddings.row(k)));
  return s;
}

}  // namespace detail

inline double fg_item_loss(const FgItem& item) {
  const auto s = detail::logits_for(item.f, &item.g_plus, item.negatives);
  return detail::neg_log_softmax0(s, nullptr);
}

inline double bg_item_loss(const BgItem& item) {
  const auto s = detail::logits_for(item.f, nullptr, item.negatives);
  return detail::neg_log_softmax0(s, nullptr);
}

inline LossReport nce_loss(const NceBatch& batch) {
  detail::check_batch(batch);
  LossReport r;
  for (const auto& it : batch.fg) r.l_fg += fg_item_loss(it);
  for (const auto& it : batch.bg) r.l_bg += bg_item_loss(it);
  r.b_count = static_cast<std::int64_t>(batch.b_count());
  r.total = (r.l_fg + r.l_bg) / static_cast<double>(r.b_count);
  return r;
}

struct FgGrad {
  Vec64 f;
  Vec64 g_plus;
  Mat64 negatives;
};

struct BgGrad {
  Vec64 f;
  Mat64 negatives;
};

/// Gradients of LossReport::total with respect to every participating vector.
struct NceGrads {
  std::vector<FgGrad> fg;
  std::vector<BgGrad> bg;
  LossReport loss;
};

inline NceGrads nce_grad(const NceBatch& batch) {
  detail::check_batch(batch);
  const double inv_b = 1.0 / static_cast<double>(batch.b_count());
  NceGrads out;
  out.loss.b_count = static_cast<std::int64_t>(batch.b_count());
  std::vector<double> p;

  // With probs p over [positive, negatives...], d l / d s_0 = p_0 - 1 and
  // d l / d s_k = p_k; the background "positive" is a constant.
  for (const auto& it : batch.fg) {
    const auto s = detail::logits_for(it.f, &it.g_plus, it.negatives);
    out.loss.l_fg += detail::neg_log_softmax0(s, &p);
    const double c0 = (p[0] - 1.0) * inv_b;
    FgGrad g{c0 * it.g_plus, c0 * it.f, Mat64(it.negatives.size(), batch.d)};
    for (std::size_t k = 0; k < it.negatives.size(); ++k) {
      const double ck = p[k + 1] * inv_b;
      axpy(ck, it.negatives.embeddings.row(k), g.f.span());
      axpy(ck, it.f.span(), g.negatives.row(k));
    }
    out.fg.push_back(std::move(g));
  }
  for (const auto& it : batch.bg) {
    const auto s = detail::logits_for(it.f, nullptr, it.negatives);
    out.loss.l_bg += detail::neg_log_softmax0(s, &p);
    BgGrad g{Vec64(batch.d), Mat64(it.negatives.size(), batch.d)};
    for (std::size_t k = 0; k < it.negatives.size(); ++k) {
      const double ck = p[k + 1] * inv_b;
      axpy(ck, it.negatives.embeddings.row(k), g.f.span());
      axpy(ck, it.f.span(), g.negatives.row(k));
    }
    out.bg.push_back(std::move(g));
  }
  out.loss.total = (out.loss.l_fg + out.loss.l_bg) / static_cast<double>(batch.b_count());
  return out;
}

}  // namespace cobe
