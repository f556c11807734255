#pragma once

// Exhaustive similarity search in the shared embedding space: object-to-text,
// text-to-object and a - b + c analogies.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cobe/core_math.hpp"
#include "cobe/error.hpp"
#include "cobe/model.hpp"

namespace cobe {

enum class Similarity { dot, cosine };

inline double similarity(std::span<const double> a, std::span<const double> b, Similarity sim) {
  const double d = dot(a, b);
  if (sim == Similarity::dot) return d;
  const double n = norm(a) * norm(b);
  return n > 0.0 ? d / n : 0.0;
}

template <typename Id>
struct RetrievalHit {
  Id item_id;
  double similarity = 0.0;
};

/// Hits are sorted by similarity, highest first, ties by ascending id.
template <typename Id>
struct RetrievalResult {
  std::string query;
  std::vector<RetrievalHit<Id>> hits;
};

template <typename Id>
using Corpus = std::vector<std::pair<Id, Vec64>>;

namespace detail {

template <typename Id>
std::vector<RetrievalHit<Id>> top_k(std::vector<RetrievalHit<Id>> hits, std::size_t k) {
  auto before = [](const RetrievalHit<Id>& a, const RetrievalHit<Id>& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.item_id < b.item_id;
  };
  const std::size_t n = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), before);
  hits.resize(n);
  return hits;
}

}  // namespace detail

inline RetrievalResult<std::int64_t> object_to_text(const Vec64& f, const TupleIndex& index, std::size_t k,
                                                    Similarity sim = Similarity::dot) {
  if (index.z.rows() == 0) throw Error(Errc::invalid_index, "retrieval", "tuple index is empty");
  if (f.dim() != index.z.cols())
    throw Error(Errc::shape, "retrieval",
                "query dim " + std::to_string(f.dim()) + ", index has " + std::to_string(index.z.cols()));
  if (k == 0) throw Error(Errc::invalid_config, "retrieval", "k must be at least 1");
  std::vector<RetrievalHit<std::int64_t>> hits;
  hits.reserve(index.z.rows());
  for (std::size_t t = 0; t < index.z.rows(); ++t)
    hits.push_back({index.vocab.tuples[t].tuple_id, similarity(f.span(), index.z.row(t), sim)});
  return {"object-to-text", detail::top_k(std::move(hits), k)};
}

template <typename Id>
RetrievalResult<Id> text_to_object(const Vec64& query, const Corpus<Id>& objects, std::size_t k,
                                   Similarity sim = Similarity::dot) {
  std::vector<RetrievalHit<Id>> hits;
  hits.reserve(objects.size());
  for (const auto& [id, emb] : objects) {
    if (emb.dim() != query.dim())
      throw Error(Errc::shape, "retrieval", "object embedding dim differs from query dim");
    hits.push_back({id, similarity(query.span(), emb.span(), sim)});
  }
  return {"text-to-object", detail::top_k(std::move(hits), k)};
}

/// Ranks the corpus against q = a - b + c. With exclude_inputs, items whose
/// embedding equals a, b or c exactly are left out.
template <typename Id>
RetrievalResult<Id> analogy_query(const Vec64& a, const Vec64& b, const Vec64& c, const Corpus<Id>& corpus,
                                  std::size_t k, bool exclude_inputs, Similarity sim = Similarity::dot) {
  if (a.dim() != b.dim() || a.dim() != c.dim())
    throw Error(Errc::shape, "retrieval", "analogy operands have different dims");
  const Vec64 q = a - b + c;
  std::vector<RetrievalHit<Id>> hits;
  for (const auto& [id, emb] : corpus) {
    if (emb.dim() != q.dim()) throw Error(Errc::shape, "retrieval", "corpus embedding dim differs");
    if (exclude_inputs && (emb == a || emb == b || emb == c)) continue;
    hits.push_back({id, similarity(q.span(), emb.span(), sim)});
  }
  return {"analogy", detail::top_k(std::move(hits), k)};
}

}  // namespace cobe
