#pragma once

// Contextualized object detection evaluation: each prediction is a
// (noun, context) tuple with a box on the noun. Predictions match ground truth
// at IoU >= 0.5 and AP is the area under the interpolated PR curve.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cobe/box.hpp"
#include "cobe/error.hpp"
#include "cobe/frame.hpp"
#include "cobe/model.hpp"

namespace cobe {

struct PredBox {
  std::string frame_id;
  std::int64_t tuple_id = 0;
  Box box;
  double score = 0.0;

  bool operator==(const PredBox&) const = default;
};

struct GtBox {
  std::string frame_id;
  std::int64_t tuple_id = 0;
  Box box;

  bool operator==(const GtBox&) const = default;
};

/// Greedy per-(frame, tuple) suppression: walk boxes by descending score
/// (ties in input order) and keep a box iff its IoU with every kept box of the
/// same group is below the threshold. Output is in that walk order.
inline std::vector<PredBox> nms(std::span<const PredBox> preds, double iou_threshold) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  std::map<std::pair<std::string, std::int64_t>, std::vector<std::size_t>> kept_by_group;
  std::vector<PredBox> out;
  for (std::size_t i : order) {
    auto& kept = kept_by_group[{preds[i].frame_id, preds[i].tuple_id}];
    const bool keep = std::all_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return iou(preds[i].box, preds[k].box) < iou_threshold;
    });
    if (keep) {
      kept.push_back(i);
      out.push_back(preds[i]);
    }
  }
  return out;
}

struct InferOptions {
  double score_floor = 0.001;
  std::size_t top_k_per_roi = 5;
  double nms_iou = 0.5;
};

/// Scores every RoI's top-k tuples as roi_score * p(tuple), drops scores at or
/// below the floor, then applies NMS.
inline std::vector<PredBox> infer_frame(const CobeModel& model, const TupleIndex& index,
                                        const FrameRecord& frame, const InferOptions& opts = {}) {
  std::vector<PredBox> raw;
  for (const auto& roi : frame.rois) {
    const auto dist = predict_tuples(index, embed_roi(model, roi.feature));
    std::vector<std::size_t> order(dist.probs.dim());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t k = std::min(opts.top_k_per_roi, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        return dist.probs[a] != dist.probs[b] ? dist.probs[a] > dist.probs[b] : a < b;
                      });
    for (std::size_t r = 0; r < k; ++r) {
      const double score = roi.roi_score * dist.probs[order[r]];
      if (score > opts.score_floor)
        raw.push_back({frame.frame_id, index.vocab.tuples[order[r]].tuple_id, roi.box, score});
    }
  }
  return nms(raw, opts.nms_iou);
}

enum class ApInterpolation { all_point, coco101 };

struct PrPoint {
  double precision = 0.0;
  double recall = 0.0;
};

struct ApResult {
  std::int64_t tuple_id = 0;
  double ap = 0.0;
  std::vector<PrPoint> curve;  // one point per ranked prediction
  std::size_t n_gt = 0;
  std::size_t n_pred = 0;
  std::size_t n_tp = 0;
};

namespace detail {

inline double envelope_ap(const std::vector<PrPoint>& curve, ApInterpolation interp) {
  std::vector<double> env(curve.size());
  double running = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) env[i] = running = std::max(running, curve[i].precision);

  if (interp == ApInterpolation::all_point) {
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < curve.size(); ++i) {
      ap += (curve[i].recall - prev_recall) * env[i];
      prev_recall = curve[i].recall;
    }
    return ap;
  }
  double sum = 0.0;
  std::size_t i = 0;
  for (int t = 0; t <= 100; ++t) {
    const double thr = t / 100.0;
    while (i < curve.size() && curve[i].recall < thr) ++i;
    if (i < curve.size()) sum += env[i];
  }
  return sum / 101.0;
}

}  // namespace detail

/// AP for one tuple class. Returns nullopt when the class has no ground truth,
/// in which case it is excluded from the mean rather than scored.
inline std::optional<ApResult> average_precision(std::span<const PredBox> preds,
                                                 std::span<const GtBox> gts, double iou_threshold = 0.5,
                                                 ApInterpolation interp = ApInterpolation::all_point) {
  if (gts.empty()) return std::nullopt;
  ApResult res;
  res.tuple_id = gts.front().tuple_id;
  res.n_gt = gts.size();
  res.n_pred = preds.size();

  std::unordered_map<std::string, std::vector<std::size_t>> gt_by_frame;
  for (std::size_t g = 0; g < gts.size(); ++g) gt_by_frame[gts[g].frame_id].push_back(g);
  std::vector<bool> matched(gts.size(), false);

  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });

  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i : order) {
    std::optional<std::size_t> best;
    double best_iou = iou_threshold;
    if (auto it = gt_by_frame.find(preds[i].frame_id); it != gt_by_frame.end()) {
      for (std::size_t g : it->second) {
        if (matched[g]) continue;
        const double o = iou(preds[i].box, gts[g].box);
        if (o >= best_iou && (!best || o > best_iou)) {
          best = g;
          best_iou = o;
        }
      }
    }
    if (best) {
      matched[*best] = true;
      ++tp;
    } else {
      ++fp;
    }
    res.curve.push_back({static_cast<double>(tp) / static_cast<double>(tp + fp),
                         static_cast<double>(tp) / static_cast<double>(gts.size())});
  }
  res.n_tp = tp;
  res.ap = detail::envelope_ap(res.curve, interp);
  return res;
}

struct MapResult {
  double map = 0.0;
  std::vector<ApResult> per_class;  // ascending tuple_id, classes with GT only
};

/// Mean AP over tuple classes that have ground truth. When `only` is given the
/// mean is restricted to those tuple ids.
inline MapResult mean_ap(std::span<const PredBox> preds, std::span<const GtBox> gts,
                         const TupleVocab& vocab, double iou_threshold = 0.5,
                         ApInterpolation interp = ApInterpolation::all_point,
                         const std::set<std::int64_t>* only = nullptr) {
  const auto in_vocab = [&](std::int64_t id) {
    return id >= 0 && id < static_cast<std::int64_t>(vocab.size());
  };
  std::map<std::int64_t, std::vector<PredBox>> p_by;
  std::map<std::int64_t, std::vector<GtBox>> g_by;
  for (const auto& p : preds) {
    if (!in_vocab(p.tuple_id))
      throw Error(Errc::data, "eval", "prediction tuple_id " + std::to_string(p.tuple_id) + " not in vocab");
    p_by[p.tuple_id].push_back(p);
  }
  for (const auto& g : gts) {
    if (!in_vocab(g.tuple_id))
      throw Error(Errc::data, "eval", "ground-truth tuple_id " + std::to_string(g.tuple_id) + " not in vocab");
    g_by[g.tuple_id].push_back(g);
  }

  MapResult out;
  double sum = 0.0;
  for (const auto& [id, class_gts] : g_by) {
    if (only && !only->contains(id)) continue;
    const auto& class_preds = p_by[id];
    auto ap = average_precision(class_preds, class_gts, iou_threshold, interp);
    sum += ap->ap;
    out.per_class.push_back(std::move(*ap));
  }
  if (out.per_class.empty())
    throw Error(Errc::undefined_metric, "eval", "no tuple class has ground truth");
  out.map = sum / static_cast<double>(out.per_class.size());
  return out;
}

}  // namespace cobe
