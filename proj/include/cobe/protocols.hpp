#pragma once

// End-to-end evaluation and the zero-shot / few-shot protocols: train on the
// seen tuples only, evaluate against the full vocabulary, then optionally
// finetune on a handful of examples of each unseen tuple.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "cobe/eval.hpp"
#include "cobe/model.hpp"
#include "cobe/rng.hpp"
#include "cobe/synthetic.hpp"
#include "cobe/trainer.hpp"

namespace cobe {

inline std::vector<PredBox> predict_frames(const CobeModel& model, const TupleIndex& index,
                                           const std::vector<FrameRecord>& frames, const InferOptions& opts) {
  std::vector<PredBox> preds;
  for (const auto& f : frames) {
    auto p = infer_frame(model, index, f, opts);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  return preds;
}

/// The roi of `frame` whose box equals the ground-truth box, if any.
inline const RoiRecord* roi_for_gt(const FrameRecord& frame, const GtBox& gt) {
  for (const auto& r : frame.rois)
    if (!r.is_background && r.box == gt.box) return &r;
  return nullptr;
}

struct Accuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double value() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct EvalSummary {
  MapResult map;
  std::optional<double> seen_map;
  std::optional<double> unseen_map;
  Accuracy top1;
  Accuracy seen_top1;
  Accuracy unseen_top1;
  std::vector<PredBox> preds;
};

/// mAP over all tuple classes plus top-1 tuple accuracy of every ground-truth
/// roi; tuples in `unseen` are also reported separately.
inline EvalSummary evaluate_model(const CobeModel& model, const TupleVocab& vocab,
                                  const std::vector<FrameRecord>& frames, const std::vector<GtBox>& gts,
                                  const InferOptions& opts, const std::set<std::int64_t>& unseen = {},
                                  ApInterpolation interp = ApInterpolation::all_point,
                                  double iou_threshold = 0.5) {
  const TupleIndex index = build_tuple_index(model, vocab);
  EvalSummary s;
  s.preds = predict_frames(model, index, frames, opts);
  s.map = mean_ap(s.preds, gts, vocab, iou_threshold, interp);

  std::set<std::int64_t> seen;
  for (const auto& g : gts)
    if (!unseen.contains(g.tuple_id)) seen.insert(g.tuple_id);
  auto restricted = [&](const std::set<std::int64_t>& ids) -> std::optional<double> {
    if (ids.empty()) return std::nullopt;
    return mean_ap(s.preds, gts, vocab, iou_threshold, interp, &ids).map;
  };
  s.seen_map = restricted(seen);
  std::set<std::int64_t> unseen_with_gt;
  for (const auto& g : gts)
    if (unseen.contains(g.tuple_id)) unseen_with_gt.insert(g.tuple_id);
  s.unseen_map = restricted(unseen_with_gt);

  std::unordered_map<std::string, const FrameRecord*> by_id;
  for (const auto& f : frames) by_id[f.frame_id] = &f;
  for (const auto& g : gts) {
    auto it = by_id.find(g.frame_id);
    if (it == by_id.end()) continue;
    const RoiRecord* roi = roi_for_gt(*it->second, g);
    if (!roi) continue;
    const bool hit =
        index.vocab.tuples[predict_tuples(index, embed_roi(model, roi->feature)).argmax()].tuple_id == g.tuple_id;
    for (Accuracy* a : {&s.top1, unseen.contains(g.tuple_id) ? &s.unseen_top1 : &s.seen_top1}) {
      a->correct += hit;
      ++a->total;
    }
  }
  return s;
}

struct ProtocolConfig {
  ModelConfig model;
  TrainConfig train;
  InferOptions infer;
  FinetuneConfig finetune;
  std::size_t shots = 5;
};

struct ZeroShotResult {
  CobeModel model;
  ZeroShotSplit split;
  bool compositional = false;
  std::vector<LossReport> history;
  EvalSummary eval;
};

inline ZeroShotResult run_zero_shot(const std::vector<FrameRecord>& train_frames,
                                    const std::vector<FrameRecord>& test_frames, const std::vector<GtBox>& test_gt,
                                    const TupleVocab& vocab, const std::vector<std::int64_t>& holdout,
                                    const ProtocolConfig& cfg) {
  ZeroShotResult r;
  r.split = make_zero_shot_split(vocab, holdout);
  const std::set<std::int64_t> unseen(holdout.begin(), holdout.end());
  r.compositional = compositional_coverage(vocab, unseen);
  TrainResult tr = train(train_frames, r.split.train_vocab, cfg.model, cfg.train);
  r.model = std::move(tr.model);
  r.history = std::move(tr.history);
  r.eval = evaluate_model(r.model, r.split.eval_vocab, test_frames, test_gt, cfg.infer, unseen);
  return r;
}

/// `per_tuple` frames of each held-out tuple, drawn without replacement from
/// the shot pool. Frame order follows the holdout order.
inline std::vector<FrameRecord> select_shots(const std::vector<FrameRecord>& pool, const std::vector<GtBox>& pool_gt,
                                             const std::vector<std::int64_t>& holdout, std::size_t per_tuple,
                                             std::uint64_t seed) {
  std::unordered_map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < pool.size(); ++i) index_of[pool[i].frame_id] = i;
  std::vector<FrameRecord> out;
  std::set<std::size_t> taken;
  for (std::int64_t tid : holdout) {
    std::vector<std::size_t> candidates;
    for (const auto& g : pool_gt) {
      auto it = index_of.find(g.frame_id);
      if (g.tuple_id == tid && it != index_of.end() && !taken.contains(it->second) &&
          std::find(candidates.begin(), candidates.end(), it->second) == candidates.end())
        candidates.push_back(it->second);
    }
    if (candidates.size() < per_tuple)
      throw Error(Errc::data, "trainer",
                  "shot pool has " + std::to_string(candidates.size()) + " frames of tuple " + std::to_string(tid) +
                      ", need " + std::to_string(per_tuple));
    Rng rng(derive_seed(seed, {50, static_cast<std::uint64_t>(tid)}));
    rng.shuffle(candidates);
    for (std::size_t k = 0; k < per_tuple; ++k) {
      taken.insert(candidates[k]);
      out.push_back(pool[candidates[k]]);
    }
  }
  return out;
}

struct FewShotResult {
  ZeroShotResult zero_shot;
  std::vector<std::string> shot_frame_ids;
  CobeModel model;
  EvalSummary eval;
};

inline FewShotResult run_few_shot(const std::vector<FrameRecord>& train_frames,
                                  const std::vector<FrameRecord>& test_frames, const std::vector<GtBox>& test_gt,
                                  const std::vector<FrameRecord>& shot_pool, const std::vector<GtBox>& shot_gt,
                                  const TupleVocab& vocab, const std::vector<std::int64_t>& holdout,
                                  const ProtocolConfig& cfg) {
  FewShotResult r;
  r.zero_shot = run_zero_shot(train_frames, test_frames, test_gt, vocab, holdout, cfg);
  auto shots = select_shots(shot_pool, shot_gt, holdout, cfg.shots, cfg.train.seed);
  for (const auto& s : shots) r.shot_frame_ids.push_back(s.frame_id);
  r.model = finetune_few_shot(r.zero_shot.model, std::move(shots), vocab, cfg.train, cfg.finetune);
  const std::set<std::int64_t> unseen(holdout.begin(), holdout.end());
  r.eval = evaluate_model(r.model, vocab, test_frames, test_gt, cfg.infer, unseen);
  return r;
}

/// Mean object embedding of the ground-truth rois of each tuple.
inline std::map<std::int64_t, Vec64> tuple_representatives(const CobeModel& model,
                                                           const std::vector<FrameRecord>& frames,
                                                           const std::vector<GtBox>& gts) {
  std::unordered_map<std::string, const FrameRecord*> by_id;
  for (const auto& f : frames) by_id[f.frame_id] = &f;
  std::map<std::int64_t, Vec64> sum;
  std::map<std::int64_t, std::size_t> count;
  for (const auto& g : gts) {
    auto it = by_id.find(g.frame_id);
    if (it == by_id.end()) continue;
    const RoiRecord* roi = roi_for_gt(*it->second, g);
    if (!roi) continue;
    const Vec64 f = embed_roi(model, roi->feature);
    auto [pos, fresh] = sum.try_emplace(g.tuple_id, f.dim());
    axpy(1.0, f.span(), pos->second.span());
    ++count[g.tuple_id];
  }
  for (auto& [id, v] : sum)
    for (auto& x : v) x /= static_cast<double>(count[id]);
  return sum;
}

}  // namespace cobe
