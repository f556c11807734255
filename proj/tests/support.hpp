#pragma once

// Helpers shared by the unit tests and the acceptance runner. Oracles here are
// written from the formulas directly and do not call the code under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdlib.h>
#include <string>
#include <tuple>
#include <vector>

#include "cobe/cobe.hpp"

namespace cobe::testing {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "cobe-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

inline Vec64 random_vec(Rng& rng, std::size_t dim, double scale = 1.0) {
  Vec64 v(dim);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

/// Single dense layer with the given rows.
inline MlpParams linear_layer(std::vector<std::vector<double>> w, std::vector<double> b,
                              Activation act = Activation::relu) {
  MlpParams p;
  const std::size_t rows = w.size();
  const std::size_t cols = rows ? w.front().size() : 0;
  std::vector<double> flat;
  for (const auto& r : w) flat.insert(flat.end(), r.begin(), r.end());
  p.layer_dims = {cols, rows};
  p.weights.emplace_back(rows, cols, std::move(flat));
  p.biases.emplace_back(std::move(b));
  p.activation = act;
  return p;
}

inline Mat64 identity(std::size_t n) {
  Mat64 m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

/// Network of `layers` identity layers of width n with linear activations.
inline MlpParams identity_net(std::size_t n, std::size_t layers) {
  MlpParams p;
  p.activation = Activation::identity;
  p.layer_dims.assign(layers + 1, n);
  for (std::size_t k = 0; k < layers; ++k) {
    p.weights.push_back(identity(n));
    p.biases.emplace_back(n);
  }
  return p;
}

/// Model whose heads are identities of width d (visual: 1 layer, text: 5).
inline CobeModel identity_model(std::size_t d) {
  ModelConfig cfg{d, d, d, {d, d}, std::vector<std::size_t>(kTextHeadLayers + 1, d)};
  return {cfg, identity_net(d, 1), identity_net(d, kTextHeadLayers)};
}

// ---------------------------------------------------------------------------
// Loss oracle: the foreground term is -log(e^{f.g+} / (e^{f.g+} + sum_k e^{f.H_k}))
// and the background term is -log(1 / (1 + sum_k e^{f.H_k})), both averaged over
// the batch. Written in long double without the max shift.

inline long double oracle_dot(const Vec64& a, std::span<const double> b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return s;
}

inline std::tuple<double, double, double> oracle_nce(const NceBatch& batch) {
  long double fg = 0, bg = 0;
  for (const auto& it : batch.fg) {
    const long double pos = std::exp(oracle_dot(it.f, it.g_plus.span()));
    long double den = pos;
    for (std::size_t k = 0; k < it.negatives.embeddings.rows(); ++k)
      den += std::exp(oracle_dot(it.f, it.negatives.embeddings.row(k)));
    fg += -std::log(pos / den);
  }
  for (const auto& it : batch.bg) {
    long double den = 1;
    for (std::size_t k = 0; k < it.negatives.embeddings.rows(); ++k)
      den += std::exp(oracle_dot(it.f, it.negatives.embeddings.row(k)));
    bg += -std::log(1 / den);
  }
  const auto b = static_cast<long double>(batch.fg.size() + batch.bg.size());
  return {static_cast<double>(fg), static_cast<double>(bg), static_cast<double>((fg + bg) / b)};
}

inline NegativeSet random_negatives(Rng& rng, std::size_t m, std::size_t d, double scale) {
  NegativeSet n{Mat64(m, d), {}};
  for (auto& x : n.embeddings.span()) x = scale * rng.normal();
  for (std::size_t k = 0; k < m; ++k) n.source_ids.push_back(k);
  return n;
}

inline NceBatch random_batch(Rng& rng, std::size_t d, std::size_t n_fg, std::size_t n_bg, std::size_t max_m,
                             double scale = 0.7) {
  NceBatch b;
  b.d = d;
  for (std::size_t i = 0; i < n_fg; ++i)
    b.fg.push_back({random_vec(rng, d, scale), random_vec(rng, d, scale),
                    random_negatives(rng, 1 + rng.below(max_m), d, scale)});
  for (std::size_t i = 0; i < n_bg; ++i)
    b.bg.push_back({random_vec(rng, d, scale), random_negatives(rng, 1 + rng.below(max_m), d, scale)});
  return b;
}

/// Random end-to-end instance: a model with small heads and a step whose items
/// share a pool of text inputs.
struct StepInstance {
  CobeModel model;
  StepInputs inputs;
};

inline StepInstance random_instance(std::uint64_t seed, std::size_t max_d = 8, std::size_t max_m = 4) {
  Rng rng(seed);
  const std::size_t d = 2 + rng.below(max_d - 1);
  const std::size_t vin = 2 + rng.below(7);
  const std::size_t tin = 2 + rng.below(7);
  ModelConfig cfg = ModelConfig::with_defaults(d, vin, tin);
  StepInstance inst{CobeModel::create(cfg, derive_seed(seed, {7})), {}};
  // Non-zero biases so the ReLU pattern is not symmetric around the origin.
  for (auto* head : {&inst.model.visual_head, &inst.model.text_head})
    for (auto& b : head->biases)
      for (auto& x : b) x = 0.1 * rng.normal();

  const std::size_t slots = max_m + 2;
  for (std::size_t s = 0; s < slots; ++s) {
    inst.inputs.text_inputs.push_back(random_vec(rng, tin));
    inst.inputs.text_ids.push_back(s);
  }
  auto negatives = [&](std::size_t avoid) {
    std::vector<std::size_t> out;
    const std::size_t m = 1 + rng.below(max_m);
    while (out.size() < m) {
      const std::size_t s = rng.below(slots);
      if (s != avoid) out.push_back(s);
    }
    return out;
  };
  const std::size_t n_fg = 1 + rng.below(3);
  const std::size_t n_bg = rng.below(3);
  for (std::size_t i = 0; i < n_fg; ++i) {
    const std::size_t pos = rng.below(slots);
    inst.inputs.fg.push_back({random_vec(rng, vin), pos, negatives(pos)});
  }
  for (std::size_t i = 0; i < n_bg; ++i) inst.inputs.bg.push_back({random_vec(rng, vin), 0, negatives(slots)});
  return inst;
}

/// Relative error with a floor on the denominator. Central differences with
/// h = 1e-5 carry an absolute error near 1e-11, which would dominate any
/// relative measure of a gradient entry that is itself almost zero.
inline double rel_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct FdReport {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

/// Compares step_gradients against central differences of step_loss over
/// every parameter of both heads.
inline FdReport fd_check_step(const CobeModel& model, const StepInputs& in, double h = 1e-5) {
  const StepGradients g = step_gradients(model, in);
  FdReport rep;
  CobeModel probe = model;
  auto check = [&](std::span<double> params, std::span<const double> analytic) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double keep = params[i];
      params[i] = keep + h;
      const double up = step_loss(probe, in).total;
      params[i] = keep - h;
      const double down = step_loss(probe, in).total;
      params[i] = keep;
      rep.max_rel = std::max(rep.max_rel, rel_error(analytic[i], (up - down) / (2 * h)));
      ++rep.checked;
    }
  };
  for (auto [head, grads] : {std::pair{&probe.visual_head, &g.visual}, std::pair{&probe.text_head, &g.text}}) {
    for (std::size_t k = 0; k < head->num_layers(); ++k) {
      check(head->weights[k].span(), grads->weights[k].span());
      check(head->biases[k].span(), grads->biases[k].span());
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// AP oracle. Each prediction names the ground truth it overlaps exactly (or
// none), so matching needs no IoU: rank by score with ties in input order and
// a prediction is a true positive when its target is still unclaimed.

struct OraclePred {
  int target = -1;  // index into the ground truth, -1 for none
  double score = 0.0;
};

inline std::vector<std::pair<long double, long double>> oracle_pr(const std::vector<OraclePred>& preds,
                                                                   std::size_t n_gt) {
  std::vector<std::size_t> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return preds[a].score > preds[b].score; });
  std::set<int> claimed;
  std::vector<std::pair<long double, long double>> pr;  // (precision, recall)
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const int t = preds[order[r]].target;
    if (t >= 0 && claimed.insert(t).second) ++tp;
    pr.push_back({static_cast<long double>(tp) / (r + 1), static_cast<long double>(tp) / n_gt});
  }
  return pr;
}

/// Sum over true-positive ranks of the best precision at that recall or beyond,
/// divided by the number of ground-truth boxes.
inline double oracle_ap_all_point(const std::vector<OraclePred>& preds, std::size_t n_gt) {
  const auto pr = oracle_pr(preds, n_gt);
  long double ap = 0;
  long double prev_recall = 0;
  for (std::size_t i = 0; i < pr.size(); ++i) {
    if (pr[i].second == prev_recall) continue;
    long double best = 0;
    for (std::size_t j = 0; j < pr.size(); ++j)
      if (pr[j].second >= pr[i].second) best = std::max(best, pr[j].first);
    ap += best / n_gt;
    prev_recall = pr[i].second;
  }
  return static_cast<double>(ap);
}

inline double oracle_ap_coco101(const std::vector<OraclePred>& preds, std::size_t n_gt) {
  const auto pr = oracle_pr(preds, n_gt);
  long double sum = 0;
  for (int t = 0; t <= 100; ++t) {
    long double best = 0;
    for (const auto& [p, r] : pr)
      if (r >= t / 100.0L - 1e-12L) best = std::max(best, p);
    sum += best;
  }
  return static_cast<double>(sum / 101);
}

/// Boxes for the oracle: gt g sits at x = 100 g, a prediction with no target
/// sits far away from all of them.
inline std::pair<std::vector<PredBox>, std::vector<GtBox>> oracle_boxes(const std::vector<OraclePred>& preds,
                                                                        std::size_t n_gt) {
  std::vector<GtBox> gts;
  for (std::size_t g = 0; g < n_gt; ++g) gts.push_back({"f", 0, Box{100.0 * g, 0, 100.0 * g + 10, 10}});
  std::vector<PredBox> out;
  for (const auto& p : preds) {
    const Box b = p.target >= 0 ? gts[static_cast<std::size_t>(p.target)].box : Box{-500, -500, -490, -490};
    out.push_back({"f", 0, b, p.score});
  }
  return {out, gts};
}

// ---------------------------------------------------------------------------
// Pseudo-label fixture: ten frames filtered by hand at tau = 0.5 with
// min_class_count = 2 and plural stripping on.

inline Detection det(const std::string& cat, double score, double x) {
  return {Box{x, 0, x + 10, 10}, score, cat, Vec64{score, x}};
}

inline std::vector<RawFrame> pseudo_fixture() {
  auto frame = [](std::string id, std::string narration, std::vector<Detection> dets) {
    RawFrame f;
    f.frame_id = std::move(id);
    f.narration_tokens = tokenize(narration);
    for (std::size_t i = 0; i < f.narration_tokens.size(); ++i) f.token_embeddings.push_back(Vec64{1.0, double(i)});
    f.detections = std::move(dets);
    return f;
  };
  return {
      frame("f01", "cut the onion on the board", {det("onion", 0.9, 0), det("board", 0.4, 20), det("knife", 0.8, 40)}),
      frame("f02", "wash two tomatoes", {det("tomato", 0.6, 0), det("onion", 0.95, 20)}),
      frame("f03", "heat the frying pan", {det("frying pan", 0.7, 0), det("pan", 0.55, 20)}),
      frame("f04", "make pancakes", {det("pan", 0.9, 0)}),
      frame("f05", "peel the onions and tomatoes", {det("onion", 0.5, 0), det("tomato", 0.49, 20)}),
      frame("f06", "put the board away", {det("board", 0.8, 0)}),
      frame("f07", "stir the soup in the pan", {det("pan", 0.65, 0), det("spoon", 0.99, 20)}),
      frame("f08", "Slice the Tomato", {det("tomato", 0.75, 0)}),
      frame("f09", "nothing to see here", {det("onion", 0.99, 0)}),
      frame("f10", "the knives are sharp", {det("knife", 0.9, 0)}),
  };
}

/// (frame, category, score) of every box the fixture keeps, worked out by
/// hand: "frying pan" and "board" are accepted once each and then pruned,
/// "knives" does not reduce to "knife", and 0.5 sits exactly on the threshold.
inline std::multiset<std::tuple<std::string, std::string, double>> pseudo_fixture_expected() {
  return {{"f01", "onion", 0.9},  {"f02", "tomato", 0.6}, {"f03", "pan", 0.55},
          {"f05", "onion", 0.5},  {"f07", "pan", 0.65},   {"f08", "tomato", 0.75}};
}

/// Every fixture detection whose category is spoken in its frame's narration,
/// before any threshold. Pruning is applied by the oracle below.
inline std::vector<std::tuple<std::string, std::string, double>> pseudo_fixture_matches() {
  return {{"f01", "onion", 0.9},       {"f01", "board", 0.4}, {"f02", "tomato", 0.6},  {"f03", "frying pan", 0.7},
          {"f03", "pan", 0.55},        {"f05", "onion", 0.5}, {"f05", "tomato", 0.49}, {"f06", "board", 0.8},
          {"f07", "pan", 0.65},        {"f08", "tomato", 0.75}};
}

inline std::multiset<std::tuple<std::string, std::string, double>> pseudo_fixture_oracle(double tau,
                                                                                         std::int64_t min_count) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& [f, c, s] : pseudo_fixture_matches())
    if (s >= tau) ++counts[c];
  std::multiset<std::tuple<std::string, std::string, double>> out;
  for (const auto& [f, c, s] : pseudo_fixture_matches())
    if (s >= tau && counts[c] >= min_count) out.insert({f, c, s});
  return out;
}

inline std::multiset<std::tuple<std::string, std::string, double>> kept_boxes(const PseudoDataset& ds) {
  std::multiset<std::tuple<std::string, std::string, double>> out;
  for (const auto& f : ds.frames)
    for (const auto& r : f.rois)
      if (!r.is_background) out.insert({f.frame_id, *r.category, r.roi_score});
  return out;
}

}  // namespace cobe::testing
