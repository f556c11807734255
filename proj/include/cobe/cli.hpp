#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cobe/data_io.hpp"
#include "cobe/error.hpp"
#include "cobe/eval.hpp"
#include "cobe/model.hpp"
#include "cobe/protocols.hpp"
#include "cobe/pseudo_label.hpp"
#include "cobe/retrieval.hpp"
#include "cobe/synthetic.hpp"
#include "cobe/trainer.hpp"
#include "cobe/version.hpp"

namespace cobe::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2 };

/// d.jsonl -> d.<tag>.jsonl (or .json for the header).
inline std::filesystem::path sidecar(const std::filesystem::path& base, const std::string& tag,
                                     const std::string& ext = ".jsonl") {
  std::filesystem::path p = base;
  p.replace_extension();
  return p.string() + "." + tag + ext;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

namespace detail {

struct TrainFlags {
  std::size_t d = 16;
  double lr = 0.001;
  std::int64_t warmup = 500;
  double momentum = 0.9;
  std::int64_t epochs = 10;
  std::int64_t steps = 0;
  std::size_t m = 64;
  std::size_t batch_frames = 4;
  double bg_per_fg = 1.0;
  std::uint64_t seed = 0;
  std::string negatives = "tokens";
  bool resample = false;
  bool shared = false;

  void add_to(CLI::App* sub) {
    sub->add_option("--d", d, "Embedding size");
    sub->add_option("--lr", lr, "Base learning rate");
    sub->add_option("--warmup", warmup, "Linear warmup steps");
    sub->add_option("--momentum", momentum, "SGD momentum");
    sub->add_option("--epochs", epochs, "Training epochs");
    sub->add_option("--steps", steps, "Exact number of steps; 0 runs --epochs");
    sub->add_option("--m", m, "Negatives per positive");
    sub->add_option("--batch-frames", batch_frames, "Frames per batch");
    sub->add_option("--bg-per-fg", bg_per_fg, "Background rois per foreground roi");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--negatives", negatives, "Negative pool")->check(CLI::IsMember({"tokens", "tokens+vocab"}));
    sub->add_flag("--resample-negatives", resample, "Redraw negatives every epoch");
    sub->add_flag("--shared-negatives", shared, "Share one negative set per category within a batch");
  }

  TrainConfig to_config(std::size_t threads) const {
    TrainConfig c;
    c.base_lr = lr;
    c.warmup_steps = warmup;
    c.momentum = momentum;
    c.epochs = epochs;
    c.max_steps = steps;
    c.m_negatives = m;
    c.batch_frames = batch_frames;
    c.bg_per_fg = bg_per_fg;
    c.seed = seed;
    c.negative_source = negatives == "tokens" ? NegativeSource::tokens : NegativeSource::tokens_and_vocab;
    c.resample_negatives = resample;
    c.shared_negatives = shared;
    c.threads = threads;
    return c;
  }
};

struct InferFlags {
  double score_floor = 0.001;
  std::size_t top_k = 5;
  double nms_iou = 0.5;
  double iou = 0.5;
  std::string interp = "all-point";

  void add_to(CLI::App* sub) {
    sub->add_option("--score-floor", score_floor, "Drop detections scoring at or below this");
    sub->add_option("--top-k", top_k, "Tuples kept per roi before NMS");
    sub->add_option("--nms-iou", nms_iou, "NMS IoU threshold");
    sub->add_option("--iou", iou, "IoU needed for a true positive");
    sub->add_option("--interp", interp, "AP interpolation")->check(CLI::IsMember({"all-point", "coco101"}));
  }

  InferOptions options() const { return {score_floor, top_k, nms_iou}; }
  ApInterpolation interpolation() const {
    return interp == "coco101" ? ApInterpolation::coco101 : ApInterpolation::all_point;
  }
};

/// Input paths for the protocol runners; --data fills the generator's sidecars.
struct ProtocolInputs {
  std::string data, train, test, gt, vocab, shot_frames, shot_gt;
  std::vector<std::int64_t> holdout;

  void add_to(CLI::App* sub, bool with_shots) {
    sub->add_option("--data", data, "Training frames written by `generate`; locates the sidecar files");
    sub->add_option("--train", train, "Training frames");
    sub->add_option("--test", test, "Test frames");
    sub->add_option("--gt", gt, "Test ground truth");
    sub->add_option("--vocab", vocab, "Full tuple vocabulary");
    sub->add_option("--holdout", holdout, "Held-out tuple ids")->delimiter(',');
    if (with_shots) {
      sub->add_option("--shot-frames", shot_frames, "Frames to draw shots from");
      sub->add_option("--shot-gt", shot_gt, "Ground truth of the shot frames");
    }
  }

  void resolve() {
    if (!data.empty()) {
      const std::filesystem::path base = data;
      if (train.empty()) train = data;
      if (test.empty()) test = sidecar(base, "test").string();
      if (gt.empty()) gt = sidecar(base, "test_gt").string();
      if (vocab.empty()) vocab = sidecar(base, "vocab").string();
      if (shot_frames.empty()) shot_frames = sidecar(base, "shots").string();
      if (shot_gt.empty()) shot_gt = sidecar(base, "shots_gt").string();
      if (holdout.empty()) {
        std::ifstream in(sidecar(base, "header", ".json"));
        if (!in) throw Error(Errc::io, "cli", "cannot open the dataset header next to " + data);
        holdout = json::parse(in).at("holdout_tuple_ids").get<std::vector<std::int64_t>>();
      }
    }
    if (train.empty() || test.empty() || gt.empty() || vocab.empty())
      throw Error(Errc::invalid_config, "cli", "need --data or all of --train, --test, --gt, --vocab");
  }
};

inline std::size_t feature_dim(const std::vector<FrameRecord>& frames) {
  for (const auto& f : frames)
    if (!f.rois.empty()) return f.rois.front().feature.dim();
  throw Error(Errc::data, "cli", "no rois in the training frames");
}

inline std::size_t token_dim(const std::vector<FrameRecord>& frames) {
  for (const auto& f : frames)
    if (!f.token_embeddings.empty()) return f.token_embeddings.front().dim();
  throw Error(Errc::data, "cli", "no token embeddings in the training frames");
}

inline json class_table(const MapResult& m, const TupleVocab& vocab) {
  json rows = json::array();
  for (const auto& c : m.per_class) {
    std::string label;
    for (const auto& t : vocab.tuples)
      if (t.tuple_id == c.tuple_id) label = t.label();
    rows.push_back({{"tuple_id", c.tuple_id},
                    {"label", label},
                    {"ap", c.ap},
                    {"n_gt", c.n_gt},
                    {"n_pred", c.n_pred},
                    {"n_tp", c.n_tp}});
  }
  return rows;
}

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json accuracy_json(const Accuracy& a) {
  return {{"value", a.total ? json(a.value()) : json(nullptr)}, {"correct", a.correct}, {"total", a.total}};
}

inline json summary_json(const EvalSummary& s, const TupleVocab& vocab) {
  return {{"map", s.map.map},
          {"seen_map", opt_json(s.seen_map)},
          {"unseen_map", opt_json(s.unseen_map)},
          {"top1", accuracy_json(s.top1)},
          {"seen_top1", accuracy_json(s.seen_top1)},
          {"unseen_top1", accuracy_json(s.unseen_top1)},
          {"n_predictions", s.preds.size()},
          {"classes", class_table(s.map, vocab)}};
}

inline void emit(const json& report, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << report.dump(2) << '\n';
    return;
  }
  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw Error(Errc::io, "cli", "cannot write " + out_path);
  f << report.dump(2) << '\n';
}

inline std::string tuple_label(const TupleVocab& vocab, std::int64_t id) {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab.size())
    throw Error(Errc::invalid_config, "cli", "tuple id " + std::to_string(id) + " is not in the vocabulary");
  return vocab.tuples[static_cast<std::size_t>(id)].label();
}

}  // namespace detail

/// Entry point behind the cobe_cli binary. Exit codes: 0 success, 1 usage or
/// configuration error, 2 data error.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Contextualized object embeddings: generate, label, train, evaluate, query."};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Read options from a file in the format printed at startup");
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Worker threads; results do not depend on it")
      ->check(CLI::Range(std::size_t{1}, std::size_t{256}));

  // generate
  SyntheticConfig syn;
  std::string gen_out;
  std::size_t gen_holdout = 0;
  bool context_independent = false;
  auto* gen = app.add_subcommand("generate", "Write a planted-structure synthetic dataset");
  gen->add_option("--out", gen_out, "Training frames path; sidecars are written next to it")->required();
  gen->add_option("--seed", syn.seed, "Random seed");
  gen->add_option("--nouns", syn.n_nouns, "Number of nouns");
  gen->add_option("--contexts", syn.n_contexts, "Number of contexts");
  gen->add_option("--d-latent", syn.d_latent, "Latent dimension");
  gen->add_option("--visual-dim", syn.visual_in_dim, "Roi feature dimension");
  gen->add_option("--text-dim", syn.text_in_dim, "Token embedding dimension");
  gen->add_option("--noise", syn.noise_sigma, "Gaussian noise sigma");
  gen->add_option("--frames", syn.frames, "Training frames");
  gen->add_option("--test-frames", syn.test_frames, "Test frames");
  gen->add_option("--shot-frames", syn.shot_frames_per_pair, "Shot-pool frames per held-out pair");
  gen->add_option("--rois-per-frame", syn.rois_per_frame, "Foreground rois per frame");
  gen->add_option("--bg-per-frame", syn.bg_per_frame, "Background rois per frame");
  gen->add_option("--holdout", gen_holdout, "Held-out (noun, context) pairs, test frames only");
  gen->add_flag("--context-independent", context_independent, "Token embeddings ignore their phrase partner");

  // pseudo-label
  PseudoLabelConfig pl;
  std::string pl_in, pl_out, pl_report;
  bool pl_stats_only = false, pl_no_plural = false;
  auto* pseudo = app.add_subcommand("pseudo-label", "Filter detections by score and narration match");
  pseudo->add_option("--in", pl_in, "Raw detection records (JSONL)")->required();
  pseudo->add_option("--out", pl_out, "Accepted frames (JSONL)");
  pseudo->add_option("--report", pl_report, "Statistics report path; stdout when empty");
  pseudo->add_option("--threshold", pl.score_threshold, "Minimum detection score");
  pseudo->add_option("--min-class-count", pl.min_class_count, "Drop classes with fewer accepted boxes");
  pseudo->add_flag("--no-plural-stripping", pl_no_plural, "Require exact token matches");
  pseudo->add_flag("--stats-only", pl_stats_only, "Only count; features are optional");

  // train
  detail::TrainFlags tf;
  std::string tr_frames, tr_vocab, tr_out, tr_resume, tr_report;
  std::int64_t tr_stop_at = 0;
  auto* trn = app.add_subcommand("train", "Train both heads and write a checkpoint");
  trn->add_option("--frames", tr_frames, "Training frames")->required();
  trn->add_option("--vocab", tr_vocab, "Tuple vocabulary")->required();
  trn->add_option("--out", tr_out, "Checkpoint path")->required();
  trn->add_option("--resume", tr_resume, "Continue from this checkpoint; its training config wins");
  trn->add_option("--stop-at", tr_stop_at, "Stop once this global step is reached; 0 runs to the end");
  trn->add_option("--report", tr_report, "Loss history report path; stdout when empty");
  tf.add_to(trn);

  // eval
  detail::InferFlags inf;
  std::string ev_ckpt, ev_frames, ev_vocab, ev_gt, ev_preds, ev_preds_out, ev_out;
  std::vector<std::int64_t> ev_unseen;
  auto* ev = app.add_subcommand("eval", "mAP report from a checkpoint or a predictions file");
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint");
  ev->add_option("--frames", ev_frames, "Frames to run the model on");
  ev->add_option("--preds", ev_preds, "Score existing predictions instead of running a model");
  ev->add_option("--vocab", ev_vocab, "Tuple vocabulary")->required();
  ev->add_option("--gt", ev_gt, "Ground truth boxes")->required();
  ev->add_option("--unseen", ev_unseen, "Tuple ids reported separately as unseen")->delimiter(',');
  ev->add_option("--preds-out", ev_preds_out, "Write the model's predictions here");
  ev->add_option("--out", ev_out, "Report path; stdout when empty");
  inf.add_to(ev);

  // zeroshot / fewshot
  detail::ProtocolInputs zin;
  detail::TrainFlags ztf;
  detail::InferFlags zinf;
  std::string z_out, z_ckpt_out;
  auto* zs = app.add_subcommand("zeroshot", "Train without the held-out tuples, evaluate with all of them");
  zin.add_to(zs, false);
  ztf.add_to(zs);
  zinf.add_to(zs);
  zs->add_option("--out", z_out, "Report path; stdout when empty");
  zs->add_option("--checkpoint-out", z_ckpt_out, "Also save the zero-shot checkpoint");

  detail::ProtocolInputs fin;
  detail::TrainFlags ftf;
  detail::InferFlags finf;
  FinetuneConfig ft;
  std::size_t shots = 5;
  std::string f_out;
  auto* fs = app.add_subcommand("fewshot", "Zero-shot run followed by finetuning on a few shots per unseen tuple");
  fin.add_to(fs, true);
  ftf.add_to(fs);
  finf.add_to(fs);
  fs->add_option("--shots", shots, "Shots per held-out tuple");
  fs->add_option("--ft-steps", ft.steps, "Finetuning steps");
  fs->add_option("--ft-lr-scale", ft.lr_scale, "Finetuning lr as a fraction of --lr");
  fs->add_option("--ft-warmup", ft.warmup_steps, "Finetuning warmup steps");
  fs->add_option("--out", f_out, "Report path; stdout when empty");

  // retrieve
  std::string rt_ckpt, rt_vocab, rt_frames, rt_direction = "object-to-text", rt_frame_id, rt_sim = "dot", rt_out;
  std::int64_t rt_tuple = -1;
  std::size_t rt_k = 5;
  auto* rt = app.add_subcommand("retrieve", "Nearest tuples for rois, or nearest rois for a tuple");
  rt->add_option("--checkpoint", rt_ckpt, "Model checkpoint")->required();
  rt->add_option("--vocab", rt_vocab, "Tuple vocabulary")->required();
  rt->add_option("--frames", rt_frames, "Frames holding the rois")->required();
  rt->add_option("--direction", rt_direction, "Query direction")
      ->check(CLI::IsMember({"object-to-text", "text-to-object"}));
  rt->add_option("--tuple", rt_tuple, "Query tuple id for text-to-object");
  rt->add_option("--frame-id", rt_frame_id, "Restrict object-to-text queries to one frame");
  rt->add_option("--k", rt_k, "Hits per query");
  rt->add_option("--similarity", rt_sim, "Similarity")->check(CLI::IsMember({"dot", "cosine"}));
  rt->add_option("--out", rt_out, "Report path; stdout when empty");

  // analogy
  std::string an_ckpt, an_vocab, an_frames, an_gt, an_sim = "dot", an_out;
  std::int64_t an_a = -1, an_b = -1, an_c = -1;
  std::size_t an_k = 5;
  bool an_keep_inputs = false;
  auto* an = app.add_subcommand("analogy", "Rank tuples against a - b + c");
  an->add_option("--checkpoint", an_ckpt, "Model checkpoint")->required();
  an->add_option("--vocab", an_vocab, "Tuple vocabulary")->required();
  an->add_option("--a", an_a, "Tuple id a")->required();
  an->add_option("--b", an_b, "Tuple id b")->required();
  an->add_option("--c", an_c, "Tuple id c")->required();
  an->add_option("--frames", an_frames, "Use mean roi embeddings of these frames instead of text embeddings");
  an->add_option("--gt", an_gt, "Ground truth locating each tuple's rois in --frames");
  an->add_option("--k", an_k, "Hits");
  an->add_option("--similarity", an_sim, "Similarity")->check(CLI::IsMember({"dot", "cosine"}));
  an->add_flag("--keep-inputs", an_keep_inputs, "Do not exclude a, b and c from the ranking");
  an->add_option("--out", an_out, "Report path; stdout when empty");

  if (argc <= 1) {
    err << app.help();
    return kUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  // Globals plus the chosen subcommand; the result is valid input for --config.
  std::string resolved;
  {
    const std::string active = app.get_subcommands().front()->get_name() + ".";
    std::istringstream all(app.config_to_str(true, false));
    for (std::string line; std::getline(all, line);) {
      const auto eq = line.find('=');
      const auto dot = line.find('.');
      if (eq == std::string::npos) continue;
      if (dot == std::string::npos || dot > eq || line.rfind(active, 0) == 0) resolved += line + '\n';
    }
  }
  const std::string config_hash = hex64(cobe::detail::fnv1a(resolved));
  err << "# resolved config (hash " << config_hash << ")\n" << resolved;
  auto stamp = [&](json report) {
    report["engine_version"] = kEngineVersion;
    report["config_hash"] = config_hash;
    return report;
  };

  try {
    if (*gen) {
      syn.holdout_pairs = default_holdout_pairs(gen_holdout, syn.n_nouns, syn.n_contexts);
      syn.contextualized = !context_independent;
      const SyntheticDataset ds = generate_synthetic(syn);
      const std::filesystem::path base = gen_out;
      write_frames(base, ds.train);
      write_frames(sidecar(base, "test"), ds.test);
      write_frames(sidecar(base, "shots"), ds.shots);
      write_vocab(sidecar(base, "vocab"), ds.vocab);
      write_gts(sidecar(base, "test_gt"), ds.test_gt);
      write_gts(sidecar(base, "shots_gt"), ds.shots_gt);
      std::ofstream h(sidecar(base, "header", ".json"), std::ios::trunc);
      if (!h) throw Error(Errc::io, "cli", "cannot write the dataset header");
      h << ds.header.dump(2) << '\n';
      detail::emit(stamp({{"train_frames", ds.train.size()},
                          {"test_frames", ds.test.size()},
                          {"shot_frames", ds.shots.size()},
                          {"tuples", ds.vocab.size()},
                          {"holdout_tuple_ids", ds.holdout_tuple_ids}}),
                   "", out);
    } else if (*pseudo) {
      pl.plural_stripping = !pl_no_plural;
      if (!pl_stats_only && pl_out.empty())
        throw Error(Errc::invalid_config, "cli", "pseudo-label needs --out unless --stats-only is set");
      const PseudoDataset ds = build_dataset_from_jsonl(pl_in, pl, pl_stats_only);
      if (!pl_stats_only) write_frames(pl_out, ds.frames);
      detail::emit(stamp(stats_to_json(ds)), pl_report, out);
    } else if (*trn) {
      const auto frames = read_frames(tr_frames);
      const TupleVocab vocab = read_vocab(tr_vocab);
      std::optional<Trainer> t;
      if (!tr_resume.empty()) {
        Checkpoint c = load_checkpoint(tr_resume);
        c.train_config.threads = threads;
        t.emplace(frames, vocab, std::move(c));
      } else {
        const TrainConfig cfg = tf.to_config(threads);
        cfg.validate();
        const auto mc = ModelConfig::with_defaults(tf.d, detail::feature_dim(frames), detail::token_dim(frames));
        t.emplace(frames, vocab, CobeModel::create(mc, derive_seed(cfg.seed, {0})), cfg);
      }
      const std::int64_t end = tr_stop_at > 0 ? std::min(tr_stop_at, t->planned_steps()) : t->planned_steps();
      t->run_steps(std::max<std::int64_t>(0, end - t->global_step()));
      save_checkpoint(tr_out, t->checkpoint());
      json hist = json::array();
      for (const auto& h : t->history())
        hist.push_back({{"l_fg", h.l_fg}, {"l_bg", h.l_bg}, {"total", h.total}, {"b_count", h.b_count}});
      detail::emit(stamp({{"global_step", t->global_step()},
                          {"planned_steps", t->planned_steps()},
                          {"checkpoint", tr_out},
                          {"train", to_json(t->config())},
                          {"loss_by_epoch", hist}}),
                   tr_report, out);
    } else if (*ev) {
      const TupleVocab vocab = read_vocab(ev_vocab);
      const auto gts = read_gts(ev_gt);
      const std::set<std::int64_t> unseen(ev_unseen.begin(), ev_unseen.end());
      json report;
      if (!ev_preds.empty()) {
        if (!ev_ckpt.empty()) throw Error(Errc::invalid_config, "cli", "give either --preds or --checkpoint");
        const auto preds = read_preds(ev_preds);
        const MapResult m = mean_ap(preds, gts, vocab, inf.iou, inf.interpolation());
        report = {{"map", m.map}, {"classes", detail::class_table(m, vocab)}, {"n_predictions", preds.size()}};
      } else {
        if (ev_ckpt.empty() || ev_frames.empty())
          throw Error(Errc::invalid_config, "cli", "eval needs --preds, or --checkpoint with --frames");
        const Checkpoint c = load_checkpoint(ev_ckpt);
        const auto frames = read_frames(ev_frames);
        const EvalSummary s =
            evaluate_model(c.model, vocab, frames, gts, inf.options(), unseen, inf.interpolation(), inf.iou);
        if (!ev_preds_out.empty()) write_preds(ev_preds_out, s.preds);
        report = detail::summary_json(s, vocab);
        report["n_frames"] = frames.size();
      }
      report["n_gt"] = gts.size();
      report["iou_threshold"] = inf.iou;
      report["interpolation"] = inf.interp;
      detail::emit(stamp(report), ev_out, out);
    } else if (*zs || *fs) {
      const bool few = static_cast<bool>(*fs);
      auto& in = few ? fin : zin;
      in.resolve();
      ProtocolConfig pc;
      pc.train = (few ? ftf : ztf).to_config(threads);
      pc.train.validate();
      pc.infer = (few ? finf : zinf).options();
      pc.finetune = ft;
      pc.shots = shots;
      const auto train_frames = read_frames(in.train);
      const auto test_frames = read_frames(in.test);
      const auto gts = read_gts(in.gt);
      const TupleVocab vocab = read_vocab(in.vocab);
      pc.model = ModelConfig::with_defaults((few ? ftf : ztf).d, detail::feature_dim(train_frames),
                                            detail::token_dim(train_frames));
      json report;
      auto zero_shot_json = [&](const ZeroShotResult& z) {
        return json{{"train_tuples", z.split.train_vocab.size()},
                    {"eval_tuples", z.split.eval_vocab.size()},
                    {"compositional", z.compositional},
                    {"warnings", z.split.warnings},
                    {"eval", detail::summary_json(z.eval, vocab)}};
      };
      if (!few) {
        const ZeroShotResult z = run_zero_shot(train_frames, test_frames, gts, vocab, in.holdout, pc);
        if (!z_ckpt_out.empty())
          save_checkpoint(z_ckpt_out, Checkpoint{kCheckpointVersion, pc.train, z.model,
                                                 OptimizerState::zeros_like(z.model.visual_head),
                                                 OptimizerState::zeros_like(z.model.text_head), 0});
        report = zero_shot_json(z);
      } else {
        if (in.shot_frames.empty() || in.shot_gt.empty())
          throw Error(Errc::invalid_config, "cli", "fewshot needs --shot-frames and --shot-gt (or --data)");
        const FewShotResult r = run_few_shot(train_frames, test_frames, gts, read_frames(in.shot_frames),
                                             read_gts(in.shot_gt), vocab, in.holdout, pc);
        report = {{"zero_shot", zero_shot_json(r.zero_shot)},
                  {"few_shot", detail::summary_json(r.eval, vocab)},
                  {"shot_frame_ids", r.shot_frame_ids}};
      }
      report["holdout_tuple_ids"] = in.holdout;
      detail::emit(stamp(report), few ? f_out : z_out, out);
    } else if (*rt) {
      const Checkpoint c = load_checkpoint(rt_ckpt);
      const TupleVocab vocab = read_vocab(rt_vocab);
      const auto frames = read_frames(rt_frames);
      const TupleIndex index = build_tuple_index(c.model, vocab);
      const Similarity sim = rt_sim == "cosine" ? Similarity::cosine : Similarity::dot;
      json results = json::array();
      if (rt_direction == "object-to-text") {
        for (const auto& f : frames) {
          if (!rt_frame_id.empty() && f.frame_id != rt_frame_id) continue;
          for (std::size_t r = 0; r < f.rois.size(); ++r) {
            if (f.rois[r].is_background) continue;
            const auto res = object_to_text(embed_roi(c.model, f.rois[r].feature), index, rt_k, sim);
            json hits = json::array();
            for (const auto& h : res.hits)
              hits.push_back({{"tuple_id", h.item_id}, {"label", detail::tuple_label(vocab, h.item_id)}, {"score", h.similarity}});
            results.push_back({{"frame_id", f.frame_id}, {"roi", r}, {"hits", hits}});
          }
        }
      } else {
        if (rt_tuple < 0) throw Error(Errc::invalid_config, "cli", "text-to-object needs --tuple");
        detail::tuple_label(vocab, rt_tuple);
        Corpus<std::string> corpus;
        for (const auto& f : frames)
          for (std::size_t r = 0; r < f.rois.size(); ++r)
            corpus.emplace_back(f.frame_id + "#" + std::to_string(r), embed_roi(c.model, f.rois[r].feature));
        const Vec64 q(std::vector<double>(index.z.row(static_cast<std::size_t>(rt_tuple)).begin(),
                                          index.z.row(static_cast<std::size_t>(rt_tuple)).end()));
        const auto res = text_to_object(q, corpus, rt_k, sim);
        json hits = json::array();
        for (const auto& h : res.hits) hits.push_back({{"roi", h.item_id}, {"score", h.similarity}});
        results.push_back({{"tuple_id", rt_tuple}, {"label", detail::tuple_label(vocab, rt_tuple)}, {"hits", hits}});
      }
      detail::emit(stamp({{"direction", rt_direction}, {"similarity", rt_sim}, {"results", results}}), rt_out, out);
    } else if (*an) {
      const Checkpoint c = load_checkpoint(an_ckpt);
      const TupleVocab vocab = read_vocab(an_vocab);
      for (auto id : {an_a, an_b, an_c}) detail::tuple_label(vocab, id);
      Corpus<std::int64_t> corpus;
      std::string space = "text";
      if (!an_frames.empty()) {
        if (an_gt.empty()) throw Error(Errc::invalid_config, "cli", "--frames needs --gt");
        for (auto& [id, v] : tuple_representatives(c.model, read_frames(an_frames), read_gts(an_gt)))
          corpus.emplace_back(id, std::move(v));
        space = "object";
      } else {
        const TupleIndex index = build_tuple_index(c.model, vocab);
        for (std::size_t t = 0; t < vocab.size(); ++t)
          corpus.emplace_back(vocab.tuples[t].tuple_id,
                              Vec64(std::vector<double>(index.z.row(t).begin(), index.z.row(t).end())));
      }
      auto find = [&](std::int64_t id) -> const Vec64& {
        for (const auto& [cid, v] : corpus)
          if (cid == id) return v;
        throw Error(Errc::data, "cli", "tuple " + std::to_string(id) + " has no embedding in the corpus");
      };
      const Similarity sim = an_sim == "cosine" ? Similarity::cosine : Similarity::dot;
      const auto res = analogy_query(find(an_a), find(an_b), find(an_c), corpus, an_k, !an_keep_inputs, sim);
      json hits = json::array();
      for (const auto& h : res.hits)
        hits.push_back({{"tuple_id", h.item_id}, {"label", detail::tuple_label(vocab, h.item_id)}, {"score", h.similarity}});
      detail::emit(stamp({{"a", an_a}, {"b", an_b}, {"c", an_c}, {"space", space}, {"similarity", an_sim},
                          {"hits", hits}}),
                   an_out, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == Errc::invalid_config ? kUsage : kDataError;
  } catch (const std::exception& e) {
    err << "error: cli: " << e.what() << '\n';
    return kDataError;
  }
  return kOk;
}

}  // namespace cobe::cli
