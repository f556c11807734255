#pragma once

// Joint training of the visual and text heads under the foreground/background
// NCE loss, few-shot finetuning, and binary checkpoints.
//
// Every random choice is derived from (seed, what, which) rather than drawn
// from a running generator, so a run resumed from a checkpoint replays the
// exact same batches and negatives as an uninterrupted one.

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cobe/core_math.hpp"
#include "cobe/data_io.hpp"
#include "cobe/error.hpp"
#include "cobe/frame.hpp"
#include "cobe/model.hpp"
#include "cobe/nce.hpp"
#include "cobe/rng.hpp"
#include "cobe/text.hpp"

namespace cobe {

enum class NegativeSource { tokens, tokens_and_vocab };

struct TrainConfig {
  double base_lr = 0.001;
  std::int64_t warmup_steps = 500;
  double momentum = 0.9;
  std::int64_t epochs = 10;
  std::size_t m_negatives = 64;
  std::size_t batch_frames = 4;
  double bg_per_fg = 1.0;
  std::uint64_t seed = 0;
  /// When positive, training runs exactly this many steps instead of `epochs`.
  std::int64_t max_steps = 0;
  NegativeSource negative_source = NegativeSource::tokens;
  /// Draw fresh negatives every epoch instead of once per RoI.
  bool resample_negatives = false;
  /// One negative set per (step, category) shared by all RoIs of the batch.
  bool shared_negatives = false;
  std::size_t threads = 1;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(Errc::invalid_config, "trainer", m); };
    if (epochs < 1) fail("epochs must be at least 1");
    if (m_negatives < 1) fail("m_negatives must be at least 1");
    if (batch_frames < 1) fail("batch_frames must be at least 1");
    if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) fail("base_lr must be a non-negative number");
    if (warmup_steps < 0) fail("warmup_steps must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
    if (!(bg_per_fg >= 0.0)) fail("bg_per_fg must be non-negative");
    if (max_steps < 0) fail("max_steps must be non-negative");
  }

  bool operator==(const TrainConfig&) const = default;
};

inline json to_json(const TrainConfig& c) {
  return {{"base_lr", c.base_lr},
          {"warmup_steps", c.warmup_steps},
          {"momentum", c.momentum},
          {"epochs", c.epochs},
          {"m_negatives", c.m_negatives},
          {"batch_frames", c.batch_frames},
          {"bg_per_fg", c.bg_per_fg},
          {"seed", c.seed},
          {"max_steps", c.max_steps},
          {"negative_source", c.negative_source == NegativeSource::tokens ? "tokens" : "tokens+vocab"},
          {"resample_negatives", c.resample_negatives},
          {"shared_negatives", c.shared_negatives},
          {"threads", c.threads}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.base_lr = io::require_as<double>(j, "base_lr");
  c.warmup_steps = io::require_as<std::int64_t>(j, "warmup_steps");
  c.momentum = io::require_as<double>(j, "momentum");
  c.epochs = io::require_as<std::int64_t>(j, "epochs");
  c.m_negatives = io::require_as<std::size_t>(j, "m_negatives");
  c.batch_frames = io::require_as<std::size_t>(j, "batch_frames");
  c.bg_per_fg = io::require_as<double>(j, "bg_per_fg");
  c.seed = io::require_as<std::uint64_t>(j, "seed");
  c.max_steps = io::require_as<std::int64_t>(j, "max_steps");
  c.negative_source = io::require_as<std::string>(j, "negative_source") == "tokens"
                          ? NegativeSource::tokens
                          : NegativeSource::tokens_and_vocab;
  c.resample_negatives = io::require_as<bool>(j, "resample_negatives");
  c.shared_negatives = io::require_as<bool>(j, "shared_negatives");
  c.threads = io::require_as<std::size_t>(j, "threads");
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout, all integers little-endian:
//   "COBE" | u32 format_version | u64 n | n bytes of UTF-8 JSON configs
//   | i64 global_step | i64 visual step_count | i64 text step_count
//   | u32 n_tensors | n_tensors x (u32 rows | u32 cols | rows*cols f64)
// Tensors: visual head (W, b per layer), text head, visual velocity, text
// velocity. Biases are stored as rows x 1.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  TrainConfig train_config;
  CobeModel model;
  OptimizerState visual_opt;
  OptimizerState text_opt;
  std::int64_t global_step = 0;

  bool operator==(const Checkpoint&) const = default;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v), 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void tensor(std::size_t rows, std::size_t cols, std::span<const double> v) {
    u32(static_cast<std::uint32_t>(rows));
    u32(static_cast<std::uint32_t>(cols));
    for (double x : v) f64(x);
  }
  const std::string& bytes() const { return bytes_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& b) : b_(b) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(le(8)); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw Error(Errc::corrupt_checkpoint, "trainer", "file is truncated");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

inline void write_params(ByteWriter& w, const std::vector<Mat64>& ws, const std::vector<Vec64>& bs) {
  for (std::size_t k = 0; k < ws.size(); ++k) {
    w.tensor(ws[k].rows(), ws[k].cols(), ws[k].span());
    w.tensor(bs[k].dim(), 1, bs[k].span());
  }
}

inline void read_params(ByteReader& r, std::vector<Mat64>& ws, std::vector<Vec64>& bs) {
  auto read_into = [&](std::size_t rows, std::size_t cols, std::span<double> out) {
    const std::uint32_t rr = r.u32();
    const std::uint32_t cc = r.u32();
    if (rr != rows || cc != cols)
      throw Error(Errc::corrupt_checkpoint, "trainer", "tensor shape does not match the stored config");
    for (auto& x : out) x = r.f64();
  };
  for (std::size_t k = 0; k < ws.size(); ++k) {
    read_into(ws[k].rows(), ws[k].cols(), ws[k].span());
    read_into(bs[k].dim(), 1, bs[k].span());
  }
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw("COBE");
  w.u32(c.format_version);
  const std::string cfg = json{{"model", to_json(c.model.config)},
                               {"train", to_json(c.train_config)},
                               {"activation", activation_name(c.model.visual_head.activation)}}
                              .dump();
  w.u64(cfg.size());
  w.raw(cfg);
  w.i64(c.global_step);
  w.i64(c.visual_opt.step_count);
  w.i64(c.text_opt.step_count);
  w.u32(static_cast<std::uint32_t>(4 * (c.model.visual_head.num_layers() + c.model.text_head.num_layers())));
  detail::write_params(w, c.model.visual_head.weights, c.model.visual_head.biases);
  detail::write_params(w, c.model.text_head.weights, c.model.text_head.biases);
  detail::write_params(w, c.visual_opt.velocity.weights, c.visual_opt.velocity.biases);
  detail::write_params(w, c.text_opt.velocity.weights, c.text_opt.velocity.biases);
  return w.bytes();
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < 4 || r.raw(4) != "COBE")
    throw Error(Errc::corrupt_checkpoint, "trainer", "bad magic bytes");
  Checkpoint c;
  c.format_version = r.u32();
  if (c.format_version != kCheckpointVersion)
    throw Error(Errc::corrupt_checkpoint, "trainer",
                "unsupported format version " + std::to_string(c.format_version));
  const std::uint64_t n = r.u64();
  if (n > bytes.size()) throw Error(Errc::corrupt_checkpoint, "trainer", "file is truncated");
  const std::string blob = r.raw(static_cast<std::size_t>(n));
  Activation act = Activation::relu;
  try {
    const json j = json::parse(blob);
    c.model.config = model_config_from_json(j.at("model"));
    c.train_config = train_config_from_json(j.at("train"));
    act = parse_activation(j.at("activation").get<std::string>());
    c.model.config.validate();
  } catch (const json::exception& e) {
    throw Error(Errc::corrupt_checkpoint, "trainer", std::string("bad config blob: ") + e.what());
  } catch (const Error& e) {
    throw Error(Errc::corrupt_checkpoint, "trainer", e.what());
  }
  // Shapes come from the config; values are overwritten below.
  c.model.visual_head = init_params(c.model.config.visual_layer_dims, 0, act);
  c.model.text_head = init_params(c.model.config.text_layer_dims, 0, act);
  c.visual_opt = OptimizerState::zeros_like(c.model.visual_head);
  c.text_opt = OptimizerState::zeros_like(c.model.text_head);
  c.global_step = r.i64();
  c.visual_opt.step_count = r.i64();
  c.text_opt.step_count = r.i64();
  const std::uint32_t n_tensors = r.u32();
  if (n_tensors != 4 * (c.model.visual_head.num_layers() + c.model.text_head.num_layers()))
    throw Error(Errc::corrupt_checkpoint, "trainer", "tensor count does not match the stored config");
  detail::read_params(r, c.model.visual_head.weights, c.model.visual_head.biases);
  detail::read_params(r, c.model.text_head.weights, c.model.text_head.biases);
  detail::read_params(r, c.visual_opt.velocity.weights, c.visual_opt.velocity.biases);
  detail::read_params(r, c.text_opt.velocity.weights, c.text_opt.velocity.biases);
  if (!r.at_end()) throw Error(Errc::corrupt_checkpoint, "trainer", "trailing bytes after tensors");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "trainer", "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io, "trainer", "write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "trainer", "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Training loop

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. fn must only write
/// to slot i of its outputs.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) {
    workers.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

// Backward passes are summed in fixed-size chunks whose partial sums are
// added in chunk order, so the result does not depend on the thread count.
inline constexpr std::size_t kReduceChunk = 32;

}  // namespace detail

/// Materialized inputs of one step. Text inputs are shared by slot; items
/// refer to their positive and negative slots.
struct StepItem {
  Vec64 feature;
  std::size_t positive_slot = 0;  // unused for background items
  std::vector<std::size_t> negative_slots;
};

struct StepInputs {
  std::vector<Vec64> text_inputs;
  std::vector<std::size_t> text_ids;  // pool index per slot, reported as source ids
  std::vector<StepItem> fg;
  std::vector<StepItem> bg;
};

namespace detail {

struct StepForward {
  NceBatch batch;
  std::vector<MlpCache> visual_caches;  // fg items then bg items
  std::vector<MlpCache> text_caches;    // one per slot
};

inline StepForward forward_step(const CobeModel& model, const StepInputs& in, std::size_t threads) {
  StepForward fw;
  const std::size_t d = model.config.d;
  const std::size_t n_items = in.fg.size() + in.bg.size();
  std::vector<Vec64> text_out(in.text_inputs.size());
  fw.text_caches.resize(in.text_inputs.size());
  parallel_for(in.text_inputs.size(), threads, [&](std::size_t s) {
    MlpForward f = mlp_forward(model.text_head, in.text_inputs[s]);
    text_out[s] = std::move(f.output);
    fw.text_caches[s] = std::move(f.cache);
  });
  std::vector<Vec64> visual_out(n_items);
  fw.visual_caches.resize(n_items);
  parallel_for(n_items, threads, [&](std::size_t i) {
    const StepItem& it = i < in.fg.size() ? in.fg[i] : in.bg[i - in.fg.size()];
    MlpForward f = mlp_forward(model.visual_head, it.feature);
    visual_out[i] = std::move(f.output);
    fw.visual_caches[i] = std::move(f.cache);
  });

  auto gather = [&](const std::vector<std::size_t>& slots) {
    NegativeSet n{Mat64(slots.size(), d), {}};
    for (std::size_t k = 0; k < slots.size(); ++k) {
      std::copy(text_out[slots[k]].begin(), text_out[slots[k]].end(), n.embeddings.row(k).begin());
      n.source_ids.push_back(slots[k] < in.text_ids.size() ? in.text_ids[slots[k]] : slots[k]);
    }
    return n;
  };
  fw.batch.d = d;
  for (std::size_t i = 0; i < in.fg.size(); ++i)
    fw.batch.fg.push_back({visual_out[i], text_out[in.fg[i].positive_slot], gather(in.fg[i].negative_slots)});
  for (std::size_t i = 0; i < in.bg.size(); ++i)
    fw.batch.bg.push_back({visual_out[in.fg.size() + i], gather(in.bg[i].negative_slots)});
  return fw;
}

inline MlpGrads backward_sum(const MlpParams& head, const std::vector<MlpCache>& caches,
                             const std::vector<Vec64>& out_grads, std::size_t threads) {
  const std::size_t n = caches.size();
  const std::size_t n_chunks = (n + kReduceChunk - 1) / kReduceChunk;
  std::vector<MlpGrads> partial(n_chunks, MlpGrads::zeros_like(head));
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kReduceChunk;
    const std::size_t hi = std::min(n, lo + kReduceChunk);
    for (std::size_t i = lo; i < hi; ++i) mlp_backward_accumulate(head, caches[i], out_grads[i], partial[c]);
  });
  MlpGrads total = MlpGrads::zeros_like(head);
  for (const auto& p : partial) total.add(p);
  return total;
}

}  // namespace detail

struct StepGradients {
  LossReport loss;
  MlpGrads visual;
  MlpGrads text;
};

/// Loss of one step and its gradient with respect to both heads.
inline StepGradients step_gradients(const CobeModel& model, const StepInputs& in, std::size_t threads = 1) {
  const detail::StepForward fw = detail::forward_step(model, in, threads);
  const NceGrads grads = nce_grad(fw.batch);

  // d loss / d text-head output, one row per slot.
  Mat64 text_out_grad(in.text_inputs.size(), model.config.d);
  auto add_row = [&](std::size_t slot, std::span<const double> g) { axpy(1.0, g, text_out_grad.row(slot)); };
  std::vector<Vec64> visual_out_grad;
  visual_out_grad.reserve(in.fg.size() + in.bg.size());
  for (std::size_t i = 0; i < in.fg.size(); ++i) {
    visual_out_grad.push_back(grads.fg[i].f);
    add_row(in.fg[i].positive_slot, grads.fg[i].g_plus.span());
    for (std::size_t k = 0; k < in.fg[i].negative_slots.size(); ++k)
      add_row(in.fg[i].negative_slots[k], grads.fg[i].negatives.row(k));
  }
  for (std::size_t i = 0; i < in.bg.size(); ++i) {
    visual_out_grad.push_back(grads.bg[i].f);
    for (std::size_t k = 0; k < in.bg[i].negative_slots.size(); ++k)
      add_row(in.bg[i].negative_slots[k], grads.bg[i].negatives.row(k));
  }

  StepGradients out{grads.loss, detail::backward_sum(model.visual_head, fw.visual_caches, visual_out_grad, threads), {}};
  std::vector<Vec64> text_grads;
  text_grads.reserve(text_out_grad.rows());
  for (std::size_t s = 0; s < text_out_grad.rows(); ++s) text_grads.emplace_back(text_out_grad.row(s));
  out.text = detail::backward_sum(model.text_head, fw.text_caches, text_grads, threads);
  return out;
}

inline LossReport step_loss(const CobeModel& model, const StepInputs& in) {
  return nce_loss(detail::forward_step(model, in, 1).batch);
}

class Trainer {
 public:
  Trainer(std::vector<FrameRecord> dataset, const TupleVocab& vocab, CobeModel model, TrainConfig cfg)
      : frames_(std::move(dataset)), cfg_(cfg), model_(std::move(model)),
        visual_opt_(OptimizerState::zeros_like(model_.visual_head)),
        text_opt_(OptimizerState::zeros_like(model_.text_head)) {
    prepare(vocab);
  }

  Trainer(std::vector<FrameRecord> dataset, const TupleVocab& vocab, Checkpoint ckpt)
      : frames_(std::move(dataset)), cfg_(ckpt.train_config), model_(std::move(ckpt.model)),
        visual_opt_(std::move(ckpt.visual_opt)), text_opt_(std::move(ckpt.text_opt)),
        global_step_(ckpt.global_step) {
    prepare(vocab);
  }

  std::int64_t steps_per_epoch() const {
    return static_cast<std::int64_t>((frames_.size() + cfg_.batch_frames - 1) / cfg_.batch_frames);
  }

  /// Steps a full run performs: max_steps when set, else epochs full epochs.
  std::int64_t planned_steps() const { return cfg_.max_steps > 0 ? cfg_.max_steps : cfg_.epochs * steps_per_epoch(); }

  std::int64_t global_step() const noexcept { return global_step_; }
  const CobeModel& model() const noexcept { return model_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  const std::vector<PoolEntry>& pool() const noexcept { return pool_; }
  /// Per-epoch loss of the steps run by this trainer, indexed by epoch.
  const std::vector<LossReport>& history() const noexcept { return history_; }

  Checkpoint checkpoint() const {
    return {kCheckpointVersion, cfg_, model_, visual_opt_, text_opt_, global_step_};
  }

  /// Runs the remaining planned steps.
  void run() { run_steps(planned_steps() - global_step_); }

  void run_steps(std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) step();
  }

  /// The NCE batch the next step would use, with its embeddings computed by
  /// the current model.
  NceBatch peek_batch() const {
    return detail::forward_step(model_, plan_step(global_step_), cfg_.threads).batch;
  }

  /// Inputs of the next step, drawn without advancing.
  StepInputs next_step_inputs() const { return plan_step(global_step_); }

  LossReport step() {
    const StepInputs in = plan_step(global_step_);
    const StepGradients g = step_gradients(model_, in, cfg_.threads);
    const LrSchedule sched{cfg_.base_lr, cfg_.warmup_steps};
    sgd_momentum_step(model_.visual_head, g.visual, visual_opt_, sched, cfg_.momentum);
    sgd_momentum_step(model_.text_head, g.text, text_opt_, sched, cfg_.momentum);

    const auto epoch = static_cast<std::size_t>(global_step_ / steps_per_epoch());
    if (history_.size() <= epoch) history_.resize(epoch + 1);
    history_[epoch].merge(g.loss);
    ++global_step_;
    return g.loss;
  }

 private:
  struct FgSample {
    std::size_t frame;
    std::size_t roi;
    std::size_t positive;  // pool index
    std::string category;
  };

  void prepare(const TupleVocab& vocab) {
    cfg_.validate();
    model_.config.validate();
    if (frames_.empty()) throw Error(Errc::data, "trainer", "dataset is empty");
    const ModelConfig& mc = model_.config;

    fg_by_frame_.resize(frames_.size());
    bg_by_frame_.resize(frames_.size());
    for (std::size_t fi = 0; fi < frames_.size(); ++fi) {
      const FrameRecord& fr = frames_[fi];
      std::vector<std::optional<std::size_t>> token_slot(fr.narration_tokens.size());
      for (std::size_t ri = 0; ri < fr.rois.size(); ++ri) {
        const RoiRecord& roi = fr.rois[ri];
        if (roi.feature.dim() != mc.visual_in_dim)
          throw Error(Errc::data, "trainer",
                      "frame " + fr.frame_id + " roi " + std::to_string(ri) + " has feature dim " +
                          std::to_string(roi.feature.dim()) + ", model expects " + std::to_string(mc.visual_in_dim));
        if (roi.is_background) {
          bg_by_frame_[fi].push_back(ri);
          continue;
        }
        if (!roi.category) continue;
        const auto start = find_token_match(*roi.category, fr.narration_tokens, true);
        if (!start) continue;
        // Multi-word categories are supervised by their last (head) token.
        const std::size_t tok = *start + category_length(*roi.category) - 1;
        if (!token_slot[tok]) {
          if (fr.token_embeddings.size() != fr.narration_tokens.size() ||
              fr.token_embeddings[tok].dim() != mc.text_in_dim)
            throw Error(Errc::data, "trainer", "frame " + fr.frame_id + " token embeddings do not match text_in_dim");
          token_slot[tok] = pool_.size();
          pool_.push_back({pool_.size(), *roi.category, fr.token_embeddings[tok]});
        }
        fg_by_frame_[fi].push_back({fi, ri, *token_slot[tok], *roi.category});
      }
      if (fg_by_frame_[fi].empty())
        throw Error(Errc::data, "trainer",
                    "frame " + fr.frame_id + " has no labeled roi whose category appears in its narration");
    }
    if (cfg_.negative_source == NegativeSource::tokens_and_vocab) {
      for (const auto& t : vocab.tuples) {
        if (t.base_embedding.dim() != mc.text_in_dim)
          throw Error(Errc::data, "trainer", "vocab embedding dim does not match text_in_dim");
        pool_.push_back({pool_.size(), t.noun, t.base_embedding});
      }
    }
    sampler_.emplace(NegativeSampler::from_pool(pool_));
  }

  std::vector<std::size_t> epoch_order(std::int64_t epoch) const {
    std::vector<std::size_t> order(frames_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg_.seed, {10, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
    return order;
  }

  StepInputs plan_step(std::int64_t step) const {
    const std::int64_t spe = steps_per_epoch();
    const std::int64_t epoch = step / spe;
    const auto pos = static_cast<std::size_t>(step % spe);
    if (!order_cache_ || order_cache_->first != epoch) order_cache_.emplace(epoch, epoch_order(epoch));
    const auto& order = order_cache_->second;
    const auto ep_key = static_cast<std::uint64_t>(cfg_.resample_negatives ? epoch + 1 : 0);

    StepInputs plan;
    std::vector<std::ptrdiff_t> slot_of(pool_.size(), -1);
    auto slot = [&](std::size_t pool_idx) {
      if (slot_of[pool_idx] < 0) {
        slot_of[pool_idx] = static_cast<std::ptrdiff_t>(plan.text_inputs.size());
        plan.text_inputs.push_back(pool_[pool_idx].embedding);
        plan.text_ids.push_back(pool_idx);
      }
      return static_cast<std::size_t>(slot_of[pool_idx]);
    };
    auto negatives = [&](const std::optional<std::string>& exclude, std::size_t frame, std::size_t roi) {
      const std::uint64_t seed =
          cfg_.shared_negatives
              ? derive_seed(cfg_.seed, {31, static_cast<std::uint64_t>(step), exclude ? detail::fnv1a(*exclude) : 0})
              : derive_seed(cfg_.seed, {30, frame, roi, ep_key});
      std::vector<std::size_t> slots;
      for (std::size_t p : sampler_->sample(exclude, cfg_.m_negatives, seed)) slots.push_back(slot(p));
      return slots;
    };

    const std::size_t begin = pos * cfg_.batch_frames;
    const std::size_t end = std::min(begin + cfg_.batch_frames, order.size());
    for (std::size_t b = begin; b < end; ++b) {
      const std::size_t fi = order[b];
      for (const FgSample& s : fg_by_frame_[fi]) {
        StepItem item{frames_[fi].rois[s.roi].feature, slot(s.positive), {}};
        item.negative_slots = negatives(s.category, fi, s.roi);
        plan.fg.push_back(std::move(item));
      }
      std::vector<std::size_t> bgs = bg_by_frame_[fi];
      const auto want = static_cast<std::size_t>(
          std::lround(cfg_.bg_per_fg * static_cast<double>(fg_by_frame_[fi].size())));
      if (want < bgs.size()) {
        Rng rng(derive_seed(cfg_.seed, {20, fi, ep_key}));
        rng.shuffle(bgs);
        bgs.resize(want);
        std::sort(bgs.begin(), bgs.end());
      }
      for (std::size_t ri : bgs) {
        StepItem item{frames_[fi].rois[ri].feature, 0, {}};
        item.negative_slots = negatives(std::nullopt, fi, ri);
        plan.bg.push_back(std::move(item));
      }
    }
    return plan;
  }

  std::vector<FrameRecord> frames_;
  TrainConfig cfg_;
  CobeModel model_;
  OptimizerState visual_opt_;
  OptimizerState text_opt_;
  std::int64_t global_step_ = 0;

  std::vector<PoolEntry> pool_;
  mutable std::optional<NegativeSampler> sampler_;  // caches eligible lists
  std::vector<std::vector<FgSample>> fg_by_frame_;
  std::vector<std::vector<std::size_t>> bg_by_frame_;
  std::vector<LossReport> history_;
  mutable std::optional<std::pair<std::int64_t, std::vector<std::size_t>>> order_cache_;
};

struct TrainResult {
  CobeModel model;
  std::vector<LossReport> history;
  Checkpoint checkpoint;
};

inline TrainResult train(std::vector<FrameRecord> dataset, const TupleVocab& vocab, const ModelConfig& model_cfg,
                         const TrainConfig& cfg) {
  cfg.validate();
  Trainer t(std::move(dataset), vocab, CobeModel::create(model_cfg, derive_seed(cfg.seed, {0})), cfg);
  t.run();
  return {t.model(), t.history(), t.checkpoint()};
}

struct FinetuneConfig {
  std::int64_t steps = 200;
  double lr_scale = 0.1;
  std::int64_t warmup_steps = 0;
};

/// Continues training both heads on the shots alone. Negatives come from the
/// shots' tokens and the extended vocabulary's tuple embeddings.
inline CobeModel finetune_few_shot(const CobeModel& model, std::vector<FrameRecord> shots,
                                   const TupleVocab& vocab_extended, const TrainConfig& cfg,
                                   const FinetuneConfig& ft = {}) {
  if (shots.empty()) throw Error(Errc::invalid_config, "trainer", "few-shot finetuning needs at least one shot");
  if (ft.steps < 0 || !(ft.lr_scale >= 0.0))
    throw Error(Errc::invalid_config, "trainer", "finetune steps and lr scale must be non-negative");
  if (ft.steps == 0) return model;
  TrainConfig c = cfg;
  c.base_lr = cfg.base_lr * ft.lr_scale;
  c.warmup_steps = ft.warmup_steps;
  c.max_steps = ft.steps;
  c.negative_source = NegativeSource::tokens_and_vocab;
  c.seed = derive_seed(cfg.seed, {40});
  Trainer t(std::move(shots), vocab_extended, model, c);
  t.run();
  return t.model();
}

}  // namespace cobe
