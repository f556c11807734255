#include <gtest/gtest.h>

#include <cstring>
#include <limits>

#include "cobe/data_io.hpp"
#include "cobe/eval.hpp"
#include "cobe/synthetic.hpp"
#include "cobe/trainer.hpp"
#include "support.hpp"

using namespace cobe;
using cobe::testing::slurp;
using cobe::testing::TempDir;
using cobe::testing::write_text;

namespace {

Errc code_of(const std::function<void()>& fn, std::string* message = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  ADD_FAILURE() << "no cobe::Error thrown";
  return Errc::io;
}

FrameRecord sample_frame(const std::string& id, std::size_t feature_dim) {
  FrameRecord f;
  f.frame_id = id;
  f.rois.push_back({Box{1, 2, 30.5, 40}, Vec64(feature_dim, 0.25), "onion", 0.875, false});
  f.rois.push_back({Box{50, 50, 60, 70}, Vec64(feature_dim, -1.0), std::nullopt, 0.1, true});
  f.narration_tokens = {"cut", "onion"};
  f.token_embeddings = {Vec64{1, 2}, Vec64{3, 4}};
  return f;
}

SyntheticConfig small_config(std::uint64_t seed = 7) {
  SyntheticConfig sc;
  sc.frames = 30;
  sc.test_frames = 10;
  sc.shot_frames_per_pair = 3;
  sc.seed = seed;
  return sc;
}

}  // namespace

TEST(Frames, EmptyFileGivesNoFrames) {
  TempDir dir;
  write_text(dir / "empty.jsonl", "");
  EXPECT_TRUE(read_frames(dir / "empty.jsonl").empty());
  write_text(dir / "blank.jsonl", "\n  \n\r\n");
  EXPECT_TRUE(read_frames(dir / "blank.jsonl").empty());
}

TEST(Frames, RoundTrip) {
  TempDir dir;
  const std::vector<FrameRecord> frames{sample_frame("a", 3), sample_frame("b", 3), sample_frame("c", 3)};
  write_frames(dir / "f.jsonl", frames);
  EXPECT_EQ(read_frames(dir / "f.jsonl"), frames);
}

TEST(Frames, DoublesRoundTripBitExactly) {
  TempDir dir;
  FrameRecord f = sample_frame("a", 4);
  f.rois[0].feature = Vec64{0.1, 1.0 / 3.0, std::numeric_limits<double>::denorm_min(), -1e300};
  write_frames(dir / "f.jsonl", {f});
  const Vec64 back = read_frames(dir / "f.jsonl")[0].rois[0].feature;
  EXPECT_EQ(std::memcmp(back.span().data(), f.rois[0].feature.span().data(), 4 * sizeof(double)), 0);
}

TEST(Frames, MixedFeatureDimsNameTheLine) {
  TempDir dir;
  write_frames(dir / "a.jsonl", {sample_frame("a", 8)});
  write_frames(dir / "b.jsonl", {sample_frame("b", 16)});
  write_text(dir / "mixed.jsonl", slurp(dir / "a.jsonl") + slurp(dir / "b.jsonl"));
  std::string msg;
  EXPECT_EQ(code_of([&] { read_frames(dir / "mixed.jsonl"); }, &msg), Errc::schema);
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("16"), std::string::npos) << msg;
}

TEST(Frames, ParseErrorNamesTheLine) {
  TempDir dir;
  write_frames(dir / "a.jsonl", {sample_frame("a", 2)});
  write_text(dir / "bad.jsonl", slurp(dir / "a.jsonl") + "\n{\"frame_id\": \n");
  std::string msg;
  EXPECT_EQ(code_of([&] { read_frames(dir / "bad.jsonl"); }, &msg), Errc::parse);
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(Frames, SchemaViolations) {
  TempDir dir;
  const std::vector<std::string> bad{
      R"({"rois":[],"narration_tokens":[],"token_embeddings":[]})",
      R"({"frame_id":"x","rois":[{"box":[0,0,1],"feature":[1]}],"narration_tokens":[],"token_embeddings":[]})",
      R"({"frame_id":"x","rois":[{"box":[5,0,1,1],"feature":[1]}],"narration_tokens":[],"token_embeddings":[]})",
      R"({"frame_id":"x","rois":[{"box":[0,0,1,1],"feature":["a"]}],"narration_tokens":[],"token_embeddings":[]})",
      R"({"frame_id":3,"rois":[],"narration_tokens":[],"token_embeddings":[]})",
  };
  for (const auto& line : bad) {
    write_text(dir / "s.jsonl", line + "\n");
    std::string msg;
    EXPECT_EQ(code_of([&] { read_frames(dir / "s.jsonl"); }, &msg), Errc::schema) << line;
    EXPECT_NE(msg.find("line 1"), std::string::npos) << msg;
  }
}

TEST(Frames, MissingFileIsIoError) {
  TempDir dir;
  EXPECT_EQ(code_of([&] { read_frames(dir / "absent.jsonl"); }), Errc::io);
}

TEST(Vocab, RoundTrip) {
  TempDir dir;
  TupleVocab v;
  v.tuples.push_back({0, "onion", "cut", ContextKind::verb, Vec64{0.5, -1}});
  v.tuples.push_back({1, "pan", "hot", ContextKind::adjective, Vec64{1e-9, 3}});
  write_vocab(dir / "v.jsonl", v);
  const TupleVocab back = read_vocab(dir / "v.jsonl");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t t = 0; t < 2; ++t) {
    EXPECT_EQ(back.tuples[t].tuple_id, v.tuples[t].tuple_id);
    EXPECT_EQ(back.tuples[t].noun, v.tuples[t].noun);
    EXPECT_EQ(back.tuples[t].context, v.tuples[t].context);
    EXPECT_EQ(back.tuples[t].context_kind, v.tuples[t].context_kind);
    EXPECT_EQ(back.tuples[t].base_embedding, v.tuples[t].base_embedding);
  }
}

TEST(PredsAndGts, RoundTrip) {
  TempDir dir;
  const std::vector<PredBox> p{{"a", 3, Box{0, 0, 1, 1}, 0.25}, {"b", 0, Box{1, 2, 3, 4}, 1.0 / 7.0}};
  const std::vector<GtBox> g{{"a", 3, Box{0, 0, 1, 1}}};
  write_preds(dir / "p.jsonl", p);
  write_gts(dir / "g.jsonl", g);
  EXPECT_EQ(read_preds(dir / "p.jsonl"), p);
  EXPECT_EQ(read_gts(dir / "g.jsonl"), g);
}

TEST(ModelConfigJson, RoundTrip) {
  const ModelConfig c = ModelConfig::with_defaults(12, 7, 9);
  EXPECT_EQ(model_config_from_json(to_json(c)), c);
}

TEST(Synthetic, DefaultVocabHasTwentyFourTuples) {
  const auto ds = generate_synthetic(small_config());
  EXPECT_EQ(ds.vocab.size(), 24u);
  EXPECT_NO_THROW(ds.vocab.validate());
  EXPECT_EQ(ds.train.size(), 30u);
  EXPECT_EQ(ds.test.size(), 10u);
  EXPECT_EQ(ds.test_gt.size(), 20u);
  EXPECT_TRUE(ds.shots.empty());
}

TEST(Synthetic, DeterministicForSeed) {
  const auto a = generate_synthetic(small_config(3));
  const auto b = generate_synthetic(small_config(3));
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.test_gt, b.test_gt);
  EXPECT_EQ(a.header, b.header);
  EXPECT_NE(a.train, generate_synthetic(small_config(4)).train);
}

TEST(Synthetic, NoiselessFeaturesDependOnlyOnTheTuple) {
  SyntheticConfig sc = small_config();
  sc.noise_sigma = 0.0;
  const auto ds = generate_synthetic(sc);
  std::map<std::int64_t, Vec64> feature_of;
  for (const auto& f : ds.test) {
    const auto& key = ds.answer_key.at(f.frame_id);
    ASSERT_EQ(key.size(), f.rois.size());
    for (std::size_t r = 0; r < f.rois.size(); ++r) {
      if (key[r] < 0) continue;
      auto [it, fresh] = feature_of.emplace(key[r], f.rois[r].feature);
      if (!fresh) {
        EXPECT_EQ(it->second, f.rois[r].feature);
      }
    }
  }
  EXPECT_GT(feature_of.size(), 5u);
}

TEST(Synthetic, NoiselessNounTokenEqualsTupleEmbedding) {
  SyntheticConfig sc = small_config();
  sc.noise_sigma = 0.0;
  const auto ds = generate_synthetic(sc);
  std::size_t checked = 0;
  for (const auto& f : ds.test) {
    const auto& key = ds.answer_key.at(f.frame_id);
    for (std::size_t r = 0; r < f.rois.size(); ++r) {
      if (key[r] < 0) continue;
      const auto tok = find_token_match(*f.rois[r].category, f.narration_tokens, true);
      ASSERT_TRUE(tok.has_value());
      const Vec64& expect = ds.vocab.tuples[static_cast<std::size_t>(key[r])].base_embedding;
      for (std::size_t i = 0; i < expect.dim(); ++i) EXPECT_NEAR(f.token_embeddings[*tok][i], expect[i], 1e-12);
      ++checked;
    }
  }
  EXPECT_EQ(checked, ds.test_gt.size());
}

TEST(Synthetic, AnswerKeyMatchesGroundTruth) {
  const auto ds = generate_synthetic(small_config());
  std::size_t i = 0;
  for (const auto& f : ds.test) {
    const auto& key = ds.answer_key.at(f.frame_id);
    for (std::size_t r = 0; r < f.rois.size(); ++r) {
      EXPECT_EQ(f.rois[r].is_background, key[r] < 0);
      if (key[r] < 0) continue;
      ASSERT_LT(i, ds.test_gt.size());
      EXPECT_EQ(ds.test_gt[i].tuple_id, key[r]);
      EXPECT_EQ(ds.test_gt[i].box, f.rois[r].box);
      ++i;
    }
  }
}

TEST(Synthetic, TrainerPreconditionHolds) {
  const auto ds = generate_synthetic(small_config());
  EXPECT_NO_THROW(Trainer(ds.train, ds.vocab, CobeModel::create(ModelConfig::with_defaults(8, 32, 32), 0), TrainConfig{}));
}

TEST(Synthetic, HoldoutPairsAppendTuplesAndShots) {
  SyntheticConfig sc = small_config();
  sc.holdout_pairs = default_holdout_pairs(4, sc.n_nouns, sc.n_contexts);
  const auto ds = generate_synthetic(sc);
  EXPECT_EQ(ds.vocab.size(), 28u);
  EXPECT_EQ(ds.holdout_tuple_ids, (std::vector<std::int64_t>{24, 25, 26, 27}));
  EXPECT_EQ(ds.shots.size(), 12u);
  EXPECT_EQ(ds.shots_gt.size(), 12u);
  EXPECT_EQ(ds.header["holdout_tuple_ids"], json(ds.holdout_tuple_ids));
  std::set<std::int64_t> train_tuples;
  for (const auto& f : ds.train)
    for (auto t : ds.answer_key.at(f.frame_id)) train_tuples.insert(t);
  for (auto h : ds.holdout_tuple_ids) EXPECT_FALSE(train_tuples.contains(h));
}

TEST(Synthetic, InvalidConfigs) {
  SyntheticConfig sc = small_config();
  sc.holdout_pairs = {{0, 1}};  // observed by default
  EXPECT_EQ(code_of([&] { generate_synthetic(sc); }), Errc::invalid_config);
  sc = small_config();
  sc.rois_per_frame = 20;
  EXPECT_EQ(code_of([&] { generate_synthetic(sc); }), Errc::invalid_config);
  sc = small_config();
  sc.observed_pairs = {{0, 1}, {0, 1}};
  EXPECT_EQ(code_of([&] { generate_synthetic(sc); }), Errc::invalid_config);
}

TEST(ZeroShotSplit, EmptyHoldoutKeepsVocab) {
  const auto ds = generate_synthetic(small_config());
  const ZeroShotSplit s = make_zero_shot_split(ds.vocab, {});
  EXPECT_EQ(s.train_vocab.size(), ds.vocab.size());
  EXPECT_TRUE(s.warnings.empty());
}

TEST(ZeroShotSplit, RemovesHoldoutAndRenumbers) {
  const auto ds = generate_synthetic(small_config());
  const ZeroShotSplit s = make_zero_shot_split(ds.vocab, {3, 10, 11});
  EXPECT_EQ(s.train_vocab.size(), ds.vocab.size() - 3);
  EXPECT_NO_THROW(s.train_vocab.validate());
  EXPECT_EQ(s.eval_vocab.size(), ds.vocab.size());
  for (std::size_t t = 0; t < s.train_vocab.size(); ++t) {
    const auto orig = s.train_to_eval_id[t];
    EXPECT_NE(orig, 3);
    EXPECT_NE(orig, 10);
    EXPECT_EQ(s.train_vocab.tuples[t].base_embedding, ds.vocab.tuples[static_cast<std::size_t>(orig)].base_embedding);
  }
  EXPECT_EQ(code_of([&] { make_zero_shot_split(ds.vocab, {99}); }), Errc::invalid_config);
}

TEST(ZeroShotSplit, CoverageAndWarnings) {
  const auto ds = generate_synthetic(small_config());
  // Tuples 0..2 are noun n0 with its three observed contexts.
  EXPECT_TRUE(compositional_coverage(ds.vocab, {0}));
  EXPECT_FALSE(compositional_coverage(ds.vocab, {0, 1, 2}));
  const ZeroShotSplit s = make_zero_shot_split(ds.vocab, {0, 1, 2});
  ASSERT_EQ(s.warnings.size(), 3u);
  EXPECT_NE(s.warnings[0].find(ds.vocab.tuples[0].noun), std::string::npos);
}
