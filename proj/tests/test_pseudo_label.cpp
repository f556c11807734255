#include <gtest/gtest.h>

#include "cobe/pseudo_label.hpp"
#include "support.hpp"

using namespace cobe;
using cobe::testing::det;
using cobe::testing::kept_boxes;
using cobe::testing::pseudo_fixture;
using cobe::testing::pseudo_fixture_expected;
using cobe::testing::pseudo_fixture_oracle;
using cobe::testing::TempDir;
using cobe::testing::write_text;

namespace {

PseudoLabelConfig cfg(double tau = 0.5, std::int64_t min_count = 1, bool plural = true) {
  return {tau, min_count, plural};
}

bool match(const std::string& cat, const std::string& narration, bool plural = true) {
  const auto toks = tokenize(narration);
  return token_match(cat, toks, plural);
}

}  // namespace

TEST(Tokenize, SplitsOnWhitespaceAndPunctuation) {
  EXPECT_EQ(tokenize("Cut the onion, then stir-fry it!"),
            (std::vector<std::string>{"Cut", "the", "onion", "then", "stir-fry", "it"}));
  EXPECT_EQ(tokenize("don't  stop"), (std::vector<std::string>{"don't", "stop"}));
  EXPECT_TRUE(tokenize("  ...  ").empty());
}

TEST(TokenMatch, WholeTokensOnly) {
  EXPECT_TRUE(match("frying pan", "heat the frying pan"));
  EXPECT_FALSE(match("pan", "make pancakes"));
  EXPECT_FALSE(match("frying pan", "heat the pan then start frying"));
  EXPECT_TRUE(match("pan", "heat the frying pan"));
}

TEST(TokenMatch, PluralStripping) {
  EXPECT_TRUE(match("tomato", "wash the tomatoes"));
  EXPECT_TRUE(match("onion", "peel onions"));
  EXPECT_TRUE(match("tomatoes", "one tomato"));
  EXPECT_FALSE(match("tomato", "wash the tomatoes", false));
  EXPECT_FALSE(match("knife", "the knives"));
}

TEST(TokenMatch, CaseInsensitive) {
  EXPECT_TRUE(match("Tomato", "slice the TOMATO"));
  EXPECT_TRUE(match("frying pan", "Frying Pan"));
}

TEST(FilterFrame, ScoreAndNarrationBothRequired) {
  const std::vector<Detection> d{det("onion", 0.9, 0), det("board", 0.4, 20), det("knife", 0.8, 40)};
  const auto toks = tokenize("cut the onion on the board");
  const auto out = filter_frame(d, toks, cfg());
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], d[0]);
  EXPECT_EQ(filter_frame(d, toks, cfg(0.3)).size(), 2u);
}

TEST(FilterFrame, ThresholdIsInclusive) {
  const std::vector<Detection> d{det("onion", 0.5, 0)};
  const auto toks = tokenize("onion");
  EXPECT_EQ(filter_frame(d, toks, cfg(0.5)).size(), 1u);
  EXPECT_TRUE(filter_frame(d, toks, cfg(0.5000001)).empty());
}

TEST(BuildDataset, EverythingBelowThresholdGivesEmptyDataset) {
  const auto raw = pseudo_fixture();
  const PseudoDataset ds = build_dataset(raw, cfg(0.999));
  EXPECT_TRUE(ds.frames.empty());
  EXPECT_TRUE(ds.class_counts.empty());
  EXPECT_EQ(ds.stats.frames_in, 10);
  EXPECT_EQ(ds.stats.boxes_kept, 0);
}

TEST(BuildDataset, SparseClassesArePruned) {
  std::vector<RawFrame> raw;
  for (int i = 0; i < 3; ++i) {
    RawFrame f;
    f.frame_id = "r" + std::to_string(i);
    f.narration_tokens = {"onion"};
    f.token_embeddings = {Vec64{1.0}};
    f.detections = {det("onion", 0.9, 0)};
    raw.push_back(f);
  }
  EXPECT_TRUE(build_dataset(raw, cfg(0.5, 5)).frames.empty());
  const PseudoDataset ds = build_dataset(raw, cfg(0.5, 3));
  EXPECT_EQ(ds.frames.size(), 3u);
  EXPECT_EQ(ds.class_counts.at("onion"), 3);
}

TEST(BuildDataset, FixtureMatchesHandFilteredResult) {
  const auto raw = pseudo_fixture();
  const PseudoDataset ds = build_dataset(raw, cfg(0.5, 2));
  EXPECT_EQ(kept_boxes(ds), pseudo_fixture_expected());
  EXPECT_EQ(ds.stats.boxes_in, 16);
  EXPECT_EQ(ds.stats.boxes_kept, 6);
  EXPECT_EQ(ds.stats.frames_kept, 6);
  EXPECT_EQ(ds.frames.size(), 6u);
  EXPECT_EQ(ds.class_counts, (std::map<std::string, std::int64_t>{{"onion", 2}, {"pan", 2}, {"tomato", 2}}));
}

TEST(BuildDataset, KeptFramesCarryNarrationAndFeatures) {
  const auto raw = pseudo_fixture();
  const PseudoDataset ds = build_dataset(raw, cfg(0.5, 2));
  for (const auto& f : ds.frames) {
    const auto src = std::find_if(raw.begin(), raw.end(), [&](const RawFrame& r) { return r.frame_id == f.frame_id; });
    ASSERT_NE(src, raw.end());
    EXPECT_EQ(f.narration_tokens, src->narration_tokens);
    EXPECT_EQ(f.token_embeddings, src->token_embeddings);
    for (const auto& r : f.rois) EXPECT_EQ(r.feature, (Vec64{r.roi_score, r.box.x1}));
  }
}

TEST(BuildDataset, ThresholdSweepMatchesOracle) {
  const auto raw = pseudo_fixture();
  for (std::int64_t min_count : {1, 2, 3})
    for (int i = 0; i <= 20; ++i) {
      const double tau = i / 20.0;
      EXPECT_EQ(kept_boxes(build_dataset(raw, cfg(tau, min_count))), pseudo_fixture_oracle(tau, min_count))
          << "tau " << tau << " min_count " << min_count;
    }
}

TEST(BuildDataset, RaisingThresholdNeverAddsBoxes) {
  const auto raw = pseudo_fixture();
  auto prev = kept_boxes(build_dataset(raw, cfg(0.0)));
  for (int i = 1; i <= 20; ++i) {
    const auto cur = kept_boxes(build_dataset(raw, cfg(i / 20.0)));
    EXPECT_TRUE(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
    prev = cur;
  }
}

TEST(BuildDataset, IsIdempotent) {
  const auto raw = pseudo_fixture();
  const PseudoDataset once = build_dataset(raw, cfg(0.5, 2));
  std::vector<RawFrame> again;
  for (const auto& f : once.frames) {
    RawFrame r;
    r.frame_id = f.frame_id;
    r.narration_tokens = f.narration_tokens;
    r.token_embeddings = f.token_embeddings;
    for (const auto& roi : f.rois) r.detections.push_back({roi.box, roi.roi_score, *roi.category, roi.feature});
    again.push_back(r);
  }
  EXPECT_EQ(build_dataset(again, cfg(0.5, 2)).frames, once.frames);
}

TEST(BuildDataset, MalformedRecordsAreCountedAndSkipped) {
  auto raw = pseudo_fixture();
  raw[0].detections[0].box = Box{5, 5, 5, 9};
  raw[1].detections[0].score = 1.5;
  raw[7].detections[0].feature.reset();
  const PseudoDataset ds = build_dataset(raw, cfg(0.5, 1));
  EXPECT_EQ(ds.stats.records_rejected, 3);
  ASSERT_EQ(ds.stats.errors.size(), 3u);
  EXPECT_NE(ds.stats.errors[0].find("record 0"), std::string::npos);
  for (const auto& f : ds.frames) {
    EXPECT_NE(f.frame_id, "f01");
    EXPECT_NE(f.frame_id, "f08");
  }
}

TEST(BuildDataset, StatsOnlyNeedsNoFeatures) {
  auto raw = pseudo_fixture();
  for (auto& f : raw) {
    f.token_embeddings.clear();
    for (auto& d : f.detections) d.feature.reset();
  }
  const PseudoDataset ds = build_dataset(raw, cfg(0.5, 2), true);
  EXPECT_TRUE(ds.frames.empty());
  EXPECT_EQ(ds.stats.records_rejected, 0);
  EXPECT_EQ(ds.stats.boxes_kept, 6);
  EXPECT_EQ(ds.stats.frames_kept, 6);
}

TEST(BuildDataset, InvalidConfigIsRejected) {
  const auto raw = pseudo_fixture();
  EXPECT_THROW(build_dataset(raw, cfg(1.5)), Error);
  EXPECT_THROW(build_dataset(raw, cfg(0.5, 0)), Error);
}

TEST(BuildDatasetFromJsonl, ParsesRawLayoutAndReportsBadLines) {
  TempDir dir;
  write_text(dir / "raw.jsonl",
             R"({"frame_id":"a","narration":"Cut the onions.","token_embeddings":[[1],[2],[3]],)"
             R"("detections":[{"box":[0,0,4,4],"score":0.8,"category":"onion","feature":[0.5,1]}],)"
             R"("background":[{"box":[5,5,9,9],"feature":[0,0]}]})"
             "\n\n{not json\n"
             R"({"frame_id":"b","narration":"x"})"
             "\n");
  const PseudoDataset ds = build_dataset_from_jsonl(dir / "raw.jsonl", cfg(0.5, 1));
  EXPECT_EQ(ds.stats.frames_in, 3);
  EXPECT_EQ(ds.stats.records_rejected, 2);
  ASSERT_GE(ds.stats.errors.size(), 2u);
  EXPECT_NE(ds.stats.errors[0].find("line 3"), std::string::npos);
  EXPECT_NE(ds.stats.errors[1].find("line 4"), std::string::npos);
  ASSERT_EQ(ds.frames.size(), 1u);
  const FrameRecord& f = ds.frames[0];
  EXPECT_EQ(f.narration_tokens, (std::vector<std::string>{"Cut", "the", "onions"}));
  ASSERT_EQ(f.rois.size(), 2u);
  EXPECT_EQ(f.rois[0].category, "onion");
  EXPECT_EQ(f.rois[0].roi_score, 0.8);
  EXPECT_TRUE(f.rois[1].is_background);

  const json stats = stats_to_json(ds);
  EXPECT_EQ(stats["boxes_kept"], 1);
  EXPECT_EQ(stats["class_counts"]["onion"], 1);
}

TEST(BuildDatasetFromJsonl, FrameLayoutRoundTrips) {
  TempDir dir;
  const auto raw = pseudo_fixture();
  const PseudoDataset once = build_dataset(raw, cfg(0.5, 2));
  write_frames(dir / "kept.jsonl", once.frames);
  EXPECT_EQ(build_dataset_from_jsonl(dir / "kept.jsonl", cfg(0.5, 2)).frames, once.frames);
}

TEST(BuildDatasetFromJsonl, MissingFileIsIoError) {
  TempDir dir;
  try {
    build_dataset_from_jsonl(dir / "nope.jsonl", cfg());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::io);
  }
}
