#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "comvt/data.hpp"
#include "comvt/error.hpp"

using namespace comvt;

namespace {

Transcript hand_transcript() {
  return {"vid", {{"a", 0, 3}, {"b", 3, 6}, {"c", 6, 12}, {"d", 12, 13}}};
}

std::vector<std::string> texts(const std::vector<TimedSentence>& s) {
  std::vector<std::string> out;
  for (const auto& x : s) out.push_back(x.text);
  return out;
}

std::filesystem::path temp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(Segment, HandTrace) {
  const auto ex = segment_clips(hand_transcript());
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].future, "c");
  EXPECT_EQ(texts(ex[0].context), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(ex[1].future, "d");
  EXPECT_EQ(texts(ex[1].context), (std::vector<std::string>{"c"}));
  EXPECT_DOUBLE_EQ(ex[1].start_s, 6.0);
  EXPECT_DOUBLE_EQ(ex[1].end_s, 12.0);
}

TEST(Segment, ShortPrefixesCanBeKept) {
  SegmentOptions keep;
  keep.keep_short_prefix = true;
  const auto ex = segment_clips(hand_transcript(), keep);
  ASSERT_EQ(ex.size(), 3u);
  EXPECT_EQ(ex[0].future, "b");
  EXPECT_EQ(texts(ex[0].context), std::vector<std::string>{"a"});
}

TEST(Segment, ExactlyFiveSecondsKeepsExpanding) {
  Transcript t{"v", {{"a", 0, 1}, {"b", 1, 6}, {"c", 6, 7}}};
  const auto ex = segment_clips(t);
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].future, "c");
  EXPECT_EQ(texts(ex[0].context), (std::vector<std::string>{"a", "b"}));
}

TEST(Segment, DegenerateTranscripts) {
  EXPECT_TRUE(segment_clips(Transcript{"v", {}}).empty());
  EXPECT_TRUE(segment_clips(Transcript{"v", {{"only", 0, 30}}}).empty());
  EXPECT_THROW(segment_clips(Transcript{"v", {{"a", 0, 5}, {"b", 4, 9}}}), DataError);
}

TEST(Segment, RandomTranscriptsKeepBookkeeping) {
  SeededRng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    Transcript t{"v" + std::to_string(trial), {}};
    const std::size_t n = 1 + rng.uniform_index(12);
    double clock = 0;
    for (std::size_t i = 0; i < n; ++i) {
      clock += rng.uniform() < 0.3 ? 0.0 : 2 * rng.uniform();
      const double len = 0.2 + 4 * rng.uniform();
      t.sentences.push_back({"s" + std::to_string(i), clock, clock + len});
      clock += len;
    }
    const auto ex = segment_clips(t);
    EXPECT_EQ(segment_clips(t).size(), ex.size());
    for (const auto& e : ex) {
      ASSERT_FALSE(e.context.empty());
      // The future is the sentence right after the last context sentence.
      const std::size_t last = std::stoul(e.context.back().text.substr(1));
      EXPECT_EQ(e.future, "s" + std::to_string(last + 1));
      EXPECT_GT(e.context.back().end_s - e.context.front().start_s, 5.0);
      // Minimal: dropping the earliest sentence would fall to 5 s or less.
      if (e.context.size() > 1) EXPECT_LE(e.context.back().end_s - e.context[1].start_s, 5.0);
      for (std::size_t k = 1; k < e.context.size(); ++k)
        EXPECT_EQ(std::stoul(e.context[k].text.substr(1)), std::stoul(e.context[k - 1].text.substr(1)) + 1);
    }
  }
}

TEST(Nsp, StepAtStartIsSkippedAndClassesKept) {
  const Transcript t = hand_transcript();
  const StepAnnotation steps[] = {{4, 0.0, 2.0}, {7, 12.0, 13.0}, {9, 13.0, 20.0}};
  const auto ex = make_nsp_examples(t, steps);
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].step_class, 7u);
  // Ends before t=12: sentence c; span 6 s > 5 s so the context is just c.
  EXPECT_EQ(texts(ex[0].context), std::vector<std::string>{"c"});
  EXPECT_EQ(ex[1].step_class, 9u);
  // Ends by t=13: sentence d (1 s) grows back to c (7 s).
  EXPECT_EQ(texts(ex[1].context), (std::vector<std::string>{"c", "d"}));
  EXPECT_DOUBLE_EQ(ex[1].start_s, 6.0);
}

TEST(Nsp, CraftedThreeStepSpans) {
  const Transcript t{"v", {{"a", 0, 2}, {"b", 2, 4}, {"c", 4, 5}, {"d", 5, 9}, {"e", 10, 11}}};
  const StepAnnotation steps[] = {{1, 4.5, 6}, {2, 9.5, 10}, {3, 11, 12}};
  const auto ex = make_nsp_examples(t, steps);
  ASSERT_EQ(ex.size(), 3u);
  // Step 1 starts at 4.5: only a and b have ended; the whole prefix (4 s) is kept.
  EXPECT_EQ(texts(ex[0].context), (std::vector<std::string>{"a", "b"}));
  // Step 2 at 9.5: last sentence d; d alone spans 4 s, c+d spans 5 s, b+c+d spans 7 s.
  EXPECT_EQ(texts(ex[1].context), (std::vector<std::string>{"b", "c", "d"}));
  EXPECT_DOUBLE_EQ(ex[1].start_s, 2.0);
  EXPECT_DOUBLE_EQ(ex[1].end_s, 9.0);
  // Step 3 at 11: last sentence e; e..d spans 6 s.
  EXPECT_EQ(texts(ex[2].context), (std::vector<std::string>{"d", "e"}));
}

TEST(Candidates, SingleCandidateIsTheTruth) {
  SeededRng rng(1);
  const std::vector<std::string> pool{"x", "y"};
  const CandidateSet c = sample_candidates("t", pool, 1, rng);
  EXPECT_EQ(c.utterances, std::vector<std::string>{"t"});
  EXPECT_EQ(c.true_index, 0u);
}

TEST(Candidates, ExhaustsASmallPool) {
  SeededRng rng(2);
  const std::vector<std::string> pool{"x", "t", "y", "z", "x"};
  const CandidateSet c = sample_candidates("t", pool, 4, rng);
  EXPECT_NO_THROW(c.validate());
  std::multiset<std::string> got(c.utterances.begin(), c.utterances.end());
  EXPECT_EQ(got, (std::multiset<std::string>{"t", "x", "y", "z"}));
  EXPECT_EQ(c.utterances[c.true_index], "t");
}

TEST(Candidates, ShortfallIsNamed) {
  SeededRng rng(3);
  const std::vector<std::string> pool{"x", "y"};
  try {
    sample_candidates("t", pool, 5, rng);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos) << e.what();
  }
}

TEST(Candidates, TruthPositionIsUniformAndSeeded) {
  std::vector<std::string> pool;
  for (int i = 0; i < 300; ++i) pool.push_back("u" + std::to_string(i));
  SeededRng a(4), b(4);
  std::vector<int> hist(100, 0);
  for (int trial = 0; trial < 4000; ++trial) {
    const CandidateSet c = sample_candidates("truth", pool, 100, a);
    EXPECT_EQ(c.utterances, sample_candidates("truth", pool, 100, b).utterances);
    ASSERT_EQ(std::set<std::string>(c.utterances.begin(), c.utterances.end()).size(), 100u);
    ++hist[c.true_index / 10 * 10];
  }
  // Ten buckets of ~400; a 5-sigma band for Binomial(4000, 0.1).
  for (int k = 0; k < 100; k += 10) EXPECT_NEAR(hist[k], 400, 95) << k;
}

TEST(Subsample, RoundingAndDeterminism) {
  SeededRng a(5), b(5);
  const auto first = subsample_indices(100, 0.06, a);
  EXPECT_EQ(first.size(), 6u);
  EXPECT_TRUE(std::is_sorted(first.begin(), first.end()));
  EXPECT_EQ(first, subsample_indices(100, 0.06, b));
  SeededRng c(6);
  const auto all = subsample_indices(17, 1.0, c);
  EXPECT_EQ(all.size(), 17u);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  EXPECT_THROW(subsample_indices(10, 0.0, c), ContractError);
  const std::vector<int> items{1, 2, 3, 4};
  SeededRng d(7);
  EXPECT_EQ(subsample_eval<int>(items, 1.0, d), items);
}

TEST(Truncate, KeepsTheLastTokensAndFrames) {
  std::vector<TokenId> body;
  for (int i = 0; i < 200; ++i) body.push_back(5 + i);
  ClipFeatures clip;
  for (std::size_t i = 1; i <= 45; ++i) {
    clip.scenes.push_back({i, {double(i)}, i});
    clip.objects.push_back({ObjectFeature{i, 1, Box{}, {0.0}}});
  }
  const TruncatedInputs out = truncate_inputs(body, clip);
  ASSERT_EQ(out.tokens.real_length(), 128u);
  EXPECT_EQ(out.tokens.ids.front(), kClsId);
  EXPECT_EQ(out.tokens.ids[127], kSepId);
  EXPECT_EQ(out.tokens.ids[1], 5 + 74);
  EXPECT_EQ(out.tokens.ids[126], 5 + 199);
  ASSERT_EQ(out.clip.frames(), 30u);
  EXPECT_EQ(out.clip.scenes.front().source_frame, 16u);
  EXPECT_EQ(out.clip.scenes.back().source_frame, 45u);
  EXPECT_EQ(out.clip.objects.front().front().frame, 1u);

  const std::vector<TokenId> short_body{7, 8};
  const TruncatedInputs small = truncate_inputs(short_body, truncate_frames(clip, 3));
  EXPECT_EQ(small.tokens.real_length(), 4u);
  EXPECT_EQ(small.clip.frames(), 3u);
}

TEST(Synth, NoiselessFeaturesIdentifyTheTopic) {
  SyntheticSpec spec;
  spec.noise = 0.0;
  spec.d_scene = spec.d_object = 8;
  SeededRng rng(8);
  const SyntheticDataset data = synth_generate(spec, 200, rng);
  std::map<std::size_t, std::vector<double>> scene_of;
  for (const auto& item : data.items) {
    auto [it, inserted] = scene_of.emplace(item.topic, item.clip.scenes[0].values);
    EXPECT_EQ(it->second, item.clip.scenes.back().values);
    EXPECT_EQ(it->second, item.clip.scenes[0].values);
    EXPECT_EQ(item.example.future, topic_utterance(data.topic_words[item.topic]));
    EXPECT_EQ(item.candidates.utterances[item.candidates.true_index], item.example.future);
    EXPECT_EQ(item.candidates.size(), spec.candidates);
  }
  // Distinct topics never share a feature vector.
  std::set<std::vector<double>> distinct;
  for (const auto& [topic, v] : scene_of) distinct.insert(v);
  EXPECT_EQ(distinct.size(), scene_of.size());
}

TEST(Synth, TranscriptsCarryNoTopicWithoutLeak) {
  SyntheticSpec a, b;
  b.topics = 5;
  b.candidates = 5;
  SeededRng ra(9), rb(9);
  const auto da = synth_generate(a, 300, ra), db = synth_generate(b, 300, rb);
  std::size_t topic_differs = 0;
  for (std::size_t i = 0; i < 300; ++i) {
    // Same text stream under a different topic stream: transcripts do not move.
    EXPECT_EQ(da.items[i].example.transcript_text(), db.items[i].example.transcript_text());
    topic_differs += da.items[i].topic != db.items[i].topic;
    for (const auto& w : da.topic_words)
      EXPECT_EQ(da.items[i].example.transcript_text().find(" " + w), std::string::npos);
  }
  EXPECT_GT(topic_differs, 100u);

  a.leak = true;
  SeededRng rc(9);
  const auto leaked = synth_generate(a, 20, rc);
  for (const auto& item : leaked.items)
    EXPECT_NE(item.example.transcript_text().find(leaked.topic_words[item.topic]), std::string::npos);
}

TEST(Synth, RejectsBadSpecs) {
  SyntheticSpec s;
  s.candidates = 11;
  SeededRng rng(10);
  EXPECT_THROW(synth_generate(s, 1, rng), ConfigError);
}

TEST(Files, JsonLinesRoundTrip) {
  const std::vector<Transcript> transcripts{hand_transcript(), {"w\"2", {{"héllo", 0.25, 1.5}}}};
  write_transcripts(temp("comvt_tr.jsonl"), transcripts);
  const auto tr = read_transcripts(temp("comvt_tr.jsonl"));
  ASSERT_EQ(tr.size(), 2u);
  EXPECT_EQ(tr[1].video_id, "w\"2");
  EXPECT_EQ(tr[1].sentences[0].text, "héllo");
  EXPECT_EQ(tr[0].sentences[2].end_s, 12.0);

  auto examples = segment_clips(hand_transcript());
  examples[0].features_path = "features/vid.jsonl";
  write_examples(temp("comvt_ex.jsonl"), examples);
  const auto ex = read_examples(temp("comvt_ex.jsonl"));
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].future, "c");
  EXPECT_EQ(ex[0].features_path, "features/vid.jsonl");
  EXPECT_EQ(texts(ex[0].context), (std::vector<std::string>{"a", "b"}));

  const std::vector<CandidateRecord> recs{{"vid", {{"p", "q", "r"}, 2}}};
  write_candidates(temp("comvt_cand.jsonl"), recs);
  const auto back = read_candidates(temp("comvt_cand.jsonl"));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].candidates.utterances, recs[0].candidates.utterances);
  EXPECT_EQ(back[0].candidates.true_index, 2u);

  for (const char* f : {"comvt_tr.jsonl", "comvt_ex.jsonl", "comvt_cand.jsonl"}) std::filesystem::remove(temp(f));
}

TEST(Files, ErrorsNameTheLine) {
  {
    std::ofstream out(temp("comvt_bad.jsonl"));
    out << R"({"video_id":"v","sentences":[]})" << "\n" << "{oops\n";
  }
  try {
    read_transcripts(temp("comvt_bad.jsonl"));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  std::filesystem::remove(temp("comvt_bad.jsonl"));
  EXPECT_THROW(read_examples(temp("comvt_missing.jsonl")), DataError);
}
