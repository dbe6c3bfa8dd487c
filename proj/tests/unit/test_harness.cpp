#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "comvt/error.hpp"
#include "comvt/harness.hpp"

using namespace comvt;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.model.d_model = 8;
  c.model.heads = 2;
  c.model.text_layers = 1;
  c.model.candidate_layers = 1;
  c.model.ffn_multiplier = 2;
  c.model.fusion_depth = 1;
  c.model.d_scene = 6;
  c.model.d_object = 6;
  c.model.objects_per_frame = 2;
  c.model.max_words = 16;
  c.model.max_frames = 3;
  c.synthetic.frames = 3;
  c.synthetic.objects_per_frame = 2;
  c.synthetic.d_scene = 6;
  c.synthetic.d_object = 6;
  c.batch_size = 8;
  c.steps = 12;
  c.seed = 5;
  return c;
}

std::pair<std::vector<Sample>, std::vector<Sample>> data_for(const RunConfig& c, std::size_t train_n,
                                                             std::size_t eval_n) {
  SeededRng rng(c.seed);
  SeededRng d = rng.fork(7);
  auto all = samples_from(synth_generate(c.synthetic, train_n + eval_n, d));
  std::vector<Sample> eval(all.begin() + static_cast<std::ptrdiff_t>(train_n), all.end());
  all.resize(train_n);
  return {all, eval};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("comvt_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "comvt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write_json(const fs::path& path, const nlohmann::json& j) { std::ofstream(path) << j.dump(); }

}  // namespace

TEST(Recall, Examples) {
  const std::vector<double> one{0.4};
  EXPECT_EQ(recall_at_k(one, 0, 1), 1);
  const std::vector<double> a{0.2, 0.9, 0.5}, b{0.9, 0.2, 0.5};
  EXPECT_EQ(recall_at_k(a, 1, 1), 1);
  EXPECT_EQ(recall_at_k(a, 1, 5), 1);
  EXPECT_EQ(rank_of(b, 1), 3u);
  EXPECT_EQ(recall_at_k(b, 1, 1), 0);
  EXPECT_EQ(recall_at_k(b, 1, 2), 0);
  EXPECT_EQ(recall_at_k(b, 1, 3), 1);
  EXPECT_THROW(recall_at_k(b, 3, 1), ContractError);
  EXPECT_THROW(recall_at_k(b, 0, 0), ContractError);
}

TEST(Recall, TiesGoToTheLowerIndex) {
  const std::vector<double> s{1.0, 1.0, 1.0};
  EXPECT_EQ(rank_of(s, 0), 1u);
  EXPECT_EQ(rank_of(s, 2), 3u);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  RunConfig c = tiny_config();
  c.model.variant = Variant::single_stream;
  c.model.anchor = AnchorPolicy::parse("2");
  c.schedule.decay_factor = 0.9;
  c.synthetic.leak = true;
  c.eval_examples = "x/eval.jsonl";
  const nlohmann::json j = c;
  const RunConfig back = j.get<RunConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.model.variant, Variant::single_stream);
  EXPECT_EQ(back.model.anchor.resolve(3), 2u);

  nlohmann::json bad = j;
  bad["learning_rate"] = 0.1;
  EXPECT_THROW(bad.get<RunConfig>(), ConfigError);
  nlohmann::json bad_model = j;
  bad_model["model"]["layers"] = 3;
  EXPECT_THROW(bad_model.get<RunConfig>(), ConfigError);
  nlohmann::json bad_variant = j;
  bad_variant["model"]["variant"] = "early-fusion";
  EXPECT_THROW(bad_variant.get<RunConfig>(), ConfigError);

  const fs::path dir = scratch("config");
  write_json(dir / "c.json", {{"batch_size", 4}, {"model", {{"fusion_depth", 4}}}});
  const RunConfig loaded = load_run_config(dir / "c.json");
  EXPECT_EQ(loaded.batch_size, 4u);
  EXPECT_EQ(loaded.model.fusion_depth, 4u);
  EXPECT_EQ(loaded.model.d_model, ModelConfig{}.d_model);
  std::ofstream(dir / "broken.json") << "{";
  EXPECT_THROW(load_run_config(dir / "broken.json"), ConfigError);
}

TEST(Flops, TrmFormula) {
  // (2 + 6 + 2)·16 + 2·2·3·4 + 2·2·4·8
  EXPECT_EQ(trm_macs(2, 3, 4, 8), 160u + 48u + 128u);
}

TEST(Flops, TokenCountsAndDepth) {
  ModelConfig m;
  m.max_frames = 30;
  m.objects_per_frame = 4;
  m.fusion_depth = 0;
  const FlopsReport none = estimate_flops(m);
  EXPECT_EQ(none.with_compact.fusion, 0u);
  EXPECT_EQ(none.without_compact.fusion, 0u);
  EXPECT_EQ(none.with_compact.visual_tokens, 4u);
  EXPECT_EQ(none.without_compact.visual_tokens, 120u);

  m.fusion_depth = 2;
  const FlopsReport s2 = estimate_flops(m);
  m.fusion_depth = 4;
  const FlopsReport s4 = estimate_flops(m);
  EXPECT_GT(s2.reduction(), 0.0);
  EXPECT_GT(s4.reduction(), s2.reduction());
  EXPECT_LT(s2.with_compact.total(), s2.without_compact.total());

  // Fusion MACs of one block, both layouts, recomputed from the TRM formula.
  m.fusion_depth = 1;
  const std::uint64_t d = m.d_model, f = m.ffn_dim(), w = m.max_words;
  for (auto [layout, tokens] : {std::pair{estimate_flops(m).with_compact, 4ull},
                                std::pair{estimate_flops(m).without_compact, 120ull}}) {
    EXPECT_EQ(layout.fusion, trm_macs(tokens, w, d, f) + trm_macs(tokens, tokens, d, f) + trm_macs(w, tokens, d, f) +
                                 trm_macs(w, w, d, f));
  }
}

TEST(Flops, CompactAlwaysCheaperWithFusion) {
  for (std::size_t s : {1, 2, 4})
    for (std::size_t frames : {2, 5, 30}) {
      ModelConfig m;
      m.fusion_depth = s;
      m.max_frames = frames;
      const FlopsReport r = estimate_flops(m);
      EXPECT_LT(r.with_compact.total(), r.without_compact.total()) << s << " " << frames;
    }
}

TEST(Train, FirstLossesAreReproducible) {
  RunConfig c = tiny_config();
  auto [tr, ev] = data_for(c, 40, 0);
  const TrainResult a = train(c, tr, ev);
  const TrainResult b = train(c, tr, ev);
  ASSERT_EQ(a.report.total_loss.size(), 12u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(a.report.total_loss[i], b.report.total_loss[i]) << i;
  EXPECT_EQ(a.report.nup_loss, b.report.nup_loss);
  EXPECT_EQ(a.report.mlm_loss, b.report.mlm_loss);
  c.seed = 6;
  const TrainResult other = train(c, tr, ev);
  EXPECT_NE(other.report.total_loss, a.report.total_loss);
  for (std::size_t i = 0; i < 12; ++i)
    EXPECT_NEAR(a.report.total_loss[i], a.report.nup_loss[i] + a.report.mlm_loss[i], 1e-12);
}

TEST(Train, ZeroStepsWritesInitialCheckpointAndEvaluates) {
  RunConfig c = tiny_config();
  c.steps = 0;
  auto [tr, ev] = data_for(c, 20, 30);
  const fs::path dir = scratch("zero");
  TrainOptions options;
  options.out_dir = dir;
  const TrainResult r = train(c, tr, ev, options);
  ASSERT_EQ(r.report.evaluations.size(), 1u);
  EXPECT_EQ(r.report.evaluations[0].step, 0u);
  EXPECT_EQ(r.report.evaluations[0].examples, 30u);
  EXPECT_TRUE(r.report.total_loss.empty());
  for (const char* f : {"checkpoint.cmvt", "vocab.txt", "report.json", "config.json"}) EXPECT_TRUE(fs::exists(dir / f));
  EXPECT_EQ(load_run_config(dir / "config.json").seed, c.seed);
}

TEST(Train, PeriodicEvaluationAndMonotoneRecall) {
  RunConfig c = tiny_config();
  c.eval_every = 5;
  auto [tr, ev] = data_for(c, 40, 20);
  const TrainResult r = train(c, tr, ev);
  ASSERT_EQ(r.report.evaluations.size(), 3u);
  EXPECT_EQ(r.report.evaluations[0].step, 5u);
  EXPECT_EQ(r.report.evaluations[2].step, 12u);
  for (const auto& e : r.report.evaluations) EXPECT_LE(e.recall_at_1, e.recall_at_5);
  EXPECT_NO_THROW(r.report.validate());
  const nlohmann::json j = to_json(r.report);
  EXPECT_EQ(j["evaluations"].size(), 3u);
  EXPECT_TRUE(j.contains("flops"));
  EXPECT_TRUE(j.contains("config"));
}

TEST(Evaluate, IdempotentAndCheckpointRoundTripIsBitwise) {
  RunConfig c = tiny_config();
  auto [tr, ev] = data_for(c, 40, 25);
  const fs::path dir = scratch("roundtrip");
  TrainOptions options;
  options.out_dir = dir;
  const TrainResult r = train(c, tr, ev, options);
  std::vector<std::size_t> ranks;
  const Evaluation live = evaluate(*r.model, ev, &ranks);
  const Vocab vocab = Vocab::load(dir / "vocab.txt");
  const MetricReport first = evaluate(c, dir / "checkpoint.cmvt", vocab, ev, true);
  const MetricReport second = evaluate(c, dir / "checkpoint.cmvt", vocab, ev, true);
  EXPECT_EQ(to_json(first).dump(), to_json(second).dump());
  ASSERT_EQ(first.evaluations.size(), 1u);
  EXPECT_EQ(first.evaluations[0].recall_at_1, live.recall_at_1);
  EXPECT_EQ(first.evaluations[0].recall_at_5, live.recall_at_5);
  EXPECT_EQ(first.ranks, ranks);
  EXPECT_EQ(r.report.evaluations.back().recall_at_1, live.recall_at_1);

  RunConfig wider = c;
  wider.model.d_model = 12;
  EXPECT_THROW(evaluate(wider, dir / "checkpoint.cmvt", vocab, ev), FormatError);
}

TEST(Evaluate, UninformedModelScoresChance) {
  // Without the leak the transcript says nothing about the topic, and every
  // pool holds all ten topics: any text-only scorer hits 1/10 on average.
  RunConfig c = tiny_config();
  c.model.variant = Variant::text_only;
  auto [tr, ev] = data_for(c, 0, 2000);
  std::vector<Sample> vocab_source(ev.begin(), ev.begin() + 50);
  auto model = build_model(Variant::text_only, c.model, build_training_vocab(vocab_source, 1), 11);
  const Evaluation e = evaluate(*model, ev);
  EXPECT_EQ(e.examples, 2000u);
  EXPECT_NEAR(e.recall_at_1, 0.1, 0.02);
  EXPECT_NEAR(e.recall_at_5, 0.5, 0.06);
}

TEST(Samples, TextOnlyNeverOpensFeatureFiles) {
  const fs::path dir = scratch("textonly");
  FupExample ex;
  ex.clip_id = "k";
  ex.context = {{"stir the pot", 0, 6}};
  ex.future = "add salt";
  ex.features_path = "features/does_not_exist.jsonl";
  const std::vector<FupExample> exs{ex};
  write_examples(dir / "ex.jsonl", exs);
  const std::vector<CandidateRecord> recs{{"k", {{"add salt", "add sugar"}, 0}}};
  write_candidates(dir / "cand.jsonl", recs);
  const FeatureSchema schema{6, 6, 2, 3};
  const auto samples = load_samples(dir / "ex.jsonl", dir / "cand.jsonl", schema, false);
  ASSERT_EQ(samples.size(), 1u);
  EXPECT_FALSE(samples[0].clip.has_value());
  ASSERT_TRUE(samples[0].candidates.has_value());
  EXPECT_THROW(load_samples(dir / "ex.jsonl", dir / "cand.jsonl", schema, true), DataError);
}

TEST(Gradcheck, ToyModelAgreesWithFiniteDifferences) {
  RunConfig c = tiny_config();
  c.gradcheck_coordinates = 60;
  const GradcheckReport r = run_gradcheck(c, 3);
  EXPECT_LT(r.result.max_relative_error, 1e-4) << r.result.worst_parameter;
  EXPECT_GE(r.result.coordinates, 60u);
  EXPECT_EQ(r.tensors_sampled, r.parameter_tensors);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  const CliRun unknown = cli({"frobnicate"});
  EXPECT_EQ(unknown.code, kExitUsage);
  EXPECT_FALSE(unknown.err.empty());

  const CliRun flops = cli({"flops"});
  ASSERT_EQ(flops.code, kExitOk);
  const auto j = nlohmann::json::parse(flops.out);
  EXPECT_TRUE(j.contains("with_compact"));
  EXPECT_TRUE(j.contains("without_compact"));

  const fs::path dir = scratch("cli");
  write_json(dir / "bad.json", {{"no_such_field", 1}});
  EXPECT_EQ(cli({"flops", "--config", (dir / "bad.json").string()}).code, kExitUsage);
  EXPECT_EQ(cli({"segment", "--input", (dir / "missing.jsonl").string()}).code, kExitData);

  const std::vector<Transcript> t{{"vid", {{"a", 0, 3}, {"b", 3, 6}, {"c", 6, 12}, {"d", 12, 13}}}};
  write_transcripts(dir / "t.jsonl", t);
  const CliRun seg = cli({"segment", "--input", (dir / "t.jsonl").string(), "--out", (dir / "seg").string()});
  ASSERT_EQ(seg.code, kExitOk) << seg.err;
  EXPECT_EQ(nlohmann::json::parse(seg.out)["examples"], 2);
  EXPECT_EQ(read_examples(dir / "seg" / "examples.jsonl").size(), 2u);
}

TEST(Cli, GradcheckPassesAndFailsWithExitCodes) {
  const fs::path dir = scratch("cli_grad");
  RunConfig c = tiny_config();
  c.gradcheck_coordinates = 40;
  write_json(dir / "ok.json", c);
  const CliRun ok = cli({"gradcheck", "--config", (dir / "ok.json").string(), "--seed", "7"});
  ASSERT_EQ(ok.code, kExitOk) << ok.err << ok.out;
  EXPECT_TRUE(nlohmann::json::parse(ok.out)["pass"].get<bool>());

  // A step this coarse cannot resolve the curvature.
  c.gradcheck_step = 0.5;
  write_json(dir / "coarse.json", c);
  const CliRun bad = cli({"gradcheck", "--config", (dir / "coarse.json").string()});
  EXPECT_EQ(bad.code, kExitNumeric);
  EXPECT_FALSE(nlohmann::json::parse(bad.out)["pass"].get<bool>());
}

TEST(Cli, SynthTrainEvalThroughFiles) {
  const fs::path dir = scratch("cli_pipeline");
  RunConfig c = tiny_config();
  c.synthetic_train = 30;
  c.synthetic_eval = 12;
  c.steps = 3;
  write_json(dir / "synth.json", c);
  ASSERT_EQ(cli({"synth", "--config", (dir / "synth.json").string(), "--out", (dir / "data").string()}).code,
            kExitOk);
  EXPECT_EQ(read_examples(dir / "data" / "train_examples.jsonl").size(), 30u);

  c.train_examples = (dir / "data" / "train_examples.jsonl").string();
  c.eval_examples = (dir / "data" / "eval_examples.jsonl").string();
  c.eval_candidates = (dir / "data" / "eval_candidates.jsonl").string();
  write_json(dir / "train.json", c);
  const CliRun tr = cli({"train", "--config", (dir / "train.json").string(), "--out", (dir / "run").string()});
  ASSERT_EQ(tr.code, kExitOk) << tr.err;
  const auto summary = nlohmann::json::parse(tr.out);
  EXPECT_EQ(summary["steps"], 3);

  const CliRun ev = cli({"eval", "--config", (dir / "train.json").string(), "--checkpoint",
                         (dir / "run" / "checkpoint.cmvt").string(), "--vocab", (dir / "run" / "vocab.txt").string(),
                         "--out", (dir / "evalout").string()});
  ASSERT_EQ(ev.code, kExitOk) << ev.err;
  const auto report = nlohmann::json::parse(ev.out);
  EXPECT_EQ(report["evaluations"][0]["recall_at_1"], summary["recall_at_1"]);
  EXPECT_TRUE(fs::exists(dir / "evalout" / "eval_report.json"));

  EXPECT_EQ(cli({"eval", "--config", (dir / "train.json").string(), "--checkpoint", (dir / "nope.cmvt").string(),
                 "--vocab", (dir / "run" / "vocab.txt").string()})
                .code,
            kExitData);
}
