#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "comvt/checkpoint.hpp"
#include "comvt/error.hpp"
#include "comvt/model.hpp"
#include "reference.hpp"

using namespace comvt;

namespace {

Tensor randn(std::size_t r, std::size_t c, SeededRng& rng) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.normal();
  return Tensor::matrix(r, c, v);
}

void zero(const Tensor& t) {
  Tensor h = t;
  for (double& v : h.mutable_data()) v = 0.0;
}

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.text_layers = 1;
  c.candidate_layers = 1;
  c.ffn_multiplier = 2;
  c.fusion_depth = 1;
  c.d_scene = 3;
  c.d_object = 4;
  c.objects_per_frame = 2;
  c.max_words = 16;
  c.max_frames = 5;
  return c;
}

Vocab small_vocab() {
  const std::vector<std::string> corpus{"add the flour then stir", "pour water into the bowl", "mix well"};
  return build_vocab(corpus);
}

ClipFeatures clip_for(const ModelConfig& c, std::size_t frames, SeededRng& rng) {
  ClipFeatures clip;
  clip.clip_id = "x";
  for (std::size_t i = 1; i <= frames; ++i) {
    SceneFeature s{i, {}, i};
    for (std::size_t k = 0; k < c.d_scene; ++k) s.values.push_back(rng.normal());
    std::vector<ObjectFeature> row;
    for (std::size_t j = 1; j <= c.objects_per_frame; ++j) {
      ObjectFeature o{i, j, Box{0.1, 0.2, 0.6, 0.9}, {}};
      for (std::size_t k = 0; k < c.d_object; ++k) o.values.push_back(rng.normal());
      row.push_back(o);
    }
    clip.scenes.push_back(s);
    clip.objects.push_back(row);
  }
  return clip;
}

}  // namespace

TEST(NupScores, SingleCandidateIsCertain) {
  SeededRng rng(1);
  Tensor p = nup_scores(randn(1, 6, rng), randn(1, 6, rng));
  EXPECT_EQ(p.to_vector(), std::vector<double>{1.0});
}

TEST(NupScores, IdenticalCandidatesAreUniform) {
  ParamStore store;
  SeededRng rng(2);
  const Vocab vocab = small_vocab();
  TextEncoder enc(store, "candidate_encoder", TextEncoderConfig{vocab.size(), 8, 2, 1, 16, 16}, rng);
  const std::vector<std::string> same(5, "stir the flour");
  Tensor p = nup_scores(randn(1, 8, rng), encode_candidates(same, vocab, enc));
  for (double v : p.data()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(NupScores, LogDotsGiveProportionalProbabilities) {
  // e = [1, 0], candidates with first coordinate ln 1, ln 2, ln 3.
  Tensor e = Tensor::matrix({{1.0, 0.0}});
  Tensor u = Tensor::matrix({{0.0, 5.0}, {std::log(2.0), -1.0}, {std::log(3.0), 2.0}});
  Tensor p = nup_scores(e, u);
  EXPECT_NEAR(p[0], 1.0 / 6, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 6, 1e-15);
  EXPECT_NEAR(p[2], 3.0 / 6, 1e-15);
}

TEST(NupScores, ProbabilityVectorShiftInvariantAndMonotone) {
  SeededRng rng(3);
  for (std::size_t m = 1; m <= 40; m += 3) {
    Tensor e = randn(1, 6, rng), u = randn(m, 6, rng);
    Tensor p = nup_scores(e, u);
    Tensor dots = nup_logits(e, u);
    double s = 0;
    for (double v : p.data()) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    const auto pd = p.data(), dd = dots.data();
    EXPECT_EQ(std::max_element(pd.begin(), pd.end()) - pd.begin(),
              std::max_element(dd.begin(), dd.end()) - dd.begin());
    // A constant added to every dot: extend e with a 1 and candidates with a shared 2.5.
    std::vector<double> ev(e.data().begin(), e.data().end()), uv;
    ev.push_back(1.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t c = 0; c < 6; ++c) uv.push_back(u.at(i, c));
      uv.push_back(2.5);
    }
    Tensor shifted = nup_scores(Tensor::row(ev), Tensor::matrix(m, 7, uv));
    for (std::size_t i = 0; i < m; ++i) EXPECT_NEAR(shifted[i], p[i], 1e-12);
  }
}

TEST(NupScores, RejectsEmptyAndMismatchedInputs) {
  SeededRng rng(4);
  EXPECT_THROW(nup_scores(randn(1, 4, rng), Tensor::zeros({0, 4})), ContractError);
  EXPECT_THROW(nup_scores(randn(1, 4, rng), randn(3, 5, rng)), ContractError);
}

TEST(NupLoss, Examples) {
  EXPECT_EQ(nup_loss(Tensor::row({1.0}), 0).item(), 0.0);
  EXPECT_NEAR(nup_loss(Tensor::row({0.25, 0.25, 0.25, 0.25}), 2).item(), std::log(4.0), 1e-15);
  EXPECT_THROW(nup_loss(Tensor::row({0.5, 0.5}), 2), ContractError);
}

TEST(NupLoss, ClampsVanishingProbability) {
  std::size_t clamps = 0;
  Tensor loss = nup_loss(Tensor::row({1.0, 0.0}), 1, &clamps);
  EXPECT_EQ(clamps, 1u);
  EXPECT_NEAR(loss.item(), -std::log(1e-30), 1e-9);
  nup_loss(Tensor::row({0.5, 0.5}), 1, &clamps);
  EXPECT_EQ(clamps, 1u);
}

TEST(InBatchNup, MatchesBruteForceMatrix) {
  SeededRng rng(5);
  for (std::size_t b = 1; b <= 8; ++b) {
    Tensor e = randn(b, 5, rng), u = randn(b, 5, rng);
    std::vector<std::size_t> targets(b);
    std::iota(targets.begin(), targets.end(), 0);
    double expect = 0;
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<double> row(b);
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t c = 0; c < 5; ++c) row[j] += e.at(i, c) * u.at(j, c);
      double z = 0;
      for (double v : row) z += std::exp(v);
      expect += -(row[i] - std::log(z));
    }
    expect /= static_cast<double>(b);
    EXPECT_NEAR(in_batch_nup_loss(e, u, targets).item(), expect, 1e-12) << b;
  }
}

TEST(InBatchNup, DuplicateFuturesShareOneCandidate) {
  const std::vector<std::string> futures{"a b", "c", "a b", "d"};
  auto [pool, index] = in_batch_pool(futures);
  EXPECT_EQ(pool, (std::vector<std::string>{"a b", "c", "d"}));
  EXPECT_EQ(index, (std::vector<std::size_t>{0, 1, 0, 2}));
}

TEST(CandidateSet, Validation) {
  EXPECT_THROW((CandidateSet{{}, 0}).validate(), ContractError);
  EXPECT_THROW((CandidateSet{{"a", "b"}, 2}).validate(), ContractError);
  EXPECT_THROW((CandidateSet{{"a", "b", "a"}, 0}).validate(), ContractError);
  EXPECT_NO_THROW((CandidateSet{{"a", "b", "c"}, 1}).validate());
}

TEST(MlmLoss, EmptyPlanIsZero) {
  ParamStore store;
  SeededRng rng(6);
  MlmHead head(store, "mlm_head", 4, 10, rng);
  EXPECT_EQ(mlm_loss(randn(3, 4, rng), MaskingPlan{}, head).item(), 0.0);
}

TEST(MlmLoss, UniformLogitsGiveLogVocab) {
  ParamStore store;
  SeededRng rng(7);
  MlmHead head(store, "mlm_head", 4, 100, rng);
  zero(head.projection().weight());
  zero(head.projection().bias());
  MaskingPlan plan;
  plan.actions.assign(3, MaskAction::keep);
  plan.positions = {1};
  plan.targets = {42};
  EXPECT_NEAR(mlm_loss(randn(3, 4, rng), plan, head).item(), std::log(100.0), 1e-13);
}

TEST(MlmLoss, TwoPositionsAverageHandComputedEntropies) {
  ParamStore store;
  SeededRng rng(8);
  MlmHead head(store, "mlm_head", 2, 3, rng);
  // Identity-like projection: logits are [h0, h1, 0].
  Tensor w = head.projection().weight();
  const std::vector<double> wv{1, 0, 0, 0, 1, 0};
  std::copy(wv.begin(), wv.end(), w.mutable_data().begin());
  zero(head.projection().bias());
  Tensor states = Tensor::matrix({{9.0, 9.0}, {1.0, 2.0}, {0.0, 0.0}, {3.0, -1.0}});
  MaskingPlan plan;
  plan.actions.assign(4, MaskAction::keep);
  plan.positions = {1, 3};
  plan.targets = {0, 2};
  const double ce1 = -(1.0 - std::log(std::exp(1.0) + std::exp(2.0) + 1.0));
  const double ce2 = -(0.0 - std::log(std::exp(3.0) + std::exp(-1.0) + 1.0));
  EXPECT_NEAR(mlm_loss(states, plan, head).item(), (ce1 + ce2) / 2, 1e-14);
}

TEST(MlmLoss, NoGradientOutsideThePlan) {
  ParamStore store;
  SeededRng rng(9);
  MlmHead head(store, "mlm_head", 4, 7, rng);
  Tensor states = randn(5, 4, rng);
  states.set_requires_grad(true);
  MaskingPlan plan;
  plan.actions.assign(5, MaskAction::keep);
  plan.positions = {1, 3};
  plan.targets = {4, 6};
  backward(mlm_loss(states, plan, head));
  for (std::size_t r = 0; r < 5; ++r) {
    double norm = 0;
    for (std::size_t c = 0; c < 4; ++c) norm += std::abs(states.grad()[r * 4 + c]);
    if (r == 1 || r == 3) EXPECT_GT(norm, 0.0);
    else EXPECT_EQ(norm, 0.0) << r;
  }
}

TEST(Nsp, ZeroWeightsGiveUniformClasses) {
  ParamStore store;
  SeededRng rng(10);
  NspHead head(store, "nsp_head", 8, 8, 5, rng);
  zero(head.mlp().fc2().weight());
  zero(head.mlp().fc2().bias());
  Tensor logits = nsp_logits(randn(1, 8, rng), head);
  Tensor p = softmax(logits, 1);
  for (double v : p.data()) EXPECT_NEAR(v, 0.2, 1e-15);
  const std::size_t cls[] = {3};
  EXPECT_NEAR(nsp_loss(randn(1, 8, rng), cls, head).item(), std::log(5.0), 1e-14);
}

TEST(Nsp, DatasetClassCounts) {
  for (std::size_t classes : {735, 105}) {
    ModelConfig c = small_config();
    c.nsp_classes = classes;
    auto model = build_model(Variant::comvt, c, small_vocab(), 1);
    ASSERT_NE(model->nsp_head(), nullptr);
    EXPECT_EQ(model->nsp_head()->classes(), classes);
    EXPECT_EQ(nsp_logits(Tensor::zeros({1, 8}), *model->nsp_head()).cols(), classes);
  }
  EXPECT_EQ(build_model(Variant::comvt, small_config(), small_vocab(), 1)->nsp_head(), nullptr);
}

TEST(Nsp, HeadIsNeverLoadedFromPretraining) {
  auto pretrained = build_model(Variant::comvt, small_config(), small_vocab(), 1);
  const auto path = std::filesystem::temp_directory_path() / "comvt_heads_pretrained.cmvt";
  save_checkpoint(path, pretrained->params());

  ModelConfig c = small_config();
  c.nsp_classes = 735;
  auto tuned = build_model(Variant::comvt, c, small_vocab(), 99);
  const std::vector<double> fresh = tuned->params().get("nsp_head.fc1.weight").to_vector();
  const std::vector<std::string> skip{"nsp_head"};
  load_checkpoint(path, tuned->params(), skip);
  EXPECT_EQ(tuned->params().get("nsp_head.fc1.weight").to_vector(), fresh);
  EXPECT_EQ(tuned->params().get("fusion.block0.text_self.attn.query.weight").to_vector(),
            pretrained->params().get("fusion.block0.text_self.attn.query.weight").to_vector());
  std::filesystem::remove(path);
}

TEST(Qa, QuestionOnlyWithoutSpeech) {
  EXPECT_EQ(qa_input_text("", "what next?"), "what next?");
  EXPECT_EQ(qa_input_text("   ", "what next?"), "what next?");
  EXPECT_EQ(qa_input_text("stir it", "what next?"), "stir it what next?");
}

TEST(Qa, AnswerPoolAndRanking) {
  const std::vector<std::string> answers{"flour", "water", "flour", "Flour"};
  EXPECT_EQ(build_answer_pool(answers), (std::vector<std::string>{"flour", "water", "Flour"}));
  const std::vector<double> scores{0.3, -1.0, 2.0, 0.3};
  EXPECT_EQ(rank_descending(scores), (std::vector<std::size_t>{2, 0, 3, 1}));

  auto model = build_model(Variant::text_only, small_config(), small_vocab(), 2);
  const std::vector<std::string> one{"stir"};
  EXPECT_EQ(qa_rank(*model, "", "what now", nullptr, one), std::vector<std::size_t>{0});
  EXPECT_THROW(qa_rank(*model, "", "what now", nullptr, std::vector<std::string>{}), ContractError);

  // Ranking agrees with a brute-force sort of the dot products.
  const std::vector<std::string> pool{"add the flour", "mix well", "pour water", "stir"};
  const auto order = qa_rank(*model, "add the flour then", "what next", nullptr, pool);
  NoGradGuard guard;
  const Tensor pooled = model->forward(model->prepare_text("add the flour then what next"), nullptr).pooled;
  const Tensor dots = nup_logits(pooled, model->embed_candidates(pool));
  std::vector<std::size_t> brute{0, 1, 2, 3};
  std::stable_sort(brute.begin(), brute.end(), [&](std::size_t a, std::size_t b) { return dots[a] > dots[b]; });
  EXPECT_EQ(order, brute);
}

TEST(BuildModel, VariantsRunAndWireCorrectly) {
  SeededRng rng(11);
  const ClipFeatures clip = clip_for(small_config(), 3, rng);
  for (Variant v : {Variant::comvt, Variant::comvt_scene_only, Variant::vision_only, Variant::single_stream,
                    Variant::text_only}) {
    auto model = build_model(v, small_config(), small_vocab(), 3);
    EXPECT_EQ(parse_variant(to_string(v)), v);
    ForwardResult out = model->forward(model->prepare_text("add the flour"), &clip);
    EXPECT_EQ(out.pooled.shape(), (Shape{1, 8})) << to_string(v);
    EXPECT_EQ(out.visual_states.defined(), v != Variant::text_only);
  }
  EXPECT_THROW(parse_variant("late-fusion"), ConfigError);
}

TEST(BuildModel, VisionOnlySeesTwoTextTokens) {
  auto model = build_model(Variant::vision_only, small_config(), small_vocab(), 4);
  const TokenSequence t = model->prepare_text("add the flour then stir");
  EXPECT_EQ(t.ids, (std::vector<TokenId>{kClsId, kSepId}));
  SeededRng rng(12);
  const ClipFeatures clip = clip_for(small_config(), 2, rng);
  // The transcript is replaced even when passed directly.
  const auto a = model->forward(tokenize("add the flour", model->vocab(), 16, false), &clip).pooled.to_vector();
  const auto b = model->forward(tokenize("mix well", model->vocab(), 16, false), &clip).pooled.to_vector();
  EXPECT_EQ(a, b);
  EXPECT_EQ(model->forward(t, &clip).text_states.rows(), 2u);
}

TEST(BuildModel, FusionDepthFourHasSixteenTrms) {
  ModelConfig c = small_config();
  c.fusion_depth = 4;
  auto model = build_model(Variant::comvt, c, small_vocab(), 5);
  EXPECT_EQ(model->fusion_trm_count(), 16u);
  std::size_t attn_groups = 0;
  for (const auto& g : model->params().groups())
    if (g.rfind("fusion.", 0) == 0 && g.size() > 11 && g.substr(g.size() - 11) == ".attn.query") ++attn_groups;
  EXPECT_EQ(attn_groups, 16u);
}

TEST(BuildModel, TextOnlyNeedsNoFeatures) {
  auto model = build_model(Variant::text_only, small_config(), small_vocab(), 6);
  EXPECT_FALSE(model->uses_visual());
  EXPECT_NO_THROW(model->forward(model->prepare_text("stir"), nullptr));
  auto visual = build_model(Variant::comvt, small_config(), small_vocab(), 6);
  EXPECT_THROW(visual->forward(visual->prepare_text("stir"), nullptr), ContractError);
}

TEST(BuildModel, SceneOnlyIgnoresObjects) {
  auto model = build_model(Variant::comvt_scene_only, small_config(), small_vocab(), 7);
  SeededRng rng(13);
  ClipFeatures clip = clip_for(small_config(), 3, rng);
  const Tensor a = model->visual_tokens(clip);
  EXPECT_EQ(a.rows(), 3u);
  for (auto& row : clip.objects)
    for (auto& o : row) o.values.assign(o.values.size(), 7.0);
  EXPECT_EQ(model->visual_tokens(clip).to_vector(), a.to_vector());
}
