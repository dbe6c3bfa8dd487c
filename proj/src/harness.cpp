#include "comvt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "comvt/checkpoint.hpp"
#include "comvt/error.hpp"

namespace comvt {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown " + where + " field '" + key + "'");
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  schedule.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (nup_weight < 0.0 || mlm_weight < 0.0) throw ConfigError("loss weights must be >= 0");
  if (mlm_probability < 0.0 || mlm_probability > 1.0) throw ConfigError("mlm_probability must be in [0, 1]");
  if (vocab_min_count == 0) throw ConfigError("vocab_min_count must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  if (!(gradcheck_step > 0.0)) throw ConfigError("gradcheck_step must be positive");
  if (gradcheck_batch == 0) throw ConfigError("gradcheck_batch must be positive");
  synthetic.validate();
}

void to_json(json& j, const RunConfig& c) {
  const ModelConfig& m = c.model;
  j = json{
      {"model",
       {{"variant", to_string(m.variant)},
        {"d_model", m.d_model},
        {"heads", m.heads},
        {"text_layers", m.text_layers},
        {"candidate_layers", m.candidate_layers},
        {"ffn_multiplier", m.ffn_multiplier},
        {"fusion_depth", m.fusion_depth},
        {"d_scene", m.d_scene},
        {"d_object", m.d_object},
        {"objects_per_frame", m.objects_per_frame},
        {"max_words", m.max_words},
        {"max_frames", m.max_frames},
        {"anchor", m.anchor.to_string()},
        {"nsp_classes", m.nsp_classes}}},
      {"batch_size", c.batch_size},
      {"steps", c.steps},
      {"eval_every", c.eval_every},
      {"schedule",
       {{"warmup_steps", c.schedule.warmup_steps},
        {"decay_interval", c.schedule.decay_interval},
        {"decay_factor", c.schedule.decay_factor},
        {"base_lr", c.schedule.base_lr}}},
      {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
      {"seed", c.seed},
      {"nup_weight", c.nup_weight},
      {"mlm_weight", c.mlm_weight},
      {"mlm_probability", c.mlm_probability},
      {"vocab_min_count", c.vocab_min_count},
      {"train_examples", c.train_examples},
      {"eval_examples", c.eval_examples},
      {"eval_candidates", c.eval_candidates},
      {"checkpoint", c.checkpoint},
      {"vocab", c.vocab},
      {"synthetic",
       {{"topics", c.synthetic.topics},
        {"candidates", c.synthetic.candidates},
        {"noise", c.synthetic.noise},
        {"frames", c.synthetic.frames},
        {"objects_per_frame", c.synthetic.objects_per_frame},
        {"d_scene", c.synthetic.d_scene},
        {"d_object", c.synthetic.d_object},
        {"leak", c.synthetic.leak}}},
      {"synthetic_train", c.synthetic_train},
      {"synthetic_eval", c.synthetic_eval},
      {"gradcheck_batch", c.gradcheck_batch},
      {"gradcheck_coordinates", c.gradcheck_coordinates},
      {"gradcheck_step", c.gradcheck_step}};
}

void from_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j,
                 {"model", "batch_size", "steps", "eval_every", "schedule", "adam", "seed", "nup_weight", "mlm_weight",
                  "mlm_probability", "vocab_min_count", "train_examples", "eval_examples", "eval_candidates",
                  "checkpoint", "vocab", "synthetic", "synthetic_train", "synthetic_eval", "gradcheck_batch",
                  "gradcheck_coordinates", "gradcheck_step"},
                 "config");
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m,
                   {"variant", "d_model", "heads", "text_layers", "candidate_layers", "ffn_multiplier",
                    "fusion_depth", "d_scene", "d_object", "objects_per_frame", "max_words", "max_frames", "anchor",
                    "nsp_classes"},
                   "model");
    if (m.contains("variant")) c.model.variant = parse_variant(m.at("variant").get<std::string>());
    read_field(m, "d_model", c.model.d_model);
    read_field(m, "heads", c.model.heads);
    read_field(m, "text_layers", c.model.text_layers);
    read_field(m, "candidate_layers", c.model.candidate_layers);
    read_field(m, "ffn_multiplier", c.model.ffn_multiplier);
    read_field(m, "fusion_depth", c.model.fusion_depth);
    read_field(m, "d_scene", c.model.d_scene);
    read_field(m, "d_object", c.model.d_object);
    read_field(m, "objects_per_frame", c.model.objects_per_frame);
    read_field(m, "max_words", c.model.max_words);
    read_field(m, "max_frames", c.model.max_frames);
    if (m.contains("anchor")) {
      const json& a = m.at("anchor");
      c.model.anchor = AnchorPolicy::parse(a.is_string() ? a.get<std::string>() : std::to_string(a.get<std::size_t>()));
    }
    read_field(m, "nsp_classes", c.model.nsp_classes);
  }
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "steps", c.steps);
  read_field(j, "eval_every", c.eval_every);
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    reject_unknown(s, {"warmup_steps", "decay_interval", "decay_factor", "base_lr"}, "schedule");
    read_field(s, "warmup_steps", c.schedule.warmup_steps);
    read_field(s, "decay_interval", c.schedule.decay_interval);
    read_field(s, "decay_factor", c.schedule.decay_factor);
    read_field(s, "base_lr", c.schedule.base_lr);
  }
  if (j.contains("adam")) {
    const json& a = j.at("adam");
    reject_unknown(a, {"beta1", "beta2", "eps"}, "adam");
    read_field(a, "beta1", c.adam.beta1);
    read_field(a, "beta2", c.adam.beta2);
    read_field(a, "eps", c.adam.eps);
  }
  read_field(j, "seed", c.seed);
  read_field(j, "nup_weight", c.nup_weight);
  read_field(j, "mlm_weight", c.mlm_weight);
  read_field(j, "mlm_probability", c.mlm_probability);
  read_field(j, "vocab_min_count", c.vocab_min_count);
  read_field(j, "train_examples", c.train_examples);
  read_field(j, "eval_examples", c.eval_examples);
  read_field(j, "eval_candidates", c.eval_candidates);
  read_field(j, "checkpoint", c.checkpoint);
  read_field(j, "vocab", c.vocab);
  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    reject_unknown(s, {"topics", "candidates", "noise", "frames", "objects_per_frame", "d_scene", "d_object", "leak"},
                   "synthetic");
    read_field(s, "topics", c.synthetic.topics);
    read_field(s, "candidates", c.synthetic.candidates);
    read_field(s, "noise", c.synthetic.noise);
    read_field(s, "frames", c.synthetic.frames);
    read_field(s, "objects_per_frame", c.synthetic.objects_per_frame);
    read_field(s, "d_scene", c.synthetic.d_scene);
    read_field(s, "d_object", c.synthetic.d_object);
    read_field(s, "leak", c.synthetic.leak);
  }
  read_field(j, "synthetic_train", c.synthetic_train);
  read_field(j, "synthetic_eval", c.synthetic_eval);
  read_field(j, "gradcheck_batch", c.gradcheck_batch);
  read_field(j, "gradcheck_coordinates", c.gradcheck_coordinates);
  read_field(j, "gradcheck_step", c.gradcheck_step);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  RunConfig config;
  try {
    config = json::parse(in).get<RunConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  config.validate();
  return config;
}

// ---------------------------------------------------------------------------
// Samples

std::vector<Sample> samples_from(const SyntheticDataset& data) {
  std::vector<Sample> out;
  out.reserve(data.items.size());
  for (const auto& item : data.items) out.push_back({item.example, item.clip, item.candidates});
  return out;
}

std::vector<Sample> load_samples(const std::filesystem::path& examples, const std::filesystem::path& candidates,
                                 const FeatureSchema& schema, bool load_visual) {
  std::vector<Sample> out;
  std::unordered_map<std::string, CandidateSet> by_clip;
  if (!candidates.empty()) {
    for (auto& rec : read_candidates(candidates)) by_clip.emplace(rec.clip_id, std::move(rec.candidates));
  }
  const auto base = examples.parent_path();
  for (auto& ex : read_examples(examples)) {
    Sample s;
    if (load_visual) {
      if (ex.features_path.empty()) throw DataError("example '" + ex.clip_id + "' has no clip-features file");
      std::filesystem::path p(ex.features_path);
      s.clip = load_features(p.is_absolute() ? p : base / p, schema);
    }
    if (!candidates.empty()) {
      auto it = by_clip.find(ex.clip_id);
      if (it == by_clip.end()) throw DataError("no candidates for clip '" + ex.clip_id + "'");
      s.candidates = it->second;
    }
    s.example = std::move(ex);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

std::size_t rank_of(std::span<const double> scores, std::size_t true_index) {
  if (true_index >= scores.size()) throw ContractError("rank_of: true index out of range");
  const double t = scores[true_index];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > t || (scores[i] == t && i < true_index)) ++rank;
  }
  return rank;
}

int recall_at_k(std::span<const double> scores, std::size_t true_index, std::size_t k) {
  if (k < 1) throw ContractError("recall_at_k: k must be at least 1");
  // k beyond M is the whole pool.
  return rank_of(scores, true_index) <= std::min(k, scores.size()) ? 1 : 0;
}

double FlopsReport::reduction() const {
  const double without = static_cast<double>(without_compact.total());
  return without > 0.0 ? (without - static_cast<double>(with_compact.total())) / without : 0.0;
}

std::uint64_t trm_macs(std::uint64_t q, std::uint64_t k, std::uint64_t d, std::uint64_t ffn) {
  return (q + 2 * k + q) * d * d + 2 * q * k * d + 2 * q * d * ffn;
}

FlopsReport estimate_flops(const ModelConfig& config) {
  const std::uint64_t d = config.d_model, f = config.ffn_dim();
  const std::uint64_t n = config.max_words, frames = config.max_frames, L = config.objects_per_frame;
  const std::uint64_t text = config.text_layers * trm_macs(n, n, d, f);
  const std::uint64_t S = config.fusion_depth;

  auto fusion_for = [&](std::uint64_t v) -> std::uint64_t {
    if (config.variant == Variant::single_stream) return 2 * S * trm_macs(n + v, n + v, d, f);
    return S * (trm_macs(v, n, d, f) + trm_macs(v, v, d, f) + trm_macs(n, v, d, f) + trm_macs(n, n, d, f));
  };

  FlopsReport report;
  for (FlopsBreakdown* b : {&report.with_compact, &report.without_compact}) b->text_encoder = text;
  if (config.variant == Variant::text_only) return report;

  if (config.variant == Variant::comvt_scene_only) {
    for (FlopsBreakdown* b : {&report.with_compact, &report.without_compact}) {
      b->visual_combine = frames * config.d_scene * d;
      b->visual_tokens = frames;
      b->fusion = fusion_for(frames);
    }
    return report;
  }
  const std::uint64_t combine = frames * L * ((config.d_object + config.d_scene) * d + d * d + 4 * d);
  const std::uint64_t targets = (frames - 1) * L;
  std::uint64_t compact = 2 * L * d * d;  // g_proj
  if (targets > 0) compact += (L + 2 * targets + L) * d * d + 2 * L * targets * d;

  report.with_compact.visual_combine = combine;
  report.with_compact.compact_extraction = compact;
  report.with_compact.visual_tokens = L;
  report.with_compact.fusion = fusion_for(L);
  report.without_compact.visual_combine = combine;
  report.without_compact.visual_tokens = frames * L;
  report.without_compact.fusion = fusion_for(frames * L);
  return report;
}

void MetricReport::validate() const {
  for (const auto& e : evaluations) {
    if (!(e.recall_at_1 >= 0.0 && e.recall_at_1 <= e.recall_at_5 && e.recall_at_5 <= 1.0)) {
      throw NumericError("metric report violates 0 <= R@1 <= R@5 <= 1");
    }
  }
}

namespace {

json breakdown_json(const FlopsBreakdown& b) {
  return {{"text_encoder", b.text_encoder}, {"visual_combine", b.visual_combine},
          {"compact_extraction", b.compact_extraction}, {"fusion", b.fusion},
          {"visual_tokens", b.visual_tokens}, {"total", b.total()}};
}

}  // namespace

json to_json(const FlopsReport& report) {
  return {{"with_compact", breakdown_json(report.with_compact)},
          {"without_compact", breakdown_json(report.without_compact)},
          {"reduction", report.reduction()}};
}

json to_json(const MetricReport& report) {
  json evals = json::array();
  for (const auto& e : report.evaluations) {
    evals.push_back({{"step", e.step}, {"recall_at_1", e.recall_at_1}, {"recall_at_5", e.recall_at_5},
                     {"examples", e.examples}});
  }
  json j{{"evaluations", evals},
         {"loss", {{"nup", report.nup_loss}, {"mlm", report.mlm_loss}, {"total", report.total_loss}}},
         {"steps_per_second", report.steps_per_second},
         {"flops", to_json(report.flops)},
         {"config", report.config}};
  if (!report.ranks.empty()) j["ranks"] = report.ranks;
  return j;
}

// ---------------------------------------------------------------------------
// Evaluation

Evaluation evaluate(const Model& model, std::span<const Sample> samples, std::vector<std::size_t>* ranks) {
  NoGradGuard no_grad;
  std::unordered_map<std::string, std::vector<double>> cache;
  const std::size_t d = model.config().d_model;
  Evaluation result;
  std::size_t hits1 = 0, hits5 = 0;
  if (ranks) ranks->clear();
  for (const auto& s : samples) {
    if (!s.candidates) throw DataError("evaluate: example '" + s.example.clip_id + "' has no candidate set");
    const CandidateSet& cands = *s.candidates;
    cands.validate();
    const ClipFeatures* clip = nullptr;
    if (model.uses_visual()) {
      if (!s.clip) throw DataError("evaluate: example '" + s.example.clip_id + "' has no clip features");
      clip = &*s.clip;
    }
    const ForwardResult out = model.forward(model.prepare_text(s.example.transcript_text()), clip);
    std::vector<double> cand_rows;
    cand_rows.reserve(cands.size() * d);
    for (const auto& u : cands.utterances) {
      auto it = cache.find(u);
      if (it == cache.end()) {
        const Tensor e = encode_candidate(u, model.vocab(), model.candidate_encoder());
        it = cache.emplace(u, e.to_vector()).first;
      }
      cand_rows.insert(cand_rows.end(), it->second.begin(), it->second.end());
    }
    const Tensor logits = nup_logits(out.pooled, Tensor::matrix(cands.size(), d, std::move(cand_rows)));
    const std::size_t rank = rank_of(logits.data(), cands.true_index);
    hits1 += rank <= 1;
    hits5 += rank <= std::min<std::size_t>(5, cands.size());
    if (ranks) ranks->push_back(rank);
    ++result.examples;
  }
  if (result.examples > 0) {
    result.recall_at_1 = static_cast<double>(hits1) / static_cast<double>(result.examples);
    result.recall_at_5 = static_cast<double>(hits5) / static_cast<double>(result.examples);
  }
  return result;
}

MetricReport evaluate(const RunConfig& config, const std::filesystem::path& checkpoint, const Vocab& vocab,
                      std::span<const Sample> samples, bool keep_ranks) {
  auto model = build_model(config.model.variant, config.model, vocab, config.seed);
  load_checkpoint(checkpoint, model->params());
  MetricReport report;
  report.evaluations.push_back(evaluate(*model, samples, keep_ranks ? &report.ranks : nullptr));
  report.flops = estimate_flops(config.model);
  report.config = config;
  report.validate();
  return report;
}

// ---------------------------------------------------------------------------
// Training

Vocab build_training_vocab(std::span<const Sample> train, std::size_t min_count) {
  std::vector<std::string> corpus;
  for (const auto& s : train) {
    for (const auto& sentence : s.example.context) corpus.push_back(sentence.text);
    corpus.push_back(s.example.future);
  }
  if (corpus.empty()) throw DataError("training set is empty");
  return build_vocab(corpus, min_count);
}

namespace {

struct BatchLoss {
  Tensor nup;
  Tensor mlm;
  Tensor total;
};

BatchLoss batch_loss(const Model& model, std::span<const Sample* const> batch, std::span<const TokenSequence> tokens,
                     std::span<const MaskingPlan> plans, double nup_weight, double mlm_weight) {
  std::vector<Tensor> pooled, states;
  std::vector<std::string> futures;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ClipFeatures* clip = nullptr;
    if (model.uses_visual()) {
      if (!batch[b]->clip) throw DataError("example '" + batch[b]->example.clip_id + "' has no clip features");
      clip = &*batch[b]->clip;
    }
    ForwardResult out = model.forward(tokens[b], clip);
    pooled.push_back(out.pooled);
    states.push_back(out.text_states);
    futures.push_back(batch[b]->example.future);
  }
  auto [pool, targets] = in_batch_pool(futures);
  const Tensor pooled_rows = pooled.size() == 1 ? pooled.front() : concat_rows(pooled);
  BatchLoss loss;
  loss.nup = in_batch_nup_loss(pooled_rows, model.embed_candidates(pool), targets);
  loss.mlm = mlm_loss(states, plans, model.mlm_head());
  loss.total = add(scale(loss.nup, nup_weight), scale(loss.mlm, mlm_weight));
  return loss;
}

}  // namespace

TrainResult train(const RunConfig& config, std::span<const Sample> train_set, std::span<const Sample> eval_set,
                  const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  Vocab vocab = build_training_vocab(train_set, config.vocab_min_count);
  TrainResult result;
  result.model = build_model(config.model.variant, config.model, vocab, config.seed);
  Model& model = *result.model;
  MetricReport& report = result.report;
  report.config = config;
  report.flops = estimate_flops(config.model);

  SeededRng root(config.seed);
  SeededRng batch_rng = root.fork(100);
  SeededRng mask_rng = root.fork(101);
  OptimizerState optimizer;
  optimizer.config = config.adam;

  std::vector<TokenSequence> tokenized;
  tokenized.reserve(train_set.size());
  for (const auto& s : train_set) tokenized.push_back(model.prepare_text(s.example.transcript_text()));

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  const std::size_t batch_size = std::min(config.batch_size, train_set.size());

  auto run_eval = [&](std::uint64_t step) {
    if (eval_set.empty()) return;
    Evaluation e = evaluate(model, eval_set);
    e.step = step;
    report.evaluations.push_back(e);
  };

  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t step = 0; step < config.steps; ++step) {
    std::vector<const Sample*> batch;
    std::vector<TokenSequence> tokens;
    std::vector<MaskingPlan> plans;
    for (std::size_t b = 0; b < batch_size; ++b) {
      if (cursor == order.size()) {
        batch_rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      batch.push_back(&train_set[idx]);
      if (config.mlm_probability > 0.0 && config.mlm_weight > 0.0) {
        auto [masked, plan] = apply_mlm_mask(tokenized[idx], vocab.size(), mask_rng, config.mlm_probability);
        tokens.push_back(std::move(masked));
        plans.push_back(std::move(plan));
      } else {
        tokens.push_back(tokenized[idx]);
        plans.emplace_back();
      }
    }

    model.params().zero_grad();
    BatchLoss loss;
    try {
      loss = batch_loss(model, batch, tokens, plans, config.nup_weight, config.mlm_weight);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": non-finite value in forward pass (" + e.what() + ")");
    }
    backward(loss.total);
    try {
      adam_step(model.params(), optimizer, lr_at_step(config.schedule, step + 1));
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }
    report.nup_loss.push_back(loss.nup.item());
    report.mlm_loss.push_back(loss.mlm.item());
    report.total_loss.push_back(loss.total.item());
    if (options.on_step) options.on_step(step, loss.total.item());
    if (config.eval_every > 0 && (step + 1) % config.eval_every == 0 && step + 1 < config.steps) run_eval(step + 1);
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.steps_per_second = seconds > 0.0 ? static_cast<double>(config.steps) / seconds : 0.0;
  run_eval(config.steps);
  report.validate();

  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    save_checkpoint(*options.out_dir / "checkpoint.cmvt", model.params());
    vocab.save(*options.out_dir / "vocab.txt");
    std::ofstream(*options.out_dir / "report.json") << to_json(report).dump(2) << '\n';
    std::ofstream(*options.out_dir / "config.json") << json(config).dump(2) << '\n';
  }
  return result;
}

// ---------------------------------------------------------------------------
// Gradient check

GradcheckReport run_gradcheck(const RunConfig& config, std::uint64_t seed) {
  config.model.validate();
  SeededRng rng(seed);
  const ModelConfig& mc = config.model;
  const std::size_t batch = config.gradcheck_batch;

  SyntheticSpec spec;
  spec.topics = std::max<std::size_t>(4, 2 * batch);
  spec.candidates = 2;
  spec.noise = 0.5;
  spec.frames = mc.max_frames;
  spec.objects_per_frame = mc.objects_per_frame;
  spec.d_scene = mc.d_scene;
  spec.d_object = mc.d_object;
  spec.leak = true;
  SeededRng data_rng = rng.fork(1);
  const SyntheticDataset data = synth_generate(spec, 16 * batch, data_rng);

  // Distinct futures keep every in-batch candidate live.
  std::vector<Sample> samples;
  std::set<std::string> seen;
  for (const auto& item : data.items) {
    if (samples.size() == batch) break;
    if (seen.insert(item.example.future).second) samples.push_back({item.example, item.clip, item.candidates});
  }
  if (samples.size() < batch) throw DataError("gradcheck: could not assemble a batch of distinct examples");

  const Vocab vocab = build_training_vocab(samples, 1);
  auto model = build_model(mc.variant, mc, vocab, mix_seed(seed));

  SeededRng mask_rng = rng.fork(2);
  std::vector<TokenSequence> tokens;
  std::vector<MaskingPlan> plans;
  for (const auto& s : samples) {
    TokenSequence t = model->prepare_text(s.example.transcript_text());
    auto [masked, plan] = apply_mlm_mask(t, vocab.size(), mask_rng, 0.3);
    if (plan.empty() && t.ids.size() > 2) {
      plan.actions.assign(t.ids.size(), MaskAction::keep);
      plan.actions[1] = MaskAction::unchanged;
      plan.positions = {1};
      plan.targets = {t.ids[1]};
    }
    tokens.push_back(std::move(masked));
    plans.push_back(std::move(plan));
  }
  std::vector<const Sample*> batch_ptrs;
  for (const auto& s : samples) batch_ptrs.push_back(&s);

  auto loss_fn = [&]() { return batch_loss(*model, batch_ptrs, tokens, plans, 1.0, 1.0).total; };

  SeededRng coord_rng = rng.fork(3);
  const std::size_t count = std::max(config.gradcheck_coordinates, model->params().size());
  const auto coords = sample_coordinates(model->params(), count, coord_rng);

  GradcheckReport report;
  report.result = finite_diff_check(loss_fn, model->params(), coords, config.gradcheck_step);
  report.parameter_tensors = model->params().size();
  std::set<std::size_t> touched;
  for (const auto& c : coords) touched.insert(c.param);
  report.tensors_sampled = touched.size();
  return report;
}

}  // namespace comvt
