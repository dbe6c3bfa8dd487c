#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "comvt/data.hpp"
#include "comvt/model.hpp"
#include "comvt/optim.hpp"
#include "json.hpp"

namespace comvt {

/// Everything a run needs. Serialized as JSON with the same field names.
struct RunConfig {
  ModelConfig model;
  std::size_t batch_size = 32;
  std::size_t steps = 2000;
  /// Evaluate every N steps (0: only after the last step).
  std::size_t eval_every = 0;
  LrSchedule schedule;
  AdamConfig adam;
  std::uint64_t seed = 0;
  double nup_weight = 1.0;
  double mlm_weight = 1.0;
  double mlm_probability = 0.15;
  std::size_t vocab_min_count = 1;

  std::string train_examples;
  std::string eval_examples;
  std::string eval_candidates;
  std::string checkpoint;
  std::string vocab;

  SyntheticSpec synthetic;
  std::size_t synthetic_train = 2000;
  std::size_t synthetic_eval = 500;

  std::size_t gradcheck_batch = 2;
  std::size_t gradcheck_coordinates = 200;
  double gradcheck_step = 1e-5;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// One example with whatever the run needs: clip features for visual
/// variants, a fixed candidate pool for evaluation.
struct Sample {
  FupExample example;
  std::optional<ClipFeatures> clip;
  std::optional<CandidateSet> candidates;
};

std::vector<Sample> samples_from(const SyntheticDataset& data);

/// Reads an examples file, optionally a candidates file (matched by clip_id),
/// and the referenced clip-features files when `load_visual` is set.
std::vector<Sample> load_samples(const std::filesystem::path& examples, const std::filesystem::path& candidates,
                                 const FeatureSchema& schema, bool load_visual);

// ---------------------------------------------------------------------------
// Metrics

/// 1-based rank of `true_index` under descending scores, ties to the lower index.
std::size_t rank_of(std::span<const double> scores, std::size_t true_index);

/// 1 if the true candidate ranks within the top min(k, M), else 0. Requires k >= 1.
int recall_at_k(std::span<const double> scores, std::size_t true_index, std::size_t k);

struct FlopsBreakdown {
  std::uint64_t text_encoder = 0;
  std::uint64_t visual_combine = 0;
  std::uint64_t compact_extraction = 0;
  std::uint64_t fusion = 0;
  std::uint64_t visual_tokens = 0;

  std::uint64_t total() const { return text_encoder + visual_combine + compact_extraction + fusion; }
};

struct FlopsReport {
  FlopsBreakdown with_compact;
  FlopsBreakdown without_compact;

  /// (without - with) / without.
  double reduction() const;
};

/// MACs of TRM(Q, K) with |Q| = q, |K| = k.
std::uint64_t trm_macs(std::uint64_t q, std::uint64_t k, std::uint64_t d, std::uint64_t ffn);

/// Analytic multiply-accumulate count per example for both visual layouts.
FlopsReport estimate_flops(const ModelConfig& config);

struct Evaluation {
  std::uint64_t step = 0;
  double recall_at_1 = 0.0;
  double recall_at_5 = 0.0;
  std::size_t examples = 0;
};

struct MetricReport {
  std::vector<Evaluation> evaluations;
  std::vector<double> nup_loss;
  std::vector<double> mlm_loss;
  std::vector<double> total_loss;
  double steps_per_second = 0.0;
  FlopsReport flops;
  nlohmann::json config;
  /// Per-example ranks of the last evaluation, when requested.
  std::vector<std::size_t> ranks;

  /// Throws if any evaluation breaks 0 <= R@1 <= R@5 <= 1.
  void validate() const;
};

nlohmann::json to_json(const MetricReport& report);
nlohmann::json to_json(const FlopsReport& report);

/// Mean R@1/R@5 of `model` over samples carrying candidate sets.
Evaluation evaluate(const Model& model, std::span<const Sample> samples, std::vector<std::size_t>* ranks = nullptr);

/// Loads a checkpoint into a freshly built model and evaluates it.
MetricReport evaluate(const RunConfig& config, const std::filesystem::path& checkpoint, const Vocab& vocab,
                      std::span<const Sample> samples, bool keep_ranks = false);

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  std::unique_ptr<Model> model;
  MetricReport report;
};

struct TrainOptions {
  /// Checkpoint, vocab and report are written here when set.
  std::optional<std::filesystem::path> out_dir;
  /// Called after every step with (step, total loss).
  std::function<void(std::uint64_t, double)> on_step;
};

/// Vocabulary over train transcripts and future utterances.
Vocab build_training_vocab(std::span<const Sample> train, std::size_t min_count);

TrainResult train(const RunConfig& config, std::span<const Sample> train_set, std::span<const Sample> eval_set,
                  const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckReport {
  GradCheckResult result;
  std::size_t parameter_tensors = 0;
  std::size_t tensors_sampled = 0;
};

/// Builds a small model from `config`, a batch of config.gradcheck_batch
/// synthetic examples, and compares analytic and central-difference gradients
/// of the combined NUP + MLM loss.
GradcheckReport run_gradcheck(const RunConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Command line

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace comvt
