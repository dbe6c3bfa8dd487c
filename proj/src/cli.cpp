#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "comvt/checkpoint.hpp"
#include "comvt/error.hpp"
#include "comvt/harness.hpp"

namespace comvt {

using nlohmann::json;

namespace {

constexpr double kGradcheckTolerance = 1e-4;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "JSON run configuration");
  cmd->add_option("--seed", flags.seed, "Seed (overrides the config)");
  cmd->add_option("--out", flags.out, "Output directory");
}

RunConfig resolve_config(const CommonFlags& flags) {
  RunConfig config;
  if (!flags.config.empty()) config = load_run_config(flags.config);
  if (flags.seed) config.seed = *flags.seed;
  config.validate();
  return config;
}

FeatureSchema schema_of(const ModelConfig& m) {
  return {m.d_scene, m.d_object, m.objects_per_frame, m.max_frames};
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw DataError(std::string("missing ") + what + " path");
  if (!std::filesystem::exists(path)) throw DataError(std::string(what) + " not found: " + path);
}

/// Synthetic train/eval split drawn from one generator call so both halves
/// share the topic directions.
std::pair<std::vector<Sample>, std::vector<Sample>> synthetic_split(const RunConfig& config) {
  SeededRng rng(config.seed);
  SeededRng data_rng = rng.fork(7);
  auto all = samples_from(synth_generate(config.synthetic, config.synthetic_train + config.synthetic_eval, data_rng));
  std::vector<Sample> eval(std::make_move_iterator(all.begin() + config.synthetic_train),
                           std::make_move_iterator(all.end()));
  all.resize(config.synthetic_train);
  return {std::move(all), std::move(eval)};
}

void write_dataset(const std::filesystem::path& dir, const std::string& name, std::span<const Sample> samples) {
  std::filesystem::create_directories(dir / "features");
  std::vector<FupExample> examples;
  std::vector<CandidateRecord> candidates;
  for (const auto& s : samples) {
    FupExample ex = s.example;
    ex.features_path = "features/" + ex.clip_id + ".jsonl";
    if (s.clip) save_features(dir / ex.features_path, *s.clip);
    if (s.candidates) candidates.push_back({ex.clip_id, *s.candidates});
    examples.push_back(std::move(ex));
  }
  write_examples(dir / (name + "_examples.jsonl"), examples);
  write_candidates(dir / (name + "_candidates.jsonl"), candidates);
}

int cmd_segment(const CommonFlags& flags, const std::string& input, double min_duration, bool keep_short,
                std::ostream& out) {
  require_file(input, "transcripts file");
  SegmentOptions options;
  options.min_duration_s = min_duration;
  options.keep_short_prefix = keep_short;
  std::vector<FupExample> examples;
  for (const auto& t : read_transcripts(input)) {
    auto part = segment_clips(t, options);
    examples.insert(examples.end(), part.begin(), part.end());
  }
  json result{{"examples", examples.size()}};
  if (!flags.out.empty()) {
    std::filesystem::create_directories(flags.out);
    const auto path = std::filesystem::path(flags.out) / "examples.jsonl";
    write_examples(path, examples);
    result["path"] = path.string();
  }
  out << result.dump() << '\n';
  return kExitOk;
}

int cmd_synth(const CommonFlags& flags, std::ostream& out) {
  const RunConfig config = resolve_config(flags);
  if (flags.out.empty()) throw ConfigError("synth requires --out");
  auto [train_set, eval_set] = synthetic_split(config);
  write_dataset(flags.out, "train", train_set);
  write_dataset(flags.out, "eval", eval_set);
  out << json{{"train", train_set.size()}, {"eval", eval_set.size()}, {"out", flags.out}}.dump() << '\n';
  return kExitOk;
}

int cmd_train(const CommonFlags& flags, std::ostream& out, std::ostream& err) {
  const RunConfig config = resolve_config(flags);
  std::vector<Sample> train_set, eval_set;
  const bool visual = config.model.variant != Variant::text_only;
  if (config.train_examples.empty()) {
    std::tie(train_set, eval_set) = synthetic_split(config);
  } else {
    require_file(config.train_examples, "train examples");
    train_set = load_samples(config.train_examples, {}, schema_of(config.model), visual);
    if (!config.eval_examples.empty()) {
      require_file(config.eval_examples, "eval examples");
      require_file(config.eval_candidates, "eval candidates");
      eval_set = load_samples(config.eval_examples, config.eval_candidates, schema_of(config.model), visual);
    }
  }
  TrainOptions options;
  if (!flags.out.empty()) options.out_dir = flags.out;
  const std::uint64_t every = std::max<std::uint64_t>(1, config.steps / 20);
  options.on_step = [&](std::uint64_t step, double loss) {
    if ((step + 1) % every == 0) err << "step " << step + 1 << " loss " << loss << '\n';
  };
  const TrainResult result = train(config, train_set, eval_set, options);
  json summary{{"steps", config.steps}, {"steps_per_second", result.report.steps_per_second}};
  if (!result.report.evaluations.empty()) {
    const auto& e = result.report.evaluations.back();
    summary["recall_at_1"] = e.recall_at_1;
    summary["recall_at_5"] = e.recall_at_5;
  }
  if (!result.report.total_loss.empty()) summary["final_loss"] = result.report.total_loss.back();
  if (options.out_dir) summary["out"] = flags.out;
  out << summary.dump() << '\n';
  return kExitOk;
}

int cmd_eval(const CommonFlags& flags, std::string checkpoint, std::string vocab_path, bool ranks,
             std::ostream& out) {
  RunConfig config = resolve_config(flags);
  if (checkpoint.empty()) checkpoint = config.checkpoint;
  if (vocab_path.empty()) vocab_path = config.vocab;
  require_file(checkpoint, "checkpoint");
  require_file(vocab_path, "vocabulary");
  std::vector<Sample> samples;
  if (config.eval_examples.empty()) {
    samples = synthetic_split(config).second;
  } else {
    require_file(config.eval_examples, "eval examples");
    require_file(config.eval_candidates, "eval candidates");
    samples = load_samples(config.eval_examples, config.eval_candidates, schema_of(config.model),
                           config.model.variant != Variant::text_only);
  }
  const MetricReport report = evaluate(config, checkpoint, Vocab::load(vocab_path), samples, ranks);
  const json j = to_json(report);
  if (!flags.out.empty()) {
    std::filesystem::create_directories(flags.out);
    std::ofstream(std::filesystem::path(flags.out) / "eval_report.json") << j.dump(2) << '\n';
  }
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_flops(const CommonFlags& flags, std::ostream& out) {
  const RunConfig config = resolve_config(flags);
  out << to_json(estimate_flops(config.model)).dump() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const CommonFlags& flags, std::ostream& out) {
  const RunConfig config = resolve_config(flags);
  const GradcheckReport report = run_gradcheck(config, config.seed);
  const bool pass = report.result.max_relative_error < kGradcheckTolerance;
  out << json{{"max_relative_error", report.result.max_relative_error},
              {"coordinates", report.result.coordinates},
              {"parameter_tensors", report.parameter_tensors},
              {"tensors_sampled", report.tensors_sampled},
              {"worst_parameter", report.result.worst_parameter},
              {"worst_index", report.result.worst_index},
              {"pass", pass}}
             .dump()
      << '\n';
  return pass ? kExitOk : kExitNumeric;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Future-utterance prediction with co-attentional multimodal transformers", "comvt"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string input, checkpoint, vocab;
  double min_duration = 5.0;
  bool keep_short = false, ranks = false;

  auto* segment = app.add_subcommand("segment", "Cut transcripts into future-utterance examples");
  add_common(segment, flags);
  segment->add_option("--input", input, "Transcripts file (JSON Lines)")->required();
  segment->add_option("--min-duration", min_duration, "Minimum context length in seconds");
  segment->add_flag("--keep-short", keep_short, "Keep clips whose whole prefix is too short");

  auto* synth = app.add_subcommand("synth", "Write the synthetic benchmark");
  add_common(synth, flags);
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_common(train_cmd, flags);
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval_cmd, flags);
  eval_cmd->add_option("--checkpoint", checkpoint, "Parameter file");
  eval_cmd->add_option("--vocab", vocab, "Vocabulary file");
  eval_cmd->add_flag("--ranks", ranks, "Include per-example ranks");
  auto* flops = app.add_subcommand("flops", "Analytic MAC estimate");
  add_common(flops, flags);
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  add_common(gradcheck, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  try {
    if (*segment) return cmd_segment(flags, input, min_duration, keep_short, out);
    if (*synth) return cmd_synth(flags, out);
    if (*train_cmd) return cmd_train(flags, out, err);
    if (*eval_cmd) return cmd_eval(flags, checkpoint, vocab, ranks, out);
    if (*flops) return cmd_flops(flags, out);
    if (*gradcheck) return cmd_gradcheck(flags, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace comvt
