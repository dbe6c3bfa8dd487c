#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "comvt/heads.hpp"
#include "comvt/rng.hpp"
#include "comvt/text.hpp"
#include "comvt/visual.hpp"

namespace comvt {

struct TimedSentence {
  std::string text;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct Transcript {
  std::string video_id;
  std::vector<TimedSentence> sentences;  // time-ordered, non-overlapping
};

/// One future-utterance example: whole context sentences and the sentence
/// that immediately follows them.
struct FupExample {
  std::string clip_id;
  std::vector<TimedSentence> context;
  std::string future;
  double start_s = 0.0;
  double end_s = 0.0;
  /// Clip-features file, relative to the examples file when read from disk.
  std::string features_path;

  std::string transcript_text() const;
};

struct SegmentOptions {
  double min_duration_s = 5.0;
  /// Keep examples whose whole prefix is not longer than min_duration_s.
  bool keep_short_prefix = false;
};

/// For every sentence k >= 1 as the future utterance, grows the context
/// backwards from sentence k-1 until its span is strictly longer than
/// min_duration_s.
std::vector<FupExample> segment_clips(const Transcript& transcript, const SegmentOptions& options = {});

struct StepAnnotation {
  std::size_t step_class = 0;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct NspExample {
  std::string clip_id;
  std::vector<TimedSentence> context;
  double start_s = 0.0;
  double end_s = 0.0;
  std::size_t step_class = 0;
};

/// One example per step with a non-empty preceding context, built by the same
/// backward expansion from the last sentence that ends before the step starts.
std::vector<NspExample> make_nsp_examples(const Transcript& transcript, std::span<const StepAnnotation> steps,
                                          const SegmentOptions& options = {});

/// Truth at a uniformly random index plus M-1 distinct negatives sampled
/// without replacement from `pool` (exact duplicates of the truth excluded).
CandidateSet sample_candidates(const std::string& truth, std::span<const std::string> pool, std::size_t m,
                               SeededRng& rng);

/// round(fraction * n) distinct indices in ascending order.
std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, SeededRng& rng);

template <typename T>
std::vector<T> subsample_eval(std::span<const T> items, double fraction, SeededRng& rng) {
  std::vector<T> out;
  for (std::size_t i : subsample_indices(items.size(), fraction, rng)) out.push_back(items[i]);
  return out;
}

template <typename T>
std::vector<T> keep_last(std::span<const T> items, std::size_t limit) {
  const std::size_t keep = std::min(items.size(), limit);
  return {items.end() - static_cast<std::ptrdiff_t>(keep), items.end()};
}

struct TruncatedInputs {
  TokenSequence tokens;
  ClipFeatures clip;
};

/// Keeps the last words (inside the [CLS] ... [SEP] frame of max_words) and
/// the last max_frames frames.
TruncatedInputs truncate_inputs(std::span<const TokenId> body, ClipFeatures clip, std::size_t max_words = 128,
                                std::size_t max_frames = 30);

// ---------------------------------------------------------------------------
// Synthetic benchmark

struct SyntheticSpec {
  std::size_t topics = 10;
  std::size_t candidates = 10;
  double noise = 0.1;
  std::size_t frames = 4;
  std::size_t objects_per_frame = 4;
  std::size_t d_scene = 32;
  std::size_t d_object = 32;
  /// Mention the topic word in the transcript.
  bool leak = false;

  void validate() const;
};

struct SyntheticExample {
  FupExample example;
  ClipFeatures clip;
  CandidateSet candidates;
  std::size_t topic = 0;
};

struct SyntheticDataset {
  std::vector<std::string> topic_words;
  std::vector<SyntheticExample> items;
};

/// Future utterance "next we use the <word>" for topic `topic`.
std::string topic_utterance(const std::string& word);

/// Draws `n` examples. Topic z is uniform over K; scene and object features
/// are the topic's fixed direction plus noise * N(0, 1). Transcripts come from
/// a separate random stream and, with leak off, never depend on z.
SyntheticDataset synth_generate(const SyntheticSpec& spec, std::size_t n, SeededRng& rng);

// ---------------------------------------------------------------------------
// JSON Lines files

std::vector<Transcript> read_transcripts(const std::filesystem::path& path);
void write_transcripts(const std::filesystem::path& path, std::span<const Transcript> transcripts);

std::vector<FupExample> read_examples(const std::filesystem::path& path);
void write_examples(const std::filesystem::path& path, std::span<const FupExample> examples);

struct CandidateRecord {
  std::string clip_id;
  CandidateSet candidates;
};

std::vector<CandidateRecord> read_candidates(const std::filesystem::path& path);
void write_candidates(const std::filesystem::path& path, std::span<const CandidateRecord> records);

}  // namespace comvt
