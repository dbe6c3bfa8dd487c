#include "comvt/data.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "comvt/error.hpp"
#include "json.hpp"

namespace comvt {

using nlohmann::json;

std::string FupExample::transcript_text() const {
  std::string out;
  for (const auto& s : context) {
    if (!out.empty()) out += ' ';
    out += s.text;
  }
  return out;
}

namespace {

/// Index of the earliest sentence of a context ending at `last`, or -1 when
/// the prefix runs out before exceeding the minimum duration and short
/// prefixes are not kept.
long expand_backwards(std::span<const TimedSentence> sentences, std::size_t last, const SegmentOptions& options,
                      bool keep_short) {
  const double end = sentences[last].end_s;
  for (std::size_t j = last + 1; j-- > 0;) {
    if (end - sentences[j].start_s > options.min_duration_s) return static_cast<long>(j);
  }
  return keep_short ? 0 : -1;
}

void check_order(const Transcript& transcript) {
  for (std::size_t i = 0; i < transcript.sentences.size(); ++i) {
    const auto& s = transcript.sentences[i];
    if (!(s.end_s > s.start_s)) {
      throw DataError("transcript '" + transcript.video_id + "': sentence " + std::to_string(i) +
                      " has end_s <= start_s");
    }
    if (i > 0 && s.start_s < transcript.sentences[i - 1].end_s) {
      throw DataError("transcript '" + transcript.video_id + "': sentences overlap or are out of order at " +
                      std::to_string(i));
    }
  }
}

}  // namespace

std::vector<FupExample> segment_clips(const Transcript& transcript, const SegmentOptions& options) {
  check_order(transcript);
  const auto& s = transcript.sentences;
  std::vector<FupExample> out;
  for (std::size_t k = 1; k < s.size(); ++k) {
    const long first = expand_backwards(s, k - 1, options, options.keep_short_prefix);
    if (first < 0) continue;
    FupExample ex;
    ex.clip_id = transcript.video_id + "#" + std::to_string(k);
    ex.context.assign(s.begin() + first, s.begin() + static_cast<std::ptrdiff_t>(k));
    ex.future = s[k].text;
    ex.start_s = s[static_cast<std::size_t>(first)].start_s;
    ex.end_s = s[k - 1].end_s;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<NspExample> make_nsp_examples(const Transcript& transcript, std::span<const StepAnnotation> steps,
                                          const SegmentOptions& options) {
  check_order(transcript);
  const auto& s = transcript.sentences;
  std::vector<NspExample> out;
  for (std::size_t a = 0; a < steps.size(); ++a) {
    if (a > 0 && steps[a].start_s < steps[a - 1].start_s) throw DataError("step annotations are not time-ordered");
    std::size_t count = 0;
    while (count < s.size() && s[count].end_s <= steps[a].start_s) ++count;
    if (count == 0) continue;
    const long first = expand_backwards(s, count - 1, options, /*keep_short=*/true);
    NspExample ex;
    ex.clip_id = transcript.video_id + "@step" + std::to_string(a);
    ex.context.assign(s.begin() + first, s.begin() + static_cast<std::ptrdiff_t>(count));
    ex.start_s = s[static_cast<std::size_t>(first)].start_s;
    ex.end_s = s[count - 1].end_s;
    ex.step_class = steps[a].step_class;
    out.push_back(std::move(ex));
  }
  return out;
}

CandidateSet sample_candidates(const std::string& truth, std::span<const std::string> pool, std::size_t m,
                               SeededRng& rng) {
  if (m == 0) throw ContractError("sample_candidates: M must be at least 1");
  std::vector<std::string> negatives;
  {
    std::vector<std::string> sorted(pool.begin(), pool.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (auto& u : sorted)
      if (u != truth) negatives.push_back(std::move(u));
  }
  if (negatives.size() < m - 1) {
    throw DataError("sample_candidates: pool has " + std::to_string(negatives.size()) +
                    " distinct negatives, need " + std::to_string(m - 1) + " (short by " +
                    std::to_string(m - 1 - negatives.size()) + ")");
  }
  // Partial Fisher-Yates: the first m-1 slots become the sample.
  for (std::size_t i = 0; i + 1 < m; ++i) {
    std::size_t j = i + rng.uniform_index(negatives.size() - i);
    std::swap(negatives[i], negatives[j]);
  }
  negatives.resize(m - 1);
  CandidateSet set;
  set.true_index = rng.uniform_index(m);
  set.utterances = std::move(negatives);
  set.utterances.insert(set.utterances.begin() + static_cast<std::ptrdiff_t>(set.true_index), truth);
  return set;
}

std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, SeededRng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractError("subsample: fraction must be in (0, 1]");
  const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

TruncatedInputs truncate_inputs(std::span<const TokenId> body, ClipFeatures clip, std::size_t max_words,
                                std::size_t max_frames) {
  if (max_words < 3 || max_frames < 1) throw ContractError("truncate_inputs: limits too small");
  return {frame_tokens(body, max_words, /*pad=*/false), truncate_frames(std::move(clip), max_frames)};
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

void SyntheticSpec::validate() const {
  if (topics < 2) throw ConfigError("synthetic: need at least 2 topics");
  if (candidates < 1 || candidates > topics) throw ConfigError("synthetic: candidates must be in 1..topics");
  if (!(noise >= 0.0)) throw ConfigError("synthetic: noise must be >= 0");
  if (frames < 1 || objects_per_frame < 1 || d_scene < 1 || d_object < 1) {
    throw ConfigError("synthetic: frames, objects and dims must be positive");
  }
}

std::string topic_utterance(const std::string& word) { return "next we use the " + word; }

namespace {

const std::vector<std::string>& base_topic_words() {
  static const std::vector<std::string> words{
      "flour", "hammer", "scissors", "paint", "sugar",  "drill",  "glue",   "butter", "wrench", "yarn",
      "knife", "brush",  "ladder",   "oven",  "needle", "pliers", "tomato", "saw",    "tape",   "whisk"};
  return words;
}

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words{
      "okay", "so",   "now",   "we",   "are",  "going", "to",   "take", "this", "and",  "then", "just", "make",
      "sure", "it",   "looks", "good", "right", "here", "let",  "me",   "show", "you",  "how",  "that", "works",
      "a",    "bit",  "more",  "slowly", "see", "there", "again", "first", "careful", "nice"};
  return words;
}

std::string filler_sentence(SeededRng& rng) {
  const auto& words = filler_words();
  const std::size_t n = 4 + rng.uniform_index(4);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += words[rng.uniform_index(words.size())];
  }
  return out;
}

std::vector<double> draw_direction(std::size_t dim, SeededRng& rng) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace

SyntheticDataset synth_generate(const SyntheticSpec& spec, std::size_t n, SeededRng& rng) {
  spec.validate();
  SeededRng direction_rng = rng.fork(0);
  SeededRng topic_rng = rng.fork(1);
  SeededRng text_rng = rng.fork(2);
  SeededRng feature_rng = rng.fork(3);
  SeededRng candidate_rng = rng.fork(4);

  SyntheticDataset data;
  for (std::size_t k = 0; k < spec.topics; ++k) {
    data.topic_words.push_back(k < base_topic_words().size() ? base_topic_words()[k] : "item" + std::to_string(k));
  }
  std::vector<std::vector<double>> scene_dirs, object_dirs;
  for (std::size_t k = 0; k < spec.topics; ++k) {
    scene_dirs.push_back(draw_direction(spec.d_scene, direction_rng));
    object_dirs.push_back(draw_direction(spec.d_object, direction_rng));
  }
  std::vector<std::string> templates;
  for (const auto& w : data.topic_words) templates.push_back(topic_utterance(w));

  data.items.reserve(n);
  for (std::size_t e = 0; e < n; ++e) {
    SyntheticExample item;
    item.topic = topic_rng.uniform_index(spec.topics);

    FupExample& ex = item.example;
    ex.clip_id = "synth-" + std::to_string(e);
    const double sentence_s = 3.0;
    const std::size_t sentences = 2;
    for (std::size_t s = 0; s < sentences; ++s) {
      ex.context.push_back({filler_sentence(text_rng), s * sentence_s, (s + 1) * sentence_s});
    }
    if (spec.leak) ex.context.back().text += " with the " + data.topic_words[item.topic];
    ex.start_s = 0.0;
    ex.end_s = sentences * sentence_s;
    ex.future = templates[item.topic];

    ClipFeatures& clip = item.clip;
    clip.clip_id = ex.clip_id;
    for (std::size_t i = 0; i < spec.frames; ++i) {
      SceneFeature scene;
      scene.index = i + 1;
      scene.source_frame = i + 1;
      for (double mu : scene_dirs[item.topic]) scene.values.push_back(mu + spec.noise * feature_rng.normal());
      std::vector<ObjectFeature> objects;
      for (std::size_t j = 0; j < spec.objects_per_frame; ++j) {
        ObjectFeature obj;
        obj.frame = i + 1;
        obj.slot = j + 1;
        const double x0 = 0.5 * feature_rng.uniform(), y0 = 0.5 * feature_rng.uniform();
        obj.box = {x0, y0, x0 + 0.5 * feature_rng.uniform(), y0 + 0.5 * feature_rng.uniform()};
        for (double mu : object_dirs[item.topic]) obj.values.push_back(mu + spec.noise * feature_rng.normal());
        objects.push_back(std::move(obj));
      }
      clip.scenes.push_back(std::move(scene));
      clip.objects.push_back(std::move(objects));
    }
    item.candidates = sample_candidates(ex.future, templates, spec.candidates, candidate_rng);
    data.items.push_back(std::move(item));
  }
  return data;
}

// ---------------------------------------------------------------------------
// JSON Lines

namespace {

template <typename Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(text));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

json sentence_json(const TimedSentence& s) { return {{"text", s.text}, {"start_s", s.start_s}, {"end_s", s.end_s}}; }

TimedSentence sentence_from(const json& j) {
  return {j.at("text").get<std::string>(), j.at("start_s").get<double>(), j.at("end_s").get<double>()};
}

}  // namespace

std::vector<Transcript> read_transcripts(const std::filesystem::path& path) {
  std::vector<Transcript> out;
  for_each_record(path, [&](const json& j) {
    Transcript t;
    t.video_id = j.at("video_id").get<std::string>();
    for (const auto& s : j.at("sentences")) t.sentences.push_back(sentence_from(s));
    out.push_back(std::move(t));
  });
  return out;
}

void write_transcripts(const std::filesystem::path& path, std::span<const Transcript> transcripts) {
  auto out = open_out(path);
  for (const auto& t : transcripts) {
    json sentences = json::array();
    for (const auto& s : t.sentences) sentences.push_back(sentence_json(s));
    out << json{{"video_id", t.video_id}, {"sentences", sentences}}.dump() << '\n';
  }
}

std::vector<FupExample> read_examples(const std::filesystem::path& path) {
  std::vector<FupExample> out;
  for_each_record(path, [&](const json& j) {
    FupExample ex;
    ex.clip_id = j.at("clip_id").get<std::string>();
    for (const auto& s : j.at("context")) ex.context.push_back(sentence_from(s));
    ex.future = j.at("future").get<std::string>();
    ex.start_s = j.value("start_s", ex.context.empty() ? 0.0 : ex.context.front().start_s);
    ex.end_s = j.value("end_s", ex.context.empty() ? 0.0 : ex.context.back().end_s);
    ex.features_path = j.value("features", std::string{});
    out.push_back(std::move(ex));
  });
  return out;
}

void write_examples(const std::filesystem::path& path, std::span<const FupExample> examples) {
  auto out = open_out(path);
  for (const auto& ex : examples) {
    json context = json::array();
    for (const auto& s : ex.context) context.push_back(sentence_json(s));
    json rec{{"clip_id", ex.clip_id}, {"context", context}, {"future", ex.future},
             {"start_s", ex.start_s}, {"end_s", ex.end_s}};
    if (!ex.features_path.empty()) rec["features"] = ex.features_path;
    out << rec.dump() << '\n';
  }
}

std::vector<CandidateRecord> read_candidates(const std::filesystem::path& path) {
  std::vector<CandidateRecord> out;
  for_each_record(path, [&](const json& j) {
    CandidateRecord rec;
    rec.clip_id = j.at("clip_id").get<std::string>();
    rec.candidates.utterances = j.at("candidates").get<std::vector<std::string>>();
    const auto idx = j.at("true_index").get<long long>();
    if (idx < 0) throw ContractError("true_index must be >= 0");
    rec.candidates.true_index = static_cast<std::size_t>(idx);
    rec.candidates.validate();
    out.push_back(std::move(rec));
  });
  return out;
}

void write_candidates(const std::filesystem::path& path, std::span<const CandidateRecord> records) {
  auto out = open_out(path);
  for (const auto& r : records) {
    out << json{{"clip_id", r.clip_id}, {"candidates", r.candidates.utterances}, {"true_index", r.candidates.true_index}}
               .dump()
        << '\n';
  }
}

}  // namespace comvt
