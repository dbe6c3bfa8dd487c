#include "comvt/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "comvt/error.hpp"

namespace comvt {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return specials;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() : Vocab(special_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& specials = special_tokens();
  if (tokens_.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens_.begin())) {
    throw ContractError("Vocab: tokens must begin with [PAD] [UNK] [CLS] [SEP] [MASK]");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ContractError("Vocab: duplicate token '" + tokens_[i] + "'");
    }
  }
}

TokenId Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("Vocab: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocab file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocab file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  try {
    return Vocab(std::move(tokens));
  } catch (const ContractError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Tokenization

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      current.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return words;
}

Vocab build_vocab(std::span<const std::string> corpus, std::size_t min_count) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  if (min_count == 0) throw ContractError("build_vocab: min_count must be positive");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : corpus)
    for (auto& w : split_words(line)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> kept;
  const auto& specials = special_tokens();
  for (auto& [w, c] : counts) {
    if (c >= min_count && std::find(specials.begin(), specials.end(), w) == specials.end()) {
      kept.emplace_back(w, c);
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens = specials;
  for (auto& [w, c] : kept) tokens.push_back(w);
  return Vocab(std::move(tokens));
}

std::size_t TokenSequence::real_length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

TokenSequence frame_tokens(std::span<const TokenId> body, std::size_t max_len, bool pad) {
  if (max_len < 3) throw ContractError("tokenize: max_len must be at least 3");
  const std::size_t keep = std::min(body.size(), max_len - 2);
  TokenSequence seq;
  seq.ids.reserve(pad ? max_len : keep + 2);
  seq.ids.push_back(kClsId);
  seq.ids.insert(seq.ids.end(), body.end() - static_cast<std::ptrdiff_t>(keep), body.end());
  seq.ids.push_back(kSepId);
  seq.mask.assign(seq.ids.size(), true);
  if (pad) {
    seq.ids.resize(max_len, kPadId);
    seq.mask.resize(max_len, false);
  }
  return seq;
}

TokenSequence tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len, bool pad) {
  std::vector<TokenId> body;
  for (const auto& w : split_words(text)) body.push_back(vocab.id(w));
  return frame_tokens(body, max_len, pad);
}

// ---------------------------------------------------------------------------
// Encoders

TextEncoder::TextEncoder(ParamStore& store, const std::string& name, const TextEncoderConfig& config,
                         SeededRng& rng)
    : config_(config) {
  if (config.vocab_size < kSpecialCount) throw ConfigError("text encoder: vocab too small");
  if (config.max_len < 3) throw ConfigError("text encoder: max_len must be at least 3");
  token_embedding_ = store.add(name + ".token_embedding",
                               init_normal({config.vocab_size, config.d_model}, 0.5, rng));
  position_embedding_ = store.add(name + ".position_embedding",
                                  init_normal({config.max_len, config.d_model}, 0.1, rng));
  TrmConfig trm{config.d_model, config.heads, config.ffn_dim, false};
  for (std::size_t l = 0; l < config.layers; ++l) {
    layers_.emplace_back(store, name + ".layer" + std::to_string(l), trm, rng);
  }
  if (config.output_norm) {
    output_norm_ = LayerNorm(store, name + ".output_norm", config.d_model, config.output_norm_bias);
  }
}

Tensor TextEncoder::encode(const TokenSequence& seq) const {
  if (seq.ids.size() != seq.mask.size()) throw ContractError("encode_text: ids/mask length mismatch");
  if (seq.ids.size() > config_.max_len) {
    throw ContractError("encode_text: sequence longer than encoder max_len");
  }
  std::vector<std::size_t> ids, positions;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const TokenId id = seq.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw ContractError("encode_text: token id " + std::to_string(id) + " out of vocab range");
    }
    if (!seq.mask[i]) continue;
    ids.push_back(static_cast<std::size_t>(id));
    positions.push_back(i);
  }
  if (ids.empty()) throw ContractError("encode_text: sequence has no real tokens");
  // Padding can neither attend nor be attended, so only real positions are run.
  Tensor x = gather_rows(token_embedding_, ids) + gather_rows(position_embedding_, positions);
  for (const auto& layer : layers_) x = layer(x, x);
  if (config_.output_norm) x = output_norm_(x);
  return x;
}

Tensor encode_candidate(std::string_view utterance, const Vocab& vocab, const TextEncoder& encoder) {
  const TokenSequence seq = tokenize(utterance, vocab, encoder.config().max_len, /*pad=*/false);
  return slice_rows(encoder.encode(seq), 0, 1);
}

Tensor encode_candidates(std::span<const std::string> utterances, const Vocab& vocab,
                         const TextEncoder& encoder) {
  if (utterances.empty()) throw ContractError("encode_candidates: no utterances");
  std::vector<Tensor> rows;
  rows.reserve(utterances.size());
  for (const auto& u : utterances) rows.push_back(encode_candidate(u, vocab, encoder));
  return rows.size() == 1 ? rows.front() : concat_rows(rows);
}

// ---------------------------------------------------------------------------
// Masking

std::pair<TokenSequence, MaskingPlan> apply_mlm_mask(const TokenSequence& seq, std::size_t vocab_size,
                                                     SeededRng& rng, double select_p,
                                                     const MaskBranches& branches) {
  if (select_p < 0.0 || select_p > 1.0) throw ContractError("apply_mlm_mask: select_p outside [0, 1]");
  const double total = branches.mask_token + branches.random_token + branches.unchanged;
  if (branches.mask_token < 0 || branches.random_token < 0 || branches.unchanged < 0 || total <= 0) {
    throw ContractError("apply_mlm_mask: invalid branch probabilities");
  }
  TokenSequence masked = seq;
  MaskingPlan plan;
  plan.actions.assign(seq.ids.size(), MaskAction::keep);
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const TokenId id = seq.ids[i];
    if (!seq.mask[i] || (id >= 0 && static_cast<std::size_t>(id) < kSpecialCount)) continue;
    if (!rng.bernoulli(select_p)) continue;
    const double u = rng.uniform() * total;
    MaskAction action;
    if (u < branches.mask_token) {
      action = MaskAction::mask_token;
      masked.ids[i] = kMaskId;
    } else if (u < branches.mask_token + branches.random_token) {
      action = MaskAction::random_token;
      masked.ids[i] = vocab_size > kSpecialCount
                          ? static_cast<TokenId>(kSpecialCount + rng.uniform_index(vocab_size - kSpecialCount))
                          : kMaskId;
    } else {
      action = MaskAction::unchanged;
    }
    plan.actions[i] = action;
    plan.positions.push_back(i);
    plan.targets.push_back(id);
  }
  return {std::move(masked), std::move(plan)};
}

}  // namespace comvt
