#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "comvt/layers.hpp"
#include "comvt/params.hpp"
#include "comvt/rng.hpp"
#include "comvt/transformer.hpp"

namespace comvt {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kMaskId = 4;
inline constexpr std::size_t kSpecialCount = 5;

/// Dense token table with the five specials at fixed ids 0..4.
class Vocab {
 public:
  Vocab();
  /// `tokens` must begin with the five specials in id order.
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  /// Total lookup: unknown strings map to [UNK].
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool is_special(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < kSpecialCount; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// One token per line; line number is the id.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Lowercases and splits on whitespace; ASCII punctuation becomes its own token.
std::vector<std::string> split_words(std::string_view text);

/// Tokens occurring at least `min_count` times, ordered by (count desc, string asc).
Vocab build_vocab(std::span<const std::string> corpus, std::size_t min_count = 1);

struct TokenSequence {
  std::vector<TokenId> ids;
  /// true for real tokens, false for padding.
  std::vector<bool> mask;

  std::size_t real_length() const;
};

/// Wraps body ids as [CLS] body [SEP]. Over-long bodies lose tokens from the
/// front; the specials are always kept. With `pad`, the result is padded with
/// [PAD] to max_len.
TokenSequence frame_tokens(std::span<const TokenId> body, std::size_t max_len, bool pad = true);

TokenSequence tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len, bool pad = true);

struct TextEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_dim = 256;
  std::size_t max_len = 128;
  /// Apply a final layer norm to the outputs.
  bool output_norm = false;
  bool output_norm_bias = true;
};

/// Token + learned position embeddings followed by self-attention TRM layers.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParamStore& store, const std::string& name, const TextEncoderConfig& config,
              SeededRng& rng);

  /// One output row per real (non-pad) position, in position order.
  Tensor encode(const TokenSequence& seq) const;

  const TextEncoderConfig& config() const { return config_; }
  const Tensor& token_embedding() const { return token_embedding_; }
  const Tensor& position_embedding() const { return position_embedding_; }
  const std::vector<TrmBlock>& layers() const { return layers_; }

 private:
  TextEncoderConfig config_;
  Tensor token_embedding_;
  Tensor position_embedding_;
  std::vector<TrmBlock> layers_;
  LayerNorm output_norm_;
};

/// Contextualized embeddings e_i of an input sequence.
inline Tensor encode_text(const TokenSequence& seq, const TextEncoder& encoder) {
  return encoder.encode(seq);
}

/// [CLS]-position output of the candidate encoder for "[CLS] u [SEP]" (1 x d).
Tensor encode_candidate(std::string_view utterance, const Vocab& vocab, const TextEncoder& encoder);

/// Stacked candidate embeddings, one row per utterance in input order.
Tensor encode_candidates(std::span<const std::string> utterances, const Vocab& vocab,
                         const TextEncoder& encoder);

enum class MaskAction : std::uint8_t { keep, mask_token, random_token, unchanged };

struct MaskingPlan {
  std::vector<MaskAction> actions;   // one per sequence position
  std::vector<std::size_t> positions;  // selected positions, ascending
  std::vector<TokenId> targets;      // original ids at `positions`

  bool empty() const { return positions.empty(); }
};

struct MaskBranches {
  double mask_token = 0.8;
  double random_token = 0.1;
  double unchanged = 0.1;
};

/// BERT-style masking. Each real non-special token is selected with
/// probability select_p; a selected token becomes [MASK], a random
/// non-special token, or stays as is, per `branches`.
std::pair<TokenSequence, MaskingPlan> apply_mlm_mask(const TokenSequence& seq, std::size_t vocab_size,
                                                     SeededRng& rng, double select_p = 0.15,
                                                     const MaskBranches& branches = {});

}  // namespace comvt
