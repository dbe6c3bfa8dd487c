#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "comvt/fusion.hpp"
#include "comvt/heads.hpp"
#include "comvt/text.hpp"
#include "comvt/visual.hpp"

namespace comvt {

enum class Variant { comvt, comvt_scene_only, text_only, vision_only, single_stream };

Variant parse_variant(std::string_view name);
std::string to_string(Variant variant);

/// Which frame's objects act as compact-extraction queries.
struct AnchorPolicy {
  enum class Kind { last, first, fixed } kind = Kind::last;
  std::size_t frame = 1;  // used by Kind::fixed, 1-based

  std::size_t resolve(std::size_t frames) const;
  static AnchorPolicy parse(std::string_view text);
  std::string to_string() const;
};

struct ModelConfig {
  Variant variant = Variant::comvt;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t text_layers = 2;
  std::size_t candidate_layers = 2;
  std::size_t ffn_multiplier = 4;
  std::size_t fusion_depth = 2;
  std::size_t d_scene = 32;
  std::size_t d_object = 32;
  std::size_t objects_per_frame = 4;
  std::size_t max_words = 128;
  std::size_t max_frames = 30;
  AnchorPolicy anchor;
  /// Number of next-step classes; 0 builds no classifier head.
  std::size_t nsp_classes = 0;

  std::size_t ffn_dim() const { return ffn_multiplier * d_model; }
  void validate() const;
};

struct ForwardResult {
  Tensor pooled;       // 1 x d, the [CLS] slot of the final text stream
  Tensor text_states;  // one row per real text token
  Tensor visual_states;  // final visual stream; undefined for text-only
};

/// An assembled model: parameters, vocabulary and variant wiring.
class Model {
 public:
  Model(const ModelConfig& config, Vocab vocab, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  ParamStore& params() { return *params_; }
  const ParamStore& params() const { return *params_; }

  bool uses_visual() const { return config_.variant != Variant::text_only; }

  /// Tokens fed to the input encoder. The vision-only variant always sees
  /// exactly "[CLS] [SEP]".
  TokenSequence prepare_text(std::string_view transcript) const;

  /// Initial visual set V^(0) for the visual variants.
  Tensor visual_tokens(const ClipFeatures& clip) const;

  ForwardResult forward(const TokenSequence& tokens, const ClipFeatures* clip) const;

  /// g_cand for each utterance, stacked.
  Tensor embed_candidates(std::span<const std::string> utterances) const;

  const TextEncoder& input_encoder() const { return input_encoder_; }
  const TextEncoder& candidate_encoder() const { return candidate_encoder_; }
  const VisualEncoder& visual_encoder() const { return visual_encoder_; }
  const CoTrmStack& fusion() const { return fusion_; }
  const std::vector<TrmBlock>& single_stream() const { return single_stream_; }
  const MlmHead& mlm_head() const { return mlm_head_; }
  const NspHead* nsp_head() const { return config_.nsp_classes ? &nsp_head_ : nullptr; }

  /// Number of TRM blocks in the fusion stage (4 per co-attention block).
  std::size_t fusion_trm_count() const;

 private:
  ModelConfig config_;
  Vocab vocab_;
  std::unique_ptr<ParamStore> params_;
  TextEncoder input_encoder_;
  TextEncoder candidate_encoder_;
  VisualEncoder visual_encoder_;
  Linear scene_projection_;
  CoTrmStack fusion_;
  Tensor modality_embedding_;
  std::vector<TrmBlock> single_stream_;
  MlmHead mlm_head_;
  NspHead nsp_head_;
};

/// Builds the model for `variant`, overriding config.variant.
std::unique_ptr<Model> build_model(Variant variant, ModelConfig config, Vocab vocab, std::uint64_t seed);

/// Ranks `answer_pool` for a QA input (transcript followed by question).
std::vector<std::size_t> qa_rank(const Model& model, std::string_view transcript, std::string_view question,
                                 const ClipFeatures* clip, std::span<const std::string> answer_pool);

}  // namespace comvt
