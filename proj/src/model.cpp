#include "comvt/model.hpp"

#include <charconv>

#include "comvt/error.hpp"

namespace comvt {

Variant parse_variant(std::string_view name) {
  if (name == "comvt") return Variant::comvt;
  if (name == "comvt-scene-only") return Variant::comvt_scene_only;
  if (name == "text-only") return Variant::text_only;
  if (name == "vision-only") return Variant::vision_only;
  if (name == "single-stream") return Variant::single_stream;
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::comvt: return "comvt";
    case Variant::comvt_scene_only: return "comvt-scene-only";
    case Variant::text_only: return "text-only";
    case Variant::vision_only: return "vision-only";
    case Variant::single_stream: return "single-stream";
  }
  return "comvt";
}

std::size_t AnchorPolicy::resolve(std::size_t frames) const {
  if (frames == 0) throw ContractError("anchor: clip has no frames");
  switch (kind) {
    case Kind::last: return frames;
    case Kind::first: return 1;
    case Kind::fixed:
      if (frame < 1 || frame > frames) {
        throw ContractError("anchor frame " + std::to_string(frame) + " outside 1.." + std::to_string(frames));
      }
      return frame;
  }
  return frames;
}

AnchorPolicy AnchorPolicy::parse(std::string_view text) {
  if (text == "last") return {Kind::last, 1};
  if (text == "first") return {Kind::first, 1};
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || value == 0) {
    throw ConfigError("anchor must be 'last', 'first' or a frame number >= 1, got '" + std::string(text) + "'");
  }
  return {Kind::fixed, value};
}

std::string AnchorPolicy::to_string() const {
  switch (kind) {
    case Kind::last: return "last";
    case Kind::first: return "first";
    case Kind::fixed: return std::to_string(frame);
  }
  return "last";
}

void ModelConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0) throw ConfigError("model: heads must divide d_model");
  if (ffn_multiplier == 0) throw ConfigError("model: ffn_multiplier must be positive");
  if (d_scene == 0 || d_object == 0 || objects_per_frame == 0) throw ConfigError("model: visual dims must be positive");
  if (max_words < 3) throw ConfigError("model: max_words must be at least 3");
  if (max_frames == 0) throw ConfigError("model: max_frames must be positive");
  if (d_model % 2 != 0) throw ConfigError("model: d_model must be even for the sinusoidal encoding");
}

Model::Model(const ModelConfig& config, Vocab vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)), params_(std::make_unique<ParamStore>()) {
  config_.validate();
  SeededRng root(seed);
  ParamStore& store = *params_;
  const std::size_t d = config_.d_model;

  TextEncoderConfig text{vocab_.size(), d, config_.heads, config_.text_layers, config_.ffn_dim(), config_.max_words};
  SeededRng input_rng = root.fork(1);
  input_encoder_ = TextEncoder(store, "text_encoder", text, input_rng);

  // The candidate embedding is layer-normalized without a bias: a shared
  // offset on every candidate cannot change the ranking.
  TextEncoderConfig cand = text;
  cand.layers = config_.candidate_layers;
  cand.output_norm = true;
  cand.output_norm_bias = false;
  SeededRng cand_rng = root.fork(2);
  candidate_encoder_ = TextEncoder(store, "candidate_encoder", cand, cand_rng);

  SeededRng visual_rng = root.fork(3);
  SeededRng fusion_rng = root.fork(4);
  const VisualConfig visual{d, config_.d_scene, config_.d_object, config_.objects_per_frame, config_.max_frames};
  switch (config_.variant) {
    case Variant::comvt:
    case Variant::vision_only:
      visual_encoder_ = VisualEncoder(store, "visual", visual, visual_rng);
      fusion_ = CoTrmStack(store, "fusion", config_.fusion_depth, d, config_.heads, config_.ffn_dim(), fusion_rng);
      break;
    case Variant::comvt_scene_only:
      scene_projection_ = Linear(store, "visual.scene_projection", config_.d_scene, d, visual_rng);
      fusion_ = CoTrmStack(store, "fusion", config_.fusion_depth, d, config_.heads, config_.ffn_dim(), fusion_rng);
      break;
    case Variant::single_stream: {
      visual_encoder_ = VisualEncoder(store, "visual", visual, visual_rng);
      modality_embedding_ = store.add("single_stream.modality_embedding", init_normal({2, d}, 0.1, fusion_rng));
      const TrmConfig trm{d, config_.heads, config_.ffn_dim(), false};
      for (std::size_t l = 0; l < 2 * config_.fusion_depth; ++l) {
        single_stream_.emplace_back(store, "single_stream.layer" + std::to_string(l), trm, fusion_rng);
      }
      break;
    }
    case Variant::text_only:
      break;
  }

  SeededRng head_rng = root.fork(5);
  mlm_head_ = MlmHead(store, "mlm_head", d, vocab_.size(), head_rng);
  if (config_.nsp_classes > 0) {
    SeededRng nsp_rng = root.fork(6);
    nsp_head_ = NspHead(store, "nsp_head", d, d, config_.nsp_classes, nsp_rng);
  }
}

TokenSequence Model::prepare_text(std::string_view transcript) const {
  if (config_.variant == Variant::vision_only) return frame_tokens({}, config_.max_words, /*pad=*/false);
  return tokenize(transcript, vocab_, config_.max_words, /*pad=*/false);
}

Tensor Model::visual_tokens(const ClipFeatures& clip) const {
  if (!uses_visual()) throw ContractError("visual_tokens: text-only model has no visual stream");
  if (clip.frames() == 0) throw ContractError("visual_tokens: clip has no frames");
  if (clip.frames() > config_.max_frames) return visual_tokens(truncate_frames(clip, config_.max_frames));

  if (config_.variant == Variant::comvt_scene_only) {
    std::vector<double> scenes, sinus;
    for (const auto& s : clip.scenes) {
      if (s.values.size() != config_.d_scene) throw ContractError("visual_tokens: scene width mismatch");
      scenes.insert(scenes.end(), s.values.begin(), s.values.end());
      const Tensor pe = sinusoidal_encoding(static_cast<double>(s.index - 1), config_.d_model);
      sinus.insert(sinus.end(), pe.data().begin(), pe.data().end());
    }
    const std::size_t f = clip.frames();
    return scene_projection_(Tensor::matrix(f, config_.d_scene, std::move(scenes))) +
           Tensor::matrix(f, config_.d_model, std::move(sinus));
  }
  const Tensor grid = combine_clip(clip, visual_encoder_);
  return compact_extract(grid, clip.frames(), config_.objects_per_frame, config_.anchor.resolve(clip.frames()),
                         visual_encoder_)
      .features;
}

ForwardResult Model::forward(const TokenSequence& tokens, const ClipFeatures* clip) const {
  const TokenSequence dummy = frame_tokens({}, config_.max_words, /*pad=*/false);
  const TokenSequence& text_in = config_.variant == Variant::vision_only ? dummy : tokens;
  const Tensor text0 = input_encoder_.encode(text_in);
  if (config_.variant == Variant::text_only) return {slice_rows(text0, 0, 1), text0, {}};
  if (clip == nullptr) throw ContractError("forward: visual variant needs clip features");
  const Tensor visual0 = visual_tokens(*clip);

  if (config_.variant == Variant::single_stream) {
    const std::size_t n = text0.rows();
    const Tensor parts[] = {add_row(text0, slice_rows(modality_embedding_, 0, 1)),
                            add_row(visual0, slice_rows(modality_embedding_, 1, 2))};
    Tensor x = concat_rows(parts);
    for (const auto& layer : single_stream_) x = layer(x, x);
    const Tensor text_out = slice_rows(x, 0, n);
    return {slice_rows(x, 0, 1), text_out, slice_rows(x, n, x.rows())};
  }
  auto [visual_out, text_out] = fusion_(visual0, text0);
  return {slice_rows(text_out, 0, 1), text_out, visual_out};
}

Tensor Model::embed_candidates(std::span<const std::string> utterances) const {
  return encode_candidates(utterances, vocab_, candidate_encoder_);
}

std::size_t Model::fusion_trm_count() const {
  return config_.variant == Variant::single_stream ? single_stream_.size() : fusion_.trm_count();
}

std::unique_ptr<Model> build_model(Variant variant, ModelConfig config, Vocab vocab, std::uint64_t seed) {
  config.variant = variant;
  return std::make_unique<Model>(config, std::move(vocab), seed);
}

std::vector<std::size_t> qa_rank(const Model& model, std::string_view transcript, std::string_view question,
                                 const ClipFeatures* clip, std::span<const std::string> answer_pool) {
  if (answer_pool.empty()) throw ContractError("qa_rank: empty answer pool");
  NoGradGuard no_grad;
  const TokenSequence tokens = model.prepare_text(qa_input_text(transcript, question));
  const ForwardResult out = model.forward(tokens, clip);
  const Tensor logits = nup_logits(out.pooled, model.embed_candidates(answer_pool));
  return rank_descending(logits.data());
}

}  // namespace comvt
