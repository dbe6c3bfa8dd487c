#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "comvt/transformer.hpp"

namespace comvt {

/// TRM(Q, KV): pre-norm attention of Q over KV plus feed-forward.
inline Tensor trm(const Tensor& queries, const Tensor& keys_values, const TrmBlock& params,
                  std::span<const bool> kv_mask = {}) {
  return params(queries, keys_values, kv_mask);
}

struct StreamMasks {
  std::span<const bool> visual;  // empty: all visual tokens valid
  std::span<const bool> text;    // empty: all text tokens valid
};

/// Two streams of two TRM blocks each:
///   V^ = TRM(V, E), V' = TRM(V^, V^)
///   E^ = TRM(E, V), E' = TRM(E^, E^)
/// Both cross steps read this block's input sets.
class CoTrmBlock {
 public:
  CoTrmBlock() = default;
  CoTrmBlock(ParamStore& store, const std::string& name, std::size_t d_model, std::size_t heads,
             std::size_t ffn_dim, SeededRng& rng);

  std::pair<Tensor, Tensor> operator()(const Tensor& visual, const Tensor& text,
                                       const StreamMasks& masks = {}) const;

  const TrmBlock& visual_cross() const { return visual_cross_; }
  const TrmBlock& visual_self() const { return visual_self_; }
  const TrmBlock& text_cross() const { return text_cross_; }
  const TrmBlock& text_self() const { return text_self_; }

 private:
  TrmBlock visual_cross_;
  TrmBlock visual_self_;
  TrmBlock text_cross_;
  TrmBlock text_self_;
};

/// S co-attentional blocks with distinct parameters.
class CoTrmStack {
 public:
  CoTrmStack() = default;
  CoTrmStack(ParamStore& store, const std::string& name, std::size_t depth, std::size_t d_model,
             std::size_t heads, std::size_t ffn_dim, SeededRng& rng);

  /// Returns (V^(S), E^(S)). Depth 0 is the identity.
  std::pair<Tensor, Tensor> operator()(const Tensor& visual, const Tensor& text,
                                       const StreamMasks& masks = {}) const;

  std::size_t depth() const { return blocks_.size(); }
  const std::vector<CoTrmBlock>& blocks() const { return blocks_; }
  /// Number of TRM parameter groups (4 per block).
  std::size_t trm_count() const { return 4 * blocks_.size(); }

 private:
  std::vector<CoTrmBlock> blocks_;
};

inline std::pair<Tensor, Tensor> cotrm_block(const Tensor& visual, const Tensor& text, const CoTrmBlock& params,
                                             const StreamMasks& masks = {}) {
  return params(visual, text, masks);
}

inline std::pair<Tensor, Tensor> cotrm_stack(const Tensor& visual, const Tensor& text, const CoTrmStack& params,
                                             const StreamMasks& masks = {}) {
  return params(visual, text, masks);
}

}  // namespace comvt
