#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "comvt/layers.hpp"

namespace comvt {

struct TrmConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  /// Cross blocks normalize queries and key/values with separate layer norms.
  bool cross = false;
};

/// Pre-norm transformer block TRM(Q, KV):
///   X = Q + MHA(norm_q(Q), norm_kv(KV))
///   Y = X + FFN(norm_ff(X))
/// Key projections carry no bias: a shared key offset cannot change any
/// attention distribution.
class TrmBlock {
 public:
  TrmBlock() = default;
  TrmBlock(ParamStore& store, const std::string& name, const TrmConfig& config, SeededRng& rng);

  /// `kv_mask`, when non-empty, marks which key/value rows may be attended.
  Tensor operator()(const Tensor& queries, const Tensor& keys_values,
                    std::span<const bool> kv_mask = {}) const;

  const TrmConfig& config() const { return config_; }
  const std::string& name() const { return name_; }
  const Linear& query() const { return query_; }
  const Linear& key() const { return key_; }
  const Linear& value() const { return value_; }
  const Linear& output() const { return output_; }
  const Mlp2& ffn() const { return ffn_; }

 private:
  TrmConfig config_;
  std::string name_;
  LayerNorm norm_q_;
  LayerNorm norm_kv_;
  LayerNorm norm_ff_;
  Linear query_;
  Linear key_;
  Linear value_;
  Linear output_;
  Mlp2 ffn_;
};

/// Multi-head attention of already-normalized inputs (no residual).
Tensor multi_head_attention(const Tensor& queries, const Tensor& keys_values, const Linear& wq,
                            const Linear& wk, const Linear& wv, const Linear& wo, std::size_t heads,
                            std::span<const bool> kv_mask = {});

}  // namespace comvt
