#include "comvt/transformer.hpp"

#include "comvt/error.hpp"

namespace comvt {

TrmBlock::TrmBlock(ParamStore& store, const std::string& name, const TrmConfig& config,
                   SeededRng& rng)
    : config_(config), name_(name) {
  if (config.heads == 0 || config.d_model % config.heads != 0) {
    throw ConfigError("TRM '" + name + "': head count must divide model dim");
  }
  const std::size_t d = config.d_model;
  norm_q_ = LayerNorm(store, name + ".norm_q", d);
  if (config.cross) norm_kv_ = LayerNorm(store, name + ".norm_kv", d);
  norm_ff_ = LayerNorm(store, name + ".norm_ff", d);
  query_ = Linear(store, name + ".attn.query", d, d, rng);
  key_ = Linear(store, name + ".attn.key", d, d, rng, /*with_bias=*/false);
  value_ = Linear(store, name + ".attn.value", d, d, rng);
  output_ = Linear(store, name + ".attn.output", d, d, rng);
  ffn_ = Mlp2(store, name + ".ffn", d, config.ffn_dim, d, rng);
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& keys_values, const Linear& wq,
                            const Linear& wk, const Linear& wv, const Linear& wo, std::size_t heads,
                            std::span<const bool> kv_mask) {
  const Tensor q = wq(queries);
  const Tensor k = wk(keys_values);
  const Tensor v = wv(keys_values);
  if (heads == 1) return wo(scaled_dot_attention(q, k, v, kv_mask));
  const std::size_t width = q.cols() / heads;
  std::vector<Tensor> per_head;
  per_head.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * width, e = b + width;
    per_head.push_back(
        scaled_dot_attention(slice_cols(q, b, e), slice_cols(k, b, e), slice_cols(v, b, e), kv_mask));
  }
  return wo(concat_cols(per_head));
}

Tensor TrmBlock::operator()(const Tensor& queries, const Tensor& keys_values,
                            std::span<const bool> kv_mask) const {
  if (!kv_mask.empty() && kv_mask.size() != keys_values.rows()) {
    throw ContractError("TRM '" + name_ + "': mask length does not match key/value count");
  }
  const Tensor qn = norm_q_(queries);
  Tensor kvn;
  if (keys_values.node() == queries.node()) {
    kvn = config_.cross ? norm_kv_(keys_values) : qn;
  } else {
    kvn = config_.cross ? norm_kv_(keys_values) : norm_q_(keys_values);
  }
  const Tensor attended =
      multi_head_attention(qn, kvn, query_, key_, value_, output_, config_.heads, kv_mask);
  const Tensor x = queries + attended;
  return x + ffn_(norm_ff_(x));
}

}  // namespace comvt
