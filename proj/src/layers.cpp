#include "comvt/layers.hpp"

#include <cmath>

namespace comvt {

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
               SeededRng& rng, bool with_bias) {
  weight_ = store.add(name + ".weight", init_linear_weight(in, out, rng));
  if (with_bias) bias_ = store.add(name + ".bias", Tensor::zeros({1, out}));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight_);
  return bias_.defined() ? add_row(y, bias_) : y;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim, bool with_bias) {
  gain_ = store.add(name + ".gain", Tensor::full({1, dim}, 1.0));
  if (with_bias) bias_ = store.add(name + ".bias", Tensor::zeros({1, dim}));
}

Mlp2::Mlp2(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
           std::size_t out, SeededRng& rng)
    : fc1_(store, name + ".fc1", in, hidden, rng), fc2_(store, name + ".fc2", hidden, out, rng) {}

Tensor sinusoidal_encoding(double position, std::size_t dim) {
  std::vector<double> pe(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double pair = static_cast<double>(i / 2 * 2);
    const double angle = position / std::pow(10000.0, pair / static_cast<double>(dim));
    pe[i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return Tensor::row(std::move(pe));
}

}  // namespace comvt
