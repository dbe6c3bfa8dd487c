#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "comvt/params.hpp"
#include "comvt/rng.hpp"
#include "comvt/tensor.hpp"

namespace comvt {

/// y = x W + b, W: in x out.
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, SeededRng& rng,
         bool with_bias = true);

  Tensor operator()(const Tensor& x) const;

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  std::size_t in_features() const { return weight_.shape()[0]; }
  std::size_t out_features() const { return weight_.shape()[1]; }

 private:
  Tensor weight_;
  Tensor bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim, bool with_bias = true);

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain_, bias_, eps_); }

  const Tensor& gain() const { return gain_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor gain_;
  Tensor bias_;
  double eps_ = 1e-5;
};

/// Two-layer perceptron with GELU between the layers.
class Mlp2 {
 public:
  Mlp2() = default;
  Mlp2(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
       SeededRng& rng);

  Tensor operator()(const Tensor& x) const { return fc2_(gelu(fc1_(x))); }

  const Linear& fc1() const { return fc1_; }
  const Linear& fc2() const { return fc2_; }

 private:
  Linear fc1_;
  Linear fc2_;
};

/// Sinusoidal encoding of a (0-based) position: even dims sin, odd dims cos,
/// frequencies 10000^(-2k/dim). Returns a 1 x dim constant.
Tensor sinusoidal_encoding(double position, std::size_t dim);

}  // namespace comvt
