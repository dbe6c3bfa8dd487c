#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "comvt/params.hpp"
#include "comvt/rng.hpp"
#include "comvt/tensor.hpp"

namespace comvt {

/// Linear warmup to base_lr, then stepwise decay every decay_interval steps.
struct LrSchedule {
  std::uint64_t warmup_steps = 50;
  std::uint64_t decay_interval = 1000;
  double decay_factor = 0.95;
  double base_lr = 1e-3;

  void validate() const;
};

double lr_at_step(const LrSchedule& schedule, std::uint64_t step);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moment buffers keyed by parameter name.
struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

/// One bias-corrected Adam update on every parameter of `params` using the
/// gradients currently accumulated on them.
///
/// All gradients are checked before anything is modified; a non-finite
/// gradient raises NumericError naming the parameter and leaves params and
/// state untouched.
void adam_step(ParamStore& params, OptimizerState& state, double lr);

/// A single parameter coordinate.
struct Coordinate {
  std::size_t param = 0;  // index into ParamStore::entries()
  std::size_t index = 0;  // flat element index
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares analytic gradients of `loss_fn` with central differences
/// (f(w+h) - f(w-h)) / 2h at the given coordinates. Relative error per
/// coordinate is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult finite_diff_check(const std::function<Tensor()>& loss_fn, ParamStore& params,
                                  std::span<const Coordinate> coords, double h = 1e-5);

/// Samples `count` coordinates with at least one from every parameter tensor
/// (when count allows) and the rest spread uniformly over all elements.
std::vector<Coordinate> sample_coordinates(const ParamStore& params, std::size_t count,
                                           SeededRng& rng);

}  // namespace comvt
