#include "comvt/optim.hpp"

#include <algorithm>
#include <cmath>

#include "comvt/error.hpp"

namespace comvt {

void LrSchedule::validate() const {
  if (warmup_steps == 0) throw ConfigError("schedule: warmup_steps must be positive");
  if (decay_interval == 0) throw ConfigError("schedule: decay_interval must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("schedule: decay_factor must be in (0, 1]");
  if (!(base_lr > 0.0)) throw ConfigError("schedule: base_lr must be positive");
}

double lr_at_step(const LrSchedule& schedule, std::uint64_t step) {
  if (step < schedule.warmup_steps) {
    return schedule.base_lr * static_cast<double>(step) / static_cast<double>(schedule.warmup_steps);
  }
  const std::uint64_t decays = (step - schedule.warmup_steps) / schedule.decay_interval;
  return schedule.base_lr * std::pow(schedule.decay_factor, static_cast<double>(decays));
}

void adam_step(ParamStore& params, OptimizerState& state, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("adam_step: learning rate must be >= 0");
  for (const auto& e : params.entries()) {
    for (double g : e.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter '" + e.name + "'");
    }
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (const auto& e : params.entries()) {
    Tensor p = e.tensor;
    auto grad = p.grad();
    auto& m = state.first_moment[e.name];
    auto& v = state.second_moment[e.name];
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    if (m.size() != p.size()) throw ContractError("adam_step: moment shape mismatch for '" + e.name + "'");
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      data[i] -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

GradCheckResult finite_diff_check(const std::function<Tensor()>& loss_fn, ParamStore& params,
                                  std::span<const Coordinate> coords, double h) {
  params.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);
  std::vector<double> analytic;
  analytic.reserve(coords.size());
  for (const auto& c : coords) analytic.push_back(params.entries().at(c.param).tensor.grad()[c.index]);

  GradCheckResult result;
  result.coordinates = coords.size();
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const auto& entry = params.entries()[coords[k].param];
    Tensor p = entry.tensor;
    auto data = p.mutable_data();
    const double original = data[coords[k].index];
    data[coords[k].index] = original + h;
    const double plus = loss_fn().item();
    data[coords[k].index] = original - h;
    const double minus = loss_fn().item();
    data[coords[k].index] = original;
    const double numeric = (plus - minus) / (2.0 * h);
    const double a = analytic[k];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double err = std::abs(a - numeric) / denom;
    if (err > result.max_relative_error || k == 0) {
      result.max_relative_error = std::max(result.max_relative_error, err);
      result.worst_parameter = entry.name;
      result.worst_index = coords[k].index;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

std::vector<Coordinate> sample_coordinates(const ParamStore& params, std::size_t count,
                                           SeededRng& rng) {
  std::vector<Coordinate> out;
  const auto& entries = params.entries();
  if (entries.empty() || count == 0) return out;
  for (std::size_t p = 0; p < entries.size() && out.size() < count; ++p) {
    out.push_back({p, rng.uniform_index(entries[p].tensor.size())});
  }
  const std::size_t total = params.element_count();
  while (out.size() < count) {
    std::size_t flat = rng.uniform_index(total);
    std::size_t p = 0;
    while (flat >= entries[p].tensor.size()) flat -= entries[p++].tensor.size();
    out.push_back({p, flat});
  }
  return out;
}

}  // namespace comvt
