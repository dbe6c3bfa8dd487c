#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "comvt/rng.hpp"
#include "comvt/tensor.hpp"

namespace comvt {

/// Ordered registry of named learnable tensors.
///
/// Layers hold Tensor handles that share storage with the store, so updates
/// made through the store are visible to the layers.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  /// Registers a new parameter (requires_grad is switched on).
  Tensor add(const std::string& name, Tensor value);

  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t element_count() const;

  void zero_grad();

  /// Parameter group of a name: everything up to the last '.'.
  static std::string group_of(std::string_view name);
  /// Distinct groups in registration order.
  std::vector<std::string> groups() const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Initializers.
Tensor init_normal(Shape shape, double stddev, SeededRng& rng);
/// Normal(0, 1/fan_in) for a fan_in x fan_out weight.
Tensor init_linear_weight(std::size_t fan_in, std::size_t fan_out, SeededRng& rng);

}  // namespace comvt
