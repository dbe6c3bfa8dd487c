#include "comvt/params.hpp"

#include <cmath>
#include <set>

#include "comvt/error.hpp"

namespace comvt {

Tensor ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw ContractError("ParamStore: duplicate parameter '" + name + "'");
  if (!value.defined()) throw ContractError("ParamStore: undefined tensor for '" + name + "'");
  value.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.push_back({name, value});
  return value;
}

const Tensor& ParamStore::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("ParamStore: unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

std::string ParamStore::group_of(std::string_view name) {
  auto pos = name.rfind('.');
  return std::string(pos == std::string_view::npos ? name : name.substr(0, pos));
}

std::vector<std::string> ParamStore::groups() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& e : entries_) {
    auto g = group_of(e.name);
    if (seen.insert(g).second) out.push_back(g);
  }
  return out;
}

Tensor init_normal(Shape shape, double stddev, SeededRng& rng) {
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = rng.normal() * stddev;
  return Tensor(std::move(shape), std::move(data));
}

Tensor init_linear_weight(std::size_t fan_in, std::size_t fan_out, SeededRng& rng) {
  return init_normal({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

}  // namespace comvt
