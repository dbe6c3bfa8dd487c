#include "comvt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "comvt/error.hpp"

namespace comvt {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<detail::Node>;

void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value");
    }
  }
}

/// Builds the output node. Graph edges are recorded only when grad mode is on
/// and at least one input requires grad.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
                   std::function<void(detail::Node&)> backward_fn, const char* op) {
  check_finite(data, op);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (g_grad_enabled) {
    bool any = std::any_of(parents.begin(), parents.end(),
                           [](const NodePtr& p) { return p->requires_grad; });
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_rank2(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.rank() != 2) {
    throw ContractError(std::string(op) + ": expected rank-2 tensor, got " +
                        shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                        " vs " + shape_string(b.shape()));
  }
}

/// Length of a vector-like tensor: {n} or {1, n}.
std::size_t vector_length(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.rank() == 1) return t.shape()[0];
  if (t.rank() == 2 && t.shape()[0] == 1) return t.shape()[1];
  throw ContractError(std::string(op) + ": expected a vector, got " + shape_string(t.shape()));
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw ContractError("Tensor: zero extent in shape " + shape_string(shape));
  }
  if (shape.empty()) throw ContractError("Tensor: empty shape");
  if (shape_size(shape) != data.size()) {
    throw ContractError("Tensor: shape " + shape_string(shape) + " does not match " +
                        std::to_string(data.size()) + " values");
  }
  check_finite(data, "Tensor");
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(shape_size(shape), value);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(data), requires_grad);
}

Tensor Tensor::row(std::vector<double> data, bool requires_grad) {
  const std::size_t n = data.size();
  return Tensor({1, n}, std::move(data), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  std::vector<double> data;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw ContractError("Tensor::matrix: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("Tensor: undefined");
  return node_->shape;
}

std::size_t Tensor::size() const { return node_ ? node_->data.size() : 0; }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ContractError("Tensor::rows: not rank-2 " + shape_string(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ContractError("Tensor::cols: not rank-2 " + shape_string(shape()));
  return node_->shape[1];
}

std::span<const double> Tensor::data() const {
  if (!node_) throw ContractError("Tensor: undefined");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw ContractError("Tensor: undefined");
  return node_->data;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("Tensor::item: not a single element " + shape_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows() || c >= cols()) throw ContractError("Tensor::at: index out of range");
  return node_->data[r * cols() + c];
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!node_) throw ContractError("Tensor: undefined");
  node_->requires_grad = value;
}

std::span<const double> Tensor::grad() const {
  if (!node_) throw ContractError("Tensor: undefined");
  return node_->grad_buffer();
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
  if (!node_) return {};
  return Tensor(node_->shape, node_->data, false);
}

// ---------------------------------------------------------------------------
// Grad mode and tape

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

GradTape GradTape::record(const Tensor& root) {
  GradTape tape;
  if (!root.requires_grad()) return tape;
  std::unordered_set<detail::Node*> visited;
  // Iterative post-order DFS: (node, next parent index).
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be a single element, got " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  GradTape tape = GradTape::record(loss);
  loss.node()->accumulate(0, 1.0);
  const auto& order = tape.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ContractError("matmul: inner dimension mismatch " + shape_string(a.shape()) + " * " +
                        shape_string(b.shape()));
  }
  const auto& A = a.node()->data;
  const auto& B = b.node()->data;
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a.node(), b.node()},
                     [m, k, n](detail::Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       const auto& G = self.grad;
                       if (pa.requires_grad) {
                         auto& ga = pa.grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * pb.data[p * n + j];
                             ga[i * k + p] += s;
                           }
                       }
                       if (pb.requires_grad) {
                         auto& gb = pb.grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double aip = pa.data[i * k + p];
                             if (aip == 0.0) continue;
                             for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * G[i * n + j];
                           }
                       }
                     },
                     "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ContractError("matmul_nt: inner dimension mismatch " + shape_string(a.shape()) +
                        " * " + shape_string(b.shape()) + "^T");
  }
  const auto& A = a.node()->data;
  const auto& B = b.node()->data;
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
      out[i * n + j] = s;
    }
  return make_result({m, n}, std::move(out), {a.node(), b.node()},
                     [m, k, n](detail::Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       const auto& G = self.grad;
                       if (pa.requires_grad) {
                         auto& ga = pa.grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) {
                             const double g = G[i * n + j];
                             if (g == 0.0) continue;
                             for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += g * pb.data[j * k + p];
                           }
                       }
                       if (pb.requires_grad) {
                         auto& gb = pb.grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) {
                             const double g = G[i * n + j];
                             if (g == 0.0) continue;
                             for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += g * pa.data[i * k + p];
                           }
                       }
                     },
                     "matmul_nt");
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  const auto& A = a.node()->data;
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return make_result({n, m}, std::move(out), {a.node()},
                     [m, n](detail::Node& self) {
                       auto& ga = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
                     },
                     "transpose");
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.node()->data[i] + b.node()->data[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()},
                     [](detail::Node& self) {
                       for (auto& p : self.parents) {
                         if (!p->requires_grad) continue;
                         auto& g = p->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                     },
                     "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.node()->data[i] - b.node()->data[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()},
                     [](detail::Node& self) {
                       if (self.parents[0]->requires_grad) {
                         auto& g = self.parents[0]->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (self.parents[1]->requires_grad) {
                         auto& g = self.parents[1]->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
                       }
                     },
                     "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.node()->data[i] * b.node()->data[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()},
                     [](detail::Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       if (pa.requires_grad) {
                         auto& g = pa.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
                       }
                     },
                     "mul");
}

Tensor scale(const Tensor& a, double s) {
  require_defined(a, "scale");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.node()->data[i] * s;
  return make_result(a.shape(), std::move(out), {a.node()},
                     [s](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
                     },
                     "scale");
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require_rank2(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (vector_length(bias, "add_row") != n) {
    throw ContractError("add_row: bias length " + std::to_string(bias.size()) + " vs cols " +
                        std::to_string(n));
  }
  std::vector<double> out(a.node()->data);
  const auto& B = bias.node()->data;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += B[j];
  return make_result(a.shape(), std::move(out), {a.node(), bias.node()},
                     [m, n](detail::Node& self) {
                       if (self.parents[0]->requires_grad) {
                         auto& g = self.parents[0]->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (self.parents[1]->requires_grad) {
                         auto& g = self.parents[1]->grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
                       }
                     },
                     "add_row");
}

Tensor gelu(const Tensor& a) {
  require_defined(a, "gelu");
  const auto& A = a.node()->data;
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) {
    out[i] = 0.5 * A[i] * (1.0 + std::erf(A[i] * std::numbers::sqrt2 / 2.0));
  }
  return make_result(a.shape(), std::move(out), {a.node()},
                     [](detail::Node& self) {
                       auto& p = *self.parents[0];
                       auto& g = p.grad_buffer();
                       const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double x = p.data[i];
                         const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
                         const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
                         g[i] += self.grad[i] * (cdf + x * pdf);
                       }
                     },
                     "gelu");
}

Tensor relu(const Tensor& a) {
  require_defined(a, "relu");
  const auto& A = a.node()->data;
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] > 0.0 ? A[i] : 0.0;
  return make_result(a.shape(), std::move(out), {a.node()},
                     [](detail::Node& self) {
                       auto& p = *self.parents[0];
                       auto& g = p.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (p.data[i] > 0.0) g[i] += self.grad[i];
                     },
                     "relu");
}

Tensor log(const Tensor& a) {
  require_defined(a, "log");
  const auto& A = a.node()->data;
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) {
    if (!(A[i] > 0.0)) throw NumericError("log: non-positive input");
    out[i] = std::log(A[i]);
  }
  return make_result(a.shape(), std::move(out), {a.node()},
                     [](detail::Node& self) {
                       auto& p = *self.parents[0];
                       auto& g = p.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / p.data[i];
                     },
                     "log");
}

// ---------------------------------------------------------------------------
// Normalizers

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_defined(x, "softmax");
  const Shape& shape = x.shape();
  if (axis >= shape.size()) throw ContractError("softmax: axis out of range");
  check_finite(x.data(), "softmax input");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  const auto& X = x.node()->data;
  std::vector<double> out(X.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = X[base];
      for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, X[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(X[base + i * inner] - mx);
        out[base + i * inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= z;
    }
  std::vector<double> y = out;
  return make_result(shape, std::move(out), {x.node()},
                     [y = std::move(y), outer, inner, n](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t in = 0; in < inner; ++in) {
                           const std::size_t base = o * n * inner + in;
                           double dot = 0.0;
                           for (std::size_t i = 0; i < n; ++i)
                             dot += self.grad[base + i * inner] * y[base + i * inner];
                           for (std::size_t i = 0; i < n; ++i) {
                             const std::size_t idx = base + i * inner;
                             g[idx] += y[idx] * (self.grad[idx] - dot);
                           }
                         }
                     },
                     "softmax");
}

Tensor masked_softmax_rows(const Tensor& x, std::span<const bool> column_mask) {
  require_rank2(x, "masked_softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (column_mask.empty()) return softmax(x, 1);
  if (column_mask.size() != n) throw ContractError("masked_softmax_rows: mask length mismatch");
  if (std::none_of(column_mask.begin(), column_mask.end(), [](bool b) { return b; })) {
    throw ContractError("attention: empty key set after masking");
  }
  check_finite(x.data(), "softmax input");
  const auto& X = x.node()->data;
  std::vector<double> out(X.size(), 0.0);
  std::vector<bool> mask(column_mask.begin(), column_mask.end());
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < n; ++c)
      if (mask[c]) mx = std::max(mx, X[r * n + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c)
      if (mask[c]) {
        out[r * n + c] = std::exp(X[r * n + c] - mx);
        z += out[r * n + c];
      }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  std::vector<double> y = out;
  return make_result(x.shape(), std::move(out), {x.node()},
                     [y = std::move(y), m, n](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t r = 0; r < m; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < n; ++c) dot += self.grad[r * n + c] * y[r * n + c];
                         for (std::size_t c = 0; c < n; ++c)
                           g[r * n + c] += y[r * n + c] * (self.grad[r * n + c] - dot);
                       }
                     },
                     "masked_softmax_rows");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  if (vector_length(gain, "layer_norm gain") != n ||
      (bias.defined() && vector_length(bias, "layer_norm bias") != n)) {
    throw ContractError("layer_norm: gain/bias must match last axis extent " + std::to_string(n));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const auto& X = x.node()->data;
  const auto& G = gain.node()->data;
  std::vector<double> xhat(X.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(X.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &X[r * n];
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += xr[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      xhat[r * n + i] = (xr[i] - mu) * inv_std[r];
      out[r * n + i] = G[i] * xhat[r * n + i] + (bias.defined() ? bias.node()->data[i] : 0.0);
    }
  }
  std::vector<NodePtr> parents{x.node(), gain.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return make_result(
      x.shape(), std::move(out), std::move(parents),
      [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, n](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        const auto& dy = self.grad;
        if (pg.requires_grad) {
          auto& gg = pg.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < n; ++i) gg[i] += dy[r * n + i] * xhat[r * n + i];
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto& gb = self.parents[2]->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < n; ++i) gb[i] += dy[r * n + i];
        }
        if (px.requires_grad) {
          auto& gx = px.grad_buffer();
          const double dn = static_cast<double>(n);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              const double d = dy[r * n + i] * pg.data[i];
              sum_d += d;
              sum_dx += d * xhat[r * n + i];
            }
            for (std::size_t i = 0; i < n; ++i) {
              const double d = dy[r * n + i] * pg.data[i];
              gx[r * n + i] += inv_std[r] / dn * (dn * d - sum_d - xhat[r * n + i] * sum_dx);
            }
          }
        }
      },
      "layer_norm");
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::span<const bool> key_mask) {
  require_rank2(q, "attention");
  require_rank2(k, "attention");
  require_rank2(v, "attention");
  if (q.cols() != k.cols()) throw ContractError("attention: Q and K inner dimensions differ");
  if (k.rows() != v.rows()) throw ContractError("attention: K and V row counts differ");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor weights = masked_softmax_rows(scale(matmul_nt(q, k), inv_sqrt_d), key_mask);
  return matmul(weights, v);
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != n) throw ContractError("concat_rows: column mismatch");
    offsets.push_back(m * n);
    m += p.rows();
    parents.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.node()->data.begin(), p.node()->data.end());
  return make_result({m, n}, std::move(out), std::move(parents),
                     [offsets = std::move(offsets)](detail::Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         auto& p = *self.parents[k];
                         if (!p.requires_grad) continue;
                         auto& g = p.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
                       }
                     },
                     "concat_rows");
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> col_offsets, widths;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != m) throw ContractError("concat_cols: row mismatch");
    col_offsets.push_back(n);
    widths.push_back(p.cols());
    n += p.cols();
    parents.push_back(p.node());
  }
  std::vector<double> out(m * n);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& D = parts[k].node()->data;
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(&D[i * widths[k]], widths[k], &out[i * n + col_offsets[k]]);
  }
  return make_result({m, n}, std::move(out), std::move(parents),
                     [col_offsets = std::move(col_offsets), widths = std::move(widths), m,
                      n](detail::Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         auto& p = *self.parents[k];
                         if (!p.requires_grad) continue;
                         auto& g = p.grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < widths[k]; ++j)
                             g[i * widths[k] + j] += self.grad[i * n + col_offsets[k] + j];
                       }
                     },
                     "concat_cols");
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_rows");
  if (begin >= end || end > a.rows()) throw ContractError("slice_rows: invalid range");
  const std::size_t n = a.cols();
  std::vector<double> out(a.node()->data.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          a.node()->data.begin() + static_cast<std::ptrdiff_t>(end * n));
  return make_result({end - begin, n}, std::move(out), {a.node()},
                     [begin, n](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
                     },
                     "slice_rows");
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_cols");
  if (begin >= end || end > a.cols()) throw ContractError("slice_cols: invalid range");
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(&a.node()->data[i * n + begin], w, &out[i * w]);
  return make_result({m, w}, std::move(out), {a.node()},
                     [m, n, w, begin](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
                     },
                     "slice_cols");
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_rank2(table, "gather_rows");
  if (indices.empty()) throw ContractError("gather_rows: no indices");
  const std::size_t n = table.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * n);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= table.rows()) {
      throw ContractError("gather_rows: index " + std::to_string(idx[r]) + " out of range " +
                          std::to_string(table.rows()));
    }
    std::copy_n(&table.node()->data[idx[r] * n], n, &out[r * n]);
  }
  const std::size_t rows = idx.size();
  return make_result({rows, n}, std::move(out), {table.node()},
                     [idx = std::move(idx), n](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t j = 0; j < n; ++j) g[idx[r] * n + j] += self.grad[r * n + j];
                     },
                     "gather_rows");
}

// ---------------------------------------------------------------------------
// Reductions and losses

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  double s = 0.0;
  for (double v : a.node()->data) s += v;
  return make_result({1}, {s}, {a.node()},
                     [](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (double& gi : g) gi += self.grad[0];
                     },
                     "sum");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank2(logits, "cross_entropy");
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m) throw ContractError("cross_entropy: one target per row required");
  check_finite(logits.data(), "cross_entropy input");
  const auto& X = logits.node()->data;
  std::vector<double> probs(m * n);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  double loss = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (tgt[r] >= n) throw ContractError("cross_entropy: target out of range");
    double mx = X[r * n];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, X[r * n + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      probs[r * n + c] = std::exp(X[r * n + c] - mx);
      z += probs[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) probs[r * n + c] /= z;
    loss += (mx + std::log(z)) - X[r * n + tgt[r]];
  }
  loss /= static_cast<double>(m);
  return make_result({1}, {loss}, {logits.node()},
                     [probs = std::move(probs), tgt = std::move(tgt), m, n](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       const double s = self.grad[0] / static_cast<double>(m);
                       for (std::size_t r = 0; r < m; ++r) {
                         for (std::size_t c = 0; c < n; ++c) g[r * n + c] += s * probs[r * n + c];
                         g[r * n + tgt[r]] -= s;
                       }
                     },
                     "cross_entropy");
}

}  // namespace comvt
