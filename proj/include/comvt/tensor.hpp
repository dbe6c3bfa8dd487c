#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace comvt {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(std::size_t i, double g) {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    grad[i] += g;
  }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array of doubles that may participate in reverse-mode
/// differentiation.
///
/// Tensor is a shared handle: copies refer to the same storage and graph node.
/// Use clone() for an independent value copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                       bool requires_grad = false);
  static Tensor row(std::vector<double> data, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  /// Rows/cols of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Direct write access; bypasses the graph. Intended for parameter updates.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;
  double operator[](std::size_t i) const { return data()[i]; }
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  /// Gradient buffer; all zeros when nothing has been accumulated.
  std::span<const double> grad() const;
  bool has_grad() const;
  void zero_grad();

  /// Independent value copy, detached from any graph.
  Tensor clone() const;
  /// Shares storage values by copy but drops graph history.
  Tensor detach() const { return clone(); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// True when new operations should record backward functions.
bool grad_enabled();

/// Disables graph recording for the lifetime of the guard (per thread).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Recorded computation history reachable from a root tensor, in topological
/// order (parents before children).
class GradTape {
 public:
  static GradTape record(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<detail::Node*>& order() const { return order_; }

 private:
  std::vector<detail::Node*> order_;
};

/// Reverse-mode pass from a single-element loss. Gradients accumulate into
/// every reachable tensor that requires grad.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations. Unless noted, operands are rank-2 (rows x cols).

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Adds a length-cols bias (shape {cols} or {1, cols}) to every row.
Tensor add_row(const Tensor& a, const Tensor& bias);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);

/// Softmax along `axis` (any rank). Non-finite input raises NumericError.
Tensor softmax(const Tensor& x, std::size_t axis);
/// Row-wise softmax of a rank-2 tensor; masked-out columns (mask[c] == false)
/// get probability zero.
Tensor masked_softmax_rows(const Tensor& x, std::span<const bool> column_mask);

/// Normalizes over the last axis: gain * (x - mean) / sqrt(var + eps) + bias.
/// `bias` may be undefined for a gain-only normalization.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// softmax(Q K^T / sqrt(d)) V. `key_mask` (optional) excludes keys.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::span<const bool> key_mask = {});

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
/// Rows of `table` selected by index (embedding lookup).
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

/// Sum of all elements, shape {1}.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Mean over rows of -log softmax(logits[r])[targets[r]].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
/// Natural log, elementwise; inputs must be positive.
Tensor log(const Tensor& a);

}  // namespace comvt
