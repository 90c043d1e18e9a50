#pragma once

// Dense row-major matrices with reverse-mode automatic differentiation.
//
// Every tensor is two-dimensional (rows x cols); scalars are 1x1. Operations
// record a closure on the result node when gradient recording is enabled and
// at least one input requires a gradient. `backward` walks the recorded graph
// in reverse topological order and accumulates into every reachable leaf.

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "shapeguide/rng.hpp"

namespace shapeguide {

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
template <typename Real>
struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), Real(0));
  }
};

bool grad_enabled();
void set_grad_enabled(bool enabled);
}  // namespace detail

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
  ~NoGradGuard() { detail::set_grad_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Real>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<detail::Node<Real>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor full(std::size_t rows, std::size_t cols, Real value, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<Real> values,
                     bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);
  /// Entries drawn from U(-bound, bound).
  static Tensor uniform(std::size_t rows, std::size_t cols, Real bound, Rng& rng,
                        bool requires_grad = false);
  /// Entries drawn from N(0, stddev^2).
  static Tensor normal(std::size_t rows, std::size_t cols, Real stddev, Rng& rng,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::array<std::size_t, 2> shape() const { return {node_->rows, node_->cols}; }

  std::span<const Real> data() const { return node_->value; }
  /// Mutable storage. Intended for leaves (parameters, optimizer updates, perturbation checks).
  std::span<Real> mutable_data() { return node_->value; }
  Real at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  Real item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Fresh leaf holding a copy of the values, detached from any graph.
  Tensor detach() const;
  /// Same as detach() but converted to another precision.
  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Other>(node_->value[i]);
    return Tensor<Other>::from(rows(), cols(), std::move(out));
  }

  detail::Node<Real>* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

// ---- operations -------------------------------------------------------------

template <typename Real> Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> scale(const Tensor<Real>& a, Real s);
/// x (m x n) plus a 1 x n row broadcast over every row.
template <typename Real> Tensor<Real> add_row(const Tensor<Real>& x, const Tensor<Real>& row);
/// x ((k*p) x n) plus p (p x n) tiled k times down the rows.
template <typename Real> Tensor<Real> add_tiled(const Tensor<Real>& x, const Tensor<Real>& p);
template <typename Real> Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);
/// x W + b with W stored (in x out) and b (1 x out); `bias` may be undefined.
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias);
template <typename Real> Tensor<Real> gelu(const Tensor<Real>& x);
template <typename Real> Tensor<Real> log(const Tensor<Real>& x);
template <typename Real> Tensor<Real> softmax_rows(const Tensor<Real>& x);
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real eps);
template <typename Real> Tensor<Real> sum(const Tensor<Real>& x);
template <typename Real> Tensor<Real> mean(const Tensor<Real>& x);
template <typename Real> Tensor<Real> dot(const Tensor<Real>& a, const Tensor<Real>& b);
/// mean((a - b)^2) over all elements.
template <typename Real> Tensor<Real> mse(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts);
template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& x, std::span<const std::size_t> index);
/// Row i of the result is the mean of table rows listed in bags[i]; bags must be non-empty.
template <typename Real>
Tensor<Real> embedding_mean(const Tensor<Real>& table,
                            const std::vector<std::vector<std::size_t>>& bags);
/// softmax(Q K^T / sqrt(d_head)) V for each head and each length-`seq_len`
/// block of rows independently; heads are concatenated along columns.
template <typename Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                       std::size_t n_heads, std::size_t seq_len);

/// Accumulates d(root)/d(leaf) into every reachable leaf that requires a gradient.
template <typename Real> void backward(const Tensor<Real>& root);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
///
/// `f` is evaluated at x and at x +/- h e_i by perturbing x in place; the
/// analytic gradient comes from one backward pass.
double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         Tensor<double> x, double h);

}  // namespace shapeguide
