#include "shapeguide/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace shapeguide {

namespace detail {
namespace {
thread_local bool g_grad_enabled = true;
}
bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool enabled) { g_grad_enabled = enabled; }
}  // namespace detail

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapMat = Eigen::Map<RowMat<Real>>;
template <typename Real>
using CMapMat = Eigen::Map<const RowMat<Real>>;
template <typename Real>
using StridedMap = Eigen::Map<RowMat<Real>, 0, Eigen::OuterStride<>>;
template <typename Real>
using CStridedMap = Eigen::Map<const RowMat<Real>, 0, Eigen::OuterStride<>>;

template <typename Real>
using NodeT = detail::Node<Real>;
template <typename Real>
using NodePtr = std::shared_ptr<NodeT<Real>>;

template <typename Real>
CMapMat<Real> view(const NodeT<Real>& n) {
  return CMapMat<Real>(n.value.data(), static_cast<Eigen::Index>(n.rows),
                       static_cast<Eigen::Index>(n.cols));
}

template <typename Real>
MapMat<Real> grad_view(NodeT<Real>& n) {
  n.ensure_grad();
  return MapMat<Real>(n.grad.data(), static_cast<Eigen::Index>(n.rows),
                      static_cast<Eigen::Index>(n.cols));
}

template <typename Real>
CMapMat<Real> out_grad(const NodeT<Real>& n) {
  return CMapMat<Real>(n.grad.data(), static_cast<Eigen::Index>(n.rows),
                       static_cast<Eigen::Index>(n.cols));
}

// Allocates a result node and wires it to `parents` when recording applies.
template <typename Real>
NodePtr<Real> make_result(std::size_t rows, std::size_t cols,
                          std::initializer_list<const Tensor<Real>*> parents) {
  auto node = std::make_shared<NodeT<Real>>();
  node->rows = rows;
  node->cols = cols;
  node->value.assign(rows * cols, Real(0));
  if (detail::grad_enabled()) {
    for (const Tensor<Real>* p : parents) {
      if (p != nullptr && p->defined() && p->requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
    if (node->requires_grad) {
      for (const Tensor<Real>* p : parents) {
        if (p != nullptr && p->defined()) node->parents.push_back(p->node_ptr());
      }
    }
  }
  return node;
}

void require(bool condition, const std::string& message) {
  if (!condition) throw TensorError(message);
}

template <typename Real>
std::string shape_str(const Tensor<Real>& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

template <typename Real>
void same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

// ---- Tensor -----------------------------------------------------------------

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return full(rows, cols, Real(0), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(std::size_t rows, std::size_t cols, Real value,
                                bool requires_grad) {
  require(rows > 0 && cols > 0, "tensor dimensions must be positive");
  auto node = std::make_shared<NodeT<Real>>();
  node->rows = rows;
  node->cols = cols;
  node->value.assign(rows * cols, value);
  node->requires_grad = requires_grad;
  return Tensor(node);
}

template <typename Real>
Tensor<Real> Tensor<Real>::from(std::size_t rows, std::size_t cols, std::vector<Real> values,
                                bool requires_grad) {
  require(rows > 0 && cols > 0, "tensor dimensions must be positive");
  require(values.size() == rows * cols, "data length " + std::to_string(values.size()) +
                                            " does not match shape " + std::to_string(rows) +
                                            "x" + std::to_string(cols));
  auto node = std::make_shared<NodeT<Real>>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(node);
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value, bool requires_grad) {
  return full(1, 1, value, requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::uniform(std::size_t rows, std::size_t cols, Real bound, Rng& rng,
                                   bool requires_grad) {
  std::vector<Real> v(rows * cols);
  for (auto& x : v) x = static_cast<Real>(rng.uniform(-bound, bound));
  return from(rows, cols, std::move(v), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::normal(std::size_t rows, std::size_t cols, Real stddev, Rng& rng,
                                  bool requires_grad) {
  std::vector<Real> v(rows * cols);
  for (auto& x : v) x = static_cast<Real>(stddev * rng.normal());
  return from(rows, cols, std::move(v), requires_grad);
}

template <typename Real>
Real Tensor<Real>::item() const {
  require(size() == 1, "item() on non-scalar tensor " + shape_str(*this));
  return node_->value[0];
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
  return from(rows(), cols(), node_->value, false);
}

// ---- elementwise ------------------------------------------------------------

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  same_shape(a, b, "add");
  auto out = make_result<Real>(a.rows(), a.cols(), {&a, &b});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] + b.data()[i];
  if (out->requires_grad) {
    out->backward_fn = [](NodeT<Real>& self) {
      for (auto& p : self.parents) {
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      }
    };
  }
  return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  same_shape(a, b, "sub");
  auto out = make_result<Real>(a.rows(), a.cols(), {&a, &b});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] - b.data()[i];
  if (out->requires_grad) {
    auto pa = a.node_ptr();
    auto pb = b.node_ptr();
    out->backward_fn = [pa, pb](NodeT<Real>& self) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
      }
    };
  }
  return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  same_shape(a, b, "mul");
  auto out = make_result<Real>(a.rows(), a.cols(), {&a, &b});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] * b.data()[i];
  if (out->requires_grad) {
    auto pa = a.node_ptr();
    auto pb = b.node_ptr();
    out->backward_fn = [pa, pb](NodeT<Real>& self) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->value[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->value[i];
      }
    };
  }
  return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  auto out = make_result<Real>(a.rows(), a.cols(), {&a});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] * s;
  if (out->requires_grad) {
    out->backward_fn = [s](NodeT<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * s;
    };
  }
  return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> add_row(const Tensor<Real>& x, const Tensor<Real>& row) {
  require(row.rows() == 1 && row.cols() == x.cols(),
          "add_row: row " + shape_str(row) + " incompatible with " + shape_str(x));
  auto out = make_result<Real>(x.rows(), x.cols(), {&x, &row});
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out->value[r * n + c] = x.data()[r * n + c] + row.data()[c];
  if (out->requires_grad) {
    auto px = x.node_ptr();
    auto pr = row.node_ptr();
    out->backward_fn = [px, pr, n](NodeT<Real>& self) {
      if (px->requires_grad) {
        px->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
      }
      if (pr->requires_grad) {
        pr->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pr->grad[i % n] += self.grad[i];
      }
    };
  }
  return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> add_tiled(const Tensor<Real>& x, const Tensor<Real>& p) {
  require(p.cols() == x.cols() && x.rows() % p.rows() == 0,
          "add_tiled: " + shape_str(p) + " does not tile " + shape_str(x));
  auto out = make_result<Real>(x.rows(), x.cols(), {&x, &p});
  const std::size_t block = p.size();
  for (std::size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = x.data()[i] + p.data()[i % block];
  if (out->requires_grad) {
    auto px = x.node_ptr();
    auto pp = p.node_ptr();
    out->backward_fn = [px, pp, block](NodeT<Real>& self) {
      if (px->requires_grad) {
        px->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
      }
      if (pp->requires_grad) {
        pp->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pp->grad[i % block] += self.grad[i];
      }
    };
  }
  return Tensor<Real>(out);
}

// ---- matrix products --------------------------------------------------------

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ " + shape_str(a) + " x " +
                                    shape_str(b));
  auto out = make_result<Real>(a.rows(), b.cols(), {&a, &b});
  MapMat<Real>(out->value.data(), a.rows(), b.cols()).noalias() =
      view(*a.node()) * view(*b.node());
  if (out->requires_grad) {
    auto pa = a.node_ptr();
    auto pb = b.node_ptr();
    out->backward_fn = [pa, pb](NodeT<Real>& self) {
      auto g = out_grad(self);
      if (pa->requires_grad) grad_view(*pa).noalias() += g * view(*pb).transpose();
      if (pb->requires_grad) grad_view(*pb).noalias() += view(*pa).transpose() * g;
    };
  }
  return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  require(x.cols() == weight.rows(),
          "linear: input " + shape_str(x) + " incompatible with weight " + shape_str(weight));
  const bool has_bias = bias.defined();
  if (has_bias) {
    require(bias.rows() == 1 && bias.cols() == weight.cols(),
            "linear: bias " + shape_str(bias) + " incompatible with weight " + shape_str(weight));
  }
  auto out = make_result<Real>(x.rows(), weight.cols(), {&x, &weight, has_bias ? &bias : nullptr});
  auto y = MapMat<Real>(out->value.data(), x.rows(), weight.cols());
  y.noalias() = view(*x.node()) * view(*weight.node());
  if (has_bias) y.rowwise() += view(*bias.node()).row(0);
  if (out->requires_grad) {
    auto px = x.node_ptr();
    auto pw = weight.node_ptr();
    auto pb = has_bias ? bias.node_ptr() : nullptr;
    out->backward_fn = [px, pw, pb](NodeT<Real>& self) {
      auto g = out_grad(self);
      if (px->requires_grad) grad_view(*px).noalias() += g * view(*pw).transpose();
      if (pw->requires_grad) grad_view(*pw).noalias() += view(*px).transpose() * g;
      if (pb && pb->requires_grad) grad_view(*pb).row(0) += g.colwise().sum();
    };
  }
  return Tensor<Real>(out);
}

// ---- nonlinearities ---------------------------------------------------------

template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
  constexpr Real kC = Real(0.7978845608028654);  // sqrt(2/pi)
  constexpr Real kA = Real(0.044715);
  auto out = make_result<Real>(x.rows(), x.cols(), {&x});
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    const Real v = x.data()[i];
    out->value[i] = Real(0.5) * v * (Real(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  if (out->requires_grad) {
    out->backward_fn = [](NodeT<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const Real v = p->value[i];
        const Real u = kC * (v + kA * v * v * v);
        const Real t = std::tanh(u);
        const Real du = kC * (Real(1) + Real(3) * kA * v * v);
        const Real d = Real(0.5) * (Real(1) + t) + Real(0.5) * v * (Real(1) - t * t) * du;
        p->grad[i] += self.grad[i] * d;
      }
    };
  }
  return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& x) {
  auto out = make_result<Real>(x.rows(), x.cols(), {&x});
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    require(x.data()[i] > Real(0), "log: non-positive input");
    out->value[i] = std::log(x.data()[i]);
  }
  if (out->requires_grad) {
    out->backward_fn = [](NodeT<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] / p->value[i];
    };
  }
  return Tensor<Real>(out);
}

namespace {
template <typename Real>
void softmax_inplace(Real* row, std::size_t n) {
  Real m = row[0];
  for (std::size_t j = 1; j < n; ++j) m = std::max(m, row[j]);
  Real s = 0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - m);
    s += row[j];
  }
  const Real inv = Real(1) / s;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}
}  // namespace

template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& x) {
  auto out = make_result<Real>(x.rows(), x.cols(), {&x});
  out->value.assign(x.data().begin(), x.data().end());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) softmax_inplace(out->value.data() + r * n, n);
  if (out->requires_grad) {
    out->backward_fn = [n](NodeT<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (std::size_t r = 0; r < self.rows; ++r) {
        const Real* y = self.value.data() + r * n;
        const Real* g = self.grad.data() + r * n;
        Real s = 0;
        for (std::size_t j = 0; j < n; ++j) s += g[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) p->grad[r * n + j] += y[j] * (g[j] - s);
      }
    };
  }
  return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real eps) {
  const std::size_t n = x.cols();
  require(n >= 2, "layer_norm: need at least two features per row");
  require(gain.rows() == 1 && gain.cols() == n && bias.rows() == 1 && bias.cols() == n,
          "layer_norm: gain/bias must be 1x" + std::to_string(n));
  auto out = make_result<Real>(x.rows(), n, {&x, &gain, &bias});
  // Cache normalized rows and inverse std for the backward pass.
  auto xhat = std::make_shared<std::vector<Real>>(x.size());
  auto inv_std = std::make_shared<std::vector<Real>>(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const Real* xr = x.data().data() + r * n;
    Real mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= Real(n);
    Real var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= Real(n);
    const Real is = Real(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const Real h = (xr[j] - mu) * is;
      (*xhat)[r * n + j] = h;
      out->value[r * n + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  if (out->requires_grad) {
    auto px = x.node_ptr();
    auto pg = gain.node_ptr();
    auto pb = bias.node_ptr();
    out->backward_fn = [px, pg, pb, xhat, inv_std, n](NodeT<Real>& self) {
      if (pg->requires_grad) pg->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      if (px->requires_grad) px->ensure_grad();
      std::vector<Real> dh(n);
      for (std::size_t r = 0; r < self.rows; ++r) {
        const Real* g = self.grad.data() + r * n;
        const Real* h = xhat->data() + r * n;
        Real mean_dh = 0, mean_dh_h = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (pg->requires_grad) pg->grad[j] += g[j] * h[j];
          if (pb->requires_grad) pb->grad[j] += g[j];
          dh[j] = g[j] * pg->value[j];
          mean_dh += dh[j];
          mean_dh_h += dh[j] * h[j];
        }
        if (!px->requires_grad) continue;
        mean_dh /= Real(n);
        mean_dh_h /= Real(n);
        const Real is = (*inv_std)[r];
        for (std::size_t j = 0; j < n; ++j)
          px->grad[r * n + j] += is * (dh[j] - mean_dh - h[j] * mean_dh_h);
      }
    };
  }
  return Tensor<Real>(out);
}

// ---- reductions -------------------------------------------------------------

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  auto out = make_result<Real>(1, 1, {&x});
  Real s = 0;
  for (Real v : x.data()) s += v;
  out->value[0] = s;
  if (out->requires_grad) {
    out->backward_fn = [](NodeT<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (auto& g : p->grad) g += self.grad[0];
    };
  }
  return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  return scale(sum(x), Real(1) / static_cast<Real>(x.size()));
}

template <typename Real>
Tensor<Real> dot(const Tensor<Real>& a, const Tensor<Real>& b) {
  same_shape(a, b, "dot");
  auto out = make_result<Real>(1, 1, {&a, &b});
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  out->value[0] = s;
  if (out->requires_grad) {
    auto pa = a.node_ptr();
    auto pb = b.node_ptr();
    out->backward_fn = [pa, pb](NodeT<Real>& self) {
      const Real g = self.grad[0];
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < pa->value.size(); ++i) pa->grad[i] += g * pb->value[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < pb->value.size(); ++i) pb->grad[i] += g * pa->value[i];
      }
    };
  }
  return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> mse(const Tensor<Real>& a, const Tensor<Real>& b) {
  same_shape(a, b, "mse");
  auto out = make_result<Real>(1, 1, {&a, &b});
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Real d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  const Real inv_n = Real(1) / static_cast<Real>(a.size());
  out->value[0] = s * inv_n;
  if (out->requires_grad) {
    auto pa = a.node_ptr();
    auto pb = b.node_ptr();
    out->backward_fn = [pa, pb, inv_n](NodeT<Real>& self) {
      const Real g = self.grad[0] * Real(2) * inv_n;
      if (pa->requires_grad) pa->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      for (std::size_t i = 0; i < pa->value.size(); ++i) {
        const Real d = g * (pa->value[i] - pb->value[i]);
        if (pa->requires_grad) pa->grad[i] += d;
        if (pb->requires_grad) pb->grad[i] -= d;
      }
    };
  }
  return Tensor<Real>(out);
}

// ---- row plumbing -----------------------------------------------------------

template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == n, "concat_rows: column mismatch");
    rows += p.rows();
  }
  auto node = std::make_shared<NodeT<Real>>();
  node->rows = rows;
  node->cols = n;
  node->value.reserve(rows * n);
  bool any = false;
  for (const auto& p : parts) {
    node->value.insert(node->value.end(), p.data().begin(), p.data().end());
    any = any || p.requires_grad();
  }
  if (detail::grad_enabled() && any) {
    node->requires_grad = true;
    for (const auto& p : parts) node->parents.push_back(p.node_ptr());
    node->backward_fn = [](NodeT<Real>& self) {
      std::size_t offset = 0;
      for (auto& p : self.parents) {
        const std::size_t len = p->value.size();
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::size_t i = 0; i < len; ++i) p->grad[i] += self.grad[offset + i];
        }
        offset += len;
      }
    };
  }
  return Tensor<Real>(node);
}

template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& x, std::span<const std::size_t> index) {
  require(!index.empty(), "gather_rows: empty index");
  const std::size_t n = x.cols();
  auto out = make_result<Real>(index.size(), n, {&x});
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] < x.rows(), "gather_rows: index out of range");
    std::copy_n(x.data().data() + index[r] * n, n, out->value.data() + r * n);
  }
  if (out->requires_grad) {
    auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
    out->backward_fn = [idx, n](NodeT<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (std::size_t r = 0; r < idx->size(); ++r)
        for (std::size_t c = 0; c < n; ++c) p->grad[(*idx)[r] * n + c] += self.grad[r * n + c];
    };
  }
  return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> embedding_mean(const Tensor<Real>& table,
                            const std::vector<std::vector<std::size_t>>& bags) {
  require(!bags.empty(), "embedding_mean: no bags");
  const std::size_t n = table.cols();
  auto out = make_result<Real>(bags.size(), n, {&table});
  for (std::size_t b = 0; b < bags.size(); ++b) {
    require(!bags[b].empty(), "embedding_mean: empty bag");
    const Real w = Real(1) / static_cast<Real>(bags[b].size());
    for (std::size_t id : bags[b]) {
      require(id < table.rows(), "embedding_mean: index out of range");
      for (std::size_t c = 0; c < n; ++c) out->value[b * n + c] += w * table.data()[id * n + c];
    }
  }
  if (out->requires_grad) {
    auto shared_bags = std::make_shared<std::vector<std::vector<std::size_t>>>(bags);
    out->backward_fn = [shared_bags, n](NodeT<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (std::size_t b = 0; b < shared_bags->size(); ++b) {
        const auto& bag = (*shared_bags)[b];
        const Real w = Real(1) / static_cast<Real>(bag.size());
        for (std::size_t id : bag)
          for (std::size_t c = 0; c < n; ++c) p->grad[id * n + c] += w * self.grad[b * n + c];
      }
    };
  }
  return Tensor<Real>(out);
}

// ---- attention --------------------------------------------------------------

template <typename Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                       std::size_t n_heads, std::size_t seq_len) {
  same_shape(q, k, "attention(q,k)");
  same_shape(q, v, "attention(q,v)");
  const std::size_t d = q.cols();
  require(n_heads > 0 && d % n_heads == 0, "attention: width not divisible by head count");
  require(seq_len > 0 && q.rows() % seq_len == 0, "attention: rows not a multiple of seq_len");
  const std::size_t dh = d / n_heads;
  const std::size_t n_seq = q.rows() / seq_len;
  const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
  const auto L = static_cast<Eigen::Index>(seq_len);
  const auto H = static_cast<Eigen::Index>(dh);
  const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));

  auto out = make_result<Real>(q.rows(), d, {&q, &k, &v});
  const bool record = out->requires_grad;
  // Attention probabilities per (sequence, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<Real>>(record ? n_seq * n_heads * seq_len * seq_len : 0);
  RowMat<Real> scores(L, L);
  for (std::size_t s = 0; s < n_seq; ++s) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = s * seq_len * d + h * dh;
      CStridedMap<Real> Q(q.data().data() + off, L, H, stride);
      CStridedMap<Real> K(k.data().data() + off, L, H, stride);
      CStridedMap<Real> V(v.data().data() + off, L, H, stride);
      StridedMap<Real> O(out->value.data() + off, L, H, stride);
      scores.noalias() = (Q * K.transpose()) * inv_sqrt;
      for (Eigen::Index r = 0; r < L; ++r) softmax_inplace(scores.data() + r * L, seq_len);
      O.noalias() = scores * V;
      if (record) {
        std::copy_n(scores.data(), seq_len * seq_len,
                    probs->data() + (s * n_heads + h) * seq_len * seq_len);
      }
    }
  }
  if (record) {
    auto pq = q.node_ptr();
    auto pk = k.node_ptr();
    auto pv = v.node_ptr();
    out->backward_fn = [pq, pk, pv, probs, n_seq, n_heads, seq_len, d, dh,
                        inv_sqrt](NodeT<Real>& self) {
      const auto L = static_cast<Eigen::Index>(seq_len);
      const auto H = static_cast<Eigen::Index>(dh);
      const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));
      for (auto* p : {pq.get(), pk.get(), pv.get()})
        if (p->requires_grad) p->ensure_grad();
      RowMat<Real> dP(L, L);
      RowMat<Real> dS(L, L);
      for (std::size_t s = 0; s < n_seq; ++s) {
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t off = s * seq_len * d + h * dh;
          CMapMat<Real> P(probs->data() + (s * n_heads + h) * seq_len * seq_len, L, L);
          CStridedMap<Real> dO(self.grad.data() + off, L, H, stride);
          CStridedMap<Real> Q(pq->value.data() + off, L, H, stride);
          CStridedMap<Real> K(pk->value.data() + off, L, H, stride);
          CStridedMap<Real> V(pv->value.data() + off, L, H, stride);
          if (pv->requires_grad) {
            StridedMap<Real> dV(pv->grad.data() + off, L, H, stride);
            dV.noalias() += P.transpose() * dO;
          }
          if (!pq->requires_grad && !pk->requires_grad) continue;
          dP.noalias() = dO * V.transpose();
          // d softmax: dS = P .* (dP - rowsum(dP .* P))
          for (Eigen::Index r = 0; r < L; ++r) {
            Real acc = 0;
            for (Eigen::Index c = 0; c < L; ++c) acc += dP(r, c) * P(r, c);
            for (Eigen::Index c = 0; c < L; ++c) dS(r, c) = P(r, c) * (dP(r, c) - acc) * inv_sqrt;
          }
          if (pq->requires_grad) {
            StridedMap<Real> dQ(pq->grad.data() + off, L, H, stride);
            dQ.noalias() += dS * K;
          }
          if (pk->requires_grad) {
            StridedMap<Real> dK(pk->grad.data() + off, L, H, stride);
            dK.noalias() += dS.transpose() * Q;
          }
        }
      }
    };
  }
  return Tensor<Real>(out);
}

// ---- backward ---------------------------------------------------------------

template <typename Real>
void backward(const Tensor<Real>& root) {
  require(root.defined() && root.size() == 1,
          "backward: root must be a scalar, got " + (root.defined() ? shape_str(root) : "[]"));
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<NodeT<Real>*> order;
  std::unordered_set<NodeT<Real>*> visited;
  std::vector<std::pair<NodeT<Real>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT<Real>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad();
  root.node()->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<Real>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         Tensor<double> x, double h) {
  x.set_requires_grad(true);
  x.zero_grad();
  {
    Tensor<double> y = f(x);
    backward(y);
  }
  std::vector<double> analytic(x.size(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  NoGradGuard guard;
  auto values = x.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f(x).item();
    values[i] = saved - h;
    const double down = f(x).item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  x.zero_grad();
  return worst;
}

// ---- instantiations ---------------------------------------------------------

#define SHAPEGUIDE_INSTANTIATE(Real)                                                          \
  template class Tensor<Real>;                                                                \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                        \
  template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                        \
  template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                        \
  template Tensor<Real> scale(const Tensor<Real>&, Real);                                     \
  template Tensor<Real> add_row(const Tensor<Real>&, const Tensor<Real>&);                    \
  template Tensor<Real> add_tiled(const Tensor<Real>&, const Tensor<Real>&);                  \
  template Tensor<Real> matmul(const Tensor<Real>&, const Tensor<Real>&);                     \
  template Tensor<Real> linear(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&); \
  template Tensor<Real> gelu(const Tensor<Real>&);                                            \
  template Tensor<Real> log(const Tensor<Real>&);                                             \
  template Tensor<Real> softmax_rows(const Tensor<Real>&);                                    \
  template Tensor<Real> layer_norm(const Tensor<Real>&, const Tensor<Real>&,                  \
                                   const Tensor<Real>&, Real);                                \
  template Tensor<Real> sum(const Tensor<Real>&);                                             \
  template Tensor<Real> mean(const Tensor<Real>&);                                            \
  template Tensor<Real> dot(const Tensor<Real>&, const Tensor<Real>&);                        \
  template Tensor<Real> mse(const Tensor<Real>&, const Tensor<Real>&);                        \
  template Tensor<Real> concat_rows(const std::vector<Tensor<Real>>&);                        \
  template Tensor<Real> gather_rows(const Tensor<Real>&, std::span<const std::size_t>);       \
  template Tensor<Real> embedding_mean(const Tensor<Real>&,                                   \
                                       const std::vector<std::vector<std::size_t>>&);         \
  template Tensor<Real> attention(const Tensor<Real>&, const Tensor<Real>&,                   \
                                  const Tensor<Real>&, std::size_t, std::size_t);             \
  template void backward(const Tensor<Real>&);

SHAPEGUIDE_INSTANTIATE(float)
SHAPEGUIDE_INSTANTIATE(double)

#undef SHAPEGUIDE_INSTANTIATE

}  // namespace shapeguide
