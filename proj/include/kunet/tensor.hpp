// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Operations on tensors
// that require gradients record their parents and a backward rule; backward()
// walks the recorded DAG once in reverse topological order. Leaf gradients
// accumulate until the caller clears them with zero_grad().
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "kunet/errors.hpp"

namespace kunet {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<NodeType>()) {
    if (kunet::numel(shape) != data.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                           std::to_string(kunet::numel(shape)) + " elements but " +
                           std::to_string(data.size()) + " values were given");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = kunet::numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, {value}, requires_grad);
  }

  static Tensor from_node(std::shared_ptr<NodeType> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  /// Extent of axis `axis`; negative values count from the back.
  std::size_t dim(long axis) const {
    const long r = static_cast<long>(rank());
    const long a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
      throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                           shape_str(shape()));
    }
    return node_->shape[static_cast<std::size_t>(a)];
  }

  std::span<const T> data() const { return node_->data; }
  std::span<T> data() { return node_->data; }
  std::vector<T> to_vector() const { return node_->data; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  T operator[](std::size_t i) const { return node_->data[i]; }
  T& operator[](std::size_t i) { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Copy of the values with no graph history.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  const std::shared_ptr<NodeType>& node() const { return node_; }

 private:
  std::shared_ptr<NodeType> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> parents, const char* op,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor<T>* p : parents) any = any || p->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const Tensor<T>* p : parents) node->parents.push_back(p->node());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& parents,
                      const char* op, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& p : parents) node->parents.push_back(p.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
  const long r = static_cast<long>(rank);
  const long a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// C(p,r) += A(p,q) * B(q,r)
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    T* ci = c + i * r;
    const T* ai = a + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const T aik = ai[k];
      const T* bk = b + k * r;
      for (std::size_t j = 0; j < r; ++j) ci[j] += aik * bk[j];
    }
  }
}

// GA(p,q) += G(p,r) * B(q,r)^T
template <typename T>
void gemm_acc_bt(const T* g, const T* b, T* ga, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const T* gi = g + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const T* bk = b + k * r;
      T s = 0;
      for (std::size_t j = 0; j < r; ++j) s += gi[j] * bk[j];
      ga[i * q + k] += s;
    }
  }
}

// GB(q,r) += A(p,q)^T * G(p,r)
template <typename T>
void gemm_acc_at(const T* a, const T* g, T* gb, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const T* ai = a + i * q;
    const T* gi = g + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const T aik = ai[k];
      T* gbk = gb + k * r;
      for (std::size_t j = 0; j < r; ++j) gbk[j] += aik * gi[j];
    }
  }
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, const char* op, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result<T>(x.shape(), std::move(out), {&x}, op, [deriv](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, "add", [](detail::Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, "sub", [](detail::Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const T sign = k == 0 ? T(1) : T(-1);
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, "mul", [](detail::Node<T>& self) {
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
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary(
      x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

/// x + y where y's shape equals the trailing axes of x; y is repeated over
/// the leading (batch) axes. Covers bias addition and positional encodings.
template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& y) {
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.rbegin(), ys.rend(), xs.rbegin())) {
    throw DimensionError("add_broadcast: " + shape_str(ys) + " is not a suffix of " + shape_str(xs));
  }
  const std::size_t inner = y.numel();
  const std::size_t outer = inner == 0 ? 0 : x.numel() / inner;
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = x[o * inner + i] + y[i];
  return detail::make_result<T>(xs, std::move(out), {&x, &y}, "add_broadcast",
                                [outer, inner](detail::Node<T>& self) {
                                  auto& px = *self.parents[0];
                                  auto& py = *self.parents[1];
                                  if (px.requires_grad) {
                                    auto& g = px.grad_buffer();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  }
                                  if (py.requires_grad) {
                                    auto& g = py.grad_buffer();
                                    for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t i = 0; i < inner; ++i) g[i] += self.grad[o * inner + i];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Matrix product with broadcast batch prefixes

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: operands need rank >= 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t p = a.dim(-2), q = a.dim(-1), r = b.dim(-1);
  if (b.dim(-2) != q) {
    throw DimensionError("matmul: inner extents differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const Shape pa(a.shape().begin(), a.shape().end() - 2);
  const Shape pb(b.shape().begin(), b.shape().end() - 2);
  const std::size_t n = std::max(pa.size(), pb.size());
  Shape prefix(n);
  std::vector<std::size_t> sa(n, 0), sb(n, 0);  // element strides in units of matrices
  {
    std::size_t stride_a = 1, stride_b = 1;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t ax = n - 1 - k;
      const std::size_t da = k < pa.size() ? pa[pa.size() - 1 - k] : 1;
      const std::size_t db = k < pb.size() ? pb[pb.size() - 1 - k] : 1;
      if (da != db && da != 1 && db != 1) {
        throw DimensionError("matmul: batch prefixes of " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " are not broadcastable");
      }
      prefix[ax] = std::max(da, db);
      sa[ax] = da == 1 ? 0 : stride_a;
      sb[ax] = db == 1 ? 0 : stride_b;
      stride_a *= da;
      stride_b *= db;
    }
  }
  const std::size_t batches = numel(prefix);
  std::vector<std::size_t> off_a(batches), off_b(batches);
  {
    std::vector<std::size_t> idx(n, 0);
    for (std::size_t bi = 0; bi < batches; ++bi) {
      std::size_t oa = 0, ob = 0;
      for (std::size_t k = 0; k < n; ++k) {
        oa += idx[k] * sa[k];
        ob += idx[k] * sb[k];
      }
      off_a[bi] = oa;
      off_b[bi] = ob;
      for (std::size_t k = n; k-- > 0;) {
        if (++idx[k] < prefix[k]) break;
        idx[k] = 0;
      }
    }
  }
  Shape out_shape = prefix;
  out_shape.push_back(p);
  out_shape.push_back(r);
  std::vector<T> out(batches * p * r, T(0));
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::size_t bi = 0; bi < batches; ++bi) {
    detail::gemm_acc(ad + off_a[bi] * p * q, bd + off_b[bi] * q * r, out.data() + bi * p * r, p, q, r);
  }
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), {&a, &b}, "matmul",
      [p, q, r, off_a = std::move(off_a), off_b = std::move(off_b)](detail::Node<T>& self) {
        auto& na = *self.parents[0];
        auto& nb = *self.parents[1];
        const std::size_t batches = off_a.size();
        if (na.requires_grad) {
          auto& ga = na.grad_buffer();
          for (std::size_t bi = 0; bi < batches; ++bi) {
            detail::gemm_acc_bt(self.grad.data() + bi * p * r, nb.data.data() + off_b[bi] * q * r,
                                ga.data() + off_a[bi] * p * q, p, q, r);
          }
        }
        if (nb.requires_grad) {
          auto& gb = nb.grad_buffer();
          for (std::size_t bi = 0; bi < batches; ++bi) {
            detail::gemm_acc_at(na.data.data() + off_a[bi] * p * q, self.grad.data() + bi * p * r,
                                gb.data() + off_b[bi] * q * r, p, q, r);
          }
        }
      });
}

/// x * w + b over the last axis of x; w is (in, out), b is (out).
template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_broadcast(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Softmax

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, long axis = -1) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "softmax");
  const auto& s = x.shape();
  const std::size_t n = s[ax];
  const std::size_t inner = numel(Shape(s.begin() + static_cast<long>(ax) + 1, s.end()));
  const std::size_t outer = numel(Shape(s.begin(), s.begin() + static_cast<long>(ax)));
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      T mx = in[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, in[base + k * inner]);
      T sum = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const T e = std::exp(in[base + k * inner] - mx);
        out[base + k * inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= sum;
    }
  }
  return detail::make_result<T>(s, std::move(out), {&x}, "softmax", [outer, n, inner](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_buffer();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        T dot = 0;
        for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t at = base + k * inner;
          gx[at] += y[at] * (g[at] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return detail::make_result<T>(std::move(shape), x.to_vector(), {&x}, "reshape", [](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// General axis permutation; output axis k is input axis perm[k]. Always
/// materializes a row-major copy.
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  {
    std::vector<bool> seen(r, false);
    bool ok = perm.size() == r;
    for (std::size_t k = 0; ok && k < perm.size(); ++k) {
      ok = perm[k] < r && !seen[perm[k]];
      if (ok) seen[perm[k]] = true;
    }
    if (!ok) throw DimensionError("permute: invalid permutation for shape " + shape_str(x.shape()));
  }
  const auto& in_shape = x.shape();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t k = r; k-- > 1;) in_stride[k - 1] = in_stride[k] * in_shape[k];
  Shape out_shape(r);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t k = 0; k < r; ++k) {
    out_shape[k] = in_shape[perm[k]];
    src_stride[k] = in_stride[perm[k]];
  }
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
      src[i] = off;
      for (std::size_t k = r; k-- > 0;) {
        ++idx[k];
        off += src_stride[k];
        if (idx[k] < out_shape[k]) break;
        off -= src_stride[k] * idx[k];
        idx[k] = 0;
      }
    }
  }
  std::vector<T> out(n);
  const auto in = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = in[src[i]];
  return detail::make_result<T>(std::move(out_shape), std::move(out), {&x}, "permute",
                                [src = std::move(src)](detail::Node<T>& self) {
                                  auto& p = *self.parents[0];
                                  if (!p.requires_grad) return;
                                  auto& g = p.grad_buffer();
                                  for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
                                });
}

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank < 2 for " + shape_str(x.shape()));
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, perm);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, long axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  const std::size_t r = parts.front().rank();
  const std::size_t ax = detail::normalize_axis(axis, r, "concat");
  Shape out_shape = parts.front().shape();
  out_shape[ax] = 0;
  for (const auto& t : parts) {
    Shape a = t.shape(), b = parts.front().shape();
    if (a.size() != r) throw DimensionError("concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    a[ax] = b[ax] = 0;
    if (a != b) {
      throw DimensionError("concat: shapes " + shape_str(t.shape()) + " and " +
                           shape_str(parts.front().shape()) + " differ off axis " + std::to_string(ax));
    }
    out_shape[ax] += t.shape()[ax];
  }
  const std::size_t outer = numel(Shape(out_shape.begin(), out_shape.begin() + static_cast<long>(ax)));
  const std::size_t inner = numel(Shape(out_shape.begin() + static_cast<long>(ax) + 1, out_shape.end()));
  const std::size_t row = out_shape[ax] * inner;
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> widths;
  std::size_t col = 0;
  for (const auto& t : parts) {
    const std::size_t w = t.shape()[ax] * inner;
    const auto d = t.data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(d.data() + o * w, w, out.data() + o * row + col);
    widths.push_back(w);
    col += w;
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), parts, "concat",
                                [outer, row, widths = std::move(widths)](detail::Node<T>& self) {
                                  std::size_t col = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    auto& p = *self.parents[k];
                                    const std::size_t w = widths[k];
                                    if (p.requires_grad) {
                                      auto& g = p.grad_buffer();
                                      for (std::size_t o = 0; o < outer; ++o)
                                        for (std::size_t j = 0; j < w; ++j) g[o * w + j] += self.grad[o * row + col + j];
                                    }
                                    col += w;
                                  }
                                });
}

/// Contiguous range [start, start + length) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, long axis, std::size_t start, std::size_t length) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "slice");
  const auto& s = x.shape();
  if (start + length > s[ax]) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis " + std::to_string(ax) + " of " + shape_str(s));
  }
  const std::size_t outer = numel(Shape(s.begin(), s.begin() + static_cast<long>(ax)));
  const std::size_t inner = numel(Shape(s.begin() + static_cast<long>(ax) + 1, s.end()));
  const std::size_t row = s[ax] * inner, w = length * inner, col = start * inner;
  Shape out_shape = s;
  out_shape[ax] = length;
  std::vector<T> out(outer * w);
  const auto d = x.data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(d.data() + o * row + col, w, out.data() + o * w);
  return detail::make_result<T>(std::move(out_shape), std::move(out), {&x}, "slice",
                                [outer, row, w, col](detail::Node<T>& self) {
                                  auto& p = *self.parents[0];
                                  if (!p.requires_grad) return;
                                  auto& g = p.grad_buffer();
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t j = 0; j < w; ++j) g[o * row + col + j] += self.grad[o * w + j];
                                });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return detail::make_result<T>(Shape{1}, {s}, {&x}, "sum", [](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Mean squared error as a scalar graph node.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require_same_shape(pred, target, "mse_loss");
  const std::size_t n = pred.numel();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred[i] - target[i];
    s += d * d;
  }
  return detail::make_result<T>(Shape{1}, {s / static_cast<T>(n)}, {&pred, &target}, "mse_loss",
                                [n](detail::Node<T>& self) {
                                  auto& pp = *self.parents[0];
                                  auto& pt = *self.parents[1];
                                  const T k = T(2) * self.grad[0] / static_cast<T>(n);
                                  if (pp.requires_grad) {
                                    auto& g = pp.grad_buffer();
                                    for (std::size_t i = 0; i < n; ++i) g[i] += k * (pp.data[i] - pt.data[i]);
                                  }
                                  if (pt.requires_grad) {
                                    auto& g = pt.grad_buffer();
                                    for (std::size_t i = 0; i < n; ++i) g[i] -= k * (pp.data[i] - pt.data[i]);
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Reverse pass

/// Populates grad on every node reachable from `loss` that requires it.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw ContractError("backward: loss does not depend on any tensor requiring grad");

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

}  // namespace kunet
