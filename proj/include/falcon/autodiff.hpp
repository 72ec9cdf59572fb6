#pragma once

// Minimal reverse-mode autodiff over dense row-major tensors.
//
// Graphs are built eagerly: every op computes its value and records a node
// holding its parents and a backward closure. `backward(loss)` visits the
// nodes reachable from a scalar loss in reverse topological order, once
// each. Sums are accumulated in double regardless of the storage type.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "falcon/error.hpp"

namespace falcon::ad {

using Shape = std::vector<int>;

class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& m) : Error("shape_mismatch", m) {}
};
class NotScalar : public Error {
 public:
  explicit NotScalar(const std::string& m) : Error("not_scalar", m) {}
};
class DetachedGraph : public Error {
 public:
  explicit DetachedGraph(const std::string& m) : Error("detached_graph", m) {}
};
class RepeatedBackward : public Error {
 public:
  explicit RepeatedBackward(const std::string& m) : Error("repeated_backward", m) {}
};

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily for non-leaves
  bool requires_grad = false;
  bool is_leaf = true;
  bool backward_done = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;
};

template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  static BasicTensor constant(Shape shape, std::vector<T> data) { return make(std::move(shape), std::move(data), false); }
  static BasicTensor parameter(Shape shape, std::vector<T> data) { return make(std::move(shape), std::move(data), true); }
  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = ad::numel(shape);
    return make(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static BasicTensor scalar(T v) { return constant({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> value() const { return node_->value; }
  std::span<T> mutable_value() { return node_->value; }
  /// Empty until a backward pass has reached this tensor.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    ensure_grad();
    return node_->grad;
  }
  T item() const {
    if (numel() != 1) throw NotScalar("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }
  void ensure_grad() {
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), T(0));
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

  /// Op construction helper: a non-leaf whose requires_grad is inherited.
  static BasicTensor from_op(const char* op, Shape shape, std::vector<T> data,
                             std::vector<std::shared_ptr<Node<T>>> parents) {
    BasicTensor t = make(std::move(shape), std::move(data), false);
    t.node_->op = op;
    t.node_->is_leaf = false;
    for (const auto& p : parents) t.node_->requires_grad = t.node_->requires_grad || p->requires_grad;
    t.node_->parents = std::move(parents);
    return t;
  }

 private:
  static BasicTensor make(Shape shape, std::vector<T> data, bool requires_grad) {
    for (int d : shape)
      if (d <= 0) throw ShapeMismatch("non-positive dimension in shape " + to_string(shape));
    if (data.size() != falcon::ad::numel(shape))
      throw ShapeMismatch("data length " + std::to_string(data.size()) + " does not match shape " +
                          to_string(shape));
    BasicTensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;

namespace detail {

template <class T>
void accumulate(Node<T>& n, std::size_t i, double g) {
  n.grad[i] = static_cast<T>(n.grad[i] + g);
}

template <class T>
void prepare(Node<T>& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T(0));
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatch(what);
}

// b broadcasts over a when b's shape equals a's trailing dims.
inline std::size_t broadcast_period(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return numel(b);
  bool trailing = b.size() <= a.size();
  for (std::size_t i = 0; trailing && i < b.size(); ++i)
    trailing = b[b.size() - 1 - i] == a[a.size() - 1 - i];
  require(trailing, std::string(op) + ": cannot broadcast " + to_string(b) + " over " + to_string(a));
  return numel(b);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto v = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > T(0) ? v[i] : T(0);
  auto r = BasicTensor<T>::from_op("relu", x.shape(), std::move(out), {x.shared()});
  Node<T>* self = r.node();
  Node<T>* px = x.node();
  self->backward = [self, px] {
    if (!px->requires_grad) return;
    detail::prepare(*px);
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      if (px->value[i] > T(0)) detail::accumulate(*px, i, self->grad[i]);
  };
  return r;
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto v = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v[i]))));
  auto r = BasicTensor<T>::from_op("sigmoid", x.shape(), std::move(out), {x.shared()});
  Node<T>* self = r.node();
  Node<T>* px = x.node();
  self->backward = [self, px] {
    if (!px->requires_grad) return;
    detail::prepare(*px);
    for (std::size_t i = 0; i < self->grad.size(); ++i) {
      const double s = self->value[i];
      detail::accumulate(*px, i, static_cast<double>(self->grad[i]) * s * (1.0 - s));
    }
  };
  return r;
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, double c) {
  std::vector<T> out(x.numel());
  const auto v = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(c * v[i]);
  auto r = BasicTensor<T>::from_op("scale", x.shape(), std::move(out), {x.shared()});
  Node<T>* self = r.node();
  Node<T>* px = x.node();
  self->backward = [self, px, c] {
    if (!px->requires_grad) return;
    detail::prepare(*px);
    for (std::size_t i = 0; i < self->grad.size(); ++i) detail::accumulate(*px, i, c * self->grad[i]);
  };
  return r;
}

/// a + b, where b is a's shape or a's trailing dims.
template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::size_t period = detail::broadcast_period(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  const auto av = a.value();
  const auto bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(static_cast<double>(av[i]) + bv[i % period]);
  auto r = BasicTensor<T>::from_op("add", a.shape(), std::move(out), {a.shared(), b.shared()});
  Node<T>* self = r.node();
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  self->backward = [self, pa, pb, period] {
    const std::size_t n = self->grad.size();
    if (pa->requires_grad) {
      detail::prepare(*pa);
      for (std::size_t i = 0; i < n; ++i) detail::accumulate(*pa, i, self->grad[i]);
    }
    if (pb->requires_grad) {
      detail::prepare(*pb);
      std::vector<double> acc(period, 0.0);
      for (std::size_t i = 0; i < n; ++i) acc[i % period] += self->grad[i];
      for (std::size_t j = 0; j < period; ++j) detail::accumulate(*pb, j, acc[j]);
    }
  };
  return r;
}

/// Elementwise a * b, where b is a's shape or a's trailing dims.
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::size_t period = detail::broadcast_period(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  const auto av = a.value();
  const auto bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(static_cast<double>(av[i]) * bv[i % period]);
  auto r = BasicTensor<T>::from_op("mul", a.shape(), std::move(out), {a.shared(), b.shared()});
  Node<T>* self = r.node();
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  self->backward = [self, pa, pb, period] {
    const std::size_t n = self->grad.size();
    if (pa->requires_grad) {
      detail::prepare(*pa);
      for (std::size_t i = 0; i < n; ++i)
        detail::accumulate(*pa, i, static_cast<double>(self->grad[i]) * pb->value[i % period]);
    }
    if (pb->requires_grad) {
      detail::prepare(*pb);
      std::vector<double> acc(period, 0.0);
      for (std::size_t i = 0; i < n; ++i) acc[i % period] += static_cast<double>(self->grad[i]) * pa->value[i];
      for (std::size_t j = 0; j < period; ++j) detail::accumulate(*pb, j, acc[j]);
    }
  };
  return r;
}

// ---------------------------------------------------------------- reductions

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double s = 0.0;
  for (T v : x.value()) s += v;
  auto r = BasicTensor<T>::from_op("sum", {1}, {static_cast<T>(s)}, {x.shared()});
  Node<T>* self = r.node();
  Node<T>* px = x.node();
  self->backward = [self, px] {
    if (!px->requires_grad) return;
    detail::prepare(*px);
    const double g = self->grad[0];
    for (std::size_t i = 0; i < px->value.size(); ++i) detail::accumulate(*px, i, g);
  };
  return r;
}

/// [N, C, H, W] -> [N, C]
template <class T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  detail::require(x.rank() == 4, "global_avg_pool: expected rank 4, got " + to_string(x.shape()));
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<T> out(static_cast<std::size_t>(n) * c);
  const auto v = x.value();
  for (std::size_t p = 0; p < out.size(); ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += v[p * hw + i];
    out[p] = static_cast<T>(s / static_cast<double>(hw));
  }
  auto r = BasicTensor<T>::from_op("global_avg_pool", {n, c}, std::move(out), {x.shared()});
  Node<T>* self = r.node();
  Node<T>* px = x.node();
  self->backward = [self, px, hw] {
    if (!px->requires_grad) return;
    detail::prepare(*px);
    for (std::size_t p = 0; p < self->grad.size(); ++p) {
      const double g = static_cast<double>(self->grad[p]) / static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) detail::accumulate(*px, p * hw + i, g);
    }
  };
  return r;
}

// ---------------------------------------------------------------- linear algebra

/// [N, K] x [K, M] -> [N, M]
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                  "matmul: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(n) * m);
  const auto av = a.value();
  const auto bv = b.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += static_cast<double>(av[i * k + l]) * bv[l * m + j];
      out[i * m + j] = static_cast<T>(s);
    }
  auto r = BasicTensor<T>::from_op("matmul", {n, m}, std::move(out), {a.shared(), b.shared()});
  Node<T>* self = r.node();
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  self->backward = [self, pa, pb, n, k, m] {
    const auto& g = self->grad;
    if (pa->requires_grad) {
      detail::prepare(*pa);
      for (int i = 0; i < n; ++i)
        for (int l = 0; l < k; ++l) {
          double s = 0.0;
          for (int j = 0; j < m; ++j) s += static_cast<double>(g[i * m + j]) * pb->value[l * m + j];
          detail::accumulate(*pa, static_cast<std::size_t>(i * k + l), s);
        }
    }
    if (pb->requires_grad) {
      detail::prepare(*pb);
      for (int l = 0; l < k; ++l)
        for (int j = 0; j < m; ++j) {
          double s = 0.0;
          for (int i = 0; i < n; ++i) s += static_cast<double>(pa->value[i * k + l]) * g[i * m + j];
          detail::accumulate(*pb, static_cast<std::size_t>(l * m + j), s);
        }
    }
  };
  return r;
}

// ---------------------------------------------------------------- spatial

/// x [N, C, H, W], w [O, C, K, K], b [O] -> [N, O, Ho, Wo] with zero padding.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b, int stride,
                      int pad) {
  detail::require(x.rank() == 4 && w.rank() == 4 && b.rank() == 1,
                  "conv2d: expected x rank 4, w rank 4, b rank 1; got " + to_string(x.shape()) + ", " +
                      to_string(w.shape()) + ", " + to_string(b.shape()));
  detail::require(w.dim(1) == x.dim(1) && w.dim(2) == w.dim(3) && b.dim(0) == w.dim(0) && stride >= 1 && pad >= 0,
                  "conv2d: incompatible shapes x " + to_string(x.shape()) + " w " + to_string(w.shape()) + " b " +
                      to_string(b.shape()));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  detail::require(ho > 0 && wo > 0, "conv2d: kernel larger than padded input " + to_string(x.shape()));

  // Valid output range along one axis for kernel offset `kk`.
  auto range = [stride, pad](int kk, int in, int out_len) {
    int lo = 0;
    while (lo < out_len && lo * stride + kk - pad < 0) ++lo;
    int hi = out_len;
    while (hi > lo && (hi - 1) * stride + kk - pad >= in) --hi;
    return std::pair<int, int>(lo, hi);
  };

  const std::size_t in_plane = static_cast<std::size_t>(h) * wd;
  const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;
  std::vector<T> out(static_cast<std::size_t>(n) * o * out_plane);
  std::vector<double> acc(out_plane);
  const auto xv = x.value();
  const auto wv = w.value();
  const auto bv = b.value();
  for (int in = 0; in < n; ++in) {
    for (int oc = 0; oc < o; ++oc) {
      std::fill(acc.begin(), acc.end(), static_cast<double>(bv[oc]));
      for (int ic = 0; ic < c; ++ic) {
        const T* xp = xv.data() + (static_cast<std::size_t>(in) * c + ic) * in_plane;
        for (int ky = 0; ky < k; ++ky) {
          const auto [y0, y1] = range(ky, h, ho);
          for (int kx = 0; kx < k; ++kx) {
            const auto [x0, x1] = range(kx, wd, wo);
            const double wgt = wv[((static_cast<std::size_t>(oc) * c + ic) * k + ky) * k + kx];
            for (int oy = y0; oy < y1; ++oy) {
              const T* row = xp + static_cast<std::size_t>(oy * stride + ky - pad) * wd + (kx - pad);
              double* arow = acc.data() + static_cast<std::size_t>(oy) * wo;
              for (int ox = x0; ox < x1; ++ox) arow[ox] += wgt * row[ox * stride];
            }
          }
        }
      }
      T* op = out.data() + (static_cast<std::size_t>(in) * o + oc) * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) op[i] = static_cast<T>(acc[i]);
    }
  }

  auto r = BasicTensor<T>::from_op("conv2d", {n, o, ho, wo}, std::move(out), {x.shared(), w.shared(), b.shared()});
  Node<T>* self = r.node();
  Node<T>* px = x.node();
  Node<T>* pw = w.node();
  Node<T>* pb = b.node();
  self->backward = [=] {
    const auto& g = self->grad;
    if (pb->requires_grad) {
      detail::prepare(*pb);
      for (int oc = 0; oc < o; ++oc) {
        double s = 0.0;
        for (int in = 0; in < n; ++in) {
          const T* gp = g.data() + (static_cast<std::size_t>(in) * o + oc) * out_plane;
          for (std::size_t i = 0; i < out_plane; ++i) s += gp[i];
        }
        detail::accumulate(*pb, static_cast<std::size_t>(oc), s);
      }
    }
    if (pw->requires_grad) {
      detail::prepare(*pw);
      for (int oc = 0; oc < o; ++oc)
        for (int ic = 0; ic < c; ++ic)
          for (int ky = 0; ky < k; ++ky) {
            const auto [y0, y1] = range(ky, h, ho);
            for (int kx = 0; kx < k; ++kx) {
              const auto [x0, x1] = range(kx, wd, wo);
              double s = 0.0;
              for (int in = 0; in < n; ++in) {
                const T* gp = g.data() + (static_cast<std::size_t>(in) * o + oc) * out_plane;
                const T* xp = px->value.data() + (static_cast<std::size_t>(in) * c + ic) * in_plane;
                for (int oy = y0; oy < y1; ++oy) {
                  const T* row = xp + static_cast<std::size_t>(oy * stride + ky - pad) * wd + (kx - pad);
                  const T* grow = gp + static_cast<std::size_t>(oy) * wo;
                  for (int ox = x0; ox < x1; ++ox) s += static_cast<double>(grow[ox]) * row[ox * stride];
                }
              }
              detail::accumulate(*pw, ((static_cast<std::size_t>(oc) * c + ic) * k + ky) * k + kx, s);
            }
          }
    }
    if (px->requires_grad) {
      detail::prepare(*px);
      std::vector<double> dx(in_plane);
      for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
          std::fill(dx.begin(), dx.end(), 0.0);
          for (int oc = 0; oc < o; ++oc) {
            const T* gp = g.data() + (static_cast<std::size_t>(in) * o + oc) * out_plane;
            for (int ky = 0; ky < k; ++ky) {
              const auto [y0, y1] = range(ky, h, ho);
              for (int kx = 0; kx < k; ++kx) {
                const auto [x0, x1] = range(kx, wd, wo);
                const double wgt = pw->value[((static_cast<std::size_t>(oc) * c + ic) * k + ky) * k + kx];
                for (int oy = y0; oy < y1; ++oy) {
                  double* row = dx.data() + static_cast<std::size_t>(oy * stride + ky - pad) * wd + (kx - pad);
                  const T* grow = gp + static_cast<std::size_t>(oy) * wo;
                  for (int ox = x0; ox < x1; ++ox) row[ox * stride] += wgt * grow[ox];
                }
              }
            }
          }
          const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * in_plane;
          for (std::size_t i = 0; i < in_plane; ++i) detail::accumulate(*px, base + i, dx[i]);
        }
    }
  };
  return r;
}

/// [N, C, H, W] -> [N, C, 2H, 2W]
template <class T>
BasicTensor<T> nearest_upsample2x(const BasicTensor<T>& x) {
  detail::require(x.rank() == 4, "nearest_upsample2x: expected rank 4, got " + to_string(x.shape()));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int h2 = 2 * h, w2 = 2 * w;
  std::vector<T> out(static_cast<std::size_t>(n) * c * h2 * w2);
  const auto v = x.value();
  for (std::size_t p = 0; p < static_cast<std::size_t>(n) * c; ++p)
    for (int y = 0; y < h2; ++y)
      for (int xx = 0; xx < w2; ++xx)
        out[(p * h2 + y) * w2 + xx] = v[(p * h + y / 2) * w + xx / 2];
  auto r = BasicTensor<T>::from_op("nearest_upsample2x", {n, c, h2, w2}, std::move(out), {x.shared()});
  Node<T>* self = r.node();
  Node<T>* px = x.node();
  self->backward = [self, px, n, c, h, w] {
    if (!px->requires_grad) return;
    detail::prepare(*px);
    const int h2 = 2 * h, w2 = 2 * w;
    for (std::size_t p = 0; p < static_cast<std::size_t>(n) * c; ++p)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const auto& g = self->grad;
          const std::size_t o0 = (p * h2 + 2 * y) * w2 + 2 * xx;
          const double s = static_cast<double>(g[o0]) + g[o0 + 1] + g[o0 + w2] + g[o0 + w2 + 1];
          detail::accumulate(*px, (p * h + y) * w + xx, s);
        }
  };
  return r;
}

/// Concatenate along axis 1 (channels). Other dims must match.
template <class T>
BasicTensor<T> concat(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  bool ok = a.rank() >= 2 && a.rank() == b.rank() && a.dim(0) == b.dim(0);
  for (std::size_t i = 2; ok && i < a.rank(); ++i) ok = a.dim(i) == b.dim(i);
  detail::require(ok, "concat: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const int n = a.dim(0);
  const std::size_t ea = a.numel() / n, eb = b.numel() / n;
  Shape shape = a.shape();
  shape[1] += b.dim(1);
  std::vector<T> out;
  out.reserve(a.numel() + b.numel());
  const auto av = a.value();
  const auto bv = b.value();
  for (int i = 0; i < n; ++i) {
    out.insert(out.end(), av.begin() + i * ea, av.begin() + (i + 1) * ea);
    out.insert(out.end(), bv.begin() + i * eb, bv.begin() + (i + 1) * eb);
  }
  auto r = BasicTensor<T>::from_op("concat", std::move(shape), std::move(out), {a.shared(), b.shared()});
  Node<T>* self = r.node();
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  self->backward = [self, pa, pb, n, ea, eb] {
    if (pa->requires_grad) detail::prepare(*pa);
    if (pb->requires_grad) detail::prepare(*pb);
    for (int i = 0; i < n; ++i) {
      const std::size_t base = i * (ea + eb);
      if (pa->requires_grad)
        for (std::size_t j = 0; j < ea; ++j) detail::accumulate(*pa, i * ea + j, self->grad[base + j]);
      if (pb->requires_grad)
        for (std::size_t j = 0; j < eb; ++j) detail::accumulate(*pb, i * eb + j, self->grad[base + ea + j]);
    }
  };
  return r;
}

// ---------------------------------------------------------------- losses

/// Mean binary cross-entropy of probabilities p against targets y.
template <class T>
BasicTensor<T> bce_loss(const BasicTensor<T>& p, const BasicTensor<T>& y) {
  detail::require(p.shape() == y.shape(),
                  "bce_loss: shapes differ " + to_string(p.shape()) + " vs " + to_string(y.shape()));
  static constexpr double eps = 1e-7;
  const auto pv = p.value();
  const auto yv = y.value();
  const double inv_n = 1.0 / static_cast<double>(p.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double q = std::clamp(static_cast<double>(pv[i]), eps, 1.0 - eps);
    s -= yv[i] * std::log(q) + (1.0 - yv[i]) * std::log(1.0 - q);
  }
  auto r = BasicTensor<T>::from_op("bce_loss", {1}, {static_cast<T>(s * inv_n)}, {p.shared(), y.shared()});
  Node<T>* self = r.node();
  Node<T>* pp = p.node();
  Node<T>* py = y.node();
  self->backward = [self, pp, py, inv_n] {
    const double g = self->grad[0] * inv_n;
    if (pp->requires_grad) {
      detail::prepare(*pp);
      for (std::size_t i = 0; i < pp->value.size(); ++i) {
        const double raw = pp->value[i];
        if (raw <= eps || raw >= 1.0 - eps) continue;  // clamped region
        const double yy = py->value[i];
        detail::accumulate(*pp, i, g * (-yy / raw + (1.0 - yy) / (1.0 - raw)));
      }
    }
    if (py->requires_grad) {
      detail::prepare(*py);
      for (std::size_t i = 0; i < py->value.size(); ++i) {
        const double q = std::clamp(static_cast<double>(pp->value[i]), eps, 1.0 - eps);
        detail::accumulate(*py, i, g * (std::log(1.0 - q) - std::log(q)));
      }
    }
  };
  return r;
}

/// Sum of squared differences.
template <class T>
BasicTensor<T> l2_loss(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "l2_loss: shapes differ " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const auto av = a.value();
  const auto bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    s += d * d;
  }
  auto r = BasicTensor<T>::from_op("l2_loss", {1}, {static_cast<T>(s)}, {a.shared(), b.shared()});
  Node<T>* self = r.node();
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  self->backward = [self, pa, pb] {
    const double g = self->grad[0];
    for (std::size_t i = 0; i < pa->value.size(); ++i) {
      const double d = 2.0 * g * (static_cast<double>(pa->value[i]) - pb->value[i]);
      if (pa->requires_grad) {
        detail::prepare(*pa);
        detail::accumulate(*pa, i, d);
      }
      if (pb->requires_grad) {
        detail::prepare(*pb);
        detail::accumulate(*pb, i, -d);
      }
    }
  };
  return r;
}

// ---------------------------------------------------------------- backward

/// Gradients of the leaves reached by one backward pass.
template <class T>
class GradientMap {
 public:
  std::span<const T> operator[](const BasicTensor<T>& leaf) const { return leaf.grad(); }
  const std::vector<Node<T>*>& leaves() const { return leaves_; }
  void add_leaf(Node<T>* n) { leaves_.push_back(n); }

 private:
  std::vector<Node<T>*> leaves_;
};

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
/// `loss`. A loss can be back-propagated once; call reset_backward() to
/// clear intermediate gradients before a second pass.
template <class T>
GradientMap<T> backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw NotScalar("backward: loss must be a scalar, got shape " + (loss.defined() ? to_string(loss.shape()) : "[]"));
  Node<T>* root = loss.node();
  if (!root->requires_grad) throw DetachedGraph("backward: loss does not depend on any parameter");
  if (root->backward_done) throw RepeatedBackward("backward: already called on this loss; reset first");

  // Iterative post-order DFS over grad-carrying nodes.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack = {{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  GradientMap<T> map;
  for (Node<T>* n : order) {
    if (n->is_leaf) {
      detail::prepare(*n);
      map.add_leaf(n);
    } else {
      n->grad.assign(n->value.size(), T(0));
    }
  }
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward();
  root->backward_done = true;
  return map;
}

/// Allows backward() to be called again on the same graph.
template <class T>
void reset_backward(const BasicTensor<T>& loss) {
  loss.node()->backward_done = false;
}

}  // namespace falcon::ad
