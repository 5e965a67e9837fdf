#ifndef RRPSR_AUTODIFF_HPP
#define RRPSR_AUTODIFF_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "rrpsr/common.hpp"

// Minimal reverse-mode engine over dense real tensors. Complex data is
// carried as paired real/imag tensors (Complex<S>). Gradients accumulate
// into leaf .grad buffers; callers zero them explicitly between passes.
namespace rrpsr::ad {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

/// RAII scope that disables tape recording (inference mode).
struct NoGradGuard {
  NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = prev; }
  bool prev;
};

template <class S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily by backward
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

template <class S>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<S> data) {
    if (static_cast<std::int64_t>(data.size()) != numel(shape))
      throw ShapeMismatch("tensor data size " + std::to_string(data.size()) +
                          " vs shape " + shape_str(shape));
    node_ = std::make_shared<Node<S>>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->id = next_id();
  }

  static Tensor zeros(Shape shape) {
    return Tensor(std::move(shape), std::vector<S>(0), true);
  }
  static Tensor full(Shape shape, S v) {
    std::vector<S> d(numel(shape), v);
    return Tensor(std::move(shape), std::move(d));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const { return numel(node_->shape); }
  std::vector<S>& data() { return node_->value; }
  const std::vector<S>& data() const { return node_->value; }
  std::vector<S>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v = true) {
    node_->requires_grad = v;
    return *this;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

  std::shared_ptr<Node<S>> node() const { return node_; }

  /// Detached copy sharing nothing with the graph.
  Tensor detach() const { return Tensor(node_->shape, node_->value); }

  static std::uint64_t next_id() {
    static std::uint64_t counter = 0;
    return ++counter;
  }

 private:
  Tensor(Shape shape, std::vector<S> data, bool /*zeros*/) {
    node_ = std::make_shared<Node<S>>();
    node_->value.assign(numel(shape), S(0));
    node_->shape = std::move(shape);
    node_->id = next_id();
  }
  std::shared_ptr<Node<S>> node_;
};

namespace detail {

template <class S>
Tensor<S> make_result(Shape shape, std::vector<S> value,
                      std::vector<Tensor<S>> parents,
                      std::function<void(Node<S>&)> backward) {
  Tensor<S> out(std::move(shape), std::move(value));
  bool need = false;
  for (const auto& p : parents) need = need || p.requires_grad();
  if (grad_enabled() && need) {
    out.set_requires_grad(true);
    auto n = out.node();
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
  }
  return out;
}

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b,
                      const char* opname) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(opname) + ": " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
}

template <class S>
using MatMap =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

// ---- elementwise ----

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<S> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  return detail::make_result<S>(a.shape(), std::move(v), {a, b},
                                [](Node<S>& n) {
                                  for (auto& p : n.parents) {
                                    if (!p->requires_grad) continue;
                                    p->ensure_grad();
                                    for (std::size_t i = 0; i < n.grad.size(); ++i)
                                      p->grad[i] += n.grad[i];
                                  }
                                });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<S> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  return detail::make_result<S>(
      a.shape(), std::move(v), {a, b}, [](Node<S>& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
        }
      });
}

/// Hadamard product.
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<S> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  return detail::make_result<S>(
      a.shape(), std::move(v), {a, b}, [](Node<S>& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i] += n.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i)
            pb->grad[i] += n.grad[i] * pa->value[i];
        }
      });
}

template <class S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "div");
  std::vector<S> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] / b.data()[i];
  return detail::make_result<S>(
      a.shape(), std::move(v), {a, b}, [](Node<S>& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i] += n.grad[i] / pb->value[i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i)
            pb->grad[i] -= n.grad[i] * pa->value[i] / (pb->value[i] * pb->value[i]);
        }
      });
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = -a.data()[i];
  return detail::make_result<S>(a.shape(), std::move(v), {a}, [](Node<S>& n) {
    auto& p = n.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] -= n.grad[i];
  });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = c * a.data()[i];
  return detail::make_result<S>(a.shape(), std::move(v), {a}, [c](Node<S>& n) {
    auto& p = n.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += c * n.grad[i];
  });
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  std::vector<S> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] + c;
  return detail::make_result<S>(a.shape(), std::move(v), {a}, [](Node<S>& n) {
    auto& p = n.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
  });
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i)
    v[i] = a.data()[i] > S(0) ? a.data()[i] : S(0);
  return detail::make_result<S>(a.shape(), std::move(v), {a}, [](Node<S>& n) {
    auto& p = n.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (p->value[i] > S(0)) p->grad[i] += n.grad[i];
  });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i)
    v[i] = S(1) / (S(1) + std::exp(-a.data()[i]));
  return detail::make_result<S>(a.shape(), std::move(v), {a}, [](Node<S>& n) {
    auto& p = n.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      S y = n.value[i];
      p->grad[i] += n.grad[i] * y * (S(1) - y);
    }
  });
}

/// max(x, c); subgradient 0 where clamped.
template <class S>
Tensor<S> clamp_min(const Tensor<S>& a, S c) {
  std::vector<S> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = std::max(a.data()[i], c);
  return detail::make_result<S>(a.shape(), std::move(v), {a}, [c](Node<S>& n) {
    auto& p = n.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (p->value[i] > c) p->grad[i] += n.grad[i];
  });
}

/// sqrt(re^2 + im^2) with an eps floor on the backward division; gradient is
/// zero at the origin.
template <class S>
Tensor<S> magnitude(const Tensor<S>& re, const Tensor<S>& im,
                    S eps = S(1e-12)) {
  detail::check_same_shape(re, im, "magnitude");
  std::vector<S> v(re.size());
  for (std::int64_t i = 0; i < re.size(); ++i)
    v[i] = std::sqrt(re.data()[i] * re.data()[i] + im.data()[i] * im.data()[i]);
  return detail::make_result<S>(
      re.shape(), std::move(v), {re, im}, [eps](Node<S>& n) {
        auto& pr = n.parents[0];
        auto& pi = n.parents[1];
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          S m = std::max(n.value[i], eps);
          if (n.value[i] == S(0)) continue;  // subgradient 0 at origin
          if (pr->requires_grad) {
            pr->ensure_grad();
            pr->grad[i] += n.grad[i] * pr->value[i] / m;
          }
          if (pi->requires_grad) {
            pi->ensure_grad();
            pi->grad[i] += n.grad[i] * pi->value[i] / m;
          }
        }
      });
}

// ---- shape ops ----

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeMismatch("reshape " + shape_str(a.shape()) + " -> " +
                        shape_str(shape));
  return detail::make_result<S>(std::move(shape), a.data(), {a},
                                [](Node<S>& n) {
                                  auto& p = n.parents[0];
                                  if (!p->requires_grad) return;
                                  p->ensure_grad();
                                  for (std::size_t i = 0; i < n.grad.size(); ++i)
                                    p->grad[i] += n.grad[i];
                                });
}

/// Concatenate [B,C1,L] and [B,C2,L] along the channel axis.
template <class S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape().size() != 3 || b.shape().size() != 3 ||
      a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[2])
    throw ShapeMismatch("concat_channels: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  const int batch = a.shape()[0], c1 = a.shape()[1], c2 = b.shape()[1],
            len = a.shape()[2];
  std::vector<S> v(static_cast<std::size_t>(batch) * (c1 + c2) * len);
  for (int bi = 0; bi < batch; ++bi) {
    std::copy_n(a.data().begin() + static_cast<std::size_t>(bi) * c1 * len,
                static_cast<std::size_t>(c1) * len,
                v.begin() + static_cast<std::size_t>(bi) * (c1 + c2) * len);
    std::copy_n(b.data().begin() + static_cast<std::size_t>(bi) * c2 * len,
                static_cast<std::size_t>(c2) * len,
                v.begin() + static_cast<std::size_t>(bi) * (c1 + c2) * len +
                    static_cast<std::size_t>(c1) * len);
  }
  return detail::make_result<S>(
      {batch, c1 + c2, len}, std::move(v), {a, b},
      [batch, c1, c2, len](Node<S>& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        for (int bi = 0; bi < batch; ++bi) {
          const S* g = n.grad.data() +
                       static_cast<std::size_t>(bi) * (c1 + c2) * len;
          if (pa->requires_grad) {
            pa->ensure_grad();
            S* ga = pa->grad.data() + static_cast<std::size_t>(bi) * c1 * len;
            for (int i = 0; i < c1 * len; ++i) ga[i] += g[i];
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            S* gb = pb->grad.data() + static_cast<std::size_t>(bi) * c2 * len;
            for (int i = 0; i < c2 * len; ++i) gb[i] += g[c1 * len + i];
          }
        }
      });
}

// ---- reductions ----

template <class S>
Tensor<S> reduce_sum(const Tensor<S>& a) {
  S s = S(0);
  for (S v : a.data()) s += v;
  return detail::make_result<S>({1}, {s}, {a}, [](Node<S>& n) {
    auto& p = n.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (auto& g : p->grad) g += n.grad[0];
  });
}

template <class S>
Tensor<S> reduce_mean(const Tensor<S>& a) {
  return scale(reduce_sum(a), S(1) / static_cast<S>(a.size()));
}

// ---- matmul ----

/// Standard matrix product: a [m,k] x b [k,n] -> [m,n].
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    throw ShapeMismatch("matmul: " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<S> v(static_cast<std::size_t>(m) * n);
  {
    detail::ConstMatMap<S> ma(a.data().data(), m, k);
    detail::ConstMatMap<S> mb(b.data().data(), k, n);
    detail::MatMap<S> mo(v.data(), m, n);
    mo.noalias() = ma * mb;
  }
  return detail::make_result<S>(
      {m, n}, std::move(v), {a, b}, [m, k, n](Node<S>& n_) {
        auto& pa = n_.parents[0];
        auto& pb = n_.parents[1];
        detail::ConstMatMap<S> g(n_.grad.data(), m, n);
        if (pa->requires_grad) {
          pa->ensure_grad();
          detail::ConstMatMap<S> mb(pb->value.data(), k, n);
          detail::MatMap<S> ga(pa->grad.data(), m, k);
          ga.noalias() += g * mb.transpose();
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          detail::ConstMatMap<S> ma(pa->value.data(), m, k);
          detail::MatMap<S> gb(pb->grad.data(), k, n);
          gb.noalias() += ma.transpose() * g;
        }
      });
}

// ---- convolution ----

namespace detail {

/// col [Cin*K, B*Lout]; col[(ci*K+k), b*Lout+t] = x[b, ci, t*s + k - pad].
template <class S>
void im2col(const S* x, int batch, int cin, int len, int kernel, int stride,
            int pad, int lout, S* col) {
  const std::int64_t cols = static_cast<std::int64_t>(batch) * lout;
  for (int ci = 0; ci < cin; ++ci) {
    for (int k = 0; k < kernel; ++k) {
      S* row = col + (static_cast<std::int64_t>(ci) * kernel + k) * cols;
      for (int b = 0; b < batch; ++b) {
        const S* xb = x + (static_cast<std::int64_t>(b) * cin + ci) * len;
        S* out = row + static_cast<std::int64_t>(b) * lout;
        for (int t = 0; t < lout; ++t) {
          int src = t * stride + k - pad;
          out[t] = (src >= 0 && src < len) ? xb[src] : S(0);
        }
      }
    }
  }
}

template <class S>
void col2im_add(const S* col, int batch, int cin, int len, int kernel,
                int stride, int pad, int lout, S* x) {
  const std::int64_t cols = static_cast<std::int64_t>(batch) * lout;
  for (int ci = 0; ci < cin; ++ci) {
    for (int k = 0; k < kernel; ++k) {
      const S* row = col + (static_cast<std::int64_t>(ci) * kernel + k) * cols;
      for (int b = 0; b < batch; ++b) {
        S* xb = x + (static_cast<std::int64_t>(b) * cin + ci) * len;
        const S* in = row + static_cast<std::int64_t>(b) * lout;
        for (int t = 0; t < lout; ++t) {
          int dst = t * stride + k - pad;
          if (dst >= 0 && dst < len) xb[dst] += in[t];
        }
      }
    }
  }
}

}  // namespace detail

/// x [B,Cin,L] * w [Cout,Cin,K] (+ bias [Cout]) -> [B,Cout,Lout],
/// Lout = (L + 2*pad - K)/stride + 1.
template <class S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                 int stride, int pad) {
  if (x.shape().size() != 3 || w.shape().size() != 3 ||
      x.shape()[1] != w.shape()[1])
    throw ShapeMismatch("conv1d: x " + shape_str(x.shape()) + " w " +
                        shape_str(w.shape()));
  const int batch = x.shape()[0], cin = x.shape()[1], len = x.shape()[2];
  const int cout = w.shape()[0], kernel = w.shape()[2];
  if (bias.defined() && (bias.shape().size() != 1 || bias.shape()[0] != cout))
    throw ShapeMismatch("conv1d bias " + shape_str(bias.shape()));
  const int lout = (len + 2 * pad - kernel) / stride + 1;
  if (lout < 1) throw ShapeMismatch("conv1d output length < 1");

  const std::int64_t cols = static_cast<std::int64_t>(batch) * lout;
  std::vector<S> col(static_cast<std::size_t>(cin) * kernel * cols);
  detail::im2col(x.data().data(), batch, cin, len, kernel, stride, pad, lout,
                 col.data());
  std::vector<S> prod(static_cast<std::size_t>(cout) * cols);
  {
    detail::ConstMatMap<S> mw(w.data().data(), cout, cin * kernel);
    detail::ConstMatMap<S> mc(col.data(), cin * kernel, cols);
    detail::MatMap<S> mp(prod.data(), cout, cols);
    mp.noalias() = mw * mc;
  }
  // prod is [Cout, B*Lout]; transpose-gather to [B, Cout, Lout].
  std::vector<S> v(static_cast<std::size_t>(batch) * cout * lout);
  for (int b = 0; b < batch; ++b)
    for (int co = 0; co < cout; ++co) {
      const S* src = prod.data() + static_cast<std::int64_t>(co) * cols +
                     static_cast<std::int64_t>(b) * lout;
      S* dst = v.data() + (static_cast<std::int64_t>(b) * cout + co) * lout;
      S bv = bias.defined() ? bias.data()[co] : S(0);
      for (int t = 0; t < lout; ++t) dst[t] = src[t] + bv;
    }

  std::vector<Tensor<S>> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  return detail::make_result<S>(
      {batch, cout, lout}, std::move(v), std::move(parents),
      [batch, cin, len, cout, kernel, stride, pad, lout](Node<S>& n) {
        auto& px = n.parents[0];
        auto& pw = n.parents[1];
        const std::int64_t cols = static_cast<std::int64_t>(batch) * lout;
        // regroup grad to [Cout, B*Lout]
        std::vector<S> gprod(static_cast<std::size_t>(cout) * cols);
        for (int b = 0; b < batch; ++b)
          for (int co = 0; co < cout; ++co) {
            const S* src =
                n.grad.data() + (static_cast<std::int64_t>(b) * cout + co) * lout;
            S* dst = gprod.data() + static_cast<std::int64_t>(co) * cols +
                     static_cast<std::int64_t>(b) * lout;
            std::copy_n(src, lout, dst);
          }
        if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
          auto& pb = n.parents[2];
          pb->ensure_grad();
          for (int co = 0; co < cout; ++co) {
            S s = S(0);
            const S* row = gprod.data() + static_cast<std::int64_t>(co) * cols;
            for (std::int64_t i = 0; i < cols; ++i) s += row[i];
            pb->grad[co] += s;
          }
        }
        if (pw->requires_grad) {
          pw->ensure_grad();
          std::vector<S> col(static_cast<std::size_t>(cin) * kernel * cols);
          detail::im2col(px->value.data(), batch, cin, len, kernel, stride, pad,
                         lout, col.data());
          detail::ConstMatMap<S> mg(gprod.data(), cout, cols);
          detail::ConstMatMap<S> mc(col.data(), cin * kernel, cols);
          detail::MatMap<S> gw(pw->grad.data(), cout, cin * kernel);
          gw.noalias() += mg * mc.transpose();
        }
        if (px->requires_grad) {
          px->ensure_grad();
          std::vector<S> gcol(static_cast<std::size_t>(cin) * kernel * cols);
          detail::ConstMatMap<S> mw(pw->value.data(), cout, cin * kernel);
          detail::ConstMatMap<S> mg(gprod.data(), cout, cols);
          detail::MatMap<S> mgc(gcol.data(), cin * kernel, cols);
          mgc.noalias() = mw.transpose() * mg;
          detail::col2im_add(gcol.data(), batch, cin, len, kernel, stride, pad,
                             lout, px->grad.data());
        }
      });
}

/// Transposed convolution. x [B,Cin,L] * w [Cin,Cout,K] -> full length
/// (L-1)*stride + K, then cropped by (crop_left, crop_right).
template <class S>
Tensor<S> transposed_conv1d(const Tensor<S>& x, const Tensor<S>& w,
                            const Tensor<S>& bias, int stride, int crop_left,
                            int crop_right) {
  if (x.shape().size() != 3 || w.shape().size() != 3 ||
      x.shape()[1] != w.shape()[0])
    throw ShapeMismatch("transposed_conv1d: x " + shape_str(x.shape()) +
                        " w " + shape_str(w.shape()));
  const int batch = x.shape()[0], cin = x.shape()[1], len = x.shape()[2];
  const int cout = w.shape()[1], kernel = w.shape()[2];
  const int full = (len - 1) * stride + kernel;
  const int lout = full - crop_left - crop_right;
  if (lout < 1) throw ShapeMismatch("transposed_conv1d output length < 1");
  if (bias.defined() && (bias.shape().size() != 1 || bias.shape()[0] != cout))
    throw ShapeMismatch("transposed_conv1d bias " + shape_str(bias.shape()));

  // tmp [Cout*K, B*L] = wr [Cout*K, Cin] x xmat [Cin, B*L], then scatter
  // tmp[(co*K+k), b*L+l] into out[b, co, l*stride + k - crop_left].
  const std::int64_t cols = static_cast<std::int64_t>(batch) * len;
  std::vector<S> wr(static_cast<std::size_t>(cout) * kernel * cin);
  for (int ci = 0; ci < cin; ++ci)
    for (int co = 0; co < cout; ++co)
      for (int k = 0; k < kernel; ++k)
        wr[(static_cast<std::int64_t>(co) * kernel + k) * cin + ci] =
            w.data()[(static_cast<std::int64_t>(ci) * cout + co) * kernel + k];
  std::vector<S> xmat(static_cast<std::size_t>(cin) * cols);
  for (int b = 0; b < batch; ++b)
    for (int ci = 0; ci < cin; ++ci)
      std::copy_n(
          x.data().begin() + (static_cast<std::int64_t>(b) * cin + ci) * len,
          len,
          xmat.begin() + static_cast<std::int64_t>(ci) * cols +
              static_cast<std::int64_t>(b) * len);
  std::vector<S> tmp(static_cast<std::size_t>(cout) * kernel * cols);
  {
    detail::ConstMatMap<S> mw(wr.data(), cout * kernel, cin);
    detail::ConstMatMap<S> mx(xmat.data(), cin, cols);
    detail::MatMap<S> mt(tmp.data(), cout * kernel, cols);
    mt.noalias() = mw * mx;
  }
  std::vector<S> v(static_cast<std::size_t>(batch) * cout * lout, S(0));
  for (int co = 0; co < cout; ++co)
    for (int k = 0; k < kernel; ++k) {
      const S* row =
          tmp.data() + (static_cast<std::int64_t>(co) * kernel + k) * cols;
      for (int b = 0; b < batch; ++b) {
        S* ob = v.data() + (static_cast<std::int64_t>(b) * cout + co) * lout;
        const S* in = row + static_cast<std::int64_t>(b) * len;
        for (int l = 0; l < len; ++l) {
          int dst = l * stride + k - crop_left;
          if (dst >= 0 && dst < lout) ob[dst] += in[l];
        }
      }
    }
  if (bias.defined())
    for (int b = 0; b < batch; ++b)
      for (int co = 0; co < cout; ++co) {
        S* ob = v.data() + (static_cast<std::int64_t>(b) * cout + co) * lout;
        for (int t = 0; t < lout; ++t) ob[t] += bias.data()[co];
      }

  std::vector<Tensor<S>> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  return detail::make_result<S>(
      {batch, cout, lout}, std::move(v), std::move(parents),
      [batch, cin, len, cout, kernel, stride, crop_left,
       lout](Node<S>& n) {
        auto& px = n.parents[0];
        auto& pw = n.parents[1];
        const std::int64_t cols = static_cast<std::int64_t>(batch) * len;
        if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
          auto& pb = n.parents[2];
          pb->ensure_grad();
          for (int co = 0; co < cout; ++co) {
            S s = S(0);
            for (int b = 0; b < batch; ++b) {
              const S* g =
                  n.grad.data() + (static_cast<std::int64_t>(b) * cout + co) * lout;
              for (int t = 0; t < lout; ++t) s += g[t];
            }
            pb->grad[co] += s;
          }
        }
        // gather dtmp[(co*K+k), b*L+l] = dout[b, co, l*stride + k - crop_left]
        std::vector<S> gtmp(static_cast<std::size_t>(cout) * kernel * cols,
                            S(0));
        for (int co = 0; co < cout; ++co)
          for (int k = 0; k < kernel; ++k) {
            S* row =
                gtmp.data() + (static_cast<std::int64_t>(co) * kernel + k) * cols;
            for (int b = 0; b < batch; ++b) {
              const S* g =
                  n.grad.data() + (static_cast<std::int64_t>(b) * cout + co) * lout;
              S* out = row + static_cast<std::int64_t>(b) * len;
              for (int l = 0; l < len; ++l) {
                int src = l * stride + k - crop_left;
                if (src >= 0 && src < lout) out[l] = g[src];
              }
            }
          }
        if (px->requires_grad) {
          px->ensure_grad();
          std::vector<S> wr(static_cast<std::size_t>(cout) * kernel * cin);
          for (int ci = 0; ci < cin; ++ci)
            for (int co = 0; co < cout; ++co)
              for (int k = 0; k < kernel; ++k)
                wr[(static_cast<std::int64_t>(co) * kernel + k) * cin + ci] =
                    pw->value[(static_cast<std::int64_t>(ci) * cout + co) *
                                  kernel +
                              k];
          std::vector<S> gx(static_cast<std::size_t>(cin) * cols);
          detail::ConstMatMap<S> mw(wr.data(), cout * kernel, cin);
          detail::ConstMatMap<S> mg(gtmp.data(), cout * kernel, cols);
          detail::MatMap<S> mgx(gx.data(), cin, cols);
          mgx.noalias() = mw.transpose() * mg;
          for (int b = 0; b < batch; ++b)
            for (int ci = 0; ci < cin; ++ci) {
              const S* src = gx.data() + static_cast<std::int64_t>(ci) * cols +
                             static_cast<std::int64_t>(b) * len;
              S* dst = px->grad.data() +
                       (static_cast<std::int64_t>(b) * cin + ci) * len;
              for (int l = 0; l < len; ++l) dst[l] += src[l];
            }
        }
        if (pw->requires_grad) {
          pw->ensure_grad();
          std::vector<S> xmat(static_cast<std::size_t>(cin) * cols);
          for (int b = 0; b < batch; ++b)
            for (int ci = 0; ci < cin; ++ci)
              std::copy_n(px->value.begin() +
                              (static_cast<std::int64_t>(b) * cin + ci) * len,
                          len,
                          xmat.begin() + static_cast<std::int64_t>(ci) * cols +
                              static_cast<std::int64_t>(b) * len);
          std::vector<S> gwr(static_cast<std::size_t>(cout) * kernel * cin);
          detail::ConstMatMap<S> mg(gtmp.data(), cout * kernel, cols);
          detail::ConstMatMap<S> mx(xmat.data(), cin, cols);
          detail::MatMap<S> mgw(gwr.data(), cout * kernel, cin);
          mgw.noalias() = mg * mx.transpose();
          for (int ci = 0; ci < cin; ++ci)
            for (int co = 0; co < cout; ++co)
              for (int k = 0; k < kernel; ++k)
                pw->grad[(static_cast<std::int64_t>(ci) * cout + co) * kernel +
                         k] +=
                    gwr[(static_cast<std::int64_t>(co) * kernel + k) * cin + ci];
        }
      });
}

// ---- batch norm ----

template <class S>
struct BnStats {
  std::vector<S> running_mean;
  std::vector<S> running_var;
  void init(int channels) {
    running_mean.assign(channels, S(0));
    running_var.assign(channels, S(1));
  }
};

/// Batch normalization over [B,C,L]: per-channel statistics across B and L.
/// Training mode uses batch statistics and updates the running ones; eval
/// mode is a fixed affine map from the running statistics.
template <class S>
Tensor<S> batchnorm1d(const Tensor<S>& x, const Tensor<S>& gamma,
                      const Tensor<S>& beta, BnStats<S>& stats, S momentum,
                      S eps, bool training) {
  if (x.shape().size() != 3) throw ShapeMismatch("batchnorm1d needs [B,C,L]");
  const int batch = x.shape()[0], ch = x.shape()[1], len = x.shape()[2];
  if (gamma.shape() != Shape{ch} || beta.shape() != Shape{ch})
    throw ShapeMismatch("batchnorm1d affine params vs channels");
  const std::int64_t per = static_cast<std::int64_t>(batch) * len;

  std::vector<S> mean(ch), inv_std(ch);
  if (training) {
    for (int c = 0; c < ch; ++c) {
      S m = S(0);
      for (int b = 0; b < batch; ++b) {
        const S* p = x.data().data() + (static_cast<std::int64_t>(b) * ch + c) * len;
        for (int t = 0; t < len; ++t) m += p[t];
      }
      m /= static_cast<S>(per);
      S var = S(0);
      for (int b = 0; b < batch; ++b) {
        const S* p = x.data().data() + (static_cast<std::int64_t>(b) * ch + c) * len;
        for (int t = 0; t < len; ++t) var += (p[t] - m) * (p[t] - m);
      }
      var /= static_cast<S>(per);
      mean[c] = m;
      inv_std[c] = S(1) / std::sqrt(var + eps);
      stats.running_mean[c] =
          (S(1) - momentum) * stats.running_mean[c] + momentum * m;
      stats.running_var[c] =
          (S(1) - momentum) * stats.running_var[c] + momentum * var;
    }
  } else {
    for (int c = 0; c < ch; ++c) {
      mean[c] = stats.running_mean[c];
      inv_std[c] = S(1) / std::sqrt(stats.running_var[c] + eps);
    }
  }

  std::vector<S> v(x.data().size());
  std::vector<S> xhat(training ? x.data().size() : 0);
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < ch; ++c) {
      const S* p = x.data().data() + (static_cast<std::int64_t>(b) * ch + c) * len;
      S* o = v.data() + (static_cast<std::int64_t>(b) * ch + c) * len;
      for (int t = 0; t < len; ++t) {
        S h = (p[t] - mean[c]) * inv_std[c];
        if (training) xhat[o - v.data() + t] = h;
        o[t] = gamma.data()[c] * h + beta.data()[c];
      }
    }

  auto xhat_shared = std::make_shared<std::vector<S>>(std::move(xhat));
  auto inv_shared = std::make_shared<std::vector<S>>(inv_std);
  auto mean_shared = std::make_shared<std::vector<S>>(mean);
  return detail::make_result<S>(
      x.shape(), std::move(v), {x, gamma, beta},
      [batch, ch, len, per, training, xhat_shared, inv_shared,
       mean_shared](Node<S>& n) {
        auto& px = n.parents[0];
        auto& pg = n.parents[1];
        auto& pb = n.parents[2];
        const auto& xh = *xhat_shared;
        const auto& inv = *inv_shared;
        for (int c = 0; c < ch; ++c) {
          S sum_g = S(0), sum_gx = S(0);
          for (int b = 0; b < batch; ++b) {
            const std::int64_t off = (static_cast<std::int64_t>(b) * ch + c) * len;
            for (int t = 0; t < len; ++t) {
              sum_g += n.grad[off + t];
              if (training) sum_gx += n.grad[off + t] * xh[off + t];
            }
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            pb->grad[c] += sum_g;
          }
          if (pg->requires_grad) {
            pg->ensure_grad();
            if (training) {
              pg->grad[c] += sum_gx;
            } else {
              // xhat is not cached in eval mode; recompute it from the
              // running statistics captured at forward time.
              const auto& mu = *mean_shared;
              S s = S(0);
              for (int b = 0; b < batch; ++b) {
                const std::int64_t off =
                    (static_cast<std::int64_t>(b) * ch + c) * len;
                for (int t = 0; t < len; ++t)
                  s += n.grad[off + t] * (px->value[off + t] - mu[c]) * inv[c];
              }
              pg->grad[c] += s;
            }
          }
          if (px->requires_grad) {
            px->ensure_grad();
            const S g_c = pg->value[c];
            if (training) {
              const S inv_per = S(1) / static_cast<S>(per);
              for (int b = 0; b < batch; ++b) {
                const std::int64_t off =
                    (static_cast<std::int64_t>(b) * ch + c) * len;
                for (int t = 0; t < len; ++t) {
                  S gy = n.grad[off + t];
                  px->grad[off + t] +=
                      g_c * inv[c] *
                      (gy - inv_per * sum_g - inv_per * xh[off + t] * sum_gx);
                }
              }
            } else {
              for (int b = 0; b < batch; ++b) {
                const std::int64_t off =
                    (static_cast<std::int64_t>(b) * ch + c) * len;
                for (int t = 0; t < len; ++t)
                  px->grad[off + t] += n.grad[off + t] * g_c * inv[c];
              }
            }
          }
        }
      });
}

// ---- complex pairs ----

template <class S>
struct Complex {
  Tensor<S> re, im;
  const Shape& shape() const { return re.shape(); }
};

template <class S>
Complex<S> complex_add(const Complex<S>& a, const Complex<S>& b) {
  return {add(a.re, b.re), add(a.im, b.im)};
}

template <class S>
Complex<S> complex_mul(const Complex<S>& a, const Complex<S>& b) {
  return {sub(mul(a.re, b.re), mul(a.im, b.im)),
          add(mul(a.re, b.im), mul(a.im, b.re))};
}

template <class S>
Complex<S> complex_matmul(const Complex<S>& a, const Complex<S>& b) {
  return {sub(matmul(a.re, b.re), matmul(a.im, b.im)),
          add(matmul(a.re, b.im), matmul(a.im, b.re))};
}

/// (Wr + jWi) * (xr + jxi) with conv1d semantics on each part.
template <class S>
Complex<S> complex_conv1d(const Complex<S>& x, const Complex<S>& w,
                          const Complex<S>& bias, int stride, int pad) {
  Tensor<S> rr = conv1d(x.re, w.re, bias.re, stride, pad);
  Tensor<S> ii = conv1d(x.im, w.im, Tensor<S>(), stride, pad);
  Tensor<S> ri = conv1d(x.im, w.re, bias.im, stride, pad);
  Tensor<S> ir = conv1d(x.re, w.im, Tensor<S>(), stride, pad);
  return {sub(rr, ii), add(ri, ir)};
}

template <class S>
Complex<S> complex_transposed_conv1d(const Complex<S>& x, const Complex<S>& w,
                                     const Complex<S>& bias, int stride,
                                     int crop_left, int crop_right) {
  Tensor<S> rr = transposed_conv1d(x.re, w.re, bias.re, stride, crop_left, crop_right);
  Tensor<S> ii = transposed_conv1d(x.im, w.im, Tensor<S>(), stride, crop_left, crop_right);
  Tensor<S> ri = transposed_conv1d(x.im, w.re, bias.im, stride, crop_left, crop_right);
  Tensor<S> ir = transposed_conv1d(x.re, w.im, Tensor<S>(), stride, crop_left, crop_right);
  return {sub(rr, ii), add(ri, ir)};
}

/// ReLU applied to real and imaginary parts independently.
template <class S>
Complex<S> complex_relu(const Complex<S>& a) {
  return {relu(a.re), relu(a.im)};
}

template <class S>
Tensor<S> magnitude(const Complex<S>& a, S eps = S(1e-12)) {
  return magnitude(a.re, a.im, eps);
}

/// e^{j angle(z)} as a complex pair, with an eps floor on |z|.
template <class S>
Complex<S> unit_phasor(const Complex<S>& a, S eps = S(1e-12)) {
  Tensor<S> m = clamp_min(magnitude(a.re, a.im, eps), eps);
  return {div(a.re, m), div(a.im, m)};
}

// ---- backward ----

/// Reverse accumulation from a scalar loss into every reachable leaf's grad.
template <class S>
void backward(Tensor<S>& loss) {
  if (loss.size() != 1)
    throw NonScalarLoss("backward requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  // Collect reachable nodes; creation order is a valid topological order.
  std::vector<Node<S>*> order;
  std::vector<Node<S>*> stack = {loss.node().get()};
  std::unordered_set<Node<S>*> seen;
  while (!stack.empty()) {
    Node<S>* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& p : n->parents) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node<S>* a, const Node<S>* b) { return a->id > b->id; });
  loss.node()->ensure_grad();
  loss.node()->grad[0] += S(1);
  for (Node<S>* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---- gradcheck ----

/// Central-difference check. fn maps leaves to an output tensor; non-scalar
/// outputs are reduced by a fixed pseudo-random weighting. Returns the max
/// relative error |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <class S>
double gradcheck(
    const std::function<Tensor<S>(std::vector<Tensor<S>>&)>& fn,
    std::vector<Tensor<S>> leaves, double h = 1e-5) {
  static_assert(std::is_same_v<S, double>,
                "gradcheck is defined for 64-bit tensors");
  for (auto& l : leaves) l.set_requires_grad(true);

  Rng wrng(0x9d2c5680u);
  std::vector<double> out_w;
  auto eval_scalar = [&](std::vector<Tensor<S>>& pts) {
    Tensor<S> out = fn(pts);
    if (out_w.empty()) {
      out_w.resize(out.size());
      for (auto& w : out_w) w = wrng.uniform(-1.0, 1.0);
    }
    Tensor<S> weights({static_cast<int>(out.size())},
                      std::vector<S>(out_w.begin(), out_w.end()));
    Tensor<S> flat = reshape(out, {static_cast<int>(out.size())});
    return reduce_sum(mul(flat, weights));
  };

  Tensor<S> loss = eval_scalar(leaves);
  for (auto& l : leaves) l.zero_grad();
  backward(loss);

  double max_err = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    for (std::int64_t i = 0; i < leaves[li].size(); ++i) {
      const S saved = leaves[li].data()[i];
      std::vector<Tensor<S>> fresh;
      auto rebuild = [&](S v) {
        fresh.clear();
        for (std::size_t k = 0; k < leaves.size(); ++k)
          fresh.push_back(leaves[k].detach());
        fresh[li].data()[i] = v;
        NoGradGuard ng;
        Tensor<S> out = eval_scalar(fresh);
        return out.data()[0];
      };
      double fp = rebuild(saved + static_cast<S>(h));
      double fm = rebuild(saved - static_cast<S>(h));
      double numeric = (fp - fm) / (2.0 * h);
      double analytic = leaves[li].grad()[i];
      double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      max_err = std::max(max_err, std::abs(analytic - numeric) / denom);
    }
  }
  return max_err;
}

}  // namespace rrpsr::ad

#endif
