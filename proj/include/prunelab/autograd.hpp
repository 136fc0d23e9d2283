#pragma once

// Define-by-run reverse-mode differentiation over `Tensor`.
//
// Every op called while grad mode is enabled and at least one operand
// requires a gradient records a `Node` holding its inputs and a backward
// rule. `backward(loss)` walks the recorded graph once in reverse
// topological order and accumulates into each node's gradient buffer.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "prunelab/error.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

enum class OpKind {
  leaf,
  matmul,
  transpose,
  conv2d,
  add_bias,
  relu,
  flatten,
  softmax,
  cross_entropy,
  add,
  mul,
  sum,
  mean,
};

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::conv2d: return "conv2d";
    case OpKind::add_bias: return "add_bias";
    case OpKind::relu: return "relu";
    case OpKind::flatten: return "flatten";
    case OpKind::softmax: return "softmax";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
  }
  return "?";
}

enum class Padding { same, valid };

struct OpAttributes {
  Padding padding = Padding::valid;
};

struct Node {
  OpKind kind = OpKind::leaf;
  Tensor value;
  std::optional<Tensor> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward_rule;
};

namespace detail {
inline thread_local bool grad_mode = true;

inline Tensor& grad_buffer(Node& n) {
  if (!n.grad) n.grad = Tensor(n.value.shape());
  return *n.grad;
}
}  // namespace detail

/// RAII guard that disables graph recording on this thread.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode; }

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() : node_(std::make_shared<Node>()) {}
  explicit Var(Tensor value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.has_value(); }
  const Tensor& grad() const {
    if (!node_->grad) throw Error("var: gradient not populated");
    return *node_->grad;
  }
  Tensor& mutable_grad() { return detail::grad_buffer(*node_); }
  void zero_grad() { node_->grad.reset(); }
  OpKind kind() const { return node_->kind; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Var parameter(Tensor value) { return Var(std::move(value), true); }
inline Var constant(Tensor value) { return Var(std::move(value), false); }

namespace detail {

inline Var make_result(OpKind kind, Tensor value, std::vector<Var> inputs,
                       std::function<void(Node&)> rule) {
  if (!value.all_finite()) {
    throw Error(std::string(op_name(kind)) + ": produced a non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->kind = kind;
  node->value = std::move(value);
  bool track = grad_mode;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (track && any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_rule = std::move(rule);
  }
  return Var(std::move(node));
}

[[noreturn]] inline void shape_fail(OpKind kind, const std::string& detail) {
  throw ShapeError(std::string(op_name(kind)) + ": " + detail);
}

inline void require_rank(OpKind kind, const Tensor& t, std::size_t rank,
                         const char* which) {
  if (t.rank() != rank) {
    shape_fail(kind, std::string(which) + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_fail(kind, "operand shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// out[m,n] += a[m,k] * b[k,n]
inline void gemm_nn(std::span<const double> a, std::span<const double> b,
                    std::span<double> out, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* br = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

struct ConvGeometry {
  std::size_t batch, in_c, h, w, out_c, k, out_h, out_w, pad;
};

inline ConvGeometry conv_geometry(const Tensor& x, const Tensor& kernel,
                                  Padding padding) {
  require_rank(OpKind::conv2d, x, 4, "input");
  require_rank(OpKind::conv2d, kernel, 4, "kernel");
  ConvGeometry g{};
  g.batch = x.dim(0);
  g.in_c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.out_c = kernel.dim(0);
  g.k = kernel.dim(2);
  if (kernel.dim(1) != g.in_c) {
    shape_fail(OpKind::conv2d, "kernel in-channels " + std::to_string(kernel.dim(1)) +
                                   " != input channels " + std::to_string(g.in_c));
  }
  if (kernel.dim(3) != g.k) {
    shape_fail(OpKind::conv2d, "kernel must be square, got " + shape_str(kernel.shape()));
  }
  if (padding == Padding::same) {
    if (g.k % 2 == 0) shape_fail(OpKind::conv2d, "'same' padding needs an odd kernel");
    g.pad = g.k / 2;
    g.out_h = g.h;
    g.out_w = g.w;
  } else {
    if (g.k > g.h || g.k > g.w) {
      shape_fail(OpKind::conv2d, "kernel " + std::to_string(g.k) +
                                     " larger than input " + shape_str(x.shape()));
    }
    g.pad = 0;
    g.out_h = g.h - g.k + 1;
    g.out_w = g.w - g.k + 1;
  }
  return g;
}

// Calls fn(out_index_base, in_index_base, count) for each contiguous run of
// output columns that read valid (non-padding) input for kernel tap (ki, kj).
template <typename Fn>
inline void conv_for_each_tap(const ConvGeometry& g, std::size_t ki, std::size_t kj,
                              Fn&& fn) {
  auto off_i = static_cast<std::ptrdiff_t>(ki) - static_cast<std::ptrdiff_t>(g.pad);
  auto off_j = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.pad);
  auto oh_n = static_cast<std::ptrdiff_t>(g.out_h);
  auto ow_n = static_cast<std::ptrdiff_t>(g.out_w);
  auto h = static_cast<std::ptrdiff_t>(g.h);
  auto w = static_cast<std::ptrdiff_t>(g.w);
  std::ptrdiff_t oh_lo = std::max<std::ptrdiff_t>(0, -off_i);
  std::ptrdiff_t oh_hi = std::min<std::ptrdiff_t>(oh_n, h - off_i);
  std::ptrdiff_t ow_lo = std::max<std::ptrdiff_t>(0, -off_j);
  std::ptrdiff_t ow_hi = std::min<std::ptrdiff_t>(ow_n, w - off_j);
  if (ow_hi <= ow_lo) return;
  for (std::ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
    fn(static_cast<std::size_t>(oh * ow_n + ow_lo),
       static_cast<std::size_t>((oh + off_i) * w + ow_lo + off_j),
       static_cast<std::size_t>(ow_hi - ow_lo));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_rank(OpKind::matmul, av, 2, "lhs");
  detail::require_rank(OpKind::matmul, bv, 2, "rhs");
  std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    detail::shape_fail(OpKind::matmul, "inner dimensions disagree: " +
                                           shape_str(av.shape()) + " x " +
                                           shape_str(bv.shape()));
  }
  Tensor out(Shape{m, n});
  detail::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  return detail::make_result(OpKind::matmul, std::move(out), {a, b}, [m, k, n](Node& self) {
    const Tensor& g = *self.grad;
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    if (an.requires_grad) {
      Tensor& ga = detail::grad_buffer(an);
      const auto& bd = bn.value.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bd[p * n + j];
          ga[i * k + p] += s;
        }
      }
    }
    if (bn.requires_grad) {
      Tensor& gb = detail::grad_buffer(bn);
      const auto& ad = an.value.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double av = ad[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
      }
    }
  });
}

inline Var transpose(const Var& a) {
  const Tensor& av = a.value();
  detail::require_rank(OpKind::transpose, av, 2, "operand");
  std::size_t r = av.dim(0), c = av.dim(1);
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return detail::make_result(OpKind::transpose, std::move(out), {a}, [r, c](Node& self) {
    Tensor& ga = detail::grad_buffer(*self.inputs[0]);
    const Tensor& g = *self.grad;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

/// Stride-1 convolution. input [B,C,H,W], kernel [O,C,K,K] -> [B,O,H',W'].
inline Var conv2d(const Var& input, const Var& kernel, Padding padding) {
  auto g = detail::conv_geometry(input.value(), kernel.value(), padding);
  Tensor out(Shape{g.batch, g.out_c, g.out_h, g.out_w});
  const auto& x = input.value().data();
  const auto& w = kernel.value().data();
  std::size_t in_plane = g.h * g.w, out_plane = g.out_h * g.out_w;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t o = 0; o < g.out_c; ++o) {
      double* op = out.data().data() + (b * g.out_c + o) * out_plane;
      for (std::size_t c = 0; c < g.in_c; ++c) {
        const double* ip = x.data() + (b * g.in_c + c) * in_plane;
        for (std::size_t ki = 0; ki < g.k; ++ki) {
          for (std::size_t kj = 0; kj < g.k; ++kj) {
            double wv = w[((o * g.in_c + c) * g.k + ki) * g.k + kj];
            if (wv == 0.0) continue;
            detail::conv_for_each_tap(g, ki, kj, [&](std::size_t ob, std::size_t ib, std::size_t n) {
              for (std::size_t t = 0; t < n; ++t) op[ob + t] += wv * ip[ib + t];
            });
          }
        }
      }
    }
  }
  return detail::make_result(OpKind::conv2d, std::move(out), {input, kernel}, [g](Node& self) {
    const Tensor& gout = *self.grad;
    Node& xn = *self.inputs[0];
    Node& kn = *self.inputs[1];
    const auto& x = xn.value.data();
    const auto& w = kn.value.data();
    std::size_t in_plane = g.h * g.w, out_plane = g.out_h * g.out_w;
    Tensor* gx = xn.requires_grad ? &detail::grad_buffer(xn) : nullptr;
    Tensor* gw = kn.requires_grad ? &detail::grad_buffer(kn) : nullptr;
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t o = 0; o < g.out_c; ++o) {
        const double* gp = gout.data().data() + (b * g.out_c + o) * out_plane;
        for (std::size_t c = 0; c < g.in_c; ++c) {
          std::size_t in_base = (b * g.in_c + c) * in_plane;
          for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
              std::size_t widx = ((o * g.in_c + c) * g.k + ki) * g.k + kj;
              double wv = w[widx];
              double acc = 0.0;
              detail::conv_for_each_tap(g, ki, kj, [&](std::size_t ob, std::size_t ib, std::size_t n) {
                for (std::size_t t = 0; t < n; ++t) {
                  acc += gp[ob + t] * x[in_base + ib + t];
                  if (gx) (*gx)[in_base + ib + t] += wv * gp[ob + t];
                }
              });
              if (gw) (*gw)[widx] += acc;
            }
          }
        }
      }
    }
  });
}

/// Adds bias[F] to x[B,F], or bias[C] to every plane of x[B,C,H,W].
inline Var add_bias(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  detail::require_rank(OpKind::add_bias, bv, 1, "bias");
  if (xv.rank() != 2 && xv.rank() != 4) {
    detail::shape_fail(OpKind::add_bias, "input must be [B,F] or [B,C,H,W], got " +
                                             shape_str(xv.shape()));
  }
  std::size_t batch = xv.dim(0), ch = xv.dim(1);
  if (bv.dim(0) != ch) {
    detail::shape_fail(OpKind::add_bias, "bias length " + std::to_string(bv.dim(0)) +
                                             " != channel dimension " + std::to_string(ch));
  }
  std::size_t plane = xv.rank() == 4 ? xv.dim(2) * xv.dim(3) : 1;
  Tensor out = xv;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t p = 0; p < plane; ++p) out[(b * ch + c) * plane + p] += bv[c];
  return detail::make_result(OpKind::add_bias, std::move(out), {x, bias}, [batch, ch, plane](Node& self) {
    const Tensor& g = *self.grad;
    if (self.inputs[0]->requires_grad) {
      Tensor& gx = detail::grad_buffer(*self.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (self.inputs[1]->requires_grad) {
      Tensor& gb = detail::grad_buffer(*self.inputs[1]);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t p = 0; p < plane; ++p) gb[c] += g[(b * ch + c) * plane + p];
    }
  });
}

inline Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return detail::make_result(OpKind::relu, std::move(out), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    Tensor& gx = detail::grad_buffer(in);
    const Tensor& g = *self.grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in.value[i] > 0.0) gx[i] += g[i];
  });
}

/// [B, ...] -> [B, prod(...)]
inline Var flatten(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1) detail::shape_fail(OpKind::flatten, "needs a batch axis");
  std::size_t batch = xv.dim(0);
  std::size_t rest = batch ? xv.size() / batch : 0;
  return detail::make_result(OpKind::flatten, xv.reshaped(Shape{batch, rest}), {x}, [](Node& self) {
    Tensor& gx = detail::grad_buffer(*self.inputs[0]);
    const Tensor& g = *self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

namespace detail {
// Row-wise view over the last axis of a rank-1 or rank-2 tensor.
inline std::pair<std::size_t, std::size_t> rows_cols(OpKind kind, const Tensor& t) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  shape_fail(kind, "expects [K] or [B,K], got " + shape_str(t.shape()));
}

inline void softmax_rows(std::span<const double> in, std::span<double> out,
                         std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = in.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, z[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(z[j] - mx);
      s += y[j];
    }
    for (std::size_t j = 0; j < cols; ++j) y[j] /= s;
  }
}
}  // namespace detail

/// Softmax over the last axis.
inline Var softmax(const Var& x) {
  auto [rows, cols] = detail::rows_cols(OpKind::softmax, x.value());
  Tensor out(x.shape());
  detail::softmax_rows(x.value().data(), out.data(), rows, cols);
  return detail::make_result(OpKind::softmax, std::move(out), {x}, [rows, cols](Node& self) {
    Tensor& gx = detail::grad_buffer(*self.inputs[0]);
    const Tensor& g = *self.grad;
    const Tensor& y = self.value;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j)
        gx[r * cols + j] += y[r * cols + j] * (g[r * cols + j] - dot);
    }
  });
}

/// Mean over rows of -sum_k target_k * log softmax(logits)_k, computed with
/// log-sum-exp. `target` is typically one-hot but any distribution works.
inline Var cross_entropy(const Var& logits, const Var& target) {
  detail::require_same_shape(OpKind::cross_entropy, logits.value(), target.value());
  auto [rows, cols] = detail::rows_cols(OpKind::cross_entropy, logits.value());
  const Tensor& z = logits.value();
  const Tensor& t = target.value();
  Tensor logp(z.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, z[r * cols + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(z[r * cols + j] - mx);
    double lse = mx + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) logp[r * cols + j] = z[r * cols + j] - lse;
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (t[i] != 0.0) loss -= t[i] * logp[i];
  loss /= static_cast<double>(rows);
  return detail::make_result(
      OpKind::cross_entropy, Tensor::scalar(loss), {logits, target},
      [rows, cols, logp = std::move(logp)](Node& self) {
        double g = self.grad->item() / static_cast<double>(rows);
        Node& zn = *self.inputs[0];
        Node& tn = *self.inputs[1];
        if (zn.requires_grad) {
          Tensor& gz = detail::grad_buffer(zn);
          for (std::size_t r = 0; r < rows; ++r) {
            double tsum = 0.0;
            for (std::size_t j = 0; j < cols; ++j) tsum += tn.value[r * cols + j];
            for (std::size_t j = 0; j < cols; ++j) {
              std::size_t i = r * cols + j;
              gz[i] += g * (std::exp(logp[i]) * tsum - tn.value[i]);
            }
          }
        }
        if (tn.requires_grad) {
          Tensor& gt = detail::grad_buffer(tn);
          for (std::size_t i = 0; i < logp.size(); ++i) gt[i] -= g * logp[i];
        }
      });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(OpKind::add, a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::make_result(OpKind::add, std::move(out), {a, b}, [](Node& self) {
    const Tensor& g = *self.grad;
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      Tensor& gi = detail::grad_buffer(*in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(OpKind::mul, a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::make_result(OpKind::mul, std::move(out), {a, b}, [](Node& self) {
    const Tensor& g = *self.grad;
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    if (an.requires_grad) {
      Tensor& ga = detail::grad_buffer(an);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      Tensor& gb = detail::grad_buffer(bn);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an.value[i];
    }
  });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return detail::make_result(OpKind::sum, Tensor::scalar(s), {x}, [](Node& self) {
    Tensor& gx = detail::grad_buffer(*self.inputs[0]);
    double g = self.grad->item();
    for (auto& v : gx.data()) v += g;
  });
}

inline Var mean(const Var& x) {
  std::size_t n = x.value().size();
  if (n == 0) detail::shape_fail(OpKind::mean, "empty operand");
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return detail::make_result(OpKind::mean, Tensor::scalar(s / static_cast<double>(n)), {x}, [n](Node& self) {
    Tensor& gx = detail::grad_buffer(*self.inputs[0]);
    double g = self.grad->item() / static_cast<double>(n);
    for (auto& v : gx.data()) v += g;
  });
}

/// Dispatch by kind; the arity each kind expects is checked.
inline Var forward_op(OpKind kind, std::span<const Var> in, OpAttributes attrs = {}) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      detail::shape_fail(kind, "expects " + std::to_string(n) + " operand(s), got " +
                                   std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::matmul: need(2); return matmul(in[0], in[1]);
    case OpKind::transpose: need(1); return transpose(in[0]);
    case OpKind::conv2d: need(2); return conv2d(in[0], in[1], attrs.padding);
    case OpKind::add_bias: need(2); return add_bias(in[0], in[1]);
    case OpKind::relu: need(1); return relu(in[0]);
    case OpKind::flatten: need(1); return flatten(in[0]);
    case OpKind::softmax: need(1); return softmax(in[0]);
    case OpKind::cross_entropy: need(2); return cross_entropy(in[0], in[1]);
    case OpKind::add: need(2); return add(in[0], in[1]);
    case OpKind::mul: need(2); return mul(in[0], in[1]);
    case OpKind::sum: need(1); return sum(in[0]);
    case OpKind::mean: need(1); return mean(in[0]);
    case OpKind::leaf: break;
  }
  throw InvalidArgument("forward_op: leaf is not an operation");
}

/// Populates gradients of every node reachable from `loss`.
inline void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw Error("backward: loss is detached from any parameter");
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  Node& root = *loss.node();
  detail::grad_buffer(root).fill(0.0);
  (*root.grad)[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backward_rule && n.grad) n.backward_rule(n);
  }
}

}  // namespace prunelab
