#pragma once

// Central finite-difference verification of the analytic gradients. The
// numeric side only ever calls forward passes with recording disabled, so it
// does not share code with any backward rule.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "prunelab/autograd.hpp"
#include "prunelab/rng.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

using ScalarFn = std::function<Var(const std::vector<Var>&)>;

/// Relative error ||analytic - numeric|| / (||analytic|| + ||numeric||) over
/// all inputs' gradients; zero when both vanish.
inline double gradient_rel_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-6) {
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(parameter(t));
  Var out = f(vars);
  backward(out);

  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        NoGradGuard guard;
        std::vector<Var> shifted;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor t = inputs[j];
          if (j == k) t[i] += delta;
          shifted.push_back(constant(std::move(t)));
        }
        return f(shifted).value().item();
      };
      double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      double analytic = vars[k].has_grad() ? vars[k].grad()[i] : 0.0;
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
  }
  double denom = std::sqrt(a2) + std::sqrt(n2);
  return denom == 0.0 ? 0.0 : std::sqrt(diff2) / denom;
}

struct GradCheckResult {
  OpKind kind;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double worst = 0.0;
};

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng, double min_abs = 0.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) {
    do {
      v = rng.uniform(-1.0, 1.0);
    } while (std::abs(v) < min_abs);
  }
  return t;
}

// Contract a non-scalar output with fixed random weights to get a scalar.
inline Var contract(const Var& y, const Tensor& weights) { return sum(mul(y, constant(weights))); }

}  // namespace detail

/// Differentiable op kinds covered by the suite.
inline const std::vector<OpKind>& differentiable_ops() {
  static const std::vector<OpKind> ops = {OpKind::matmul,  OpKind::transpose,     OpKind::conv2d, OpKind::add_bias,
                                          OpKind::relu,    OpKind::flatten,       OpKind::softmax, OpKind::cross_entropy,
                                          OpKind::add,     OpKind::mul,           OpKind::sum,    OpKind::mean};
  return ops;
}

/// One randomized case for `kind`; returns the relative error.
inline double gradcheck_case(OpKind kind, Rng& rng) {
  std::vector<Tensor> in;
  ScalarFn f;
  auto unary = [&](Shape s, double min_abs, auto op) {
    in = {detail::random_tensor(s, rng, min_abs)};
    Shape out_shape = op(constant(in[0])).shape();
    Tensor w = detail::random_tensor(out_shape, rng);
    f = [op, w](const std::vector<Var>& v) { return detail::contract(op(v[0]), w); };
  };
  auto binary = [&](Shape a, Shape b, auto op) {
    in = {detail::random_tensor(a, rng), detail::random_tensor(b, rng)};
    Shape out_shape = op(constant(in[0]), constant(in[1])).shape();
    Tensor w = detail::random_tensor(out_shape, rng);
    f = [op, w](const std::vector<Var>& v) { return detail::contract(op(v[0], v[1]), w); };
  };
  switch (kind) {
    case OpKind::matmul: binary({3, 3}, {3, 3}, [](const Var& a, const Var& b) { return matmul(a, b); }); break;
    case OpKind::transpose: unary({3, 3}, 0.0, [](const Var& a) { return transpose(a); }); break;
    case OpKind::conv2d: {
      Padding pad = rng.below(2) ? Padding::same : Padding::valid;
      binary({2, 2, 4, 4}, {2, 2, 3, 3}, [pad](const Var& x, const Var& k) { return conv2d(x, k, pad); });
      break;
    }
    case OpKind::add_bias:
      if (rng.below(2)) {
        binary({3, 3}, {3}, [](const Var& x, const Var& b) { return add_bias(x, b); });
      } else {
        binary({2, 3, 3, 3}, {3}, [](const Var& x, const Var& b) { return add_bias(x, b); });
      }
      break;
    // Inputs are kept away from the kink so the central difference is valid.
    case OpKind::relu: unary({3, 3}, 0.05, [](const Var& a) { return relu(a); }); break;
    case OpKind::flatten: unary({3, 3, 3}, 0.0, [](const Var& a) { return flatten(a); }); break;
    case OpKind::softmax: unary({3, 3}, 0.0, [](const Var& a) { return softmax(a); }); break;
    case OpKind::cross_entropy: {
      Tensor target = detail::random_tensor({3, 3}, rng);
      for (auto& v : target.data()) v = std::abs(v);
      in = {detail::random_tensor({3, 3}, rng), target};
      f = [](const std::vector<Var>& v) { return cross_entropy(v[0], v[1]); };
      break;
    }
    case OpKind::add: binary({3, 3}, {3, 3}, [](const Var& a, const Var& b) { return add(a, b); }); break;
    case OpKind::mul: binary({3, 3}, {3, 3}, [](const Var& a, const Var& b) { return mul(a, b); }); break;
    case OpKind::sum:
      in = {detail::random_tensor({3, 3}, rng)};
      f = [](const std::vector<Var>& v) { return sum(v[0]); };
      break;
    case OpKind::mean:
      in = {detail::random_tensor({3, 3}, rng)};
      f = [](const std::vector<Var>& v) { return mean(v[0]); };
      break;
    case OpKind::leaf: return 0.0;
  }
  return gradient_rel_error(f, in);
}

/// Runs `cases` randomized checks per differentiable op.
inline std::vector<GradCheckResult> run_gradcheck_suite(std::size_t cases, std::uint64_t seed, double tol = 1e-4) {
  std::vector<GradCheckResult> out;
  for (OpKind kind : differentiable_ops()) {
    GradCheckResult r{kind};
    Rng rng = Rng::stream(seed, "gradcheck", static_cast<std::uint64_t>(kind));
    for (std::size_t c = 0; c < cases; ++c) {
      double e = gradcheck_case(kind, rng);
      ++r.cases;
      r.worst = std::max(r.worst, e);
      if (!(e <= tol)) ++r.failures;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace prunelab
