#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "prunelab/autograd.hpp"
#include "prunelab/error.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

/// A trainable tensor plus the binary mask that pins some of its entries at
/// zero. `mask == nullptr` means every entry is free.
struct ParamRef {
  Var var;
  const Tensor* mask = nullptr;
};

struct SgdState {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool nesterov = false;
  std::vector<Tensor> velocity;  // lazily sized to the parameter list
};

/// One momentum-SGD update with L2 weight decay (PyTorch convention:
/// v <- mu*v + g + wd*w; w <- w - lr*v, or the Nesterov look-ahead variant).
/// Masked entries have gradient, velocity and value forced to exactly zero.
/// Gradients are cleared afterwards.
inline void sgd_step(std::span<ParamRef> params, SgdState& state) {
  if (state.momentum < 0.0 || state.momentum >= 1.0) {
    throw InvalidArgument("sgd_step: momentum must lie in [0, 1)");
  }
  if (state.weight_decay < 0.0) throw InvalidArgument("sgd_step: negative weight decay");
  for (const auto& p : params) {
    if (!p.var.has_grad()) throw Error("sgd_step: parameter has no gradient");
  }
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto& p : params) state.velocity.emplace_back(p.var.shape());
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var& var = params[k].var;
    Tensor& w = var.mutable_value();
    const Tensor& g = var.grad();
    Tensor& v = state.velocity[k];
    if (v.shape() != w.shape()) throw ShapeError("sgd_step: velocity shape mismatch");
    const Tensor* mask = params[k].mask;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (mask && (*mask)[i] == 0.0) {
        w[i] = 0.0;
        v[i] = 0.0;
        continue;
      }
      double d = g[i] + state.weight_decay * w[i];
      if (state.momentum > 0.0) {
        v[i] = state.momentum * v[i] + d;
        d = state.nesterov ? d + state.momentum * v[i] : v[i];
      }
      w[i] -= state.lr * d;
    }
    var.zero_grad();
  }
}

/// Linear warmup from 0 followed by step decay at epoch milestones.
struct LrSchedule {
  double base_lr = 0.1;
  double warmup_epochs = 0.0;
  std::vector<int> milestones;
  double decay = 0.1;

  double at(std::size_t epoch, std::size_t step, std::size_t steps_per_epoch) const {
    double progress = static_cast<double>(epoch) +
                      static_cast<double>(step + 1) / static_cast<double>(std::max<std::size_t>(1, steps_per_epoch));
    double lr = base_lr;
    if (warmup_epochs > 0.0 && progress <= warmup_epochs) lr *= progress / warmup_epochs;
    for (int m : milestones)
      if (static_cast<double>(epoch) >= m) lr *= decay;
    return lr;
  }
};

}  // namespace prunelab
