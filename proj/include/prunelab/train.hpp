#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "prunelab/autograd.hpp"
#include "prunelab/corruption.hpp"
#include "prunelab/data.hpp"
#include "prunelab/error.hpp"
#include "prunelab/network.hpp"
#include "prunelab/optim.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

/// Training hyperparameters; reused unchanged for every retrain cycle.
struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  bool nesterov = false;
  double weight_decay = 1e-4;
  double warmup_epochs = 1.0;
  std::vector<int> milestones;
  double decay = 0.1;

  LrSchedule schedule() const { return {lr, warmup_epochs, milestones, decay}; }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor t(Shape{labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) t[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  return t;
}

struct TrainResult {
  double final_loss = 0.0;  // mean loss over the last epoch
  std::size_t steps = 0;
};

/// Mini-batch SGD over `split`. Optimizer state starts fresh. When
/// `augment` is non-empty every batch passes through `mix_augment`.
/// `stream_seed` keys the data order and augmentation streams; `cycle` only
/// labels a divergence.
inline TrainResult train(MaskedNetwork& net, const Split& split, const TrainConfig& cfg, std::uint64_t stream_seed,
                         std::span<const Corruption> augment = {}, int cycle = 0) {
  if (cfg.batch_size == 0) throw InvalidArgument("train: batch size must be positive");
  std::size_t n = split.size();
  if (n == 0) throw InvalidArgument("train: empty split");
  for (auto& p : net.params()) p.apply_mask();
  net.zero_grad();

  auto refs = net.trainable();
  SgdState opt{cfg.lr, cfg.momentum, cfg.weight_decay, cfg.nesterov, {}};
  LrSchedule sched = cfg.schedule();
  std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::size_t> order(n);
  TrainResult res;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler = Rng::stream(stream_seed, "data-order", epoch);
    shuffler.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      std::size_t b0 = step * cfg.batch_size, b1 = std::min(n, b0 + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + b0, b1 - b0);
      Tensor x = split.inputs.take_rows(idx);
      std::vector<int> y;
      y.reserve(idx.size());
      for (auto i : idx) y.push_back(split.labels[i]);
      if (!augment.empty()) {
        x = mix_augment(x, augment, splitmix64(stream_seed ^ splitmix64(epoch * 1000003 + step)));
      }
      Var loss;
      try {
        loss = cross_entropy(net.forward(x), constant(one_hot(y, net.classes())));
      } catch (const Error& e) {
        throw DivergenceError(cycle, e.what());
      }
      if (!std::isfinite(loss.value().item())) throw DivergenceError(cycle, "non-finite loss");
      backward(loss);
      opt.lr = sched.at(epoch, step, steps_per_epoch);
      sgd_step(refs, opt);
      loss_sum += loss.value().item() * static_cast<double>(idx.size());
      ++res.steps;
    }
    res.final_loss = loss_sum / static_cast<double>(n);
    for (const auto& p : net.params()) {
      if (!p.weights().all_finite() || !p.biases().all_finite()) {
        throw DivergenceError(cycle, "non-finite parameters after epoch " + std::to_string(epoch));
      }
    }
  }
  return res;
}

}  // namespace prunelab
