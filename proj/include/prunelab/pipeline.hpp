#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "prunelab/corruption.hpp"
#include "prunelab/data.hpp"
#include "prunelab/error.hpp"
#include "prunelab/network.hpp"
#include "prunelab/pruning.hpp"
#include "prunelab/rng.hpp"
#include "prunelab/train.hpp"

namespace prunelab {

/// Architecture description; `build(seed)` performs the random init.
struct NetworkSpec {
  Shape input;
  std::vector<LayerSpec> layers;
  std::size_t classes = 2;

  MaskedNetwork build(std::uint64_t seed) const { return MaskedNetwork(input, layers, classes, seed); }
  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// n_cycles prune steps of r_prune each; every (re)train runs `train`.
struct PruneSchedule {
  std::size_t n_cycles = 6;
  double r_prune = 0.3;
  TrainConfig train;

  /// Nominal cumulative ratio after i cycles, before integer rounding.
  double nominal_ratio(std::size_t cycles) const { return 1.0 - std::pow(1.0 - r_prune, static_cast<double>(cycles)); }
  friend bool operator==(const PruneSchedule&, const PruneSchedule&) = default;
};

struct CycleRecord {
  std::size_t cycle = 0;  // 0 = trained, unpruned parent
  double prune_ratio = 0.0;
  double flop_reduction = 0.0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t requested = 0;  // entries asked for by this cycle's prune step
  std::size_t removed = 0;
  std::vector<std::string> warnings;
};

struct PruneRetrainResult {
  MaskedNetwork net;                    // final c and theta
  std::vector<CycleRecord> records;     // one per cycle, parent first
  std::vector<MaskedNetwork> snapshots; // network after each cycle, parent first
};

/// Validation samples used by data-informed criteria in a given cycle.
inline Tensor sensitivity_samples(const Dataset& data, std::size_t count, std::uint64_t seed, std::size_t cycle) {
  std::size_t n = data.val.size();
  if (n == 0) throw InvalidArgument("sensitivity samples: validation split is empty");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = Rng::stream(seed, "sensitivity", cycle);
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(std::min(n, std::max<std::size_t>(1, count)));
  return data.val.inputs.take_rows(idx);
}

/// Random init, train, then `n_cycles` rounds of prune-then-retrain with
/// identical hyperparameters. `augment`, when non-empty, is the train-dist
/// corruption set mixed into every (re)training batch.
inline PruneRetrainResult prune_retrain(const NetworkSpec& spec, std::uint64_t seed, const PruneSchedule& schedule,
                                        const PruneMethod& method, const Dataset& data,
                                        std::span<const Corruption> augment = {}, bool keep_snapshots = true) {
  if (!(schedule.r_prune > 0.0 && schedule.r_prune < 1.0)) {
    throw InvalidArgument("prune_retrain: r_prune must lie in (0, 1)");
  }
  if (data.train.size() == 0 || data.val.size() == 0 || data.test.size() == 0) {
    throw InvalidArgument("prune_retrain: dataset needs train, val and test splits");
  }
  PruneRetrainResult res;
  res.net = spec.build(seed);
  auto record = [&](std::size_t cycle, double loss, const PruneOutcome* outcome) {
    CycleRecord r;
    r.cycle = cycle;
    r.prune_ratio = prune_ratio(res.net);
    r.flop_reduction = flop_reduction(res.net);
    r.train_loss = loss;
    r.val_accuracy = accuracy(res.net, data.val.inputs, data.val.labels);
    r.test_accuracy = accuracy(res.net, data.test.inputs, data.test.labels);
    if (outcome) {
      r.requested = outcome->requested;
      r.removed = outcome->removed;
      r.warnings = outcome->warnings;
    }
    res.records.push_back(std::move(r));
    if (keep_snapshots) res.snapshots.push_back(res.net);
  };

  auto train_seed = [&](std::size_t cycle) { return Rng::stream(seed, "train", cycle).next_u64(); };
  TrainResult tr = train(res.net, data.train, schedule.train, train_seed(0), augment, 0);
  record(0, tr.final_loss, nullptr);
  for (std::size_t cycle = 1; cycle <= schedule.n_cycles; ++cycle) {
    PruneOutcome outcome;
    if (method.data_informed()) {
      Tensor s = sensitivity_samples(data, method.sample_size, seed, cycle);
      outcome = prune(res.net, method, schedule.r_prune, &s);
    } else {
      outcome = prune(res.net, method, schedule.r_prune);
    }
    tr = train(res.net, data.train, schedule.train, train_seed(cycle), augment, static_cast<int>(cycle));
    record(cycle, tr.final_loss, &outcome);
  }
  return res;
}

}  // namespace prunelab
