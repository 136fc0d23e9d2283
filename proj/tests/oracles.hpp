#pragma once

// Reference implementations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <tuple>
#include <vector>

#include "prunelab/metrics.hpp"
#include "prunelab/network.hpp"
#include "prunelab/rng.hpp"

namespace prunelab::oracle {

// Random MLP, optionally with a conv front end, and some weights already
// masked so eligibility matters.
inline MaskedNetwork random_net(std::uint64_t seed, bool prepruned) {
  Rng rng = Rng::stream(seed, "test-net");
  std::vector<LayerSpec> layers;
  Shape input;
  std::size_t width;
  if (rng.below(2) == 0) {
    std::size_t ch = 1 + rng.below(4);
    input = {1, 4, 4};
    layers = {LayerSpec::conv(1, ch, 3), LayerSpec::relu(), LayerSpec::flatten()};
    width = ch * 16;
  } else {
    width = 2 + rng.below(6);
    input = {width};
  }
  std::size_t depth = 1 + rng.below(3);
  for (std::size_t d = 0; d < depth; ++d) {
    std::size_t next = 2 + rng.below(8);
    layers.push_back(LayerSpec::dense(width, next));
    layers.push_back(LayerSpec::relu());
    width = next;
  }
  std::size_t classes = 2 + rng.below(3);
  layers.push_back(LayerSpec::dense(width, classes));
  MaskedNetwork net(input, layers, classes, rng.next_u64());
  if (prepruned) {
    for (auto& p : net.params()) {
      Tensor m = p.mask();
      for (std::size_t i = 0; i < m.size(); ++i)
        if (i != 0 && rng.uniform() < 0.3) m[i] = 0.0;
      p.set_mask(m, Granularity::per_weight);
    }
  }
  return net;
}

// Reference: rank every unmasked weight by (|w|, layer, index) and mask the
// first floor(r N), skipping layers that would drop to zero.
inline std::vector<Tensor> wt_oracle(const MaskedNetwork& net, double r) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> all;
  std::vector<std::size_t> alive;
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    const auto& p = net.params()[k];
    alive.push_back(p.nonzero_mask());
    for (std::size_t i = 0; i < p.weights().size(); ++i)
      if (p.mask()[i] != 0.0) all.emplace_back(std::abs(p.weights()[i]), k, i);
  }
  std::sort(all.begin(), all.end());
  auto want = static_cast<std::size_t>(std::floor(r * static_cast<double>(all.size())));
  std::vector<Tensor> masks;
  for (const auto& p : net.params()) masks.push_back(p.mask());
  std::size_t done = 0;
  for (const auto& [s, k, i] : all) {
    if (done == want) break;
    if (alive[k] <= 1) continue;
    masks[k][i] = 0.0;
    --alive[k];
    ++done;
  }
  return masks;
}

// Reference: in every non-classifier layer mask the floor(r n) alive units
// with the smallest L1 norm, ties to the lower index.
inline std::vector<Tensor> ft_oracle(const MaskedNetwork& net, double r) {
  std::vector<Tensor> masks;
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    const auto& p = net.params()[k];
    Tensor m = p.mask();
    if (k + 1 < net.params().size()) {
      std::vector<std::pair<double, std::size_t>> units;
      for (std::size_t u = 0; u < p.units(); ++u) {
        if (!p.unit_alive(u)) continue;
        double s = 0.0;
        for (std::size_t i = 0; i < p.unit_size(); ++i) s += std::abs(p.weights()[u * p.unit_size() + i]);
        units.emplace_back(s, u);
      }
      std::sort(units.begin(), units.end());
      auto drop = static_cast<std::size_t>(std::floor(r * static_cast<double>(units.size())));
      drop = std::min(drop, units.size() - 1);
      for (std::size_t d = 0; d < drop; ++d)
        for (std::size_t i = 0; i < p.unit_size(); ++i) m[units[d].second * p.unit_size() + i] = 0.0;
    }
    masks.push_back(m);
  }
  return masks;
}

// Replays BackSelect with one forward pass per candidate. Returns the first
// step at which `order` is not the highest-confidence candidate, or n.
inline std::size_t first_backselect_violation(const MaskedNetwork& net, const Tensor& x, std::size_t cls,
                                              const std::vector<std::size_t>& order) {
  std::size_t n = x.size();
  Tensor cur = detail::as_batch(net, x);
  std::vector<bool> masked(n, false);
  for (std::size_t step = 0; step < n; ++step) {
    double best = -1.0;
    std::size_t arg = n;
    for (std::size_t f = 0; f < n; ++f) {
      if (masked[f]) continue;
      Tensor t = cur;
      t[f] = 0.0;
      double v = probabilities(net, t)[cls];
      if (v > best) {
        best = v;
        arg = f;
      }
    }
    if (step >= order.size() || order[step] != arg) return step;
    cur[arg] = 0.0;
    masked[arg] = true;
  }
  return n;
}

}  // namespace prunelab::oracle
