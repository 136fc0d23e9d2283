#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "prunelab/error.hpp"
#include "prunelab/network.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

enum class Criterion { WT, SiPP, FT, PFP };
enum class Scope { global, local };

inline std::string_view criterion_name(Criterion c) {
  switch (c) {
    case Criterion::WT: return "WT";
    case Criterion::SiPP: return "SiPP";
    case Criterion::FT: return "FT";
    case Criterion::PFP: return "PFP";
  }
  return "?";
}

inline Criterion parse_criterion(std::string_view s) {
  for (auto c : {Criterion::WT, Criterion::SiPP, Criterion::FT, Criterion::PFP})
    if (criterion_name(c) == s) return c;
  throw InvalidArgument("unknown pruning criterion '" + std::string(s) + "'");
}

/// A pruning criterion. Scope, granularity and data dependence follow from
/// the criterion: WT/SiPP rank single weights globally, FT/PFP rank output
/// units layer by layer; SiPP/PFP need a sample batch.
struct PruneMethod {
  Criterion criterion = Criterion::WT;
  std::size_t sample_size = 64;

  Scope scope() const { return structured() ? Scope::local : Scope::global; }
  bool structured() const { return criterion == Criterion::FT || criterion == Criterion::PFP; }
  bool data_informed() const { return criterion == Criterion::SiPP || criterion == Criterion::PFP; }
  Granularity granularity() const {
    return structured() ? Granularity::per_output_unit : Granularity::per_weight;
  }
  std::string name() const { return std::string(criterion_name(criterion)); }

  friend bool operator==(const PruneMethod&, const PruneMethod&) = default;
};

/// Nonnegative importance per weight (per-weight granularity) or per output
/// unit, one block per parameterized layer. `eligible` is false for entries
/// that are already pruned or belong to a layer that is never pruned at
/// that granularity; they take no part in ranking.
struct SensitivityMap {
  Granularity granularity = Granularity::per_weight;
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<bool>> eligible;

  std::size_t eligible_count(std::size_t layer) const {
    return static_cast<std::size_t>(std::count(eligible[layer].begin(), eligible[layer].end(), true));
  }
  std::size_t eligible_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < eligible.size(); ++l) n += eligible_count(l);
    return n;
  }
};

namespace detail {

inline SensitivityMap weight_map_skeleton(const MaskedNetwork& net) {
  SensitivityMap m;
  m.granularity = Granularity::per_weight;
  for (const auto& p : net.params()) {
    m.scores.emplace_back(p.weights().size(), 0.0);
    std::vector<bool> e(p.weights().size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = p.mask()[i] != 0.0;
    m.eligible.push_back(std::move(e));
  }
  return m;
}

// Output units of every layer but the classifier are structurally prunable.
inline SensitivityMap unit_map_skeleton(const MaskedNetwork& net) {
  SensitivityMap m;
  m.granularity = Granularity::per_output_unit;
  std::size_t last = net.params().size() - 1;
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    const auto& p = net.params()[k];
    m.scores.emplace_back(p.units(), 0.0);
    std::vector<bool> e(p.units(), false);
    if (k != last)
      for (std::size_t u = 0; u < p.units(); ++u) e[u] = p.unit_alive(u);
    m.eligible.push_back(std::move(e));
  }
  return m;
}

inline void require_samples(const Tensor& samples, const char* who) {
  if (samples.rank() == 0 || samples.dim(0) == 0) throw InvalidArgument(std::string(who) + ": empty sample set");
}

}  // namespace detail

/// WT: |W_ij|.
inline SensitivityMap sensitivity_wt(const MaskedNetwork& net) {
  SensitivityMap m = detail::weight_map_skeleton(net);
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    const Tensor& w = net.params()[k].weights();
    for (std::size_t i = 0; i < w.size(); ++i) m.scores[k][i] = std::abs(w[i]);
  }
  return m;
}

/// SiPP: mean over samples of |W_ij a_j(x)|, a_j the layer input feeding
/// the weight. A conv weight is shared across output positions, so its
/// activation term is the mean |input| it reads over those positions
/// (padding reads zero).
inline SensitivityMap sensitivity_sipp(const MaskedNetwork& net, const Tensor& samples) {
  detail::require_samples(samples, "sensitivity_sipp");
  SensitivityMap m = detail::weight_map_skeleton(net);
  auto acts = net.trace(samples);
  std::size_t s_count = samples.dim(0);
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    const LayerSpec& l = net.layers()[net.layer_of_param(k)];
    const Tensor& a = acts[net.layer_of_param(k)];
    const Tensor& w = net.params()[k].weights();
    if (l.kind == LayerKind::dense) {
      std::vector<double> mean_abs(l.in, 0.0);
      for (std::size_t s = 0; s < s_count; ++s)
        for (std::size_t i = 0; i < l.in; ++i) mean_abs[i] += std::abs(a[s * l.in + i]);
      for (auto& v : mean_abs) v /= static_cast<double>(s_count);
      for (std::size_t o = 0; o < l.out; ++o)
        for (std::size_t i = 0; i < l.in; ++i) m.scores[k][o * l.in + i] = std::abs(w[o * l.in + i]) * mean_abs[i];
    } else {
      std::size_t h = a.dim(2), wd = a.dim(3), kk = l.kernel;
      auto pad = static_cast<std::ptrdiff_t>(l.padding == Padding::same ? kk / 2 : 0);
      std::size_t oh = l.padding == Padding::same ? h : h - kk + 1;
      std::size_t ow = l.padding == Padding::same ? wd : wd - kk + 1;
      std::vector<double> tap(l.in * kk * kk, 0.0);
      for (std::size_t s = 0; s < s_count; ++s)
        for (std::size_t c = 0; c < l.in; ++c)
          for (std::size_t ki = 0; ki < kk; ++ki)
            for (std::size_t kj = 0; kj < kk; ++kj) {
              double acc = 0.0;
              for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) {
                  auto iy = static_cast<std::ptrdiff_t>(y + ki) - pad;
                  auto ix = static_cast<std::ptrdiff_t>(x + kj) - pad;
                  if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(wd))
                    continue;
                  acc += std::abs(a[((s * l.in + c) * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)]);
                }
              tap[(c * kk + ki) * kk + kj] += acc / static_cast<double>(oh * ow);
            }
      for (auto& v : tap) v /= static_cast<double>(s_count);
      std::size_t per_out = l.in * kk * kk;
      for (std::size_t o = 0; o < l.out; ++o)
        for (std::size_t t = 0; t < per_out; ++t) m.scores[k][o * per_out + t] = std::abs(w[o * per_out + t]) * tap[t];
    }
  }
  for (std::size_t k = 0; k < m.scores.size(); ++k)
    for (std::size_t i = 0; i < m.scores[k].size(); ++i)
      if (!m.eligible[k][i]) m.scores[k][i] = 0.0;
  return m;
}

/// FT: L1 norm of each output unit's weight slice.
inline SensitivityMap sensitivity_ft(const MaskedNetwork& net) {
  SensitivityMap m = detail::unit_map_skeleton(net);
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    const auto& p = net.params()[k];
    std::size_t n = p.unit_size();
    for (std::size_t u = 0; u < p.units(); ++u) {
      double s = 0.0;
      for (std::size_t i = u * n; i < (u + 1) * n; ++i) s += std::abs(p.weights()[i]);
      m.scores[k][u] = s;
    }
  }
  return m;
}

/// PFP: a unit's score is the largest |W_next[i, j] * a_j(x)| over the
/// samples and over every next-layer weight consuming the unit's output.
/// For a conv consumer the pairing of taps and positions is relaxed to
/// max|W| * max|a|. Classifier units fall back to their own weighted inputs.
inline SensitivityMap sensitivity_pfp(const MaskedNetwork& net, const Tensor& samples) {
  detail::require_samples(samples, "sensitivity_pfp");
  SensitivityMap m = detail::unit_map_skeleton(net);
  auto acts = net.trace(samples);
  std::size_t s_count = samples.dim(0);
  std::size_t last = net.params().size() - 1;
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    const auto& p = net.params()[k];
    if (k == last) {
      const LayerSpec& l = net.layers()[net.layer_of_param(k)];
      const Tensor& a = acts[net.layer_of_param(k)];
      const Tensor& w = p.weights();
      std::size_t fan = p.unit_size();
      for (std::size_t u = 0; u < p.units(); ++u) {
        double best = 0.0;
        if (l.kind == LayerKind::dense) {
          for (std::size_t s = 0; s < s_count; ++s)
            for (std::size_t i = 0; i < fan; ++i) best = std::max(best, std::abs(w[u * fan + i] * a[s * fan + i]));
        } else {
          double wmax = 0.0, amax = 0.0;
          for (std::size_t i = u * fan; i < (u + 1) * fan; ++i) wmax = std::max(wmax, std::abs(w[i]));
          for (double v : a.data()) amax = std::max(amax, std::abs(v));
          best = wmax * amax;
        }
        m.scores[k][u] = best;
      }
      continue;
    }
    const LayerSpec& next = net.layers()[net.layer_of_param(k + 1)];
    const Tensor& a = acts[net.layer_of_param(k + 1)];  // consumer's input, post-activation
    const Tensor& wn = net.params()[k + 1].weights();
    std::size_t units = p.units();
    if (next.kind == LayerKind::dense) {
      std::size_t fan = next.in;
      std::size_t per_unit = fan / units;  // >1 when a flatten sits between
      std::vector<double> col_max(fan, 0.0);
      for (std::size_t o = 0; o < next.out; ++o)
        for (std::size_t i = 0; i < fan; ++i) col_max[i] = std::max(col_max[i], std::abs(wn[o * fan + i]));
      for (std::size_t u = 0; u < units; ++u) {
        double best = 0.0;
        for (std::size_t s = 0; s < s_count; ++s)
          for (std::size_t i = u * per_unit; i < (u + 1) * per_unit; ++i)
            best = std::max(best, col_max[i] * std::abs(a[s * fan + i]));
        m.scores[k][u] = best;
      }
    } else {
      std::size_t taps = next.kernel * next.kernel;
      std::size_t plane = a.dim(2) * a.dim(3);
      for (std::size_t u = 0; u < units; ++u) {
        double wmax = 0.0, amax = 0.0;
        for (std::size_t o = 0; o < next.out; ++o)
          for (std::size_t t = 0; t < taps; ++t) wmax = std::max(wmax, std::abs(wn[(o * next.in + u) * taps + t]));
        for (std::size_t s = 0; s < s_count; ++s)
          for (std::size_t q = 0; q < plane; ++q) amax = std::max(amax, std::abs(a[(s * units + u) * plane + q]));
        m.scores[k][u] = wmax * amax;
      }
    }
  }
  return m;
}

enum class BudgetRule {
  global_threshold,      // one threshold over all eligible entries
  uniform_per_layer,     // same ratio in every layer
  normalized_threshold,  // one threshold over scores divided by their layer max
};

inline BudgetRule budget_rule(const PruneMethod& m) {
  switch (m.criterion) {
    case Criterion::WT:
    case Criterion::SiPP: return BudgetRule::global_threshold;
    case Criterion::FT: return BudgetRule::uniform_per_layer;
    case Criterion::PFP: return BudgetRule::normalized_threshold;
  }
  return BudgetRule::global_threshold;
}

struct Allocation {
  std::vector<std::size_t> keep;  // eligible entries kept per layer
  std::size_t requested = 0;      // entries the ratio asked to remove
  std::size_t removed = 0;        // entries actually selected for removal
  std::vector<std::string> warnings;
};

/// Per-layer keep counts for removing a fraction `r` of the eligible entries.
/// Every layer with eligible entries keeps at least one; when that floor
/// binds under a threshold rule the next-ranked entry elsewhere is taken, so
/// the requested count is still met whenever possible.
inline Allocation allocate_budgets(const SensitivityMap& map, double r, BudgetRule rule) {
  if (!(r > 0.0 && r < 1.0)) throw InvalidArgument("allocate_budgets: ratio must lie in (0, 1)");
  std::size_t layers = map.scores.size();
  Allocation a;
  a.keep.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) a.keep[l] = map.eligible_count(l);

  if (rule == BudgetRule::uniform_per_layer) {
    for (std::size_t l = 0; l < layers; ++l) {
      std::size_t n = a.keep[l];
      if (n == 0) continue;
      auto drop = static_cast<std::size_t>(std::floor(r * static_cast<double>(n)));
      a.requested += drop;
      if (drop >= n) {
        drop = n - 1;
        a.warnings.push_back("layer " + std::to_string(l) + ": budget clamped to keep one unit");
      }
      a.keep[l] = n - drop;
      a.removed += drop;
    }
    return a;
  }

  std::vector<double> norm(layers, 1.0);
  if (rule == BudgetRule::normalized_threshold) {
    for (std::size_t l = 0; l < layers; ++l) {
      double mx = 0.0;
      for (std::size_t i = 0; i < map.scores[l].size(); ++i)
        if (map.eligible[l][i]) mx = std::max(mx, map.scores[l][i]);
      norm[l] = mx;
    }
  }
  std::vector<std::tuple<double, std::size_t, std::size_t>> ranked;
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t i = 0; i < map.scores[l].size(); ++i) {
      if (!map.eligible[l][i]) continue;
      double s = map.scores[l][i];
      if (rule == BudgetRule::normalized_threshold) s = norm[l] > 0.0 ? s / norm[l] : 0.0;
      ranked.emplace_back(s, l, i);
    }
  std::sort(ranked.begin(), ranked.end());
  a.requested = static_cast<std::size_t>(std::floor(r * static_cast<double>(ranked.size())));
  std::vector<bool> warned(layers, false);
  for (const auto& [s, l, i] : ranked) {
    if (a.removed == a.requested) break;
    if (a.keep[l] <= 1) {
      if (!warned[l]) {
        a.warnings.push_back("layer " + std::to_string(l) + ": budget clamped to keep one entry");
        warned[l] = true;
      }
      continue;
    }
    --a.keep[l];
    ++a.removed;
  }
  if (a.removed < a.requested) a.warnings.push_back("requested removal count not reachable");
  return a;
}

struct PruneOutcome {
  std::size_t requested = 0;  // weights or units
  std::size_t removed = 0;
  std::vector<std::string> warnings;
};

inline SensitivityMap compute_sensitivity(const MaskedNetwork& net, const PruneMethod& method,
                                          const Tensor* samples) {
  if (method.data_informed() && samples == nullptr) {
    throw InvalidArgument("prune: " + method.name() + " needs a sample set");
  }
  switch (method.criterion) {
    case Criterion::WT: return sensitivity_wt(net);
    case Criterion::SiPP: return sensitivity_sipp(net, *samples);
    case Criterion::FT: return sensitivity_ft(net);
    case Criterion::PFP: return sensitivity_pfp(net, *samples);
  }
  return sensitivity_wt(net);
}

/// Masks the fraction `r` of the still-unmasked entries that rank lowest
/// under `method`. Ranking ties resolve by (layer, flat index) ascending.
/// Masked entries are never revived.
inline PruneOutcome prune(MaskedNetwork& net, const PruneMethod& method, double r, const Tensor* samples = nullptr) {
  SensitivityMap map = compute_sensitivity(net, method, samples);
  Allocation alloc = allocate_budgets(map, r, budget_rule(method));
  PruneOutcome out{alloc.requested, alloc.removed, alloc.warnings};
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    std::size_t n_eligible = map.eligible_count(k);
    std::size_t drop = n_eligible - alloc.keep[k];
    if (drop == 0) continue;
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i = 0; i < map.scores[k].size(); ++i)
      if (map.eligible[k][i]) ranked.emplace_back(map.scores[k][i], i);
    std::sort(ranked.begin(), ranked.end());
    auto& p = net.params()[k];
    Tensor mask = p.mask();
    std::size_t unit = method.structured() ? p.unit_size() : 1;
    for (std::size_t d = 0; d < drop; ++d) {
      std::size_t idx = ranked[d].second;
      for (std::size_t i = idx * unit; i < (idx + 1) * unit; ++i) mask[i] = 0.0;
    }
    p.set_mask(std::move(mask), method.granularity());
  }
  return out;
}

}  // namespace prunelab
