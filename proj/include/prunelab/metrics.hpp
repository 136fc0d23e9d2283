#pragma once

// Functional distance between networks: which input features a network
// relies on, and how often two networks agree under input noise.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "prunelab/autograd.hpp"
#include "prunelab/corruption.hpp"
#include "prunelab/error.hpp"
#include "prunelab/evaluation.hpp"
#include "prunelab/network.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

inline constexpr std::size_t kMaxBackSelectFeatures = 256;

/// Row-wise softmax of the network's logits.
inline Tensor probabilities(const MaskedNetwork& net, const Tensor& batch) {
  NoGradGuard guard;
  return softmax(constant(net.logits(batch))).value();
}

namespace detail {

inline Tensor as_batch(const MaskedNetwork& net, const Tensor& x) {
  std::size_t n = shape_size(net.input_shape());
  if (x.size() != n) {
    throw ShapeError("input " + shape_str(x.shape()) + " does not match network input " +
                     shape_str(net.input_shape()));
  }
  Shape s{1};
  s.insert(s.end(), net.input_shape().begin(), net.input_shape().end());
  return x.reshaped(s);
}

}  // namespace detail

/// Greedy backward selection. Each step masks (sets to 0) the unmasked
/// feature whose removal leaves the highest softmax confidence in `cls`;
/// ties go to the lowest feature index. Returns features in masking order,
/// least informative first. `confidences`, if given, receives the confidence
/// after each step.
inline std::vector<std::size_t> back_select(const MaskedNetwork& net, const Tensor& x, std::size_t cls,
                                            std::vector<double>* confidences = nullptr) {
  Tensor cur = detail::as_batch(net, x);
  std::size_t n = cur.size();
  if (n > kMaxBackSelectFeatures) {
    throw InvalidArgument("back_select: " + std::to_string(n) + " features exceeds the limit of " +
                          std::to_string(kMaxBackSelectFeatures));
  }
  if (cls >= net.classes()) throw InvalidArgument("back_select: class out of range");
  std::vector<std::size_t> alive(n), order;
  std::iota(alive.begin(), alive.end(), std::size_t{0});
  if (confidences) confidences->clear();

  Shape batch_shape = cur.shape();
  while (!alive.empty()) {
    std::size_t m = alive.size();
    batch_shape[0] = m;
    Tensor cand(batch_shape);
    for (std::size_t c = 0; c < m; ++c) {
      std::copy(cur.data().begin(), cur.data().end(), cand.data().begin() + static_cast<std::ptrdiff_t>(c * n));
      cand[c * n + alive[c]] = 0.0;
    }
    Tensor p = probabilities(net, cand);
    std::size_t k = net.classes(), best = 0;
    for (std::size_t c = 1; c < m; ++c)
      if (p[c * k + cls] > p[best * k + cls]) best = c;
    cur[alive[best]] = 0.0;
    order.push_back(alive[best]);
    if (confidences) confidences->push_back(p[best * k + cls]);
    alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return order;
}

struct FeatureMask {
  std::vector<double> m;  // 0/1 per feature
  double sparsity = 0.0;
  std::string source_model;
  std::size_t source_input = 0;
  std::size_t predicted_class = 0;

  std::size_t kept() const { return static_cast<std::size_t>(std::count(m.begin(), m.end(), 1.0)); }
};

/// Keeps the ceil((1 - B) n) features masked last.
inline FeatureMask make_feature_mask(std::span<const std::size_t> ordering, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw InvalidArgument("make_feature_mask: sparsity must be in [0, 1]");
  std::size_t n = ordering.size();
  // The small slack keeps e.g. (1 - 0.7) * 10 from rounding up to 4.
  auto keep = static_cast<std::size_t>(std::ceil((1.0 - sparsity) * static_cast<double>(n) - 1e-9));
  keep = std::min(keep, n);
  FeatureMask fm;
  fm.m.assign(n, 0.0);
  fm.sparsity = sparsity;
  for (std::size_t i = n - keep; i < n; ++i) fm.m.at(ordering[i]) = 1.0;
  return fm;
}

/// Softmax probability of `true_class` on m * x.
inline double cross_confidence(const MaskedNetwork& net, const FeatureMask& mask, const Tensor& x,
                               std::size_t true_class) {
  if (mask.m.size() != x.size()) {
    throw ShapeError("cross_confidence: mask has " + std::to_string(mask.m.size()) + " entries, input " +
                     shape_str(x.shape()));
  }
  if (true_class >= net.classes()) throw InvalidArgument("cross_confidence: class out of range");
  Tensor masked = detail::as_batch(net, x);
  for (std::size_t i = 0; i < masked.size(); ++i) masked[i] *= mask.m[i];
  return probabilities(net, masked)[true_class];
}

struct NamedNetwork {
  std::string name;
  const MaskedNetwork* net = nullptr;
};

/// cells[s][e]: mean confidence toward the true class when network e sees
/// inputs masked by network s's BackSelect mask at `sparsity`.
struct ConfidenceHeatmap {
  std::vector<std::string> names;
  std::vector<std::vector<double>> cells;
  double sparsity = 0.0;
  std::size_t inputs = 0;
};

inline ConfidenceHeatmap confidence_heatmap(std::span<const NamedNetwork> nets, const Tensor& inputs,
                                            std::span<const int> labels, double sparsity) {
  std::size_t count = inputs.dim(0);
  if (count == 0 || labels.size() != count) throw InvalidArgument("confidence_heatmap: need labelled inputs");
  ConfidenceHeatmap h;
  h.sparsity = sparsity;
  h.inputs = count;
  for (const auto& nn : nets) h.names.push_back(nn.name);
  h.cells.assign(nets.size(), std::vector<double>(nets.size(), 0.0));
  for (std::size_t i = 0; i < count; ++i) {
    Tensor x = inputs.slice_rows(i, i + 1);
    for (std::size_t s = 0; s < nets.size(); ++s) {
      std::size_t pred = predict(*nets[s].net, x).front();
      FeatureMask fm = make_feature_mask(back_select(*nets[s].net, x, pred), sparsity);
      fm.source_model = nets[s].name;
      fm.source_input = i;
      fm.predicted_class = pred;
      for (std::size_t e = 0; e < nets.size(); ++e)
        h.cells[s][e] += cross_confidence(*nets[e].net, fm, x, static_cast<std::size_t>(labels[i]));
    }
  }
  for (auto& row : h.cells)
    for (auto& v : row) v /= static_cast<double>(count);
  return h;
}

inline const std::vector<double>& default_similarity_grid() {
  static const std::vector<double> grid = {0.0, 0.05, 0.1, 0.2, 0.4};
  return grid;
}

/// Per-epsilon agreement statistics; means are over samples and
/// repetitions, standard deviations over the per-repetition means.
struct SimilarityReport {
  std::vector<double> eps;
  std::vector<double> match;
  std::vector<double> match_std;
  std::vector<double> l2;
  std::vector<double> l2_std;
  std::vector<std::size_t> draws;  // effective repetitions per epsilon
  std::size_t samples = 0;
  std::size_t repetitions = 0;
};

inline SimilarityReport noise_similarity(const MaskedNetwork& a, const MaskedNetwork& b, const Tensor& inputs,
                                         std::span<const double> eps_grid, std::size_t repetitions,
                                         std::uint64_t seed) {
  if (repetitions == 0) throw InvalidArgument("noise_similarity: repetitions must be >= 1");
  if (inputs.rank() == 0 || inputs.dim(0) == 0) throw InvalidArgument("noise_similarity: empty sample");
  SimilarityReport r;
  r.samples = inputs.dim(0);
  r.repetitions = repetitions;
  std::size_t k = a.classes();
  for (double eps : eps_grid) {
    std::size_t draws = eps == 0.0 ? 1 : repetitions;
    std::vector<double> match, l2;
    for (std::size_t rep = 0; rep < draws; ++rep) {
      Tensor x = inject_uniform_noise(inputs, eps, Rng::stream(seed, "similarity", rep).next_u64());
      Tensor pa = probabilities(a, x), pb = probabilities(b, x);
      double hits = 0.0, dist = 0.0;
      for (std::size_t i = 0; i < r.samples; ++i) {
        auto ra = pa.data().subspan(i * k, k), rb = pb.data().subspan(i * k, k);
        hits += argmax(ra) == argmax(rb) ? 1.0 : 0.0;
        double d2 = 0.0;
        for (std::size_t j = 0; j < k; ++j) d2 += (ra[j] - rb[j]) * (ra[j] - rb[j]);
        dist += std::sqrt(d2);
      }
      match.push_back(hits / static_cast<double>(r.samples));
      l2.push_back(dist / static_cast<double>(r.samples));
    }
    r.eps.push_back(eps);
    r.match.push_back(sample_mean(match));
    r.match_std.push_back(sample_std(match));
    r.l2.push_back(sample_mean(l2));
    r.l2_std.push_back(sample_std(l2));
    r.draws.push_back(draws);
  }
  return r;
}

}  // namespace prunelab
