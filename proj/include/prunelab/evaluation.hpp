#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "prunelab/corruption.hpp"
#include "prunelab/data.hpp"
#include "prunelab/error.hpp"
#include "prunelab/network.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

/// Absolute slack used when comparing error differences against a margin.
inline constexpr double kMarginTolerance = 1e-12;

inline double sample_mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double m = sample_mean(v), s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// A split seen through a distribution: one or more input tensors with
/// weights summing to one. Random corruptions are drawn once here, so every
/// network evaluated on the view sees the same perturbed inputs.
struct DistributionView {
  std::vector<Tensor> inputs;
  std::vector<double> weights;
  std::vector<int> labels;
};

/// Deterministic corruptions need only one draw.
inline bool corruption_is_random(CorruptionKind k) {
  return k == CorruptionKind::uniform_noise || k == CorruptionKind::gaussian_noise || k == CorruptionKind::occlusion;
}

inline DistributionView materialize(const Split& split, const DistributionSpec& dist, std::uint64_t seed,
                                    std::size_t repetitions = 1) {
  if (repetitions == 0) throw InvalidArgument("materialize: repetitions must be >= 1");
  DistributionView v;
  v.labels = split.labels;
  double per_choice = 1.0 / static_cast<double>(dist.choices());
  if (dist.include_clean || dist.corruptions.empty()) {
    v.inputs.push_back(split.inputs);
    v.weights.push_back(per_choice);
  }
  for (const auto& c : dist.corruptions) {
    std::size_t draws = corruption_is_random(c.kind) && c.parameter() > 0.0 ? repetitions : 1;
    for (std::size_t r = 0; r < draws; ++r) {
      std::uint64_t s = Rng::stream(seed, "eval:" + c.name(), r).next_u64();
      v.inputs.push_back(apply_corruption(split.inputs, c, s));
      v.weights.push_back(per_choice / static_cast<double>(draws));
    }
  }
  return v;
}

inline double distribution_accuracy(const MaskedNetwork& net, const DistributionView& view) {
  double acc = 0.0;
  for (std::size_t i = 0; i < view.inputs.size(); ++i) acc += view.weights[i] * accuracy(net, view.inputs[i], view.labels);
  return acc;
}

/// Accuracy of one method's snapshots on one distribution, per seed.
/// Point 0 of every seed is the unpruned parent.
struct PruneAccuracyCurve {
  std::string method;
  std::string distribution;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> ratios;    // [seed][point]
  std::vector<std::vector<double>> accuracy;  // [seed][point]

  std::size_t points() const { return ratios.empty() ? 0 : ratios.front().size(); }

  std::vector<double> column(const std::vector<std::vector<double>>& m, std::size_t i) const {
    std::vector<double> out;
    for (const auto& row : m) out.push_back(row.at(i));
    return out;
  }
  double mean_ratio(std::size_t i) const { return sample_mean(column(ratios, i)); }
  double mean_accuracy(std::size_t i) const { return sample_mean(column(accuracy, i)); }
  double std_accuracy(std::size_t i) const { return sample_std(column(accuracy, i)); }

  void validate() const {
    if (seeds.empty()) throw InvalidArgument("curve '" + method + "': no seeds");
    if (ratios.size() != seeds.size() || accuracy.size() != seeds.size()) {
      throw InvalidArgument("curve '" + method + "': per-seed rows do not match the seed list");
    }
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      if (ratios[s].size() != points() || accuracy[s].size() != points()) {
        throw InvalidArgument("curve '" + method + "': seeds have different point counts");
      }
      if (ratios[s].empty() || ratios[s][0] != 0.0) {
        throw InvalidArgument("curve '" + method + "': missing ratio-0 reference for seed " + std::to_string(seeds[s]));
      }
      for (std::size_t i = 1; i < ratios[s].size(); ++i)
        if (!(ratios[s][i] > ratios[s][i - 1])) {
          throw InvalidArgument("curve '" + method + "': prune ratios must be strictly increasing");
        }
    }
  }
};

/// Drops trailing points from the first cycle, in any seed, that did not raise
/// the prune ratio (pruning saturated at the per-layer floors). Such a cycle
/// adds no new tested ratio.
inline void trim_stalled(PruneAccuracyCurve& c) {
  std::size_t keep = c.points();
  for (const auto& r : c.ratios)
    for (std::size_t i = 1; i < r.size() && i < keep; ++i)
      if (!(r[i] > r[i - 1])) keep = i;
  for (auto& r : c.ratios) r.resize(std::min(r.size(), keep));
  for (auto& a : c.accuracy) a.resize(std::min(a.size(), keep));
}

/// One seed's snapshots, parent first.
struct SeedSnapshots {
  std::uint64_t seed = 0;
  std::vector<MaskedNetwork> snapshots;
};

/// Seed for the corruption draws of a distribution within one seed's run.
inline std::uint64_t eval_seed(std::uint64_t seed, const DistributionSpec& dist) {
  return Rng::stream(seed, "eval:" + dist.name).next_u64();
}

inline PruneAccuracyCurve prune_accuracy_curve(const std::string& method, std::span<const SeedSnapshots> runs,
                                               const Split& split, const DistributionSpec& dist,
                                               std::size_t repetitions = 1) {
  PruneAccuracyCurve c;
  c.method = method;
  c.distribution = dist.name;
  for (const auto& run : runs) {
    if (run.snapshots.size() < 2) {
      throw InvalidArgument("prune_accuracy_curve: need the parent and at least one pruned network");
    }
    DistributionView view = materialize(split, dist, eval_seed(run.seed, dist), repetitions);
    c.seeds.push_back(run.seed);
    c.ratios.emplace_back();
    c.accuracy.emplace_back();
    for (const auto& net : run.snapshots) {
      c.ratios.back().push_back(prune_ratio(net));
      c.accuracy.back().push_back(distribution_accuracy(net, view));
    }
  }
  trim_stalled(c);
  c.validate();
  return c;
}

struct PrunePotentialReport {
  std::string method;
  std::string distribution;
  double delta = 0.005;
  double potential = 0.0;             // from the seed-averaged error differences
  std::vector<double> seed_potentials;
  double seed_mean = 0.0;
  double seed_std = 0.0;
};

namespace detail {

// Largest tested ratio whose error increase over the parent stays within delta.
inline double potential_over(const PruneAccuracyCurve& c, std::span<const std::size_t> seeds, double delta) {
  double best = 0.0;
  for (std::size_t i = 1; i < c.points(); ++i) {
    double diff = 0.0, ratio = 0.0;
    for (std::size_t s : seeds) {
      diff += c.accuracy[s][0] - c.accuracy[s][i];
      ratio += c.ratios[s][i];
    }
    diff /= static_cast<double>(seeds.size());
    ratio /= static_cast<double>(seeds.size());
    if (diff <= delta + kMarginTolerance) best = std::max(best, ratio);
  }
  return best;
}

}  // namespace detail

inline PrunePotentialReport prune_potential(const PruneAccuracyCurve& curve, double delta = 0.005) {
  if (!(delta >= 0.0)) throw InvalidArgument("prune_potential: delta must be >= 0");
  curve.validate();
  PrunePotentialReport r;
  r.method = curve.method;
  r.distribution = curve.distribution;
  r.delta = delta;
  std::vector<std::size_t> all(curve.seeds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  r.potential = detail::potential_over(curve, all, delta);
  for (std::size_t s = 0; s < curve.seeds.size(); ++s) {
    std::size_t one[] = {s};
    r.seed_potentials.push_back(detail::potential_over(curve, one, delta));
  }
  r.seed_mean = sample_mean(r.seed_potentials);
  r.seed_std = sample_std(r.seed_potentials);
  return r;
}

inline const std::vector<double>& default_delta_grid() {
  static const std::vector<double> grid = {0.0, 0.005, 0.01, 0.02, 0.05};
  return grid;
}

inline std::vector<PrunePotentialReport> delta_sweep(const PruneAccuracyCurve& curve, std::span<const double> deltas) {
  std::vector<PrunePotentialReport> out;
  for (double d : deltas) out.push_back(prune_potential(curve, d));
  return out;
}

struct PotentialSummary {
  double average = 0.0;
  double minimum = 0.0;
};

/// Average and minimum headline potential over a set of distributions.
inline PotentialSummary summarize_potentials(std::span<const PrunePotentialReport> reports) {
  if (reports.empty()) throw InvalidArgument("summarize_potentials: no reports");
  PotentialSummary s{0.0, std::numeric_limits<double>::infinity()};
  for (const auto& r : reports) {
    s.average += r.potential;
    s.minimum = std::min(s.minimum, r.potential);
  }
  s.average /= static_cast<double>(reports.size());
  return s;
}

/// Test-distribution error minus train-distribution error; the test side is
/// averaged over its corruption set.
inline double excess_error(double train_error, std::span<const double> test_errors) {
  if (test_errors.empty()) throw InvalidArgument("excess_error: no test-distribution errors");
  return sample_mean(test_errors) - train_error;
}

inline double excess_error(const MaskedNetwork& net, const DistributionView& train_view,
                           const DistributionView& test_view) {
  return (1.0 - distribution_accuracy(net, test_view)) - (1.0 - distribution_accuracy(net, train_view));
}

struct RegressionResult {
  double slope = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t resamples = 0;
};

inline double slope_through_origin(std::span<const double> x, std::span<const double> y) {
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
  }
  if (sxx == 0.0) throw InvalidArgument("slope_through_origin: all ratios are zero");
  return sxy / sxx;
}

/// Linear-interpolated quantile of sorted values.
inline double quantile_sorted(std::span<const double> v, double q) {
  double pos = q * static_cast<double>(v.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Least squares with the intercept fixed at zero; 95% percentile bootstrap
/// over resampled points.
inline RegressionResult excess_regression(std::span<const double> x, std::span<const double> y,
                                          std::size_t resamples = 1000, std::uint64_t seed = 0) {
  if (x.size() != y.size()) throw InvalidArgument("excess_regression: x and y differ in length");
  if (resamples < 100) throw InvalidArgument("excess_regression: need at least 100 resamples");
  std::vector<double> nonzero;
  for (double v : x)
    if (v != 0.0) nonzero.push_back(v);
  std::sort(nonzero.begin(), nonzero.end());
  nonzero.erase(std::unique(nonzero.begin(), nonzero.end()), nonzero.end());
  if (nonzero.empty()) throw InvalidArgument("excess_regression: all ratios are zero");
  if (nonzero.size() < 2) throw InvalidArgument("excess_regression: need at least two distinct nonzero ratios");

  RegressionResult r;
  r.slope = slope_through_origin(x, y);
  r.resamples = resamples;
  Rng rng = Rng::stream(seed, "bootstrap");
  std::vector<double> slopes;
  slopes.reserve(resamples);
  std::size_t n = x.size();
  while (slopes.size() < resamples) {
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t k = rng.below(n);
      sxy += x[k] * y[k];
      sxx += x[k] * x[k];
    }
    if (sxx == 0.0) continue;  // only zero-ratio points drawn; slope undefined
    slopes.push_back(sxy / sxx);
  }
  std::sort(slopes.begin(), slopes.end());
  r.ci_low = quantile_sorted(slopes, 0.025);
  r.ci_high = quantile_sorted(slopes, 0.975);
  return r;
}

struct ExcessErrorReport {
  std::string method;
  std::vector<double> ratios;     // seed-averaged
  std::vector<double> diff_mean;  // (e_child - e_parent) averaged over seeds
  std::vector<double> diff_std;
  std::vector<double> x, y;       // every (seed, point) pair fed to the regression
  RegressionResult regression;
};

/// Difference in excess error between each pruned network and its own
/// seed's parent, from curves on the train and test distributions.
inline ExcessErrorReport excess_error_report(const PruneAccuracyCurve& train_curve,
                                             const PruneAccuracyCurve& test_curve, std::size_t resamples = 1000,
                                             std::uint64_t seed = 0) {
  train_curve.validate();
  test_curve.validate();
  if (train_curve.seeds != test_curve.seeds || train_curve.ratios != test_curve.ratios) {
    throw InvalidArgument("excess_error_report: curves come from different runs");
  }
  ExcessErrorReport r;
  r.method = train_curve.method;
  std::size_t seeds = train_curve.seeds.size();
  for (std::size_t i = 0; i < train_curve.points(); ++i) {
    std::vector<double> diffs;
    for (std::size_t s = 0; s < seeds; ++s) {
      double e_child = train_curve.accuracy[s][i] - test_curve.accuracy[s][i];
      double e_parent = train_curve.accuracy[s][0] - test_curve.accuracy[s][0];
      diffs.push_back(e_child - e_parent);
      r.x.push_back(train_curve.ratios[s][i]);
      r.y.push_back(diffs.back());
    }
    r.ratios.push_back(train_curve.mean_ratio(i));
    r.diff_mean.push_back(sample_mean(diffs));
    r.diff_std.push_back(sample_std(diffs));
  }
  r.regression = excess_regression(r.x, r.y, resamples, seed);
  return r;
}

}  // namespace prunelab
