#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prunelab/error.hpp"
#include "prunelab/rng.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

enum class CorruptionKind : std::uint8_t {
  uniform_noise,
  gaussian_noise,
  contrast,
  brightness,
  pixelate,
  occlusion,
};

inline constexpr std::array<CorruptionKind, 6> kAllCorruptions = {
    CorruptionKind::uniform_noise, CorruptionKind::gaussian_noise, CorruptionKind::contrast,
    CorruptionKind::brightness,    CorruptionKind::pixelate,       CorruptionKind::occlusion};

inline std::string_view corruption_name(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::uniform_noise: return "uniform-noise";
    case CorruptionKind::gaussian_noise: return "gaussian-noise";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::brightness: return "brightness";
    case CorruptionKind::pixelate: return "pixelate";
    case CorruptionKind::occlusion: return "occlusion";
  }
  return "?";
}

inline CorruptionKind parse_corruption(std::string_view s) {
  for (auto k : kAllCorruptions)
    if (corruption_name(k) == s) return k;
  throw InvalidArgument("unknown corruption '" + std::string(s) + "'");
}

/// A corruption family at one of five severities. Strength ladders are in
/// normalized input units and linear in severity. `value`, when set, replaces
/// the ladder entry (used for explicit noise sweeps).
struct Corruption {
  CorruptionKind kind = CorruptionKind::uniform_noise;
  int severity = 3;
  std::optional<double> value;

  /// Noise half-width / sd, contrast factor, brightness shift, pixelate blend
  /// toward 2x2 block averages, or occluded fraction of the image.
  double parameter() const {
    check();
    if (value) return *value;
    return ladder(kind)[static_cast<std::size_t>(severity - 1)];
  }

  static const std::array<double, 5>& ladder(CorruptionKind k) {
    static constexpr std::array<double, 5> uniform = {0.5, 0.75, 1.0, 1.25, 1.5};
    static constexpr std::array<double, 5> gauss = {0.3, 0.45, 0.6, 0.75, 0.9};
    static constexpr std::array<double, 5> contrast = {0.6, 0.5, 0.4, 0.3, 0.2};
    static constexpr std::array<double, 5> bright = {0.1, 0.2, 0.3, 0.4, 0.5};
    static constexpr std::array<double, 5> blend = {0.45, 0.55, 0.65, 0.75, 0.85};
    static constexpr std::array<double, 5> area = {0.1, 0.2, 0.3, 0.4, 0.5};
    switch (k) {
      case CorruptionKind::uniform_noise: return uniform;
      case CorruptionKind::gaussian_noise: return gauss;
      case CorruptionKind::contrast: return contrast;
      case CorruptionKind::brightness: return bright;
      case CorruptionKind::pixelate: return blend;
      case CorruptionKind::occlusion: return area;
    }
    return uniform;
  }

  std::string name() const {
    std::string n(corruption_name(kind));
    if (!value) return n + "@" + std::to_string(severity);
    std::ostringstream os;
    os << n << "=" << *value;
    return os.str();
  }

  void check() const {
    if (severity < 1 || severity > 5) {
      throw InvalidArgument("corruption severity must be in 1..5, got " + std::to_string(severity));
    }
    if (value && !(std::isfinite(*value) && *value >= 0.0)) {
      throw InvalidArgument("corruption value must be finite and >= 0");
    }
    if (value && *value > 1.0 && (kind == CorruptionKind::pixelate || kind == CorruptionKind::occlusion)) {
      throw InvalidArgument(std::string(corruption_name(kind)) + " value is a fraction and must be <= 1");
    }
  }

  friend bool operator==(const Corruption&, const Corruption&) = default;
};

namespace detail {

inline std::size_t sample_size(const Tensor& batch) {
  return batch.dim(0) ? batch.size() / batch.dim(0) : 0;
}

// Averages k x k blocks (edge blocks may be partial) of every channel plane.
inline void block_average(std::span<double> sample, std::size_t channels, std::size_t h, std::size_t w,
                          std::size_t k) {
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = sample.data() + c * h * w;
    for (std::size_t bi = 0; bi < h; bi += k) {
      for (std::size_t bj = 0; bj < w; bj += k) {
        std::size_t ei = std::min(h, bi + k), ej = std::min(w, bj + k);
        double s = 0.0;
        for (std::size_t i = bi; i < ei; ++i)
          for (std::size_t j = bj; j < ej; ++j) s += plane[i * w + j];
        s /= static_cast<double>((ei - bi) * (ej - bj));
        for (std::size_t i = bi; i < ei; ++i)
          for (std::size_t j = bj; j < ej; ++j) plane[i * w + j] = s;
      }
    }
  }
}

}  // namespace detail

/// Rectangle covering about `fraction` of an h x w plane. Both sides are
/// non-decreasing in `fraction`.
inline std::pair<std::size_t, std::size_t> occlusion_patch(std::size_t h, std::size_t w, double fraction) {
  double area = std::min(1.0, fraction) * static_cast<double>(h * w);
  auto ph = std::min(h, static_cast<std::size_t>(std::lround(std::sqrt(area))));
  std::size_t pw = ph ? std::min(w, static_cast<std::size_t>(std::lround(area / static_cast<double>(ph)))) : 0;
  return {ph, pw};
}

/// Adds i.i.d. U(-eps, eps) noise to every entry. Sample i of the batch draws
/// from its own stream, so results do not depend on how samples are batched.
inline Tensor inject_uniform_noise(const Tensor& x, double eps, std::uint64_t seed, std::size_t first_index = 0) {
  if (eps < 0.0) throw InvalidArgument("inject_uniform_noise: eps must be >= 0");
  Tensor out = x;
  if (eps == 0.0) return out;
  std::size_t per = detail::sample_size(x);
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    Rng rng = Rng::stream(seed, "uniform-noise", first_index + b);
    for (std::size_t i = 0; i < per; ++i) out[b * per + i] += eps * rng.uniform(-1.0, 1.0);
  }
  return out;
}

/// k x k block averaging of image batches [B,C,H,W].
inline Tensor pixelate(const Tensor& x, std::size_t block) {
  if (x.rank() != 4) {
    throw InvalidArgument("pixelate: needs image input [B,C,H,W], got " + shape_str(x.shape()));
  }
  if (block == 0) throw InvalidArgument("pixelate: block must be positive");
  Tensor out = x;
  std::size_t per = detail::sample_size(x);
  for (std::size_t b = 0; b < x.dim(0); ++b)
    detail::block_average(out.data().subspan(b * per, per), x.dim(1), x.dim(2), x.dim(3), block);
  return out;
}

/// Applies `c` to every sample of the batch. Sample i's randomness comes
/// from stream (seed, kind, first_index + i).
inline Tensor apply_corruption(const Tensor& x, const Corruption& c, std::uint64_t seed,
                               std::size_t first_index = 0) {
  c.check();
  double p = c.parameter();
  std::size_t per = detail::sample_size(x);
  Tensor out = x;
  switch (c.kind) {
    case CorruptionKind::uniform_noise: return inject_uniform_noise(x, p, seed, first_index);
    case CorruptionKind::gaussian_noise:
      for (std::size_t b = 0; b < x.dim(0); ++b) {
        Rng rng = Rng::stream(seed, "gaussian-noise", first_index + b);
        for (std::size_t i = 0; i < per; ++i) out[b * per + i] += p * rng.normal();
      }
      return out;
    case CorruptionKind::contrast:
      for (auto& v : out.data()) v *= p;
      return out;
    case CorruptionKind::brightness:
      for (auto& v : out.data()) v += p;
      return out;
    case CorruptionKind::pixelate: {
      if (x.rank() != 4) {
        throw InvalidArgument("apply_corruption: pixelate needs image input, got " + shape_str(x.shape()));
      }
      Tensor coarse = pixelate(x, 2);
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = (1.0 - p) * x[k] + p * coarse[k];
      return out;
    }
    case CorruptionKind::occlusion: {
      if (x.rank() != 4) {
        throw InvalidArgument("apply_corruption: occlusion needs image input, got " + shape_str(x.shape()));
      }
      std::size_t ch = x.dim(1), h = x.dim(2), w = x.dim(3);
      auto [ph, pw] = occlusion_patch(h, w, p);
      // The anchor is drawn against the largest ladder patch, so patches of
      // increasing severity are nested.
      auto [mh, mw] = occlusion_patch(h, w, std::max(p, Corruption::ladder(CorruptionKind::occlusion).back()));
      for (std::size_t b = 0; b < x.dim(0); ++b) {
        Rng rng = Rng::stream(seed, "occlusion", first_index + b);
        std::size_t r0 = rng.below(h - mh + 1), c0 = rng.below(w - mw + 1);
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t i = r0; i < r0 + ph; ++i)
            for (std::size_t j = c0; j < c0 + pw; ++j) out[b * per + (c * h + i) * w + j] = 0.0;
      }
      return out;
    }
  }
  return out;
}

/// Per-sample uniform choice among the k corruptions plus the identity
/// (choice index k). Returns the augmented batch; `choices` receives the
/// per-sample pick when non-null.
inline Tensor mix_augment(const Tensor& batch, std::span<const Corruption> set, std::uint64_t seed,
                          std::vector<std::size_t>* choices = nullptr) {
  std::size_t k = set.size();
  std::size_t n = batch.dim(0);
  if (choices) choices->assign(n, k);
  if (k == 0) return batch;
  Tensor out = batch;
  std::size_t per = detail::sample_size(batch);
  Rng pick = Rng::stream(seed, "mix-choice");
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t choice = pick.below(k + 1);
    if (choices) (*choices)[b] = choice;
    if (choice == k) continue;
    Tensor one = apply_corruption(batch.slice_rows(b, b + 1), set[choice], seed, b);
    std::copy(one.data().begin(), one.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  return out;
}

enum class DistributionRole { train, test };

/// A data distribution: the base split seen through a set of corruptions.
/// Its expected loss is the mean over its choices: each corruption, plus the
/// clean data when `include_clean` is set or the set is empty.
struct DistributionSpec {
  std::string name;
  DistributionRole role = DistributionRole::test;
  std::vector<Corruption> corruptions;
  bool include_clean = false;

  std::size_t choices() const { return corruptions.size() + ((include_clean || corruptions.empty()) ? 1 : 0); }
};

/// Train/test distributions with mutually exclusive corruption families.
struct DistributionPair {
  DistributionSpec train;
  DistributionSpec test;

  static DistributionPair make(std::vector<Corruption> train_set, std::vector<Corruption> test_set) {
    for (const auto& a : train_set) {
      a.check();
      for (const auto& b : test_set)
        if (a.kind == b.kind) {
          throw InvalidArgument("distribution pair: corruption '" + std::string(corruption_name(a.kind)) +
                                "' appears in both train and test sets");
        }
    }
    for (const auto& b : test_set) b.check();
    DistributionPair p;
    p.train = {"train-dist", DistributionRole::train, std::move(train_set), true};
    p.test = {"test-dist", DistributionRole::test, std::move(test_set), false};
    return p;
  }
};

}  // namespace prunelab
