#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "prunelab/binary_io.hpp"
#include "prunelab/error.hpp"
#include "prunelab/rng.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

enum class SyntheticKind : std::uint32_t { gaussian_clusters = 0, concentric_rings = 1, textured_patches = 2 };

inline std::string_view synthetic_name(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::gaussian_clusters: return "gaussian-clusters";
    case SyntheticKind::concentric_rings: return "concentric-rings";
    case SyntheticKind::textured_patches: return "textured-patches-8x8";
  }
  return "?";
}

inline SyntheticKind parse_synthetic(std::string_view s) {
  for (auto k : {SyntheticKind::gaussian_clusters, SyntheticKind::concentric_rings, SyntheticKind::textured_patches})
    if (synthetic_name(k) == s) return k;
  throw InvalidArgument("unknown dataset kind '" + std::string(s) + "'");
}

struct Split {
  Tensor inputs;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

/// Generator knobs. Defaults give the reference desk task.
struct SyntheticOptions {
  std::size_t dims = 2;            // gaussian-clusters feature count
  double separation = 10.0;        // gaussian-clusters: adjacent centre distance, in sigmas
  double ring_noise = 0.15;        // concentric-rings radial sd
  double texture_noise = 0.3;      // textured-patches per-pixel sd
  double train_fraction = 0.6;
  double val_fraction = 0.2;
};

struct Dataset {
  SyntheticKind kind = SyntheticKind::gaussian_clusters;
  std::uint64_t seed = 0;
  std::size_t classes = 0;
  Shape sample_shape;
  Split train, val, test;
  // Per-feature affine normalization fitted on the raw train split.
  std::vector<double> norm_mean, norm_std;

  std::size_t size() const { return train.size() + val.size() + test.size(); }
  std::size_t features() const { return shape_size(sample_shape); }
};

namespace detail {

inline void draw_sample(SyntheticKind kind, int label, std::size_t classes, const SyntheticOptions& o,
                        Rng& rng, double* out) {
  switch (kind) {
    case SyntheticKind::gaussian_clusters: {
      double radius = classes == 2 ? o.separation / 2.0
                                   : o.separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(classes)));
      double ang = 2.0 * std::numbers::pi * label / static_cast<double>(classes);
      for (std::size_t d = 0; d < o.dims; ++d) out[d] = rng.normal();
      out[0] += radius * std::cos(ang);
      if (o.dims > 1) out[1] += radius * std::sin(ang);
      break;
    }
    case SyntheticKind::concentric_rings: {
      double r = (label + 1) + rng.normal(0.0, o.ring_noise);
      double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
      out[0] = r * std::cos(ang);
      out[1] = r * std::sin(ang);
      break;
    }
    case SyntheticKind::textured_patches: {
      // Grating whose spatial frequency (cycles per patch) encodes the class.
      double freq = 1.0 + label;
      double theta = rng.uniform(0.0, std::numbers::pi);
      double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      double amp = rng.uniform(0.6, 1.4);
      double c = std::cos(theta), s = std::sin(theta);
      for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
          double u = (c * static_cast<double>(j) + s * static_cast<double>(i)) / 8.0;
          out[i * 8 + j] = amp * std::sin(2.0 * std::numbers::pi * freq * u + phase) +
                           rng.normal(0.0, o.texture_noise);
        }
      }
      break;
    }
  }
}

}  // namespace detail

/// Reproducible labeled dataset, class-balanced, split train/val/test and
/// normalized with train-split statistics.
inline Dataset make_synthetic(SyntheticKind kind, std::size_t n, std::size_t classes, std::uint64_t seed,
                              const SyntheticOptions& opts = {}) {
  if (classes < 2) throw InvalidArgument("make_synthetic: need at least 2 classes");
  if (n < 10 * classes) {
    throw InvalidArgument("make_synthetic: n=" + std::to_string(n) + " < 10 x classes");
  }
  if (kind == SyntheticKind::textured_patches && classes > 4) {
    throw InvalidArgument("make_synthetic: 8x8 textures resolve at most 4 frequencies");
  }
  if (kind == SyntheticKind::gaussian_clusters && opts.dims < 2) {
    throw InvalidArgument("make_synthetic: gaussian-clusters needs dims >= 2");
  }
  Dataset ds;
  ds.kind = kind;
  ds.seed = seed;
  ds.classes = classes;
  switch (kind) {
    case SyntheticKind::gaussian_clusters: ds.sample_shape = {opts.dims}; break;
    case SyntheticKind::concentric_rings: ds.sample_shape = {2}; break;
    case SyntheticKind::textured_patches: ds.sample_shape = {1, 8, 8}; break;
  }
  std::size_t f = ds.features();

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  Rng order = Rng::stream(seed, "data-order");
  order.shuffle(labels.begin(), labels.end());

  Rng gen = Rng::stream(seed, "data-gen");
  std::vector<double> raw(n * f);
  for (std::size_t i = 0; i < n; ++i) detail::draw_sample(kind, labels[i], classes, opts, gen, raw.data() + i * f);

  auto n_train = static_cast<std::size_t>(std::floor(opts.train_fraction * static_cast<double>(n)));
  auto n_val = static_cast<std::size_t>(std::floor(opts.val_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train + n_val >= n) throw InvalidArgument("make_synthetic: split fractions leave a split empty");

  ds.norm_mean.assign(f, 0.0);
  ds.norm_std.assign(f, 0.0);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t j = 0; j < f; ++j) ds.norm_mean[j] += raw[i * f + j];
  for (auto& m : ds.norm_mean) m /= static_cast<double>(n_train);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t j = 0; j < f; ++j) {
      double d = raw[i * f + j] - ds.norm_mean[j];
      ds.norm_std[j] += d * d;
    }
  for (auto& s : ds.norm_std) s = std::max(std::sqrt(s / static_cast<double>(n_train)), 1e-8);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) raw[i * f + j] = (raw[i * f + j] - ds.norm_mean[j]) / ds.norm_std[j];

  auto make_split = [&](std::size_t begin, std::size_t end) {
    Split s;
    Shape shape{end - begin};
    shape.insert(shape.end(), ds.sample_shape.begin(), ds.sample_shape.end());
    s.inputs = Tensor(shape, std::vector<double>(raw.begin() + begin * f, raw.begin() + end * f));
    s.labels.assign(labels.begin() + begin, labels.begin() + end);
    return s;
  };
  ds.train = make_split(0, n_train);
  ds.val = make_split(n_train, n_train + n_val);
  ds.test = make_split(n_train + n_val, n);
  return ds;
}

// ---------------------------------------------------------------------------
// "PDAT" file: magic, u32 version, u32 kind, u64 seed, u32 classes,
// u32 rank, u32 dims..., u64 train/val/test counts, f64 mean[f], f64 std[f],
// f64 inputs (train, val, test), u32 labels (train, val, test).

inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ByteWriter w;
  w.bytes("PDAT");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.kind));
  w.u64(ds.seed);
  w.u32(static_cast<std::uint32_t>(ds.classes));
  w.u32(static_cast<std::uint32_t>(ds.sample_shape.size()));
  for (auto d : ds.sample_shape) w.u32(static_cast<std::uint32_t>(d));
  for (const Split* s : {&ds.train, &ds.val, &ds.test}) w.u64(s->size());
  for (double v : ds.norm_mean) w.f64(v);
  for (double v : ds.norm_std) w.f64(v);
  for (const Split* s : {&ds.train, &ds.val, &ds.test})
    for (double v : s->inputs.data()) w.f64(v);
  for (const Split* s : {&ds.train, &ds.val, &ds.test})
    for (int y : s->labels) w.u32(static_cast<std::uint32_t>(y));
  return w.take();
}

inline Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "dataset");
  r.expect_magic("PDAT");
  if (std::uint32_t v = r.u32(); v != kDatasetVersion) {
    throw FormatError("dataset: unsupported version " + std::to_string(v));
  }
  Dataset ds;
  std::uint32_t kind = r.u32();
  if (kind > 2) throw FormatError("dataset: unknown generator kind");
  ds.kind = static_cast<SyntheticKind>(kind);
  ds.seed = r.u64();
  ds.classes = r.u32();
  std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError("dataset: implausible sample rank");
  for (std::uint32_t i = 0; i < rank; ++i) ds.sample_shape.push_back(r.u32());
  std::size_t f = ds.features();
  std::uint64_t counts[3] = {r.u64(), r.u64(), r.u64()};
  std::uint64_t total = counts[0] + counts[1] + counts[2];
  r.need(2 * f * 8 + total * f * 8 + total * 4);
  ds.norm_mean.resize(f);
  ds.norm_std.resize(f);
  for (auto& v : ds.norm_mean) v = r.f64();
  for (auto& v : ds.norm_std) v = r.f64();
  Split* splits[3] = {&ds.train, &ds.val, &ds.test};
  for (int s = 0; s < 3; ++s) {
    Shape shape{counts[s]};
    shape.insert(shape.end(), ds.sample_shape.begin(), ds.sample_shape.end());
    splits[s]->inputs = Tensor(shape);
    for (auto& v : splits[s]->inputs.data()) v = r.f64();
  }
  for (int s = 0; s < 3; ++s) {
    splits[s]->labels.resize(counts[s]);
    for (auto& y : splits[s]->labels) {
      y = static_cast<int>(r.u32());
      if (static_cast<std::size_t>(y) >= ds.classes) throw FormatError("dataset: label out of range");
    }
  }
  r.expect_end();
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) { write_file(path, encode_dataset(ds)); }
inline Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace prunelab
