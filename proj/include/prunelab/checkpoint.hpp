#pragma once

// Checkpoint layout (little-endian):
//
//   "PLAB"  u32 version  u64 seed  u32 classes
//   u32 input-rank  u32 dims...
//   u32 layer-count, per layer: u8 kind  u8 padding  u32 in  u32 out  u32 kernel
//   per parameterized layer:
//     u8 granularity
//     f64 weights[out * fan]   f64 biases[out]
//     packed mask bits, LSB first, ceil(weights / 8) bytes

#include <cstdint>
#include <string>
#include <vector>

#include "prunelab/binary_io.hpp"
#include "prunelab/network.hpp"

namespace prunelab {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const MaskedNetwork& net) {
  ByteWriter w;
  w.bytes("PLAB");
  w.u32(kCheckpointVersion);
  w.u64(net.seed());
  w.u32(static_cast<std::uint32_t>(net.classes()));
  w.u32(static_cast<std::uint32_t>(net.input_shape().size()));
  for (auto d : net.input_shape()) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.u8(static_cast<std::uint8_t>(l.padding));
    w.u32(static_cast<std::uint32_t>(l.in));
    w.u32(static_cast<std::uint32_t>(l.out));
    w.u32(static_cast<std::uint32_t>(l.kernel));
  }
  for (const auto& p : net.params()) {
    w.u8(static_cast<std::uint8_t>(p.granularity()));
    for (double v : p.weights().data()) w.f64(v);
    for (double v : p.biases().data()) w.f64(v);
    const Tensor& m = p.mask();
    for (std::size_t i = 0; i < m.size(); i += 8) {
      std::uint8_t byte = 0;
      for (std::size_t b = 0; b < 8 && i + b < m.size(); ++b)
        if (m[i + b] != 0.0) byte |= static_cast<std::uint8_t>(1u << b);
      w.u8(byte);
    }
  }
  return w.take();
}

/// Decodes a checkpoint. Any inconsistency throws `FormatError` and no
/// network is produced.
inline MaskedNetwork decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "checkpoint");
  r.expect_magic("PLAB");
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  std::uint64_t seed = r.u64();
  std::size_t classes = r.u32();
  std::uint32_t rank = r.u32();
  if (rank > 8) throw FormatError("checkpoint: implausible input rank");
  Shape input;
  for (std::uint32_t i = 0; i < rank; ++i) input.push_back(r.u32());
  std::uint32_t nlayers = r.u32();
  r.need(static_cast<std::uint64_t>(nlayers) * 14);
  std::vector<LayerSpec> layers;
  for (std::uint32_t i = 0; i < nlayers; ++i) {
    LayerSpec l;
    std::uint8_t kind = r.u8();
    std::uint8_t pad = r.u8();
    if (kind > 3 || pad > 1) throw FormatError("checkpoint: bad layer record " + std::to_string(i));
    l.kind = static_cast<LayerKind>(kind);
    l.padding = static_cast<Padding>(pad);
    l.in = r.u32();
    l.out = r.u32();
    l.kernel = r.u32();
    layers.push_back(l);
  }
  std::vector<MaskedParameter> params;
  for (const auto& l : layers) {
    if (!l.parameterized()) continue;
    std::uint8_t g = r.u8();
    if (g > 1) throw FormatError("checkpoint: bad granularity tag");
    Shape ws = l.weight_shape();
    std::size_t n = shape_size(ws);
    r.need(static_cast<std::uint64_t>(n + l.out) * 8 + (n + 7) / 8);
    Tensor w(ws), b(Shape{l.out}), m(ws);
    for (auto& v : w.data()) v = r.f64();
    for (auto& v : b.data()) v = r.f64();
    for (std::size_t i = 0; i < n; i += 8) {
      std::uint8_t byte = r.u8();
      for (std::size_t k = 0; k < 8 && i + k < n; ++k) m[i + k] = (byte >> k) & 1u ? 1.0 : 0.0;
    }
    MaskedParameter p(std::move(w), std::move(b));
    try {
      p.set_mask(std::move(m), static_cast<Granularity>(g));
    } catch (const Error& e) {
      throw FormatError(std::string("checkpoint: ") + e.what());
    }
    params.push_back(std::move(p));
  }
  r.expect_end();
  try {
    return restore_network(std::move(input), std::move(layers), classes, seed, std::move(params));
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const MaskedNetwork& net, const std::string& path) {
  write_file(path, encode_checkpoint(net));
}

inline MaskedNetwork load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace prunelab
