#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prunelab/autograd.hpp"
#include "prunelab/error.hpp"
#include "prunelab/optim.hpp"
#include "prunelab/rng.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

enum class LayerKind : std::uint8_t { dense = 0, conv2d = 1, relu = 2, flatten = 3 };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;   // dense fan-in, conv in-channels
  std::size_t out = 0;  // dense fan-out, conv out-channels
  std::size_t kernel = 0;
  Padding padding = Padding::same;

  static LayerSpec dense(std::size_t fan_in, std::size_t fan_out) {
    return {LayerKind::dense, fan_in, fan_out, 0, Padding::same};
  }
  static LayerSpec conv(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                        Padding pad = Padding::same) {
    return {LayerKind::conv2d, in_ch, out_ch, k, pad};
  }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, Padding::same}; }
  static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 0, Padding::same}; }

  bool parameterized() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

  Shape weight_shape() const {
    if (kind == LayerKind::dense) return {out, in};
    if (kind == LayerKind::conv2d) return {out, in, kernel, kernel};
    return {};
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

enum class Granularity : std::uint8_t { per_weight = 0, per_output_unit = 1 };

/// Weights of one dense/conv layer with their binary prune mask.
///
/// The effective weight is always `weight * mask`. Each output unit (dense
/// row or conv filter) owns a contiguous slice of `unit_size()` entries. For
/// per-output-unit granularity the bias of a unit whose slice is fully masked
/// is masked as well, so the unit emits exactly zero.
class MaskedParameter {
 public:
  MaskedParameter() = default;
  MaskedParameter(Tensor weight, Tensor bias)
      : weight_(parameter(std::move(weight))),
        bias_(parameter(std::move(bias))),
        mask_(weight_.shape(), 1.0),
        bias_mask_(bias_.shape(), 1.0) {}

  MaskedParameter(const MaskedParameter& o)
      : weight_(parameter(o.weight_.value())),
        bias_(parameter(o.bias_.value())),
        mask_(o.mask_),
        bias_mask_(o.bias_mask_),
        granularity_(o.granularity_) {}
  MaskedParameter& operator=(const MaskedParameter& o) {
    if (this != &o) *this = MaskedParameter(o);
    return *this;
  }
  MaskedParameter(MaskedParameter&&) noexcept = default;
  MaskedParameter& operator=(MaskedParameter&&) noexcept = default;

  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }
  Tensor& weights() { return weight_.mutable_value(); }
  const Tensor& weights() const { return weight_.value(); }
  Tensor& biases() { return bias_.mutable_value(); }
  const Tensor& biases() const { return bias_.value(); }
  const Tensor& mask() const { return mask_; }
  const Tensor& bias_mask() const { return bias_mask_; }
  Granularity granularity() const { return granularity_; }

  std::size_t units() const { return weights().dim(0); }
  std::size_t unit_size() const { return units() ? weights().size() / units() : 0; }

  bool unit_alive(std::size_t unit) const {
    std::size_t n = unit_size();
    for (std::size_t i = unit * n; i < (unit + 1) * n; ++i)
      if (mask_[i] != 0.0) return true;
    return false;
  }

  std::size_t alive_units() const {
    std::size_t c = 0;
    for (std::size_t u = 0; u < units(); ++u) c += unit_alive(u) ? 1 : 0;
    return c;
  }

  std::size_t nonzero_mask() const {
    std::size_t c = 0;
    for (double v : mask_.data()) c += v != 0.0 ? 1 : 0;
    return c;
  }

  /// Replaces the mask; entries must be 0 or 1. Weights under zeros are
  /// cleared, so a masked entry holds exactly zero.
  void set_mask(Tensor mask, Granularity g) {
    if (mask.shape() != mask_.shape()) {
      throw ShapeError("set_mask: expected " + shape_str(mask_.shape()) + ", got " +
                       shape_str(mask.shape()));
    }
    for (double v : mask.data())
      if (v != 0.0 && v != 1.0) throw InvalidArgument("set_mask: entries must be 0 or 1");
    mask_ = std::move(mask);
    granularity_ = g;
    if (g == Granularity::per_output_unit) {
      std::size_t n = unit_size();
      for (std::size_t u = 0; u < units(); ++u) {
        bool alive = unit_alive(u);
        for (std::size_t i = u * n; i < (u + 1) * n; ++i) {
          if (mask_[i] != (alive ? mask_[u * n] : 0.0)) {
            throw InvalidArgument("set_mask: per-output-unit mask must be constant per unit");
          }
        }
      }
    }
    apply_mask();
  }

  void mask_unit(std::size_t unit) {
    Tensor m = mask_;
    std::size_t n = unit_size();
    for (std::size_t i = unit * n; i < (unit + 1) * n; ++i) m[i] = 0.0;
    set_mask(std::move(m), Granularity::per_output_unit);
  }

  /// Zeroes weights (and unit biases) under the mask. Idempotent.
  void apply_mask() {
    for (std::size_t u = 0; u < bias_mask_.size(); ++u) {
      bias_mask_[u] = (granularity_ == Granularity::per_output_unit && !unit_alive(u)) ? 0.0 : 1.0;
    }
    Tensor& w = weights();
    for (std::size_t i = 0; i < w.size(); ++i)
      if (mask_[i] == 0.0) w[i] = 0.0;
    Tensor& b = biases();
    for (std::size_t i = 0; i < b.size(); ++i)
      if (bias_mask_[i] == 0.0) b[i] = 0.0;
  }

  Var effective_weight() const { return mul(weight_, constant(mask_)); }
  Var effective_bias() const { return mul(bias_, constant(bias_mask_)); }

  void zero_grad() {
    weight_.zero_grad();
    bias_.zero_grad();
  }

 private:
  Var weight_;
  Var bias_;
  Tensor mask_;
  Tensor bias_mask_;
  Granularity granularity_ = Granularity::per_weight;
};

/// Layer stack with a masked parameter per dense/conv layer.
class MaskedNetwork {
 public:
  MaskedNetwork() = default;

  /// Builds the network and draws Kaiming-uniform weights (bound
  /// sqrt(6 / fan_in)) from the "init" stream of `seed`. Biases start at 0.
  MaskedNetwork(Shape input_shape, std::vector<LayerSpec> layers, std::size_t classes,
                std::uint64_t seed)
      : input_shape_(std::move(input_shape)), layers_(std::move(layers)), classes_(classes), seed_(seed) {
    validate();
    Rng rng = Rng::stream(seed, "init");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const LayerSpec& l = layers_[i];
      if (!l.parameterized()) continue;
      Tensor w(l.weight_shape());
      std::size_t fan_in = w.size() / l.out;
      double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : w.data()) v = rng.uniform(-bound, bound);
      params_.emplace_back(std::move(w), Tensor(Shape{l.out}));
      param_layer_.push_back(i);
    }
  }

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t classes() const { return classes_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<MaskedParameter>& params() { return params_; }
  const std::vector<MaskedParameter>& params() const { return params_; }
  /// Index into `layers()` of the k-th parameterized layer.
  std::size_t layer_of_param(std::size_t k) const { return param_layer_.at(k); }

  /// Per-sample shape entering each layer; entry `layers().size()` is the
  /// output shape.
  std::vector<Shape> activation_shapes() const {
    std::vector<Shape> shapes{input_shape_};
    for (const auto& l : layers_) shapes.push_back(next_shape(shapes.back(), l));
    return shapes;
  }

  /// Logits for a batch shaped [B, input_shape...]. Records a graph when grad
  /// mode is on.
  Var forward(const Tensor& batch) const {
    check_batch(batch);
    Var h = constant(batch);
    std::size_t k = 0;
    for (const auto& l : layers_) h = apply(l, h, k);
    return h;
  }

  /// Inference without graph recording.
  Tensor logits(const Tensor& batch) const {
    NoGradGuard guard;
    return forward(batch).value();
  }

  /// Inputs to every layer plus the final output: result[i] enters layer i.
  std::vector<Tensor> trace(const Tensor& batch) const {
    NoGradGuard guard;
    check_batch(batch);
    std::vector<Tensor> acts{batch};
    Var h = constant(batch);
    std::size_t k = 0;
    for (const auto& l : layers_) {
      h = apply(l, h, k);
      acts.push_back(h.value());
    }
    return acts;
  }

  std::vector<ParamRef> trainable() {
    std::vector<ParamRef> refs;
    for (auto& p : params_) {
      refs.push_back({p.weight(), &p.mask()});
      refs.push_back({p.bias(), &p.bias_mask()});
    }
    return refs;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t prunable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.weights().size();
    return n;
  }

  std::size_t unmasked_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.nonzero_mask();
    return n;
  }

  friend bool operator==(const MaskedNetwork& a, const MaskedNetwork& b) {
    if (a.input_shape_ != b.input_shape_ || a.layers_ != b.layers_ || a.classes_ != b.classes_ ||
        a.seed_ != b.seed_ || a.params_.size() != b.params_.size())
      return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      const auto& p = a.params_[i];
      const auto& q = b.params_[i];
      if (!(p.weights() == q.weights()) || !(p.biases() == q.biases()) || !(p.mask() == q.mask()) ||
          p.granularity() != q.granularity())
        return false;
    }
    return true;
  }

 private:
  static Shape next_shape(const Shape& in, const LayerSpec& l) {
    auto fail = [&](const std::string& why) {
      throw ShapeError(std::string("network: ") + layer_kind_name(l.kind) + " layer " + why +
                       " (input " + shape_str(in) + ")");
    };
    switch (l.kind) {
      case LayerKind::dense:
        if (in.size() != 1 || in[0] != l.in) fail("expects fan-in " + std::to_string(l.in));
        if (l.out == 0) fail("has zero fan-out");
        return {l.out};
      case LayerKind::conv2d: {
        if (in.size() != 3 || in[0] != l.in) fail("expects " + std::to_string(l.in) + " channels");
        if (l.out == 0 || l.kernel == 0) fail("has empty kernel");
        if (l.padding == Padding::same) {
          if (l.kernel % 2 == 0) fail("needs an odd kernel for 'same' padding");
          return {l.out, in[1], in[2]};
        }
        if (l.kernel > in[1] || l.kernel > in[2]) fail("kernel exceeds input");
        return {l.out, in[1] - l.kernel + 1, in[2] - l.kernel + 1};
      }
      case LayerKind::relu: return in;
      case LayerKind::flatten: return {shape_size(in)};
    }
    return in;
  }

  void validate() const {
    if (classes_ < 2) throw InvalidArgument("network: need at least two classes");
    Shape s = input_shape_;
    for (const auto& l : layers_) s = next_shape(s, l);
    if (s != Shape{classes_}) {
      throw ShapeError("network: output shape " + shape_str(s) + " does not match " +
                       std::to_string(classes_) + " classes");
    }
  }

  void check_batch(const Tensor& batch) const {
    Shape want{batch.rank() ? batch.dim(0) : 0};
    want.insert(want.end(), input_shape_.begin(), input_shape_.end());
    if (batch.shape() != want) {
      throw ShapeError("network: batch shape " + shape_str(batch.shape()) +
                       " does not match input " + shape_str(input_shape_));
    }
  }

  Var apply(const LayerSpec& l, const Var& h, std::size_t& k) const {
    switch (l.kind) {
      case LayerKind::dense: {
        const auto& p = params_[k++];
        return add_bias(matmul(h, transpose(p.effective_weight())), p.effective_bias());
      }
      case LayerKind::conv2d: {
        const auto& p = params_[k++];
        return add_bias(conv2d(h, p.effective_weight(), l.padding), p.effective_bias());
      }
      case LayerKind::relu: return relu(h);
      case LayerKind::flatten: return flatten(h);
    }
    return h;
  }

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::size_t classes_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<MaskedParameter> params_;
  std::vector<std::size_t> param_layer_;

  friend MaskedNetwork restore_network(Shape, std::vector<LayerSpec>, std::size_t, std::uint64_t,
                                       std::vector<MaskedParameter>);
};

/// Assembles a network from already-decoded parameters (used by checkpoint
/// loading).
inline MaskedNetwork restore_network(Shape input_shape, std::vector<LayerSpec> layers,
                                     std::size_t classes, std::uint64_t seed,
                                     std::vector<MaskedParameter> params) {
  MaskedNetwork net;
  net.input_shape_ = std::move(input_shape);
  net.layers_ = std::move(layers);
  net.classes_ = classes;
  net.seed_ = seed;
  net.validate();
  for (std::size_t i = 0; i < net.layers_.size(); ++i)
    if (net.layers_[i].parameterized()) net.param_layer_.push_back(i);
  if (params.size() != net.param_layer_.size()) {
    throw ShapeError("network: expected " + std::to_string(net.param_layer_.size()) +
                     " parameter blocks, got " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const LayerSpec& l = net.layers_[net.param_layer_[k]];
    if (params[k].weights().shape() != l.weight_shape() || params[k].biases().size() != l.out) {
      throw ShapeError("network: parameter block " + std::to_string(k) + " has wrong shape");
    }
  }
  net.params_ = std::move(params);
  return net;
}

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

inline std::vector<std::size_t> predict(const MaskedNetwork& net, const Tensor& inputs,
                                        std::size_t chunk = 512) {
  std::size_t n = inputs.rank() ? inputs.dim(0) : 0;
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t b = 0; b < n; b += chunk) {
    Tensor logits = net.logits(inputs.slice_rows(b, std::min(n, b + chunk)));
    std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < logits.dim(0); ++r)
      out.push_back(argmax(logits.data().subspan(r * k, k)));
  }
  return out;
}

/// Fraction of samples whose argmax logit equals the label.
inline double accuracy(const MaskedNetwork& net, const Tensor& inputs, std::span<const int> labels) {
  if (labels.empty()) throw InvalidArgument("accuracy: empty dataset");
  if (inputs.dim(0) != labels.size()) throw ShapeError("accuracy: input/label count mismatch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= net.classes()) throw InvalidArgument("accuracy: label out of range");
  auto pred = predict(net, inputs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == static_cast<std::size_t>(labels[i]) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

/// 1 - ||c||_0 / ||theta||_0 over prunable weights (biases excluded).
inline double prune_ratio(const MaskedNetwork& net) {
  std::size_t total = net.prunable_count();
  if (total == 0) return 0.0;
  return 1.0 - static_cast<double>(net.unmasked_count()) / static_cast<double>(total);
}

/// Multiply-accumulate count of one forward pass of a single sample.
///
/// With `masked`, a weight counts only when it is unmasked and reads an
/// input that is alive. An output unit is dead when no counted weight feeds
/// it and its bias is masked; dead units propagate through relu/flatten so the
/// next layer's fan-in from them is dropped.
inline std::size_t mac_count(const MaskedNetwork& net, bool masked) {
  auto shapes = net.activation_shapes();
  // Liveness per input channel (image input) or feature (vector input).
  std::vector<bool> alive(shapes[0].size() == 3 ? shapes[0][0] : shape_size(shapes[0]), true);
  std::size_t macs = 0;
  std::size_t k = 0;
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    const LayerSpec& l = net.layers()[li];
    const Shape& out_shape = shapes[li + 1];
    switch (l.kind) {
      case LayerKind::dense:
      case LayerKind::conv2d: {
        const auto& p = net.params()[k++];
        std::size_t positions = l.kind == LayerKind::conv2d ? out_shape[1] * out_shape[2] : 1;
        std::size_t per_in = l.kind == LayerKind::conv2d ? l.kernel * l.kernel : 1;
        std::vector<bool> next(l.out, false);
        for (std::size_t o = 0; o < l.out; ++o) {
          std::size_t live = 0;
          for (std::size_t i = 0; i < l.in; ++i) {
            for (std::size_t t = 0; t < per_in; ++t) {
              std::size_t idx = (o * l.in + i) * per_in + t;
              if (!masked || (p.mask()[idx] != 0.0 && alive[i])) ++live;
            }
          }
          macs += live * positions;
          next[o] = !masked || live > 0 || p.bias_mask()[o] != 0.0;
        }
        alive = std::move(next);
        break;
      }
      case LayerKind::relu: break;
      case LayerKind::flatten: {
        const Shape& in_shape = shapes[li];
        if (in_shape.size() == 3) {
          std::size_t plane = in_shape[1] * in_shape[2];
          std::vector<bool> flat(alive.size() * plane);
          for (std::size_t c = 0; c < alive.size(); ++c)
            for (std::size_t p = 0; p < plane; ++p) flat[c * plane + p] = alive[c];
          alive = std::move(flat);
        }
        break;
      }
    }
  }
  return macs;
}

/// 1 - masked MACs / unmasked MACs.
inline double flop_reduction(const MaskedNetwork& net) {
  std::size_t full = mac_count(net, false);
  if (full == 0) return 0.0;
  return 1.0 - static_cast<double>(mac_count(net, true)) / static_cast<double>(full);
}

}  // namespace prunelab
