#pragma once

// Declarative experiment description and its JSON form. Parsing is strict:
// unknown fields and wrong types are reported with the offending path.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "prunelab/corruption.hpp"
#include "prunelab/data.hpp"
#include "prunelab/error.hpp"
#include "prunelab/evaluation.hpp"
#include "prunelab/metrics.hpp"
#include "prunelab/pipeline.hpp"
#include "prunelab/pruning.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

using Json = nlohmann::json;

struct DatasetConfig {
  std::string kind = "textured-patches-8x8";
  std::size_t samples = 4000;
  std::size_t classes = 4;
  std::uint64_t seed = 7;
  SyntheticOptions options;
  std::string path;  // load a PDAT file instead of generating

  friend bool operator==(const DatasetConfig& a, const DatasetConfig& b) {
    const auto &x = a.options, &y = b.options;
    return a.kind == b.kind && a.samples == b.samples && a.classes == b.classes && a.seed == b.seed &&
           a.path == b.path && x.dims == y.dims && x.separation == y.separation && x.ring_noise == y.ring_noise &&
           x.texture_noise == y.texture_noise && x.train_fraction == y.train_fraction &&
           x.val_fraction == y.val_fraction;
  }
};

struct MetricToggles {
  bool potential = true;
  bool excess = true;
  bool similarity = false;
  bool backselect = false;
  bool robust_retrain = false;
  friend bool operator==(const MetricToggles&, const MetricToggles&) = default;
};

struct EvaluationConfig {
  std::size_t repetitions = 3;  // draws per random corruption
  double delta = 0.005;
  std::vector<double> deltas = default_delta_grid();
  std::size_t bootstrap_resamples = 1000;
  std::vector<double> noise_eps = {0.0, 0.25, 0.5, 0.75, 1.0};
  friend bool operator==(const EvaluationConfig&, const EvaluationConfig&) = default;
};

struct SimilarityConfig {
  std::vector<double> eps = default_similarity_grid();
  std::size_t repetitions = 5;
  std::size_t samples = 0;  // 0 = whole test split
  std::size_t child_cycle = 2;
  friend bool operator==(const SimilarityConfig&, const SimilarityConfig&) = default;
};

struct BackSelectConfig {
  std::size_t inputs = 100;
  double sparsity = 0.9;
  std::size_t child_cycle = 2;
  friend bool operator==(const BackSelectConfig&, const BackSelectConfig&) = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetConfig dataset;
  NetworkSpec network;
  std::vector<PruneMethod> methods;
  PruneSchedule schedule;
  std::vector<std::uint64_t> seeds;
  std::vector<Corruption> train_corruptions;
  std::vector<Corruption> test_corruptions;
  EvaluationConfig evaluation;
  MetricToggles metrics;
  SimilarityConfig similarity;
  BackSelectConfig backselect;
  std::string output = "runs";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

template <class T>
T convert(const Json& j, const std::string& path) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw ConfigError(path, "expected a boolean");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) throw ConfigError(path, "expected a string");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) throw ConfigError(path, "expected a number");
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!j.is_number_unsigned()) throw ConfigError(path, "expected a non-negative integer");
  } else {
    static_assert(std::is_integral_v<T>);
    if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
  }
  return j.get<T>();
}

template <class T>
std::vector<T> convert_list(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(convert<T>(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

// Reader over one JSON object that remembers which keys were consumed.
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string path(const std::string& key) const { return join_path(path_, key); }

  const Json* find(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.push_back(key);
    return &*it;
  }

  const Json& require(const std::string& key) {
    const Json* v = find(key);
    if (!v) throw ConfigError(path(key), "missing required field");
    return *v;
  }

  template <class T>
  void read(const std::string& key, T& target) {
    if (const Json* v = find(key)) target = convert<T>(*v, path(key));
  }
  template <class T>
  void read_list(const std::string& key, std::vector<T>& target) {
    if (const Json* v = find(key)) target = convert_list<T>(*v, path(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(used_.begin(), used_.end(), it.key()) == used_.end()) {
        throw ConfigError(path(it.key()), "unknown field");
      }
  }

 private:
  const Json& j_;
  std::string path_;
  std::vector<std::string> used_;
};

inline LayerSpec parse_layer(const Json& j, const std::string& path) {
  Fields f(j, path);
  std::string type = convert<std::string>(f.require("type"), f.path("type"));
  LayerSpec l;
  if (type == "dense") {
    l.kind = LayerKind::dense;
    l.in = convert<std::uint64_t>(f.require("in"), f.path("in"));
    l.out = convert<std::uint64_t>(f.require("out"), f.path("out"));
  } else if (type == "conv") {
    l.kind = LayerKind::conv2d;
    l.in = convert<std::uint64_t>(f.require("in"), f.path("in"));
    l.out = convert<std::uint64_t>(f.require("out"), f.path("out"));
    l.kernel = convert<std::uint64_t>(f.require("kernel"), f.path("kernel"));
    std::string pad = "same";
    f.read("padding", pad);
    if (pad == "same") {
      l.padding = Padding::same;
    } else if (pad == "valid") {
      l.padding = Padding::valid;
    } else {
      throw ConfigError(f.path("padding"), "expected 'same' or 'valid'");
    }
  } else if (type == "relu") {
    l.kind = LayerKind::relu;
  } else if (type == "flatten") {
    l.kind = LayerKind::flatten;
  } else {
    throw ConfigError(f.path("type"), "unknown layer type '" + type + "'");
  }
  f.finish();
  return l;
}

inline Json layer_json(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::dense: return {{"type", "dense"}, {"in", l.in}, {"out", l.out}};
    case LayerKind::conv2d:
      return {{"type", "conv"},
              {"in", l.in},
              {"out", l.out},
              {"kernel", l.kernel},
              {"padding", l.padding == Padding::same ? "same" : "valid"}};
    case LayerKind::relu: return {{"type", "relu"}};
    case LayerKind::flatten: return {{"type", "flatten"}};
  }
  return {};
}

inline Corruption parse_corruption_entry(const Json& j, const std::string& path) {
  Fields f(j, path);
  Corruption c;
  std::string kind = convert<std::string>(f.require("kind"), f.path("kind"));
  try {
    c.kind = parse_corruption(kind);
  } catch (const InvalidArgument& e) {
    throw ConfigError(f.path("kind"), e.what());
  }
  f.read("severity", c.severity);
  if (const Json* v = f.find("value")) c.value = convert<double>(*v, f.path("value"));
  f.finish();
  try {
    c.check();
  } catch (const InvalidArgument& e) {
    throw ConfigError(path, e.what());
  }
  return c;
}

inline Json corruption_json(const Corruption& c) {
  Json j = {{"kind", std::string(corruption_name(c.kind))}, {"severity", c.severity}};
  if (c.value) j["value"] = *c.value;
  return j;
}

inline std::vector<Corruption> parse_corruption_list(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array");
  std::vector<Corruption> out;
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(parse_corruption_entry(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const Json& root) {
  using detail::Fields;
  ExperimentConfig c;
  Fields f(root, "");
  f.read("name", c.name);
  f.read("output", c.output);

  {
    Fields d(f.require("dataset"), "dataset");
    d.read("kind", c.dataset.kind);
    d.read("samples", c.dataset.samples);
    d.read("classes", c.dataset.classes);
    d.read("seed", c.dataset.seed);
    d.read("path", c.dataset.path);
    auto& o = c.dataset.options;
    d.read("dims", o.dims);
    d.read("separation", o.separation);
    d.read("ring_noise", o.ring_noise);
    d.read("texture_noise", o.texture_noise);
    d.read("train_fraction", o.train_fraction);
    d.read("val_fraction", o.val_fraction);
    d.finish();
    if (c.dataset.path.empty()) {
      try {
        parse_synthetic(c.dataset.kind);
      } catch (const InvalidArgument& e) {
        throw ConfigError("dataset.kind", e.what());
      }
    }
  }

  {
    Fields n(f.require("network"), "network");
    std::vector<std::uint64_t> input;
    n.read_list("input", input);
    if (input.empty()) throw ConfigError("network.input", "expected a non-empty shape");
    c.network.input.assign(input.begin(), input.end());
    c.network.classes = detail::convert<std::uint64_t>(n.require("classes"), "network.classes");
    const Json& layers = n.require("layers");
    if (!layers.is_array() || layers.empty()) throw ConfigError("network.layers", "expected a non-empty array");
    for (std::size_t i = 0; i < layers.size(); ++i)
      c.network.layers.push_back(detail::parse_layer(layers[i], "network.layers[" + std::to_string(i) + "]"));
    n.finish();
  }

  {
    const Json& ms = f.require("methods");
    if (!ms.is_array() || ms.empty()) throw ConfigError("methods", "expected a non-empty array");
    for (std::size_t i = 0; i < ms.size(); ++i) {
      std::string path = "methods[" + std::to_string(i) + "]";
      Fields m(ms[i], path);
      PruneMethod pm;
      std::string crit = detail::convert<std::string>(m.require("criterion"), m.path("criterion"));
      try {
        pm.criterion = parse_criterion(crit);
      } catch (const InvalidArgument& e) {
        throw ConfigError(m.path("criterion"), e.what());
      }
      m.read("sample_size", pm.sample_size);
      if (pm.sample_size == 0) throw ConfigError(m.path("sample_size"), "must be positive");
      m.finish();
      c.methods.push_back(pm);
    }
  }

  if (const Json* sj = f.find("schedule")) {
    Fields s(*sj, "schedule");
    s.read("n_cycles", c.schedule.n_cycles);
    s.read("r_prune", c.schedule.r_prune);
    if (!(c.schedule.r_prune > 0.0 && c.schedule.r_prune < 1.0)) {
      throw ConfigError("schedule.r_prune", "must lie in (0, 1)");
    }
    if (const Json* tj = s.find("train")) {
      Fields t(*tj, "schedule.train");
      auto& tc = c.schedule.train;
      t.read("epochs", tc.epochs);
      t.read("batch_size", tc.batch_size);
      t.read("lr", tc.lr);
      t.read("momentum", tc.momentum);
      t.read("nesterov", tc.nesterov);
      t.read("weight_decay", tc.weight_decay);
      t.read("warmup_epochs", tc.warmup_epochs);
      t.read_list("milestones", tc.milestones);
      t.read("decay", tc.decay);
      t.finish();
      if (tc.batch_size == 0) throw ConfigError("schedule.train.batch_size", "must be positive");
    }
    s.finish();
  }

  f.read_list("seeds", c.seeds);
  if (c.seeds.empty()) throw ConfigError("seeds", "seed list must be non-empty");

  if (const Json* dj = f.find("distributions")) {
    Fields d(*dj, "distributions");
    if (const Json* t = d.find("train")) c.train_corruptions = detail::parse_corruption_list(*t, "distributions.train");
    if (const Json* t = d.find("test")) c.test_corruptions = detail::parse_corruption_list(*t, "distributions.test");
    d.finish();
    try {
      DistributionPair::make(c.train_corruptions, c.test_corruptions);
    } catch (const InvalidArgument& e) {
      throw ConfigError("distributions", e.what());
    }
  }

  if (const Json* ej = f.find("evaluation")) {
    Fields e(*ej, "evaluation");
    e.read("repetitions", c.evaluation.repetitions);
    e.read("delta", c.evaluation.delta);
    e.read_list("deltas", c.evaluation.deltas);
    e.read("bootstrap_resamples", c.evaluation.bootstrap_resamples);
    e.read_list("noise_eps", c.evaluation.noise_eps);
    e.finish();
    if (c.evaluation.repetitions == 0) throw ConfigError("evaluation.repetitions", "must be positive");
    if (c.evaluation.bootstrap_resamples < 100) throw ConfigError("evaluation.bootstrap_resamples", "must be >= 100");
    for (double d : c.evaluation.deltas)
      if (!(d >= 0.0)) throw ConfigError("evaluation.deltas", "values must be >= 0");
    for (double v : c.evaluation.noise_eps)
      if (!(v >= 0.0)) throw ConfigError("evaluation.noise_eps", "values must be >= 0");
  }

  if (const Json* mj = f.find("metrics")) {
    Fields m(*mj, "metrics");
    m.read("potential", c.metrics.potential);
    m.read("excess", c.metrics.excess);
    m.read("similarity", c.metrics.similarity);
    m.read("backselect", c.metrics.backselect);
    m.read("robust_retrain", c.metrics.robust_retrain);
    m.finish();
  }

  if (const Json* sj = f.find("similarity")) {
    Fields s(*sj, "similarity");
    s.read_list("eps", c.similarity.eps);
    s.read("repetitions", c.similarity.repetitions);
    s.read("samples", c.similarity.samples);
    s.read("child_cycle", c.similarity.child_cycle);
    s.finish();
    if (c.similarity.repetitions == 0) throw ConfigError("similarity.repetitions", "must be positive");
  }

  if (const Json* bj = f.find("backselect")) {
    Fields b(*bj, "backselect");
    b.read("inputs", c.backselect.inputs);
    b.read("sparsity", c.backselect.sparsity);
    b.read("child_cycle", c.backselect.child_cycle);
    b.finish();
    if (!(c.backselect.sparsity >= 0.0 && c.backselect.sparsity <= 1.0)) {
      throw ConfigError("backselect.sparsity", "must lie in [0, 1]");
    }
  }
  f.finish();

  if (c.metrics.excess && (c.train_corruptions.empty() && c.test_corruptions.empty())) {
    throw ConfigError("distributions", "excess-error evaluation needs a test corruption set");
  }
  if (c.metrics.robust_retrain && c.train_corruptions.empty()) {
    throw ConfigError("distributions.train", "robust retraining needs a train corruption set");
  }
  for (std::size_t cycle : {c.similarity.child_cycle, c.backselect.child_cycle}) {
    bool used = (cycle == c.similarity.child_cycle && c.metrics.similarity) ||
                (cycle == c.backselect.child_cycle && c.metrics.backselect);
    if (used && (cycle == 0 || cycle > c.schedule.n_cycles)) {
      throw ConfigError(cycle == c.similarity.child_cycle ? "similarity.child_cycle" : "backselect.child_cycle",
                        "must name a pruned cycle in 1..n_cycles");
    }
  }
  return c;
}

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["name"] = c.name;
  j["output"] = c.output;
  const auto& o = c.dataset.options;
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"samples", c.dataset.samples},
                  {"classes", c.dataset.classes},
                  {"seed", c.dataset.seed},
                  {"path", c.dataset.path},
                  {"dims", o.dims},
                  {"separation", o.separation},
                  {"ring_noise", o.ring_noise},
                  {"texture_noise", o.texture_noise},
                  {"train_fraction", o.train_fraction},
                  {"val_fraction", o.val_fraction}};
  Json layers = Json::array();
  for (const auto& l : c.network.layers) layers.push_back(detail::layer_json(l));
  j["network"] = {{"input", c.network.input}, {"classes", c.network.classes}, {"layers", layers}};
  Json methods = Json::array();
  for (const auto& m : c.methods) methods.push_back({{"criterion", m.name()}, {"sample_size", m.sample_size}});
  j["methods"] = methods;
  const auto& t = c.schedule.train;
  j["schedule"] = {{"n_cycles", c.schedule.n_cycles},
                   {"r_prune", c.schedule.r_prune},
                   {"train",
                    {{"epochs", t.epochs},
                     {"batch_size", t.batch_size},
                     {"lr", t.lr},
                     {"momentum", t.momentum},
                     {"nesterov", t.nesterov},
                     {"weight_decay", t.weight_decay},
                     {"warmup_epochs", t.warmup_epochs},
                     {"milestones", t.milestones},
                     {"decay", t.decay}}}};
  j["seeds"] = c.seeds;
  Json train = Json::array(), test = Json::array();
  for (const auto& x : c.train_corruptions) train.push_back(detail::corruption_json(x));
  for (const auto& x : c.test_corruptions) test.push_back(detail::corruption_json(x));
  j["distributions"] = {{"train", train}, {"test", test}};
  j["evaluation"] = {{"repetitions", c.evaluation.repetitions},
                     {"delta", c.evaluation.delta},
                     {"deltas", c.evaluation.deltas},
                     {"bootstrap_resamples", c.evaluation.bootstrap_resamples},
                     {"noise_eps", c.evaluation.noise_eps}};
  j["metrics"] = {{"potential", c.metrics.potential},
                  {"excess", c.metrics.excess},
                  {"similarity", c.metrics.similarity},
                  {"backselect", c.metrics.backselect},
                  {"robust_retrain", c.metrics.robust_retrain}};
  j["similarity"] = {{"eps", c.similarity.eps},
                     {"repetitions", c.similarity.repetitions},
                     {"samples", c.similarity.samples},
                     {"child_cycle", c.similarity.child_cycle}};
  j["backselect"] = {{"inputs", c.backselect.inputs},
                     {"sparsity", c.backselect.sparsity},
                     {"child_cycle", c.backselect.child_cycle}};
  return j;
}

inline ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Hash of everything that affects a single seed's results; seeds and the
/// output location are excluded so runs with different seed lists share a
/// directory.
inline std::string config_hash(const ExperimentConfig& c) {
  Json j = config_to_json(c);
  j.erase("seeds");
  j.erase("output");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace prunelab
