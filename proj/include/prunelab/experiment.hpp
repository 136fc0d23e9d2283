#pragma once

// Experiment orchestration: per-seed prune-retrain runs with all enabled
// evaluations, the on-disk result layout, and the consolidated report.
//
// Layout: <root>/<config-hash>/config.json
//         <root>/<config-hash>/<seed>/{checkpoints,curves,metrics}/ + DONE
//         <root>/<config-hash>/report/

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "prunelab/checkpoint.hpp"
#include "prunelab/config.hpp"
#include "prunelab/corruption.hpp"
#include "prunelab/data.hpp"
#include "prunelab/evaluation.hpp"
#include "prunelab/metrics.hpp"
#include "prunelab/pipeline.hpp"

namespace prunelab {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputEnv = "PRUNELAB_OUT";

/// Shortest decimal that round-trips to the same double.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("not a number: '" + s + "'");
  return v;
}

/// Writes via a temporary file and rename, so readers never see a partial file.
inline void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : columns_(header.size()) { line(header); }

  template <class... Ts>
  Csv& row(const Ts&... cells) {
    return this->cells({cell(cells)...});
  }
  Csv& cells(const std::vector<std::string>& v) {
    if (v.size() != columns_) throw Error("csv row has the wrong number of cells");
    line(v);
    return *this;
  }
  const std::string& text() const { return text_; }

 private:
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(double v) { return fmt_double(v); }
  template <class T>
    requires std::is_integral_v<T>
  static std::string cell(T v) {
    return std::to_string(v);
  }

  void line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
  }

  std::size_t columns_;
  std::string text_;
};

/// Rows of a CSV file keyed by header name.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw FormatError("csv: missing column '" + name + "'");
  }
};

inline CsvTable read_csv(const fs::path& path) {
  CsvTable t;
  std::istringstream in(read_text(path));
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
      if (ch == ',') {
        out.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    out.push_back(cur);
    return out;
  };
  if (!std::getline(in, line)) throw FormatError("csv: empty file " + path.string());
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    t.rows.push_back(split(line));
    if (t.rows.back().size() != t.header.size()) throw FormatError("csv: ragged row in " + path.string());
  }
  return t;
}

inline fs::path output_root(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
  return cfg.output;
}

inline Dataset build_dataset(const DatasetConfig& d) {
  if (!d.path.empty()) return load_dataset(d.path);
  return make_synthetic(parse_synthetic(d.kind), d.samples, d.classes, d.seed, d.options);
}

/// A method as run: the criterion plus whether training mixes in the
/// train-distribution corruptions.
struct MethodVariant {
  PruneMethod method;
  bool robust = false;
  std::string name() const { return method.name() + (robust ? "+robust" : ""); }
};

inline std::vector<MethodVariant> method_variants(const ExperimentConfig& cfg) {
  std::vector<MethodVariant> out;
  for (const auto& m : cfg.methods) out.push_back({m, false});
  if (cfg.metrics.robust_retrain)
    for (const auto& m : cfg.methods) out.push_back({m, true});
  return out;
}

inline const char* kCleanDist = "clean";
inline const char* kTrainDist = "train-dist";
inline const char* kTestDist = "test-dist";

/// Every distribution the run evaluates: clean data, the uniform-noise
/// sweep, the train/test mixtures and each corruption on its own.
inline std::vector<DistributionSpec> evaluation_distributions(const ExperimentConfig& cfg) {
  std::vector<DistributionSpec> out;
  out.push_back({kCleanDist, DistributionRole::test, {}, true});
  for (double eps : cfg.evaluation.noise_eps) {
    if (eps == 0.0) continue;
    Corruption c{CorruptionKind::uniform_noise, 3, eps};
    out.push_back({c.name(), DistributionRole::test, {c}, false});
  }
  DistributionPair pair = DistributionPair::make(cfg.train_corruptions, cfg.test_corruptions);
  if (!cfg.train_corruptions.empty()) out.push_back(pair.train);
  if (!cfg.test_corruptions.empty()) out.push_back(pair.test);
  for (const auto* set : {&cfg.train_corruptions, &cfg.test_corruptions})
    for (const auto& c : *set) {
      DistributionRole role = set == &cfg.train_corruptions ? DistributionRole::train : DistributionRole::test;
      out.push_back({c.name(), role, {c}, false});
    }
  return out;
}

/// Distribution a variant was trained on, for excess error.
inline std::string train_distribution_of(const MethodVariant& v) { return v.robust ? kTrainDist : kCleanDist; }

/// Name of the noise distribution evaluated for eps (eps = 0 is clean data).
inline std::string noise_distribution(double eps) {
  if (eps == 0.0) return kCleanDist;
  return Corruption{CorruptionKind::uniform_noise, 3, eps}.name();
}

struct RunOptions {
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed_override;
  std::function<void(const std::string&)> log = [](const std::string& s) { std::cerr << s << '\n'; };
};

struct RunSummary {
  fs::path dir;  // <root>/<hash>
  std::vector<std::uint64_t> computed;
  std::vector<std::uint64_t> skipped;
  std::vector<std::string> failures;
};

namespace detail {

inline std::string seed_dir_name(std::uint64_t seed) { return std::to_string(seed); }

inline MaskedNetwork train_independent(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed) {
  MaskedNetwork net = cfg.network.build(Rng::stream(seed, "independent").next_u64());
  train(net, data.train, cfg.schedule.train, Rng::stream(seed, "independent-train").next_u64());
  return net;
}

inline Tensor similarity_sample(const ExperimentConfig& cfg, const Dataset& data) {
  std::size_t n = data.test.size();
  std::size_t k = cfg.similarity.samples == 0 ? n : std::min(n, cfg.similarity.samples);
  return data.test.inputs.slice_rows(0, k);
}

// One seed: every method variant, all evaluations, files, then DONE.
inline std::vector<std::string> run_seed(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed,
                                         const fs::path& dir, const RunOptions& opt) {
  auto start = std::chrono::steady_clock::now();
  std::vector<std::string> failures;
  Csv records({"method", "cycle", "ratio", "flop_reduction", "train_loss", "val_accuracy", "test_accuracy",
               "requested", "removed", "warnings"});
  Csv acc({"method", "cycle", "ratio", "distribution", "accuracy"});
  Csv sim({"method", "pair", "eps", "match", "match_std", "l2", "l2_std", "draws", "samples"});
  Csv heat({"method", "source", "evaluated", "confidence", "inputs", "sparsity"});

  auto dists = evaluation_distributions(cfg);
  std::vector<DistributionView> views;
  for (const auto& d : dists) views.push_back(materialize(data.test, d, eval_seed(seed, d), cfg.evaluation.repetitions));

  std::optional<MaskedNetwork> independent;
  if (cfg.metrics.similarity || cfg.metrics.backselect) independent = train_independent(cfg, data, seed);

  for (const auto& v : method_variants(cfg)) {
    std::span<const Corruption> augment;
    if (v.robust) augment = cfg.train_corruptions;
    PruneRetrainResult res;
    try {
      res = prune_retrain(cfg.network, seed, cfg.schedule, v.method, data, augment);
    } catch (const DivergenceError& e) {
      failures.push_back(v.name() + ": " + e.what());
      opt.log("[seed " + std::to_string(seed) + "] " + v.name() + " diverged: " + e.what());
      continue;
    }
    fs::create_directories(dir / "checkpoints");
    for (std::size_t c = 0; c < res.snapshots.size(); ++c)
      save_checkpoint(res.snapshots[c],
                      (dir / "checkpoints" / (v.name() + "-c" + std::to_string(c) + ".plab")).string());
    for (const auto& r : res.records) {
      std::string warn;
      for (const auto& w : r.warnings) warn += (warn.empty() ? "" : " | ") + w;
      for (char& ch : warn)
        if (ch == ',') ch = ';';
      records.row(v.name(), r.cycle, r.prune_ratio, r.flop_reduction, r.train_loss, r.val_accuracy,
                  r.test_accuracy, r.requested, r.removed, warn);
    }
    for (std::size_t d = 0; d < dists.size(); ++d)
      for (std::size_t c = 0; c < res.snapshots.size(); ++c)
        acc.row(v.name(), c, res.records[c].prune_ratio, dists[d].name,
                distribution_accuracy(res.snapshots[c], views[d]));

    if (cfg.metrics.similarity) {
      const auto& parent = res.snapshots.front();
      const auto& child = res.snapshots.at(cfg.similarity.child_cycle);
      Tensor sample = similarity_sample(cfg, data);
      std::uint64_t s = Rng::stream(seed, "similarity").next_u64();
      auto add = [&](const std::string& pair, const SimilarityReport& rep) {
        for (std::size_t i = 0; i < rep.eps.size(); ++i)
          sim.row(v.name(), pair, rep.eps[i], rep.match[i], rep.match_std[i], rep.l2[i], rep.l2_std[i],
                  rep.draws[i], rep.samples);
      };
      add("child", noise_similarity(parent, child, sample, cfg.similarity.eps, cfg.similarity.repetitions, s));
      add("independent",
          noise_similarity(parent, *independent, sample, cfg.similarity.eps, cfg.similarity.repetitions, s));
    }
    if (cfg.metrics.backselect) {
      std::size_t k = std::min(cfg.backselect.inputs, data.test.size());
      std::vector<NamedNetwork> nets = {{"parent", &res.snapshots.front()},
                                        {"child", &res.snapshots.at(cfg.backselect.child_cycle)},
                                        {"independent", &*independent}};
      std::vector<int> labels(data.test.labels.begin(), data.test.labels.begin() + static_cast<std::ptrdiff_t>(k));
      auto h = confidence_heatmap(nets, data.test.inputs.slice_rows(0, k), labels, cfg.backselect.sparsity);
      for (std::size_t a = 0; a < h.names.size(); ++a)
        for (std::size_t b = 0; b < h.names.size(); ++b)
          heat.row(v.name(), h.names[a], h.names[b], h.cells[a][b], h.inputs, h.sparsity);
    }
    opt.log("[seed " + std::to_string(seed) + "] " + v.name() + " done: final ratio " +
            fmt_double(res.records.back().prune_ratio) + ", test accuracy " +
            fmt_double(res.records.back().test_accuracy));
  }

  write_text_atomic(dir / "curves" / "records.csv", records.text());
  write_text_atomic(dir / "curves" / "accuracy.csv", acc.text());
  if (cfg.metrics.similarity) write_text_atomic(dir / "metrics" / "similarity.csv", sim.text());
  if (cfg.metrics.backselect) write_text_atomic(dir / "metrics" / "heatmap.csv", heat.text());
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  Json meta = {{"seed", seed},
               {"config_hash", config_hash(cfg)},
               {"version", kVersion},
               {"wall_clock_seconds", secs},
               {"failures", failures}};
  write_text_atomic(dir / "run.json", meta.dump(2) + "\n");
  write_text_atomic(dir / "DONE", "ok\n");
  return failures;
}

}  // namespace detail

struct ReportSummary {
  fs::path dir;
  std::vector<std::uint64_t> seeds;
  std::vector<PruneAccuracyCurve> curves;
  std::vector<PrunePotentialReport> potentials;  // every (method, distribution, delta)
  std::vector<ExcessErrorReport> excess;
  Json json;

  const PruneAccuracyCurve& curve(const std::string& method, const std::string& dist) const {
    for (const auto& c : curves)
      if (c.method == method && c.distribution == dist) return c;
    throw InvalidArgument("report: no curve for " + method + " on " + dist);
  }
  const PrunePotentialReport& potential(const std::string& method, const std::string& dist, double delta) const {
    for (const auto& p : potentials)
      if (p.method == method && p.distribution == dist && p.delta == delta) return p;
    throw InvalidArgument("report: no potential for " + method + " on " + dist);
  }
  const ExcessErrorReport& excess_for(const std::string& method) const {
    for (const auto& e : excess)
      if (e.method == method) return e;
    throw InvalidArgument("report: no excess-error report for " + method);
  }
};

inline ReportSummary report(const fs::path& dir);

/// Runs every (seed) job not already marked complete, then writes the report.
inline RunSummary run_experiment(ExperimentConfig cfg, const RunOptions& opt = {}) {
  if (opt.seed_override) cfg.seeds = {*opt.seed_override};
  RunSummary summary;
  summary.dir = output_root(cfg) / config_hash(cfg);
  fs::create_directories(summary.dir);
  fs::path cfg_path = summary.dir / "config.json";
  Json stored = config_to_json(cfg);
  stored.erase("seeds");
  if (!fs::exists(cfg_path)) write_text_atomic(cfg_path, stored.dump(2) + "\n");

  std::vector<std::uint64_t> todo;
  for (auto s : cfg.seeds) {
    if (fs::exists(summary.dir / detail::seed_dir_name(s) / "DONE")) {
      summary.skipped.push_back(s);
    } else {
      todo.push_back(s);
    }
  }
  if (!todo.empty()) {
    Dataset data = build_dataset(cfg.dataset);
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::vector<std::exception_ptr> errors;
    auto worker = [&] {
      for (std::size_t i = next++; i < todo.size(); i = next++) {
        try {
          fs::path d = summary.dir / detail::seed_dir_name(todo[i]);
          // Leftovers of an interrupted run are discarded.
          fs::remove_all(d);
          auto f = detail::run_seed(cfg, data, todo[i], d, opt);
          std::lock_guard lock(mu);
          summary.computed.push_back(todo[i]);
          summary.failures.insert(summary.failures.end(), f.begin(), f.end());
        } catch (...) {
          std::lock_guard lock(mu);
          errors.push_back(std::current_exception());
        }
      }
    };
    std::size_t n = std::max<std::size_t>(1, std::min(opt.workers, todo.size()));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < n; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (!errors.empty()) std::rethrow_exception(errors.front());
  }
  std::sort(summary.computed.begin(), summary.computed.end());
  report(summary.dir);
  return summary;
}


/// Locates the single config-hash directory under `dir` (or `dir` itself).
inline fs::path resolve_run_dir(const fs::path& dir) {
  if (fs::exists(dir / "config.json")) return dir;
  std::vector<fs::path> found;
  if (fs::is_directory(dir))
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory() && fs::exists(e.path() / "config.json")) found.push_back(e.path());
  if (found.empty()) throw Error("report: no run records under " + dir.string());
  if (found.size() > 1) {
    std::sort(found.begin(), found.end());
    throw Error("report: " + dir.string() + " mixes results of different configs (" + found[0].filename().string() +
                ", " + found[1].filename().string() + ", ...)");
  }
  return found.front();
}

/// Rebuilds curves from the per-seed accuracy tables.
inline std::vector<PruneAccuracyCurve> load_curves(const fs::path& dir, std::vector<std::uint64_t>& seeds) {
  // (method, distribution) -> seed -> (ratios, accuracies)
  std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, std::pair<std::vector<double>, std::vector<double>>>>
      acc;
  std::vector<std::string> method_order, dist_order;
  auto remember = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (auto s : seeds) {
    CsvTable t = read_csv(dir / detail::seed_dir_name(s) / "curves" / "accuracy.csv");
    std::size_t cm = t.col("method"), cc = t.col("cycle"), cr = t.col("ratio"), cd = t.col("distribution"),
                ca = t.col("accuracy");
    for (const auto& row : t.rows) {
      auto& entry = acc[{row[cm], row[cd]}][s];
      if (std::stoul(row[cc]) != entry.first.size()) throw FormatError("accuracy.csv: cycles out of order");
      entry.first.push_back(parse_double(row[cr]));
      entry.second.push_back(parse_double(row[ca]));
      remember(method_order, row[cm]);
      remember(dist_order, row[cd]);
    }
  }
  std::vector<PruneAccuracyCurve> out;
  for (const auto& m : method_order)
    for (const auto& d : dist_order) {
      auto it = acc.find({m, d});
      if (it == acc.end()) continue;
      PruneAccuracyCurve c;
      c.method = m;
      c.distribution = d;
      for (const auto& [seed, vals] : it->second) {
        c.seeds.push_back(seed);
        c.ratios.push_back(vals.first);
        c.accuracy.push_back(vals.second);
      }
      trim_stalled(c);
      c.validate();
      out.push_back(std::move(c));
    }
  return out;
}

namespace detail {

// Groups the rows of a per-seed metrics table by `keys` and writes the mean
// and sample std over seeds of each `values` column.
inline void aggregate_metric(const fs::path& run, std::span<const std::uint64_t> seeds, const std::string& file,
                             const std::vector<std::string>& keys, const std::vector<std::string>& values,
                             const fs::path& out, Json& rows) {
  std::map<std::vector<std::string>, std::vector<std::vector<double>>> groups;
  std::vector<std::vector<std::string>> order;
  for (auto s : seeds) {
    fs::path p = run / seed_dir_name(s) / "metrics" / file;
    if (!fs::exists(p)) continue;
    CsvTable t = read_csv(p);
    for (const auto& row : t.rows) {
      std::vector<std::string> key;
      for (const auto& k : keys) key.push_back(row[t.col(k)]);
      auto& g = groups[key];
      if (g.empty()) {
        order.push_back(key);
        g.resize(values.size());
      }
      for (std::size_t i = 0; i < values.size(); ++i) g[i].push_back(parse_double(row[t.col(values[i])]));
    }
  }
  std::vector<std::string> header = keys;
  for (const auto& v : values) {
    header.push_back(v + "_mean");
    header.push_back(v + "_std");
  }
  header.push_back("seeds");
  Csv csv(header);
  for (const auto& key : order) {
    const auto& g = groups[key];
    std::vector<std::string> cells = key;
    Json j;
    for (std::size_t i = 0; i < keys.size(); ++i) j[keys[i]] = key[i];
    for (std::size_t i = 0; i < values.size(); ++i) {
      double m = sample_mean(g[i]), sd = sample_std(g[i]);
      cells.push_back(fmt_double(m));
      cells.push_back(fmt_double(sd));
      j[values[i] + "_mean"] = m;
      j[values[i] + "_std"] = sd;
    }
    cells.push_back(std::to_string(g.front().size()));
    j["seeds"] = g.front().size();
    csv.cells(cells);
    rows.push_back(j);
  }
  write_text_atomic(out / file, csv.text());
}

}  // namespace detail

/// Merges completed seeds under `dir` into <run>/report/.
inline ReportSummary report(const fs::path& dir) {
  ReportSummary rs;
  rs.dir = resolve_run_dir(dir);
  Json cj = Json::parse(read_text(rs.dir / "config.json"));
  cj["seeds"] = Json::array({std::uint64_t{0}});
  ExperimentConfig cfg = config_from_json(cj);
  if (config_hash(cfg) != rs.dir.filename().string()) {
    throw Error("report: config.json in " + rs.dir.string() + " does not match its directory hash");
  }
  for (const auto& e : fs::directory_iterator(rs.dir)) {
    if (!e.is_directory() || !fs::exists(e.path() / "DONE")) continue;
    std::string name = e.path().filename().string();
    if (name.find_first_not_of("0123456789") != std::string::npos) continue;
    rs.seeds.push_back(std::stoull(name));
  }
  std::sort(rs.seeds.begin(), rs.seeds.end());
  if (rs.seeds.empty()) throw Error("report: no completed runs in " + rs.dir.string());
  rs.curves = load_curves(rs.dir, rs.seeds);

  fs::path out = rs.dir / "report";
  Csv curves({"method", "ratio", "distribution", "metric", "mean", "std"});
  Csv potential({"method", "distribution", "delta", "potential", "seed_mean", "seed_std"});
  Csv summary({"method", "distribution", "statistic", "value"});
  Csv excess({"method", "ratio", "diff_mean", "diff_std"});
  Csv regression({"method", "slope", "ci_low", "ci_high", "resamples", "points"});
  Json rj;
  rj["config_hash"] = rs.dir.filename().string();
  rj["seeds"] = rs.seeds;
  rj["delta"] = cfg.evaluation.delta;

  std::vector<double> deltas = cfg.evaluation.deltas;
  if (std::find(deltas.begin(), deltas.end(), cfg.evaluation.delta) == deltas.end()) {
    deltas.push_back(cfg.evaluation.delta);
  }
  std::sort(deltas.begin(), deltas.end());

  std::vector<std::string> methods;
  for (const auto& c : rs.curves) {
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
    for (std::size_t i = 0; i < c.points(); ++i)
      curves.row(c.method, c.mean_ratio(i), c.distribution, "accuracy", c.mean_accuracy(i), c.std_accuracy(i));
    if (cfg.metrics.potential) {
      for (const auto& p : delta_sweep(c, deltas)) {
        potential.row(p.method, p.distribution, p.delta, p.potential, p.seed_mean, p.seed_std);
        rj["potential"].push_back({{"method", p.method},
                                   {"distribution", p.distribution},
                                   {"delta", p.delta},
                                   {"potential", p.potential},
                                   {"seed_potentials", p.seed_potentials}});
        rs.potentials.push_back(p);
      }
    }
  }

  auto dists = evaluation_distributions(cfg);
  for (const auto& m : methods) {
    if (cfg.metrics.potential) {
      for (const auto& d : dists) {
        const auto& p = rs.potential(m, d.name, cfg.evaluation.delta);
        summary.row(m, d.name, "potential", p.potential);
        summary.row(m, d.name, "potential_seed_mean", p.seed_mean);
        summary.row(m, d.name, "potential_seed_std", p.seed_std);
      }
      auto set_summary = [&](const std::string& label, const std::vector<Corruption>& set) {
        if (set.empty()) return;
        std::vector<PrunePotentialReport> ps;
        for (const auto& c : set) ps.push_back(rs.potential(m, c.name(), cfg.evaluation.delta));
        auto s = summarize_potentials(ps);
        summary.row(m, label, "average_potential", s.average);
        summary.row(m, label, "minimum_potential", s.minimum);
      };
      set_summary("train-set", cfg.train_corruptions);
      set_summary("test-set", cfg.test_corruptions);
    }
    if (cfg.metrics.excess && !cfg.test_corruptions.empty()) {
      bool robust = m.size() > 7 && m.substr(m.size() - 7) == "+robust";
      const auto& tr = rs.curve(m, robust ? kTrainDist : kCleanDist);
      const auto& te = rs.curve(m, kTestDist);
      std::set<double> pruned;
      for (const auto& row : tr.ratios) pruned.insert(row.begin() + 1, row.end());
      if (pruned.size() < 2) {
        rj["skipped"].push_back(m + " excess regression: fewer than two distinct nonzero ratios");
        continue;
      }
      auto e = excess_error_report(tr, te, cfg.evaluation.bootstrap_resamples,
                                   Rng::stream(fnv1a64(m), "excess-bootstrap").next_u64());
      for (std::size_t i = 0; i < e.ratios.size(); ++i) excess.row(m, e.ratios[i], e.diff_mean[i], e.diff_std[i]);
      regression.row(m, e.regression.slope, e.regression.ci_low, e.regression.ci_high, e.regression.resamples,
                     e.x.size());
      rj["excess"].push_back({{"method", m},
                              {"ratios", e.ratios},
                              {"diff_mean", e.diff_mean},
                              {"slope", e.regression.slope},
                              {"ci_low", e.regression.ci_low},
                              {"ci_high", e.regression.ci_high}});
      rs.excess.push_back(std::move(e));
    }
  }

  if (cfg.metrics.similarity) {
    detail::aggregate_metric(rs.dir, rs.seeds, "similarity.csv", {"method", "pair", "eps"}, {"match", "l2"}, out,
                             rj["similarity"]);
  }
  if (cfg.metrics.backselect) {
    detail::aggregate_metric(rs.dir, rs.seeds, "heatmap.csv", {"method", "source", "evaluated"}, {"confidence"},
                             out, rj["heatmap"]);
  }

  write_text_atomic(out / "curves.csv", curves.text());
  if (cfg.metrics.potential) {
    write_text_atomic(out / "potential.csv", potential.text());
    write_text_atomic(out / "summary.csv", summary.text());
  }
  if (!rs.excess.empty()) {
    write_text_atomic(out / "excess.csv", excess.text());
    write_text_atomic(out / "excess_regression.csv", regression.text());
  }
  rs.json = rj;
  write_text_atomic(out / "report.json", rj.dump(2) + "\n");
  return rs;
}

struct CalibrationRow {
  std::string corruption;
  int severity = 0;
  double parameter = 0.0;
  double clean_accuracy = 0.0;  // mean over seeds
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double drop_mean = 0.0;       // clean minus corrupted, mean over seeds
};

inline bool corruption_supported(CorruptionKind k, const Shape& sample_shape) {
  bool image = sample_shape.size() == 3;
  return image || (k != CorruptionKind::pixelate && k != CorruptionKind::occlusion);
}

/// Accuracy of each seed's unpruned parent under every corruption and
/// severity; written to <run>/calibration.csv.
inline std::vector<CalibrationRow> calibrate_corruptions(ExperimentConfig cfg, const RunOptions& opt = {}) {
  if (opt.seed_override) cfg.seeds = {*opt.seed_override};
  Dataset data = build_dataset(cfg.dataset);
  PruneSchedule parent_only = cfg.schedule;
  parent_only.n_cycles = 0;
  std::vector<MaskedNetwork> parents;
  std::vector<double> clean;
  for (auto seed : cfg.seeds) {
    auto res = prune_retrain(cfg.network, seed, parent_only, cfg.methods.front(), data, {}, true);
    parents.push_back(res.snapshots.front());
    clean.push_back(res.records.front().test_accuracy);
    opt.log("[seed " + std::to_string(seed) + "] parent test accuracy " + fmt_double(clean.back()));
  }
  std::vector<CalibrationRow> rows;
  Csv csv({"corruption", "severity", "parameter", "clean_accuracy", "accuracy_mean", "accuracy_std", "drop_mean"});
  for (auto kind : kAllCorruptions) {
    if (!corruption_supported(kind, data.sample_shape)) continue;
    for (int sev = 1; sev <= 5; ++sev) {
      Corruption c{kind, sev, std::nullopt};
      DistributionSpec d{c.name(), DistributionRole::test, {c}, false};
      std::vector<double> acc;
      for (std::size_t i = 0; i < parents.size(); ++i)
        acc.push_back(distribution_accuracy(
            parents[i], materialize(data.test, d, eval_seed(cfg.seeds[i], d), cfg.evaluation.repetitions)));
      CalibrationRow r{std::string(corruption_name(kind)), sev, c.parameter(), sample_mean(clean),
                       sample_mean(acc), sample_std(acc), sample_mean(clean) - sample_mean(acc)};
      csv.row(r.corruption, r.severity, r.parameter, r.clean_accuracy, r.accuracy_mean, r.accuracy_std, r.drop_mean);
      rows.push_back(r);
    }
  }
  write_text_atomic(output_root(cfg) / config_hash(cfg) / "calibration.csv", csv.text());
  return rows;
}

}  // namespace prunelab
