// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "prunelab/config.hpp"
#include "prunelab/evaluation.hpp"
#include "prunelab/experiment.hpp"
#include "prunelab/gradcheck.hpp"
#include "prunelab/metrics.hpp"
#include "prunelab/pipeline.hpp"

namespace fs = std::filesystem;
using namespace prunelab;

namespace {

int failures = 0;

void verdict(const std::string& id, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", id.c_str(), ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

fs::path recipe(const char* name) { return fs::path(PRUNELAB_SOURCE_DIR) / "recipes" / name; }

RunOptions quiet() {
  RunOptions o;
  o.log = [](const std::string&) {};
  return o;
}

// ---------------------------------------------------------------------------

void criterion_gradcheck() {
  auto t0 = std::chrono::steady_clock::now();
  auto results = run_gradcheck_suite(100, 2024, 1e-4);
  double secs = seconds_since(t0);
  bool ok = secs < 30.0;
  double worst = 0.0;
  std::size_t min_cases = SIZE_MAX;
  for (const auto& r : results) {
    ok = ok && r.failures == 0 && r.cases >= 100;
    worst = std::max(worst, r.worst);
    min_cases = std::min(min_cases, r.cases);
  }
  verdict("CRITERION 1", ok,
          std::to_string(results.size()) + " ops, >= " + std::to_string(min_cases) + " cases each, worst rel error " +
              fmt(worst, 10) + ", " + fmt(secs, 2) + " s");
}

void criterion_alg1() {
  ExperimentConfig cfg = load_config(recipe("fig5-desk.json").string());
  Dataset data = build_dataset(cfg.dataset);
  PruneSchedule sched = cfg.schedule;
  sched.train.epochs = 2;
  sched.train.milestones = {};
  bool ok = true;
  std::string why;
  std::size_t runs = 0;
  for (auto crit : {Criterion::WT, Criterion::SiPP, Criterion::FT, Criterion::PFP}) {
    PruneMethod method{crit};
    for (double r : {0.3, 0.5, 0.85}) {
      sched.n_cycles = 6;
      sched.r_prune = r;
      auto res = prune_retrain(cfg.network, 11, sched, method, data);
      ++runs;
      const auto& snaps = res.snapshots;
      double total = static_cast<double>(snaps[0].prunable_count());
      double layers = static_cast<double>(snaps[0].params().size());
      for (std::size_t i = 1; i < snaps.size(); ++i) {
        for (std::size_t k = 0; k < snaps[i].params().size(); ++k) {
          const auto& p = snaps[i].params()[k];
          const auto& prev = snaps[i - 1].params()[k];
          for (std::size_t j = 0; j < p.mask().size(); ++j) {
            if (p.mask()[j] > prev.mask()[j]) {
              ok = false;
              why = "mask revived";
            }
            if (p.mask()[j] == 0.0 && p.weights()[j] != 0.0) {
              ok = false;
              why = "masked weight nonzero";
            }
          }
        }
        if (!method.structured()) {
          // Each step removes floor(r n) of the n remaining weights, and every
          // layer keeps at least one.
          double nominal = sched.nominal_ratio(i);
          double tol = (static_cast<double>(i) + layers) / total;
          if (std::abs(prune_ratio(snaps[i]) - nominal) > tol) {
            ok = false;
            why = method.name() + " r=" + fmt(r, 2) + " cycle " + std::to_string(i) + ": ratio " +
                  fmt(prune_ratio(snaps[i])) + " vs " + fmt(nominal);
          }
        }
      }
    }
  }
  verdict("CRITERION 2", ok,
          why.empty() ? std::to_string(runs) +
                            " runs (4 criteria x r in {0.3, 0.5, 0.85} x 6 cycles): masks monotone, masked weights "
                            "exactly 0, unstructured ratios within rounding of 1-(1-r)^i"
                      : why);
}

void criterion_oracles() {
  std::size_t wt_bad = 0, ft_bad = 0;
  for (std::uint64_t c = 0; c < 1000; ++c) {
    MaskedNetwork net = oracle::random_net(c, c % 2 == 1);
    double r = Rng::stream(c, "ratio").uniform(0.05, 0.95);
    auto want = oracle::wt_oracle(net, r);
    prune(net, {Criterion::WT}, r);
    for (std::size_t k = 0; k < want.size(); ++k)
      if (!(net.params()[k].mask() == want[k])) {
        ++wt_bad;
        break;
      }
    MaskedNetwork fnet = oracle::random_net(c + 5000, false);
    auto fwant = oracle::ft_oracle(fnet, r);
    prune(fnet, {Criterion::FT}, r);
    for (std::size_t k = 0; k < fwant.size(); ++k)
      if (!(fnet.params()[k].mask() == fwant[k])) {
        ++ft_bad;
        break;
      }
  }
  std::size_t bs_cases = 0, bs_bad = 0;
  ExperimentConfig cfg = load_config(recipe("fig5-desk.json").string());
  for (std::uint64_t c = 0; c < 24; ++c) {
    Rng rng = Rng::stream(c, "backselect-case");
    MaskedNetwork net;
    Tensor x;
    if (c % 3 == 0) {
      net = cfg.network.build(c);
      x = Tensor(Shape{1, 8, 8});
    } else {
      std::size_t n = 2 + rng.below(63);
      net = MaskedNetwork({n}, {LayerSpec::dense(n, 8), LayerSpec::relu(), LayerSpec::dense(8, 4)}, 4, c);
      x = Tensor(Shape{n});
    }
    for (auto& v : x.data()) v = rng.normal();
    std::size_t cls = predict(net, detail::as_batch(net, x)).front();
    auto order = back_select(net, x, cls);
    ++bs_cases;
    if (oracle::first_backselect_violation(net, x, cls, order) != x.size()) ++bs_bad;
  }
  verdict("CRITERION 3", wt_bad == 0 && ft_bad == 0 && bs_bad == 0,
          "WT oracle mismatches " + std::to_string(wt_bad) + "/1000, FT " + std::to_string(ft_bad) +
              "/1000, BackSelect argmin violations " + std::to_string(bs_bad) + "/" + std::to_string(bs_cases) +
              " (n <= 64)");
}

// ---------------------------------------------------------------------------
// Report-level checks against a fig5-desk run.

struct RawCurve {
  std::vector<std::vector<double>> ratio, acc;  // [seed][cycle]
};

// (method, distribution) -> curve, rebuilt from the per-seed accuracy tables
// and cut at the first cycle that did not increase the ratio in any seed.
std::map<std::pair<std::string, std::string>, RawCurve> raw_curves(const fs::path& run,
                                                                   const std::vector<std::uint64_t>& seeds) {
  std::map<std::pair<std::string, std::string>, RawCurve> out;
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    CsvTable t = read_csv(run / std::to_string(seeds[si]) / "curves" / "accuracy.csv");
    for (const auto& row : t.rows) {
      RawCurve& c = out[{row[0], row[3]}];
      c.ratio.resize(seeds.size());
      c.acc.resize(seeds.size());
      c.ratio[si].push_back(parse_double(row[2]));
      c.acc[si].push_back(parse_double(row[4]));
    }
  }
  for (auto& [key, c] : out) {
    std::size_t keep = c.ratio[0].size();
    for (const auto& r : c.ratio)
      for (std::size_t i = 1; i < r.size() && i < keep; ++i)
        if (!(r[i] > r[i - 1])) keep = i;
    for (auto& r : c.ratio) r.resize(keep);
    for (auto& a : c.acc) a.resize(keep);
  }
  return out;
}

double raw_potential(const RawCurve& c, double delta) {
  double best = 0.0;
  double n = static_cast<double>(c.ratio.size());
  for (std::size_t i = 1; i < c.ratio[0].size(); ++i) {
    double diff = 0.0, ratio = 0.0;
    for (std::size_t s = 0; s < c.ratio.size(); ++s) {
      diff += c.acc[s][0] - c.acc[s][i];
      ratio += c.ratio[s][i];
    }
    if (diff / n <= delta + 1e-12) best = std::max(best, ratio / n);
  }
  return best;
}

struct Fig5 {
  fs::path run;
  std::vector<std::uint64_t> seeds;
  double seconds = 0.0;
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<std::string>>>> pot;  // m,d,delta
  std::map<std::string, std::vector<std::string>> regression;

  double potential(const std::string& m, const std::string& d, const char* column = "potential") const {
    static const std::map<std::string, std::size_t> cols{{"potential", 3}, {"seed_mean", 4}, {"seed_std", 5}};
    return parse_double(pot.at(m).at(d).at(fmt_double(0.005)).at(cols.at(column)));
  }
  double slope(const std::string& m) const { return parse_double(regression.at(m)[1]); }
};

Fig5 run_fig5(const fs::path& root) {
  ::setenv(kOutputEnv, root.c_str(), 1);
  ExperimentConfig cfg = load_config(recipe("fig5-desk.json").string());
  auto t0 = std::chrono::steady_clock::now();
  RunSummary s = run_experiment(cfg, quiet());
  Fig5 f;
  f.seconds = seconds_since(t0);
  f.run = s.dir;
  f.seeds = cfg.seeds;
  for (const auto& row : read_csv(s.dir / "report" / "potential.csv").rows) f.pot[row[0]][row[1]][row[2]] = row;
  for (const auto& row : read_csv(s.dir / "report" / "excess_regression.csv").rows) f.regression[row[0]] = row;
  ::unsetenv(kOutputEnv);
  return f;
}

void criterion_definitions(const Fig5& f) {
  auto curves = raw_curves(f.run, f.seeds);
  std::size_t checked = 0, mismatched = 0, nonmonotone = 0;
  std::string first_bad;
  for (const auto& [m, by_dist] : f.pot) {
    for (const auto& [d, by_delta] : by_dist) {
      double prev = -1.0;
      for (double delta : default_delta_grid()) {
        const auto& row = by_delta.at(fmt_double(delta));
        double want = raw_potential(curves.at({m, d}), delta);
        ++checked;
        if (row[3] != fmt_double(want)) {
          ++mismatched;
          if (first_bad.empty()) first_bad = m + "/" + d + " delta " + fmt_double(delta);
        }
        if (want < prev) ++nonmonotone;
        prev = want;
      }
    }
  }
  // Excess-error differences, recomputed per seed against the seed's parent.
  ExperimentConfig cfg = load_config(recipe("fig5-desk.json").string());
  std::size_t excess_checked = 0, excess_bad = 0;
  bool zero_at_origin = true;
  std::map<std::string, std::vector<std::vector<std::string>>> excess_rows;
  for (const auto& row : read_csv(f.run / "report" / "excess.csv").rows) excess_rows[row[0]].push_back(row);
  for (const auto& [m, rows] : excess_rows) {
    bool robust = m.ends_with("+robust");
    const RawCurve& tr = curves.at({m, robust ? kTrainDist : kCleanDist});
    const RawCurve& te = curves.at({m, kTestDist});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double sum = 0.0;
      for (std::size_t s = 0; s < tr.acc.size(); ++s)
        sum += (tr.acc[s][i] - te.acc[s][i]) - (tr.acc[s][0] - te.acc[s][0]);
      double want = sum / static_cast<double>(tr.acc.size());
      ++excess_checked;
      if (rows[i][2] != fmt_double(want)) ++excess_bad;
    }
    zero_at_origin = zero_at_origin && parse_double(rows.front()[1]) == 0.0 && parse_double(rows.front()[2]) == 0.0;
  }
  (void)cfg;
  verdict("CRITERION 4", mismatched == 0 && nonmonotone == 0 && excess_bad == 0 && zero_at_origin && checked > 0,
          std::to_string(checked) + " potentials recomputed (" + std::to_string(mismatched) + " mismatched" +
              (first_bad.empty() ? "" : ", first " + first_bad) + "), " + std::to_string(nonmonotone) +
              " delta-monotonicity violations, " + std::to_string(excess_checked) + " excess differences (" +
              std::to_string(excess_bad) + " mismatched), ratio-0 difference " + (zero_at_origin ? "0" : "nonzero"));
}

void criterion_similarity(const Fig5& f) {
  ExperimentConfig cfg = load_config(recipe("fig5-desk.json").string());
  std::size_t cycle = cfg.similarity.child_cycle;
  std::map<std::string, bool> ok_by_method;
  std::map<std::string, double> min_margin, child_ratio;
  for (auto seed : f.seeds) {
    fs::path sd = f.run / std::to_string(seed);
    for (const auto& row : read_csv(sd / "curves" / "records.csv").rows)
      if (std::stoul(row[1]) == cycle) child_ratio[row[0]] = std::max(child_ratio[row[0]], parse_double(row[2]));
    std::map<std::string, std::map<std::string, double>> child, indep;  // method -> eps -> match
    for (const auto& row : read_csv(sd / "metrics" / "similarity.csv").rows)
      (row[1] == "child" ? child : indep)[row[0]][row[2]] = parse_double(row[3]);
    for (const auto& [m, by_eps] : child) {
      if (!ok_by_method.count(m)) {
        ok_by_method[m] = true;
        min_margin[m] = 1.0;
      }
      for (double eps : default_similarity_grid()) {
        std::string key = fmt_double(eps);
        if (!by_eps.count(key)) {
          ok_by_method[m] = false;
          continue;
        }
        double margin = by_eps.at(key) - indep[m].at(key);
        min_margin[m] = std::min(min_margin[m], margin);
        if (!(margin > 0.0)) ok_by_method[m] = false;
      }
    }
  }
  bool ok = ok_by_method.count("WT") && ok_by_method["WT"] && child_ratio["WT"] <= 0.75 && f.seconds < 300.0;
  std::ostringstream os;
  os << "WT child (max ratio " << fmt(child_ratio["WT"]) << ") vs independent: smallest match margin "
     << fmt(min_margin["WT"]) << " over eps {0,.05,.1,.2,.4} x " << f.seeds.size() << " seeds; run "
     << fmt(f.seconds, 1) << " s";
  for (const auto& [m, good] : ok_by_method)
    if (m != "WT") os << "; info " << m << " margin " << fmt(min_margin[m]) << (good ? " (ordered)" : " (not ordered)");
  verdict("CRITERION 5", ok, os.str());
}

void criterion_noise_potential(const Fig5& f) {
  ExperimentConfig cfg = load_config(recipe("fig5-desk.json").string());
  double eps_max = Corruption{CorruptionKind::uniform_noise, 3, std::nullopt}.parameter();
  std::string noisy = noise_distribution(eps_max);
  bool ok = true;
  std::ostringstream os;
  os << "delta 0.5%, largest calibrated eps " << fmt_double(eps_max) << ":";
  for (const auto& pm : cfg.methods) {
    std::string m = pm.name();
    double clean = f.potential(m, kCleanDist, "seed_mean");
    double noise = f.potential(m, noisy, "seed_mean");
    ok = ok && clean - noise >= 0.20;
    os << " " << m << " " << fmt(clean, 3) << " -> " << fmt(noise, 3) << " (" << fmt(100 * (clean - noise), 1)
       << " points)";
  }
  verdict("CRITERION 6", ok, os.str());
}

void criterion_excess_slope(const Fig5& f) {
  bool ok = false;
  std::ostringstream os;
  for (const char* m : {"WT", "FT"}) {
    if (!f.regression.count(m)) continue;
    const auto& r = f.regression.at(m);
    double slope = parse_double(r[1]), lo = parse_double(r[2]), hi = parse_double(r[3]);
    ok = ok || (slope > 0.0 && lo > 0.0);
    os << m << " slope " << fmt(slope) << " CI [" << fmt(lo) << ", " << fmt(hi) << "]; ";
  }
  verdict("CRITERION 7", ok, os.str());
}

void criterion_robust(const Fig5& f) {
  ExperimentConfig cfg = load_config(recipe("fig5-desk.json").string());
  bool ok = true;
  std::ostringstream os;
  for (const auto& pm : cfg.methods) {
    std::string m = pm.name(), r = m + "+robust";
    bool any = false;
    os << m << ":";
    for (const auto& c : cfg.train_corruptions) {
      double nominal = f.potential(m, c.name()), robust = f.potential(r, c.name());
      bool held = robust >= nominal - 0.05 - 1e-12;
      any = any || held;
      os << " " << c.name() << " " << fmt(nominal, 3) << "->" << fmt(robust, 3) << (held ? "" : "(x)");
    }
    bool slope_down = std::abs(f.slope(r)) < std::abs(f.slope(m));
    os << "; |slope| " << fmt(f.slope(m)) << "->" << fmt(f.slope(r)) << ". ";
    ok = ok && any && slope_down;
  }
  verdict("CRITERION 8", ok, os.str());
}

void criterion_regression() {
  std::vector<double> x{0.5, 1.0}, y{1.0, 2.0};
  RegressionResult exact = excess_regression(x, y, 1000, 0);
  int covered = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng = Rng::stream(trial, "coverage");
    std::vector<double> xs, ys;
    for (int i = 0; i < 100; ++i) {
      xs.push_back(rng.uniform());
      ys.push_back(3.0 * xs.back() + rng.normal(0.0, 0.1));
    }
    RegressionResult r = excess_regression(xs, ys, 1000, trial);
    covered += (r.ci_low <= 3.0 && 3.0 <= r.ci_high) ? 1 : 0;
  }
  verdict("CRITERION 9", exact.slope == 2.0 && covered >= 93,
          "slope " + fmt_double(exact.slope) + ", bootstrap 95% CI covered 3 in " + std::to_string(covered) +
              "/100 trials (100 points each)");
}

std::map<fs::path, std::string> csv_files(const fs::path& run) {
  std::map<fs::path, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(run))
    if (e.is_regular_file() && e.path().extension() == ".csv") out[fs::relative(e.path(), run)] = read_text(e.path());
  return out;
}

void criterion_determinism(const Fig5& a, const Fig5& b) {
  auto fa = csv_files(a.run), fb = csv_files(b.run);
  std::size_t differing = 0;
  std::string first;
  for (const auto& [p, text] : fa) {
    auto it = fb.find(p);
    if (it == fb.end() || it->second != text) {
      ++differing;
      if (first.empty()) first = p.string();
    }
  }
  bool ok = fa.size() == fb.size() && differing == 0 && !fa.empty();
  verdict("CRITERION 10", ok,
          std::to_string(fa.size()) + " CSV files compared, " + std::to_string(differing) + " differ" +
              (first.empty() ? "" : " (first " + first + ")") + "; runs took " + fmt(a.seconds, 1) + " s and " +
              fmt(b.seconds, 1) + " s");
}

void calibration_check() {
  ExperimentConfig cfg = load_config(recipe("fig5-desk.json").string());
  fs::path root = fs::temp_directory_path() / "prunelab-acceptance-calibration";
  ::setenv(kOutputEnv, root.c_str(), 1);
  auto rows = calibrate_corruptions(cfg, quiet());
  ::unsetenv(kOutputEnv);
  fs::remove_all(root);
  bool ok = true;
  std::ostringstream os;
  os << "severity-3 drop of the unpruned parent:";
  for (const auto& r : rows) {
    if (r.severity != 3) continue;
    ok = ok && r.drop_mean >= 0.05 && r.drop_mean <= 0.15;
    os << " " << r.corruption << " " << fmt(100 * r.drop_mean, 1);
  }
  verdict("CALIBRATION", ok, os.str() + " points (want 5-15)");
}

}  // namespace

int main() {
  criterion_gradcheck();
  criterion_alg1();
  criterion_oracles();

  fs::path base = fs::temp_directory_path() / "prunelab-acceptance";
  fs::remove_all(base);
  Fig5 first = run_fig5(base / "a");
  criterion_definitions(first);
  criterion_similarity(first);
  criterion_noise_potential(first);
  criterion_excess_slope(first);
  criterion_robust(first);
  criterion_regression();
  Fig5 second = run_fig5(base / "b");
  criterion_determinism(first, second);
  calibration_check();
  fs::remove_all(base);

  std::printf("%d failing\n", failures);
  return failures == 0 ? 0 : 1;
}
