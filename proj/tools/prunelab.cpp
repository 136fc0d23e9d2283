// prunelab: run prune-retrain experiments and summarize their results.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "prunelab/experiment.hpp"
#include "prunelab/gradcheck.hpp"

namespace {

using namespace prunelab;

int cmd_run(const std::string& config, std::size_t workers, const std::optional<std::uint64_t>& seed) {
  RunOptions opt;
  opt.workers = workers;
  opt.seed_override = seed;
  RunSummary s = run_experiment(load_config(config), opt);
  std::cout << "results: " << s.dir.string() << "\n";
  std::cout << "computed seeds: " << s.computed.size() << ", already complete: " << s.skipped.size() << "\n";
  for (const auto& f : s.failures) std::cout << "diverged: " << f << "\n";
  return 0;
}

int cmd_report(const std::string& dir) {
  ReportSummary r = report(dir);
  std::cout << "report: " << (r.dir / "report").string() << " (" << r.seeds.size() << " seeds)\n";
  for (const auto& p : r.potentials)
    if (p.distribution == kCleanDist && p.delta == r.json.value("delta", 0.005)) {
      std::cout << "  " << p.method << " clean potential " << fmt_double(p.potential) << "\n";
    }
  for (const auto& e : r.excess) {
    std::cout << "  " << e.method << " excess-error slope " << fmt_double(e.regression.slope) << " [" <<
        fmt_double(e.regression.ci_low) << ", " << fmt_double(e.regression.ci_high) << "]\n";
  }
  return 0;
}

int cmd_gradcheck(std::size_t cases, std::uint64_t seed) {
  bool ok = true;
  std::printf("%-14s %6s %9s %12s\n", "op", "cases", "failures", "worst");
  for (const auto& r : run_gradcheck_suite(cases, seed)) {
    std::printf("%-14s %6zu %9zu %12.3e\n", std::string(op_name(r.kind)).c_str(), r.cases, r.failures, r.worst);
    ok = ok && r.failures == 0;
  }
  std::printf("%s\n", ok ? "all gradients match" : "gradient mismatch");
  return ok ? 0 : 1;
}

int cmd_calibrate(const std::string& config, const std::optional<std::uint64_t>& seed) {
  RunOptions opt;
  opt.seed_override = seed;
  auto rows = calibrate_corruptions(load_config(config), opt);
  std::printf("%-15s %3s %9s %9s %9s %8s\n", "corruption", "sev", "param", "acc", "std", "drop");
  for (const auto& r : rows)
    std::printf("%-15s %3d %9.4g %9.4f %9.4f %8.4f\n", r.corruption.c_str(), r.severity, r.parameter,
                r.accuracy_mean, r.accuracy_std, r.drop_mean);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prune-retrain experiments on small networks"};
  app.require_subcommand(1);

  std::string config, dir;
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run an experiment config (set " + std::string(kOutputEnv) +
                                            " to override the output root)");
  run->add_option("config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--workers", workers, "parallel seed jobs")->check(CLI::PositiveNumber);
  run->add_option("--seed-override", seed, "run only this seed");

  auto* rep = app.add_subcommand("report", "Consolidate the results under a run directory");
  rep->add_option("dir", dir, "output root or config-hash directory")->required()->check(CLI::ExistingDirectory);

  std::size_t cases = 100;
  std::uint64_t gc_seed = 2024;
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients of every op");
  gc->add_option("--cases", cases, "random cases per op");
  gc->add_option("--seed", gc_seed, "seed");

  auto* cal = app.add_subcommand("calibrate-corruptions", "Parent accuracy under every corruption severity");
  cal->add_option("config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cal->add_option("--seed-override", seed, "use only this seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config, workers, seed);
    if (*rep) return cmd_report(dir);
    if (*gc) return cmd_gradcheck(cases, gc_seed);
    if (*cal) return cmd_calibrate(config, seed);
  } catch (const prunelab::ConfigError& e) {
    std::cerr << "config error at " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
