// spatialvb simulate|fit|compare --config <path> [--seed N] [--out DIR] [--jobs K] [--print-config]

#include <atomic>
#include <cstdio>
#include <exception>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"

#include "spatialvb/experiment.hpp"

using namespace spatialvb;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> jobs;
  bool print_config = false;
};

RunConfig resolve(const Overrides& ov) {
  RunConfig cfg = load_run_config(ov.config);
  if (ov.seed) {
    cfg.seed = *ov.seed;
    if (cfg.simulation) cfg.simulation->seed = *ov.seed;
  }
  if (ov.out) cfg.out = *ov.out;
  if (ov.jobs) cfg.jobs = *ov.jobs;
  return cfg;
}

std::filesystem::path replicate_dir(const RunConfig& cfg, int k) {
  if (cfg.replicates == 1) return cfg.out;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "rep_%04d", k);
  return cfg.out / buf;
}

// Runs task(k) for k < count on `jobs` threads; rethrows the first failure.
template <class Task>
void fan_out(int count, int jobs, Task task) {
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (int k = next++; k < count; k = next++) {
      try {
        task(k);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  const int n = std::max(1, std::min(jobs, count));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void print_outcome(const RunOutcome& out, const std::filesystem::path& dir) {
  std::printf("%s (%s), seed %llu -> %s\n", to_string(out.method), to_string(out.mechanism),
              static_cast<unsigned long long>(out.seed), dir.string().c_str());
  for (const auto& p : out.theta) {
    std::printf("  %-12s %12.6f  (sd %.6f)\n", p.name.c_str(), p.mean, p.sd);
  }
  if (out.vb) {
    const auto smooth = moving_average(out.vb->elbo_trace, 500);
    const double slope = max_abs_slope(out.vb->mean_trajectory, 2000);
    std::printf("  smoothed %s: %.4f -> %.4f; max |trajectory slope| over last 2000: %.3g\n",
                out.vb->elbo_is_proxy ? "ELBO proxy" : "ELBO", smooth.front(), smooth.back(),
                slope);
  }
  if (out.mse_missing) std::printf("  MSE of missing-value means: %.6f\n", *out.mse_missing);
  std::printf("  %.2f s\n", out.seconds);
  for (const auto& w : out.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

void write_manifest(const std::filesystem::path& dir, const RunConfig& cfg, const char* command,
                    std::uint64_t seed, const std::string& dataset) {
  Json m;
  m["software"] = "spatialvb";
  m["version"] = "0.1.0";
  m["command"] = command;
  m["seed"] = seed;
  m["config_hash"] = hex64(fingerprint(run_config_to_json(cfg).dump()));
  m["dataset"] = dataset;
  m["config"] = run_config_to_json(cfg);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

int cmd_simulate(const RunConfig& cfg) {
  cfg.validate(RunConfig::Command::kSimulate);
  std::mutex io;
  fan_out(cfg.replicates, cfg.jobs, [&](int k) {
    SimConfig sc = *cfg.simulation;
    sc.seed += static_cast<std::uint64_t>(k);
    const Dataset data = simulate_dataset(sc);
    const auto dir = replicate_dir(cfg, k);
    write_dataset(dir, data);
    write_manifest(dir, cfg, "simulate", sc.seed, data.fingerprint());
    std::lock_guard<std::mutex> lock(io);
    std::printf("simulated n=%lld, n_u=%lld (seed %llu) -> %s\n",
                static_cast<long long>(data.x.rows()), static_cast<long long>(data.pattern.n_u()),
                static_cast<unsigned long long>(sc.seed), dir.string().c_str());
  });
  return 0;
}

int cmd_fit(const RunConfig& cfg) {
  cfg.validate(RunConfig::Command::kFit);
  std::optional<Dataset> shared;
  if (cfg.data) {
    shared = read_dataset(*cfg.data, cfg.mechanism);
    check_compatible(cfg.method, *shared->mechanism);
  }
  std::mutex io;
  fan_out(cfg.replicates, cfg.jobs, [&](int k) {
    const auto dir = replicate_dir(cfg, k);
    std::optional<Dataset> local;
    if (!shared) {
      SimConfig sc = *cfg.simulation;
      sc.seed += static_cast<std::uint64_t>(k);
      local = simulate_dataset(sc);
      write_dataset(dir / "data", *local);
    }
    const Dataset& data = shared ? *shared : *local;
    const RunOutcome out = run_method(data, cfg, cfg.seed + static_cast<std::uint64_t>(k));
    write_run_artifacts(dir, out, data, cfg);
    std::lock_guard<std::mutex> lock(io);
    print_outcome(out, dir);
  });
  return 0;
}

int cmd_compare(const RunConfig& cfg) {
  cfg.validate(RunConfig::Command::kCompare);
  const ComparisonTable table = compare_fits(cfg.compare_fits, cfg.compare_truth);
  std::fputs(table.render().c_str(), stdout);
  ensure_directory(cfg.out);
  write_text(cfg.out / "comparison.csv", table.to_csv());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational Bayes for spatial error models with missing responses"};
  app.require_subcommand(1);
  Overrides ov;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", ov.config, "JSON run configuration")->required();
    sub->add_option("--seed", ov.seed, "Override the RNG seed");
    sub->add_option("--out", ov.out, "Override the output directory");
    sub->add_option("--jobs", ov.jobs, "Parallel replicate workers")->check(CLI::PositiveNumber);
    sub->add_flag("--print-config", ov.print_config, "Print the resolved configuration and exit");
  };
  CLI::App* simulate = app.add_subcommand("simulate", "Simulate SEM datasets with missing responses");
  CLI::App* fit = app.add_subcommand("fit", "Fit a dataset with JVB, HVB or HMC");
  CLI::App* compare = app.add_subcommand("compare", "Tabulate completed fits side by side");
  for (CLI::App* sub : {simulate, fit, compare}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const RunConfig cfg = resolve(ov);
    if (ov.print_config) {
      std::cout << run_config_to_json(cfg).dump(2) << '\n';
      return 0;
    }
    if (simulate->parsed()) return cmd_simulate(cfg);
    if (fit->parsed()) return cmd_fit(cfg);
    return cmd_compare(cfg);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
