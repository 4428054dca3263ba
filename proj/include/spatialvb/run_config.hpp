#pragma once

// JSON run configuration shared by the simulate, fit and compare commands.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "spatialvb/hmc.hpp"
#include "spatialvb/missing_mech.hpp"
#include "spatialvb/posterior.hpp"
#include "spatialvb/vb.hpp"

namespace spatialvb {

using Json = nlohmann::ordered_json;

enum class Method { kJvb, kHvbNob, kHvbG, kHvbAllB, kHvb3B, kHmc };

const char* to_string(Method m);
Method method_from_string(const std::string& s);
// Throws UsageError when the method cannot run under the mechanism.
void check_compatible(Method method, Mechanism mechanism);

struct SamplerConfig {
  int n1 = 0;            // 0: 10 for Metropolis schemes, 5 for Gibbs
  Index block_size = 0;  // 0: mechanism default from n_u
  int k_prime = 3;
  bool warm_start = false;
  std::uint64_t partition_seed = 7;

  int resolved_n1(Method method) const;
};

// Dataset file locations; `dir` supplies the default file names.
struct DataPaths {
  std::filesystem::path dir;
  std::filesystem::path y, x, w, x_star, y_full, truth;

  // Explicit path, else dir / default name.
  std::filesystem::path resolve(const std::filesystem::path& explicit_path,
                                const char* default_name) const;
};

struct HmcSettings {
  int n_samples = 5000;
  int leapfrog_steps = 20;
  double step_size = 0.05;
  int burn_in = 1000;
  bool tune_step_size = true;
  int pilot_iterations = 200;
  bool adapt_mass = true;
  int adapt_iterations = 1000;

  HmcConfig to_config() const;
};

struct PrecisionSettings {
  LogDetMethod logdet = LogDetMethod::kAuto;
  Index exact_trace_limit = 2500;
  int hutchinson_probes = 20;

  PrecisionModel::Options to_options(std::uint64_t seed) const;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "spatialvb_out";
  int jobs = 1;
  int replicates = 1;

  std::optional<SimConfig> simulation;
  std::optional<DataPaths> data;
  std::optional<Mechanism> mechanism;  // required with `data` unless truth.json names it

  Method method = Method::kHvbNob;
  FitOptions vb;
  SamplerConfig sampler;
  HmcSettings hmc;
  PriorSpec priors;
  PrecisionSettings precision;

  // compare: completed fit directories and an optional dataset directory
  // holding y_full.csv.
  std::vector<std::filesystem::path> compare_fits;
  std::optional<std::filesystem::path> compare_truth;

  enum class Command { kSimulate, kFit, kCompare };
  void validate(Command cmd) const;
};

Json sim_config_to_json(const SimConfig& cfg);
SimConfig sim_config_from_json(const Json& j);

Json run_config_to_json(const RunConfig& cfg);
// Unknown keys are rejected so that typos do not silently fall back to
// defaults.
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);

const char* to_string(LogDetMethod m);
LogDetMethod logdet_method_from_string(const std::string& s);

// 64-bit FNV-1a, used for config and dataset fingerprints.
std::uint64_t fingerprint(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace spatialvb
