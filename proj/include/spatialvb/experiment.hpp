#pragma once

// Simulation protocol, initialization rules, method dispatch and result
// artifacts for single runs.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spatialvb/dataset_io.hpp"
#include "spatialvb/hmc.hpp"
#include "spatialvb/run_config.hpp"
#include "spatialvb/vb.hpp"

namespace spatialvb {

// SEM draw with seed cfg.seed; the missingness pattern uses cfg.seed + 1.
Dataset simulate_dataset(const SimConfig& cfg);

struct OlsFit {
  Vector beta;
  double sigma2 = 1.0;  // RSS / (n_o - (r + 1))
};
// Least squares on the observed rows.
OlsFit ols_observed(const Matrix& x, const Vector& y, const MissingPattern& pattern);

// OLS beta and sigma2, rho = 0.01 and psi entries 0.01, in unconstrained form.
Vector initial_theta(const TargetDensity& target, const OlsFit& ols, double rho0 = 0.01,
                     double psi0 = 0.01);

struct RunOutcome {
  Method method = Method::kJvb;
  Mechanism mechanism = Mechanism::kMar;
  std::vector<std::string> theta_names;  // unconstrained flattening order
  std::vector<ParamSummary> theta;       // constrained
  IndexList missing_units;
  Vector y_u_mean;
  Vector y_u_sd;
  std::optional<FitResult> vb;
  std::optional<HmcResult> hmc;
  Json tuning;
  std::vector<std::string> warnings;
  bool flagged = false;
  double seconds = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> mse_missing;  // against y_full when available
};

RunOutcome run_method(const Dataset& data, const RunConfig& cfg, std::uint64_t seed);

// Summary JSON of a completed run.
Json outcome_to_json(const RunOutcome& out, const Dataset& data);
// summary.json, elbo_trace.csv, mean_trajectory.csv, missing_posterior.csv,
// chain.csv (HMC) and manifest.json.
void write_run_artifacts(const std::filesystem::path& dir, const RunOutcome& out,
                         const Dataset& data, const RunConfig& cfg);

// Loads the fit directories and renders the mean (sd) table; MSE rows are
// added when y_full is available. Throws UsageError for fits on different
// datasets.
struct ComparisonTable {
  std::vector<std::string> methods;
  std::vector<std::string> parameters;
  // [parameter][method] -> (mean, sd); NaN when absent.
  std::vector<std::vector<std::pair<double, double>>> cells;
  std::vector<std::optional<double>> mse;
  std::string render() const;
  std::string to_csv() const;
};
ComparisonTable compare_fits(const std::vector<std::filesystem::path>& dirs,
                             const std::optional<std::filesystem::path>& truth_dir);

}  // namespace spatialvb
