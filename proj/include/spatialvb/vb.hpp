#pragma once

// Factor-covariance Gaussian variational family q = N(mu, B B^T + D^2),
// reparameterization gradient estimators, ADADELTA, and the joint (JVB) and
// hybrid (HVB) stochastic-gradient loops.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "spatialvb/posterior.hpp"
#include "spatialvb/rng.hpp"
#include "spatialvb/samplers.hpp"

namespace spatialvb {

struct VParams {
  Vector mu;
  Matrix b;  // D x p; b(i, j) = 0 for j > i when i < p
  Vector d;

  Index dim() const { return mu.size(); }
  Index factors() const { return b.cols(); }

  // mu given; B = b0 on allowed entries, d = d0.
  static VParams init(const Vector& mu, Index p, double b0 = 0.01, double d0 = 0.1);
  void validate() const;
  // Dense B B^T + D^2; for tests and small D.
  Matrix covariance() const;
  // Marginal standard deviations sqrt(diag(B B^T) + d^2).
  Vector marginal_sd() const;
  // Leading `k` coordinates as their own factor-covariance Gaussian.
  VParams head(Index k) const;
};

// Zeroes the structural entries of a D x p loading (gradient) matrix.
void apply_factor_mask(Matrix& b);

struct ReparamDraw {
  Vector eta;  // length p
  Vector eps;  // length D
};

ReparamDraw draw_reparam(Index dim, Index p, Rng& rng);
// mu + B eta + d o eps
Vector transform(const VParams& vp, const ReparamDraw& z);

struct VariationalDraw {
  Vector value;
  ReparamDraw draw;
};
VariationalDraw draw_variational(const VParams& vp, Rng& rng);

// (B B^T + D^2)^{-1} and log|B B^T + D^2| via the Woodbury identity; only a
// p x p system is factorized.
class FactorCovariance {
 public:
  FactorCovariance(const Matrix& b, const Vector& d);
  Vector solve(const Vector& v) const;
  double log_det() const { return log_det_; }

 private:
  Matrix b_;
  Vector dinv2_;
  Eigen::LLT<Matrix> core_;  // I_p + B^T D^{-2} B
  double log_det_ = 0.0;
};

Vector woodbury_solve(const Matrix& b, const Vector& d, const Vector& v);
double log_q(const VParams& vp, const Vector& value);
Vector grad_log_q(const VParams& vp, const Vector& value);

struct GradientEstimate {
  Vector grad_mu;
  Matrix grad_b;
  Vector grad_d;
  double elbo = 0.0;  // log h - log q at the draw (a proxy under HVB)
};

// Single-draw JVB estimate at a given reparameterization draw of (theta, y_u).
GradientEstimate jvb_gradient_estimate(const VParams& vp, const LogDensity& target,
                                       const ReparamDraw& z);
GradientEstimate jvb_gradient_estimate(const VParams& vp, const LogDensity& target, Rng& rng);

// HVB estimate over theta only, with y_u supplied by the conditional sampler
// at the drawn theta.
GradientEstimate hvb_gradient_estimate(const VParams& vp_theta, const LogDensity& target,
                                       const Vector& y_u, const ReparamDraw& z);

struct AdadeltaState {
  Vector e_grad2;
  Vector e_delta2;
  double upsilon = 0.95;
  double alpha = 1e-6;

  static AdadeltaState zeros(Index n, double upsilon = 0.95, double alpha = 1e-6);
};

// Updates both averages and returns the ascent step.
Vector adadelta_step(AdadeltaState& state, const Vector& grad);

struct FitOptions {
  int iterations = 10000;
  Index factors = 4;
  int draws_per_iteration = 1;
  double clip = 1e4;
  double upsilon = 0.95;
  double alpha = 1e-6;
  double b_init = 0.01;
  double d_init = 0.1;
  int summary_draws = 10000;
  // Fraction of final iterations whose sampled y_u feed the HVB summaries.
  double summary_window = 0.2;
  double skip_flag_fraction = 0.01;
  double low_acceptance = 0.05;

  void validate() const;
};

struct ParamSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
};

struct FitResult {
  std::string method;
  bool elbo_is_proxy = false;
  VParams vp;
  std::vector<double> elbo_trace;
  Matrix mean_trajectory;  // iterations x S, unconstrained theta means
  std::vector<ParamSummary> theta;  // constrained space
  Vector theta_mean_unconstrained;
  Vector y_u_mean;
  Vector y_u_sd;
  int iterations = 0;
  std::uint64_t skipped = 0;
  std::uint64_t clipped = 0;
  bool flagged = false;
  std::vector<std::string> warnings;
  std::vector<AcceptanceCounter> acceptance;
  double seconds = 0.0;
};

// Joint VB: reparameterized stochastic gradient ascent over chi = (theta, y_u); vp0 has dimension S + n_u.
FitResult jvb_fit(const LogDensity& target, const VParams& vp0, const FitOptions& opts, Rng& rng);

// Hybrid VB: Gaussian q over theta only; vp0 has dimension S and `sampler` draws y_u given theta.
FitResult hvb_fit(const LogDensity& target, const VParams& vp0, MissingSampler& sampler,
                  const FitOptions& opts, Rng& rng);

// Trailing moving average with window `w` (shorter at the start).
std::vector<double> moving_average(const std::vector<double>& x, int w);
// Largest absolute least-squares slope across columns over the last `window` rows.
double max_abs_slope(const Matrix& trajectory, int window);

}  // namespace spatialvb
