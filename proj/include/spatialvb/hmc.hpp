#pragma once

// Fixed-step leapfrog Hamiltonian Monte Carlo over chi = (theta, y_u), used as
// the exact-posterior baseline.

#include <cstdint>
#include <optional>

#include <Eigen/Cholesky>

#include "spatialvb/posterior.hpp"
#include "spatialvb/rng.hpp"

namespace spatialvb {

// Mass matrix R of the kinetic energy K(s) = s^T R^{-1} s / 2.
class MassMatrix {
 public:
  enum class Kind { kIdentity, kDiagonal, kDense };

  MassMatrix() = default;
  static MassMatrix identity() { return {}; }
  static MassMatrix diagonal(Vector diag);
  static MassMatrix dense(const Matrix& r);

  Kind kind() const { return kind_; }
  // Diagonal of R (ones for the identity).
  Vector diag(Index dim) const;
  void check_dim(Index dim) const;

  // s ~ N(0, R)
  Vector sample_momentum(Index dim, Rng& rng) const;
  // R^{-1} s
  Vector velocity(const Vector& s) const;
  double kinetic(const Vector& s) const { return 0.5 * s.dot(velocity(s)); }

 private:
  Kind kind_ = Kind::kIdentity;
  Vector diag_;
  Matrix lower_;  // Cholesky factor of a dense R
  std::optional<Eigen::LLT<Matrix>> llt_;
};

struct HmcConfig {
  int n_samples = 5000;
  int leapfrog_steps = 20;
  double step_size = 0.05;
  MassMatrix mass;
  int burn_in = 1000;
  // Pilot runs that rescale the step size until acceptance lies in
  // [target_low, target_high].
  bool tune_step_size = true;
  int pilot_iterations = 200;
  int max_tuning_rounds = 20;
  double target_low = 0.6;
  double target_high = 0.9;
  // Replace the mass matrix by the inverse of warm-up marginal variances.
  bool adapt_mass = false;
  int adapt_iterations = 1000;

  void validate(Index dim) const;
};

// H(chi, s) = U(chi) + K(s) with U = -log h.
class Hamiltonian {
 public:
  Hamiltonian(const LogDensity& target, MassMatrix mass);

  Index dim() const { return target_->dim_theta() + target_->dim_missing(); }
  const MassMatrix& mass() const { return mass_; }
  void set_mass(MassMatrix mass);

  // U(chi) and its gradient; +inf when the point is outside the support.
  double potential(const Vector& chi, Vector* grad) const;
  double energy(const Vector& chi, const Vector& s) const;

  struct Trajectory {
    Vector chi;
    Vector s;
    double potential = 0.0;
    bool finite = true;
  };
  // L leapfrog steps: half momentum step, alternating full steps, half
  // momentum step.
  Trajectory leapfrog(const Vector& chi, const Vector& s, double eps, int steps) const;

 private:
  const LogDensity* target_;
  MassMatrix mass_;
};

struct HmcResult {
  Matrix draws;  // n_samples x (S + n_u)
  double acceptance_rate = 0.0;
  std::uint64_t accepted = 0;
  std::uint64_t nonfinite = 0;  // rejected for a non-finite Hamiltonian
  double step_size = 0.0;
  int leapfrog_steps = 0;
  Vector mass_diag;
};

// One Metropolis-corrected HMC transition; returns true on acceptance.
bool hmc_transition(const Hamiltonian& ham, Vector& chi, double eps, int steps, Rng& rng,
                    bool* nonfinite = nullptr);

HmcResult hmc_run(const LogDensity& target, const HmcConfig& cfg, const Vector& theta0,
                  const Vector& y_u0, Rng& rng);

}  // namespace spatialvb
