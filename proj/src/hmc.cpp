#include "spatialvb/hmc.hpp"

#include <cmath>
#include <limits>

namespace spatialvb {

MassMatrix MassMatrix::diagonal(Vector diag) {
  for (Index i = 0; i < diag.size(); ++i) {
    if (!(diag(i) > 0.0) || !std::isfinite(diag(i))) {
      throw InvalidArgument("diagonal mass entries must be positive and finite");
    }
  }
  MassMatrix m;
  m.kind_ = Kind::kDiagonal;
  m.diag_ = std::move(diag);
  return m;
}

MassMatrix MassMatrix::dense(const Matrix& r) {
  if (r.rows() != r.cols()) throw InvalidArgument("mass matrix must be square");
  if (!r.isApprox(r.transpose(), 1e-12)) throw InvalidArgument("mass matrix must be symmetric");
  MassMatrix m;
  m.kind_ = Kind::kDense;
  m.llt_.emplace(r);
  if (m.llt_->info() != Eigen::Success) {
    throw InvalidArgument("mass matrix must be positive definite");
  }
  m.lower_ = m.llt_->matrixL();
  m.diag_ = r.diagonal();
  return m;
}

Vector MassMatrix::diag(Index dim) const {
  return kind_ == Kind::kIdentity ? Vector::Ones(dim) : diag_;
}

void MassMatrix::check_dim(Index dim) const {
  if (kind_ != Kind::kIdentity && diag_.size() != dim) {
    throw InvalidArgument("mass matrix dimension does not match the target");
  }
}

Vector MassMatrix::sample_momentum(Index dim, Rng& rng) const {
  const Vector z = rng.normal_vector(dim);
  switch (kind_) {
    case Kind::kIdentity:
      return z;
    case Kind::kDiagonal:
      return diag_.cwiseSqrt().cwiseProduct(z);
    case Kind::kDense:
      return lower_ * z;
  }
  return z;
}

Vector MassMatrix::velocity(const Vector& s) const {
  switch (kind_) {
    case Kind::kIdentity:
      return s;
    case Kind::kDiagonal:
      return s.cwiseQuotient(diag_);
    case Kind::kDense:
      return llt_->solve(s);
  }
  return s;
}

void HmcConfig::validate(Index dim) const {
  if (n_samples < 1) throw InvalidArgument("HMC n_samples must be at least 1");
  if (leapfrog_steps < 1) throw InvalidArgument("HMC leapfrog steps must be at least 1");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) {
    throw InvalidArgument("HMC step size must be positive");
  }
  if (burn_in < 0) throw InvalidArgument("HMC burn-in must be non-negative");
  if (tune_step_size && (pilot_iterations < 1 || max_tuning_rounds < 1)) {
    throw InvalidArgument("HMC tuning needs positive pilot length and round count");
  }
  if (!(0.0 < target_low && target_low < target_high && target_high <= 1.0)) {
    throw InvalidArgument("HMC acceptance target band must satisfy 0 < low < high <= 1");
  }
  if (adapt_mass && adapt_iterations < 10) {
    throw InvalidArgument("HMC mass adaptation needs at least 10 iterations");
  }
  mass.check_dim(dim);
}

Hamiltonian::Hamiltonian(const LogDensity& target, MassMatrix mass)
    : target_(&target), mass_(std::move(mass)) {
  mass_.check_dim(dim());
}

void Hamiltonian::set_mass(MassMatrix mass) {
  mass.check_dim(dim());
  mass_ = std::move(mass);
}

double Hamiltonian::potential(const Vector& chi, Vector* grad) const {
  const Index s = target_->dim_theta();
  const Index nu = target_->dim_missing();
  const Vector theta = chi.head(s);
  const Vector y_u = chi.tail(nu);
  try {
    if (!grad) return -target_->log_h(theta, y_u);
    const LogDensity::Evaluation ev = target_->evaluate(theta, y_u);
    grad->resize(s + nu);
    grad->head(s) = -ev.grad_theta;
    grad->tail(nu) = -ev.grad_yu;
    return -ev.log_h;
  } catch (const DomainError&) {
    return std::numeric_limits<double>::infinity();
  } catch (const NumericalError&) {
    return std::numeric_limits<double>::infinity();
  }
}

double Hamiltonian::energy(const Vector& chi, const Vector& s) const {
  return potential(chi, nullptr) + mass_.kinetic(s);
}

Hamiltonian::Trajectory Hamiltonian::leapfrog(const Vector& chi, const Vector& s, double eps,
                                              int steps) const {
  Trajectory t{chi, s, 0.0, true};
  Vector grad;
  t.potential = potential(t.chi, &grad);
  if (!std::isfinite(t.potential)) {
    t.finite = false;
    return t;
  }
  t.s -= 0.5 * eps * grad;
  for (int l = 1; l <= steps; ++l) {
    t.chi += eps * mass_.velocity(t.s);
    t.potential = potential(t.chi, &grad);
    if (!std::isfinite(t.potential) || !grad.allFinite()) {
      t.finite = false;
      return t;
    }
    t.s -= (l < steps ? 1.0 : 0.5) * eps * grad;
  }
  return t;
}

bool hmc_transition(const Hamiltonian& ham, Vector& chi, double eps, int steps, Rng& rng,
                    bool* nonfinite) {
  const Vector s0 = ham.mass().sample_momentum(ham.dim(), rng);
  const double h0 = ham.potential(chi, nullptr) + ham.mass().kinetic(s0);
  const Hamiltonian::Trajectory t = ham.leapfrog(chi, s0, eps, steps);
  const double h1 = t.finite ? t.potential + ham.mass().kinetic(t.s)
                             : std::numeric_limits<double>::infinity();
  const double u = rng.uniform();
  if (!std::isfinite(h1) || !std::isfinite(h0)) {
    if (nonfinite) *nonfinite = true;
    return false;
  }
  if (nonfinite) *nonfinite = false;
  // Accept with probability min(1, exp(H - H*)).
  if (std::log(u) < h0 - h1) {
    chi = t.chi;
    return true;
  }
  return false;
}

namespace {

// Runs `iters` transitions and returns the acceptance fraction.
double run_block(const Hamiltonian& ham, Vector& chi, double eps, int steps, int iters, Rng& rng,
                 std::uint64_t& nonfinite, Matrix* trace = nullptr) {
  int acc = 0;
  for (int i = 0; i < iters; ++i) {
    bool bad = false;
    if (hmc_transition(ham, chi, eps, steps, rng, &bad)) ++acc;
    if (bad) ++nonfinite;
    if (trace) trace->row(i) = chi.transpose();
  }
  return static_cast<double>(acc) / static_cast<double>(iters);
}

double tune_step(const Hamiltonian& ham, Vector& chi, const HmcConfig& cfg, double eps, Rng& rng,
                 std::uint64_t& nonfinite) {
  for (int round = 0; round < cfg.max_tuning_rounds; ++round) {
    const double rate =
        run_block(ham, chi, eps, cfg.leapfrog_steps, cfg.pilot_iterations, rng, nonfinite);
    if (rate < cfg.target_low) {
      eps *= 0.5;
    } else if (rate > cfg.target_high) {
      eps *= 1.5;
    } else {
      break;
    }
  }
  return eps;
}

}  // namespace

HmcResult hmc_run(const LogDensity& target, const HmcConfig& cfg, const Vector& theta0,
                  const Vector& y_u0, Rng& rng) {
  const Index dim = target.dim_theta() + target.dim_missing();
  cfg.validate(dim);
  if (theta0.size() != target.dim_theta() || y_u0.size() != target.dim_missing()) {
    throw InvalidArgument("HMC initial state has the wrong dimension");
  }
  Hamiltonian ham(target, cfg.mass);
  Vector chi(dim);
  chi << theta0, y_u0;
  if (!std::isfinite(ham.potential(chi, nullptr))) {
    throw InvalidArgument("HMC initial state has zero posterior density");
  }

  HmcResult out;
  std::uint64_t warm_nonfinite = 0;
  double eps = cfg.step_size;
  if (cfg.tune_step_size) eps = tune_step(ham, chi, cfg, eps, rng, warm_nonfinite);
  if (cfg.adapt_mass) {
    Matrix trace(cfg.adapt_iterations, dim);
    run_block(ham, chi, eps, cfg.leapfrog_steps, cfg.adapt_iterations, rng, warm_nonfinite,
              &trace);
    // Warm-up variances, shrunk slightly towards a small constant.
    const Index half = cfg.adapt_iterations / 2;
    const Matrix tail = trace.bottomRows(cfg.adapt_iterations - half);
    const Vector mean = tail.colwise().mean().transpose();
    const double cnt = static_cast<double>(tail.rows());
    Vector var = (tail.rowwise() - mean.transpose()).colwise().squaredNorm().transpose() /
                 (cnt - 1.0);
    var = (cnt / (cnt + 5.0)) * var.array() + 1e-3 * (5.0 / (cnt + 5.0));
    ham.set_mass(MassMatrix::diagonal(var.cwiseInverse()));
    if (cfg.tune_step_size) eps = tune_step(ham, chi, cfg, eps, rng, warm_nonfinite);
  }
  if (cfg.burn_in > 0) {
    run_block(ham, chi, eps, cfg.leapfrog_steps, cfg.burn_in, rng, warm_nonfinite);
  }

  out.draws.resize(cfg.n_samples, dim);
  for (int i = 0; i < cfg.n_samples; ++i) {
    bool bad = false;
    if (hmc_transition(ham, chi, eps, cfg.leapfrog_steps, rng, &bad)) ++out.accepted;
    if (bad) ++out.nonfinite;
    out.draws.row(i) = chi.transpose();
  }
  out.acceptance_rate = static_cast<double>(out.accepted) / static_cast<double>(cfg.n_samples);
  out.step_size = eps;
  out.leapfrog_steps = cfg.leapfrog_steps;
  out.mass_diag = ham.mass().diag(dim);
  return out;
}

}  // namespace spatialvb
