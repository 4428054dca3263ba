#include "spatialvb/missing_mech.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <string>

#include <Eigen/SparseLU>

namespace spatialvb {

MissingPattern MissingPattern::from_indicator(std::vector<int> m) {
  MissingPattern p;
  p.slot_.assign(m.size(), -1);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != 0 && m[i] != 1) {
      throw InvalidArgument("missing indicator must be 0 or 1 (unit " + std::to_string(i) + ")");
    }
    if (m[i]) {
      p.slot_[i] = static_cast<Index>(p.unobserved_.size());
      p.unobserved_.push_back(static_cast<Index>(i));
    } else {
      p.observed_.push_back(static_cast<Index>(i));
    }
  }
  p.m_ = std::move(m);
  return p;
}

MissingPattern MissingPattern::all_observed(Index n) {
  return from_indicator(std::vector<int>(static_cast<std::size_t>(n), 0));
}

Vector MissingPattern::assemble(const Vector& y_observed_full, const Vector& y_u) const {
  if (y_observed_full.size() != n() || y_u.size() != n_u()) {
    throw InvalidArgument("assemble: dimension mismatch");
  }
  Vector y = y_observed_full;
  for (Index k = 0; k < n_u(); ++k) y(unobserved_[k]) = y_u(k);
  return y;
}

void SelectionModel::validate(Index n) const {
  if (x_star.rows() != n || x_star.cols() != psi_x.size()) {
    throw InvalidArgument("selection design must be n x (q+1) matching psi_x");
  }
  for (Index i = 0; i < n; ++i) {
    if (x_star(i, 0) != 1.0) throw InvalidArgument("first column of X* must be all ones");
  }
}

Vector SelectionModel::linear_predictor(const Vector& y) const {
  return x_star * psi_x + psi_y * y;
}

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

namespace {

void check_selection_dims(const MissingPattern& pattern, const Vector& y,
                          const SelectionModel& sel) {
  if (y.size() != pattern.n() || sel.x_star.rows() != pattern.n() ||
      sel.x_star.cols() != sel.psi_x.size()) {
    throw InvalidArgument("selection model: dimension mismatch");
  }
}

}  // namespace

double selection_log_prob(const MissingPattern& pattern, const Vector& y,
                          const SelectionModel& sel) {
  check_selection_dims(pattern, y, sel);
  const Vector t = sel.linear_predictor(y);
  double acc = 0.0;
  for (Index i = 0; i < t.size(); ++i) {
    acc += (pattern.missing(i) ? t(i) : 0.0) - softplus(t(i));
  }
  return acc;
}

double selection_log_prob(const MissingPattern& pattern, const Vector& y,
                          const SelectionModel& sel, const IndexList& units) {
  check_selection_dims(pattern, y, sel);
  double acc = 0.0;
  for (Index i : units) {
    const double t = sel.x_star.row(i).dot(sel.psi_x) + sel.psi_y * y(i);
    acc += (pattern.missing(i) ? t : 0.0) - softplus(t);
  }
  return acc;
}

Vector selection_grad_psi(const MissingPattern& pattern, const Vector& y,
                          const SelectionModel& sel) {
  check_selection_dims(pattern, y, sel);
  const Vector t = sel.linear_predictor(y);
  const Index q1 = sel.psi_x.size();
  Vector resid(t.size());
  for (Index i = 0; i < t.size(); ++i) {
    resid(i) = (pattern.missing(i) ? 1.0 : 0.0) - logistic(t(i));
  }
  Vector g(q1 + 1);
  g.head(q1) = sel.x_star.transpose() * resid;
  g(q1) = resid.dot(y);
  return g;
}

Vector selection_grad_yu(const MissingPattern& pattern, const Vector& y,
                         const SelectionModel& sel) {
  check_selection_dims(pattern, y, sel);
  Vector g(pattern.n_u());
  for (Index k = 0; k < pattern.n_u(); ++k) {
    const Index i = pattern.unobserved()[k];
    const double t = sel.x_star.row(i).dot(sel.psi_x) + sel.psi_y * y(i);
    g(k) = ((pattern.missing(i) ? 1.0 : 0.0) - logistic(t)) * sel.psi_y;
  }
  return g;
}

void SimConfig::validate() const {
  if (side < 2) throw InvalidArgument("side must be at least 2");
  if (r < 1) throw InvalidArgument("r must be at least 1");
  if (beta_true && beta_true->size() != r + 1) {
    throw InvalidArgument("beta_true must have r + 1 entries");
  }
  if (!(sigma2_true > 0.0)) throw InvalidArgument("sigma2_true must be positive");
  if (!(rho_true > -1.0 && rho_true < 1.0)) throw InvalidArgument("rho_true must be in (-1, 1)");
  if (const auto* mar = std::get_if<MarMechanism>(&mechanism)) {
    if (!(mar->missing_fraction > 0.0 && mar->missing_fraction < 1.0)) {
      throw InvalidArgument("missing_fraction must be in (0, 1)");
    }
  } else {
    const auto& mnar = std::get<MnarMechanism>(mechanism);
    if (mnar.covariate_index < 0 || mnar.covariate_index >= r) {
      throw InvalidArgument("covariate_index must be in [0, r)");
    }
  }
}

void shuffle_indices(IndexList& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    if (j >= i) j = i - 1;
    std::swap(idx[i - 1], idx[j]);
  }
}

SimulatedSem simulate_sem(const SimConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SpatialWeights w = row_normalize(build_rook_grid_weights(cfg.side));
  const Index n = w.n();
  const RhoInterval interval = rho_interval(w);
  if (!interval.contains(cfg.rho_true)) {
    throw InvalidArgument("rho_true outside the admissible interval of the generated W");
  }
  Vector beta(cfg.r + 1);
  if (cfg.beta_true) {
    beta = *cfg.beta_true;
  } else {
    for (Index j = 0; j <= cfg.r; ++j) {
      beta(j) = std::min(5.0, std::floor(1.0 + 5.0 * rng.uniform()));
    }
  }
  Matrix x(n, cfg.r + 1);
  x.col(0).setOnes();
  for (Index j = 1; j <= cfg.r; ++j) {
    for (Index i = 0; i < n; ++i) x(i, j) = rng.normal();
  }
  const Vector e = std::sqrt(cfg.sigma2_true) * rng.normal_vector(n);
  SparseMatrix a(n, n);
  a.setIdentity();
  a -= cfg.rho_true * w.matrix();
  a.makeCompressed();
  Eigen::SparseLU<SparseMatrix> lu(a);
  if (lu.info() != Eigen::Success) throw NumericalError("factorization of I - rho W failed");
  const Vector v = lu.solve(e);
  Vector y = x * beta + v;
  return {std::move(y), std::move(x), std::move(w), SemParams{beta, cfg.sigma2_true, cfg.rho_true}};
}

MissingPattern generate_mar(const Vector& y, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw InvalidArgument("missing fraction must be in (0, 1)");
  }
  const Index n = y.size();
  // Round half to even under the default floating-point rounding mode.
  const auto n_u = static_cast<Index>(std::nearbyint(static_cast<double>(n) * fraction));
  if (n_u < 1) throw InvalidArgument("missing fraction selects fewer than one unit");
  if (n_u >= n) throw InvalidArgument("missing fraction leaves no observed unit");
  IndexList idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  shuffle_indices(idx, rng);
  std::vector<int> m(static_cast<std::size_t>(n), 0);
  for (Index k = 0; k < n_u; ++k) m[idx[k]] = 1;
  return MissingPattern::from_indicator(std::move(m));
}

MissingPattern generate_mnar(const Vector& y, const SelectionModel& sel, std::uint64_t seed) {
  sel.validate(y.size());
  const Vector t = sel.linear_predictor(y);
  Rng rng(seed);
  std::vector<int> m(static_cast<std::size_t>(y.size()), 0);
  for (Index i = 0; i < y.size(); ++i) m[i] = rng.uniform() < logistic(t(i)) ? 1 : 0;
  return MissingPattern::from_indicator(std::move(m));
}

Matrix selection_design(const Matrix& x, Index covariate_index) {
  if (covariate_index < 0 || covariate_index + 1 >= x.cols()) {
    throw InvalidArgument("covariate_index out of range");
  }
  Matrix xs(x.rows(), 2);
  xs.col(0).setOnes();
  xs.col(1) = x.col(covariate_index + 1);
  return xs;
}

BlockPartition make_blocks(const MissingPattern& pattern, Index block_size, std::uint64_t seed) {
  const Index n_u = pattern.n_u();
  if (block_size < 1 || block_size > n_u) {
    throw InvalidArgument("block size " + std::to_string(block_size) + " must be in [1, " +
                          std::to_string(n_u) + "]");
  }
  IndexList idx = pattern.unobserved();
  Rng rng(seed);
  shuffle_indices(idx, rng);
  BlockPartition out;
  out.block_size = block_size;
  for (Index start = 0; start < n_u; start += block_size) {
    const Index stop = std::min(n_u, start + block_size);
    out.blocks.emplace_back(idx.begin() + start, idx.begin() + stop);
  }
  return out;
}

Index default_block_size_mnar(Index n_u) {
  const double frac = n_u <= 1000 ? 0.25 : 0.10;
  return std::max<Index>(1, static_cast<Index>(std::ceil(static_cast<double>(n_u) * frac)));
}

Index default_block_size_mar(Index n_u) { return std::max<Index>(1, std::min<Index>(500, n_u)); }

}  // namespace spatialvb
