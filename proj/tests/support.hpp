#pragma once

// Shared fixtures and independent dense oracles for the test suites.

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "spatialvb/missing_mech.hpp"
#include "spatialvb/posterior.hpp"
#include "spatialvb/rng.hpp"
#include "spatialvb/spatial_core.hpp"

namespace oracle {

using namespace spatialvb;

inline Matrix dense_a(double rho, const SpatialWeights& w) {
  const Index n = w.n();
  return Matrix::Identity(n, n) - rho * Matrix(w.matrix());
}

inline Matrix dense_precision(double rho, const SpatialWeights& w) {
  const Matrix a = dense_a(rho, w);
  return a.transpose() * a;
}

// Covariance-parameterized Gaussian log density; never touches a precision.
inline double mvn_logpdf(const Vector& y, const Vector& mean, const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  const Matrix l = llt.matrixL();
  const Vector z = l.triangularView<Eigen::Lower>().solve(y - mean);
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi) - 0.5 * logdet -
         0.5 * z.squaredNorm();
}

// Conditional of the `second` block given the `first` block under
// N(mean, cov), via the Schur complement of the covariance.
struct Conditional {
  Vector mean;
  Matrix cov;
};
inline Conditional schur_conditional(const Vector& mean, const Matrix& cov, const IndexList& given,
                                     const Vector& given_values, const IndexList& target) {
  auto sub = [&](const IndexList& r, const IndexList& c) {
    Matrix m(r.size(), c.size());
    for (std::size_t i = 0; i < r.size(); ++i)
      for (std::size_t j = 0; j < c.size(); ++j) m(i, j) = cov(r[i], c[j]);
    return m;
  };
  const Matrix s_tt = sub(target, target);
  const Matrix s_tg = sub(target, given);
  const Matrix s_gg = sub(given, given);
  Vector mu_t(target.size()), mu_g(given.size());
  for (std::size_t i = 0; i < target.size(); ++i) mu_t(i) = mean(target[i]);
  for (std::size_t i = 0; i < given.size(); ++i) mu_g(i) = mean(given[i]);
  const Eigen::LDLT<Matrix> ldlt(s_gg);
  Conditional c;
  c.mean = mu_t + s_tg * ldlt.solve(given_values - mu_g);
  c.cov = s_tt - s_tg * ldlt.solve(s_tg.transpose());
  return c;
}

struct Instance {
  SpatialWeights w;
  Matrix x;
  Vector y;  // full response
  MissingPattern pattern;
  Matrix x_star;
};

inline MissingPattern random_pattern(Index n, Index n_u, Rng& rng) {
  IndexList idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[i] = i;
  shuffle_indices(idx, rng);
  std::vector<int> m(static_cast<std::size_t>(n), 0);
  for (Index k = 0; k < n_u; ++k) m[idx[k]] = 1;
  return MissingPattern::from_indicator(m);
}

inline Instance random_instance(Index side, Index n_u, Rng& rng, Index r = 2) {
  SpatialWeights w = row_normalize(build_rook_grid_weights(side));
  const Index n = w.n();
  Matrix x(n, r + 1);
  x.col(0).setOnes();
  for (Index j = 1; j <= r; ++j)
    for (Index i = 0; i < n; ++i) x(i, j) = rng.normal();
  Vector beta = rng.normal_vector(r + 1);
  Vector y = x * beta + rng.normal_vector(n);
  Matrix xs(n, 2);
  xs.col(0).setOnes();
  xs.col(1) = x.col(1);
  return {std::move(w), std::move(x), std::move(y), random_pattern(n, n_u, rng), std::move(xs)};
}

inline SemData sem_data(const Instance& in, Mechanism mech) {
  SemData d{in.x, in.w, in.y, in.pattern, std::nullopt};
  if (mech == Mechanism::kMnar) d.x_star = in.x_star;
  return d;
}

inline Vector random_theta(const ThetaLayout& layout, Rng& rng) {
  Vector theta(layout.size());
  for (Index j = 0; j < layout.n_beta; ++j) theta(j) = rng.normal();
  theta(layout.gamma()) = 0.4 * rng.normal();
  theta(layout.rho_logit()) = 0.5 + 0.7 * rng.normal();
  if (layout.mechanism == Mechanism::kMnar) {
    for (Index j = layout.psi(); j <= layout.psi_y(); ++j) theta(j) = 0.5 * rng.normal();
  }
  return theta;
}

inline Vector gather_units(const Vector& v, const IndexList& idx) {
  Vector out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out(i) = v(idx[i]);
  return out;
}

// Gaussian "posterior" over (theta, y_u) with known mean and covariance.
class GaussianTarget final : public LogDensity {
 public:
  GaussianTarget(Index s, Vector mean, const Matrix& cov)
      : s_(s), mean_(std::move(mean)), cov_(cov), precision_(cov.inverse()) {
    Eigen::LLT<Matrix> llt(cov);
    const Matrix l = llt.matrixL();
    log_norm_ = -0.5 * static_cast<double>(mean_.size()) * std::log(2.0 * std::numbers::pi) -
                l.diagonal().array().log().sum();
  }
  Index dim_theta() const override { return s_; }
  Index dim_missing() const override { return mean_.size() - s_; }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }
  const Matrix& precision() const { return precision_; }
  double log_h(const Vector& theta, const Vector& y_u) const override {
    return evaluate(theta, y_u).log_h;
  }
  Evaluation evaluate(const Vector& theta, const Vector& y_u) const override {
    Vector z(mean_.size());
    z << theta, y_u;
    const Vector r = z - mean_;
    const Vector g = -(precision_ * r);
    Evaluation e;
    e.log_h = log_norm_ - 0.5 * r.dot(precision_ * r);
    e.grad_theta = g.head(s_);
    e.grad_yu = g.tail(dim_missing());
    return e;
  }

 private:
  Index s_;
  Vector mean_;
  Matrix cov_;
  Matrix precision_;
  double log_norm_ = 0.0;
};

inline Matrix random_spd(Index d, Rng& rng, double ridge = 0.5) {
  Matrix a(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) a(i, j) = rng.normal();
  return a * a.transpose() / static_cast<double>(d) + ridge * Matrix::Identity(d, d);
}

// Standard error of the mean of a correlated series by batch means.
inline double batch_means_se(const Vector& x, int batches = 50) {
  const Index len = x.size() / batches;
  Vector means(batches);
  for (int b = 0; b < batches; ++b) means(b) = x.segment(b * len, len).mean();
  const double mu = means.mean();
  const double var = (means.array() - mu).square().sum() / (batches - 1);
  return std::sqrt(var / batches);
}

inline double iid_se(const Vector& x) {
  const double mu = x.mean();
  const double var = (x.array() - mu).square().sum() / static_cast<double>(x.size() - 1);
  return std::sqrt(var / static_cast<double>(x.size()));
}

}  // namespace oracle
