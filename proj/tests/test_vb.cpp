#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "spatialvb/vb.hpp"
#include "support.hpp"

using namespace spatialvb;

namespace {

VParams random_vparams(Index dim, Index p, Rng& rng) {
  VParams vp;
  vp.mu = rng.normal_vector(dim);
  vp.b = Matrix(dim, p);
  for (Index i = 0; i < dim; ++i)
    for (Index j = 0; j < p; ++j) vp.b(i, j) = 0.5 * rng.normal();
  apply_factor_mask(vp.b);
  vp.d = (0.3 + rng.normal_vector(dim).array().abs()).matrix();
  return vp;
}

// Exact conditional sampler of y_u given theta under a joint Gaussian.
class GaussianConditionalSampler final : public MissingSampler {
 public:
  explicit GaussianConditionalSampler(const oracle::GaussianTarget& t) : t_(&t) {}
  Vector sample(const Vector& theta, Rng& rng) override {
    const Index s = t_->dim_theta();
    const Index nu = t_->dim_missing();
    IndexList given(s), target(nu);
    for (Index i = 0; i < s; ++i) given[i] = i;
    for (Index i = 0; i < nu; ++i) target[i] = s + i;
    const oracle::Conditional c =
        oracle::schur_conditional(t_->mean(), t_->cov(), given, theta, target);
    const Eigen::LLT<Matrix> llt(c.cov);
    return c.mean + Matrix(llt.matrixL()) * rng.normal_vector(nu);
  }
  std::string name() const override { return "exact"; }

 private:
  const oracle::GaussianTarget* t_;
};

// Exact ELBO gradient for a Gaussian target N(m, Sigma) and q = N(mu, C).
struct ExactGradient {
  Vector mu;
  Matrix b;
  Vector d;
};
ExactGradient exact_gradient(const VParams& vp, const oracle::GaussianTarget& t) {
  const Matrix p = t.precision();
  const Matrix cinv = vp.covariance().inverse();
  ExactGradient g;
  g.mu = -p * (vp.mu - t.mean());
  g.b = -p * vp.b + cinv * vp.b;
  apply_factor_mask(g.b);
  g.d = (-p.diagonal() + cinv.diagonal()).cwiseProduct(vp.d);
  return g;
}

}  // namespace

TEST_CASE("variational parameter initialization and masking") {
  const VParams vp = VParams::init(Vector::Zero(5), 3, 0.01, 0.1);
  CHECK(vp.b(0, 1) == 0.0);
  CHECK(vp.b(0, 2) == 0.0);
  CHECK(vp.b(1, 2) == 0.0);
  CHECK(vp.b(1, 1) == 0.01);
  CHECK(vp.b(4, 2) == 0.01);
  CHECK((vp.d.array() == 0.1).all());
  CHECK_NOTHROW(vp.validate());
  VParams bad = vp;
  bad.b(0, 2) = 1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = vp;
  bad.d(3) = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  CHECK_THROWS_AS(VParams::init(Vector::Zero(2), 3).validate(), InvalidArgument);

  const VParams h = vp.head(2);
  CHECK(h.dim() == 2);
  CHECK((h.covariance() - vp.covariance().topLeftCorner(2, 2)).norm() < 1e-15);
}

TEST_CASE("Woodbury solve and log-determinant against dense algebra") {
  Rng rng(1);
  for (int rep = 0; rep < 30; ++rep) {
    const Index dim = 2 + rep * 7 % 200;
    const Index p = 1 + rep % std::min<Index>(8, dim);
    const VParams vp = random_vparams(dim, p, rng);
    const Matrix c = vp.covariance();
    const Vector v = rng.normal_vector(dim);
    const FactorCovariance fc(vp.b, vp.d);
    const Vector dense = c.ldlt().solve(v);
    CHECK((fc.solve(v) - dense).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + dense.cwiseAbs().maxCoeff()));
    CHECK((woodbury_solve(vp.b, vp.d, v) - dense).cwiseAbs().maxCoeff() <=
          1e-9 * (1.0 + dense.cwiseAbs().maxCoeff()));
    const Eigen::LLT<Matrix> llt(c);
    const double ld = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
    CHECK(fc.log_det() == doctest::Approx(ld).epsilon(1e-10));
  }
}

TEST_CASE("Sherman-Morrison special case") {
  Vector b(3), d(3), v(3);
  b << 1.0, 2.0, -1.0;
  d << 1.0, 0.5, 2.0;
  v << 0.3, -0.2, 1.0;
  const Vector dinv2 = d.cwiseAbs2().cwiseInverse();
  const Vector ainv_v = dinv2.cwiseProduct(v);
  const Vector ainv_b = dinv2.cwiseProduct(b);
  const Vector expect = ainv_v - ainv_b * (b.dot(ainv_v) / (1.0 + b.dot(ainv_b)));
  CHECK((woodbury_solve(Matrix(b), d, v) - expect).norm() < 1e-14);
}

TEST_CASE("log q and its gradient") {
  Rng rng(2);
  const VParams vp = random_vparams(6, 2, rng);
  const Vector x = rng.normal_vector(6);
  CHECK(log_q(vp, x) == doctest::Approx(oracle::mvn_logpdf(x, vp.mu, vp.covariance())).epsilon(1e-12));
  const Vector g = grad_log_q(vp, x);
  CHECK((g + vp.covariance().inverse() * (x - vp.mu)).norm() < 1e-10);
}

TEST_CASE("variational draws have covariance B B^T + D^2") {
  Rng rng(3);
  const VParams vp = random_vparams(4, 2, rng);
  const int n = 200000;
  Matrix acc = Matrix::Zero(4, 4);
  Vector m = Vector::Zero(4);
  for (int i = 0; i < n; ++i) {
    const VariationalDraw dr = draw_variational(vp, rng);
    CHECK_MESSAGE((dr.value - transform(vp, dr.draw)).norm() == 0.0, "transform");
    m += dr.value;
    acc += (dr.value - vp.mu) * (dr.value - vp.mu).transpose();
  }
  m /= n;
  acc /= n;
  const Matrix c = vp.covariance();
  for (Index i = 0; i < 4; ++i) {
    CHECK(std::abs(m(i) - vp.mu(i)) < 5 * std::sqrt(c(i, i) / n));
    for (Index j = 0; j < 4; ++j) {
      CHECK(std::abs(acc(i, j) - c(i, j)) < 5 * std::sqrt((c(i, i) * c(j, j) + c(i, j) * c(i, j)) / n));
    }
  }
}

TEST_CASE("JVB gradient estimator is unbiased") {
  Rng rng(4);
  for (Index dim : {3, 6}) {
    for (Index p : {1, 2}) {
      const VParams vp = random_vparams(dim, p, rng);
      for (bool self : {true, false}) {
        const Matrix cov = self ? vp.covariance() : oracle::random_spd(dim, rng);
        const Vector mean = self ? vp.mu : rng.normal_vector(dim);
        const oracle::GaussianTarget t(dim - 1, mean, cov);
        const ExactGradient ex = exact_gradient(vp, t);
        const int n = 200000;
        Vector smu = Vector::Zero(dim), smu2 = Vector::Zero(dim);
        Vector sd = Vector::Zero(dim), sd2 = Vector::Zero(dim);
        Matrix sb = Matrix::Zero(dim, p), sb2 = Matrix::Zero(dim, p);
        double max_elbo_dev = 0.0;
        for (int i = 0; i < n; ++i) {
          const GradientEstimate g = jvb_gradient_estimate(vp, t, rng);
          smu += g.grad_mu;
          smu2 += g.grad_mu.cwiseAbs2();
          sd += g.grad_d;
          sd2 += g.grad_d.cwiseAbs2();
          sb += g.grad_b;
          sb2 += g.grad_b.cwiseAbs2();
          if (self) max_elbo_dev = std::max(max_elbo_dev, std::abs(g.elbo));
        }
        auto check = [&](double sum, double sum2, double expect) {
          const double mean_est = sum / n;
          const double se = std::sqrt(std::max(0.0, sum2 / n - mean_est * mean_est) / n);
          CHECK(std::abs(mean_est - expect) <= 5 * se + 1e-12);
        };
        for (Index i = 0; i < dim; ++i) {
          check(smu(i), smu2(i), ex.mu(i));
          check(sd(i), sd2(i), ex.d(i));
          for (Index j = 0; j < p; ++j) check(sb(i, j), sb2(i, j), ex.b(i, j));
        }
        if (self) {
          CHECK(max_elbo_dev < 1e-9);
          CHECK(ex.mu.norm() < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("HVB gradient estimator with exact conditional draws") {
  // E over theta ~ q and y_u ~ p(y_u | theta) of the HVB estimate equals the
  // exact ELBO gradient of the theta marginal.
  Rng rng(5);
  const Index s = 3, nu = 2;
  const Matrix cov = oracle::random_spd(s + nu, rng);
  const oracle::GaussianTarget t(s, rng.normal_vector(s + nu), cov);
  const oracle::GaussianTarget marginal(s - 1, t.mean().head(s), cov.topLeftCorner(s, s));
  const VParams vp = random_vparams(s, 2, rng);
  GaussianConditionalSampler sampler(t);
  const ExactGradient ex = exact_gradient(vp, marginal);
  const int n = 200000;
  Vector sum = Vector::Zero(s), sum2 = Vector::Zero(s);
  for (int i = 0; i < n; ++i) {
    const ReparamDraw z = draw_reparam(s, 2, rng);
    const Vector y_u = sampler.sample(transform(vp, z), rng);
    const GradientEstimate g = hvb_gradient_estimate(vp, t, y_u, z);
    sum += g.grad_mu;
    sum2 += g.grad_mu.cwiseAbs2();
  }
  for (Index i = 0; i < s; ++i) {
    const double m = sum(i) / n;
    const double se = std::sqrt((sum2(i) / n - m * m) / n);
    CHECK(std::abs(m - ex.mu(i)) < 5 * se);
  }
}

TEST_CASE("ADADELTA step by hand") {
  AdadeltaState st = AdadeltaState::zeros(1, 0.95, 1e-6);
  Vector g(1);
  g << 2.0;
  const double eg2 = 0.05 * 4.0;
  const double step1 = std::sqrt(1e-6 / (eg2 + 1e-6)) * 2.0;
  const Vector d1 = adadelta_step(st, g);
  CHECK(d1(0) == doctest::Approx(step1).epsilon(1e-14));
  CHECK(st.e_grad2(0) == doctest::Approx(eg2).epsilon(1e-14));
  const double ed2 = 0.05 * step1 * step1;
  CHECK(st.e_delta2(0) == doctest::Approx(ed2).epsilon(1e-14));

  g << -1.0;
  const double eg2b = 0.95 * eg2 + 0.05;
  const double step2 = -std::sqrt((ed2 + 1e-6) / (eg2b + 1e-6));
  CHECK(adadelta_step(st, g)(0) == doctest::Approx(step2).epsilon(1e-14));
  CHECK_THROWS_AS(adadelta_step(st, Vector::Zero(2)), InvalidArgument);
}

TEST_CASE("JVB fit recovers a Gaussian target") {
  Rng rng(6);
  const Index dim = 4;
  Matrix cov = oracle::random_spd(dim, rng, 0.3);
  const oracle::GaussianTarget t(2, rng.normal_vector(dim), cov);
  FitOptions o;
  o.iterations = 20000;
  o.factors = 2;
  o.summary_draws = 20000;
  const FitResult r = jvb_fit(t, VParams::init(Vector::Zero(dim), 2), o, rng);
  CHECK(r.skipped == 0u);
  CHECK(!r.flagged);
  CHECK(r.elbo_trace.size() == 20000u);
  CHECK(r.mean_trajectory.rows() == 20000);
  CHECK(r.mean_trajectory.cols() == 2);
  for (Index i = 0; i < dim; ++i) CHECK(std::abs(r.vp.mu(i) - t.mean()(i)) < 0.05);
  for (Index i = 0; i < 2; ++i) {
    CHECK(std::abs(r.theta[i].mean - t.mean()(i)) < 0.05);
    CHECK(r.theta[i].sd == doctest::Approx(std::sqrt(cov(i, i))).epsilon(0.15));
  }
  CHECK((r.y_u_mean - t.mean().tail(2)).cwiseAbs().maxCoeff() < 0.05);
  const auto smooth = moving_average(r.elbo_trace, 500);
  CHECK(smooth.back() > smooth[999]);
  CHECK(std::abs(smooth.back()) < 0.2);  // the ELBO of an exact fit is log Z = 0
}

TEST_CASE("HVB fit recovers the theta marginal") {
  Rng rng(7);
  const Index s = 2, nu = 3;
  const Matrix cov = oracle::random_spd(s + nu, rng, 0.3);
  const oracle::GaussianTarget t(s, rng.normal_vector(s + nu), cov);
  GaussianConditionalSampler sampler(t);
  FitOptions o;
  o.iterations = 20000;
  o.factors = 2;
  const FitResult r = hvb_fit(t, VParams::init(Vector::Zero(s), 2), sampler, o, rng);
  CHECK(r.elbo_is_proxy);
  CHECK(r.method == "hvb-exact");
  CHECK(r.mean_trajectory.cols() == s);
  for (Index i = 0; i < s; ++i) CHECK(std::abs(r.vp.mu(i) - t.mean()(i)) < 0.05);
  // Summaries of y_u come from sampled draws late in the run.
  for (Index k = 0; k < nu; ++k) {
    CHECK(std::abs(r.y_u_mean(k) - t.mean()(s + k)) < 0.1);
    CHECK(r.y_u_sd(k) == doctest::Approx(std::sqrt(cov(s + k, s + k))).epsilon(0.15));
  }
  CHECK(max_abs_slope(r.mean_trajectory, 2000) < 1e-4);
}

TEST_CASE("factor mask is preserved through fitting") {
  Rng rng(8);
  const oracle::GaussianTarget t(2, rng.normal_vector(4), oracle::random_spd(4, rng));
  FitOptions o;
  o.iterations = 500;
  o.factors = 3;
  const FitResult r = jvb_fit(t, VParams::init(Vector::Zero(4), 3), o, rng);
  CHECK(r.vp.b(0, 1) == 0.0);
  CHECK(r.vp.b(0, 2) == 0.0);
  CHECK(r.vp.b(1, 2) == 0.0);
}

TEST_CASE("fits are deterministic given the seed") {
  Rng seed_rng(9);
  const oracle::GaussianTarget t(2, seed_rng.normal_vector(3), oracle::random_spd(3, seed_rng));
  FitOptions o;
  o.iterations = 300;
  o.factors = 1;
  o.summary_draws = 100;
  Rng a(42), b(42);
  const FitResult ra = jvb_fit(t, VParams::init(Vector::Zero(3), 1), o, a);
  const FitResult rb = jvb_fit(t, VParams::init(Vector::Zero(3), 1), o, b);
  CHECK(ra.vp.mu == rb.vp.mu);
  CHECK(ra.elbo_trace == rb.elbo_trace);
}

TEST_CASE("HVB with nothing missing") {
  Rng rng(10);
  const oracle::GaussianTarget t(2, rng.normal_vector(2), oracle::random_spd(2, rng));
  GaussianConditionalSampler sampler(t);
  FitOptions o;
  o.iterations = 200;
  o.factors = 1;
  o.summary_draws = 50;
  const FitResult r = hvb_fit(t, VParams::init(Vector::Zero(2), 1), sampler, o, rng);
  CHECK(r.y_u_mean.size() == 0);
  CHECK(r.theta.size() == 2u);
}

TEST_CASE("skipped iterations carry the ELBO forward and flag the run") {
  // Domain errors whenever the first coordinate is positive.
  class HalfLine final : public LogDensity {
   public:
    Index dim_theta() const override { return 1; }
    Index dim_missing() const override { return 0; }
    double log_h(const Vector& th, const Vector& y) const override { return evaluate(th, y).log_h; }
    Evaluation evaluate(const Vector& th, const Vector&) const override {
      if (th(0) > 0.0) throw DomainError("positive");
      return {-0.5 * th(0) * th(0), -th, Vector(0)};
    }
  };
  const HalfLine t;
  FitOptions o;
  o.iterations = 400;
  o.factors = 1;
  o.summary_draws = 10;
  Rng rng(11);
  const FitResult r = jvb_fit(t, VParams::init(Vector::Constant(1, -0.5), 1, 0.01, 1.0), o, rng);
  CHECK(r.skipped > 4u);
  CHECK(r.flagged);
  CHECK(!r.warnings.empty());
  for (std::size_t i = 1; i < r.elbo_trace.size(); ++i) {
    if (std::isnan(r.elbo_trace[i])) CHECK(std::isnan(r.elbo_trace[i - 1]));
  }
}

TEST_CASE("moving average and slope helpers") {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  const auto m = moving_average(x, 2);
  CHECK(m[0] == 1.0);
  CHECK(m[1] == 1.5);
  CHECK(m[4] == 4.5);
  Matrix traj(100, 2);
  for (Index i = 0; i < 100; ++i) {
    traj(i, 0) = 0.5 * static_cast<double>(i);
    traj(i, 1) = 3.0;
  }
  CHECK(max_abs_slope(traj, 50) == doctest::Approx(0.5));
  FitOptions bad;
  bad.iterations = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}
