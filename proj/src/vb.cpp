#include "spatialvb/vb.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

namespace spatialvb {

VParams VParams::init(const Vector& mu, Index p, double b0, double d0) {
  if (p < 1 || p > mu.size()) throw InvalidArgument("factor count p must be in [1, D]");
  if (d0 == 0.0) throw InvalidArgument("initial d must be non-zero");
  VParams vp;
  vp.mu = mu;
  vp.b = Matrix::Constant(mu.size(), p, b0);
  apply_factor_mask(vp.b);
  vp.d = Vector::Constant(mu.size(), d0);
  return vp;
}

void VParams::validate() const {
  const Index dd = mu.size();
  if (b.rows() != dd || d.size() != dd) throw InvalidArgument("VParams: dimension mismatch");
  if (b.cols() < 1 || b.cols() > dd) throw InvalidArgument("VParams: p must be in [1, D]");
  for (Index i = 0; i < std::min(dd, b.cols()); ++i) {
    for (Index j = i + 1; j < b.cols(); ++j) {
      if (b(i, j) != 0.0) throw InvalidArgument("VParams: B must be zero above the diagonal");
    }
  }
  for (Index i = 0; i < dd; ++i) {
    if (d(i) == 0.0) throw InvalidArgument("VParams: every d_i must be non-zero");
  }
}

Matrix VParams::covariance() const {
  Matrix c = b * b.transpose();
  c.diagonal() += d.cwiseAbs2();
  return c;
}

Vector VParams::marginal_sd() const {
  return (b.rowwise().squaredNorm() + d.cwiseAbs2()).cwiseSqrt();
}

VParams VParams::head(Index k) const {
  if (k < 0 || k > dim()) throw InvalidArgument("VParams::head out of range");
  return {mu.head(k), b.topRows(k), d.head(k)};
}

void apply_factor_mask(Matrix& b) {
  const Index p = b.cols();
  for (Index i = 0; i < std::min(b.rows(), p); ++i) {
    for (Index j = i + 1; j < p; ++j) b(i, j) = 0.0;
  }
}

ReparamDraw draw_reparam(Index dim, Index p, Rng& rng) {
  ReparamDraw z;
  z.eta = rng.normal_vector(p);
  z.eps = rng.normal_vector(dim);
  return z;
}

Vector transform(const VParams& vp, const ReparamDraw& z) {
  return vp.mu + vp.b * z.eta + vp.d.cwiseProduct(z.eps);
}

VariationalDraw draw_variational(const VParams& vp, Rng& rng) {
  ReparamDraw z = draw_reparam(vp.dim(), vp.factors(), rng);
  Vector value = transform(vp, z);
  return {std::move(value), std::move(z)};
}

FactorCovariance::FactorCovariance(const Matrix& b, const Vector& d) : b_(b) {
  if (b.rows() != d.size()) throw InvalidArgument("Woodbury: B and d dimension mismatch");
  for (Index i = 0; i < d.size(); ++i) {
    if (d(i) == 0.0 || !std::isfinite(d(i))) {
      throw NumericalError("Woodbury: d must be finite and non-zero");
    }
  }
  dinv2_ = d.cwiseAbs2().cwiseInverse();
  Matrix core = b.transpose() * dinv2_.asDiagonal() * b;
  core.diagonal().array() += 1.0;
  core_.compute(core);
  if (core_.info() != Eigen::Success) throw NumericalError("Woodbury: p x p solve failed");
  const Matrix l = core_.matrixL();
  log_det_ = 2.0 * l.diagonal().array().log().sum() + d.cwiseAbs2().array().log().sum();
}

Vector FactorCovariance::solve(const Vector& v) const {
  if (v.size() != b_.rows()) throw InvalidArgument("Woodbury: vector dimension mismatch");
  const Vector dv = dinv2_.cwiseProduct(v);
  const Vector inner = core_.solve(b_.transpose() * dv);
  return dv - dinv2_.cwiseProduct(b_ * inner);
}

Vector woodbury_solve(const Matrix& b, const Vector& d, const Vector& v) {
  return FactorCovariance(b, d).solve(v);
}

double log_q(const VParams& vp, const Vector& value) {
  const FactorCovariance fc(vp.b, vp.d);
  const Vector r = value - vp.mu;
  const double dd = static_cast<double>(vp.dim());
  return -0.5 * dd * std::log(2.0 * std::numbers::pi) - 0.5 * fc.log_det() -
         0.5 * r.dot(fc.solve(r));
}

Vector grad_log_q(const VParams& vp, const Vector& value) {
  return -woodbury_solve(vp.b, vp.d, value - vp.mu);
}

namespace {

// Shared estimator shape: grad_mu = g + C^{-1}(B eta + d o eps),
// grad_B = grad_mu eta^T (masked), grad_d = grad_mu o eps.
GradientEstimate assemble_estimate(const VParams& vp, const ReparamDraw& z, const Vector& g,
                                   double log_h) {
  const FactorCovariance fc(vp.b, vp.d);
  const Vector dev = vp.b * z.eta + vp.d.cwiseProduct(z.eps);
  const Vector corr = fc.solve(dev);
  GradientEstimate est;
  est.grad_mu = g + corr;
  est.grad_b = est.grad_mu * z.eta.transpose();
  apply_factor_mask(est.grad_b);
  est.grad_d = est.grad_mu.cwiseProduct(z.eps);
  const double dd = static_cast<double>(vp.dim());
  const double lq =
      -0.5 * dd * std::log(2.0 * std::numbers::pi) - 0.5 * fc.log_det() - 0.5 * dev.dot(corr);
  est.elbo = log_h - lq;
  return est;
}

void check_draw(const VParams& vp, const ReparamDraw& z) {
  if (z.eta.size() != vp.factors() || z.eps.size() != vp.dim()) {
    throw InvalidArgument("reparameterization draw has the wrong dimension");
  }
}

}  // namespace

GradientEstimate jvb_gradient_estimate(const VParams& vp, const LogDensity& target,
                                       const ReparamDraw& z) {
  const Index s = target.dim_theta();
  const Index nu = target.dim_missing();
  if (vp.dim() != s + nu) throw InvalidArgument("JVB needs D = S + n_u");
  check_draw(vp, z);
  const Vector value = transform(vp, z);
  const LogDensity::Evaluation ev = target.evaluate(value.head(s), value.tail(nu));
  Vector g(s + nu);
  g << ev.grad_theta, ev.grad_yu;
  return assemble_estimate(vp, z, g, ev.log_h);
}

GradientEstimate jvb_gradient_estimate(const VParams& vp, const LogDensity& target, Rng& rng) {
  return jvb_gradient_estimate(vp, target, draw_reparam(vp.dim(), vp.factors(), rng));
}

GradientEstimate hvb_gradient_estimate(const VParams& vp_theta, const LogDensity& target,
                                       const Vector& y_u, const ReparamDraw& z) {
  if (vp_theta.dim() != target.dim_theta()) throw InvalidArgument("HVB needs D = S");
  check_draw(vp_theta, z);
  const Vector theta = transform(vp_theta, z);
  const LogDensity::Evaluation ev = target.evaluate(theta, y_u);
  return assemble_estimate(vp_theta, z, ev.grad_theta, ev.log_h);
}

AdadeltaState AdadeltaState::zeros(Index n, double upsilon, double alpha) {
  if (!(upsilon > 0.0 && upsilon < 1.0)) throw InvalidArgument("ADADELTA decay must be in (0, 1)");
  if (!(alpha > 0.0)) throw InvalidArgument("ADADELTA alpha must be positive");
  return {Vector::Zero(n), Vector::Zero(n), upsilon, alpha};
}

Vector adadelta_step(AdadeltaState& st, const Vector& grad) {
  if (grad.size() != st.e_grad2.size()) throw InvalidArgument("ADADELTA: dimension mismatch");
  const double u = st.upsilon;
  st.e_grad2 = u * st.e_grad2 + (1.0 - u) * grad.cwiseAbs2();
  const Vector rate = ((st.e_delta2.array() + st.alpha) / (st.e_grad2.array() + st.alpha)).sqrt();
  Vector delta = rate.cwiseProduct(grad);
  st.e_delta2 = u * st.e_delta2 + (1.0 - u) * delta.cwiseAbs2();
  return delta;
}

void FitOptions::validate() const {
  if (iterations < 1) throw InvalidArgument("iterations must be at least 1");
  if (factors < 1) throw InvalidArgument("factor count p must be at least 1");
  if (draws_per_iteration < 1) throw InvalidArgument("draws per iteration must be at least 1");
  if (!(clip > 0.0)) throw InvalidArgument("gradient clip must be positive");
  if (!(summary_window > 0.0 && summary_window <= 1.0)) {
    throw InvalidArgument("summary window must be in (0, 1]");
  }
  if (summary_draws < 2) throw InvalidArgument("summary draws must be at least 2");
}

namespace {

// Flattened ADADELTA over (mu, B, d) with masking and clipping.
class VbOptimizer {
 public:
  VbOptimizer(const VParams& vp, const FitOptions& opts)
      : mu_(AdadeltaState::zeros(vp.dim(), opts.upsilon, opts.alpha)),
        b_(AdadeltaState::zeros(vp.b.size(), opts.upsilon, opts.alpha)),
        d_(AdadeltaState::zeros(vp.dim(), opts.upsilon, opts.alpha)),
        clip_(opts.clip) {}

  void update(VParams& vp, GradientEstimate& g) {
    clip(g.grad_mu);
    clip(g.grad_d);
    Eigen::Map<Vector> gb(g.grad_b.data(), g.grad_b.size());
    clip(gb);
    vp.mu += adadelta_step(mu_, g.grad_mu);
    Vector db = adadelta_step(b_, gb);
    Matrix step = Eigen::Map<Matrix>(db.data(), vp.b.rows(), vp.b.cols());
    apply_factor_mask(step);
    vp.b += step;
    vp.d += adadelta_step(d_, g.grad_d);
  }

  std::uint64_t clipped() const { return clipped_; }

 private:
  template <class V>
  void clip(V&& v) {
    for (Index i = 0; i < v.size(); ++i) {
      if (std::abs(v(i)) > clip_) {
        v(i) = std::copysign(clip_, v(i));
        ++clipped_;
      }
    }
  }

  AdadeltaState mu_, b_, d_;
  double clip_;
  std::uint64_t clipped_ = 0;
};

bool finite(const GradientEstimate& g) {
  return g.grad_mu.allFinite() && g.grad_b.allFinite() && g.grad_d.allFinite();
}

void average_into(GradientEstimate& acc, const GradientEstimate& g, int count) {
  if (count == 1) {
    acc = g;
    return;
  }
  acc.grad_mu += g.grad_mu;
  acc.grad_b += g.grad_b;
  acc.grad_d += g.grad_d;
  acc.elbo += g.elbo;
}

void scale(GradientEstimate& g, int c) {
  if (c == 1) return;
  const double inv = 1.0 / c;
  g.grad_mu *= inv;
  g.grad_b *= inv;
  g.grad_d *= inv;
  g.elbo *= inv;
}

// theta summaries from `draws` samples of q(theta) mapped to constrained space.
void summarize_theta(const LogDensity& target, const VParams& vp_theta, int draws, Rng& rng,
                     FitResult& out) {
  const Index s = vp_theta.dim();
  Vector sum = Vector::Zero(s);
  Vector sum2 = Vector::Zero(s);
  for (int i = 0; i < draws; ++i) {
    const Vector c = target.constrain(draw_variational(vp_theta, rng).value);
    sum += c;
    sum2 += c.cwiseAbs2();
  }
  const double n = static_cast<double>(draws);
  const Vector mean = sum / n;
  const Vector var = ((sum2 - n * mean.cwiseAbs2()) / (n - 1.0)).cwiseMax(0.0);
  const auto names = target.constrained_names();
  out.theta.clear();
  for (Index j = 0; j < s; ++j) out.theta.push_back({names[j], mean(j), std::sqrt(var(j))});
  out.theta_mean_unconstrained = vp_theta.mu;
}

void finish_flags(const FitOptions& opts, FitResult& out) {
  if (static_cast<double>(out.skipped) > opts.skip_flag_fraction * opts.iterations) {
    out.flagged = true;
    out.warnings.push_back(std::to_string(out.skipped) +
                           " iterations skipped for non-finite or out-of-domain gradients");
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

FitResult jvb_fit(const LogDensity& target, const VParams& vp0, const FitOptions& opts, Rng& rng) {
  opts.validate();
  vp0.validate();
  const Index s = target.dim_theta();
  if (vp0.dim() != s + target.dim_missing()) throw InvalidArgument("JVB needs D = S + n_u");
  const auto t0 = std::chrono::steady_clock::now();
  FitResult out;
  out.method = "jvb";
  out.vp = vp0;
  out.iterations = opts.iterations;
  out.elbo_trace.reserve(opts.iterations);
  out.mean_trajectory.resize(opts.iterations, s);
  VbOptimizer opt(vp0, opts);
  double last_elbo = std::numeric_limits<double>::quiet_NaN();
  for (int t = 0; t < opts.iterations; ++t) {
    GradientEstimate g;
    bool ok = true;
    try {
      for (int c = 1; c <= opts.draws_per_iteration && ok; ++c) {
        GradientEstimate gc = jvb_gradient_estimate(out.vp, target, rng);
        ok = finite(gc) && std::isfinite(gc.elbo);
        average_into(g, gc, c);
      }
    } catch (const DomainError&) {
      ok = false;
    } catch (const NumericalError&) {
      ok = false;
    }
    if (ok) {
      scale(g, opts.draws_per_iteration);
      opt.update(out.vp, g);
      last_elbo = g.elbo;
    } else {
      ++out.skipped;
    }
    out.elbo_trace.push_back(last_elbo);
    out.mean_trajectory.row(t) = out.vp.mu.head(s).transpose();
  }
  out.clipped = opt.clipped();
  summarize_theta(target, out.vp.head(s), opts.summary_draws, rng, out);
  out.y_u_mean = out.vp.mu.tail(target.dim_missing());
  out.y_u_sd = out.vp.marginal_sd().tail(target.dim_missing());
  finish_flags(opts, out);
  out.seconds = seconds_since(t0);
  return out;
}

FitResult hvb_fit(const LogDensity& target, const VParams& vp0, MissingSampler& sampler,
                  const FitOptions& opts, Rng& rng) {
  opts.validate();
  vp0.validate();
  const Index s = target.dim_theta();
  const Index nu = target.dim_missing();
  if (vp0.dim() != s) throw InvalidArgument("HVB needs D = S");
  const auto t0 = std::chrono::steady_clock::now();
  FitResult out;
  out.method = "hvb-" + sampler.name();
  out.elbo_is_proxy = true;
  out.vp = vp0;
  out.iterations = opts.iterations;
  out.elbo_trace.reserve(opts.iterations);
  out.mean_trajectory.resize(opts.iterations, s);
  VbOptimizer opt(vp0, opts);

  const int window_start =
      opts.iterations - std::max(1, static_cast<int>(std::ceil(opts.summary_window * opts.iterations)));
  Vector yu_sum = Vector::Zero(nu);
  Vector yu_sum2 = Vector::Zero(nu);
  int yu_count = 0;
  double last_elbo = std::numeric_limits<double>::quiet_NaN();

  for (int t = 0; t < opts.iterations; ++t) {
    GradientEstimate g;
    bool ok = true;
    Vector y_u;
    try {
      for (int c = 1; c <= opts.draws_per_iteration && ok; ++c) {
        const ReparamDraw z = draw_reparam(s, out.vp.factors(), rng);
        const Vector theta = transform(out.vp, z);
        y_u = sampler.sample(theta, rng);
        GradientEstimate gc = hvb_gradient_estimate(out.vp, target, y_u, z);
        ok = finite(gc) && std::isfinite(gc.elbo);
        average_into(g, gc, c);
      }
    } catch (const DomainError&) {
      ok = false;
    } catch (const NumericalError&) {
      ok = false;
    }
    if (ok) {
      scale(g, opts.draws_per_iteration);
      opt.update(out.vp, g);
      last_elbo = g.elbo;
      if (t >= window_start && nu > 0) {
        yu_sum += y_u;
        yu_sum2 += y_u.cwiseAbs2();
        ++yu_count;
      }
    } else {
      ++out.skipped;
    }
    out.elbo_trace.push_back(last_elbo);
    out.mean_trajectory.row(t) = out.vp.mu.transpose();
  }
  out.clipped = opt.clipped();
  summarize_theta(target, out.vp, opts.summary_draws, rng, out);
  out.y_u_mean = Vector::Zero(nu);
  out.y_u_sd = Vector::Zero(nu);
  if (yu_count > 0) {
    const double n = yu_count;
    out.y_u_mean = yu_sum / n;
    if (yu_count > 1) {
      out.y_u_sd = ((yu_sum2 - n * out.y_u_mean.cwiseAbs2()) / (n - 1.0)).cwiseMax(0.0).cwiseSqrt();
    }
  }
  out.acceptance = sampler.acceptance();
  if (!out.acceptance.empty()) {
    AcceptanceCounter total;
    for (const auto& a : out.acceptance) total += a;
    if (total.proposed > 0 && total.rate() < opts.low_acceptance) {
      out.warnings.push_back("Metropolis acceptance rate " + std::to_string(total.rate()) +
                             " is below 5%; block sizes are usually chosen for a 20-30% rate");
    }
  }
  finish_flags(opts, out);
  out.seconds = seconds_since(t0);
  return out;
}

std::vector<double> moving_average(const std::vector<double>& x, int w) {
  if (w < 1) throw InvalidArgument("moving average window must be positive");
  std::vector<double> out(x.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += x[i];
    if (i >= static_cast<std::size_t>(w)) acc -= x[i - w];
    out[i] = acc / static_cast<double>(std::min<std::size_t>(i + 1, w));
  }
  return out;
}

double max_abs_slope(const Matrix& trajectory, int window) {
  const Index rows = trajectory.rows();
  const Index w = std::min<Index>(window, rows);
  if (w < 2) return 0.0;
  const Matrix tail = trajectory.bottomRows(w);
  Vector t = Vector::LinSpaced(w, 0.0, static_cast<double>(w - 1));
  t.array() -= t.mean();
  const double tt = t.squaredNorm();
  double best = 0.0;
  for (Index j = 0; j < tail.cols(); ++j) {
    const Vector c = tail.col(j).array() - tail.col(j).mean();
    best = std::max(best, std::abs(t.dot(c) / tt));
  }
  return best;
}

}  // namespace spatialvb
