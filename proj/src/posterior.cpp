#include "spatialvb/posterior.hpp"

#include <cmath>

namespace spatialvb {

const char* to_string(Mechanism m) { return m == Mechanism::kMar ? "MAR" : "MNAR"; }

Mechanism mechanism_from_string(const std::string& s) {
  if (s == "MAR" || s == "mar") return Mechanism::kMar;
  if (s == "MNAR" || s == "mnar") return Mechanism::kMnar;
  throw InvalidArgument("unknown missing-data mechanism '" + s + "'");
}

std::vector<std::string> LogDensity::constrained_names() const {
  std::vector<std::string> out;
  for (Index j = 0; j < dim_theta(); ++j) out.push_back("theta_" + std::to_string(j));
  return out;
}

void PriorSpec::validate() const {
  if (!(var_beta > 0.0 && var_gamma > 0.0 && var_rho_logit > 0.0 && var_psi > 0.0)) {
    throw InvalidArgument("prior variances must be positive");
  }
}

Index ThetaLayout::size() const {
  return mechanism == Mechanism::kMar ? n_beta + 2 : n_beta + 2 + n_psi_x + 1;
}

std::vector<std::string> ThetaLayout::names() const {
  std::vector<std::string> out;
  for (Index j = 0; j < n_beta; ++j) out.push_back("beta_" + std::to_string(j));
  out.emplace_back("gamma");
  out.emplace_back("rho_logit");
  if (mechanism == Mechanism::kMnar) {
    for (Index j = 0; j < n_psi_x; ++j) out.push_back("psi_" + std::to_string(j));
    out.emplace_back("psi_y");
  }
  return out;
}

std::vector<std::string> ThetaLayout::constrained_names() const {
  std::vector<std::string> out = names();
  out[gamma()] = "sigma2_y";
  out[rho_logit()] = "rho";
  return out;
}

Vector ThetaLayout::to_constrained(const Vector& theta) const {
  Vector out = theta;
  out(gamma()) = std::exp(theta(gamma()));
  out(rho_logit()) = rho_from_logit(theta(rho_logit()));
  return out;
}

Vector ThetaLayout::pack(const UnconstrainedSemParams& u, const Vector* psi_x,
                         double psi_y) const {
  if (u.beta.size() != n_beta) throw InvalidArgument("pack: beta length mismatch");
  Vector theta(size());
  theta.head(n_beta) = u.beta;
  theta(gamma()) = u.gamma;
  theta(rho_logit()) = u.rho_logit;
  if (mechanism == Mechanism::kMnar) {
    if (!psi_x || psi_x->size() != n_psi_x) throw InvalidArgument("pack: psi_x length mismatch");
    theta.segment(psi(), n_psi_x) = *psi_x;
    theta(this->psi_y()) = psi_y;
  }
  return theta;
}

UnconstrainedSemParams ThetaLayout::sem_part(const Vector& theta) const {
  return {theta.head(n_beta), theta(gamma()), theta(rho_logit())};
}

TargetDensity::TargetDensity(Mechanism mechanism, SemData data, PriorSpec priors,
                             PrecisionModel::Options precision)
    : data_(std::move(data)), priors_(priors) {
  priors_.validate();
  const Index n = data_.x.rows();
  if (data_.w.n() != n || data_.y.size() != n || data_.pattern.n() != n) {
    throw InvalidArgument("SEM data: X, W, y and pattern must agree on n");
  }
  if (!data_.w.row_normalized()) throw InvalidArgument("SEM data: W must be row-normalized");
  layout_.mechanism = mechanism;
  layout_.n_beta = data_.x.cols();
  if (mechanism == Mechanism::kMnar) {
    if (!data_.x_star) throw InvalidArgument("MNAR target needs a selection design X*");
    if (data_.x_star->rows() != n) throw InvalidArgument("X* must have n rows");
    for (Index i = 0; i < n; ++i) {
      if ((*data_.x_star)(i, 0) != 1.0) throw InvalidArgument("first column of X* must be ones");
    }
    layout_.n_psi_x = data_.x_star->cols();
  }
  y_obs_ = data_.y;
  for (Index i : data_.pattern.unobserved()) y_obs_(i) = 0.0;
  for (Index i : data_.pattern.observed()) {
    if (!std::isfinite(y_obs_(i))) {
      throw InvalidArgument("observed response at unit " + std::to_string(i) + " is not finite");
    }
  }
  precision_ = std::make_shared<const PrecisionModel>(data_.w, precision);
}

void TargetDensity::check_dims(const Vector& theta, const Vector& y_u) const {
  if (theta.size() != layout_.size() || y_u.size() != data_.pattern.n_u()) {
    throw InvalidArgument("target density: expected theta of length " +
                          std::to_string(layout_.size()) + " and y_u of length " +
                          std::to_string(data_.pattern.n_u()));
  }
  if (!theta.allFinite() || !y_u.allFinite()) {
    throw DomainError("target density evaluated at a non-finite point");
  }
}

SemParams TargetDensity::sem_params(const Vector& theta) const {
  return from_unconstrained(layout_.sem_part(theta));
}

SelectionModel TargetDensity::selection_model(const Vector& theta) const {
  if (layout_.mechanism != Mechanism::kMnar) {
    throw InvalidArgument("selection model requested under MAR");
  }
  return {theta.segment(layout_.psi(), layout_.n_psi_x), theta(layout_.psi_y()), *data_.x_star};
}

double TargetDensity::log_h(const Vector& theta, const Vector& y_u) const {
  check_dims(theta, y_u);
  const Index nb = layout_.n_beta;
  const Vector beta = theta.head(nb);
  const double gamma = theta(layout_.gamma());
  const double lam = theta(layout_.rho_logit());
  const double rho = rho_from_logit(lam);
  const LogDetValue ld = precision_->log_det(rho, false);
  const Vector y = data_.pattern.assemble(y_obs_, y_u);
  const Vector r = y - data_.x * beta;
  const double n = static_cast<double>(this->n());
  double value = -0.5 * n * gamma + 0.5 * ld.log_det -
                 0.5 * std::exp(-gamma) * precision_->quad(rho, r) -
                 beta.squaredNorm() / (2.0 * priors_.var_beta) -
                 gamma * gamma / (2.0 * priors_.var_gamma) -
                 lam * lam / (2.0 * priors_.var_rho_logit);
  if (layout_.mechanism == Mechanism::kMnar) {
    const SelectionModel sel = selection_model(theta);
    const Index np = layout_.n_psi_x + 1;
    value += selection_log_prob(data_.pattern, y, sel) -
             theta.segment(layout_.psi(), np).squaredNorm() / (2.0 * priors_.var_psi);
  }
  return value;
}

LogDensity::Evaluation TargetDensity::evaluate(const Vector& theta, const Vector& y_u) const {
  check_dims(theta, y_u);
  const Index nb = layout_.n_beta;
  const Vector beta = theta.head(nb);
  const double gamma = theta(layout_.gamma());
  const double lam = theta(layout_.rho_logit());
  const double rho = rho_from_logit(lam);
  const double inv_s2 = std::exp(-gamma);
  const double n = static_cast<double>(this->n());

  const LogDetValue ld = precision_->log_det(rho, true);
  const Vector y = data_.pattern.assemble(y_obs_, y_u);
  const Vector r = y - data_.x * beta;
  const Vector mr = precision_->apply(rho, r);
  const double quad = r.dot(mr);
  const double dquad = precision_->dquad(rho, r);

  Evaluation out;
  out.log_h = -0.5 * n * gamma + 0.5 * ld.log_det - 0.5 * inv_s2 * quad -
              beta.squaredNorm() / (2.0 * priors_.var_beta) -
              gamma * gamma / (2.0 * priors_.var_gamma) -
              lam * lam / (2.0 * priors_.var_rho_logit);
  out.grad_theta.resize(layout_.size());
  out.grad_theta.head(nb) = inv_s2 * (data_.x.transpose() * mr) - beta / priors_.var_beta;
  out.grad_theta(layout_.gamma()) = -0.5 * n + 0.5 * inv_s2 * quad - gamma / priors_.var_gamma;
  out.grad_theta(layout_.rho_logit()) =
      (0.5 * ld.d_log_det - 0.5 * inv_s2 * dquad) * rho_logit_jacobian(lam) -
      lam / priors_.var_rho_logit;

  const MissingPattern& pattern = data_.pattern;
  out.grad_yu.resize(pattern.n_u());
  for (Index k = 0; k < pattern.n_u(); ++k) out.grad_yu(k) = -inv_s2 * mr(pattern.unobserved()[k]);

  if (layout_.mechanism == Mechanism::kMnar) {
    const SelectionModel sel = selection_model(theta);
    const Index np = layout_.n_psi_x + 1;
    const Vector psi = theta.segment(layout_.psi(), np);
    out.log_h += selection_log_prob(pattern, y, sel) - psi.squaredNorm() / (2.0 * priors_.var_psi);
    out.grad_theta.segment(layout_.psi(), np) =
        selection_grad_psi(pattern, y, sel) - psi / priors_.var_psi;
    out.grad_yu += selection_grad_yu(pattern, y, sel);
  }
  return out;
}

}  // namespace spatialvb
