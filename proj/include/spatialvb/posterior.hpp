#pragma once

// Unnormalized log-posterior log h(theta, y_u) of the SEM with missing
// responses, its priors, and analytic gradients in unconstrained space.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spatialvb/missing_mech.hpp"
#include "spatialvb/spatial_core.hpp"

namespace spatialvb {

enum class Mechanism { kMar, kMnar };

const char* to_string(Mechanism m);
Mechanism mechanism_from_string(const std::string& s);

struct PriorSpec {
  double var_beta = 10000.0;
  double var_gamma = 10000.0;
  double var_rho_logit = 10000.0;
  double var_psi = 10000.0;

  void validate() const;
};

// Flattening of theta: beta_0..beta_r, gamma, rho_logit [, psi_0..psi_q, psi_y].
struct ThetaLayout {
  Mechanism mechanism = Mechanism::kMar;
  Index n_beta = 0;   // r + 1
  Index n_psi_x = 0;  // q + 1, zero under MAR

  Index size() const;
  Index gamma() const { return n_beta; }
  Index rho_logit() const { return n_beta + 1; }
  Index psi() const { return n_beta + 2; }
  Index psi_y() const { return n_beta + 2 + n_psi_x; }

  // Unconstrained coordinate names.
  std::vector<std::string> names() const;
  // Names after mapping gamma -> sigma2_y and rho_logit -> rho.
  std::vector<std::string> constrained_names() const;
  // Maps gamma and rho_logit entries to sigma2_y and rho; others unchanged.
  Vector to_constrained(const Vector& theta) const;

  Vector pack(const UnconstrainedSemParams& u, const Vector* psi_x = nullptr,
              double psi_y = 0.0) const;
  UnconstrainedSemParams sem_part(const Vector& theta) const;
};

// Target density interface shared by the VB engines and HMC.
class LogDensity {
 public:
  struct Evaluation {
    double log_h = 0.0;
    Vector grad_theta;
    Vector grad_yu;
  };

  virtual ~LogDensity() = default;
  virtual Index dim_theta() const = 0;
  virtual Index dim_missing() const = 0;
  virtual double log_h(const Vector& theta, const Vector& y_u) const = 0;
  virtual Evaluation evaluate(const Vector& theta, const Vector& y_u) const = 0;

  Vector grad_theta(const Vector& theta, const Vector& y_u) const {
    return evaluate(theta, y_u).grad_theta;
  }
  Vector grad_yu(const Vector& theta, const Vector& y_u) const {
    return evaluate(theta, y_u).grad_yu;
  }

  // Map to reporting (constrained) space and the matching coordinate names.
  virtual Vector constrain(const Vector& theta) const { return theta; }
  virtual std::vector<std::string> constrained_names() const;
};

struct SemData {
  Matrix x;             // n x (r + 1)
  SpatialWeights w;     // row-normalized
  Vector y;             // length n; entries at missing positions are ignored
  MissingPattern pattern;
  std::optional<Matrix> x_star;  // required under MNAR
};

class TargetDensity final : public LogDensity {
 public:
  TargetDensity(Mechanism mechanism, SemData data, PriorSpec priors = {},
                PrecisionModel::Options precision = {});

  Mechanism mechanism() const { return layout_.mechanism; }
  const ThetaLayout& layout() const { return layout_; }
  const PriorSpec& priors() const { return priors_; }
  const PrecisionModel& precision() const { return *precision_; }
  const Matrix& x() const { return data_.x; }
  const SpatialWeights& weights() const { return data_.w; }
  const MissingPattern& pattern() const { return data_.pattern; }
  // Observed response at full length (missing slots hold 0).
  const Vector& y_observed() const { return y_obs_; }
  const std::optional<Matrix>& x_star() const { return data_.x_star; }
  Index n() const { return data_.x.rows(); }

  Index dim_theta() const override { return layout_.size(); }
  Index dim_missing() const override { return data_.pattern.n_u(); }

  double log_h(const Vector& theta, const Vector& y_u) const override;
  Evaluation evaluate(const Vector& theta, const Vector& y_u) const override;
  Vector constrain(const Vector& theta) const override { return layout_.to_constrained(theta); }
  std::vector<std::string> constrained_names() const override {
    return layout_.constrained_names();
  }

  Vector grad_log_h_theta(const Vector& theta, const Vector& y_u) const {
    return evaluate(theta, y_u).grad_theta;
  }
  Vector grad_log_h_yu(const Vector& theta, const Vector& y_u) const {
    return evaluate(theta, y_u).grad_yu;
  }

  SemParams sem_params(const Vector& theta) const;
  // Selection model at theta (MNAR only).
  SelectionModel selection_model(const Vector& theta) const;

 private:
  void check_dims(const Vector& theta, const Vector& y_u) const;

  ThetaLayout layout_;
  SemData data_;
  PriorSpec priors_;
  std::shared_ptr<const PrecisionModel> precision_;
  Vector y_obs_;
};

}  // namespace spatialvb
