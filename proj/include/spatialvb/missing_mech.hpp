#pragma once

// Missingness patterns, the logistic selection model and the simulation
// harness for SEM data with MAR or MNAR missing responses.

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "spatialvb/rng.hpp"
#include "spatialvb/spatial_core.hpp"

namespace spatialvb {

class MissingPattern {
 public:
  // m[i] = 1 marks unit i as missing.
  static MissingPattern from_indicator(std::vector<int> m);
  static MissingPattern all_observed(Index n);

  Index n() const { return static_cast<Index>(m_.size()); }
  Index n_o() const { return static_cast<Index>(observed_.size()); }
  Index n_u() const { return static_cast<Index>(unobserved_.size()); }
  const std::vector<int>& m() const { return m_; }
  bool missing(Index i) const { return m_[static_cast<std::size_t>(i)] != 0; }
  const IndexList& observed() const { return observed_; }
  const IndexList& unobserved() const { return unobserved_; }
  // Position of a missing unit inside y_u, or -1 when observed.
  Index position_in_missing(Index unit) const { return slot_[static_cast<std::size_t>(unit)]; }

  // Partition with observed units first, missing units second.
  PartitionedView observed_view() const {
    return PartitionedView(n(), observed_, unobserved_);
  }

  // Full response from observed values (length n, entries at missing
  // positions ignored) and y_u in unobserved order.
  Vector assemble(const Vector& y_observed_full, const Vector& y_u) const;

 private:
  std::vector<int> m_;
  IndexList observed_;
  IndexList unobserved_;
  std::vector<Index> slot_;
};

struct SelectionModel {
  Vector psi_x;   // intercept + covariate effects, length q + 1
  double psi_y = 0.0;
  Matrix x_star;  // n x (q + 1), first column all ones

  void validate(Index n) const;
  Vector linear_predictor(const Vector& y) const;
};

// Blocks hold unit indices (subsets of the pattern's unobserved list).
struct BlockPartition {
  std::vector<IndexList> blocks;
  Index block_size = 0;
  Index k() const { return static_cast<Index>(blocks.size()); }
};

struct MarMechanism {
  double missing_fraction = 0.75;
};

struct MnarMechanism {
  double psi_0 = 1.5;
  double psi_xstar = 0.5;
  double psi_y = -0.1;
  Index covariate_index = 0;  // 0-based among the r non-intercept covariates
};

struct SimConfig {
  Index side = 25;
  Index r = 10;
  std::optional<Vector> beta_true;  // drawn from {1..5} when absent
  double sigma2_true = 1.0;
  double rho_true = 0.8;
  std::variant<MarMechanism, MnarMechanism> mechanism = MarMechanism{};
  std::uint64_t seed = 1;

  void validate() const;
};

struct SimulatedSem {
  Vector y;
  Matrix x;
  SpatialWeights w;
  SemParams truth;
};

// Numerically stable log(1 + e^t).
double softplus(double t);
double logistic(double t);

double selection_log_prob(const MissingPattern& pattern, const Vector& y,
                          const SelectionModel& sel);
// Sum restricted to `units`.
double selection_log_prob(const MissingPattern& pattern, const Vector& y,
                          const SelectionModel& sel, const IndexList& units);
// Gradient w.r.t. (psi_x, psi_y), length q + 2.
Vector selection_grad_psi(const MissingPattern& pattern, const Vector& y,
                          const SelectionModel& sel);
// Gradient w.r.t. the missing entries of y, in unobserved order.
Vector selection_grad_yu(const MissingPattern& pattern, const Vector& y,
                         const SelectionModel& sel);

SimulatedSem simulate_sem(const SimConfig& cfg);
MissingPattern generate_mar(const Vector& y, double fraction, std::uint64_t seed);
MissingPattern generate_mnar(const Vector& y, const SelectionModel& sel, std::uint64_t seed);
// Intercept column plus column `covariate_index + 1` of the SEM design.
Matrix selection_design(const Matrix& x, Index covariate_index);

BlockPartition make_blocks(const MissingPattern& pattern, Index block_size, std::uint64_t seed);
Index default_block_size_mnar(Index n_u);
Index default_block_size_mar(Index n_u);

// Fisher-Yates with the library's own uniform draw, so results do not
// depend on the standard library's shuffle implementation.
void shuffle_indices(IndexList& idx, Rng& rng);

}  // namespace spatialvb
