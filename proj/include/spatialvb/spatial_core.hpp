#pragma once

// Spatial weights, SEM precision algebra, the SEM log-likelihood and the
// constrained <-> unconstrained parameter map.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "spatialvb/errors.hpp"

namespace spatialvb {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Index = Eigen::Index;
using IndexList = std::vector<Index>;

struct WeightEntry {
  Index row;
  Index col;
  double weight;
};

// Sparse n x n neighbourhood matrix with zero diagonal. The sparsity pattern
// is symmetric; values need not be (row normalization breaks value symmetry).
class SpatialWeights {
 public:
  // Validates: indices in range, no diagonal weight, finite non-negative
  // weights, symmetric pattern. Duplicate (i, j) entries are summed.
  static SpatialWeights from_entries(Index n, std::span<const WeightEntry> entries,
                                     bool row_normalized = false);

  Index n() const { return matrix_.rows(); }
  const SparseMatrix& matrix() const { return matrix_; }
  bool row_normalized() const { return row_normalized_; }
  Index nonzeros() const { return matrix_.nonZeros(); }
  double weight(Index i, Index j) const { return matrix_.coeff(i, j); }
  Index neighbour_count(Index i) const;
  std::vector<WeightEntry> entries() const;

  // Positive vector s with diag(s) W symmetric, if one exists. W is then
  // similar to a symmetric matrix and has a real spectrum.
  const std::optional<Vector>& symmetrizer() const { return symmetrizer_; }

 private:
  SpatialWeights(SparseMatrix m, bool row_normalized);

  SparseMatrix matrix_;
  bool row_normalized_ = false;
  std::optional<Vector> symmetrizer_;
};

// Rook adjacency on a side x side grid, unit (r, c) -> index r * side + c.
SpatialWeights build_rook_grid_weights(Index side);

// Scales each row to sum to one. Throws DegenerateUnitError on an empty row.
SpatialWeights row_normalize(const SpatialWeights& w);

struct RhoInterval {
  double lower;
  double upper;
  // Strict interior with a safety margin.
  bool contains(double rho, double margin = kMargin) const {
    return rho > lower + margin && rho < upper - margin;
  }
  static constexpr double kMargin = 1e-8;
};

inline constexpr Index kDenseEigenLimit = 2000;

// (1 / lambda_min(W), 1) for a row-normalized W. Dense eigensolve up to
// kDenseEigenLimit units, power iteration above.
RhoInterval rho_interval(const SpatialWeights& w);

// Real eigenvalues of W (ascending) when W is symmetrizable and small enough
// for a dense solve.
std::optional<Vector> real_spectrum(const SpatialWeights& w);

// M_y = (I - rho W)^T (I - rho W).
SparseMatrix precision_matrix(double rho, const SpatialWeights& w,
                              const RhoInterval& interval);
SparseMatrix precision_matrix(double rho, const SpatialWeights& w);

struct SemParams {
  Vector beta;
  double sigma2_y = 1.0;
  double rho = 0.0;
};

struct UnconstrainedSemParams {
  Vector beta;
  double gamma = 0.0;      // log sigma2_y
  double rho_logit = 0.0;  // log(1 + rho) - log(1 - rho)
};

UnconstrainedSemParams to_unconstrained(const SemParams& p);
SemParams from_unconstrained(const UnconstrainedSemParams& u);
double rho_from_logit(double rho_logit);
double rho_to_logit(double rho);
// d rho / d rho_logit
double rho_logit_jacobian(double rho_logit);

enum class LogDetMethod { kAuto, kSpectrum, kSparseCholesky, kHutchinson };

struct LogDetValue {
  double log_det = 0.0;       // log |M_y|
  double d_log_det = 0.0;     // d log|M_y| / d rho
};

// Precomputed structure for repeated evaluation of M_y(rho), quadratic forms
// and log-determinants at many rho values on a fixed W.
class PrecisionModel {
 public:
  struct Options {
    LogDetMethod method = LogDetMethod::kAuto;
    Index exact_trace_limit = 2500;
    int hutchinson_probes = 20;
    std::uint64_t probe_seed = 0x5eed;
  };

  PrecisionModel(const SpatialWeights& w, Options opts);
  explicit PrecisionModel(const SpatialWeights& w) : PrecisionModel(w, Options{}) {}

  Index n() const { return w_.rows(); }
  const SparseMatrix& w() const { return w_; }
  const RhoInterval& interval() const { return interval_; }
  LogDetMethod method() const { return method_; }

  // Throws DomainError when rho is not strictly inside the interval.
  void check_rho(double rho) const;

  SparseMatrix matrix(double rho) const;
  // d M_y / d rho = -(W^T + W) + 2 rho W^T W
  SparseMatrix derivative(double rho) const;
  // M_y v without forming M_y.
  Vector apply(double rho, const Vector& v) const;
  // v^T M_y v and v^T (dM_y/drho) v.
  double quad(double rho, const Vector& v) const;
  double dquad(double rho, const Vector& v) const;

  LogDetValue log_det(double rho, bool with_derivative) const;

 private:
  LogDetValue log_det_spectrum(double rho, bool with_derivative) const;
  LogDetValue log_det_cholesky(double rho, bool with_derivative, bool stochastic) const;

  SparseMatrix w_;
  SparseMatrix wt_;
  SparseMatrix sym_;   // W + W^T
  SparseMatrix wtw_;   // W^T W
  RhoInterval interval_;
  std::optional<Vector> spectrum_;
  LogDetMethod method_;
  Matrix probes_;      // Rademacher columns for the stochastic trace
};

// Gaussian log-likelihood of y under the SEM.
double sem_log_likelihood(const Vector& y, const SemParams& params, const Matrix& x,
                          const SpatialWeights& w);

// Row/column permutation placing `first` before `second`. Both groups are
// kept in the order given; together they must cover 0..n-1 exactly once.
class PartitionedView {
 public:
  PartitionedView(Index n, IndexList first, IndexList second);
  // Second group is the ascending complement of `first`.
  static PartitionedView with_complement(Index n, IndexList first);

  Index n() const { return n_; }
  const IndexList& first() const { return first_; }
  const IndexList& second() const { return second_; }
  // ordering()[k] is the parent index placed at position k.
  IndexList ordering() const;
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, Index> permutation() const;

  enum class Group { kFirst, kSecond };
  const IndexList& indices(Group g) const { return g == Group::kFirst ? first_ : second_; }

  Vector sub(const Vector& v, Group g) const;
  Matrix rows(const Matrix& x, Group g) const;
  SparseMatrix block(const SparseMatrix& m, Group rows, Group cols) const;
  Matrix block(const Matrix& m, Group rows, Group cols) const;

 private:
  Index n_;
  IndexList first_;
  IndexList second_;
};

// Sub-matrix of a sparse matrix by arbitrary row/column index lists.
SparseMatrix sparse_submatrix(const SparseMatrix& m, const IndexList& rows,
                              const IndexList& cols);
Vector gather(const Vector& v, const IndexList& idx);
Matrix gather_rows(const Matrix& x, const IndexList& idx);

}  // namespace spatialvb
