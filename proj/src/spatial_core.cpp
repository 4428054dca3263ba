#include "spatialvb/spatial_core.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <random>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

namespace spatialvb {

namespace {

using RowMajorSparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;

bool same_pattern(const SparseMatrix& a, const SparseMatrix& b) {
  if (a.nonZeros() != b.nonZeros()) return false;
  for (Index c = 0; c < a.outerSize(); ++c) {
    SparseMatrix::InnerIterator ia(a, c);
    SparseMatrix::InnerIterator ib(b, c);
    for (; ia && ib; ++ia, ++ib) {
      if (ia.row() != ib.row()) return false;
    }
    if (ia || ib) return false;
  }
  return true;
}

// Breadth-first propagation of s_j = s_i W_ij / W_ji, then a consistency
// check of diag(s) W against its transpose.
std::optional<Vector> find_symmetrizer(const SparseMatrix& w) {
  const Index n = w.rows();
  const RowMajorSparse rows(w);
  Vector s = Vector::Zero(n);
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (Index root = 0; root < n; ++root) {
    if (seen[root]) continue;
    seen[root] = true;
    s(root) = 1.0;
    std::deque<Index> queue{root};
    while (!queue.empty()) {
      const Index i = queue.front();
      queue.pop_front();
      for (RowMajorSparse::InnerIterator it(rows, i); it; ++it) {
        const Index j = it.col();
        if (seen[j]) continue;
        const double wji = w.coeff(j, i);
        if (wji <= 0.0) return std::nullopt;
        s(j) = s(i) * it.value() / wji;
        seen[j] = true;
        queue.push_back(j);
      }
    }
  }
  for (Index c = 0; c < w.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(w, c); it; ++it) {
      const double lhs = s(it.row()) * it.value();
      const double rhs = s(c) * w.coeff(c, it.row());
      if (std::abs(lhs - rhs) > 1e-10 * std::max(std::abs(lhs), std::abs(rhs))) {
        return std::nullopt;
      }
    }
  }
  return s;
}

// D^{1/2} W D^{-1/2} for symmetrizer D; symmetric by construction.
SparseMatrix symmetrized(const SparseMatrix& w, const Vector& s) {
  const Vector root = s.cwiseSqrt();
  SparseMatrix out = w;
  for (Index c = 0; c < out.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(out, c); it; ++it) {
      it.valueRef() *= root(it.row()) / root(c);
    }
  }
  return out;
}

// Largest eigenvalue of the (assumed real-spectrum) operator I - W by power
// iteration on a Rayleigh quotient.
double power_iteration_lambda_min(const SparseMatrix& op) {
  const Index n = op.rows();
  Vector v = Vector::Ones(n);
  for (Index i = 0; i < n; i += 2) v(i) = -1.0;  // bias toward the oscillating mode
  for (Index i = 0; i < n; ++i) v(i) += 1e-3 * std::sin(static_cast<double>(i) + 1.0);
  v.normalize();
  double estimate = 0.0;
  for (int iter = 0; iter < 200000; ++iter) {
    Vector next = v - op * v;  // (I - W) v
    const double rayleigh = v.dot(next);
    const double norm = next.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericalError("power iteration breakdown");
    next /= norm;
    if (iter > 10 && std::abs(rayleigh - estimate) < 1e-8 * std::max(1.0, std::abs(rayleigh))) {
      return 1.0 - rayleigh;
    }
    estimate = rayleigh;
    v = std::move(next);
  }
  throw NumericalError("power iteration for lambda_min did not converge");
}

void check_square(const SparseMatrix& m, const char* what) {
  if (m.rows() != m.cols()) throw InvalidArgument(std::string(what) + " must be square");
}

}  // namespace

// ---------------------------------------------------------------- weights --

SpatialWeights::SpatialWeights(SparseMatrix m, bool row_normalized)
    : matrix_(std::move(m)), row_normalized_(row_normalized) {
  matrix_.makeCompressed();
  symmetrizer_ = find_symmetrizer(matrix_);
}

SpatialWeights SpatialWeights::from_entries(Index n, std::span<const WeightEntry> entries,
                                            bool row_normalized) {
  if (n < 1) throw InvalidArgument("weight matrix needs at least one unit");
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(entries.size());
  for (const auto& e : entries) {
    if (e.row < 0 || e.row >= n || e.col < 0 || e.col >= n) {
      throw InvalidArgument("weight entry (" + std::to_string(e.row) + ", " +
                            std::to_string(e.col) + ") out of range for n=" + std::to_string(n));
    }
    if (!std::isfinite(e.weight) || e.weight < 0.0) {
      throw InvalidArgument("weight entry (" + std::to_string(e.row) + ", " +
                            std::to_string(e.col) + ") must be finite and non-negative");
    }
    if (e.weight == 0.0) continue;
    if (e.row == e.col) {
      throw InvalidArgument("weight matrix diagonal must be zero (unit " +
                            std::to_string(e.row) + ")");
    }
    triplets.emplace_back(e.row, e.col, e.weight);
  }
  SparseMatrix m(n, n);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  const SparseMatrix mt = m.transpose();
  if (!same_pattern(m, mt)) {
    throw InvalidArgument("weight matrix pattern is not symmetric");
  }
  if (row_normalized) {
    const Vector sums = m * Vector::Ones(n);
    for (Index i = 0; i < n; ++i) {
      if (sums(i) != 0.0 && std::abs(sums(i) - 1.0) > 1e-12) {
        throw InvalidArgument("row " + std::to_string(i) + " does not sum to one");
      }
    }
  }
  return SpatialWeights(std::move(m), row_normalized);
}

Index SpatialWeights::neighbour_count(Index i) const {
  // Pattern is symmetric, so column i lists the neighbours of i.
  return matrix_.outerIndexPtr()[i + 1] - matrix_.outerIndexPtr()[i];
}

std::vector<WeightEntry> SpatialWeights::entries() const {
  std::vector<WeightEntry> out;
  out.reserve(static_cast<std::size_t>(matrix_.nonZeros()));
  const RowMajorSparse rows(matrix_);
  for (Index r = 0; r < rows.outerSize(); ++r) {
    for (RowMajorSparse::InnerIterator it(rows, r); it; ++it) {
      out.push_back({r, it.col(), it.value()});
    }
  }
  return out;
}

SpatialWeights build_rook_grid_weights(Index side) {
  if (side < 2) throw InvalidArgument("grid side must be at least 2");
  std::vector<WeightEntry> entries;
  entries.reserve(static_cast<std::size_t>(4 * side * side));
  for (Index r = 0; r < side; ++r) {
    for (Index c = 0; c < side; ++c) {
      const Index i = r * side + c;
      if (r > 0) entries.push_back({i, i - side, 1.0});
      if (r + 1 < side) entries.push_back({i, i + side, 1.0});
      if (c > 0) entries.push_back({i, i - 1, 1.0});
      if (c + 1 < side) entries.push_back({i, i + 1, 1.0});
    }
  }
  return SpatialWeights::from_entries(side * side, entries);
}

SpatialWeights row_normalize(const SpatialWeights& w) {
  const Index n = w.n();
  const Vector sums = w.matrix() * Vector::Ones(n);
  for (Index i = 0; i < n; ++i) {
    if (!(sums(i) > 0.0)) throw DegenerateUnitError(static_cast<std::size_t>(i));
  }
  std::vector<WeightEntry> entries = w.entries();
  for (auto& e : entries) e.weight /= sums(e.row);
  return SpatialWeights::from_entries(n, entries, true);
}

// --------------------------------------------------------------- spectrum --

std::optional<Vector> real_spectrum(const SpatialWeights& w) {
  if (!w.symmetrizer() || w.n() > kDenseEigenLimit) return std::nullopt;
  const Matrix s = Matrix(symmetrized(w.matrix(), *w.symmetrizer()));
  Eigen::SelfAdjointEigenSolver<Matrix> solver(s, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigensolve failed");
  return solver.eigenvalues();
}

RhoInterval rho_interval(const SpatialWeights& w) {
  if (!w.row_normalized()) {
    throw InvalidArgument("rho interval is defined for a row-normalized weight matrix");
  }
  double lambda_min = 0.0;
  if (w.n() <= kDenseEigenLimit) {
    if (auto spectrum = real_spectrum(w)) {
      lambda_min = spectrum->minCoeff();
    } else {
      Eigen::EigenSolver<Matrix> solver(Matrix(w.matrix()), false);
      if (solver.info() != Eigen::Success) throw NumericalError("eigensolve failed");
      const auto ev = solver.eigenvalues();
      lambda_min = 0.0;
      for (Index i = 0; i < ev.size(); ++i) {
        if (std::abs(ev(i).imag()) <= 1e-9) lambda_min = std::min(lambda_min, ev(i).real());
      }
    }
  } else {
    const SparseMatrix op =
        w.symmetrizer() ? symmetrized(w.matrix(), *w.symmetrizer()) : w.matrix();
    lambda_min = power_iteration_lambda_min(op);
  }
  if (!(lambda_min < 0.0)) throw NumericalError("weight matrix has no negative eigenvalue");
  return {1.0 / lambda_min, 1.0};
}

SparseMatrix precision_matrix(double rho, const SpatialWeights& w, const RhoInterval& interval) {
  if (!interval.contains(rho)) {
    throw DomainError("rho=" + std::to_string(rho) + " outside admissible interval (" +
                      std::to_string(interval.lower) + ", " + std::to_string(interval.upper) +
                      ")");
  }
  const Index n = w.n();
  SparseMatrix identity(n, n);
  identity.setIdentity();
  const SparseMatrix a = identity - rho * w.matrix();
  SparseMatrix m = SparseMatrix(a.transpose()) * a;
  m.makeCompressed();
  return m;
}

SparseMatrix precision_matrix(double rho, const SpatialWeights& w) {
  return precision_matrix(rho, w, rho_interval(w));
}

// ------------------------------------------------------------ parameters --

double rho_from_logit(double rho_logit) { return std::tanh(0.5 * rho_logit); }

double rho_to_logit(double rho) {
  if (!(rho > -1.0 && rho < 1.0)) {
    throw DomainError("rho=" + std::to_string(rho) + " maps to an infinite logit");
  }
  return std::log1p(rho) - std::log1p(-rho);
}

double rho_logit_jacobian(double rho_logit) {
  // 2 e^l / (1 + e^l)^2 written symmetrically to avoid overflow.
  const double e = std::exp(-std::abs(rho_logit));
  return 2.0 * e / ((1.0 + e) * (1.0 + e));
}

UnconstrainedSemParams to_unconstrained(const SemParams& p) {
  if (!(p.sigma2_y > 0.0) || !std::isfinite(p.sigma2_y)) {
    throw InvalidArgument("sigma2_y must be positive and finite");
  }
  return {p.beta, std::log(p.sigma2_y), rho_to_logit(p.rho)};
}

SemParams from_unconstrained(const UnconstrainedSemParams& u) {
  return {u.beta, std::exp(u.gamma), rho_from_logit(u.rho_logit)};
}

// ------------------------------------------------------ precision model --

PrecisionModel::PrecisionModel(const SpatialWeights& w, Options opts)
    : w_(w.matrix()),
      wt_(w.matrix().transpose()),
      interval_(rho_interval(w)),
      spectrum_(real_spectrum(w)) {
  sym_ = w_ + wt_;
  wtw_ = wt_ * w_;
  sym_.makeCompressed();
  wtw_.makeCompressed();
  method_ = opts.method;
  if (method_ == LogDetMethod::kAuto) {
    if (spectrum_) {
      method_ = LogDetMethod::kSpectrum;
    } else if (n() <= opts.exact_trace_limit) {
      method_ = LogDetMethod::kSparseCholesky;
    } else {
      method_ = LogDetMethod::kHutchinson;
    }
  }
  if (method_ == LogDetMethod::kSpectrum && !spectrum_) {
    throw InvalidArgument("spectral log-determinant requires a symmetrizable W with n <= " +
                          std::to_string(kDenseEigenLimit));
  }
  if (method_ == LogDetMethod::kHutchinson) {
    if (opts.hutchinson_probes < 1) throw InvalidArgument("need at least one trace probe");
    std::mt19937_64 engine(opts.probe_seed);
    probes_.resize(n(), opts.hutchinson_probes);
    for (Index j = 0; j < probes_.cols(); ++j) {
      for (Index i = 0; i < n(); ++i) probes_(i, j) = (engine() & 1U) ? 1.0 : -1.0;
    }
  }
}

void PrecisionModel::check_rho(double rho) const {
  if (!std::isfinite(rho) || !interval_.contains(rho)) {
    throw DomainError("rho=" + std::to_string(rho) + " outside admissible interval (" +
                      std::to_string(interval_.lower) + ", " + std::to_string(interval_.upper) +
                      ")");
  }
}

SparseMatrix PrecisionModel::matrix(double rho) const {
  SparseMatrix identity(n(), n());
  identity.setIdentity();
  SparseMatrix m = identity - rho * sym_ + (rho * rho) * wtw_;
  m.makeCompressed();
  return m;
}

SparseMatrix PrecisionModel::derivative(double rho) const {
  SparseMatrix d = (2.0 * rho) * wtw_ - sym_;
  d.makeCompressed();
  return d;
}

Vector PrecisionModel::apply(double rho, const Vector& v) const {
  const Vector av = v - rho * (w_ * v);
  return av - rho * (wt_ * av);
}

double PrecisionModel::quad(double rho, const Vector& v) const {
  return (v - rho * (w_ * v)).squaredNorm();
}

double PrecisionModel::dquad(double rho, const Vector& v) const {
  const Vector wv = w_ * v;
  return -2.0 * v.dot(wv) + 2.0 * rho * wv.squaredNorm();
}

LogDetValue PrecisionModel::log_det(double rho, bool with_derivative) const {
  check_rho(rho);
  switch (method_) {
    case LogDetMethod::kSpectrum:
      return log_det_spectrum(rho, with_derivative);
    case LogDetMethod::kHutchinson:
      return log_det_cholesky(rho, with_derivative, true);
    default:
      return log_det_cholesky(rho, with_derivative, false);
  }
}

LogDetValue PrecisionModel::log_det_spectrum(double rho, bool with_derivative) const {
  // |M_y| = |A|^2 and det A = prod (1 - rho lambda_i).
  LogDetValue out;
  for (Index i = 0; i < spectrum_->size(); ++i) {
    const double lam = (*spectrum_)(i);
    const double f = 1.0 - rho * lam;
    out.log_det += 2.0 * std::log(f);
    if (with_derivative) out.d_log_det -= 2.0 * lam / f;
  }
  return out;
}

LogDetValue PrecisionModel::log_det_cholesky(double rho, bool with_derivative,
                                             bool stochastic) const {
  Eigen::SimplicialLLT<SparseMatrix> llt(matrix(rho));
  if (llt.info() != Eigen::Success) {
    throw DomainError("Cholesky of M_y failed at rho=" + std::to_string(rho) +
                      " (rho out of range?)");
  }
  LogDetValue out;
  const SparseMatrix& l = llt.matrixL();
  for (Index i = 0; i < n(); ++i) out.log_det += 2.0 * std::log(l.coeff(i, i));
  if (!with_derivative) return out;
  const SparseMatrix dm = derivative(rho);
  if (stochastic) {
    const Matrix solved = llt.solve(Matrix(dm * probes_));
    double acc = 0.0;
    for (Index j = 0; j < probes_.cols(); ++j) acc += probes_.col(j).dot(solved.col(j));
    out.d_log_det = acc / static_cast<double>(probes_.cols());
  } else {
    // tr(M^{-1} dM) from solves against column chunks of dM.
    constexpr Index kChunk = 64;
    double acc = 0.0;
    for (Index j0 = 0; j0 < n(); j0 += kChunk) {
      const Index width = std::min(kChunk, n() - j0);
      const Matrix rhs = Matrix(dm.middleCols(j0, width));
      const Matrix x = llt.solve(rhs);
      for (Index k = 0; k < width; ++k) acc += x(j0 + k, k);
    }
    out.d_log_det = acc;
  }
  return out;
}

// ------------------------------------------------------------ likelihood --

double sem_log_likelihood(const Vector& y, const SemParams& params, const Matrix& x,
                          const SpatialWeights& w) {
  const Index n = w.n();
  if (y.size() != n || x.rows() != n || params.beta.size() != x.cols()) {
    throw InvalidArgument("sem_log_likelihood: dimension mismatch");
  }
  if (!(params.sigma2_y > 0.0)) throw InvalidArgument("sigma2_y must be positive");
  SparseMatrix identity(n, n);
  identity.setIdentity();
  const SparseMatrix a = identity - params.rho * w.matrix();
  const SparseMatrix m = SparseMatrix(a.transpose()) * a;
  Eigen::SimplicialLLT<SparseMatrix> llt(m);
  if (llt.info() != Eigen::Success) {
    throw DomainError("Cholesky of M_y failed at rho=" + std::to_string(params.rho) +
                      " (rho out of range?)");
  }
  double log_det = 0.0;
  const SparseMatrix& l = llt.matrixL();
  for (Index i = 0; i < n; ++i) log_det += 2.0 * std::log(l.coeff(i, i));
  const Vector r = y - x * params.beta;
  const double quad = (a * r).squaredNorm();
  const double dn = static_cast<double>(n);
  return -0.5 * dn * std::log(2.0 * std::numbers::pi) - 0.5 * dn * std::log(params.sigma2_y) +
         0.5 * log_det - quad / (2.0 * params.sigma2_y);
}

// ------------------------------------------------------------- partition --

PartitionedView::PartitionedView(Index n, IndexList first, IndexList second)
    : n_(n), first_(std::move(first)), second_(std::move(second)) {
  if (static_cast<Index>(first_.size() + second_.size()) != n_) {
    throw InvalidArgument("partition groups must cover all " + std::to_string(n_) + " units");
  }
  std::vector<char> hit(static_cast<std::size_t>(n_), 0);
  for (const IndexList* g : {&first_, &second_}) {
    for (Index i : *g) {
      if (i < 0 || i >= n_) throw InvalidArgument("partition index out of range");
      if (hit[i]) throw InvalidArgument("partition groups overlap at index " + std::to_string(i));
      hit[i] = 1;
    }
  }
}

PartitionedView PartitionedView::with_complement(Index n, IndexList first) {
  std::vector<char> in_first(static_cast<std::size_t>(n), 0);
  for (Index i : first) {
    if (i < 0 || i >= n) throw InvalidArgument("partition index out of range");
    if (in_first[i]) throw InvalidArgument("duplicate index " + std::to_string(i));
    in_first[i] = 1;
  }
  IndexList second;
  second.reserve(static_cast<std::size_t>(n) - first.size());
  for (Index i = 0; i < n; ++i) {
    if (!in_first[i]) second.push_back(i);
  }
  return PartitionedView(n, std::move(first), std::move(second));
}

IndexList PartitionedView::ordering() const {
  IndexList out = first_;
  out.insert(out.end(), second_.begin(), second_.end());
  return out;
}

Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, Index> PartitionedView::permutation()
    const {
  // P with (P v)_k = v_{ordering[k]}; Eigen stores the image of each column,
  // so build the inverse map and invert.
  const IndexList order = ordering();
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, Index> p(n_);
  for (Index k = 0; k < n_; ++k) p.indices()(order[k]) = k;
  return p;
}

Vector PartitionedView::sub(const Vector& v, Group g) const { return gather(v, indices(g)); }

Matrix PartitionedView::rows(const Matrix& x, Group g) const { return gather_rows(x, indices(g)); }

SparseMatrix PartitionedView::block(const SparseMatrix& m, Group rows, Group cols) const {
  return sparse_submatrix(m, indices(rows), indices(cols));
}

Matrix PartitionedView::block(const Matrix& m, Group rows, Group cols) const {
  const IndexList& r = indices(rows);
  const IndexList& c = indices(cols);
  Matrix out(static_cast<Index>(r.size()), static_cast<Index>(c.size()));
  for (std::size_t j = 0; j < c.size(); ++j) {
    for (std::size_t i = 0; i < r.size(); ++i) out(i, j) = m(r[i], c[j]);
  }
  return out;
}

SparseMatrix sparse_submatrix(const SparseMatrix& m, const IndexList& rows,
                              const IndexList& cols) {
  check_square(m, "sparse_submatrix parent");
  std::vector<Index> pos(static_cast<std::size_t>(m.rows()), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) pos[rows[i]] = static_cast<Index>(i);
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    for (SparseMatrix::InnerIterator it(m, cols[j]); it; ++it) {
      const Index p = pos[it.row()];
      if (p >= 0) triplets.emplace_back(p, static_cast<Index>(j), it.value());
    }
  }
  SparseMatrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  out.setFromTriplets(triplets.begin(), triplets.end());
  out.makeCompressed();
  return out;
}

Vector gather(const Vector& v, const IndexList& idx) {
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(i) = v(idx[i]);
  return out;
}

Matrix gather_rows(const Matrix& x, const IndexList& idx) {
  Matrix out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = x.row(idx[i]);
  return out;
}

}  // namespace spatialvb
