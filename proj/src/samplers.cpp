#include "spatialvb/samplers.hpp"

#include <cmath>
#include <numeric>

namespace spatialvb {

namespace {

void check_factor(const SparseLlt& llt, const char* what) {
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string("Cholesky of ") + what + " failed");
  }
}

// x ~ N(0, Q^{-1}) from the factor P Q P^T = L L^T: x = P^T L^{-T} z.
Vector draw_from_factor(const SparseLlt& llt, Index dim, Rng& rng) {
  const Vector z = rng.normal_vector(dim);
  const Vector w = llt.matrixU().solve(z);
  return llt.permutationPinv() * w;
}

}  // namespace

// ------------------------------------------------------- ConditionalGaussian --

ConditionalGaussian::ConditionalGaussian(Vector mean, const SparseMatrix& precision_core,
                                         double sigma2)
    : mean_(std::move(mean)), sigma2_(sigma2) {
  if (precision_core.rows() != mean_.size() || precision_core.cols() != mean_.size()) {
    throw InvalidArgument("conditional Gaussian: precision shape mismatch");
  }
  if (!(sigma2 > 0.0)) throw InvalidArgument("conditional Gaussian: sigma2 must be positive");
  auto llt = std::make_shared<SparseLlt>();
  if (mean_.size() > 0) {
    llt->compute(precision_core);
    check_factor(*llt, "conditional precision");
  }
  llt_ = std::move(llt);
}

Matrix ConditionalGaussian::covariance() const {
  if (dim() == 0) return Matrix(0, 0);
  const Matrix id = Matrix::Identity(dim(), dim());
  return sigma2_ * Matrix(llt_->solve(id));
}

Vector ConditionalGaussian::sample(Rng& rng) const {
  if (dim() == 0) return Vector(0);
  return mean_ + std::sqrt(sigma2_) * draw_from_factor(*llt_, dim(), rng);
}

ConditionalGaussian mar_conditional(const PrecisionModel& precision, const Matrix& x,
                                    const SemParams& phi, const Vector& y_full,
                                    const PartitionedView& view) {
  using G = PartitionedView::Group;
  precision.check_rho(phi.rho);
  if (x.rows() != view.n() || y_full.size() != view.n() || phi.beta.size() != x.cols()) {
    throw InvalidArgument("mar_conditional: dimension mismatch");
  }
  const SparseMatrix m = precision.matrix(phi.rho);
  const SparseMatrix m_uu = view.block(m, G::kSecond, G::kSecond);
  const SparseMatrix m_us = view.block(m, G::kSecond, G::kFirst);
  const Vector r_s = view.sub(y_full, G::kFirst) - view.rows(x, G::kFirst) * phi.beta;
  const Vector xb_u = view.rows(x, G::kSecond) * phi.beta;
  if (m_uu.rows() == 0) return ConditionalGaussian(Vector(0), m_uu, phi.sigma2_y);
  SparseLlt llt(m_uu);
  check_factor(llt, "M_uu");
  Vector mean = xb_u - llt.solve(Vector(m_us * r_s));
  return ConditionalGaussian(std::move(mean), m_uu, phi.sigma2_y);
}

// --------------------------------------------------------- BlockConditionals --

BlockConditionals::BlockConditionals(const TargetDensity& target, const BlockPartition& partition)
    : target_(&target), rho_(0.0) {
  // Blocks must be disjoint and cover the unobserved units.
  const MissingPattern& pattern = target.pattern();
  std::vector<char> hit(static_cast<std::size_t>(pattern.n_u()), 0);
  Index covered = 0;
  for (const auto& b : partition.blocks) {
    for (Index unit : b) {
      if (unit < 0 || unit >= pattern.n()) throw InvalidArgument("block unit out of range");
      const Index slot = pattern.position_in_missing(unit);
      if (slot < 0) throw InvalidArgument("block contains observed unit " + std::to_string(unit));
      if (hit[slot]) throw InvalidArgument("blocks overlap at unit " + std::to_string(unit));
      hit[slot] = 1;
      ++covered;
    }
  }
  if (covered != pattern.n_u()) throw InvalidArgument("blocks do not cover every missing unit");
  init_blocks(partition.blocks);
}

BlockConditionals::BlockConditionals(const TargetDensity& target) : target_(&target), rho_(0.0) {
  std::vector<IndexList> groups;
  if (target.pattern().n_u() > 0) groups.push_back(target.pattern().unobserved());
  init_blocks(groups);
}

void BlockConditionals::init_blocks(const std::vector<IndexList>& groups) {
  const MissingPattern& pattern = target_->pattern();
  // Any rho gives the structural pattern; explicit zeros are retained.
  const SparseMatrix m = target_->precision().matrix(0.5);
  for (const auto& g : groups) {
    if (g.empty()) throw InvalidArgument("empty block");
    Block b;
    b.units = g;
    b.slots.reserve(g.size());
    for (Index unit : g) b.slots.push_back(pattern.position_in_missing(unit));
    b.llt = std::make_unique<SparseLlt>();
    b.llt->analyzePattern(sparse_submatrix(m, g, g));
    blocks_.push_back(std::move(b));
  }
}

void BlockConditionals::prepare(double rho) {
  if (prepared_ && rho == rho_) return;
  target_->precision().check_rho(rho);
  const SparseMatrix m = target_->precision().matrix(rho);
  for (auto& b : blocks_) {
    b.llt->factorize(sparse_submatrix(m, b.units, b.units));
    check_factor(*b.llt, "block precision M_{u_j u_j}");
  }
  rho_ = rho;
  prepared_ = true;
}

Vector BlockConditionals::residual_precision(Index j, double rho, const Vector& r) const {
  return gather(target_->precision().apply(rho, r), blocks_[j].units);
}

Vector BlockConditionals::mean(Index j, const SemParams& phi, const Vector& y_full,
                               const Vector& xb) const {
  if (!prepared_ || phi.rho != rho_) throw InvalidArgument("block conditionals not prepared at rho");
  // (M r)_{u_j} = M_{u_j s_j} r_{s_j} + M_{u_j u_j} r_{u_j}, hence
  // X_{u_j} beta - M_jj^{-1} M_{u_j s_j} r_{s_j} = y_{u_j} - M_jj^{-1} (M r)_{u_j}.
  const Block& b = blocks_[j];
  const Vector r = y_full - xb;
  return gather(y_full, b.units) - b.llt->solve(residual_precision(j, phi.rho, r));
}

Vector BlockConditionals::draw(Index j, const SemParams& phi, const Vector& y_full,
                               const Vector& xb, Rng& rng) const {
  const Block& b = blocks_[j];
  return mean(j, phi, y_full, xb) +
         std::sqrt(phi.sigma2_y) * draw_from_factor(*b.llt, static_cast<Index>(b.units.size()), rng);
}

// ----------------------------------------------------------------- samplers --

Vector gibbs_sweep(BlockConditionals& blocks, const SemParams& phi, int n1, Rng& rng,
                   const Vector& y_u_init) {
  if (n1 < 1) throw InvalidArgument("n1 must be at least 1");
  const TargetDensity& target = blocks.target();
  blocks.prepare(phi.rho);
  Vector y = target.pattern().assemble(target.y_observed(), y_u_init);
  const Vector xb = target.x() * phi.beta;
  for (int i = 0; i < n1; ++i) {
    for (Index j = 0; j < blocks.k(); ++j) {
      const Vector yj = blocks.draw(j, phi, y, xb, rng);
      const IndexList& units = blocks.units(j);
      for (std::size_t t = 0; t < units.size(); ++t) y(units[t]) = yj(static_cast<Index>(t));
    }
  }
  return gather(y, target.pattern().unobserved());
}

Vector draw_mar_conditional(BlockConditionals& full, const Vector& theta, Rng& rng) {
  const TargetDensity& target = full.target();
  if (target.pattern().n_u() == 0) return Vector(0);
  const SemParams phi = target.sem_params(theta);
  full.prepare(phi.rho);
  const Vector xb = target.x() * phi.beta;
  return full.draw(0, phi, target.y_observed(), xb, rng);
}

namespace {

// Accept-reject of one block proposal; the selection likelihood factorizes
// per unit so only the block's units enter the ratio.
bool metropolis_block(const MissingPattern& pattern, const SelectionModel& sel,
                      const IndexList& units, const Vector& proposal, Vector& y, Rng& rng) {
  const double current = selection_log_prob(pattern, y, sel, units);
  Vector y_star = y;
  for (std::size_t t = 0; t < units.size(); ++t) y_star(units[t]) = proposal(static_cast<Index>(t));
  const double proposed = selection_log_prob(pattern, y_star, sel, units);
  const double log_ratio = proposed - current;
  const double u = rng.uniform();
  if (log_ratio >= 0.0 || std::log(u) < log_ratio) {
    y = std::move(y_star);
    return true;
  }
  return false;
}

}  // namespace

McmcOutcome mcmc_nob(BlockConditionals& full, const Vector& theta, int n1, Rng& rng,
                     const Vector& y_u_init) {
  if (n1 < 1) throw InvalidArgument("n1 must be at least 1");
  const TargetDensity& target = full.target();
  const MissingPattern& pattern = target.pattern();
  McmcOutcome out;
  out.acceptance.resize(1);
  if (pattern.n_u() == 0) {
    out.y_u = Vector(0);
    return out;
  }
  if (full.k() != 1) throw InvalidArgument("mcmc_nob needs the single full block");
  const SemParams phi = target.sem_params(theta);
  const SelectionModel sel = target.selection_model(theta);
  full.prepare(phi.rho);
  const Vector xb = target.x() * phi.beta;
  Vector y = pattern.assemble(target.y_observed(), y_u_init);
  for (int i = 0; i < n1; ++i) {
    const Vector proposal = full.draw(0, phi, y, xb, rng);
    ++out.acceptance[0].proposed;
    if (metropolis_block(pattern, sel, full.units(0), proposal, y, rng)) ++out.acceptance[0].accepted;
  }
  out.y_u = gather(y, pattern.unobserved());
  return out;
}

McmcOutcome mcmc_block(BlockConditionals& blocks, const Vector& theta, BlockScheme scheme,
                       int k_prime, int n1, Rng& rng, const Vector& y_u_init) {
  if (n1 < 1) throw InvalidArgument("n1 must be at least 1");
  const TargetDensity& target = blocks.target();
  const MissingPattern& pattern = target.pattern();
  const Index k = blocks.k();
  if (scheme == BlockScheme::kRandom && (k_prime < 1 || k_prime > k)) {
    throw InvalidArgument("k_prime must be in [1, k]");
  }
  McmcOutcome out;
  out.acceptance.resize(static_cast<std::size_t>(k));
  const SemParams phi = target.sem_params(theta);
  const SelectionModel sel = target.selection_model(theta);
  blocks.prepare(phi.rho);
  const Vector xb = target.x() * phi.beta;
  Vector y = pattern.assemble(target.y_observed(), y_u_init);
  IndexList order(static_cast<std::size_t>(k));
  for (int i = 0; i < n1; ++i) {
    std::iota(order.begin(), order.end(), Index{0});
    Index visits = k;
    if (scheme == BlockScheme::kRandom) {
      // Partial Fisher-Yates: the first k' entries are a uniform draw
      // without replacement.
      for (Index t = 0; t < k_prime; ++t) {
        auto pick = t + static_cast<Index>(rng.uniform() * static_cast<double>(k - t));
        if (pick >= k) pick = k - 1;
        std::swap(order[t], order[pick]);
      }
      visits = k_prime;
    }
    for (Index t = 0; t < visits; ++t) {
      const Index j = order[t];
      const Vector proposal = blocks.draw(j, phi, y, xb, rng);
      ++out.acceptance[j].proposed;
      if (metropolis_block(pattern, sel, blocks.units(j), proposal, y, rng)) {
        ++out.acceptance[j].accepted;
      }
    }
  }
  out.y_u = gather(y, pattern.unobserved());
  return out;
}

DirectMarSampler::DirectMarSampler(const TargetDensity& target) : full_(target) {
  if (target.mechanism() != Mechanism::kMar) {
    throw InvalidArgument("direct conditional sampling requires MAR");
  }
}

Vector DirectMarSampler::sample(const Vector& theta, Rng& rng) {
  return draw_mar_conditional(full_, theta, rng);
}

GibbsMarSampler::GibbsMarSampler(const TargetDensity& target, const BlockPartition& partition,
                                 SamplerSettings settings)
    : full_(target), blocks_(target, partition), settings_(settings) {
  if (target.mechanism() != Mechanism::kMar) throw InvalidArgument("Gibbs sampler requires MAR");
}

Vector GibbsMarSampler::sample(const Vector& theta, Rng& rng) {
  const SemParams phi = full_.target().sem_params(theta);
  const Vector init = settings_.warm_start && last_.size() > 0
                          ? last_
                          : draw_mar_conditional(full_, theta, rng);
  last_ = gibbs_sweep(blocks_, phi, settings_.n1, rng, init);
  return last_;
}

MnarNoBlockSampler::MnarNoBlockSampler(const TargetDensity& target, SamplerSettings settings)
    : full_(target), settings_(settings) {
  if (target.mechanism() != Mechanism::kMnar) throw InvalidArgument("NoB MCMC requires MNAR");
}

Vector MnarNoBlockSampler::sample(const Vector& theta, Rng& rng) {
  const Vector init = settings_.warm_start && last_.size() > 0
                          ? last_
                          : draw_mar_conditional(full_, theta, rng);
  McmcOutcome res = mcmc_nob(full_, theta, settings_.n1, rng, init);
  acc_ += res.acceptance[0];
  last_ = std::move(res.y_u);
  return last_;
}

MnarBlockSampler::MnarBlockSampler(const TargetDensity& target, const BlockPartition& partition,
                                   BlockScheme scheme, SamplerSettings settings)
    : full_(target),
      blocks_(target, partition),
      scheme_(scheme),
      settings_(settings),
      acc_(static_cast<std::size_t>(partition.k())) {
  if (target.mechanism() != Mechanism::kMnar) throw InvalidArgument("block MCMC requires MNAR");
  if (scheme == BlockScheme::kRandom &&
      (settings.k_prime < 1 || settings.k_prime > partition.k())) {
    throw InvalidArgument("k_prime must be in [1, k]");
  }
}

Vector MnarBlockSampler::sample(const Vector& theta, Rng& rng) {
  const Vector init = settings_.warm_start && last_.size() > 0
                          ? last_
                          : draw_mar_conditional(full_, theta, rng);
  McmcOutcome res =
      mcmc_block(blocks_, theta, scheme_, settings_.k_prime, settings_.n1, rng, init);
  for (std::size_t j = 0; j < acc_.size(); ++j) acc_[j] += res.acceptance[j];
  last_ = std::move(res.y_u);
  return last_;
}

}  // namespace spatialvb
