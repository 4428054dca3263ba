#pragma once

// Conditional Gaussian draws of the missing responses, blocked Gibbs sweeps
// and the Metropolis schemes used under MNAR.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/SparseCholesky>

#include "spatialvb/posterior.hpp"
#include "spatialvb/rng.hpp"

namespace spatialvb {

using SparseLlt = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;

// N(mean, sigma2 * Q^{-1}) held through a sparse Cholesky factor of Q.
class ConditionalGaussian {
 public:
  ConditionalGaussian(Vector mean, const SparseMatrix& precision_core, double sigma2);

  const Vector& mean() const { return mean_; }
  double sigma2() const { return sigma2_; }
  Index dim() const { return mean_.size(); }
  // Dense sigma2 * Q^{-1}; for tests and small blocks.
  Matrix covariance() const;
  Vector sample(Rng& rng) const;

 private:
  Vector mean_;
  double sigma2_;
  std::shared_ptr<const SparseLlt> llt_;
};

// Distribution of the second group of `view` given the first:
// mean X_u beta - M_uu^{-1} M_us (y_s - X_s beta), covariance sigma2 M_uu^{-1}.
ConditionalGaussian mar_conditional(const PrecisionModel& precision, const Matrix& x,
                                    const SemParams& phi, const Vector& y_full,
                                    const PartitionedView& view);

inline Vector sample_conditional(const ConditionalGaussian& cg, Rng& rng) {
  return cg.sample(rng);
}

struct AcceptanceCounter {
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;
  double rate() const {
    return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
  }
  AcceptanceCounter& operator+=(const AcceptanceCounter& o) {
    proposed += o.proposed;
    accepted += o.accepted;
    return *this;
  }
};

// Per-block conditional machinery for a fixed partition of y_u. The sparse
// pattern of each M_{u_j u_j} is analysed once; numeric factors are rebuilt
// only when rho changes.
class BlockConditionals {
 public:
  BlockConditionals(const TargetDensity& target, const BlockPartition& partition);
  // A single block holding every unobserved unit: the full MAR conditional.
  explicit BlockConditionals(const TargetDensity& target);

  const TargetDensity& target() const { return *target_; }
  Index k() const { return static_cast<Index>(blocks_.size()); }
  const IndexList& units(Index j) const { return blocks_[j].units; }
  const IndexList& slots(Index j) const { return blocks_[j].slots; }

  // Factorizes every block at rho (no-op if rho is unchanged).
  void prepare(double rho);
  double prepared_rho() const { return rho_; }

  // Draw from p(y_{u_j} | phi, y_{s_j}) where y_full holds the current values
  // of every unit and xb = X beta.
  Vector draw(Index j, const SemParams& phi, const Vector& y_full, const Vector& xb, Rng& rng) const;
  // Conditional mean of block j, for tests.
  Vector mean(Index j, const SemParams& phi, const Vector& y_full, const Vector& xb) const;

 private:
  struct Block {
    IndexList units;
    IndexList slots;  // positions in y_u
    std::unique_ptr<SparseLlt> llt;
  };
  void init_blocks(const std::vector<IndexList>& groups);
  Vector residual_precision(Index j, double rho, const Vector& r) const;

  const TargetDensity* target_;
  std::vector<Block> blocks_;
  double rho_;
  bool prepared_ = false;
};

// n1 sweeps, blocks in order, each drawn with the freshest values of
// the others.
Vector gibbs_sweep(BlockConditionals& blocks, const SemParams& phi, int n1, Rng& rng,
                   const Vector& y_u_init);

struct McmcOutcome {
  Vector y_u;
  std::vector<AcceptanceCounter> acceptance;  // one per block (one for NoB)
  AcceptanceCounter total() const {
    AcceptanceCounter t;
    for (const auto& a : acceptance) t += a;
    return t;
  }
};

// Independence Metropolis with the MAR conditional as proposal.
McmcOutcome mcmc_nob(BlockConditionals& full, const Vector& theta, int n1, Rng& rng,
                     const Vector& y_u_init);

enum class BlockScheme { kAll, kRandom };

// Blocked Metropolis over every block in turn (kAll) or over k' randomly chosen blocks (kRandom).
McmcOutcome mcmc_block(BlockConditionals& blocks, const Vector& theta, BlockScheme scheme,
                       int k_prime, int n1, Rng& rng, const Vector& y_u_init);

// Missing-value sampler plugged into the hybrid VB loop.
class MissingSampler {
 public:
  virtual ~MissingSampler() = default;
  virtual Vector sample(const Vector& theta, Rng& rng) = 0;
  virtual std::string name() const = 0;
  // Acceptance since construction; empty for exact samplers.
  virtual std::vector<AcceptanceCounter> acceptance() const { return {}; }
};

struct SamplerSettings {
  int n1 = 10;
  Index block_size = 0;  // 0 = mechanism default
  int k_prime = 3;
  bool warm_start = false;
  std::uint64_t partition_seed = 7;
};

// Direct draw from p(y_u | phi, y_o) (MAR).
class DirectMarSampler final : public MissingSampler {
 public:
  explicit DirectMarSampler(const TargetDensity& target);
  Vector sample(const Vector& theta, Rng& rng) override;
  std::string name() const override { return "direct"; }

 private:
  BlockConditionals full_;
};

class GibbsMarSampler final : public MissingSampler {
 public:
  GibbsMarSampler(const TargetDensity& target, const BlockPartition& partition,
                  SamplerSettings settings);
  Vector sample(const Vector& theta, Rng& rng) override;
  std::string name() const override { return "gibbs"; }

 private:
  BlockConditionals full_;
  BlockConditionals blocks_;
  SamplerSettings settings_;
  Vector last_;
};

class MnarNoBlockSampler final : public MissingSampler {
 public:
  MnarNoBlockSampler(const TargetDensity& target, SamplerSettings settings);
  Vector sample(const Vector& theta, Rng& rng) override;
  std::string name() const override { return "nob"; }
  std::vector<AcceptanceCounter> acceptance() const override { return {acc_}; }

 private:
  BlockConditionals full_;
  SamplerSettings settings_;
  AcceptanceCounter acc_;
  Vector last_;
};

class MnarBlockSampler final : public MissingSampler {
 public:
  MnarBlockSampler(const TargetDensity& target, const BlockPartition& partition,
                   BlockScheme scheme, SamplerSettings settings);
  Vector sample(const Vector& theta, Rng& rng) override;
  std::string name() const override { return scheme_ == BlockScheme::kAll ? "allb" : "randomb"; }
  std::vector<AcceptanceCounter> acceptance() const override { return acc_; }

 private:
  BlockConditionals full_;
  BlockConditionals blocks_;
  BlockScheme scheme_;
  SamplerSettings settings_;
  std::vector<AcceptanceCounter> acc_;
  Vector last_;
};

// Draw y_u from the MAR conditional at theta (initial state of the MCMC samplers).
Vector draw_mar_conditional(BlockConditionals& full, const Vector& theta, Rng& rng);

}  // namespace spatialvb
