#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace spatialvb {

// Explicit random stream. Every stochastic routine takes one by reference so
// replicates can run with independent, reproducible streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = normal_(engine_);
    return z;
  }

  // Child stream whose seed is drawn from this one.
  Rng split() { return Rng(engine_()); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace spatialvb
