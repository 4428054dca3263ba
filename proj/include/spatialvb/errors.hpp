#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spatialvb {

// Argument or shape violation detected before any numerical work.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A spatial unit with no neighbours where the model needs at least one.
class DegenerateUnitError : public InvalidArgument {
 public:
  explicit DegenerateUnitError(std::size_t row)
      : InvalidArgument("spatial unit " + std::to_string(row) +
                        " has no neighbours (empty weight row)"),
        row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// Parameter outside its admissible region (e.g. rho outside the interval).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Factorization or eigensolve failure.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Command-line or configuration misuse.
class UsageError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

}  // namespace spatialvb
