#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace oem {

/// Base class for every error raised by the library. `code()` is a short
/// machine-readable tag (e.g. "not-positive-definite") that the CLI prints
/// alongside the message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class InvalidDimensionError : public Error {
 public:
  explicit InvalidDimensionError(const std::string& m) : Error("invalid-dimension", m) {}
};

class DimensionMismatchError : public Error {
 public:
  explicit DimensionMismatchError(const std::string& m) : Error("dimension-mismatch", m) {}
};

class ConfigurationError : public Error {
 public:
  explicit ConfigurationError(const std::string& m) : Error("configuration", m) {}
};

class NumericalOverflowError : public Error {
 public:
  explicit NumericalOverflowError(const std::string& m) : Error("numerical-overflow", m) {}
};

class NotPositiveDefiniteError : public Error {
 public:
  explicit NotPositiveDefiniteError(const std::string& m) : Error("not-positive-definite", m) {}
};

class SingularMatrixError : public Error {
 public:
  explicit SingularMatrixError(const std::string& m) : Error("singular-matrix", m) {}
};

class EnsembleSizeError : public Error {
 public:
  explicit EnsembleSizeError(const std::string& m) : Error("ensemble-size", m) {}
};

/// All importance weights underflowed; carries the largest log-weight seen.
class DegenerateWeightsError : public Error {
 public:
  DegenerateWeightsError(const std::string& m, double max_log_weight)
      : Error("degenerate-weights", m), max_log_weight_(max_log_weight) {}
  double max_log_weight() const noexcept { return max_log_weight_; }

 private:
  double max_log_weight_;
};

/// The mapping iterations of the variational particle filter kept increasing
/// the KL estimate. `trace()` holds the KL estimate at every iteration.
class VmpfDivergenceError : public Error {
 public:
  VmpfDivergenceError(const std::string& m, std::vector<double> trace)
      : Error("vmpf-divergence", m), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

class FilterDivergenceError : public Error {
 public:
  FilterDivergenceError(const std::string& m, std::size_t cycle)
      : Error("filter-divergence", m), cycle_(cycle) {}
  std::size_t cycle() const noexcept { return cycle_; }

 private:
  std::size_t cycle_;
};

}  // namespace oem
