#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <vector>

#include "oem/models.hpp"

namespace oem {

/// Result of a Cholesky factorization under the jitter policy: at most one
/// retry with 1e-10 * trace / dim added to the diagonal.
struct CholeskyResult {
  Matrix factor;        // lower triangular, factor * factor^T == input (+ jitter)
  double jitter = 0.0;  // diagonal shift that was applied, 0 when none
};

/// Factorizes a symmetric matrix. The all-zero matrix is accepted and yields
/// a zero factor (degenerate covariance). Throws NotPositiveDefiniteError
/// when the factorization fails even after the jitter retry.
CholeskyResult cholesky(const Matrix& m);

/// Symmetric positive (semi)definite matrix with its Cholesky factor. The
/// stored entries are symmetrized, and include the jitter when one was needed.
class SpdMatrix {
 public:
  explicit SpdMatrix(const Matrix& m);

  static SpdMatrix identity(std::size_t dim, double scale = 1.0);
  static SpdMatrix zero(std::size_t dim);

  std::size_t dim() const { return static_cast<std::size_t>(entries_.rows()); }
  const Matrix& matrix() const { return entries_; }
  const Matrix& cholesky_factor() const { return factor_; }
  double jitter() const { return jitter_; }
  bool is_zero() const { return zero_; }

  /// log det of the matrix; -inf for a degenerate (zero) matrix.
  double log_determinant() const;
  /// Solves factor * out = rhs (whitening); requires a non-degenerate matrix.
  Matrix whiten(const Matrix& rhs) const;

 private:
  Matrix entries_;
  Matrix factor_;
  double jitter_ = 0.0;
  bool zero_ = false;
};

/// Returns (m + m^T) / 2.
Matrix symmetrize(const Matrix& m);

/// Particle representation of a distribution: n_p members of dimension n_x,
/// stored as the columns of a matrix. Every member is finite.
class Ensemble {
 public:
  explicit Ensemble(Matrix members);

  std::size_t n_x() const { return static_cast<std::size_t>(members_.rows()); }
  std::size_t n_p() const { return static_cast<std::size_t>(members_.cols()); }
  const Matrix& members() const { return members_; }
  Vector member(std::size_t j) const { return members_.col(static_cast<Eigen::Index>(j)); }

  Vector mean() const;
  /// Members minus the ensemble mean, as columns.
  Matrix anomalies() const;
  /// Unbiased sample covariance; throws EnsembleSizeError when n_p < 2.
  Matrix covariance() const;

 private:
  Matrix members_;
};

/// Reproducible random stream. Streams with the same (seed, stream id) give
/// identical sequences; different stream ids are decorrelated by hashing the
/// pair into the engine's seed sequence. A SeededRng has a single owner.
class SeededRng {
 public:
  SeededRng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  double normal();
  double uniform();
  Vector standard_normal(std::size_t n);
  /// n x cols matrix of independent standard normals, filled column by column.
  Matrix standard_normal(std::size_t n, std::size_t cols);

  /// A new independent stream keyed by this stream and `keys`.
  SeededRng substream(std::initializer_list<std::uint64_t> keys) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Draws n samples mean + L z with L the Cholesky factor of cov.
Ensemble sample_mvn(const Vector& mean, const SpdMatrix& cov, SeededRng& rng, std::size_t n);

/// Maps states to observation space. Linear operators (identity, component
/// selection, dense matrix) expose their matrix; a nonlinear operator carries
/// its own Jacobian.
class ObservationOperator {
 public:
  using Map = std::function<Vector(const Vector&)>;
  using Jacobian = std::function<Matrix(const Vector&)>;

  static ObservationOperator identity(std::size_t n);
  static ObservationOperator selection(std::size_t n_x, std::vector<std::size_t> indices);
  static ObservationOperator linear(Matrix h);
  static ObservationOperator nonlinear(std::size_t n_x, std::size_t n_y, Map map, Jacobian jac);

  std::size_t n_x() const { return n_x_; }
  std::size_t n_y() const { return n_y_; }
  bool is_linear() const { return !map_; }
  bool is_identity() const { return identity_; }
  /// Observation matrix; only valid for linear operators.
  const Matrix& matrix() const { return h_; }

  Vector apply(const Vector& x) const;
  /// Applies the operator to every column.
  Matrix apply_columns(const Matrix& states) const;
  Matrix jacobian(const Vector& x) const;

 private:
  ObservationOperator() = default;

  std::size_t n_x_ = 0;
  std::size_t n_y_ = 0;
  bool identity_ = false;
  Matrix h_;
  Map map_;
  Jacobian jac_;
};

/// M(x) + eta with eta ~ N(0, q).
Vector forecast_transition(const Dynamics& model, const Vector& x, const SpdMatrix& q,
                           SeededRng& rng);

/// H(x) + nu with nu ~ N(0, r).
Vector observe(const ObservationOperator& h, const Vector& x, const SpdMatrix& r, SeededRng& rng);

/// log N(y; mean, cov). Throws SingularMatrixError for a degenerate covariance.
double gaussian_loglik(const Vector& y, const Vector& mean, const SpdMatrix& cov);

}  // namespace oem
