#include "oem/statespace.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "oem/errors.hpp"

namespace oem {

namespace {

constexpr double kJitterFactor = 1e-10;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
  const std::uint64_t a = splitmix64(seed);
  const std::uint64_t b = splitmix64(a ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

bool try_llt(const Matrix& m, Matrix& factor) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) return false;
  factor = llt.matrixL();
  for (Eigen::Index i = 0; i < factor.rows(); ++i) {
    if (!(factor(i, i) > 0.0) || !std::isfinite(factor(i, i))) return false;
  }
  return true;
}

}  // namespace

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

CholeskyResult cholesky(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw InvalidDimensionError("cholesky: matrix must be square and non-empty");
  }
  if (!m.allFinite()) {
    throw NotPositiveDefiniteError("cholesky: matrix has non-finite entries");
  }
  const Matrix sym = symmetrize(m);
  CholeskyResult out;
  if (sym.isZero(0.0)) {
    out.factor = Matrix::Zero(sym.rows(), sym.cols());
    return out;
  }
  if (try_llt(sym, out.factor)) return out;

  const double jitter = kJitterFactor * sym.trace() / static_cast<double>(sym.rows());
  if (jitter > 0.0) {
    Matrix shifted = sym;
    shifted.diagonal().array() += jitter;
    if (try_llt(shifted, out.factor)) {
      out.jitter = jitter;
      return out;
    }
  }
  throw NotPositiveDefiniteError("cholesky: matrix is not positive definite (trace " +
                                 std::to_string(sym.trace()) + ")");
}

SpdMatrix::SpdMatrix(const Matrix& m) {
  CholeskyResult chol = cholesky(m);
  entries_ = symmetrize(m);
  if (chol.jitter > 0.0) entries_.diagonal().array() += chol.jitter;
  factor_ = std::move(chol.factor);
  jitter_ = chol.jitter;
  zero_ = entries_.isZero(0.0);
}

SpdMatrix SpdMatrix::identity(std::size_t dim, double scale) {
  const auto n = static_cast<Eigen::Index>(dim);
  return SpdMatrix(scale * Matrix::Identity(n, n));
}

SpdMatrix SpdMatrix::zero(std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  return SpdMatrix(Matrix::Zero(n, n));
}

double SpdMatrix::log_determinant() const {
  if (zero_) return -std::numeric_limits<double>::infinity();
  return 2.0 * factor_.diagonal().array().log().sum();
}

Matrix SpdMatrix::whiten(const Matrix& rhs) const {
  if (zero_) throw SingularMatrixError("cannot whiten with a degenerate covariance");
  return factor_.triangularView<Eigen::Lower>().solve(rhs);
}

Ensemble::Ensemble(Matrix members) : members_(std::move(members)) {
  if (members_.rows() == 0 || members_.cols() == 0) {
    throw EnsembleSizeError("ensemble must have at least one member of positive dimension");
  }
  if (!members_.allFinite()) {
    throw NumericalOverflowError("ensemble contains non-finite values");
  }
}

Vector Ensemble::mean() const { return members_.rowwise().mean(); }

Matrix Ensemble::anomalies() const { return members_.colwise() - mean(); }

Matrix Ensemble::covariance() const {
  if (n_p() < 2) throw EnsembleSizeError("sample covariance needs at least two members");
  const Matrix a = anomalies();
  return symmetrize(a * a.transpose() / static_cast<double>(n_p() - 1));
}

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(make_engine(seed, stream)) {}

double SeededRng::normal() { return normal_(engine_); }

double SeededRng::uniform() { return uniform_(engine_); }

Vector SeededRng::standard_normal(std::size_t n) {
  Vector z(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal_(engine_);
  return z;
}

Matrix SeededRng::standard_normal(std::size_t n, std::size_t cols) {
  Matrix z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols));
  double* p = z.data();
  for (Eigen::Index i = 0; i < z.size(); ++i) p[i] = normal_(engine_);
  return z;
}

SeededRng SeededRng::substream(std::initializer_list<std::uint64_t> keys) const {
  std::uint64_t h = splitmix64(stream_ ^ 0xd1b54a32d192ed03ULL);
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k));
  return SeededRng(seed_, h);
}

Ensemble sample_mvn(const Vector& mean, const SpdMatrix& cov, SeededRng& rng, std::size_t n) {
  if (static_cast<std::size_t>(mean.size()) != cov.dim()) {
    throw DimensionMismatchError("sample_mvn: mean and covariance dimensions differ");
  }
  Matrix draws = cov.cholesky_factor().triangularView<Eigen::Lower>() *
                 rng.standard_normal(cov.dim(), n);
  draws.colwise() += mean;
  return Ensemble(std::move(draws));
}

ObservationOperator ObservationOperator::identity(std::size_t n) {
  ObservationOperator h;
  h.n_x_ = h.n_y_ = n;
  h.identity_ = true;
  h.h_ = Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  return h;
}

ObservationOperator ObservationOperator::selection(std::size_t n_x,
                                                   std::vector<std::size_t> indices) {
  if (indices.empty()) throw InvalidDimensionError("selection operator needs at least one index");
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(indices.size()),
                          static_cast<Eigen::Index>(n_x));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= n_x) throw InvalidDimensionError("selection index out of range");
    m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(indices[i])) = 1.0;
  }
  if (indices.size() == n_x && m.isIdentity(0.0)) return identity(n_x);
  return linear(std::move(m));
}

ObservationOperator ObservationOperator::linear(Matrix h) {
  if (h.rows() == 0 || h.cols() == 0) throw InvalidDimensionError("empty observation matrix");
  ObservationOperator op;
  op.n_x_ = static_cast<std::size_t>(h.cols());
  op.n_y_ = static_cast<std::size_t>(h.rows());
  op.h_ = std::move(h);
  return op;
}

ObservationOperator ObservationOperator::nonlinear(std::size_t n_x, std::size_t n_y, Map map,
                                                   Jacobian jac) {
  if (!map || !jac) throw ConfigurationError("nonlinear observation operator needs map and Jacobian");
  ObservationOperator op;
  op.n_x_ = n_x;
  op.n_y_ = n_y;
  op.map_ = std::move(map);
  op.jac_ = std::move(jac);
  return op;
}

Vector ObservationOperator::apply(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != n_x_) {
    throw DimensionMismatchError("observation operator: state dimension mismatch");
  }
  if (identity_) return x;
  if (is_linear()) return h_ * x;
  Vector y = map_(x);
  if (static_cast<std::size_t>(y.size()) != n_y_) {
    throw DimensionMismatchError("observation map returned the wrong dimension");
  }
  return y;
}

Matrix ObservationOperator::apply_columns(const Matrix& states) const {
  if (static_cast<std::size_t>(states.rows()) != n_x_) {
    throw DimensionMismatchError("observation operator: state dimension mismatch");
  }
  if (identity_) return states;
  if (is_linear()) return h_ * states;
  Matrix out(static_cast<Eigen::Index>(n_y_), states.cols());
  for (Eigen::Index j = 0; j < states.cols(); ++j) out.col(j) = apply(states.col(j));
  return out;
}

Matrix ObservationOperator::jacobian(const Vector& x) const {
  if (is_linear()) return h_;
  return jac_(x);
}

Vector forecast_transition(const Dynamics& model, const Vector& x, const SpdMatrix& q,
                           SeededRng& rng) {
  if (q.dim() != model.dimension()) {
    throw DimensionMismatchError("forecast_transition: Q does not match the state dimension");
  }
  Vector out = model.propagate(x);
  out.noalias() += q.cholesky_factor().triangularView<Eigen::Lower>() * rng.standard_normal(q.dim());
  return out;
}

Vector observe(const ObservationOperator& h, const Vector& x, const SpdMatrix& r, SeededRng& rng) {
  if (r.dim() != h.n_y()) {
    throw DimensionMismatchError("observe: R does not match the observation dimension");
  }
  Vector y = h.apply(x);
  y.noalias() += r.cholesky_factor().triangularView<Eigen::Lower>() * rng.standard_normal(r.dim());
  return y;
}

double gaussian_loglik(const Vector& y, const Vector& mean, const SpdMatrix& cov) {
  if (y.size() != mean.size() || static_cast<std::size_t>(y.size()) != cov.dim()) {
    throw DimensionMismatchError("gaussian_loglik: inconsistent dimensions");
  }
  if (cov.is_zero()) throw SingularMatrixError("gaussian_loglik: covariance is singular");
  const Vector z = cov.whiten(y - mean);
  const double n = static_cast<double>(y.size());
  return -0.5 * (z.squaredNorm() + cov.log_determinant() + n * std::log(2.0 * std::numbers::pi));
}

}  // namespace oem
