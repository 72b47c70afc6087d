#include "oem/filters.hpp"

#include <algorithm>
#include <limits>

#include "oem/errors.hpp"

namespace oem {

namespace {

void require_members(const Ensemble& e, const char* what) {
  if (e.n_p() < 2) {
    throw EnsembleSizeError(std::string(what) + " needs at least two members");
  }
}

}  // namespace

Matrix enkf_gain(const Ensemble& forecast, const ObservationOperator& h, const SpdMatrix& r) {
  require_members(forecast, "enkf_gain");
  if (h.n_x() != forecast.n_x() || h.n_y() != r.dim()) {
    throw DimensionMismatchError("enkf_gain: operator, ensemble and R dimensions disagree");
  }
  const double scale = 1.0 / static_cast<double>(forecast.n_p() - 1);
  const Matrix xa = forecast.anomalies();
  const Matrix predicted = h.apply_columns(forecast.members());
  const Matrix ya = predicted.colwise() - predicted.rowwise().mean();

  const Matrix pxy = scale * xa * ya.transpose();
  const Matrix innovation = symmetrize(scale * ya * ya.transpose() + r.matrix());
  Eigen::LLT<Matrix> llt(innovation);
  if (llt.info() != Eigen::Success) {
    throw SingularMatrixError("enkf_gain: innovation covariance is singular");
  }
  return llt.solve(pxy.transpose()).transpose();
}

Ensemble enkf_analysis(const Ensemble& forecast, const Vector& y, const ObservationOperator& h,
                       const SpdMatrix& r, SeededRng& rng) {
  if (static_cast<std::size_t>(y.size()) != h.n_y()) {
    throw DimensionMismatchError("enkf_analysis: observation has the wrong dimension");
  }
  const Matrix gain = enkf_gain(forecast, h, r);

  // Innovations against perturbed predicted observations y^f(j) = H(x^f(j)) + nu(j).
  Matrix innovations = -h.apply_columns(forecast.members());
  innovations.colwise() += y;
  innovations.noalias() -= r.cholesky_factor().triangularView<Eigen::Lower>() *
                           rng.standard_normal(r.dim(), forecast.n_p());

  Matrix analysis = forecast.members();
  analysis.noalias() += gain * innovations;
  return Ensemble(std::move(analysis));
}

Matrix enks_gain(const Ensemble& analysis_prev, const Ensemble& forecast) {
  if (analysis_prev.n_p() != forecast.n_p()) {
    throw EnsembleSizeError("enks_gain: ensembles have different sizes");
  }
  require_members(forecast, "enks_gain");
  const Matrix sa = analysis_prev.anomalies();
  const Matrix sf = forecast.anomalies();

  // [(S^f)^T S^f]^+ (S^f)^T equals pinv(S^f); form it from the thin SVD.
  Eigen::JacobiSVD<Matrix> svd(sf, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double cutoff = sv.size() > 0
                            ? sv[0] * std::numeric_limits<double>::epsilon() *
                                  static_cast<double>(std::max(sf.rows(), sf.cols()))
                            : 0.0;
  Vector inv = Vector::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > cutoff) inv[i] = 1.0 / sv[i];
  }
  const Matrix pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return sa * pinv;
}

Ensemble enks_one_step(const FilterCycleState& cycle) {
  const std::size_t n = cycle.forecast.n_p();
  if (cycle.analysis_prev.n_p() != n || cycle.analysis.n_p() != n) {
    throw EnsembleSizeError("enks_one_step: ensembles have different sizes");
  }
  if (cycle.analysis.n_x() != cycle.forecast.n_x()) {
    throw DimensionMismatchError("enks_one_step: analysis and forecast dimensions differ");
  }
  const Matrix gain = enks_gain(cycle.analysis_prev, cycle.forecast);
  Matrix smoothed = cycle.analysis_prev.members();
  smoothed.noalias() += gain * (cycle.analysis.members() - cycle.forecast.members());
  return Ensemble(std::move(smoothed));
}

}  // namespace oem
