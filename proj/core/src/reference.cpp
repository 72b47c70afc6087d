#include "oem/reference.hpp"

#include "oem/errors.hpp"

namespace oem::reference {

void LinearGaussianModel::validate() const {
  const auto n = a.rows();
  if (a.cols() != n || h.cols() != n || q.rows() != n || q.cols() != n || m0.size() != n ||
      p0.rows() != n || p0.cols() != n || r.rows() != h.rows() || r.cols() != h.rows()) {
    throw DimensionMismatchError("linear-Gaussian model has inconsistent dimensions");
  }
}

KalmanFilterResult kalman_filter(const LinearGaussianModel& model, const std::vector<Vector>& obs) {
  model.validate();
  const auto n = static_cast<Eigen::Index>(model.n_x());
  const Matrix eye = Matrix::Identity(n, n);

  KalmanFilterResult out;
  out.predicted_mean.push_back(model.m0);
  out.predicted_cov.push_back(model.p0);
  out.filtered_mean.push_back(model.m0);
  out.filtered_cov.push_back(model.p0);

  for (const Vector& y : obs) {
    if (static_cast<std::size_t>(y.size()) != model.n_y()) {
      throw DimensionMismatchError("kalman_filter: observation has the wrong dimension");
    }
    const Vector mp = model.a * out.filtered_mean.back();
    const Matrix pp = symmetrize(model.a * out.filtered_cov.back() * model.a.transpose() + model.q);

    const Matrix s = symmetrize(model.h * pp * model.h.transpose() + model.r);
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) {
      throw SingularMatrixError("kalman_filter: innovation covariance is singular");
    }
    const Matrix gain = llt.solve(model.h * pp).transpose();
    const Vector innovation = y - model.h * mp;
    const Vector mf = mp + gain * innovation;
    // Joseph form
    const Matrix ikh = eye - gain * model.h;
    const Matrix pf =
        symmetrize(ikh * pp * ikh.transpose() + gain * model.r * gain.transpose());

    const double term = gaussian_loglik(y, model.h * mp, SpdMatrix(s));
    out.loglik_terms.push_back(term);
    out.loglik += term;
    out.predicted_mean.push_back(mp);
    out.predicted_cov.push_back(pp);
    out.filtered_mean.push_back(mf);
    out.filtered_cov.push_back(pf);
  }
  return out;
}

SmootherResult rts_smoother(const KalmanFilterResult& f, const LinearGaussianModel& model) {
  const std::size_t steps = f.filtered_mean.size();
  if (steps == 0 || f.predicted_cov.size() != steps) {
    throw DimensionMismatchError("rts_smoother: incomplete filter output");
  }
  SmootherResult out;
  out.mean = f.filtered_mean;
  out.cov = f.filtered_cov;
  out.lag_one_cov.assign(steps, Matrix());

  for (std::size_t k = steps - 1; k >= 1; --k) {
    Eigen::LLT<Matrix> llt(f.predicted_cov[k]);
    if (llt.info() != Eigen::Success) {
      throw SingularMatrixError("rts_smoother: predicted covariance is singular");
    }
    // J_{k-1} = P^a_{k-1} A^T (P^f_k)^-1
    const Matrix j = llt.solve(model.a * f.filtered_cov[k - 1]).transpose();
    out.mean[k - 1] = f.filtered_mean[k - 1] + j * (out.mean[k] - f.predicted_mean[k]);
    out.cov[k - 1] = symmetrize(f.filtered_cov[k - 1] +
                                j * (out.cov[k] - f.predicted_cov[k]) * j.transpose());
    out.lag_one_cov[k] = j * out.cov[k];
  }
  return out;
}

ExactStats smoothed_stats(const SmootherResult& s, const LinearGaussianModel& model,
                          const std::vector<Vector>& obs) {
  const std::size_t steps = obs.size();
  if (s.mean.size() != steps + 1) {
    throw DimensionMismatchError("smoothed_stats: smoother and observations differ in length");
  }
  const auto n = static_cast<Eigen::Index>(model.n_x());
  const auto m = static_cast<Eigen::Index>(model.n_y());
  ExactStats out{Matrix::Zero(n, n), Matrix::Zero(m, m)};
  const Matrix& a = model.a;
  const Matrix& h = model.h;

  for (std::size_t k = 1; k <= steps; ++k) {
    const Matrix xx = s.cov[k] + s.mean[k] * s.mean[k].transpose();
    const Matrix pp = s.cov[k - 1] + s.mean[k - 1] * s.mean[k - 1].transpose();
    // E[x_{k-1} x_k^T]
    const Matrix px = s.lag_one_cov[k] + s.mean[k - 1] * s.mean[k].transpose();
    out.s_q += xx - a * px - px.transpose() * a.transpose() + a * pp * a.transpose();

    const Vector e = obs[k - 1] - h * s.mean[k];
    out.s_r += e * e.transpose() + h * s.cov[k] * h.transpose();
  }
  out.s_q = symmetrize(out.s_q / static_cast<double>(steps));
  out.s_r = symmetrize(out.s_r / static_cast<double>(steps));
  return out;
}

std::vector<EmIterate> batch_em(const LinearGaussianModel& model, const std::vector<Vector>& obs,
                                const Matrix& q0, const Matrix& r0, std::size_t n_iters,
                                bool estimate_r) {
  if (n_iters == 0) throw ConfigurationError("batch_em: n_iters must be at least 1");
  if (obs.empty()) throw ConfigurationError("batch_em: no observations");

  LinearGaussianModel current = model;
  current.q = q0;
  current.r = r0;
  std::vector<EmIterate> out;
  out.reserve(n_iters + 1);

  KalmanFilterResult f = kalman_filter(current, obs);
  out.push_back({current.q, current.r, f.loglik});
  for (std::size_t i = 0; i < n_iters; ++i) {
    const ExactStats stats = smoothed_stats(rts_smoother(f, current), current, obs);
    current.q = stats.s_q;
    if (estimate_r) current.r = stats.s_r;
    f = kalman_filter(current, obs);
    out.push_back({current.q, current.r, f.loglik});
  }
  return out;
}

LinearSimulation simulate(const LinearGaussianModel& model, std::size_t n_steps, SeededRng& rng) {
  model.validate();
  const SpdMatrix p0(model.p0);
  const SpdMatrix q(model.q);
  const SpdMatrix r(model.r);
  LinearSimulation sim;
  sim.states.reserve(n_steps + 1);
  sim.obs.reserve(n_steps);
  sim.states.push_back(model.m0 + p0.cholesky_factor() * rng.standard_normal(model.n_x()));
  for (std::size_t k = 1; k <= n_steps; ++k) {
    sim.states.push_back(model.a * sim.states.back() +
                         q.cholesky_factor() * rng.standard_normal(model.n_x()));
    sim.obs.push_back(model.h * sim.states.back() +
                      r.cholesky_factor() * rng.standard_normal(model.n_y()));
  }
  return sim;
}

}  // namespace oem::reference
