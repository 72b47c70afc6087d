#include "oem/filters.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "oem/errors.hpp"

namespace oem {

void validate(const VmpfSpec& spec) {
  if (!(spec.step_size > 0.0)) throw ConfigurationError("vmpf: step_size must be positive");
  if (!(spec.gradient_tolerance > 0.0)) {
    throw ConfigurationError("vmpf: gradient_tolerance must be positive");
  }
  if (!(spec.bandwidth_scale > 0.0)) {
    throw ConfigurationError("vmpf: bandwidth_scale must be positive");
  }
  if (spec.max_kl_increases == 0) {
    throw ConfigurationError("vmpf: max_kl_increases must be at least 1");
  }
}

VmpfTarget::VmpfTarget(Matrix prior_centers, Vector y, ObservationOperator h, SpdMatrix r,
                       SpdMatrix q, double bandwidth_scale)
    : centers_(std::move(prior_centers)),
      y_(std::move(y)),
      h_(std::move(h)),
      r_(std::move(r)),
      q_(std::move(q)),
      bandwidth_(bandwidth_scale) {
  const auto n_x = static_cast<std::size_t>(centers_.rows());
  if (centers_.cols() == 0 || n_x != q_.dim() || n_x != h_.n_x()) {
    throw DimensionMismatchError("vmpf: prior centres, Q and H dimensions disagree");
  }
  if (static_cast<std::size_t>(y_.size()) != h_.n_y() || r_.dim() != h_.n_y()) {
    throw DimensionMismatchError("vmpf: observation, R and H dimensions disagree");
  }
  if (q_.is_zero() || r_.is_zero()) {
    throw SingularMatrixError("vmpf: Q and R must be non-degenerate");
  }
  if (!(bandwidth_ > 0.0)) throw ConfigurationError("vmpf: bandwidth_scale must be positive");

  centers_w_ = q_.whiten(centers_);
  if (h_.is_linear()) {
    obs_w_ = r_.whiten(h_.matrix() * q_.cholesky_factor());
    y_w_ = r_.whiten(y_);
  }
}

Matrix VmpfTarget::to_whitened(const Matrix& x) const { return q_.whiten(x); }

Matrix VmpfTarget::from_whitened(const Matrix& u) const {
  return q_.cholesky_factor().triangularView<Eigen::Lower>() * u;
}

void VmpfTarget::whitened_log_density(const Matrix& u, Matrix* grad, Vector* logp) const {
  const Eigen::Index n_x = u.rows();
  const Eigen::Index n = u.cols();
  const Eigen::Index n_c = centers_w_.cols();
  grad->resize(n_x, n);
  logp->resize(n);

  // Likelihood term.
  if (h_.is_linear()) {
    Matrix residual = -obs_w_ * u;
    residual.colwise() += y_w_;
    *logp = -0.5 * residual.colwise().squaredNorm().transpose();
    grad->noalias() = obs_w_.transpose() * residual;
  } else {
    const Matrix x = from_whitened(u);
    const Matrix& lq = q_.cholesky_factor();
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector xi = x.col(i);
      const Vector residual = r_.whiten(y_ - h_.apply(xi));
      const Matrix jac = r_.whiten(h_.jacobian(xi));
      (*logp)[i] = -0.5 * residual.squaredNorm();
      grad->col(i) = lq.transpose() * (jac.transpose() * residual);
    }
  }

  // Gaussian-mixture prior term, log-sum-exp over the components.
  Vector exponents(n_c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = u.col(i);
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < n_c; ++c) {
      exponents[c] = -0.5 * (ui - centers_w_.col(c)).squaredNorm();
      top = std::max(top, exponents[c]);
    }
    double total = 0.0;
    Vector pull = Vector::Zero(n_x);
    for (Eigen::Index c = 0; c < n_c; ++c) {
      const double w = std::exp(exponents[c] - top);
      total += w;
      pull.noalias() += w * centers_w_.col(c);
    }
    (*logp)[i] += top + std::log(total);
    grad->col(i) += pull / total - ui;
  }
}

double VmpfTarget::log_density(const Vector& x) const {
  Matrix grad;
  Vector logp;
  whitened_log_density(to_whitened(x), &grad, &logp);
  return logp[0];
}

Vector VmpfTarget::grad_log_density(const Vector& x) const {
  Matrix grad;
  Vector logp;
  whitened_log_density(to_whitened(x), &grad, &logp);
  // g_x = L^-T g_u
  return q_.cholesky_factor().transpose().triangularView<Eigen::Upper>().solve(grad.col(0));
}

VmpfTarget::WhitenedEvaluation VmpfTarget::evaluate_whitened(const Matrix& u) const {
  const Eigen::Index n = u.cols();
  Matrix grad;
  Vector logp;
  whitened_log_density(u, &grad, &logp);

  Matrix kernel(n, n);
  const double inv_bw = 1.0 / bandwidth_;
  for (Eigen::Index i = 0; i < n; ++i) {
    kernel(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double k = std::exp(-0.5 * inv_bw * (u.col(i) - u.col(j)).squaredNorm());
      kernel(i, j) = k;
      kernel(j, i) = k;
    }
  }

  WhitenedEvaluation ev;
  ev.kernel_sums = kernel.rowwise().sum();
  // phi_i = (1/N) sum_j k_ij [g_j + (u_i - u_j) / s]
  const Matrix uk = u * kernel;
  ev.ascent = grad * kernel;
  ev.ascent.noalias() += inv_bw * (u * ev.kernel_sums.asDiagonal());
  ev.ascent.noalias() -= inv_bw * uk;
  ev.ascent /= static_cast<double>(n);

  // tr d phi / du at u_i with d_j = u_i - u_j:
  //   (1/N) sum_j k_ij [-g_j . d_j / s + n_x / s - |d_j|^2 / s^2]
  const Matrix gk = grad * kernel;
  const Vector gu = (grad.array() * u.array()).colwise().sum().transpose();
  const Vector uu = u.colwise().squaredNorm().transpose();
  const Vector k_gu = kernel * gu;
  const Vector k_uu = kernel * uu;
  const auto dim = static_cast<double>(u.rows());
  ev.divergence.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g_dot_d = u.col(i).dot(gk.col(i)) - k_gu[i];
    const double d_sq = ev.kernel_sums[i] * uu[i] + k_uu[i] - 2.0 * u.col(i).dot(uk.col(i));
    ev.divergence[i] =
        (-inv_bw * g_dot_d + inv_bw * dim * ev.kernel_sums[i] - inv_bw * inv_bw * d_sq) /
        static_cast<double>(n);
  }
  ev.log_density = std::move(logp);
  return ev;
}

Matrix VmpfTarget::kl_gradient(const Matrix& particles) const {
  if (static_cast<std::size_t>(particles.rows()) != n_x()) {
    throw DimensionMismatchError("kl_gradient: particle dimension mismatch");
  }
  return -from_whitened(evaluate_whitened(to_whitened(particles)).ascent);
}

Ensemble vmpf_step(const Ensemble& forecast, const Ensemble& prior_centers, const Vector& y,
                   const ObservationOperator& h, const SpdMatrix& r, const SpdMatrix& q,
                   const VmpfSpec& spec, VmpfDiagnostics* diagnostics) {
  validate(spec);
  if (forecast.n_x() != prior_centers.n_x()) {
    throw DimensionMismatchError("vmpf_step: forecast and prior centres differ in dimension");
  }
  VmpfDiagnostics local;
  VmpfDiagnostics& diag = diagnostics != nullptr ? *diagnostics : local;
  diag = VmpfDiagnostics{};
  diag.final_step_size = spec.step_size;
  if (spec.max_iterations == 0) return forecast;

  const VmpfTarget target(prior_centers.members(), y, h, r, q, spec.bandwidth_scale);
  const double n = static_cast<double>(forecast.n_p());
  const double normalizer = n * static_cast<double>(forecast.n_x());
  const Matrix& lq = q.cholesky_factor();

  Matrix u = target.to_whitened(forecast.members());
  Vector log_q;
  double eps = spec.step_size;
  double kl_prev = std::numeric_limits<double>::infinity();
  std::size_t increases = 0;

  for (std::size_t it = 0; it < spec.max_iterations; ++it) {
    const auto ev = target.evaluate_whitened(u);
    if (it == 0) log_q = (ev.kernel_sums / n).array().log();
    const double kl = (log_q - ev.log_density).mean();
    if (!std::isfinite(kl) || !ev.ascent.allFinite()) {
      throw VmpfDivergenceError("vmpf: non-finite KL estimate or gradient", diag.kl_trace);
    }
    diag.kl_trace.push_back(kl);

    const double slack = 1e-12 * std::max(1.0, std::abs(kl_prev));
    if (it > 0 && kl > kl_prev + slack) {
      ++increases;
      eps *= 0.5;
      if (increases >= spec.max_kl_increases) {
        throw VmpfDivergenceError("vmpf: KL estimate increased for " + std::to_string(increases) +
                                      " consecutive iterations",
                                  diag.kl_trace);
      }
    } else {
      increases = 0;
    }
    kl_prev = kl;

    const double rescale = n / ev.kernel_sums.mean();
    const Matrix direction = rescale * ev.ascent;
    diag.final_gradient_norm = (lq.triangularView<Eigen::Lower>() * direction).norm() / normalizer;
    if (diag.final_gradient_norm < spec.gradient_tolerance) {
      diag.converged = true;
      break;
    }
    u.noalias() += eps * direction;
    log_q -= (eps * rescale) * ev.divergence;
    ++diag.iterations;
  }
  diag.final_step_size = eps;
  return Ensemble(target.from_whitened(u));
}

}  // namespace oem
