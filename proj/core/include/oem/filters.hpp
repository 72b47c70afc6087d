#pragma once

#include <cstddef>
#include <vector>

#include "oem/statespace.hpp"

namespace oem {

/// Ensembles involved in one assimilation cycle. Member j of `forecast` was
/// generated from member j of `analysis_prev`, and member j of `analysis`
/// is the update of member j of `forecast`.
struct FilterCycleState {
  Ensemble analysis_prev;
  Ensemble forecast;
  Ensemble analysis;
  Vector obs;
};

/// Kalman gain P^f H^T (H P^f H^T + R)^-1 computed from the forecast sample
/// statistics. For nonlinear operators the cross covariances come from the
/// ensemble of predicted observations.
Matrix enkf_gain(const Ensemble& forecast, const ObservationOperator& h, const SpdMatrix& r);

/// Stochastic (perturbed-observation) EnKF analysis. No inflation.
Ensemble enkf_analysis(const Ensemble& forecast, const Vector& y, const ObservationOperator& h,
                       const SpdMatrix& r, SeededRng& rng);

/// Smoother gain S^a_{k-1} [(S^f_k)^T S^f_k]^+ (S^f_k)^T with mean-centred
/// member columns. The bracket is always rank deficient for centred
/// columns, so the Moore-Penrose pseudo-inverse is used throughout.
Matrix enks_gain(const Ensemble& analysis_prev, const Ensemble& forecast);

/// One backward ensemble Kalman smoother step: smoothed members at k-1.
Ensemble enks_one_step(const FilterCycleState& cycle);

/// Settings for the variational mapping particle filter.
struct VmpfSpec {
  double step_size = 0.05;
  std::size_t max_iterations = 200;
  /// Stop once ||step direction||_F / (n_p * n_x) falls below this.
  double gradient_tolerance = 1e-3;
  /// Kernel covariance is bandwidth_scale * Q.
  double bandwidth_scale = 1.0;
  /// Consecutive KL increases tolerated before giving up.
  std::size_t max_kl_increases = 5;
};

void validate(const VmpfSpec& spec);

/// Posterior targeted by the mapping: a Gaussian-mixture prior with one
/// component N(center_j, Q) per propagated particle, times the Gaussian
/// likelihood N(y; H x, R).
class VmpfTarget {
 public:
  VmpfTarget(Matrix prior_centers, Vector y, ObservationOperator h, SpdMatrix r, SpdMatrix q,
             double bandwidth_scale = 1.0);

  std::size_t n_x() const { return static_cast<std::size_t>(centers_.rows()); }
  const SpdMatrix& q() const { return q_; }
  double bandwidth_scale() const { return bandwidth_; }

  /// Unnormalized log posterior density at x.
  double log_density(const Vector& x) const;
  /// Gradient of log_density at x.
  Vector grad_log_density(const Vector& x) const;

  /// Gradient of the KL divergence in the reproducing kernel Hilbert space
  /// with matrix kernel Q k(x, x'), k(x, x') = exp(-(x-x')^T A^-1 (x-x') / 2),
  /// A = bandwidth_scale * Q, evaluated at every particle (columns):
  ///   grad_i = -(1/N) sum_j [ k(x_j, x_i) Q grad log p(x_j) + Q grad_{x_j} k(x_j, x_i) ].
  Matrix kl_gradient(const Matrix& particles) const;

  // Whitened-coordinate machinery used by vmpf_step (u = L^-1 x, Q = L L^T).
  Matrix to_whitened(const Matrix& x) const;
  Matrix from_whitened(const Matrix& u) const;

  struct WhitenedEvaluation {
    Matrix ascent;       // -(kl gradient) in whitened coordinates, columns
    Vector kernel_sums;  // sum_j k(x_j, x_i)
    Vector log_density;  // unnormalized log posterior at each particle
    Vector divergence;   // trace of the Jacobian of the ascent field at each particle
  };
  WhitenedEvaluation evaluate_whitened(const Matrix& u) const;

 private:
  // Whitened gradient of the log posterior and log posterior at each column.
  void whitened_log_density(const Matrix& u, Matrix* grad, Vector* logp) const;

  Matrix centers_;
  Matrix centers_w_;
  Vector y_;
  ObservationOperator h_;
  SpdMatrix r_;
  SpdMatrix q_;
  double bandwidth_;
  // Linear observation operator in whitened coordinates: L_R^-1 H L, and L_R^-1 y.
  Matrix obs_w_;
  Vector y_w_;
};

struct VmpfDiagnostics {
  std::size_t iterations = 0;
  std::vector<double> kl_trace;
  double final_step_size = 0.0;
  double final_gradient_norm = 0.0;
  bool converged = false;
};

/// Moves the forecast particles towards the posterior by repeated steps
/// x <- x - eps * s * grad D_KL(x), where s = N / mean_i sum_j k(x_j, x_i)
/// rescales the kernel average so a step is not shrunk by 1/N when the
/// particles are far apart in the kernel metric.
///
/// The KL estimate is mean_i [log q(x_i) - log p(x_i)]. log q starts from a
/// kernel density estimate and is carried through each step by the change
/// of variables, with log det(I + eps s J) taken to first order as
/// eps s tr J. eps is halved whenever the estimate increases;
/// `spec.max_kl_increases` consecutive increases raise VmpfDivergenceError.
Ensemble vmpf_step(const Ensemble& forecast, const Ensemble& prior_centers, const Vector& y,
                   const ObservationOperator& h, const SpdMatrix& r, const SpdMatrix& q,
                   const VmpfSpec& spec, VmpfDiagnostics* diagnostics = nullptr);

}  // namespace oem
