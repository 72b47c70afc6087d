#pragma once

#include <cstddef>
#include <vector>

#include "oem/statespace.hpp"

namespace oem::reference {

/// x_k = A x_{k-1} + eta, y_k = H x_k + nu, x_0 ~ N(m0, p0).
struct LinearGaussianModel {
  Matrix a;
  Matrix h;
  Matrix q;
  Matrix r;
  Vector m0;
  Matrix p0;

  std::size_t n_x() const { return static_cast<std::size_t>(a.rows()); }
  std::size_t n_y() const { return static_cast<std::size_t>(h.rows()); }
  void validate() const;
};

/// Index 0 holds the prior (m0, p0); indices 1..K the observation times.
struct KalmanFilterResult {
  std::vector<Vector> predicted_mean;
  std::vector<Matrix> predicted_cov;
  std::vector<Vector> filtered_mean;
  std::vector<Matrix> filtered_cov;
  std::vector<double> loglik_terms;  // index k-1 holds log N(y_k; H m^f_k, H P^f_k H^T + R)
  double loglik = 0.0;
};

KalmanFilterResult kalman_filter(const LinearGaussianModel& model, const std::vector<Vector>& obs);

struct SmootherResult {
  std::vector<Vector> mean;         // smoothed, indices 0..K
  std::vector<Matrix> cov;          // smoothed, indices 0..K
  std::vector<Matrix> lag_one_cov;  // index k (1..K): Cov(x_{k-1}, x_k | y_{1:K}); index 0 unused
};

SmootherResult rts_smoother(const KalmanFilterResult& filtered, const LinearGaussianModel& model);

/// Exact sufficient statistics
///   S^Q = 1/K sum E[(x_k - A x_{k-1})(.)^T | y_{1:K}]
///   S^R = 1/K sum E[(y_k - H x_k)(.)^T | y_{1:K}]
struct ExactStats {
  Matrix s_q;
  Matrix s_r;
};

ExactStats smoothed_stats(const SmootherResult& smoothed, const LinearGaussianModel& model,
                          const std::vector<Vector>& obs);

struct EmIterate {
  Matrix q;
  Matrix r;
  double loglik;  // loglik of the observations under (q, r)
};

/// Classical batch EM for (Q, R) with A, H and the prior held fixed. Entry 0
/// is the starting point; entry i the estimate after i iterations. With
/// estimate_r false, R stays at r0.
std::vector<EmIterate> batch_em(const LinearGaussianModel& model, const std::vector<Vector>& obs,
                                const Matrix& q0, const Matrix& r0, std::size_t n_iters,
                                bool estimate_r = true);

/// Simulates a state trajectory (indices 0..K) and observations (1..K).
struct LinearSimulation {
  std::vector<Vector> states;
  std::vector<Vector> obs;
};

LinearSimulation simulate(const LinearGaussianModel& model, std::size_t n_steps, SeededRng& rng);

}  // namespace oem::reference
