#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oem/config.hpp"

namespace oem {

/// Twin-experiment data. `truth` holds filter-space states at cycles 0..K
/// (the large-scale part for the two-scale system); `obs[k-1]` is y_k.
struct Trajectory {
  std::vector<Vector> truth;
  std::vector<Vector> obs;
};

/// Spins up the true system from a random state, then simulates K cycles:
/// x_k = M(x_{k-1}) + eta_k with the true Q of cycle k (none in the
/// imperfect-model mode, where the two-scale system is integrated instead),
/// and y_k = H x_k + nu_k.
Trajectory generate_truth_and_obs(const ExperimentConfig& cfg, SeededRng& rng);

/// Means over the diagonal, over periodic-neighbour entries (distance 1)
/// and over the remaining off-diagonal entries. A band with no entries
/// gives NaN.
struct CovarianceSummary {
  double diag_mean = 0.0;
  double neighbor_mean = 0.0;
  double far_mean = 0.0;
};

CovarianceSummary summarize(const Matrix& m);
/// Mean of the entries whose periodic index distance equals `distance`.
double band_mean(const Matrix& m, std::size_t distance);

struct CycleRecord {
  std::size_t k = 0;
  double gamma = 0.0;
  double qdiag_mean = 0.0;
  double qneigh_mean = 0.0;
  double qfar_mean = 0.0;
  double rdiag_mean = 0.0;
  double rmse = 0.0;  // analysis mean against truth at this cycle
  double ess = 0.0;   // NaN for the smoother estimator
  double ms = 0.0;    // wall time of the cycle, 0 unless timing is recorded
  bool skipped = false;
};

struct RepetitionResult {
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
  std::vector<CycleRecord> records;
  /// Full estimates at every matrix_stride-th cycle, the snapshot cycles and
  /// the last completed cycle, keyed by cycle (0 is the first guess).
  std::map<std::size_t, Matrix> q_matrices;
  std::map<std::size_t, Matrix> r_matrices;
  Matrix q_final;
  Matrix r_final;
  /// Mean of Q over the last tail_average_cycles cycles (q_final when 0).
  Matrix q_tail_mean;
  Matrix r_tail_mean;
  /// Time-averaged RMSE excluding the spin-up cycles.
  double rmse = 0.0;
  bool failed = false;
  std::string error_code;
  std::string error;
};

/// Seed of repetition `rep`: cfg.seed + rep.
std::uint64_t repetition_seed(const ExperimentConfig& cfg, std::size_t rep);

/// Runs one repetition. When `data` is given it replaces the generated
/// truth and observations, so several configurations can share them.
/// Errors are caught and reported through `failed`.
RepetitionResult run_repetition(const ExperimentConfig& cfg, std::size_t rep,
                                const Trajectory* data = nullptr);

/// All repetitions, in parallel over OEM_THREADS worker threads (default 1).
std::vector<RepetitionResult> run_experiment(const ExperimentConfig& cfg);

/// Worker count from the OEM_THREADS environment variable.
std::size_t thread_count();

struct LoglikResult {
  double loglik = 0.0;
  double rmse = 0.0;  // analysis RMSE against the truth, NaN without truth
};

/// One EnKF pass with fixed (q, r), accumulating the innovation
/// log-densities log N(y_k; H mean^f_k, H P^f_k H^T + R) over all cycles.
/// `truth` (indices 0..K, optional) is used for the RMSE, skipping the first
/// `rmse_skip` cycles. Throws FilterDivergenceError with the cycle index.
LoglikResult enkf_loglik_pass(const Dynamics& model, const ObservationOperator& h,
                              const SpdMatrix& q, const SpdMatrix& r, const Ensemble& initial,
                              const std::vector<Vector>& obs, SeededRng rng,
                              const std::vector<Vector>* truth = nullptr,
                              std::size_t rmse_skip = 0);

/// enkf_loglik_pass with the filter model and observation operator of
/// `cfg`, starting from truth_0 plus first-guess noise. Every call with the
/// same rng state uses the same random numbers, whatever q and r are.
LoglikResult approx_loglik(const SpdMatrix& q, const SpdMatrix& r, const Trajectory& data,
                           const ExperimentConfig& cfg, const SeededRng& rng);

/// approx_loglik at every (sigma_q^2 I, sigma_r^2 I) grid node; rows follow
/// q_grid and columns r_grid. Failing nodes hold NaN.
Matrix loglik_surface(const std::vector<double>& q_grid, const std::vector<double>& r_grid,
                      const Trajectory& data, const ExperimentConfig& cfg, const SeededRng& rng);

/// Inclusive grid "a:b:n" helper: n evenly spaced values from a to b.
std::vector<double> linspace(double a, double b, std::size_t n);

struct GridScore {
  double multiple = 0.0;
  double loglik = 0.0;
  double rmse = 0.0;
  bool failed = false;
};

struct ReferenceCovariance {
  Matrix forcing_covariance;  // sample covariance of the forcing differences
  double base_scale = 0.0;
  double multiple = 0.0;      // winning candidate
  Matrix q;                   // base_scale * multiple * forcing_covariance
  std::vector<GridScore> scores;
};

/// Covariance of -(hc/b) * (block sums of Y) recorded at every model step of
/// a two-scale run of `steps` steps after spin-up.
Matrix forcing_difference_covariance(const ExperimentConfig& cfg, std::size_t steps,
                                     SeededRng& rng);

/// Reference model-error covariance of the imperfect-model experiment:
/// the forcing-difference covariance scaled by the candidate multiple whose
/// EnKF pass has the largest loglikelihood (ties broken by lower RMSE).
ReferenceCovariance reference_covariance_two_scale(const ExperimentConfig& cfg, SeededRng& rng);

/// sqrt of the squared error averaged over time and components.
double metrics_rmse(const std::vector<Vector>& analysis, const std::vector<Vector>& truth);

}  // namespace oem
