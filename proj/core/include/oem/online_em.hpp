#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <string>

#include "oem/filters.hpp"

namespace oem {

/// Running sufficient statistics for a Gaussian state-space model: the
/// expected outer products of model residuals (s_q) and, when the
/// observation error is estimated too, of observation residuals (s_r).
struct SufficientStats {
  Matrix s_q;
  std::optional<Matrix> s_r;

  bool includes_r() const { return s_r.has_value(); }
};

/// gamma_k = (k + offset)^-alpha.
struct StepSchedule {
  double alpha = 0.6;
  std::size_t offset = 0;
};

void validate(const StepSchedule& sched);
double step_size(std::size_t k, const StepSchedule& sched);

enum class EstimatorKind { ImportanceSampling, OneStepSmoother };
enum class FilterKind { Enkf, Vmpf };

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::OneStepSmoother;
  /// Transition draws per analysis member (importance sampling only).
  std::size_t m_p = 20;
};

struct ImportanceSamplingResult {
  SufficientStats stats;
  double ess = 0.0;             // 1 / sum w^2
  double max_log_weight = 0.0;  // before normalization
  double weight_sum = 0.0;      // sum of normalized weights, for diagnostics
};

/// Importance-sampling statistic at cycle K. For each analysis member j at
/// K-1, m_p transition draws x^f(j,l) = M(x^a(j)) + eta are weighted by
/// p(y_K | x^f(j,l)) (normalized in log space), and
///   s_q = sum w (x^f - M(x^a)) (.)^T,   s_r = sum w (y - H x^f) (.)^T.
/// `propagated_prev` holds M(x^a(j)) so callers can share the integration
/// with the filter forecast. Throws DegenerateWeightsError when every weight
/// underflows.
ImportanceSamplingResult is_stats(const Ensemble& analysis_prev, const Ensemble& propagated_prev,
                                  const SpdMatrix& q, const Vector& y,
                                  const ObservationOperator& h, const SpdMatrix& r,
                                  std::size_t m_p, bool include_r, SeededRng& rng);

/// Convenience overload that integrates the analysis members itself.
ImportanceSamplingResult is_stats(const Ensemble& analysis_prev, const Dynamics& model,
                                  const SpdMatrix& q, const Vector& y,
                                  const ObservationOperator& h, const SpdMatrix& r,
                                  std::size_t m_p, bool include_r, SeededRng& rng);

/// One-step-smoother statistic: (1/N) sum_j s(x^s(j)_{K-1}, x^a(j)_K, y_K),
/// pairing member j of the smoothed ensemble with member j of the analysis.
SufficientStats oss_stats(const Ensemble& smoothed_prev, const Ensemble& analysis, const Vector& y,
                          const Dynamics& model, const ObservationOperator& h, bool include_r);

/// (1 - gamma) prev + gamma next, symmetrized. gamma must lie in [0, 1].
SufficientStats update_stats(const SufficientStats& prev, const SufficientStats& next,
                             double gamma);

struct Parameters {
  SpdMatrix q;
  std::optional<SpdMatrix> r;
};

/// Gaussian M-step: the estimate equals the statistic (with the jitter
/// policy applied). Throws NotPositiveDefiniteError when s_q is unusable.
Parameters m_step(const SufficientStats& s);

/// Static configuration of the online EM loop.
struct OnlineEmSetup {
  Dynamics model;
  ObservationOperator h;
  FilterKind filter = FilterKind::Enkf;
  EstimatorSpec estimator;
  StepSchedule schedule;
  VmpfSpec vmpf;
  bool estimate_r = false;
  /// Effective sample size below which an importance-sampling statistic is
  /// discarded for the cycle.
  double min_ess = 2.0;
};

/// Mutable state carried between cycles.
struct OnlineEmState {
  Ensemble analysis;
  SufficientStats stats;
  SpdMatrix q;
  SpdMatrix r;
  std::size_t cycle = 0;  // number of completed cycles
};

/// Initial state: S_0 coincides with the first guess (q0, r0).
OnlineEmState initial_state(Ensemble initial_ensemble, const SpdMatrix& q0, const SpdMatrix& r0,
                            bool estimate_r);

struct CycleDiagnostics {
  double gamma = 0.0;
  double ess = std::numeric_limits<double>::quiet_NaN();
  bool update_skipped = false;
  std::string skip_reason;
  std::size_t vmpf_iterations = 0;
};

struct CycleOutcome {
  Vector analysis_mean;
  CycleDiagnostics diagnostics;
};

/// One assimilation cycle k = state.cycle + 1:
///   forecast with the current Q -> filter analysis -> statistic ->
///   update_stats with gamma_k -> m_step.
/// The analysis uses Q_{k-1} and R_{k-1}; the new estimates take effect at
/// the next forecast. Degenerate importance weights skip the update and keep
/// the previous parameters. `rng` supplies every random draw of the cycle.
CycleOutcome run_online_em_cycle(OnlineEmState& state, const Vector& y, const OnlineEmSetup& setup,
                                 SeededRng& rng);

}  // namespace oem
