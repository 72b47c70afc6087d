#include "oem/online_em.hpp"

#include <cmath>
#include <string>

#include "oem/errors.hpp"

namespace oem {

void validate(const StepSchedule& sched) {
  if (!(sched.alpha > 0.5 && sched.alpha < 1.0)) {
    throw ConfigurationError("step schedule: alpha must lie in (0.5, 1), got " +
                             std::to_string(sched.alpha));
  }
}

double step_size(std::size_t k, const StepSchedule& sched) {
  if (k == 0) throw ConfigurationError("step_size: cycle index starts at 1");
  return std::pow(static_cast<double>(k + sched.offset), -sched.alpha);
}

ImportanceSamplingResult is_stats(const Ensemble& analysis_prev, const Ensemble& propagated_prev,
                                  const SpdMatrix& q, const Vector& y,
                                  const ObservationOperator& h, const SpdMatrix& r,
                                  std::size_t m_p, bool include_r, SeededRng& rng) {
  if (m_p == 0) throw ConfigurationError("is_stats: m_p must be at least 1");
  if (propagated_prev.n_p() != analysis_prev.n_p() ||
      propagated_prev.n_x() != analysis_prev.n_x()) {
    throw EnsembleSizeError("is_stats: propagated ensemble does not match the analysis");
  }
  if (q.dim() != analysis_prev.n_x() || h.n_x() != analysis_prev.n_x() || r.dim() != h.n_y() ||
      static_cast<std::size_t>(y.size()) != h.n_y()) {
    throw DimensionMismatchError("is_stats: inconsistent dimensions");
  }

  const auto n_p = static_cast<Eigen::Index>(analysis_prev.n_p());
  const auto m = static_cast<Eigen::Index>(m_p);
  const auto total = n_p * m;

  // Columns j*m .. j*m+m-1 are the draws attached to analysis member j.
  const Matrix noise = q.cholesky_factor().triangularView<Eigen::Lower>() *
                       rng.standard_normal(q.dim(), static_cast<std::size_t>(total));
  Matrix forecasts = noise;
  for (Eigen::Index j = 0; j < n_p; ++j) {
    forecasts.middleCols(j * m, m).colwise() += propagated_prev.members().col(j);
  }

  Matrix residuals = -h.apply_columns(forecasts);
  residuals.colwise() += y;
  const Vector log_w = -0.5 * r.whiten(residuals).colwise().squaredNorm().transpose();

  const double top = log_w.maxCoeff();
  if (!std::isfinite(top)) {
    throw DegenerateWeightsError("is_stats: no finite importance weight", top);
  }
  Vector w = (log_w.array() - top).exp().matrix();
  const double sum = w.sum();
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    throw DegenerateWeightsError("is_stats: importance weights underflowed", top);
  }
  w /= sum;

  ImportanceSamplingResult out;
  out.max_log_weight = top;
  out.weight_sum = w.sum();
  out.ess = 1.0 / w.squaredNorm();
  out.stats.s_q = symmetrize(noise * w.asDiagonal() * noise.transpose());
  if (include_r) {
    out.stats.s_r = symmetrize(residuals * w.asDiagonal() * residuals.transpose());
  }
  return out;
}

ImportanceSamplingResult is_stats(const Ensemble& analysis_prev, const Dynamics& model,
                                  const SpdMatrix& q, const Vector& y,
                                  const ObservationOperator& h, const SpdMatrix& r,
                                  std::size_t m_p, bool include_r, SeededRng& rng) {
  const Ensemble propagated(model.propagate_columns(analysis_prev.members()));
  return is_stats(analysis_prev, propagated, q, y, h, r, m_p, include_r, rng);
}

SufficientStats oss_stats(const Ensemble& smoothed_prev, const Ensemble& analysis, const Vector& y,
                          const Dynamics& model, const ObservationOperator& h, bool include_r) {
  if (smoothed_prev.n_p() != analysis.n_p()) {
    throw EnsembleSizeError("oss_stats: smoothed and analysis ensembles differ in size");
  }
  if (smoothed_prev.n_x() != analysis.n_x()) {
    throw DimensionMismatchError("oss_stats: smoothed and analysis dimensions differ");
  }
  const double inv_n = 1.0 / static_cast<double>(analysis.n_p());
  const Matrix model_residuals = analysis.members() - model.propagate_columns(smoothed_prev.members());

  SufficientStats out;
  out.s_q = symmetrize(inv_n * model_residuals * model_residuals.transpose());
  if (include_r) {
    if (static_cast<std::size_t>(y.size()) != h.n_y()) {
      throw DimensionMismatchError("oss_stats: observation has the wrong dimension");
    }
    Matrix obs_residuals = -h.apply_columns(analysis.members());
    obs_residuals.colwise() += y;
    out.s_r = symmetrize(inv_n * obs_residuals * obs_residuals.transpose());
  }
  return out;
}

SufficientStats update_stats(const SufficientStats& prev, const SufficientStats& next,
                             double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw ConfigurationError("update_stats: gamma must lie in [0, 1]");
  }
  if (prev.s_q.rows() != next.s_q.rows() || prev.s_q.cols() != next.s_q.cols() ||
      prev.includes_r() != next.includes_r() ||
      (prev.includes_r() && (prev.s_r->rows() != next.s_r->rows() ||
                             prev.s_r->cols() != next.s_r->cols()))) {
    throw DimensionMismatchError("update_stats: statistics have different shapes");
  }
  SufficientStats out;
  out.s_q = symmetrize((1.0 - gamma) * prev.s_q + gamma * next.s_q);
  if (prev.includes_r()) {
    out.s_r = symmetrize((1.0 - gamma) * *prev.s_r + gamma * *next.s_r);
  }
  return out;
}

Parameters m_step(const SufficientStats& s) {
  Parameters p{SpdMatrix(s.s_q), std::nullopt};
  if (s.includes_r()) p.r = SpdMatrix(*s.s_r);
  return p;
}

OnlineEmState initial_state(Ensemble initial_ensemble, const SpdMatrix& q0, const SpdMatrix& r0,
                            bool estimate_r) {
  if (q0.dim() != initial_ensemble.n_x()) {
    throw DimensionMismatchError("initial_state: Q0 does not match the ensemble dimension");
  }
  SufficientStats stats;
  stats.s_q = q0.matrix();
  if (estimate_r) stats.s_r = r0.matrix();
  return OnlineEmState{std::move(initial_ensemble), std::move(stats), q0, r0, 0};
}

CycleOutcome run_online_em_cycle(OnlineEmState& state, const Vector& y, const OnlineEmSetup& setup,
                                 SeededRng& rng) {
  const std::size_t k = state.cycle + 1;
  SeededRng forecast_rng = rng.substream({1});
  SeededRng analysis_rng = rng.substream({2});
  SeededRng sampling_rng = rng.substream({3});

  CycleOutcome outcome;
  outcome.diagnostics.gamma = step_size(k, setup.schedule);

  const Ensemble& prev = state.analysis;
  const Ensemble propagated(setup.model.propagate_columns(prev.members()));
  Matrix forecast_members = propagated.members();
  forecast_members.noalias() += state.q.cholesky_factor().triangularView<Eigen::Lower>() *
                                forecast_rng.standard_normal(prev.n_x(), prev.n_p());
  Ensemble forecast(std::move(forecast_members));

  Ensemble analysis = [&] {
    if (setup.filter == FilterKind::Vmpf) {
      VmpfDiagnostics vd;
      Ensemble a = vmpf_step(forecast, propagated, y, setup.h, state.r, state.q, setup.vmpf, &vd);
      outcome.diagnostics.vmpf_iterations = vd.iterations;
      return a;
    }
    return enkf_analysis(forecast, y, setup.h, state.r, analysis_rng);
  }();

  std::optional<SufficientStats> fresh;
  if (setup.estimator.kind == EstimatorKind::ImportanceSampling) {
    try {
      auto is = is_stats(prev, propagated, state.q, y, setup.h, state.r, setup.estimator.m_p,
                         setup.estimate_r, sampling_rng);
      outcome.diagnostics.ess = is.ess;
      if (is.ess < setup.min_ess) {
        outcome.diagnostics.update_skipped = true;
        outcome.diagnostics.skip_reason = "effective sample size below threshold";
      } else {
        fresh = std::move(is.stats);
      }
    } catch (const DegenerateWeightsError& e) {
      outcome.diagnostics.update_skipped = true;
      outcome.diagnostics.skip_reason = e.what();
      outcome.diagnostics.ess = 0.0;
    }
  } else {
    const Ensemble smoothed = enks_one_step(FilterCycleState{prev, forecast, analysis, y});
    fresh = oss_stats(smoothed, analysis, y, setup.model, setup.h, setup.estimate_r);
  }

  if (fresh) {
    state.stats = update_stats(state.stats, *fresh, outcome.diagnostics.gamma);
    Parameters p = m_step(state.stats);
    state.q = std::move(p.q);
    if (p.r) state.r = std::move(*p.r);
  }

  outcome.analysis_mean = analysis.mean();
  state.analysis = std::move(analysis);
  state.cycle = k;
  return outcome;
}

}  // namespace oem
