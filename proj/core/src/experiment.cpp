#include "oem/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <set>
#include <thread>

#include "oem/errors.hpp"

namespace oem {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Calls body(i) for i in [0, n) on up to thread_count() threads.
template <class Body>
void parallel_for(std::size_t n, Body body) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  }
}

Vector random_start(const ExperimentConfig& cfg, SeededRng& rng) {
  switch (cfg.model.kind) {
    case ModelKind::Lorenz63:
      return Vector::Constant(3, 1.0) + rng.standard_normal(3);
    case ModelKind::Lorenz96: {
      const std::size_t n = cfg.model.lorenz96.n;
      return Vector::Constant(static_cast<Eigen::Index>(n), cfg.model.lorenz96.forcing) +
             rng.standard_normal(n);
    }
    case ModelKind::TwoScaleLorenz96: {
      const auto& p = cfg.model.two_scale;
      Vector x(static_cast<Eigen::Index>(p.n + p.n_small));
      x.head(static_cast<Eigen::Index>(p.n)) = rng.standard_normal(p.n);
      x.tail(static_cast<Eigen::Index>(p.n_small)) = 0.1 * rng.standard_normal(p.n_small);
      return x;
    }
  }
  throw ConfigurationError("unknown model kind");
}

// Full-state derivative of the true system.
Derivative truth_derivative(const ExperimentConfig& cfg) {
  switch (cfg.model.kind) {
    case ModelKind::Lorenz63:
      return OdeSystem::lorenz63(cfg.model.lorenz63).derivative();
    case ModelKind::Lorenz96:
      return OdeSystem::lorenz96(cfg.model.lorenz96).derivative();
    case ModelKind::TwoScaleLorenz96:
      return OdeSystem::two_scale_lorenz96(cfg.model.two_scale).derivative();
  }
  throw ConfigurationError("unknown model kind");
}

double first_guess_value(double base, const std::vector<double>& per_rep, std::size_t rep) {
  return per_rep.empty() ? base : per_rep[rep % per_rep.size()];
}

double diag_mean(const Matrix& m) { return m.diagonal().mean(); }

std::size_t periodic_distance(Eigen::Index i, Eigen::Index j, Eigen::Index n) {
  const Eigen::Index d = std::abs(i - j);
  return static_cast<std::size_t>(std::min(d, n - d));
}

}  // namespace

std::size_t thread_count() {
  const char* env = std::getenv("OEM_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long value = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || value < 1) {
    throw ConfigurationError("OEM_THREADS must be a positive integer");
  }
  return static_cast<std::size_t>(value);
}

Trajectory generate_truth_and_obs(const ExperimentConfig& cfg, SeededRng& rng) {
  validate(cfg);
  const Derivative f = truth_derivative(cfg);
  const std::size_t n = filter_dimension(cfg);
  const ObservationOperator h = observation_operator(cfg);
  const SpdMatrix r = true_r(cfg);
  const bool imperfect = cfg.true_q.kind == TrueQSpec::Kind::ImperfectModel;
  const bool varying = cfg.true_q.kind == TrueQSpec::Kind::TimeVarying;

  Vector state = integrate(f, random_start(cfg, rng), cfg.dt, cfg.spinup_steps);
  const auto filter_part = [&](const Vector& s) -> Vector {
    return s.head(static_cast<Eigen::Index>(n));
  };

  Trajectory out;
  out.truth.reserve(cfg.n_cycles + 1);
  out.obs.reserve(cfg.n_cycles);
  out.truth.push_back(filter_part(state));

  std::optional<SpdMatrix> q;
  if (!imperfect && !varying) q.emplace(true_q_matrix(cfg, 1));
  for (std::size_t k = 1; k <= cfg.n_cycles; ++k) {
    state = integrate(f, state, cfg.dt, cfg.steps_per_cycle);
    if (!imperfect) {
      if (varying) q.emplace(true_q_matrix(cfg, k));
      if (!q->is_zero()) state.noalias() += q->cholesky_factor() * rng.standard_normal(n);
    }
    const Vector x = filter_part(state);
    out.obs.push_back(observe(h, x, r, rng));
    out.truth.push_back(x);
  }
  return out;
}

double band_mean(const Matrix& m, std::size_t distance) {
  const Eigen::Index n = m.rows();
  double sum = 0.0;
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (periodic_distance(i, j, n) == distance) {
        sum += m(i, j);
        ++count;
      }
    }
  }
  return count == 0 ? kNaN : sum / static_cast<double>(count);
}

CovarianceSummary summarize(const Matrix& m) {
  const Eigen::Index n = m.rows();
  double neighbor = 0.0;
  double far = 0.0;
  std::size_t n_neighbor = 0;
  std::size_t n_far = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const std::size_t d = periodic_distance(i, j, n);
      if (d == 1) {
        neighbor += m(i, j);
        ++n_neighbor;
      } else if (d >= 2) {
        far += m(i, j);
        ++n_far;
      }
    }
  }
  CovarianceSummary s;
  s.diag_mean = diag_mean(m);
  s.neighbor_mean = n_neighbor == 0 ? kNaN : neighbor / static_cast<double>(n_neighbor);
  s.far_mean = n_far == 0 ? kNaN : far / static_cast<double>(n_far);
  return s;
}

std::uint64_t repetition_seed(const ExperimentConfig& cfg, std::size_t rep) {
  return cfg.seed + static_cast<std::uint64_t>(rep);
}

RepetitionResult run_repetition(const ExperimentConfig& cfg, std::size_t rep,
                                const Trajectory* data) {
  RepetitionResult result;
  result.repetition = rep;
  result.seed = repetition_seed(cfg, rep);
  try {
    validate(cfg);
    const SeededRng root(result.seed, 0);
    Trajectory owned;
    if (data == nullptr) {
      SeededRng truth_rng = root.substream({1});
      owned = generate_truth_and_obs(cfg, truth_rng);
      data = &owned;
    }
    if (data->obs.size() < cfg.n_cycles || data->truth.size() < cfg.n_cycles + 1) {
      throw ConfigurationError("run_repetition: trajectory shorter than n_cycles");
    }

    const std::size_t n = filter_dimension(cfg);
    const ObservationOperator h = observation_operator(cfg);
    const SpdMatrix q0 = SpdMatrix::identity(
        n, first_guess_value(cfg.first_guess.q_variance, cfg.first_guess.q_variance_per_rep, rep));
    const SpdMatrix r0 =
        cfg.estimate_r
            ? SpdMatrix::identity(h.n_y(), first_guess_value(cfg.first_guess.r_variance,
                                                             cfg.first_guess.r_variance_per_rep,
                                                             rep))
            : true_r(cfg);

    SeededRng init_rng = root.substream({2});
    OnlineEmState state = initial_state(sample_mvn(data->truth[0], q0, init_rng, cfg.n_particles),
                                        q0, r0, cfg.estimate_r);
    const OnlineEmSetup setup{filter_dynamics(cfg), h,           cfg.filter, cfg.estimator,
                              cfg.schedule,         cfg.vmpf,    cfg.estimate_r};

    const std::set<std::size_t> snapshots(cfg.output.snapshot_cycles.begin(),
                                          cfg.output.snapshot_cycles.end());
    const std::size_t tail = std::min(cfg.output.tail_average_cycles, cfg.n_cycles);
    Matrix q_sum = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    Matrix r_sum = Matrix::Zero(state.r.matrix().rows(), state.r.matrix().cols());
    double sq_error = 0.0;
    std::size_t scored = 0;

    result.q_matrices.emplace(0, state.q.matrix());
    result.r_matrices.emplace(0, state.r.matrix());
    result.records.reserve(cfg.n_cycles);
    for (std::size_t k = 1; k <= cfg.n_cycles; ++k) {
      SeededRng cycle_rng = root.substream({3, k});
      const auto start = std::chrono::steady_clock::now();
      const CycleOutcome outcome = run_online_em_cycle(state, data->obs[k - 1], setup, cycle_rng);
      const auto stop = std::chrono::steady_clock::now();

      const Matrix& q = state.q.matrix();
      const Matrix& r = state.r.matrix();
      const CovarianceSummary qs = summarize(q);
      const double err = (outcome.analysis_mean - data->truth[k]).squaredNorm();

      CycleRecord rec;
      rec.k = k;
      rec.gamma = outcome.diagnostics.gamma;
      rec.qdiag_mean = qs.diag_mean;
      rec.qneigh_mean = qs.neighbor_mean;
      rec.qfar_mean = qs.far_mean;
      rec.rdiag_mean = diag_mean(r);
      rec.rmse = std::sqrt(err / static_cast<double>(n));
      rec.ess = outcome.diagnostics.ess;
      rec.skipped = outcome.diagnostics.update_skipped;
      if (cfg.output.record_timing) {
        rec.ms = std::chrono::duration<double, std::milli>(stop - start).count();
      }
      result.records.push_back(rec);

      if (k > cfg.rmse_spinup_cycles) {
        sq_error += err;
        ++scored;
      }
      if (k + tail > cfg.n_cycles) {
        q_sum += q;
        r_sum += r;
      }
      if (k % cfg.output.matrix_stride == 0 || snapshots.contains(k) || k == cfg.n_cycles) {
        result.q_matrices.emplace(k, q);
        result.r_matrices.emplace(k, r);
      }
    }
    result.q_final = state.q.matrix();
    result.r_final = state.r.matrix();
    if (tail == 0) {
      result.q_tail_mean = result.q_final;
      result.r_tail_mean = result.r_final;
    } else {
      result.q_tail_mean = q_sum / static_cast<double>(tail);
      result.r_tail_mean = r_sum / static_cast<double>(tail);
    }
    result.rmse = scored == 0 ? kNaN : std::sqrt(sq_error / static_cast<double>(scored * n));
  } catch (const Error& e) {
    result.failed = true;
    result.error_code = e.code();
    result.error = e.what();
  } catch (const std::exception& e) {
    result.failed = true;
    result.error_code = "internal";
    result.error = e.what();
  }
  return result;
}

std::vector<RepetitionResult> run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  std::vector<RepetitionResult> results(cfg.repetitions);
  parallel_for(cfg.repetitions, [&](std::size_t rep) { results[rep] = run_repetition(cfg, rep); });
  return results;
}

LoglikResult enkf_loglik_pass(const Dynamics& model, const ObservationOperator& h,
                              const SpdMatrix& q, const SpdMatrix& r, const Ensemble& initial,
                              const std::vector<Vector>& obs, SeededRng rng,
                              const std::vector<Vector>* truth, std::size_t rmse_skip) {
  if (truth != nullptr && truth->size() < obs.size() + 1) {
    throw DimensionMismatchError("enkf_loglik_pass: truth shorter than the observations");
  }
  const std::size_t n_p = initial.n_p();
  const double inv = 1.0 / static_cast<double>(n_p - 1);
  Ensemble ens = initial;
  LoglikResult out;
  double sq_error = 0.0;
  std::size_t scored = 0;

  for (std::size_t k = 1; k <= obs.size(); ++k) {
    try {
      SeededRng cycle_rng = rng.substream({k});
      Matrix members = model.propagate_columns(ens.members());
      if (!q.is_zero()) {
        members.noalias() += q.cholesky_factor().triangularView<Eigen::Lower>() *
                             cycle_rng.standard_normal(ens.n_x(), n_p);
      }
      const Ensemble forecast(std::move(members));

      const Vector& y = obs[k - 1];
      Matrix predicted = h.apply_columns(forecast.members());
      const Vector predicted_mean = predicted.rowwise().mean();
      predicted.colwise() -= predicted_mean;
      const Matrix innovation_cov = inv * predicted * predicted.transpose() + r.matrix();
      const double term = gaussian_loglik(y, predicted_mean, SpdMatrix(innovation_cov));
      if (!std::isfinite(term)) throw NumericalOverflowError("non-finite innovation loglik");
      out.loglik += term;

      ens = enkf_analysis(forecast, y, h, r, cycle_rng);
      if (truth != nullptr && k > rmse_skip) {
        sq_error += (ens.mean() - (*truth)[k]).squaredNorm();
        ++scored;
      }
    } catch (const FilterDivergenceError&) {
      throw;
    } catch (const Error& e) {
      throw FilterDivergenceError(
          "EnKF pass diverged at cycle " + std::to_string(k) + ": " + e.what(), k);
    }
  }
  out.rmse = scored == 0 ? kNaN
                         : std::sqrt(sq_error / static_cast<double>(scored * initial.n_x()));
  return out;
}

LoglikResult approx_loglik(const SpdMatrix& q, const SpdMatrix& r, const Trajectory& data,
                           const ExperimentConfig& cfg, const SeededRng& rng) {
  if (data.truth.empty()) throw ConfigurationError("approx_loglik: empty trajectory");
  const std::size_t n = filter_dimension(cfg);
  SeededRng init_rng = rng.substream({0});
  const Ensemble initial = sample_mvn(
      data.truth[0], SpdMatrix::identity(n, cfg.first_guess.q_variance), init_rng,
      cfg.n_particles);
  return enkf_loglik_pass(filter_dynamics(cfg), observation_operator(cfg), q, r, initial,
                          data.obs, rng.substream({1}), &data.truth, cfg.rmse_spinup_cycles);
}

Matrix loglik_surface(const std::vector<double>& q_grid, const std::vector<double>& r_grid,
                      const Trajectory& data, const ExperimentConfig& cfg, const SeededRng& rng) {
  const std::size_t n = filter_dimension(cfg);
  const std::size_t n_y = observation_operator(cfg).n_y();
  const auto rows = static_cast<Eigen::Index>(q_grid.size());
  const auto cols = static_cast<Eigen::Index>(r_grid.size());
  Matrix out = Matrix::Constant(rows, cols, kNaN);
  parallel_for(q_grid.size() * r_grid.size(), [&](std::size_t node) {
    const std::size_t i = node / r_grid.size();
    const std::size_t j = node % r_grid.size();
    try {
      const double ll = approx_loglik(SpdMatrix::identity(n, q_grid[i]),
                                      SpdMatrix::identity(n_y, r_grid[j]), data, cfg, rng)
                            .loglik;
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ll;
    } catch (const Error&) {
      // Node stays NaN.
    }
  });
  return out;
}

std::vector<double> linspace(double a, double b, std::size_t n) {
  if (n == 0) throw ConfigurationError("linspace: need at least one node");
  if (!std::isfinite(a) || !std::isfinite(b)) throw ConfigurationError("linspace: bounds not finite");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return out;
}

Matrix forcing_difference_covariance(const ExperimentConfig& cfg, std::size_t steps,
                                     SeededRng& rng) {
  if (cfg.model.kind != ModelKind::TwoScaleLorenz96) {
    throw ConfigurationError("forcing_difference_covariance: needs the two-scale model");
  }
  if (steps < 2) throw ConfigurationError("forcing_difference_covariance: need at least 2 steps");
  const auto& p = cfg.model.two_scale;
  const Derivative f = OdeSystem::two_scale_lorenz96(p).derivative();
  const auto n = static_cast<Eigen::Index>(p.n);

  Vector state = integrate(f, random_start(cfg, rng), cfg.dt, cfg.spinup_steps);
  Vector mean = Vector::Zero(n);
  Matrix m2 = Matrix::Zero(n, n);
  for (std::size_t s = 1; s <= steps; ++s) {
    state = rk4_step(f, state, cfg.dt);
    const Vector d = two_scale_forcing_difference(state.tail(static_cast<Eigen::Index>(p.n_small)), p);
    const Vector delta = d - mean;
    mean += delta / static_cast<double>(s);
    m2.noalias() += delta * (d - mean).transpose();
  }
  return symmetrize(m2 / static_cast<double>(steps - 1));
}

ReferenceCovariance reference_covariance_two_scale(const ExperimentConfig& cfg, SeededRng& rng) {
  validate(cfg);
  if (cfg.model.kind != ModelKind::TwoScaleLorenz96) {
    throw ConfigurationError("reference_covariance_two_scale: needs the two-scale model");
  }
  ReferenceCovariance out;
  SeededRng sample_rng = rng.substream({1});
  out.forcing_covariance =
      forcing_difference_covariance(cfg, cfg.reference.sample_steps, sample_rng);
  out.base_scale = cfg.reference.base_scale > 0.0 ? cfg.reference.base_scale
                                                  : cfg.cycle_length() * cfg.cycle_length();

  std::vector<double> multiples = cfg.reference.multiples;
  if (multiples.empty()) {
    for (int i = 1; i <= 30; ++i) multiples.push_back(0.1 * i);
  }

  ExperimentConfig scoring = cfg;
  if (cfg.reference.score_cycles > 0) scoring.n_cycles = cfg.reference.score_cycles;
  SeededRng truth_rng = rng.substream({2});
  const Trajectory data = generate_truth_and_obs(scoring, truth_rng);
  const SeededRng filter_rng = rng.substream({3});
  const SpdMatrix r = true_r(cfg);

  out.scores.resize(multiples.size());
  parallel_for(multiples.size(), [&](std::size_t i) {
    GridScore& score = out.scores[i];
    score.multiple = multiples[i];
    try {
      const LoglikResult res =
          approx_loglik(SpdMatrix(out.base_scale * multiples[i] * out.forcing_covariance), r,
                        data, scoring, filter_rng);
      score.loglik = res.loglik;
      score.rmse = res.rmse;
    } catch (const Error&) {
      score.failed = true;
      score.loglik = kNaN;
      score.rmse = kNaN;
    }
  });

  const GridScore* best = nullptr;
  for (const GridScore& s : out.scores) {
    if (s.failed) continue;
    if (best == nullptr || s.loglik > best->loglik + 1e-12 * std::abs(best->loglik) ||
        (std::abs(s.loglik - best->loglik) <= 1e-12 * std::abs(best->loglik) &&
         s.rmse < best->rmse)) {
      best = &s;
    }
  }
  if (best == nullptr) {
    throw FilterDivergenceError("reference_covariance_two_scale: every candidate diverged", 0);
  }
  out.multiple = best->multiple;
  out.q = symmetrize(out.base_scale * out.multiple * out.forcing_covariance);
  return out;
}

double metrics_rmse(const std::vector<Vector>& analysis, const std::vector<Vector>& truth) {
  if (analysis.size() != truth.size()) {
    throw DimensionMismatchError("metrics_rmse: sequences differ in length");
  }
  if (analysis.empty()) throw DimensionMismatchError("metrics_rmse: empty sequences");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < analysis.size(); ++t) {
    if (analysis[t].size() != truth[t].size()) {
      throw DimensionMismatchError("metrics_rmse: state sizes differ");
    }
    sum += (analysis[t] - truth[t]).squaredNorm();
    count += static_cast<std::size_t>(truth[t].size());
  }
  return std::sqrt(sum / static_cast<double>(count));
}

}  // namespace oem
