#include "oem/oracle_battery.hpp"

#include <cmath>
#include <sstream>

#include "oem/errors.hpp"
#include "oem/online_em.hpp"
#include "oem/reference.hpp"

namespace oem {

namespace {

using reference::LinearGaussianModel;

LinearGaussianModel planar_model() {
  LinearGaussianModel m;
  m.a.resize(2, 2);
  m.a << 0.95, 0.1, -0.1, 0.9;
  m.h = Matrix::Identity(2, 2);
  m.q.resize(2, 2);
  m.q << 0.5, 0.1, 0.1, 0.3;
  m.r = 0.2 * Matrix::Identity(2, 2);
  m.m0 = Vector::Zero(2);
  m.p0 = Matrix::Identity(2, 2);
  return m;
}

LinearGaussianModel scalar_model() {
  LinearGaussianModel m;
  m.a = Matrix::Constant(1, 1, 0.9);
  m.h = Matrix::Constant(1, 1, 1.0);
  m.q = Matrix::Constant(1, 1, 0.3);
  m.r = Matrix::Constant(1, 1, 0.5);
  m.m0 = Vector::Zero(1);
  m.p0 = Matrix::Constant(1, 1, 1.0);
  return m;
}

struct RunningMoments {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  double mean() const { return sum / static_cast<double>(n); }
  // Standard error of the mean.
  double se() const {
    const double m = mean();
    const double var = (sum_sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1);
    return std::sqrt(std::max(var, 0.0) / static_cast<double>(n));
  }
};

OracleCheck batch_em_monotone(std::uint64_t seed) {
  const LinearGaussianModel model = planar_model();
  SeededRng rng(seed, 1);
  const auto sim = reference::simulate(model, 500, rng);
  const auto iterates =
      reference::batch_em(model, sim.obs, Matrix::Identity(2, 2), Matrix::Identity(2, 2), 30);
  std::size_t drops = 0;
  double worst = 0.0;
  for (std::size_t i = 1; i < iterates.size(); ++i) {
    const double change = iterates[i].loglik - iterates[i - 1].loglik;
    if (change < -1e-9 * std::abs(iterates[i - 1].loglik)) ++drops;
    worst = std::min(worst, change);
  }
  std::ostringstream d;
  d << "loglik " << iterates.front().loglik << " -> " << iterates.back().loglik
    << ", decreases=" << drops << ", most negative change=" << worst;
  return {"batch-em-monotone", drops == 0, d.str()};
}

OracleCheck online_vs_batch(std::uint64_t seed) {
  constexpr std::size_t kCycles = 10000;
  constexpr std::size_t kParticles = 500;
  const LinearGaussianModel model = planar_model();
  SeededRng rng(seed, 2);
  const auto sim = reference::simulate(model, kCycles, rng);

  // Batch EM fixed point for Q with R known.
  Matrix q_em = model.q;
  for (int round = 0; round < 20; ++round) {
    const auto it = reference::batch_em(model, sim.obs, q_em, model.r, 10, false);
    const double change = (it.back().q - q_em).norm() / it.back().q.norm();
    q_em = it.back().q;
    if (change < 1e-9) break;
  }

  const OnlineEmSetup setup{Dynamics::linear(model.a),
                            ObservationOperator::linear(model.h),
                            FilterKind::Enkf,
                            EstimatorSpec{EstimatorKind::OneStepSmoother, 1},
                            StepSchedule{0.8, 0},
                            VmpfSpec{},
                            false};
  const SpdMatrix q0 = SpdMatrix::identity(2);
  SeededRng init_rng = rng.substream({1});
  OnlineEmState state = initial_state(sample_mvn(model.m0, SpdMatrix(model.p0), init_rng, kParticles),
                                      q0, SpdMatrix(model.r), false);
  for (std::size_t k = 1; k <= kCycles; ++k) {
    SeededRng cycle_rng = rng.substream({2, k});
    run_online_em_cycle(state, sim.obs[k - 1], setup, cycle_rng);
  }
  const double rel = (state.q.matrix() - q_em).norm() / q_em.norm();
  std::ostringstream d;
  d << "relative Frobenius distance " << rel << " (online diag " << state.q.matrix()(0, 0) << ", "
    << state.q.matrix()(1, 1) << "; batch diag " << q_em(0, 0) << ", " << q_em(1, 1) << ")";
  return {"online-vs-batch-em", rel <= 0.10, d.str()};
}

OracleCheck enkf_enks_vs_exact(std::uint64_t seed) {
  constexpr std::size_t kCycles = 10;
  constexpr std::size_t kParticles = 100000;
  constexpr std::size_t kReplicates = 20;
  const LinearGaussianModel model = scalar_model();
  SeededRng rng(seed, 3);
  const auto sim = reference::simulate(model, kCycles, rng);
  const auto filtered = reference::kalman_filter(model, sim.obs);
  const auto smoothed = reference::rts_smoother(filtered, model);
  const double exact_filter = filtered.filtered_mean[kCycles](0);
  const double exact_smoother = smoothed.mean[kCycles - 1](0);

  const Dynamics dyn = Dynamics::linear(model.a);
  const ObservationOperator h = ObservationOperator::linear(model.h);
  const SpdMatrix q(model.q);
  const SpdMatrix r(model.r);
  RunningMoments filter_mean;
  RunningMoments smoother_mean;
  for (std::size_t rep = 0; rep < kReplicates; ++rep) {
    SeededRng rep_rng = rng.substream({1, rep});
    Ensemble analysis = sample_mvn(model.m0, SpdMatrix(model.p0), rep_rng, kParticles);
    for (std::size_t k = 1; k <= kCycles; ++k) {
      Matrix f = dyn.propagate_columns(analysis.members());
      f.noalias() += q.cholesky_factor() * rep_rng.standard_normal(1, kParticles);
      Ensemble forecast(std::move(f));
      Ensemble next = enkf_analysis(forecast, sim.obs[k - 1], h, r, rep_rng);
      if (k == kCycles) {
        const Ensemble s =
            enks_one_step(FilterCycleState{analysis, forecast, next, sim.obs[k - 1]});
        smoother_mean.add(s.mean()(0));
        filter_mean.add(next.mean()(0));
      }
      analysis = std::move(next);
    }
  }
  const double z_filter = (filter_mean.mean() - exact_filter) / filter_mean.se();
  const double z_smoother = (smoother_mean.mean() - exact_smoother) / smoother_mean.se();
  std::ostringstream d;
  d << "EnKF mean " << filter_mean.mean() << " vs KF " << exact_filter << " (z=" << z_filter
    << "); EnKS mean " << smoother_mean.mean() << " vs RTS " << exact_smoother
    << " (z=" << z_smoother << ")";
  return {"enkf-enks-vs-exact", std::abs(z_filter) <= 3.0 && std::abs(z_smoother) <= 3.0,
          d.str()};
}

OracleCheck is_vs_oss(std::uint64_t seed) {
  constexpr std::size_t kParticles = 2000;
  constexpr std::size_t kReplicates = 100;
  constexpr std::size_t kCycles = 5;
  const LinearGaussianModel model = scalar_model();
  SeededRng rng(seed, 4);
  const auto sim = reference::simulate(model, kCycles, rng);
  const auto filtered = reference::kalman_filter(model, sim.obs);

  // Exact posterior of x_{K-1} given y_{1:K-1}, and y_K.
  const double m = filtered.filtered_mean[kCycles - 1](0);
  const double p = filtered.filtered_cov[kCycles - 1](0, 0);
  const Vector& y = sim.obs[kCycles - 1];
  const double a = model.a(0, 0);
  const double qv = model.q(0, 0);
  const double rv = model.r(0, 0);

  // Closed form of E[(x_K - a x_{K-1})^2 | y_{1:K}] and E[(y_K - x_K)^2 | y_{1:K}].
  const double prior_var = a * a * p + qv;
  const double s = prior_var + rv;
  const double innov = y(0) - a * m;
  const double eta_mean = qv / s * innov;
  const double exact_q = qv - qv * qv / s + eta_mean * eta_mean;
  const double x_mean = a * m + prior_var / s * innov;
  const double exact_r = prior_var - prior_var * prior_var / s + (y(0) - x_mean) * (y(0) - x_mean);

  const Dynamics dyn = Dynamics::linear(model.a);
  const ObservationOperator h = ObservationOperator::linear(model.h);
  const SpdMatrix q(model.q);
  const SpdMatrix r(model.r);
  RunningMoments is_q, is_r, oss_q, oss_r;
  for (std::size_t rep = 0; rep < kReplicates; ++rep) {
    SeededRng rep_rng = rng.substream({1, rep});
    const Ensemble prev =
        sample_mvn(Vector::Constant(1, m), SpdMatrix(Matrix::Constant(1, 1, p)), rep_rng, kParticles);

    SeededRng is_rng = rep_rng.substream({1});
    const auto is = is_stats(prev, dyn, q, y, h, r, 20, true, is_rng);
    is_q.add(is.stats.s_q(0, 0));
    is_r.add((*is.stats.s_r)(0, 0));

    SeededRng oss_rng = rep_rng.substream({2});
    Matrix f = dyn.propagate_columns(prev.members());
    f.noalias() += q.cholesky_factor() * oss_rng.standard_normal(1, kParticles);
    const Ensemble forecast(std::move(f));
    const Ensemble analysis = enkf_analysis(forecast, y, h, r, oss_rng);
    const Ensemble smoothed = enks_one_step(FilterCycleState{prev, forecast, analysis, y});
    const SufficientStats oss = oss_stats(smoothed, analysis, y, dyn, h, true);
    oss_q.add(oss.s_q(0, 0));
    oss_r.add((*oss.s_r)(0, 0));
  }
  const double zq = (is_q.mean() - oss_q.mean()) / std::hypot(is_q.se(), oss_q.se());
  const double zr = (is_r.mean() - oss_r.mean()) / std::hypot(is_r.se(), oss_r.se());
  std::ostringstream d;
  d << "S^Q: IS " << is_q.mean() << " OSS " << oss_q.mean() << " exact " << exact_q
    << " (z=" << zq << "); S^R: IS " << is_r.mean() << " OSS " << oss_r.mean() << " exact "
    << exact_r << " (z=" << zr << ")";
  return {"is-vs-oss", std::abs(zq) <= 3.0 && std::abs(zr) <= 3.0, d.str()};
}

template <class Check>
OracleCheck guarded(const char* name, Check check) {
  try {
    return check();
  } catch (const std::exception& e) {
    return {name, false, std::string("error: ") + e.what()};
  }
}

}  // namespace

std::vector<OracleCheck> run_oracle_battery(std::uint64_t seed) {
  return {
      guarded("batch-em-monotone", [&] { return batch_em_monotone(seed); }),
      guarded("online-vs-batch-em", [&] { return online_vs_batch(seed); }),
      guarded("enkf-enks-vs-exact", [&] { return enkf_enks_vs_exact(seed); }),
      guarded("is-vs-oss", [&] { return is_vs_oss(seed); }),
  };
}

}  // namespace oem
