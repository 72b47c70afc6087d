#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "oem/online_em.hpp"

namespace oem {

enum class ModelKind { Lorenz63, Lorenz96, TwoScaleLorenz96 };

struct ModelConfig {
  ModelKind kind = ModelKind::Lorenz63;
  Lorenz63Params lorenz63;
  Lorenz96Params lorenz96;
  TwoScaleLorenz96Params two_scale;
};

/// How the true model error covariance of the twin experiment is built.
struct TrueQSpec {
  enum class Kind {
    Scalar,          // diagonal * I
    Banded,          // diagonal on the diagonal, neighbor between periodic neighbours
    TimeVarying,     // banded, every entry scaled by a logistic ramp in the cycle index
    ImperfectModel,  // no additive noise; truth runs the two-scale system
  };
  Kind kind = Kind::Scalar;
  double diagonal = 0.3;
  double neighbor = 0.0;
  // Time-varying ramp: factor(k) = 1 + (amplitude - 1) / (1 + exp(-(k - center) / width)).
  double center = 1000.0;
  double width = 200.0;
  double amplitude = 2.0;
};

struct FirstGuess {
  double q_variance = 1.0;
  double r_variance = 0.5;
  /// Optional per-repetition overrides, cycled by repetition index.
  std::vector<double> q_variance_per_rep;
  std::vector<double> r_variance_per_rep;
};

struct OutputSpec {
  std::size_t matrix_stride = 50;
  std::vector<std::size_t> snapshot_cycles;
  /// Number of final cycles averaged into RepetitionResult::q_tail_mean.
  std::size_t tail_average_cycles = 0;
  /// Write wall-clock timings to the CSV. Off by default so outputs are
  /// byte-for-byte reproducible.
  bool record_timing = false;
};

struct ReferenceSpec {
  /// Model steps of two-scale integration used for the forcing statistics.
  std::size_t sample_steps = 100000;
  /// Cycles of each EnKF scoring pass in the grid search.
  std::size_t score_cycles = 500;
  /// Candidate multiples of base_scale * Sigma.
  std::vector<double> multiples;
  /// Scale applied before the multiples; 0 means cycle_length^2.
  double base_scale = 0.0;
};

struct ExperimentConfig {
  ModelConfig model;
  double dt = 0.01;
  std::size_t steps_per_cycle = 5;
  std::size_t n_cycles = 2000;
  TrueQSpec true_q;
  double true_r_variance = 0.5;
  bool estimate_r = false;
  FilterKind filter = FilterKind::Enkf;
  VmpfSpec vmpf;
  EstimatorSpec estimator;
  std::size_t n_particles = 50;
  StepSchedule schedule;
  FirstGuess first_guess;
  std::uint64_t seed = 1;
  std::size_t repetitions = 1;
  std::size_t spinup_steps = 5000;
  std::size_t rmse_spinup_cycles = 20;
  /// Observed components of the filter state; empty means all.
  std::vector<std::size_t> observed;
  OutputSpec output;
  ReferenceSpec reference;

  IntegratorSpec integrator() const { return {dt, steps_per_cycle}; }
  double cycle_length() const { return dt * static_cast<double>(steps_per_cycle); }
};

/// Throws ConfigurationError describing the first inconsistency found.
void validate(const ExperimentConfig& cfg);

/// Parses a JSON document. Unknown keys anywhere are an error.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string to_json(const ExperimentConfig& cfg);

/// Dimension of the state the filter estimates (large scale only for the
/// two-scale system).
std::size_t filter_dimension(const ExperimentConfig& cfg);
/// Forecast model used by the filter: the configured system, or the
/// truncated one-scale Lorenz-96 in imperfect-model mode.
Dynamics filter_dynamics(const ExperimentConfig& cfg);
ObservationOperator observation_operator(const ExperimentConfig& cfg);
/// True Q applied between cycle k-1 and k.
Matrix true_q_matrix(const ExperimentConfig& cfg, std::size_t k);
/// Logistic factor of the time-varying mode (1 for the other modes).
double true_q_factor(const TrueQSpec& spec, std::size_t k);
SpdMatrix true_r(const ExperimentConfig& cfg);

/// Same-size banded matrix: `diagonal` on the diagonal and `neighbor` between
/// periodic neighbours.
Matrix banded_matrix(std::size_t n, double diagonal, double neighbor);

std::string to_string(FilterKind kind);
std::string to_string(EstimatorKind kind);

}  // namespace oem
