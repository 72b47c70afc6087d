#include "oem/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "oem/errors.hpp"

namespace oem {

using json = nlohmann::json;

namespace {

template <class T>
constexpr bool kCount = std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>;

template <class T>
struct CountList : std::false_type {};
template <class T>
struct CountList<std::vector<T>> : std::bool_constant<kCount<T>> {};

// nlohmann converts -1 or 2.5 to a size_t without complaint.
template <class T>
bool counts_ok(const json& v) {
  if constexpr (kCount<T>) {
    return v.is_number_unsigned();
  } else if constexpr (CountList<T>::value) {
    if (!v.is_array()) return true;
    for (const auto& e : v) {
      if (!e.is_number_unsigned()) return false;
    }
    return true;
  } else {
    return true;
  }
}

// Reads keys from one JSON object and rejects any key it was not asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigurationError(path_ + ": expected an object");
  }

  template <class T>
  bool get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return false;
    if (!counts_ok<T>(*it)) {
      throw ConfigurationError(path_ + "." + key + ": expected a non-negative integer");
    }
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigurationError(path_ + "." + key + ": " + e.what());
    }
    return true;
  }

  template <class T>
  void require(const std::string& key, T& out) {
    if (!get(key, out)) throw ConfigurationError(path_ + ": missing key '" + key + "'");
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) {
        throw ConfigurationError(path_ + ": unknown key '" + it.key() + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

ModelConfig read_model(const json& j) {
  ObjectReader r(j, "model");
  std::string type;
  r.require("type", type);
  ModelConfig m;
  if (type == "lorenz63") {
    m.kind = ModelKind::Lorenz63;
    r.get("sigma", m.lorenz63.sigma);
    r.get("rho", m.lorenz63.rho);
    r.get("beta", m.lorenz63.beta);
  } else if (type == "lorenz96") {
    m.kind = ModelKind::Lorenz96;
    r.get("n", m.lorenz96.n);
    r.get("forcing", m.lorenz96.forcing);
  } else if (type == "two_scale_lorenz96") {
    m.kind = ModelKind::TwoScaleLorenz96;
    r.get("n", m.two_scale.n);
    r.get("n_small", m.two_scale.n_small);
    r.get("forcing", m.two_scale.forcing);
    r.get("h", m.two_scale.h);
    r.get("b", m.two_scale.b);
    r.get("c", m.two_scale.c);
  } else {
    throw ConfigurationError("model.type: unknown model '" + type + "'");
  }
  r.finish();
  return m;
}

TrueQSpec read_true_q(const json& j) {
  ObjectReader r(j, "true_q");
  std::string type;
  r.require("type", type);
  TrueQSpec q;
  if (type == "scalar") {
    q.kind = TrueQSpec::Kind::Scalar;
    r.require("variance", q.diagonal);
  } else if (type == "banded" || type == "time_varying") {
    q.kind = type == "banded" ? TrueQSpec::Kind::Banded : TrueQSpec::Kind::TimeVarying;
    r.require("diagonal", q.diagonal);
    r.get("neighbor", q.neighbor);
    if (q.kind == TrueQSpec::Kind::TimeVarying) {
      r.get("center", q.center);
      r.get("width", q.width);
      r.get("amplitude", q.amplitude);
    }
  } else if (type == "imperfect_model") {
    q.kind = TrueQSpec::Kind::ImperfectModel;
    q.diagonal = 0.0;
  } else {
    throw ConfigurationError("true_q.type: unknown kind '" + type + "'");
  }
  r.finish();
  return q;
}

void read_filter(const json& j, ExperimentConfig& cfg) {
  ObjectReader r(j, "filter");
  std::string type;
  r.require("type", type);
  if (type == "enkf") {
    cfg.filter = FilterKind::Enkf;
  } else if (type == "vmpf") {
    cfg.filter = FilterKind::Vmpf;
    r.get("step_size", cfg.vmpf.step_size);
    r.get("max_iterations", cfg.vmpf.max_iterations);
    r.get("gradient_tolerance", cfg.vmpf.gradient_tolerance);
    r.get("bandwidth_scale", cfg.vmpf.bandwidth_scale);
    r.get("max_kl_increases", cfg.vmpf.max_kl_increases);
  } else {
    throw ConfigurationError("filter.type: unknown filter '" + type + "'");
  }
  r.finish();
}

void read_estimator(const json& j, ExperimentConfig& cfg) {
  ObjectReader r(j, "estimator");
  std::string type;
  r.require("type", type);
  if (type == "is") {
    cfg.estimator.kind = EstimatorKind::ImportanceSampling;
    r.get("m_p", cfg.estimator.m_p);
  } else if (type == "oss") {
    cfg.estimator.kind = EstimatorKind::OneStepSmoother;
  } else {
    throw ConfigurationError("estimator.type: unknown estimator '" + type + "'");
  }
  r.finish();
}

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("config is not valid JSON: ") + e.what());
  }

  ExperimentConfig cfg;
  ObjectReader r(doc, "config");
  if (const json* m = r.child("model")) cfg.model = read_model(*m);
  r.get("dt", cfg.dt);

  double cycle_length = 0.0;
  const bool has_length = r.get("cycle_length", cycle_length);
  const bool has_steps = r.get("steps_per_cycle", cfg.steps_per_cycle);
  if (has_length && has_steps) {
    throw ConfigurationError("config: give either cycle_length or steps_per_cycle, not both");
  }
  if (has_length) {
    if (!(cfg.dt > 0.0) || !(cycle_length > 0.0)) {
      throw ConfigurationError("config: dt and cycle_length must be positive");
    }
    const double steps = std::round(cycle_length / cfg.dt);
    if (steps < 1.0 || std::abs(steps * cfg.dt - cycle_length) > 1e-9 * cycle_length) {
      throw ConfigurationError("config: cycle_length must be a whole number of dt steps");
    }
    cfg.steps_per_cycle = static_cast<std::size_t>(steps);
  }

  r.get("n_cycles", cfg.n_cycles);
  if (const json* q = r.child("true_q")) cfg.true_q = read_true_q(*q);
  if (const json* tr = r.child("true_r")) {
    ObjectReader rr(*tr, "true_r");
    rr.require("variance", cfg.true_r_variance);
    rr.finish();
  }
  r.get("estimate_r", cfg.estimate_r);
  if (const json* f = r.child("filter")) read_filter(*f, cfg);
  if (const json* e = r.child("estimator")) read_estimator(*e, cfg);
  r.get("n_particles", cfg.n_particles);
  if (const json* s = r.child("schedule")) {
    ObjectReader sr(*s, "schedule");
    sr.get("alpha", cfg.schedule.alpha);
    sr.get("offset", cfg.schedule.offset);
    sr.finish();
  }
  if (const json* g = r.child("first_guess")) {
    ObjectReader gr(*g, "first_guess");
    gr.get("q_variance", cfg.first_guess.q_variance);
    gr.get("r_variance", cfg.first_guess.r_variance);
    gr.get("q_variance_per_rep", cfg.first_guess.q_variance_per_rep);
    gr.get("r_variance_per_rep", cfg.first_guess.r_variance_per_rep);
    gr.finish();
  }
  r.get("seed", cfg.seed);
  r.get("repetitions", cfg.repetitions);
  r.get("spinup_steps", cfg.spinup_steps);
  r.get("rmse_spinup_cycles", cfg.rmse_spinup_cycles);
  r.get("observed", cfg.observed);
  if (const json* o = r.child("output")) {
    ObjectReader orr(*o, "output");
    orr.get("matrix_stride", cfg.output.matrix_stride);
    orr.get("snapshot_cycles", cfg.output.snapshot_cycles);
    orr.get("tail_average_cycles", cfg.output.tail_average_cycles);
    orr.get("record_timing", cfg.output.record_timing);
    orr.finish();
  }
  if (const json* ref = r.child("reference")) {
    ObjectReader rr(*ref, "reference");
    rr.get("sample_steps", cfg.reference.sample_steps);
    rr.get("score_cycles", cfg.reference.score_cycles);
    rr.get("multiples", cfg.reference.multiples);
    rr.get("base_scale", cfg.reference.base_scale);
    rr.finish();
  }
  r.finish();
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open config file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string to_json(const ExperimentConfig& cfg) {
  json j;
  switch (cfg.model.kind) {
    case ModelKind::Lorenz63:
      j["model"] = {{"type", "lorenz63"},
                    {"sigma", cfg.model.lorenz63.sigma},
                    {"rho", cfg.model.lorenz63.rho},
                    {"beta", cfg.model.lorenz63.beta}};
      break;
    case ModelKind::Lorenz96:
      j["model"] = {{"type", "lorenz96"},
                    {"n", cfg.model.lorenz96.n},
                    {"forcing", cfg.model.lorenz96.forcing}};
      break;
    case ModelKind::TwoScaleLorenz96: {
      const auto& p = cfg.model.two_scale;
      j["model"] = {{"type", "two_scale_lorenz96"}, {"n", p.n}, {"n_small", p.n_small},
                    {"forcing", p.forcing}, {"h", p.h}, {"b", p.b}, {"c", p.c}};
      break;
    }
  }
  j["dt"] = cfg.dt;
  j["steps_per_cycle"] = cfg.steps_per_cycle;
  j["n_cycles"] = cfg.n_cycles;
  switch (cfg.true_q.kind) {
    case TrueQSpec::Kind::Scalar:
      j["true_q"] = {{"type", "scalar"}, {"variance", cfg.true_q.diagonal}};
      break;
    case TrueQSpec::Kind::Banded:
      j["true_q"] = {{"type", "banded"},
                     {"diagonal", cfg.true_q.diagonal},
                     {"neighbor", cfg.true_q.neighbor}};
      break;
    case TrueQSpec::Kind::TimeVarying:
      j["true_q"] = {{"type", "time_varying"},        {"diagonal", cfg.true_q.diagonal},
                     {"neighbor", cfg.true_q.neighbor}, {"center", cfg.true_q.center},
                     {"width", cfg.true_q.width},       {"amplitude", cfg.true_q.amplitude}};
      break;
    case TrueQSpec::Kind::ImperfectModel:
      j["true_q"] = {{"type", "imperfect_model"}};
      break;
  }
  j["true_r"] = {{"variance", cfg.true_r_variance}};
  j["estimate_r"] = cfg.estimate_r;
  if (cfg.filter == FilterKind::Vmpf) {
    j["filter"] = {{"type", "vmpf"},
                   {"step_size", cfg.vmpf.step_size},
                   {"max_iterations", cfg.vmpf.max_iterations},
                   {"gradient_tolerance", cfg.vmpf.gradient_tolerance},
                   {"bandwidth_scale", cfg.vmpf.bandwidth_scale},
                   {"max_kl_increases", cfg.vmpf.max_kl_increases}};
  } else {
    j["filter"] = {{"type", "enkf"}};
  }
  if (cfg.estimator.kind == EstimatorKind::ImportanceSampling) {
    j["estimator"] = {{"type", "is"}, {"m_p", cfg.estimator.m_p}};
  } else {
    j["estimator"] = {{"type", "oss"}};
  }
  j["n_particles"] = cfg.n_particles;
  j["schedule"] = {{"alpha", cfg.schedule.alpha}, {"offset", cfg.schedule.offset}};
  j["first_guess"] = {{"q_variance", cfg.first_guess.q_variance},
                      {"r_variance", cfg.first_guess.r_variance},
                      {"q_variance_per_rep", cfg.first_guess.q_variance_per_rep},
                      {"r_variance_per_rep", cfg.first_guess.r_variance_per_rep}};
  j["seed"] = cfg.seed;
  j["repetitions"] = cfg.repetitions;
  j["spinup_steps"] = cfg.spinup_steps;
  j["rmse_spinup_cycles"] = cfg.rmse_spinup_cycles;
  j["observed"] = cfg.observed;
  j["output"] = {{"matrix_stride", cfg.output.matrix_stride},
                 {"snapshot_cycles", cfg.output.snapshot_cycles},
                 {"tail_average_cycles", cfg.output.tail_average_cycles},
                 {"record_timing", cfg.output.record_timing}};
  j["reference"] = {{"sample_steps", cfg.reference.sample_steps},
                    {"score_cycles", cfg.reference.score_cycles},
                    {"multiples", cfg.reference.multiples},
                    {"base_scale", cfg.reference.base_scale}};
  return j.dump(2);
}

void validate(const ExperimentConfig& cfg) {
  if (!(cfg.dt > 0.0) || cfg.steps_per_cycle == 0) {
    throw ConfigurationError("config: dt must be positive and steps_per_cycle at least 1");
  }
  if (cfg.n_cycles == 0) throw ConfigurationError("config: n_cycles must be at least 1");
  if (cfg.repetitions == 0) throw ConfigurationError("config: repetitions must be at least 1");
  if (cfg.n_particles < 2) throw ConfigurationError("config: n_particles must be at least 2");
  if (cfg.estimator.m_p == 0) throw ConfigurationError("config: m_p must be at least 1");
  if (!(cfg.true_r_variance > 0.0)) throw ConfigurationError("config: true R variance must be positive");
  if (!(cfg.first_guess.q_variance > 0.0) || !(cfg.first_guess.r_variance > 0.0)) {
    throw ConfigurationError("config: first-guess variances must be positive");
  }
  for (double v : cfg.first_guess.q_variance_per_rep) {
    if (!(v > 0.0)) throw ConfigurationError("config: first-guess variances must be positive");
  }
  for (double v : cfg.first_guess.r_variance_per_rep) {
    if (!(v > 0.0)) throw ConfigurationError("config: first-guess variances must be positive");
  }
  validate(cfg.schedule);
  if (cfg.filter == FilterKind::Vmpf) validate(cfg.vmpf);
  if (cfg.output.matrix_stride == 0) throw ConfigurationError("config: matrix_stride must be positive");

  const bool two_scale = cfg.model.kind == ModelKind::TwoScaleLorenz96;
  const bool imperfect = cfg.true_q.kind == TrueQSpec::Kind::ImperfectModel;
  if (two_scale != imperfect) {
    throw ConfigurationError(
        "config: the two-scale model is only used as the truth of the imperfect-model mode");
  }
  // Builds the systems, which checks their own parameter invariants.
  (void)filter_dynamics(cfg);
  if (two_scale) (void)OdeSystem::two_scale_lorenz96(cfg.model.two_scale);

  const std::size_t n = filter_dimension(cfg);
  for (std::size_t i : cfg.observed) {
    if (i >= n) throw ConfigurationError("config: observed index out of range");
  }
  if (cfg.true_q.kind != TrueQSpec::Kind::ImperfectModel) {
    if (!(cfg.true_q.diagonal >= 0.0)) throw ConfigurationError("config: true Q diagonal must be >= 0");
    if (cfg.true_q.kind == TrueQSpec::Kind::TimeVarying &&
        (!(cfg.true_q.width > 0.0) || !(cfg.true_q.amplitude > 0.0))) {
      throw ConfigurationError("config: time-varying Q needs positive width and amplitude");
    }
    // The banded matrix must be a valid covariance.
    (void)SpdMatrix(banded_matrix(n, cfg.true_q.diagonal, cfg.true_q.neighbor));
  }
  for (double m : cfg.reference.multiples) {
    if (!(m >= 0.0)) throw ConfigurationError("config: reference multiples must be >= 0");
  }
}

std::size_t filter_dimension(const ExperimentConfig& cfg) {
  switch (cfg.model.kind) {
    case ModelKind::Lorenz63:
      return 3;
    case ModelKind::Lorenz96:
      return cfg.model.lorenz96.n;
    case ModelKind::TwoScaleLorenz96:
      return cfg.model.two_scale.n;
  }
  return 0;
}

Dynamics filter_dynamics(const ExperimentConfig& cfg) {
  switch (cfg.model.kind) {
    case ModelKind::Lorenz63:
      return Dynamics::ode(OdeSystem::lorenz63(cfg.model.lorenz63), cfg.integrator());
    case ModelKind::Lorenz96:
      return Dynamics::ode(OdeSystem::lorenz96(cfg.model.lorenz96), cfg.integrator());
    case ModelKind::TwoScaleLorenz96:
      return Dynamics::ode(
          OdeSystem::lorenz96({cfg.model.two_scale.n, cfg.model.two_scale.forcing}),
          cfg.integrator());
  }
  throw ConfigurationError("unknown model kind");
}

ObservationOperator observation_operator(const ExperimentConfig& cfg) {
  const std::size_t n = filter_dimension(cfg);
  if (cfg.observed.empty()) return ObservationOperator::identity(n);
  return ObservationOperator::selection(n, cfg.observed);
}

Matrix banded_matrix(std::size_t n, double diagonal, double neighbor) {
  const auto size = static_cast<Eigen::Index>(n);
  Matrix m = Matrix::Zero(size, size);
  for (Eigen::Index i = 0; i < size; ++i) {
    m(i, i) = diagonal;
    if (size > 1 && neighbor != 0.0) {
      const Eigen::Index next = (i + 1) % size;
      m(i, next) = neighbor;
      m(next, i) = neighbor;
    }
  }
  return m;
}

double true_q_factor(const TrueQSpec& spec, std::size_t k) {
  if (spec.kind != TrueQSpec::Kind::TimeVarying) return 1.0;
  const double t = (static_cast<double>(k) - spec.center) / spec.width;
  return 1.0 + (spec.amplitude - 1.0) / (1.0 + std::exp(-t));
}

Matrix true_q_matrix(const ExperimentConfig& cfg, std::size_t k) {
  const std::size_t n = filter_dimension(cfg);
  const auto& q = cfg.true_q;
  switch (q.kind) {
    case TrueQSpec::Kind::Scalar:
      return banded_matrix(n, q.diagonal, 0.0);
    case TrueQSpec::Kind::Banded:
      return banded_matrix(n, q.diagonal, q.neighbor);
    case TrueQSpec::Kind::TimeVarying:
      return true_q_factor(q, k) * banded_matrix(n, q.diagonal, q.neighbor);
    case TrueQSpec::Kind::ImperfectModel:
      break;
  }
  const auto size = static_cast<Eigen::Index>(n);
  return Matrix::Zero(size, size);
}

SpdMatrix true_r(const ExperimentConfig& cfg) {
  const std::size_t n_y = cfg.observed.empty() ? filter_dimension(cfg) : cfg.observed.size();
  return SpdMatrix::identity(n_y, cfg.true_r_variance);
}

std::string to_string(FilterKind kind) { return kind == FilterKind::Vmpf ? "vmpf" : "enkf"; }

std::string to_string(EstimatorKind kind) {
  return kind == EstimatorKind::ImportanceSampling ? "is" : "oss";
}

}  // namespace oem
