#include "oem/models.hpp"

#include <string>

#include "oem/errors.hpp"

namespace oem {

void lorenz63_deriv(const Vector& x, const Lorenz63Params& p, Vector& out) {
  out[0] = p.sigma * (x[1] - x[0]);
  out[1] = x[0] * (p.rho - x[2]) - x[1];
  out[2] = x[0] * x[1] - p.beta * x[2];
}

Vector lorenz63_deriv(const Vector& x, const Lorenz63Params& p) {
  if (x.size() != 3) {
    throw InvalidDimensionError("Lorenz-63 state must have 3 components, got " +
                                std::to_string(x.size()));
  }
  Vector out(3);
  lorenz63_deriv(x, p, out);
  return out;
}

namespace {

// Writes the advection/damping/forcing part of the Lorenz-96 tendency. The
// boundary components are unrolled so the interior loop needs no modulo.
void lorenz96_core(const double* x, Eigen::Index n, double forcing, double* out) {
  if (n < 4) {
    // Only reachable through the large scale of a small two-scale system.
    for (Eigen::Index i = 0; i < n; ++i) {
      out[i] = x[(i + n - 1) % n] * (x[(i + 1) % n] - x[(i + 2 * n - 2) % n]) - x[i] + forcing;
    }
    return;
  }
  out[0] = x[n - 1] * (x[1] - x[n - 2]) - x[0] + forcing;
  out[1] = x[0] * (x[2] - x[n - 1]) - x[1] + forcing;
  for (Eigen::Index i = 2; i < n - 1; ++i) {
    out[i] = x[i - 1] * (x[i + 1] - x[i - 2]) - x[i] + forcing;
  }
  out[n - 1] = x[n - 2] * (x[0] - x[n - 3]) - x[n - 1] + forcing;
}

void check_two_scale(const TwoScaleLorenz96Params& p) {
  if (p.n == 0) {
    throw InvalidDimensionError("two-scale Lorenz-96 needs at least 1 large-scale variable");
  }
  if (p.n_small == 0 || p.n_small % p.n != 0) {
    throw ConfigurationError("two-scale Lorenz-96: n_small (" + std::to_string(p.n_small) +
                             ") must be a positive multiple of n (" + std::to_string(p.n) + ")");
  }
  if (p.n_small < 4) {
    throw InvalidDimensionError("two-scale Lorenz-96 needs at least 4 small-scale variables");
  }
}

void two_scale_core(const double* x, const double* y, const TwoScaleLorenz96Params& p,
                    double* dx, double* dy) {
  const auto n = static_cast<Eigen::Index>(p.n);
  const auto m = static_cast<Eigen::Index>(p.n_small);
  const auto block = static_cast<Eigen::Index>(p.block());
  const double coupling = p.coupling();
  const double cb = p.c * p.b;

  lorenz96_core(x, n, p.forcing, dx);
  for (Eigen::Index k = 0; k < n; ++k) {
    double sum = 0.0;
    for (Eigen::Index j = k * block; j < (k + 1) * block; ++j) sum += y[j];
    dx[k] -= coupling * sum;
  }

  auto small = [&](Eigen::Index j, Eigen::Index jm1, Eigen::Index jp1, Eigen::Index jp2) {
    dy[j] = cb * y[jp1] * (y[jm1] - y[jp2]) - p.c * y[j] + coupling * x[j / block];
  };
  small(0, m - 1, 1, 2);
  for (Eigen::Index j = 1; j < m - 2; ++j) small(j, j - 1, j + 1, j + 2);
  small(m - 2, m - 3, m - 1, 0);
  small(m - 1, m - 2, 0, 1);
}

}  // namespace

void lorenz96_deriv(const Vector& x, double forcing, Vector& out) {
  if (x.size() < 4) {
    throw InvalidDimensionError("Lorenz-96 needs at least 4 variables, got " +
                                std::to_string(x.size()));
  }
  lorenz96_core(x.data(), x.size(), forcing, out.data());
}

Vector lorenz96_deriv(const Vector& x, double forcing) {
  Vector out(x.size());
  lorenz96_deriv(x, forcing, out);
  return out;
}

TwoScaleDerivative two_scale_lorenz96_deriv(const Vector& x, const Vector& y,
                                            const TwoScaleLorenz96Params& p) {
  check_two_scale(p);
  if (static_cast<std::size_t>(x.size()) != p.n ||
      static_cast<std::size_t>(y.size()) != p.n_small) {
    throw InvalidDimensionError("two-scale Lorenz-96 state does not match its parameters");
  }
  TwoScaleDerivative d{Vector(x.size()), Vector(y.size())};
  two_scale_core(x.data(), y.data(), p, d.large.data(), d.small.data());
  return d;
}

void two_scale_lorenz96_deriv(const Vector& state, const TwoScaleLorenz96Params& p,
                              Vector& out) {
  const auto n = static_cast<Eigen::Index>(p.n);
  two_scale_core(state.data(), state.data() + n, p, out.data(), out.data() + n);
}

Vector two_scale_forcing_difference(const Vector& y, const TwoScaleLorenz96Params& p) {
  check_two_scale(p);
  if (static_cast<std::size_t>(y.size()) != p.n_small) {
    throw InvalidDimensionError("small-scale state does not match n_small");
  }
  const auto block = static_cast<Eigen::Index>(p.block());
  Vector d(static_cast<Eigen::Index>(p.n));
  for (Eigen::Index k = 0; k < d.size(); ++k) {
    d[k] = -p.coupling() * y.segment(k * block, block).sum();
  }
  return d;
}

OdeSystem::OdeSystem(Params params) : params_(std::move(params)) {
  if (const auto* l96 = std::get_if<Lorenz96Params>(&params_)) {
    if (l96->n < 4) {
      throw InvalidDimensionError("Lorenz-96 needs at least 4 variables");
    }
  } else if (const auto* two = std::get_if<TwoScaleLorenz96Params>(&params_)) {
    check_two_scale(*two);
  }
}

std::size_t OdeSystem::dimension() const {
  struct Visitor {
    std::size_t operator()(const Lorenz63Params&) const { return 3; }
    std::size_t operator()(const Lorenz96Params& p) const { return p.n; }
    std::size_t operator()(const TwoScaleLorenz96Params& p) const { return p.n + p.n_small; }
  };
  return std::visit(Visitor{}, params_);
}

Derivative OdeSystem::derivative() const {
  struct Visitor {
    Derivative operator()(const Lorenz63Params& p) const {
      return [p](const Vector& x, Vector& out) { lorenz63_deriv(x, p, out); };
    }
    Derivative operator()(const Lorenz96Params& p) const {
      return [f = p.forcing](const Vector& x, Vector& out) {
        lorenz96_core(x.data(), x.size(), f, out.data());
      };
    }
    Derivative operator()(const TwoScaleLorenz96Params& p) const {
      return [p](const Vector& x, Vector& out) { two_scale_lorenz96_deriv(x, p, out); };
    }
  };
  return std::visit(Visitor{}, params_);
}

namespace {

struct Rk4Workspace {
  explicit Rk4Workspace(Eigen::Index n) : k1(n), k2(n), k3(n), k4(n), stage(n) {}
  Vector k1, k2, k3, k4, stage;
};

void rk4_advance(const Derivative& f, Vector& x, double dt, Rk4Workspace& w) {
  const double half = 0.5 * dt;
  f(x, w.k1);
  w.stage = x + half * w.k1;
  f(w.stage, w.k2);
  w.stage = x + half * w.k2;
  f(w.stage, w.k3);
  w.stage = x + dt * w.k3;
  f(w.stage, w.k4);
  x += (dt / 6.0) * (w.k1 + 2.0 * w.k2 + 2.0 * w.k3 + w.k4);
  if (!x.allFinite()) {
    throw NumericalOverflowError("RK4 step produced a non-finite state");
  }
}

}  // namespace

Vector rk4_step(const Derivative& f, const Vector& x, double dt) {
  if (!(dt > 0.0)) throw ConfigurationError("rk4_step: dt must be positive");
  Vector out = x;
  Rk4Workspace w(x.size());
  rk4_advance(f, out, dt, w);
  return out;
}

Vector integrate(const Derivative& f, const Vector& x, double dt, std::size_t n_steps) {
  Vector out = x;
  if (n_steps == 0) return out;
  if (!(dt > 0.0)) throw ConfigurationError("integrate: dt must be positive");
  Rk4Workspace w(x.size());
  for (std::size_t i = 0; i < n_steps; ++i) rk4_advance(f, out, dt, w);
  return out;
}

Dynamics Dynamics::ode(const OdeSystem& system, IntegratorSpec spec) {
  if (!(spec.dt > 0.0) || spec.steps_per_cycle == 0) {
    throw ConfigurationError("integrator needs dt > 0 and at least one step per cycle");
  }
  Dynamics d;
  d.dimension_ = system.dimension();
  d.derivative_ = system.derivative();
  d.spec_ = spec;
  return d;
}

Dynamics Dynamics::linear(Matrix transition) {
  if (transition.rows() != transition.cols() || transition.rows() == 0) {
    throw InvalidDimensionError("linear transition must be a non-empty square matrix");
  }
  Dynamics d;
  d.dimension_ = static_cast<std::size_t>(transition.rows());
  d.transition_ = std::move(transition);
  return d;
}

Vector Dynamics::propagate(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != dimension_) {
    throw DimensionMismatchError("state dimension does not match the dynamics");
  }
  if (is_linear()) return transition_ * x;
  return integrate(derivative_, x, spec_.dt, spec_.steps_per_cycle);
}

Matrix Dynamics::propagate_columns(const Matrix& states) const {
  if (static_cast<std::size_t>(states.rows()) != dimension_) {
    throw DimensionMismatchError("state dimension does not match the dynamics");
  }
  if (is_linear()) return transition_ * states;
  Matrix out(states.rows(), states.cols());
  Rk4Workspace w(states.rows());
  Vector x(states.rows());
  for (Eigen::Index j = 0; j < states.cols(); ++j) {
    x = states.col(j);
    for (std::size_t i = 0; i < spec_.steps_per_cycle; ++i) rk4_advance(derivative_, x, spec_.dt, w);
    out.col(j) = x;
  }
  return out;
}

}  // namespace oem
