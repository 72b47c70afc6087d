#pragma once

#include <cstddef>
#include <functional>
#include <variant>

#include <Eigen/Dense>

namespace oem {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Right-hand side of an autonomous ODE: writes dx/dt into `out`.
/// `out` is pre-sized to the state dimension and never aliases `x`.
using Derivative = std::function<void(const Vector& x, Vector& out)>;

struct Lorenz63Params {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
};

struct Lorenz96Params {
  std::size_t n = 40;
  double forcing = 8.0;
};

/// Two-scale Lorenz-96. The state vector is [X (n), Y (n_small)]; each large
/// scale variable X_k owns the contiguous block of n_small / n small-scale
/// variables starting at k * (n_small / n).
struct TwoScaleLorenz96Params {
  std::size_t n = 8;
  std::size_t n_small = 256;
  double forcing = 20.0;
  double h = 1.0;
  double b = 10.0;
  double c = 10.0;

  std::size_t block() const { return n_small / n; }
  double coupling() const { return h * c / b; }
};

// dx/dt = sigma (y - x); dy/dt = x (rho - z) - y; dz/dt = x y - beta z.
void lorenz63_deriv(const Vector& x, const Lorenz63Params& p, Vector& out);
Vector lorenz63_deriv(const Vector& x, const Lorenz63Params& p);

/// Periodic one-scale Lorenz-96. Throws InvalidDimensionError when size < 4.
void lorenz96_deriv(const Vector& x, double forcing, Vector& out);
Vector lorenz96_deriv(const Vector& x, double forcing);

struct TwoScaleDerivative {
  Vector large;
  Vector small;
};

/// Throws ConfigurationError when n_small is not a multiple of n, and
/// InvalidDimensionError when the inputs do not match the parameters.
TwoScaleDerivative two_scale_lorenz96_deriv(const Vector& x, const Vector& y,
                                            const TwoScaleLorenz96Params& p);

/// Same system on the stacked state [X; Y].
void two_scale_lorenz96_deriv(const Vector& state, const TwoScaleLorenz96Params& p,
                              Vector& out);

/// Coupling term -(h c / b) * sum of each block of small-scale variables,
/// i.e. what the truncated one-scale model leaves out of the X equations.
Vector two_scale_forcing_difference(const Vector& y, const TwoScaleLorenz96Params& p);

class OdeSystem {
 public:
  using Params = std::variant<Lorenz63Params, Lorenz96Params, TwoScaleLorenz96Params>;

  explicit OdeSystem(Params params);

  static OdeSystem lorenz63(Lorenz63Params p = {}) { return OdeSystem(p); }
  static OdeSystem lorenz96(Lorenz96Params p) { return OdeSystem(p); }
  static OdeSystem two_scale_lorenz96(TwoScaleLorenz96Params p) { return OdeSystem(p); }

  std::size_t dimension() const;
  const Params& params() const { return params_; }
  Derivative derivative() const;

 private:
  Params params_;
};

struct IntegratorSpec {
  double dt = 0.01;
  std::size_t steps_per_cycle = 5;

  double cycle_length() const { return dt * static_cast<double>(steps_per_cycle); }
};

/// One classical fourth-order Runge-Kutta step. Throws NumericalOverflowError
/// if the result is not finite.
Vector rk4_step(const Derivative& f, const Vector& x, double dt);

/// `n_steps` repeated rk4_step applications; bitwise identical to calling
/// rk4_step in a loop.
Vector integrate(const Derivative& f, const Vector& x, double dt, std::size_t n_steps);

/// Deterministic transition over one assimilation cycle: either an ODE
/// integrated with fixed-step RK4 or a linear map x -> A x.
class Dynamics {
 public:
  static Dynamics ode(const OdeSystem& system, IntegratorSpec spec);
  static Dynamics linear(Matrix transition);

  std::size_t dimension() const { return dimension_; }
  bool is_linear() const { return !derivative_; }
  const Matrix& transition_matrix() const { return transition_; }
  const IntegratorSpec& integrator() const { return spec_; }

  Vector propagate(const Vector& x) const;
  /// Propagates every column of `states`.
  Matrix propagate_columns(const Matrix& states) const;

 private:
  Dynamics() = default;

  std::size_t dimension_ = 0;
  Derivative derivative_;
  IntegratorSpec spec_;
  Matrix transition_;
};

}  // namespace oem
