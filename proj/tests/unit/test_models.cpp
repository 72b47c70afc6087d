#include <gtest/gtest.h>

#include <cmath>

#include "oem/errors.hpp"
#include "oem/models.hpp"

using namespace oem;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Straightforward re-implementation with explicit modulo indexing.
Vector naive_l96(const Vector& x, double f) {
  const long n = x.size();
  Vector out(n);
  for (long i = 0; i < n; ++i) {
    auto at = [&](long j) { return x[((j % n) + n) % n]; };
    out[i] = at(i - 1) * (at(i + 1) - at(i - 2)) - at(i) + f;
  }
  return out;
}

// Index-by-index two-scale equations with 1-based indices as printed.
TwoScaleDerivative naive_two_scale(const Vector& x, const Vector& y,
                                   const TwoScaleLorenz96Params& p) {
  const long n = static_cast<long>(p.n);
  const long ns = static_cast<long>(p.n_small);
  const long per = ns / n;
  auto X = [&](long j) { return x[(((j - 1) % n) + n) % n]; };
  auto Y = [&](long j) { return y[(((j - 1) % ns) + ns) % ns]; };
  TwoScaleDerivative d{Vector(n), Vector(ns)};
  for (long k = 1; k <= n; ++k) {
    double s = 0.0;
    for (long j = per * (k - 1) + 1; j <= k * per; ++j) s += Y(j);
    d.large[k - 1] = X(k - 1) * (X(k + 1) - X(k - 2)) - X(k) + p.forcing - p.h * p.c / p.b * s;
  }
  for (long m = 1; m <= ns; ++m) {
    d.small[m - 1] = p.c * p.b * Y(m + 1) * (Y(m - 1) - Y(m + 2)) - p.c * Y(m) +
                     p.h * p.c / p.b * X((m - 1) / per + 1);
  }
  return d;
}

}  // namespace

TEST(Lorenz63, OriginIsEquilibrium) {
  EXPECT_EQ(lorenz63_deriv(Vector::Zero(3), {}), Vector::Zero(3));
}

TEST(Lorenz63, HandEvaluatedPoints) {
  const Vector d1 = lorenz63_deriv(vec({1, 1, 1}), {});
  EXPECT_NEAR(d1[0], 0.0, 1e-14);
  EXPECT_NEAR(d1[1], 26.0, 1e-14);
  EXPECT_NEAR(d1[2], -5.0 / 3.0, 1e-14);

  const Vector d2 = lorenz63_deriv(vec({1, 2, 3}), {});
  EXPECT_NEAR(d2[0], 10.0, 1e-14);
  EXPECT_NEAR(d2[1], 23.0, 1e-14);
  EXPECT_NEAR(d2[2], -6.0, 1e-14);
}

TEST(Lorenz63, RejectsWrongSize) {
  EXPECT_THROW(lorenz63_deriv(Vector::Zero(4), {}), InvalidDimensionError);
}

TEST(Lorenz96, UniformStateIsEquilibrium) {
  for (long n : {4, 8, 40}) {
    EXPECT_TRUE(lorenz96_deriv(Vector::Constant(n, 8.0), 8.0).isZero(0.0)) << n;
  }
}

TEST(Lorenz96, SingleBumpFourVariables) {
  // Only X_0 is non-zero, so every product X_{n-1}(X_{n+1} - X_{n-2}) vanishes
  // and the tendency is -X.
  const Vector d = lorenz96_deriv(vec({1, 0, 0, 0}), 0.0);
  EXPECT_EQ(d, vec({-1, 0, 0, 0}));
}

TEST(Lorenz96, MatchesNaiveEvaluation) {
  Vector x = Vector::Constant(8, 8.0);
  x[0] += 0.01;
  const Vector got = lorenz96_deriv(x, 8.0);
  const Vector want = naive_l96(x, 8.0);
  for (long i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(got[i], want[i]);

  const Vector r = Vector::LinSpaced(11, -3.0, 4.0).array().sin() * 5.0;
  EXPECT_TRUE(lorenz96_deriv(r, 8.0).isApprox(naive_l96(r, 8.0), 1e-14));
}

TEST(Lorenz96, CyclicShiftEquivariance) {
  const Vector x = Vector::LinSpaced(10, 0.0, 9.0).array().cos() * 3.0;
  Vector shifted(10);
  for (long i = 0; i < 10; ++i) shifted[(i + 3) % 10] = x[i];
  const Vector d = lorenz96_deriv(x, 8.0);
  const Vector ds = lorenz96_deriv(shifted, 8.0);
  for (long i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(ds[(i + 3) % 10], d[i]);
}

TEST(Lorenz96, RejectsFewerThanFourVariables) {
  EXPECT_THROW(lorenz96_deriv(Vector::Zero(3), 8.0), InvalidDimensionError);
  EXPECT_THROW(OdeSystem::lorenz96({3, 8.0}), InvalidDimensionError);
}

TEST(TwoScaleLorenz96, ZeroCouplingDecouples) {
  TwoScaleLorenz96Params p{8, 32, 20.0, 0.0, 10.0, 10.0};
  const Vector x = Vector::LinSpaced(8, -2.0, 5.0);
  const Vector y = Vector::LinSpaced(32, -1.0, 1.0).array().sin();
  const auto d = two_scale_lorenz96_deriv(x, y, p);
  EXPECT_TRUE(d.large.isApprox(lorenz96_deriv(x, 20.0)));
  const auto d2 = two_scale_lorenz96_deriv(x * 3.0, y, p);
  EXPECT_EQ(d.small, d2.small);
}

TEST(TwoScaleLorenz96, ZeroSmallScaleGivesOneScaleTendency) {
  TwoScaleLorenz96Params p;
  const Vector x = Vector::LinSpaced(8, -2.0, 5.0);
  const auto d = two_scale_lorenz96_deriv(x, Vector::Zero(256), p);
  EXPECT_EQ(d.large, lorenz96_deriv(x, p.forcing));
}

TEST(TwoScaleLorenz96, MatchesIndexByIndexEvaluation) {
  TwoScaleLorenz96Params p{2, 4, 20.0, 1.0, 10.0, 10.0};
  const auto got = two_scale_lorenz96_deriv(Vector::Ones(2), Vector::Ones(4), p);
  const auto want = naive_two_scale(Vector::Ones(2), Vector::Ones(4), p);
  EXPECT_TRUE(got.large.isApprox(want.large, 1e-14));
  EXPECT_TRUE(got.small.isApprox(want.small, 1e-14));

  TwoScaleLorenz96Params q{8, 64, 20.0, 1.0, 10.0, 10.0};
  const Vector x = Vector::LinSpaced(8, -2.0, 5.0).array().sin() * 4.0;
  const Vector y = Vector::LinSpaced(64, -6.0, 3.0).array().cos() * 0.5;
  const auto g = two_scale_lorenz96_deriv(x, y, q);
  const auto w = naive_two_scale(x, y, q);
  EXPECT_TRUE(g.large.isApprox(w.large, 1e-13));
  EXPECT_TRUE(g.small.isApprox(w.small, 1e-13));
}

TEST(TwoScaleLorenz96, StackedFormMatches) {
  TwoScaleLorenz96Params p{8, 64, 20.0, 1.0, 10.0, 10.0};
  Vector state(72);
  state.head(8) = Vector::LinSpaced(8, -2.0, 5.0);
  state.tail(64) = Vector::LinSpaced(64, 0.0, 1.0);
  Vector out(72);
  two_scale_lorenz96_deriv(state, p, out);
  const auto d = two_scale_lorenz96_deriv(state.head(8), state.tail(64), p);
  EXPECT_EQ(out.head(8), d.large);
  EXPECT_EQ(out.tail(64), d.small);
}

TEST(TwoScaleLorenz96, ForcingDifferenceIsTheCouplingTerm) {
  TwoScaleLorenz96Params p{8, 64, 20.0, 1.0, 10.0, 10.0};
  const Vector x = Vector::LinSpaced(8, -2.0, 5.0);
  const Vector y = Vector::LinSpaced(64, -1.0, 2.0);
  const auto d = two_scale_lorenz96_deriv(x, y, p);
  EXPECT_TRUE((lorenz96_deriv(x, p.forcing) + two_scale_forcing_difference(y, p))
                  .isApprox(d.large, 1e-13));
}

TEST(TwoScaleLorenz96, IndivisibleSmallScaleIsConfigurationError) {
  EXPECT_THROW(OdeSystem::two_scale_lorenz96({8, 100, 20.0, 1.0, 10.0, 10.0}),
               ConfigurationError);
  EXPECT_THROW(two_scale_lorenz96_deriv(Vector::Zero(8), Vector::Zero(100),
                                        {8, 100, 20.0, 1.0, 10.0, 10.0}),
               ConfigurationError);
}

TEST(Rk4, ZeroFieldLeavesStateUnchanged) {
  const Derivative zero = [](const Vector&, Vector& out) { out.setZero(); };
  const Vector x = vec({1.5, -2.0, 3.0});
  EXPECT_EQ(rk4_step(zero, x, 0.1), x);
}

TEST(Rk4, ExponentialGrowth) {
  const Derivative f = [](const Vector& x, Vector& out) { out = x; };
  const Vector x1 = rk4_step(f, Vector::Ones(1), 0.1);
  EXPECT_NEAR(x1[0], std::exp(0.1), 1e-7);
  EXPECT_NEAR(x1[0], 1.10517083, 1e-8);
}

TEST(Rk4, NonFiniteResultThrows) {
  const Derivative f = [](const Vector& x, Vector& out) { out = x.array().square() * 1e300; };
  EXPECT_THROW(rk4_step(f, Vector::Constant(1, 1e10), 1.0), NumericalOverflowError);
}

TEST(Rk4, FourthOrderOnLorenz63) {
  const Derivative f = OdeSystem::lorenz63().derivative();
  const Vector x0 = vec({1.0, 1.0, 1.0});
  const double horizon = 0.5;
  const Vector reference = integrate(f, x0, 0.0001, 5000);
  auto error = [&](double dt) {
    const auto steps = static_cast<std::size_t>(std::lround(horizon / dt));
    return (integrate(f, x0, dt, steps) - reference).norm();
  };
  const double ratio = error(0.01) / error(0.005);
  EXPECT_GE(ratio, 12.0);
  EXPECT_LE(ratio, 20.0);
  const double order = std::log2(ratio);
  EXPECT_GE(order, 3.8);
  EXPECT_LE(order, 4.2);
}

TEST(Rk4, EquilibriaAreFixedPoints) {
  const Derivative l63 = OdeSystem::lorenz63().derivative();
  EXPECT_EQ(integrate(l63, Vector::Zero(3), 0.01, 250), Vector::Zero(3));
  const Derivative l96 = OdeSystem::lorenz96({8, 8.0}).derivative();
  EXPECT_EQ(rk4_step(l96, Vector::Constant(8, 8.0), 0.01), Vector::Constant(8, 8.0));
}

TEST(Integrate, ZeroStepsIsIdentity) {
  const Derivative f = OdeSystem::lorenz63().derivative();
  const Vector x = vec({3.0, -1.0, 20.0});
  EXPECT_EQ(integrate(f, x, 0.01, 0), x);
}

TEST(Integrate, MatchesLoopOfSteps) {
  const Derivative f = OdeSystem::lorenz96({8, 8.0}).derivative();
  Vector x = Vector::Constant(8, 8.0);
  x[0] += 0.01;
  Vector manual = x;
  for (int i = 0; i < 50; ++i) manual = rk4_step(f, manual, 0.001);
  const Vector looped = integrate(f, x, 0.001, 50);
  for (long i = 0; i < 8; ++i) EXPECT_EQ(looped[i], manual[i]);
}

TEST(Integrate, Deterministic) {
  const Derivative f = OdeSystem::lorenz63().derivative();
  EXPECT_EQ(integrate(f, vec({1, 2, 3}), 0.01, 500), integrate(f, vec({1, 2, 3}), 0.01, 500));
}

TEST(Dynamics, OdeAndLinearPropagation) {
  const Dynamics ode = Dynamics::ode(OdeSystem::lorenz63(), {0.01, 5});
  const Vector x = vec({1, 2, 3});
  EXPECT_EQ(ode.propagate(x), integrate(OdeSystem::lorenz63().derivative(), x, 0.01, 5));
  EXPECT_FALSE(ode.is_linear());
  EXPECT_DOUBLE_EQ(ode.integrator().cycle_length(), 0.05);

  Matrix a(2, 2);
  a << 0.9, 0.1, 0.0, 0.8;
  const Dynamics lin = Dynamics::linear(a);
  Matrix cols(2, 3);
  cols << 1, 2, 3, 4, 5, 6;
  EXPECT_TRUE(lin.propagate_columns(cols).isApprox(a * cols));
  EXPECT_TRUE(lin.is_linear());
}
