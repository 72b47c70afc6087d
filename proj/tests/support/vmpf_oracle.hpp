#pragma once

#include <cmath>
#include <vector>

#include "oem/filters.hpp"

namespace oem::oracle {

// Independent evaluation of the VMPF objective pieces with explicit inverses.
struct Problem {
  Matrix centers;
  Vector y;
  Matrix h;  // used when `nonlinear` is false
  bool nonlinear = false;
  Matrix q;
  Matrix r;
  double bandwidth = 1.0;

  Vector obs(const Vector& x) const {
    if (!nonlinear) return h * x;
    Vector out(2);
    out << std::sin(x[0]) + x[1], x[0] * x[1];
    return out;
  }

  double log_p(const Vector& x) const {
    const Matrix qi = q.inverse();
    double top = -1e300;
    std::vector<double> e;
    for (long c = 0; c < centers.cols(); ++c) {
      const Vector d = x - centers.col(c);
      e.push_back(-0.5 * d.dot(qi * d));
      top = std::max(top, e.back());
    }
    double s = 0.0;
    for (double v : e) s += std::exp(v - top);
    const Vector res = y - obs(x);
    return top + std::log(s) - 0.5 * res.dot(r.inverse() * res);
  }

  double kernel(const Vector& a, const Vector& b) const {
    const Vector d = a - b;
    return std::exp(-0.5 * d.dot((bandwidth * q).inverse() * d));
  }

  // phi_c(x) = sum_i Q k(x_i, x) c_i
  Vector phi(const Matrix& xs, const Matrix& c, const Vector& x) const {
    Vector out = Vector::Zero(x.size());
    for (long i = 0; i < xs.cols(); ++i) out += q * c.col(i) * kernel(xs.col(i), x);
    return out;
  }

  // Discrete KL objective along the perturbation direction, up to a constant.
  double objective(const Matrix& xs, const Matrix& c, double eps) const {
    const double h = 1e-5;
    double total = 0.0;
    for (long j = 0; j < xs.cols(); ++j) {
      const Vector x = xs.col(j);
      Matrix jac(x.size(), x.size());
      for (long k = 0; k < x.size(); ++k) {
        Vector up = x, down = x;
        up[k] += h;
        down[k] -= h;
        jac.col(k) = (phi(xs, c, up) - phi(xs, c, down)) / (2 * h);
      }
      const Matrix t = Matrix::Identity(x.size(), x.size()) + eps * jac;
      total += -log_p(x + eps * phi(xs, c, x)) - std::log(t.determinant());
    }
    return total / static_cast<double>(xs.cols());
  }
};

inline ObservationOperator nonlinear_op() {
  return ObservationOperator::nonlinear(
      2, 2,
      [](const Vector& x) {
        Vector out(2);
        out << std::sin(x[0]) + x[1], x[0] * x[1];
        return out;
      },
      [](const Vector& x) {
        Matrix j(2, 2);
        j << std::cos(x[0]), 1.0, x[1], x[0];
        return j;
      });
}

// Relative error between the directional derivative of the KL objective
// along c and the analytic kl_gradient.
inline double kl_gradient_relative_error(const Problem& p, const ObservationOperator& h,
                                         const Matrix& xs, const Matrix& c) {
  const VmpfTarget target(p.centers, p.y, h, SpdMatrix(p.r), SpdMatrix(p.q), p.bandwidth);
  const Matrix grad = target.kl_gradient(xs);
  double analytic = 0.0;
  for (long i = 0; i < xs.cols(); ++i) analytic += c.col(i).dot(grad.col(i));
  const double e = 1e-4;
  const double numeric = (p.objective(xs, c, e) - p.objective(xs, c, -e)) / (2 * e);
  return std::abs(analytic - numeric) / std::abs(numeric);
}

}  // namespace oem::oracle
