#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace oem {

struct OracleCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Linear-Gaussian checks of the estimators against exact references:
///   batch-em-monotone     batch EM loglik never decreases over 30 iterations (2-D model)
///   online-vs-batch-em    terminal OSS-EnKF online estimate of Q within 10% (relative
///                         Frobenius) of the batch EM fixed point, N_p = 500
///   enkf-enks-vs-exact    EnKF and one-step EnKS means within 3 Monte-Carlo standard
///                         errors of the Kalman filter / RTS smoother, N_p = 10^5
///   is-vs-oss             importance-sampling and smoother statistics agree within
///                         their Monte-Carlo confidence interval (scalar model)
std::vector<OracleCheck> run_oracle_battery(std::uint64_t seed = 20240611);

}  // namespace oem
