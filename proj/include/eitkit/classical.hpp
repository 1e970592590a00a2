#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "eitkit/fem.hpp"

namespace eitkit {

struct ReconConfig {
  double lambda_noser = 1e-2;
  double lambda_tv = 1e-3;
  int tv_iters = 50;
  double tv_eps = 1e-6;
};

/// One-step Gauss-Newton with a diag(J^T J) prior:
/// delta_sigma = (J^T J + lambda diag(J^T J))^-1 J^T dV, reshaped n x n.
/// The result is a conductivity change; add the baseline for absolute maps.
ConductivityImage noser(const SensitivityMatrix& J, const VoltageFrame& dv, double lambda);

struct TvResult {
  ConductivityImage delta_sigma;
  std::vector<double> objectives;  // one per outer iteration, non-increasing
  bool converged = true;
  std::string warning;
};

/// Isotropic TV-regularized least squares
///   min 0.5 ||J x - dV||^2 + lambda_tv sum sqrt(Dx^2 + Dy^2 + eps)
/// solved by lagged-diffusivity outer iterations; each inner step is an SPD
/// solve by preconditioned CG to relative residual <= 1e-8.
TvResult tv_reconstruct(const SensitivityMatrix& J, const VoltageFrame& dv, double lambda_tv,
                        int iters = 50, double eps = 1e-6);

}  // namespace eitkit
