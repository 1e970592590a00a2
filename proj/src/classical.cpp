#include "eitkit/classical.hpp"

#include <cmath>

#include <Eigen/Cholesky>

namespace eitkit {

namespace {

int grid_side(const SensitivityMatrix& J, const VoltageFrame& dv) {
  if (J.entries.rows() != dv.size())
    throw ValueError("reconstruction: dV has " + std::to_string(dv.size()) + " entries, J has " +
                     std::to_string(J.entries.rows()) + " rows");
  const auto cols = J.entries.cols();
  const int n = static_cast<int>(std::llround(std::sqrt(static_cast<double>(cols))));
  if (static_cast<Eigen::Index>(n) * n != cols)
    throw ValueError("reconstruction: J column count is not a square");
  return n;
}

ConductivityImage reshape_to_image(const Eigen::VectorXd& x, int n) {
  ConductivityImage img(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) img(r, c) = x[r * n + c];
  return img;
}

// Forward differences with replicate boundary (last row/col gradient 0).
void gradient(const Eigen::VectorXd& x, int n, Eigen::VectorXd& gx, Eigen::VectorXd& gy) {
  gx.setZero(n * n);
  gy.setZero(n * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const int i = r * n + c;
      if (c + 1 < n) gx[i] = x[i + 1] - x[i];
      if (r + 1 < n) gy[i] = x[i + n] - x[i];
    }
}

// Accumulates Dx^T wx + Dy^T wy (adjoint of the forward-difference gradient).
void gradient_adjoint(const Eigen::VectorXd& wx, const Eigen::VectorXd& wy, int n,
                      Eigen::VectorXd& out) {
  out.setZero(n * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const int i = r * n + c;
      if (c + 1 < n) {
        out[i] -= wx[i];
        out[i + 1] += wx[i];
      }
      if (r + 1 < n) {
        out[i] -= wy[i];
        out[i + n] += wy[i];
      }
    }
}

}  // namespace

ConductivityImage noser(const SensitivityMatrix& J, const VoltageFrame& dv, double lambda) {
  if (!(lambda > 0.0)) throw ValueError("noser: lambda must be positive");
  const int n = grid_side(J, dv);
  const Eigen::MatrixXd& A = J.entries;
  Eigen::MatrixXd normal = A.transpose() * A;
  const Eigen::VectorXd diag = normal.diagonal();
  for (Eigen::Index i = 0; i < diag.size(); ++i)
    if (diag[i] == 0.0)
      throw SolverError("noser: diag(J^T J) entry " + std::to_string(i) +
                        " is zero; element is unobservable");
  normal.diagonal() += lambda * diag;
  const Eigen::VectorXd x = normal.ldlt().solve(A.transpose() * dv);
  return reshape_to_image(x, n);
}

TvResult tv_reconstruct(const SensitivityMatrix& J, const VoltageFrame& dv, double lambda_tv,
                        int iters, double eps) {
  if (!(lambda_tv > 0.0)) throw ValueError("tv_reconstruct: lambda_tv must be positive");
  if (iters < 1) throw ValueError("tv_reconstruct: iters must be >= 1");
  if (!(eps > 0.0)) throw ValueError("tv_reconstruct: eps must be positive");
  const int n = grid_side(J, dv);
  const Eigen::Index m = n * n;
  const Eigen::MatrixXd& A = J.entries;

  const Eigen::VectorXd rhs = A.transpose() * dv;
  const Eigen::VectorXd jtj_diag = A.colwise().squaredNorm();

  Eigen::VectorXd x = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd gx(m), gy(m), weights(m);

  auto objective = [&](const Eigen::VectorXd& z) {
    gradient(z, n, gx, gy);
    const double fidelity = 0.5 * (A * z - dv).squaredNorm();
    const double tv = (gx.array().square() + gy.array().square() + eps).sqrt().sum();
    return fidelity + lambda_tv * tv;
  };

  TvResult result;
  result.objectives.reserve(static_cast<std::size_t>(iters) + 1);
  double prev = objective(x);
  result.objectives.push_back(prev);

  for (int outer = 0; outer < iters; ++outer) {
    gradient(x, n, gx, gy);
    weights = (gx.array().square() + gy.array().square() + eps).rsqrt();

    // System operator of the quadratic majorizer.
    Eigen::VectorXd scratch(m);
    auto apply = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
      Eigen::VectorXd out = A.transpose() * (A * z);
      Eigen::VectorXd zx(m), zy(m);
      gradient(z, n, zx, zy);
      zx.array() *= weights.array();
      zy.array() *= weights.array();
      gradient_adjoint(zx, zy, n, scratch);
      out += lambda_tv * scratch;
      return out;
    };

    // Jacobi preconditioner: diag(J^T J) + lambda * diag(D^T W D).
    Eigen::VectorXd precond = jtj_diag;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        const int i = r * n + c;
        double d = 0.0;
        if (c + 1 < n) d += weights[i];
        if (c > 0) d += weights[i - 1];
        if (r + 1 < n) d += weights[i];
        if (r > 0) d += weights[i - n];
        precond[i] += lambda_tv * d;
      }
    for (Eigen::Index i = 0; i < m; ++i)
      if (precond[i] <= 0.0) precond[i] = 1.0;

    // PCG on the SPD majorizer system, warm-started at the current iterate.
    Eigen::VectorXd z = x;
    Eigen::VectorXd r = rhs - apply(z);
    const double rhs_norm = rhs.norm() > 0 ? rhs.norm() : 1.0;
    Eigen::VectorXd s = r.cwiseQuotient(precond);
    Eigen::VectorXd p = s;
    double rs = r.dot(s);
    const int max_cg = static_cast<int>(4 * m) + 200;
    bool inner_ok = r.norm() / rhs_norm <= 1e-8;
    for (int it = 0; it < max_cg && !inner_ok; ++it) {
      const Eigen::VectorXd ap = apply(p);
      const double alpha = rs / p.dot(ap);
      z += alpha * p;
      r -= alpha * ap;
      if (r.norm() / rhs_norm <= 1e-8) {
        inner_ok = true;
        break;
      }
      s = r.cwiseQuotient(precond);
      const double rs_new = r.dot(s);
      p = s + (rs_new / rs) * p;
      rs = rs_new;
    }
    if (!inner_ok)
      throw SolverError("tv_reconstruct: inner CG failed to reach 1e-8 at outer iteration " +
                        std::to_string(outer));

    x = z;
    const double current = objective(x);
    result.objectives.push_back(current);
    if (current > prev + 1e-10 * std::max(1.0, std::abs(prev))) {
      result.converged = false;
      result.warning = "objective increased at outer iteration " + std::to_string(outer) +
                       " (final objective " + std::to_string(current) + ")";
      break;
    }
    const bool settled = std::abs(prev - current) <= 1e-12 * std::max(1.0, std::abs(prev));
    prev = current;
    if (settled) break;
  }

  result.delta_sigma = reshape_to_image(x, n);
  return result;
}

}  // namespace eitkit
