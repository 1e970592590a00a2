#include "eitkit/fem.hpp"

#include <cmath>
#include <set>
#include <string>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

namespace eitkit {

namespace {

// Q1 element stiffness for the unit-coefficient Laplacian, node order
// (0,0) (1,0) (1,1) (0,1). Size-independent in 2-D.
constexpr double k_ref[4][4] = {
    {2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0},
    {-1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0},
    {-1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0},
    {-1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0}};

void element_nodes(const Mesh& mesh, int ex, int ey, int out[4]) {
  out[0] = mesh.node_id(ex, ey);
  out[1] = mesh.node_id(ex + 1, ey);
  out[2] = mesh.node_id(ex + 1, ey + 1);
  out[3] = mesh.node_id(ex, ey + 1);
}

void check_sigma(const Mesh& mesh, const ConductivityImage& sigma) {
  if (sigma.rows() != mesh.grid_n || sigma.cols() != mesh.grid_n)
    throw ValueError("solve_forward: sigma is " + std::to_string(sigma.rows()) + "x" +
                     std::to_string(sigma.cols()) + ", mesh expects " +
                     std::to_string(mesh.grid_n) + "x" + std::to_string(mesh.grid_n));
  for (Eigen::Index r = 0; r < sigma.rows(); ++r)
    for (Eigen::Index c = 0; c < sigma.cols(); ++c) {
      const double v = sigma(r, c);
      if (!(v > 0.0) || !std::isfinite(v))
        throw SolverError("sigma must be strictly positive and finite; element (" +
                          std::to_string(r) + "," + std::to_string(c) + ") is " +
                          std::to_string(v));
    }
}

// Stiffness with the ground row/column eliminated. Reduced index = node id
// for nodes < ground, id-1 above it.
Eigen::SparseMatrix<double> assemble_reduced(const Mesh& mesh, const ConductivityImage& sigma,
                                             int ground_node) {
  const int n = mesh.grid_n;
  const int reduced = mesh.node_count() - 1;
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh.element_count()) * 16);
  int nodes[4];
  for (int ey = 0; ey < n; ++ey) {
    for (int ex = 0; ex < n; ++ex) {
      const double s = sigma(ey, ex);
      element_nodes(mesh, ex, ey, nodes);
      for (int i = 0; i < 4; ++i) {
        if (nodes[i] == ground_node) continue;
        const int ri = nodes[i] < ground_node ? nodes[i] : nodes[i] - 1;
        for (int j = 0; j < 4; ++j) {
          if (nodes[j] == ground_node) continue;
          const int rj = nodes[j] < ground_node ? nodes[j] : nodes[j] - 1;
          triplets.emplace_back(ri, rj, s * k_ref[i][j]);
        }
      }
    }
  }
  Eigen::SparseMatrix<double> K(reduced, reduced);
  K.setFromTriplets(triplets.begin(), triplets.end());
  return K;
}

// Unit current of pair (a, b): +1 A split over electrode a's nodes, -1 A
// over electrode b's.
Eigen::VectorXd pair_current(const Mesh& mesh, int a, int b) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(mesh.node_count());
  for (int node : mesh.electrodes[static_cast<std::size_t>(a)])
    f[node] += 1.0 / static_cast<double>(mesh.electrodes[static_cast<std::size_t>(a)].size());
  for (int node : mesh.electrodes[static_cast<std::size_t>(b)])
    f[node] -= 1.0 / static_cast<double>(mesh.electrodes[static_cast<std::size_t>(b)].size());
  return f;
}

Eigen::VectorXd drop_entry(const Eigen::VectorXd& v, int idx) {
  Eigen::VectorXd out(v.size() - 1);
  out.head(idx) = v.head(idx);
  out.tail(v.size() - 1 - idx) = v.tail(v.size() - 1 - idx);
  return out;
}

Eigen::VectorXd insert_zero(const Eigen::VectorXd& v, int idx) {
  Eigen::VectorXd out(v.size() + 1);
  out.head(idx) = v.head(idx);
  out[idx] = 0.0;
  out.tail(v.size() - idx) = v.tail(v.size() - idx);
  return out;
}

}  // namespace

int Mesh::perimeter_node(int p) const {
  const int n = grid_n;
  p = ((p % (4 * n)) + 4 * n) % (4 * n);
  if (p <= n) return node_id(p, 0);
  if (p <= 2 * n) return node_id(n, p - n);
  if (p <= 3 * n) return node_id(3 * n - p, n);
  return node_id(0, 4 * n - p);
}

Mesh build_mesh(int grid_n, int electrode_width) {
  if (grid_n < 8) throw GeometryError("build_mesh: grid_n must be >= 8");
  if (electrode_width <= 0) electrode_width = std::max(1, grid_n / 16);
  const int perimeter = 4 * grid_n;
  if (kNumElectrodes * electrode_width + kNumElectrodes > perimeter)
    throw GeometryError("build_mesh: 16 electrodes of width " + std::to_string(electrode_width) +
                        " plus gaps do not fit a perimeter of " + std::to_string(perimeter) +
                        " edges");

  Mesh mesh;
  mesh.grid_n = grid_n;
  mesh.electrode_width = electrode_width;

  // Corner-free placement needs 4 electrodes of width+1 nodes strictly inside
  // each side's grid_n - 1 interior boundary nodes.
  const bool corners_avoidable = 4 * (electrode_width + 1) <= grid_n - 1;
  const std::set<int> corner_nodes = {mesh.perimeter_node(0), mesh.perimeter_node(grid_n),
                                      mesh.perimeter_node(2 * grid_n),
                                      mesh.perimeter_node(3 * grid_n)};

  std::set<int> used_nodes;
  for (int k = 0; k < kNumElectrodes; ++k) {
    const int center_edge =
        static_cast<int>(std::llround((k + 0.5) * perimeter / static_cast<double>(kNumElectrodes)));
    const int start_edge = center_edge - electrode_width / 2;
    std::vector<int>& nodes = mesh.electrodes[static_cast<std::size_t>(k)];
    for (int p = start_edge; p <= start_edge + electrode_width; ++p)
      nodes.push_back(mesh.perimeter_node(p));
    for (int node : nodes) {
      if (!used_nodes.insert(node).second)
        throw GeometryError("build_mesh: electrodes overlap at grid_n " + std::to_string(grid_n) +
                            ", width " + std::to_string(electrode_width));
      if (corners_avoidable && corner_nodes.count(node))
        throw GeometryError("build_mesh: electrode " + std::to_string(k) +
                            " contains a corner node");
    }
  }
  return mesh;
}

int Protocol::measurement_count() const {
  int count = 0;
  for (const auto& m : meas_pairs) count += static_cast<int>(m.size());
  return count;
}

int Protocol::flat_index(int drive, int meas_start) const {
  if (drive < 0 || drive >= static_cast<int>(meas_pairs.size())) return -1;
  int base = 0;
  for (int d = 0; d < drive; ++d) base += static_cast<int>(meas_pairs[static_cast<std::size_t>(d)].size());
  const auto& list = meas_pairs[static_cast<std::size_t>(drive)];
  for (std::size_t i = 0; i < list.size(); ++i)
    if (list[i].first == meas_start) return base + static_cast<int>(i);
  return -1;
}

Protocol make_protocol(int skip) {
  if (skip < 1 || skip > 7)
    throw ValueError("make_protocol: skip must be in [1, 7], got " + std::to_string(skip));
  Protocol protocol;
  protocol.skip = skip;
  protocol.drive_pairs.reserve(kNumElectrodes);
  protocol.meas_pairs.resize(kNumElectrodes);
  for (int i = 0; i < kNumElectrodes; ++i)
    protocol.drive_pairs.emplace_back(i, (i + skip) % kNumElectrodes);
  for (int i = 0; i < kNumElectrodes; ++i) {
    const auto [a, b] = protocol.drive_pairs[static_cast<std::size_t>(i)];
    auto& list = protocol.meas_pairs[static_cast<std::size_t>(i)];
    for (int j = 0; j < kNumElectrodes; ++j) {
      const int m0 = j;
      const int m1 = (j + skip) % kNumElectrodes;
      if (m0 == a || m0 == b || m1 == a || m1 == b) continue;
      list.emplace_back(m0, m1);
    }
  }
  return protocol;
}

Eigen::MatrixXd solve_pair_fields(const Mesh& mesh, const ConductivityImage& sigma,
                                  const Protocol& protocol, int ground_node) {
  check_sigma(mesh, sigma);
  if (ground_node < 0 || ground_node >= mesh.node_count())
    throw ValueError("solve_pair_fields: ground node out of range");

  const Eigen::SparseMatrix<double> K = assemble_reduced(mesh, sigma, ground_node);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(K);
  if (solver.info() != Eigen::Success)
    throw SolverError("solve_pair_fields: factorization failed (singular system)");

  Eigen::MatrixXd fields(mesh.node_count(), kNumElectrodes);
  for (int k = 0; k < kNumElectrodes; ++k) {
    const auto [a, b] = protocol.drive_pairs[static_cast<std::size_t>(k)];
    const Eigen::VectorXd f = drop_entry(pair_current(mesh, a, b), ground_node);
    Eigen::VectorXd u = solver.solve(f);
    const double fnorm = f.norm();
    double residual = (K * u - f).norm() / (fnorm > 0 ? fnorm : 1.0);
    if (residual > 1e-10) {
      u += solver.solve(f - K * u);  // one refinement pass
      residual = (K * u - f).norm() / (fnorm > 0 ? fnorm : 1.0);
    }
    if (!(residual <= 1e-10))
      throw SolverError("solve_pair_fields: solver did not converge, relative residual " +
                        std::to_string(residual));
    fields.col(k) = insert_zero(u, ground_node);
  }
  return fields;
}

namespace {

// 16 x 16 matrix of electrode-averaged potentials: entry (e, k) is the mean
// potential of electrode e under pair injection k.
Eigen::MatrixXd electrode_potentials(const Mesh& mesh, const Eigen::MatrixXd& fields) {
  Eigen::MatrixXd P(kNumElectrodes, kNumElectrodes);
  for (int e = 0; e < kNumElectrodes; ++e) {
    const auto& nodes = mesh.electrodes[static_cast<std::size_t>(e)];
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(kNumElectrodes);
    for (int node : nodes) mean += fields.row(node);
    P.row(e) = mean / static_cast<double>(nodes.size());
  }
  return P;
}

VoltageFrame frame_from_potentials(const Protocol& protocol, const Eigen::MatrixXd& P) {
  VoltageFrame v(protocol.measurement_count());
  int row = 0;
  for (int d = 0; d < kNumElectrodes; ++d)
    for (const auto& [m0, m1] : protocol.meas_pairs[static_cast<std::size_t>(d)])
      v[row++] = P(m0, d) - P(m1, d);
  return v;
}

}  // namespace

VoltageFrame solve_forward(const Mesh& mesh, const ConductivityImage& sigma,
                           const Protocol& protocol, int ground_node) {
  const Eigen::MatrixXd fields = solve_pair_fields(mesh, sigma, protocol, ground_node);
  return frame_from_potentials(protocol, electrode_potentials(mesh, fields));
}

SensitivityMatrix compute_jacobian(const Mesh& mesh, const ConductivityImage& sigma0,
                                   const Protocol& protocol) {
  const Eigen::MatrixXd fields = solve_pair_fields(mesh, sigma0, protocol);
  const int n = mesh.grid_n;
  const int rows = protocol.measurement_count();

  SensitivityMatrix J;
  J.entries.resize(rows, n * n);
  J.baseline = sigma0;

  // Measurement pair (j, j+skip) is exactly injection pair j, so the drive
  // fields double as adjoint fields.
  int nodes[4];
  Eigen::Matrix<double, 4, kNumElectrodes> local;
  Eigen::Matrix<double, 4, kNumElectrodes> k_local;
  for (int ey = 0; ey < n; ++ey) {
    for (int ex = 0; ex < n; ++ex) {
      const int elem = ey * n + ex;
      element_nodes(mesh, ex, ey, nodes);
      for (int i = 0; i < 4; ++i) local.row(i) = fields.row(nodes[i]);
      for (int i = 0; i < 4; ++i) {
        k_local.row(i).setZero();
        for (int j = 0; j < 4; ++j) k_local.row(i) += k_ref[i][j] * local.row(j);
      }
      int row = 0;
      for (int d = 0; d < kNumElectrodes; ++d) {
        for (const auto& [m0, m1] : protocol.meas_pairs[static_cast<std::size_t>(d)]) {
          (void)m1;
          J.entries(row, elem) = -local.col(d).dot(k_local.col(m0));
          ++row;
        }
      }
    }
  }
  return J;
}

VoltageFrame baseline_frame(const Mesh& mesh, const Protocol& protocol, double sigma0) {
  const ConductivityImage sigma = ConductivityImage::Constant(mesh.grid_n, mesh.grid_n, sigma0);
  return solve_forward(mesh, sigma, protocol);
}

}  // namespace eitkit
