#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "eitkit/common.hpp"

namespace eitkit {

/// Per-element conductivity map in S/m. Entry (r, c) is the element with
/// y-index r and x-index c on the unit square; flattening is row-major,
/// element id = r * grid_n + c.
using ConductivityImage = Eigen::MatrixXd;

/// Differential boundary voltages in V, ordered by (drive index, measurement
/// start electrode ascending).
using VoltageFrame = Eigen::VectorXd;

constexpr int kNumElectrodes = 16;

/// Regular Q1 quadrilateral mesh of [0,1]^2 with 16 boundary electrodes,
/// 4 per side, gap/shunt contact model.
struct Mesh {
  int grid_n = 0;           // elements per side
  int electrode_width = 0;  // boundary edges per electrode
  std::array<std::vector<int>, kNumElectrodes> electrodes;  // node ids, perimeter order

  int node_count() const { return (grid_n + 1) * (grid_n + 1); }
  int element_count() const { return grid_n * grid_n; }
  int node_id(int ix, int iy) const { return iy * (grid_n + 1) + ix; }
  /// Counterclockwise perimeter node id, p in [0, 4*grid_n).
  int perimeter_node(int p) const;
};

/// Places the 16 electrodes by the uniform rule: electrode k is centered on
/// perimeter edge round((k+0.5)*4n/16) and spans electrode_width edges.
/// electrode_width <= 0 selects the default max(1, grid_n/16).
///
/// Electrodes must not overlap. They must avoid the four corner nodes
/// whenever that is geometrically possible (always the case for
/// grid_n >= 16 with the default width); on smaller verification grids,
/// where 4*(width+1) > grid_n - 1 makes corner-free placement impossible,
/// corner-containing electrodes are permitted.
Mesh build_mesh(int grid_n, int electrode_width = 0);

/// Skip-k drive/measurement pattern: drive pair i is (i, i+skip); for each
/// drive, measurement pairs (j, j+skip) excluding any pair touching a drive
/// electrode. 16 x 13 = 208 measurements for every skip in [1,7].
struct Protocol {
  int n_elec = kNumElectrodes;
  int skip = 3;
  std::vector<std::pair<int, int>> drive_pairs;                  // 16
  std::vector<std::vector<std::pair<int, int>>> meas_pairs;      // per drive, 13

  int measurement_count() const;
  /// Flat row index of (drive, measurement start electrode); -1 if excluded.
  int flat_index(int drive, int meas_start) const;
};

Protocol make_protocol(int skip = 3);

/// Dense linearized forward operator about a baseline conductivity:
/// entries(row, e) = d V_row / d sigma_e at `baseline`.
struct SensitivityMatrix {
  Eigen::MatrixXd entries;      // measurements x grid_n^2
  ConductivityImage baseline;
};

/// Solves div(sigma grad u) = 0 with unit drive currents (gap model: +-1 A
/// split equally over the electrode nodes), node `ground_node` fixed at zero
/// potential, and reports electrode-averaged differential voltages. The
/// relative residual of every solve is required to be <= 1e-10.
VoltageFrame solve_forward(const Mesh& mesh, const ConductivityImage& sigma,
                           const Protocol& protocol, int ground_node = 0);

/// Adjoint-state sensitivity: row (d,m) holds -integral_e grad(u_d).grad(u_m)
/// over each element, with u_m the field of the measurement pair driven by a
/// unit current.
SensitivityMatrix compute_jacobian(const Mesh& mesh, const ConductivityImage& sigma0,
                                   const Protocol& protocol);

/// Forward solve at a homogeneous baseline, the V0 of difference imaging.
VoltageFrame baseline_frame(const Mesh& mesh, const Protocol& protocol,
                            double sigma0 = 1.0);

/// Potentials of all 16 electrode-pair injections (pair k = (k, k+skip)),
/// as a node_count x 16 matrix. Shared workhorse of solve_forward and
/// compute_jacobian; exposed for tests.
Eigen::MatrixXd solve_pair_fields(const Mesh& mesh, const ConductivityImage& sigma,
                                  const Protocol& protocol, int ground_node = 0);

}  // namespace eitkit
