#include <doctest.h>

#include <set>

#include "eitkit/fem.hpp"
#include "fem_oracle.hpp"

using namespace eitkit;

namespace {

ConductivityImage random_sigma(int n, std::uint64_t seed, double lo = 0.2, double hi = 2.0) {
  Rng rng(seed);
  ConductivityImage sigma(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) sigma(r, c) = rng.uniform(lo, hi);
  return sigma;
}

}  // namespace

TEST_CASE("build_mesh paper-scale counts") {
  const Mesh mesh = build_mesh(80);
  CHECK(mesh.element_count() == 6400);
  CHECK(mesh.node_count() == 6561);
  CHECK(mesh.electrode_width == 5);
}

TEST_CASE("build_mesh 32/2 layout") {
  const Mesh mesh = build_mesh(32, 2);
  for (const auto& e : mesh.electrodes) CHECK(e.size() == 3);
  // centers at perimeter edges 4, 12, 20, ...: spacing 8
  const Mesh m2 = build_mesh(32, 2);
  CHECK(m2.electrodes[0][0] == m2.perimeter_node(3));
  CHECK(m2.electrodes[1][0] == m2.perimeter_node(11));
}

TEST_CASE("build_mesh rejects infeasible widths") {
  CHECK_THROWS_AS(build_mesh(16, 4), GeometryError);
  CHECK_THROWS_AS(build_mesh(7), GeometryError);
}

TEST_CASE("mesh invariants: 4 per side, disjoint, no corners") {
  for (int n : {16, 32, 48, 80}) {
    const Mesh mesh = build_mesh(n);
    const std::set<int> corners = {mesh.node_id(0, 0), mesh.node_id(n, 0), mesh.node_id(n, n),
                                   mesh.node_id(0, n)};
    std::set<int> seen;
    std::array<int, 4> per_side{0, 0, 0, 0};
    for (int k = 0; k < kNumElectrodes; ++k) {
      const auto& nodes = mesh.electrodes[static_cast<std::size_t>(k)];
      CHECK(nodes.size() == static_cast<std::size_t>(mesh.electrode_width) + 1);
      for (int node : nodes) {
        CHECK(corners.count(node) == 0);
        CHECK(seen.insert(node).second);
      }
      const int iy = nodes[0] / (n + 1), ix = nodes[0] % (n + 1);
      if (iy == 0) per_side[0]++;
      else if (ix == n) per_side[1]++;
      else if (iy == n) per_side[2]++;
      else per_side[3]++;
    }
    for (int s = 0; s < 4; ++s) CHECK(per_side[static_cast<std::size_t>(s)] == 4);
  }
}

TEST_CASE("small verification grids may touch corners but never overlap") {
  const Mesh mesh = build_mesh(8);  // corner-free placement is impossible here
  std::set<int> seen;
  for (const auto& e : mesh.electrodes)
    for (int node : e) CHECK(seen.insert(node).second);
  CHECK(seen.size() == 32);
}

TEST_CASE("protocol counts and exclusions") {
  const Protocol p3 = make_protocol(3);
  CHECK(p3.measurement_count() == 208);
  CHECK(p3.drive_pairs[0] == std::make_pair(0, 3));

  // drive 0 = (0,3): excluded measurement starts are {0, 3, 13}
  std::set<int> starts;
  for (const auto& [a, b] : p3.meas_pairs[0]) starts.insert(a);
  CHECK(starts.count(0) == 0);
  CHECK(starts.count(3) == 0);
  CHECK(starts.count(13) == 0);
  CHECK(starts.size() == 13);

  for (int skip = 1; skip <= 7; ++skip) {
    const Protocol p = make_protocol(skip);
    CHECK(p.measurement_count() == 208);
    // brute-force re-count of the exclusion rule
    int count = 0;
    for (int i = 0; i < 16; ++i) {
      const int a = i, b = (i + skip) % 16;
      for (int j = 0; j < 16; ++j) {
        const int m0 = j, m1 = (j + skip) % 16;
        if (m0 != a && m0 != b && m1 != a && m1 != b) ++count;
      }
    }
    CHECK(count == 208);
  }

  CHECK_THROWS_AS(make_protocol(0), ValueError);
  CHECK_THROWS_AS(make_protocol(8), ValueError);
}

TEST_CASE("forward solve matches dense LU oracle") {
  SUBCASE("8x8 homogeneous skip 1") {
    const Mesh mesh = build_mesh(8);
    const Protocol protocol = make_protocol(1);
    const ConductivityImage sigma = ConductivityImage::Constant(8, 8, 1.0);
    const VoltageFrame v = solve_forward(mesh, sigma, protocol);
    const VoltageFrame ref = testing::dense_forward_oracle(mesh, sigma, protocol);
    REQUIRE(v.size() == 208);
    CHECK((v - ref).norm() / ref.norm() < 1e-8);
  }
  SUBCASE("16x16 random sigma skip 3") {
    const Mesh mesh = build_mesh(16);
    const Protocol protocol = make_protocol(3);
    const ConductivityImage sigma = random_sigma(16, 42);
    const VoltageFrame v = solve_forward(mesh, sigma, protocol);
    const VoltageFrame ref = testing::dense_forward_oracle(mesh, sigma, protocol);
    CHECK((v - ref).norm() / ref.norm() < 1e-8);
  }
}

TEST_CASE("reciprocity: swapping drive and measurement pair preserves V") {
  const Mesh mesh = build_mesh(16);
  const Protocol protocol = make_protocol(3);
  for (const ConductivityImage& sigma :
       {ConductivityImage(ConductivityImage::Constant(16, 16, 1.0)), random_sigma(16, 7)}) {
    const VoltageFrame v = solve_forward(mesh, sigma, protocol);
    for (int d = 0; d < 16; ++d) {
      for (const auto& [m0, m1] : protocol.meas_pairs[static_cast<std::size_t>(d)]) {
        const int forward = protocol.flat_index(d, m0);
        const int swapped = protocol.flat_index(m0, d);
        REQUIRE(forward >= 0);
        REQUIRE(swapped >= 0);
        CHECK(std::abs(v[forward] - v[swapped]) / std::max(std::abs(v[forward]), 1e-12) < 1e-8);
      }
    }
  }
}

TEST_CASE("gauge invariance: differential voltages ignore the ground choice") {
  for (int n : {8, 16}) {
    const Mesh mesh = build_mesh(n);
    const Protocol protocol = make_protocol(n == 8 ? 1 : 3);
    const ConductivityImage sigma = random_sigma(n, 11);
    const VoltageFrame v0 = solve_forward(mesh, sigma, protocol, 0);
    const VoltageFrame v1 = solve_forward(mesh, sigma, protocol, mesh.node_id(n / 2, n / 2));
    const VoltageFrame v2 = solve_forward(mesh, sigma, protocol, mesh.node_count() - 1);
    CHECK((v0 - v1).norm() / v0.norm() < 1e-10);
    CHECK((v0 - v2).norm() / v0.norm() < 1e-10);
  }
}

TEST_CASE("rotation equivariance: 90 degrees shifts indices by 4") {
  const int n = 16;
  const Mesh mesh = build_mesh(n);
  const Protocol protocol = make_protocol(3);
  const ConductivityImage sigma = random_sigma(n, 23);

  ConductivityImage rotated(n, n);  // rotated(r,c) = sigma(n-1-c, r), 90 deg ccw
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) rotated(r, c) = sigma(n - 1 - c, r);

  const VoltageFrame v = solve_forward(mesh, sigma, protocol);
  const VoltageFrame vr = solve_forward(mesh, rotated, protocol);
  for (int d = 0; d < 16; ++d) {
    for (const auto& [m0, m1] : protocol.meas_pairs[static_cast<std::size_t>(d)]) {
      const int idx = protocol.flat_index(d, m0);
      const int src = protocol.flat_index((d + 12) % 16, (m0 + 12) % 16);
      REQUIRE(src >= 0);
      CHECK(std::abs(vr[idx] - v[src]) / std::max(std::abs(v[src]), 1e-12) < 1e-8);
    }
  }
}

TEST_CASE("monotonic scaling: V(a sigma) = V(sigma)/a") {
  const Mesh mesh = build_mesh(16);
  const Protocol protocol = make_protocol(3);
  const ConductivityImage sigma = random_sigma(16, 5);
  const VoltageFrame v = solve_forward(mesh, sigma, protocol);
  for (double alpha : {0.5, 2.0, 7.25}) {
    const VoltageFrame va = solve_forward(mesh, ConductivityImage(alpha * sigma), protocol);
    CHECK((va - v / alpha).norm() / (v / alpha).norm() < 1e-10);
  }
}

TEST_CASE("solver errors") {
  const Mesh mesh = build_mesh(16);
  const Protocol protocol = make_protocol(3);
  ConductivityImage sigma = ConductivityImage::Constant(16, 16, 1.0);
  sigma(3, 4) = 0.0;
  CHECK_THROWS_AS(solve_forward(mesh, sigma, protocol), SolverError);
  sigma(3, 4) = -1.0;
  CHECK_THROWS_AS(solve_forward(mesh, sigma, protocol), SolverError);
  CHECK_THROWS_AS(solve_forward(mesh, ConductivityImage::Constant(8, 8, 1.0), protocol),
                  ValueError);
}

TEST_CASE("jacobian matches forward differences") {
  const int n = 16;
  const Mesh mesh = build_mesh(n);
  const Protocol protocol = make_protocol(3);
  const ConductivityImage sigma0 = ConductivityImage::Constant(n, n, 1.0);
  const SensitivityMatrix J = compute_jacobian(mesh, sigma0, protocol);
  const VoltageFrame v0 = solve_forward(mesh, sigma0, protocol);

  Rng rng(99);
  const double delta = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const int r = static_cast<int>(rng.uniform_int(0, n - 1));
    const int c = static_cast<int>(rng.uniform_int(0, n - 1));
    ConductivityImage sigma = sigma0;
    sigma(r, c) += delta;
    const VoltageFrame fd = (solve_forward(mesh, sigma, protocol) - v0) / delta;
    const Eigen::VectorXd col = J.entries.col(r * n + c);
    const double rel = (fd - col).lpNorm<Eigen::Infinity>() / col.lpNorm<Eigen::Infinity>();
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("jacobian uniform perturbation reproduces the scaling law") {
  const int n = 16;
  const Mesh mesh = build_mesh(n);
  const Protocol protocol = make_protocol(3);
  const ConductivityImage sigma0 = ConductivityImage::Constant(n, n, 1.0);
  const SensitivityMatrix J = compute_jacobian(mesh, sigma0, protocol);
  const VoltageFrame v0 = solve_forward(mesh, sigma0, protocol);

  const double c = 1e-5;
  const VoltageFrame predicted = J.entries * Eigen::VectorXd::Constant(n * n, c);
  const VoltageFrame expected = -c * v0;  // first order of V(sigma)/(1+c)
  CHECK((predicted - expected).norm() / expected.norm() < 1e-3);
}

TEST_CASE("jacobian columns permute under the mesh rotation symmetry") {
  const int n = 16;
  const Mesh mesh = build_mesh(n);
  const Protocol protocol = make_protocol(3);
  const SensitivityMatrix J =
      compute_jacobian(mesh, ConductivityImage::Constant(n, n, 1.0), protocol);

  // Element (r,c) maps to (c, n-1-r) under the same rotation used for images;
  // rows permute by the +4 index shift.
  const double tol = 1e-9 * J.entries.cwiseAbs().maxCoeff();
  Rng rng(3);
  for (int trial = 0; trial < 6; ++trial) {
    const int r = static_cast<int>(rng.uniform_int(0, n - 1));
    const int c = static_cast<int>(rng.uniform_int(0, n - 1));
    const int e = r * n + c;
    const int e_rot = c * n + (n - 1 - r);
    for (int d = 0; d < 16; ++d) {
      for (const auto& [m0, m1] : protocol.meas_pairs[static_cast<std::size_t>(d)]) {
        const int idx = protocol.flat_index(d, m0);
        const int src = protocol.flat_index((d + 12) % 16, (m0 + 12) % 16);
        CHECK(std::abs(J.entries(idx, e_rot) - J.entries(src, e)) < tol);
      }
    }
  }
}

TEST_CASE("jacobian row sums equal -V at homogeneous baseline") {
  const int n = 16;
  const Mesh mesh = build_mesh(n);
  const Protocol protocol = make_protocol(3);
  const SensitivityMatrix J =
      compute_jacobian(mesh, ConductivityImage::Constant(n, n, 1.0), protocol);
  const VoltageFrame v0 = solve_forward(mesh, ConductivityImage::Constant(n, n, 1.0), protocol);
  const VoltageFrame sums = J.entries.rowwise().sum();
  CHECK((sums + v0).norm() / v0.norm() < 1e-8);
}
