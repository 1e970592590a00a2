#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "eitkit/common.hpp"
#include "eitkit/fem.hpp"

namespace eitkit {

enum class ShapeClass : int {
  single_circle = 0,
  double_circle = 1,
  l_shape = 2,
  isosceles_triangle = 3,
  rectangle = 4,
  concentric_ring = 5,
};

constexpr int kNumShapeClasses = 6;

const char* shape_class_name(ShapeClass c);

/// Pose of one inclusion on the unit square. Field use depends on the class:
/// circles/rings use centers and radii, polygons use center/size/angle, the
/// L-shape additionally uses the notch fractions.
struct ShapeSpec {
  ShapeClass cls = ShapeClass::single_circle;
  Eigen::Vector2d center1{0.5, 0.5};
  Eigen::Vector2d center2{0.5, 0.5};
  double r1 = 0.1;       // circle radius / ring outer radius
  double r2 = 0.05;      // second circle radius / ring inner radius
  double width = 0.2;
  double height = 0.2;
  double angle = 0.0;    // radians
  double notch_fx = 0.5; // L-shape notch fraction of width
  double notch_fy = 0.5; // and of height
  double inclusion_conductivity = 0.5;  // S/m, in [0.1, 0.9]
};

bool shape_contains(const ShapeSpec& spec, double x, double y);

/// Background 1.0 S/m; pixels whose centers fall inside the shape take the
/// inclusion conductivity.
ConductivityImage rasterize(const ShapeSpec& spec, int grid_n);

/// Draws a random pose for `cls` fully inside the unit square with a margin
/// of two pixels, characteristic size ~ U(0.1, 0.3) of the domain width and
/// inclusion conductivity ~ U(0.1, 0.9). Throws GenerationError after 1000
/// rejected attempts.
ShapeSpec sample_shape(Rng& rng, ShapeClass cls, int grid_n);

ConductivityImage sample_phantom(Rng& rng, ShapeClass cls, int grid_n);

/// frame + g with g i.i.d. zero-mean Gaussian of std
/// ||frame||_2 / sqrt(len) * 10^(-snr_db/20); +inf disables the noise.
VoltageFrame add_noise(const VoltageFrame& frame, double snr_db, Rng& rng);

struct DatasetConfig {
  int count = 0;
  std::uint64_t seed = 0;
  std::string split = "train";   // "train" or "test"
  double noise_fraction = 0.5;   // noisy share of the split
  double snr_lo_db = 30.0;
  double snr_hi_db = 60.0;
  int threads = 1;
};

/// Paired (sigma, voltage) samples. snr_db is -1 where no noise was applied.
struct Dataset {
  int grid_n = 0;
  int skip = 3;
  std::uint64_t seed = 0;
  std::string split = "train";
  std::vector<ConductivityImage> sigmas;
  std::vector<VoltageFrame> voltages;
  std::vector<std::uint8_t> noise_flags;
  std::vector<double> snr_db;

  int size() const { return static_cast<int>(sigmas.size()); }
};

/// Shape classes round-robin over the six kinds (count/6 +- 1 balance); the
/// noisy samples are interleaved so the noisy fraction is exact to one
/// sample. Fully deterministic for a fixed seed; samples are generated on
/// per-index substreams so the thread count does not affect the result.
Dataset generate_dataset(const DatasetConfig& config, const Mesh& mesh, const Protocol& protocol);

/// Container-file persistence: <split>_sigmas/voltages/noise_flags/snr_db
/// .eitd plus a shared meta.eitd and v0.eitd in `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir, const std::string& split);
void save_baseline(const std::filesystem::path& dir, const VoltageFrame& v0);
VoltageFrame load_baseline(const std::filesystem::path& dir);

}  // namespace eitkit
