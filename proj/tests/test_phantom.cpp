#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "eitkit/container.hpp"
#include "eitkit/phantom.hpp"

using namespace eitkit;

namespace {

std::filesystem::path temp_dir(const char* tag) {
  auto dir = std::filesystem::temp_directory_path() / (std::string("eitkit_test_") + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("circle rasterization pixel count tracks the area") {
  ShapeSpec spec;
  spec.cls = ShapeClass::single_circle;
  spec.center1 = {0.5, 0.5};
  spec.r1 = 0.15;
  spec.inclusion_conductivity = 0.5;
  const ConductivityImage img = rasterize(spec, 32);
  int inside = 0;
  // exact pixel-center enumeration as the oracle
  int expected = 0;
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) {
      const double x = (c + 0.5) / 32.0, y = (r + 0.5) / 32.0;
      if (std::hypot(x - 0.5, y - 0.5) <= 0.15) ++expected;
      if (img(r, c) == 0.5) ++inside;
    }
  CHECK(inside == expected);
  // area estimate pi*(0.15*32)^2 ~ 72, allow the boundary-pixel band
  CHECK(std::abs(inside - M_PI * 4.8 * 4.8) <= 12.0);
}

TEST_CASE("phantom value range") {
  for (int k = 0; k < kNumShapeClasses; ++k) {
    Rng rng(1000 + static_cast<std::uint64_t>(k));
    const ConductivityImage img = sample_phantom(rng, static_cast<ShapeClass>(k), 32);
    CHECK(img.maxCoeff() == 1.0);
    CHECK(img.minCoeff() >= 0.1);
    CHECK(img.minCoeff() <= 0.9);
  }
}

TEST_CASE("concentric ring keeps the inner disc at background") {
  ShapeSpec spec;
  spec.cls = ShapeClass::concentric_ring;
  spec.center1 = {0.5, 0.5};
  spec.r1 = 0.3;
  spec.r2 = 0.15;
  spec.inclusion_conductivity = 0.4;
  const ConductivityImage img = rasterize(spec, 64);
  // dead center is inside the hole
  CHECK(img(32, 32) == 1.0);
  // a point on the annulus midline is marked
  const int c = static_cast<int>((0.5 + 0.225) * 64);
  CHECK(img(32, c) == 0.4);
}

TEST_CASE("double circles never overlap") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const ShapeSpec spec = sample_shape(rng, ShapeClass::double_circle, 32);
    CHECK((spec.center1 - spec.center2).norm() >= spec.r1 + spec.r2 + 2.0 / 32.0);
  }
}

TEST_CASE("shapes respect the two-pixel margin") {
  for (int k = 0; k < kNumShapeClasses; ++k) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed * 7 + static_cast<std::uint64_t>(k));
      const ConductivityImage img = sample_phantom(rng, static_cast<ShapeClass>(k), 32);
      for (int i = 0; i < 32; ++i) {
        CHECK(img(0, i) == 1.0);
        CHECK(img(31, i) == 1.0);
        CHECK(img(i, 0) == 1.0);
        CHECK(img(i, 31) == 1.0);
      }
    }
  }
}

TEST_CASE("add_noise respects the SNR law") {
  Rng rng(77);
  VoltageFrame frame(208);
  for (int i = 0; i < 208; ++i) frame[i] = std::sin(0.1 * i) * 0.01 + 0.02;

  SUBCASE("infinite SNR is the identity") {
    const VoltageFrame out = add_noise(frame, std::numeric_limits<double>::infinity(), rng);
    CHECK((out - frame).norm() == 0.0);
  }

  SUBCASE("60 dB sets the elementwise std") {
    // std of the perturbation should be ||V||/sqrt(208) * 1e-3
    const double want = frame.norm() / std::sqrt(208.0) * 1e-3;
    double acc = 0.0;
    const int reps = 400;
    for (int k = 0; k < reps; ++k) {
      const VoltageFrame out = add_noise(frame, 60.0, rng);
      acc += (out - frame).squaredNorm() / 208.0;
    }
    const double got = std::sqrt(acc / reps);
    CHECK(std::abs(got - want) / want < 0.05);
  }

  SUBCASE("realized SNR over 1000 draws within 1 dB") {
    double snr_acc = 0.0;
    const int reps = 1000;
    for (int k = 0; k < reps; ++k) {
      const VoltageFrame out = add_noise(frame, 30.0, rng);
      snr_acc += 10.0 * std::log10(frame.squaredNorm() / (out - frame).squaredNorm());
    }
    CHECK(std::abs(snr_acc / reps - 30.0) < 1.0);
  }
}

TEST_CASE("dataset determinism, balance, and noise policy") {
  const Mesh mesh = build_mesh(16);
  const Protocol protocol = make_protocol(3);
  DatasetConfig cfg;
  cfg.count = 36;
  cfg.seed = 99;
  cfg.split = "train";
  cfg.threads = 2;

  const Dataset a = generate_dataset(cfg, mesh, protocol);
  cfg.threads = 1;
  const Dataset b = generate_dataset(cfg, mesh, protocol);

  REQUIRE(a.size() == 36);
  for (int i = 0; i < a.size(); ++i) {
    CHECK((a.sigmas[static_cast<std::size_t>(i)] - b.sigmas[static_cast<std::size_t>(i)]).norm() ==
          0.0);
    CHECK((a.voltages[static_cast<std::size_t>(i)] - b.voltages[static_cast<std::size_t>(i)])
              .norm() == 0.0);
  }

  int noisy = 0;
  for (auto f : a.noise_flags) noisy += f;
  CHECK(noisy == 18);
  for (int i = 0; i < a.size(); ++i) {
    if (a.noise_flags[static_cast<std::size_t>(i)]) {
      CHECK(a.snr_db[static_cast<std::size_t>(i)] >= 30.0);
      CHECK(a.snr_db[static_cast<std::size_t>(i)] <= 60.0);
    } else {
      CHECK(a.snr_db[static_cast<std::size_t>(i)] == -1.0);
    }
  }

  // round-robin class assignment: 36/6 = 6 of each; spot-check determinism of
  // the class sequence through sigma equality when regenerating one sample
  DatasetConfig one = cfg;
  one.count = 7;
  const Dataset c = generate_dataset(one, mesh, protocol);
  CHECK((c.sigmas[0] - a.sigmas[0]).norm() == 0.0);
  CHECK((c.sigmas[6] - a.sigmas[6]).norm() == 0.0);
}

TEST_CASE("test split carries no noise by default policy") {
  const Mesh mesh = build_mesh(16);
  const Protocol protocol = make_protocol(3);
  DatasetConfig cfg;
  cfg.count = 10;
  cfg.seed = 5;
  cfg.split = "test";
  cfg.noise_fraction = 0.0;
  const Dataset ds = generate_dataset(cfg, mesh, protocol);
  for (auto f : ds.noise_flags) CHECK(f == 0);
}

TEST_CASE("dataset save/load round trip and byte determinism") {
  const Mesh mesh = build_mesh(16);
  const Protocol protocol = make_protocol(3);
  DatasetConfig cfg;
  cfg.count = 8;
  cfg.seed = 123;
  cfg.split = "train";

  const Dataset ds = generate_dataset(cfg, mesh, protocol);
  const auto dir1 = temp_dir("ds1");
  const auto dir2 = temp_dir("ds2");
  save_dataset(dir1, ds);
  save_dataset(dir2, generate_dataset(cfg, mesh, protocol));

  for (const char* name : {"train_sigmas.eitd", "train_voltages.eitd", "train_noise_flags.eitd",
                           "train_snr_db.eitd", "train_meta.eitd"}) {
    CHECK(slurp(dir1 / name) == slurp(dir2 / name));
  }

  const Dataset back = load_dataset(dir1, "train");
  CHECK(back.grid_n == 16);
  CHECK(back.size() == 8);
  for (int i = 0; i < 8; ++i) {
    // f32 storage: equality after the same rounding
    CHECK((back.sigmas[static_cast<std::size_t>(i)].cast<float>().cast<double>() -
           back.sigmas[static_cast<std::size_t>(i)]).norm() == 0.0);
    CHECK((back.voltages[static_cast<std::size_t>(i)] -
           ds.voltages[static_cast<std::size_t>(i)].cast<float>().cast<double>()).norm() == 0.0);
  }
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
}
