#include "eitkit/phantom.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "eitkit/container.hpp"

namespace eitkit {

namespace {

constexpr int kMaxAttempts = 1000;

Eigen::Vector2d rotate(const Eigen::Vector2d& p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x() - s * p.y(), c * p.y() + s * p.x()};
}

/// Polygon vertices in world coordinates, counterclockwise.
std::vector<Eigen::Vector2d> polygon_vertices(const ShapeSpec& spec) {
  std::vector<Eigen::Vector2d> local;
  const double hw = spec.width / 2.0, hh = spec.height / 2.0;
  switch (spec.cls) {
    case ShapeClass::rectangle:
      local = {{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}};
      break;
    case ShapeClass::isosceles_triangle:
      // centroid at the origin, apex up
      local = {{-hw, -spec.height / 3.0}, {hw, -spec.height / 3.0}, {0.0, 2.0 * spec.height / 3.0}};
      break;
    case ShapeClass::l_shape: {
      const double nw = spec.notch_fx * spec.width;
      const double nh = spec.notch_fy * spec.height;
      local = {{-hw, -hh}, {hw, -hh},      {hw, hh - nh},
               {hw - nw, hh - nh},         {hw - nw, hh}, {-hw, hh}};
      break;
    }
    default:
      throw ValueError("polygon_vertices: not a polygon class");
  }
  std::vector<Eigen::Vector2d> world;
  world.reserve(local.size());
  for (const auto& p : local) world.push_back(spec.center1 + rotate(p, spec.angle));
  return world;
}

bool point_in_polygon(const std::vector<Eigen::Vector2d>& poly, double x, double y) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y() > y) != (b.y() > y)) {
      const double xi = a.x() + (y - a.y()) / (b.y() - a.y()) * (b.x() - a.x());
      if (x < xi) inside = !inside;
    }
  }
  return inside;
}

bool fits_with_margin(const ShapeSpec& spec, double margin) {
  const double lo = margin, hi = 1.0 - margin;
  auto box_ok = [&](const Eigen::Vector2d& c, double r) {
    return c.x() - r >= lo && c.x() + r <= hi && c.y() - r >= lo && c.y() + r <= hi;
  };
  switch (spec.cls) {
    case ShapeClass::single_circle:
      return box_ok(spec.center1, spec.r1);
    case ShapeClass::concentric_ring:
      return box_ok(spec.center1, spec.r1);
    case ShapeClass::double_circle:
      return box_ok(spec.center1, spec.r1) && box_ok(spec.center2, spec.r2);
    default: {
      for (const auto& p : polygon_vertices(spec))
        if (p.x() < lo || p.x() > hi || p.y() < lo || p.y() > hi) return false;
      return true;
    }
  }
}

}  // namespace

const char* shape_class_name(ShapeClass c) {
  switch (c) {
    case ShapeClass::single_circle: return "single_circle";
    case ShapeClass::double_circle: return "double_circle";
    case ShapeClass::l_shape: return "l_shape";
    case ShapeClass::isosceles_triangle: return "isosceles_triangle";
    case ShapeClass::rectangle: return "rectangle";
    case ShapeClass::concentric_ring: return "concentric_ring";
  }
  return "unknown";
}

bool shape_contains(const ShapeSpec& spec, double x, double y) {
  switch (spec.cls) {
    case ShapeClass::single_circle:
      return (Eigen::Vector2d(x, y) - spec.center1).norm() <= spec.r1;
    case ShapeClass::double_circle:
      return (Eigen::Vector2d(x, y) - spec.center1).norm() <= spec.r1 ||
             (Eigen::Vector2d(x, y) - spec.center2).norm() <= spec.r2;
    case ShapeClass::concentric_ring: {
      const double d = (Eigen::Vector2d(x, y) - spec.center1).norm();
      return d <= spec.r1 && d >= spec.r2;
    }
    default:
      return point_in_polygon(polygon_vertices(spec), x, y);
  }
}

ConductivityImage rasterize(const ShapeSpec& spec, int grid_n) {
  ConductivityImage sigma = ConductivityImage::Constant(grid_n, grid_n, 1.0);
  for (int r = 0; r < grid_n; ++r) {
    const double y = (r + 0.5) / grid_n;
    for (int c = 0; c < grid_n; ++c) {
      const double x = (c + 0.5) / grid_n;
      if (shape_contains(spec, x, y)) sigma(r, c) = spec.inclusion_conductivity;
    }
  }
  return sigma;
}

ShapeSpec sample_shape(Rng& rng, ShapeClass cls, int grid_n) {
  if (grid_n < 16) throw ValueError("sample_shape: grid_n must be >= 16");
  const double margin = 2.0 / grid_n;
  const double px = 1.0 / grid_n;

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    ShapeSpec spec;
    spec.cls = cls;
    spec.inclusion_conductivity = rng.uniform(0.1, 0.9);
    const double size = rng.uniform(0.1, 0.3);

    switch (cls) {
      case ShapeClass::single_circle:
        spec.r1 = size / 2.0;
        spec.center1 = {rng.uniform(margin + spec.r1, 1.0 - margin - spec.r1),
                        rng.uniform(margin + spec.r1, 1.0 - margin - spec.r1)};
        break;
      case ShapeClass::double_circle: {
        spec.r1 = size / 2.0;
        spec.r2 = rng.uniform(0.1, 0.3) / 2.0;
        spec.center1 = {rng.uniform(margin + spec.r1, 1.0 - margin - spec.r1),
                        rng.uniform(margin + spec.r1, 1.0 - margin - spec.r1)};
        spec.center2 = {rng.uniform(margin + spec.r2, 1.0 - margin - spec.r2),
                        rng.uniform(margin + spec.r2, 1.0 - margin - spec.r2)};
        if ((spec.center1 - spec.center2).norm() < spec.r1 + spec.r2 + 2.0 * px) continue;
        break;
      }
      case ShapeClass::concentric_ring:
        spec.r1 = size / 2.0;
        spec.r2 = spec.r1 * rng.uniform(0.4, 0.7);
        spec.center1 = {rng.uniform(margin + spec.r1, 1.0 - margin - spec.r1),
                        rng.uniform(margin + spec.r1, 1.0 - margin - spec.r1)};
        break;
      case ShapeClass::rectangle:
      case ShapeClass::isosceles_triangle:
      case ShapeClass::l_shape: {
        spec.width = size;
        spec.height = rng.uniform(0.1, 0.3);
        spec.angle = rng.uniform(0.0, 2.0 * M_PI);
        if (cls == ShapeClass::l_shape) {
          spec.notch_fx = rng.uniform(0.4, 0.7);
          spec.notch_fy = rng.uniform(0.4, 0.7);
        }
        const double reach = std::hypot(spec.width, spec.height);  // conservative bound
        const double lo = margin + reach / 2.0, hi = 1.0 - margin - reach / 2.0;
        if (lo >= hi) continue;
        spec.center1 = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
        break;
      }
    }

    if (!fits_with_margin(spec, margin)) continue;
    // Piecewise-constant ground truth must actually mark pixels.
    bool any = false;
    for (int r = 0; r < grid_n && !any; ++r)
      for (int c = 0; c < grid_n && !any; ++c)
        if (shape_contains(spec, (c + 0.5) / grid_n, (r + 0.5) / grid_n)) any = true;
    if (!any) continue;
    return spec;
  }
  throw GenerationError(std::string("sample_shape: no valid ") + shape_class_name(cls) +
                        " pose after " + std::to_string(kMaxAttempts) + " attempts");
}

ConductivityImage sample_phantom(Rng& rng, ShapeClass cls, int grid_n) {
  return rasterize(sample_shape(rng, cls, grid_n), grid_n);
}

VoltageFrame add_noise(const VoltageFrame& frame, double snr_db, Rng& rng) {
  if (std::isinf(snr_db) && snr_db > 0) return frame;
  if (!std::isfinite(snr_db)) throw ValueError("add_noise: snr_db must be finite or +inf");
  const double sigma =
      frame.norm() / std::sqrt(static_cast<double>(frame.size())) * std::pow(10.0, -snr_db / 20.0);
  VoltageFrame noisy = frame;
  for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy[i] += sigma * rng.normal();
  return noisy;
}

Dataset generate_dataset(const DatasetConfig& config, const Mesh& mesh, const Protocol& protocol) {
  if (config.count < 1) throw ValueError("generate_dataset: count must be >= 1");
  if (config.split != "train" && config.split != "test")
    throw ValueError("generate_dataset: split must be 'train' or 'test'");

  Dataset ds;
  ds.grid_n = mesh.grid_n;
  ds.skip = protocol.skip;
  ds.seed = config.seed;
  ds.split = config.split;
  ds.sigmas.resize(static_cast<std::size_t>(config.count));
  ds.voltages.resize(static_cast<std::size_t>(config.count));
  ds.noise_flags.assign(static_cast<std::size_t>(config.count), 0);
  ds.snr_db.assign(static_cast<std::size_t>(config.count), -1.0);

  const std::uint64_t split_salt = config.split == "train" ? 1 : 2;
  const double frac = std::clamp(config.noise_fraction, 0.0, 1.0);

  parallel_for(0, config.count, config.threads, [&](int i) {
    try {
      const auto idx = static_cast<std::size_t>(i);
      Rng shape_rng(Rng::derive(config.seed, split_salt, 2 * static_cast<std::uint64_t>(i)));
      Rng noise_rng(Rng::derive(config.seed, split_salt, 2 * static_cast<std::uint64_t>(i) + 1));
      const auto cls = static_cast<ShapeClass>(i % kNumShapeClasses);
      ds.sigmas[idx] = sample_phantom(shape_rng, cls, mesh.grid_n);
      VoltageFrame v = solve_forward(mesh, ds.sigmas[idx], protocol);
      const bool noisy =
          std::floor((i + 1) * frac) > std::floor(i * frac);  // exact-count interleaving
      if (noisy) {
        const double snr = noise_rng.uniform(config.snr_lo_db, config.snr_hi_db);
        v = add_noise(v, snr, noise_rng);
        ds.noise_flags[idx] = 1;
        ds.snr_db[idx] = snr;
      }
      ds.voltages[idx] = std::move(v);
    } catch (const Error& e) {
      throw Error("generate_dataset: sample " + std::to_string(i) + ": " + e.what());
    }
  });
  return ds;
}

namespace {

std::string split_file(const std::string& split, const char* what) {
  return split + "_" + what + ".eitd";
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  const auto count = static_cast<std::uint64_t>(ds.size());
  const auto n = static_cast<std::uint64_t>(ds.grid_n);
  const auto m = static_cast<std::uint64_t>(ds.size() > 0 ? ds.voltages[0].size() : 0);

  std::vector<float> sig(static_cast<std::size_t>(count * n * n));
  std::vector<float> vol(static_cast<std::size_t>(count * m));
  std::vector<float> flags(static_cast<std::size_t>(count));
  std::vector<float> snr(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < static_cast<std::size_t>(count); ++i) {
    const auto& s = ds.sigmas[i];
    for (std::uint64_t r = 0; r < n; ++r)
      for (std::uint64_t c = 0; c < n; ++c)
        sig[i * n * n + r * n + c] = static_cast<float>(s(static_cast<Eigen::Index>(r),
                                                          static_cast<Eigen::Index>(c)));
    for (std::uint64_t k = 0; k < m; ++k)
      vol[i * m + k] = static_cast<float>(ds.voltages[i][static_cast<Eigen::Index>(k)]);
    flags[i] = ds.noise_flags[i] ? 1.0f : 0.0f;
    snr[i] = static_cast<float>(ds.snr_db[i]);
  }
  write_container(dir / split_file(ds.split, "sigmas"), TensorData::from_f32({count, n, n}, std::move(sig)));
  write_container(dir / split_file(ds.split, "voltages"), TensorData::from_f32({count, m}, std::move(vol)));
  write_container(dir / split_file(ds.split, "noise_flags"), TensorData::from_f32({count}, std::move(flags)));
  write_container(dir / split_file(ds.split, "snr_db"), TensorData::from_f32({count}, std::move(snr)));

  NamedTensors meta;
  meta.emplace_back("grid_n", TensorData::scalar(ds.grid_n));
  meta.emplace_back("skip", TensorData::scalar(ds.skip));
  meta.emplace_back("seed", TensorData::scalar(static_cast<double>(ds.seed)));
  meta.emplace_back("count", TensorData::scalar(static_cast<double>(count)));
  write_archive(dir / (ds.split + "_meta.eitd"), meta);
}

Dataset load_dataset(const std::filesystem::path& dir, const std::string& split) {
  const NamedTensors meta = read_archive(dir / (split + "_meta.eitd"));
  Dataset ds;
  ds.grid_n = static_cast<int>(archive_get(meta, "grid_n").as_scalar());
  ds.skip = static_cast<int>(archive_get(meta, "skip").as_scalar());
  ds.seed = static_cast<std::uint64_t>(archive_get(meta, "seed").as_scalar());
  ds.split = split;

  const TensorData sig = read_container(dir / split_file(split, "sigmas"));
  const TensorData vol = read_container(dir / split_file(split, "voltages"));
  const TensorData flags = read_container(dir / split_file(split, "noise_flags"));
  const TensorData snr = read_container(dir / split_file(split, "snr_db"));
  if (sig.dims.size() != 3 || vol.dims.size() != 2)
    throw ValueError("load_dataset: unexpected tensor ranks in " + dir.string());
  const auto count = static_cast<std::size_t>(sig.dims[0]);
  const auto n = static_cast<Eigen::Index>(sig.dims[1]);
  const auto m = static_cast<Eigen::Index>(vol.dims[1]);

  ds.sigmas.resize(count);
  ds.voltages.resize(count);
  ds.noise_flags.resize(count);
  ds.snr_db.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    ds.sigmas[i].resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < n; ++c)
        ds.sigmas[i](r, c) = static_cast<double>(
            sig.f32[i * static_cast<std::size_t>(n * n) + static_cast<std::size_t>(r * n + c)]);
    ds.voltages[i].resize(m);
    for (Eigen::Index k = 0; k < m; ++k)
      ds.voltages[i][k] =
          static_cast<double>(vol.f32[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(k)]);
    ds.noise_flags[i] = flags.f32[i] != 0.0f ? 1 : 0;
    ds.snr_db[i] = static_cast<double>(snr.f32[i]);
  }
  return ds;
}

void save_baseline(const std::filesystem::path& dir, const VoltageFrame& v0) {
  std::filesystem::create_directories(dir);
  write_container(dir / "v0.eitd", TensorData::from_vector(v0));
}

VoltageFrame load_baseline(const std::filesystem::path& dir) {
  return read_container(dir / "v0.eitd").as_vector();
}

}  // namespace eitkit
