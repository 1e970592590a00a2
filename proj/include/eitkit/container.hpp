#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "eitkit/common.hpp"

namespace eitkit {

// "EITD" container: magic(4) version(u8=1) dtype(u8) rank(u8) pad(u8),
// rank x u64 dims, then row-major payload. Everything little-endian.

enum class Dtype : std::uint8_t { f32 = 1, f64 = 2 };

class ContainerError : public Error {
 public:
  enum class Kind { io, magic, version, dtype, truncated, dim_overflow, missing_entry };

  ContainerError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct TensorData {
  Dtype dtype = Dtype::f32;
  std::vector<std::uint64_t> dims;
  std::vector<float> f32;
  std::vector<double> f64;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  static TensorData from_f32(std::vector<std::uint64_t> dims, std::vector<float> data);
  static TensorData from_f64(std::vector<std::uint64_t> dims, std::vector<double> data);
  static TensorData from_matrix(const Eigen::MatrixXd& m);            // dims {rows, cols}, f64
  static TensorData from_vector(const Eigen::VectorXd& v);            // dims {n}, f64
  static TensorData scalar(double v);                                  // dims {}, f64

  Eigen::MatrixXd as_matrix() const;  // rank-2 view, any dtype
  Eigen::VectorXd as_vector() const;  // rank-0/1 view
  double as_scalar() const;
};

void write_container(std::ostream& os, const TensorData& t);
TensorData read_container(std::istream& is);
void write_container(const std::filesystem::path& path, const TensorData& t);
TensorData read_container(const std::filesystem::path& path);

/// Ordered list of (name, tensor) records: u32 count, then for each record a
/// u16 name length, the UTF-8 name, and an inline container.
using NamedTensors = std::vector<std::pair<std::string, TensorData>>;

void write_archive(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors read_archive(const std::filesystem::path& path);

const TensorData& archive_get(const NamedTensors& entries, const std::string& name);
const TensorData* archive_find(const NamedTensors& entries, const std::string& name);

}  // namespace eitkit
