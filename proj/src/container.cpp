#include "eitkit/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace eitkit {

namespace {

constexpr char kMagic[4] = {'E', 'I', 'T', 'D'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kMaxRank = 8;

void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw ContainerError(ContainerError::Kind::io, "container: write failed");
}

void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
  put_bytes(os, b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(os, b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(os, b, 8);
}

void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw ContainerError(ContainerError::Kind::truncated,
                         std::string("container: truncated while reading ") + what);
}

std::uint16_t get_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  get_bytes(is, b, 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  get_bytes(is, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  get_bytes(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

template <class T>
void put_payload(std::ostream& os, const std::vector<T>& data) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!data.empty()) put_bytes(os, data.data(), data.size() * sizeof(T));
  } else {
    for (T v : data) {
      unsigned char b[sizeof(T)];
      std::memcpy(b, &v, sizeof(T));
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
      put_bytes(os, b, sizeof(T));
    }
  }
}

template <class T>
void get_payload(std::istream& is, std::vector<T>& data, std::uint64_t count) {
  data.resize(static_cast<std::size_t>(count));
  if (count == 0) return;
  get_bytes(is, data.data(), data.size() * sizeof(T), "payload");
  if constexpr (std::endian::native != std::endian::little) {
    for (T& v : data) {
      unsigned char b[sizeof(T)];
      std::memcpy(b, &v, sizeof(T));
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
      std::memcpy(&v, b, sizeof(T));
    }
  }
}

}  // namespace

TensorData TensorData::from_f32(std::vector<std::uint64_t> dims, std::vector<float> data) {
  TensorData t;
  t.dtype = Dtype::f32;
  t.dims = std::move(dims);
  t.f32 = std::move(data);
  if (t.element_count() != t.f32.size())
    throw ValueError("TensorData: dims do not match payload size");
  return t;
}

TensorData TensorData::from_f64(std::vector<std::uint64_t> dims, std::vector<double> data) {
  TensorData t;
  t.dtype = Dtype::f64;
  t.dims = std::move(dims);
  t.f64 = std::move(data);
  if (t.element_count() != t.f64.size())
    throw ValueError("TensorData: dims do not match payload size");
  return t;
}

TensorData TensorData::from_matrix(const Eigen::MatrixXd& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  return from_f64({static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                  std::move(data));
}

TensorData TensorData::from_vector(const Eigen::VectorXd& v) {
  return from_f64({static_cast<std::uint64_t>(v.size())},
                  std::vector<double>(v.data(), v.data() + v.size()));
}

TensorData TensorData::scalar(double v) { return from_f64({}, {v}); }

Eigen::MatrixXd TensorData::as_matrix() const {
  if (dims.size() != 2) throw ValueError("TensorData: expected rank-2 tensor");
  const auto rows = static_cast<Eigen::Index>(dims[0]);
  const auto cols = static_cast<Eigen::Index>(dims[1]);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto i = static_cast<std::size_t>(r * cols + c);
      m(r, c) = dtype == Dtype::f32 ? static_cast<double>(f32[i]) : f64[i];
    }
  return m;
}

Eigen::VectorXd TensorData::as_vector() const {
  if (dims.size() > 1) throw ValueError("TensorData: expected rank-0/1 tensor");
  const auto n = static_cast<Eigen::Index>(element_count());
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    v[i] = dtype == Dtype::f32 ? static_cast<double>(f32[static_cast<std::size_t>(i)])
                               : f64[static_cast<std::size_t>(i)];
  return v;
}

double TensorData::as_scalar() const {
  if (element_count() != 1) throw ValueError("TensorData: expected a single element");
  return dtype == Dtype::f32 ? static_cast<double>(f32[0]) : f64[0];
}

void write_container(std::ostream& os, const TensorData& t) {
  const std::uint64_t count = t.element_count();
  const std::size_t stored = t.dtype == Dtype::f32 ? t.f32.size() : t.f64.size();
  if (count != stored) throw ValueError("container: dims do not match payload size");
  if (t.dims.size() > kMaxRank) throw ValueError("container: rank exceeds 8");
  put_bytes(os, kMagic, 4);
  const std::uint8_t head[4] = {kVersion, static_cast<std::uint8_t>(t.dtype),
                                static_cast<std::uint8_t>(t.dims.size()), 0};
  put_bytes(os, head, 4);
  for (auto d : t.dims) put_u64(os, d);
  if (t.dtype == Dtype::f32)
    put_payload(os, t.f32);
  else
    put_payload(os, t.f64);
}

TensorData read_container(std::istream& is) {
  char magic[4];
  get_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw ContainerError(ContainerError::Kind::magic, "container: magic mismatch");
  std::uint8_t head[4];
  get_bytes(is, head, 4, "header");
  if (head[0] != kVersion)
    throw ContainerError(ContainerError::Kind::version,
                         "container: unsupported version " + std::to_string(head[0]));
  if (head[1] != 1 && head[1] != 2)
    throw ContainerError(ContainerError::Kind::dtype,
                         "container: unknown dtype " + std::to_string(head[1]));
  const std::size_t rank = head[2];
  if (rank > kMaxRank)
    throw ContainerError(ContainerError::Kind::dim_overflow,
                         "container: rank " + std::to_string(rank) + " exceeds limit 8");
  TensorData t;
  t.dtype = static_cast<Dtype>(head[1]);
  t.dims.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) t.dims[i] = get_u64(is, "dims");

  std::uint64_t count = 1;
  for (auto d : t.dims) {
    if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / d)
      throw ContainerError(ContainerError::Kind::dim_overflow, "container: dim product overflows");
    count *= d;
  }
  const std::uint64_t elem_size = t.dtype == Dtype::f32 ? 4 : 8;
  if (count > (std::uint64_t(1) << 40) / elem_size)
    throw ContainerError(ContainerError::Kind::dim_overflow, "container: payload too large");

  if (t.dtype == Dtype::f32)
    get_payload(is, t.f32, count);
  else
    get_payload(is, t.f64, count);
  return t;
}

void write_container(const std::filesystem::path& path, const TensorData& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ContainerError(ContainerError::Kind::io, "container: cannot open " + path.string());
  write_container(os, t);
}

TensorData read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContainerError(ContainerError::Kind::io, "container: cannot open " + path.string());
  return read_container(is);
}

void write_archive(const std::filesystem::path& path, const NamedTensors& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ContainerError(ContainerError::Kind::io, "archive: cannot open " + path.string());
  put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    if (name.size() > 0xffff) throw ValueError("archive: name too long: " + name);
    put_u16(os, static_cast<std::uint16_t>(name.size()));
    put_bytes(os, name.data(), name.size());
    write_container(os, tensor);
  }
}

NamedTensors read_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContainerError(ContainerError::Kind::io, "archive: cannot open " + path.string());
  const std::uint32_t count = get_u32(is, "archive count");
  NamedTensors entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = get_u16(is, "archive name length");
    std::string name(len, '\0');
    if (len > 0) get_bytes(is, name.data(), len, "archive name");
    entries.emplace_back(std::move(name), read_container(is));
  }
  return entries;
}

const TensorData* archive_find(const NamedTensors& entries, const std::string& name) {
  for (const auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

const TensorData& archive_get(const NamedTensors& entries, const std::string& name) {
  const TensorData* t = archive_find(entries, name);
  if (!t)
    throw ContainerError(ContainerError::Kind::missing_entry, "archive: no entry named " + name);
  return *t;
}

}  // namespace eitkit
