#include "eitkit/surrogate.hpp"

namespace eitkit {

namespace {

TensorData f32_tensor(const float* data, std::vector<std::uint64_t> dims) {
  std::uint64_t count = 1;
  for (auto d : dims) count *= d;
  return TensorData::from_f32(std::move(dims),
                              std::vector<float>(data, data + static_cast<std::size_t>(count)));
}

}  // namespace

void save_forward_net(const std::filesystem::path& path, const ForwardNet<float>& net) {
  NamedTensors entries;
  entries.emplace_back("grid_n", TensorData::scalar(net.grid_n));
  entries.emplace_back("skip", TensorData::scalar(net.skip));
  {
    // Eigen default storage is column-major; serialize explicitly row-major.
    std::vector<float> j(static_cast<std::size_t>(net.J.size()));
    for (Eigen::Index r = 0; r < net.J.rows(); ++r)
      for (Eigen::Index c = 0; c < net.J.cols(); ++c)
        j[static_cast<std::size_t>(r * net.J.cols() + c)] = net.J(r, c);
    entries.emplace_back("J", TensorData::from_f32({static_cast<std::uint64_t>(net.J.rows()),
                                                    static_cast<std::uint64_t>(net.J.cols())},
                                                   std::move(j)));
  }
  entries.emplace_back("v0", TensorData::from_vector(net.v0.cast<double>()));
  entries.emplace_back("sigma0", TensorData::from_vector(net.sigma0.cast<double>()));
  for (std::size_t slot = 0; slot < net.cnn.params().size(); ++slot) {
    const auto& [name, shape] = net.cnn.params()[slot];
    std::vector<std::uint64_t> dims;
    for (int i = 0; i < shape.rank; ++i)
      dims.push_back(static_cast<std::uint64_t>(shape.d[static_cast<std::size_t>(i)]));
    entries.emplace_back("param." + name, f32_tensor(net.params[static_cast<int>(slot)].v.data(),
                                                     std::move(dims)));
  }
  write_archive(path, entries);
}

ForwardNet<float> load_forward_net(const std::filesystem::path& path) {
  const NamedTensors entries = read_archive(path);
  const int grid_n = static_cast<int>(archive_get(entries, "grid_n").as_scalar());
  const int skip = static_cast<int>(archive_get(entries, "skip").as_scalar());

  SensitivityMatrix J;
  J.entries = archive_get(entries, "J").as_matrix();
  const Eigen::VectorXd sigma0 = archive_get(entries, "sigma0").as_vector();
  J.baseline.resize(grid_n, grid_n);
  for (int r = 0; r < grid_n; ++r)
    for (int c = 0; c < grid_n; ++c) J.baseline(r, c) = sigma0[r * grid_n + c];
  const VoltageFrame v0 = archive_get(entries, "v0").as_vector();

  ForwardNet<float> net = build_forward_net<float>(J, v0, grid_n);
  net.skip = skip;
  for (std::size_t slot = 0; slot < net.cnn.params().size(); ++slot) {
    const auto& [name, shape] = net.cnn.params()[slot];
    const TensorData& t = archive_get(entries, "param." + name);
    if (t.element_count() != static_cast<std::uint64_t>(shape.count()))
      throw ValueError("load_forward_net: parameter " + name + " has wrong size");
    auto& dst = net.params[static_cast<int>(slot)].v;
    for (Eigen::Index i = 0; i < dst.size(); ++i) dst[i] = t.f32[static_cast<std::size_t>(i)];
  }
  return net;
}

}  // namespace eitkit
