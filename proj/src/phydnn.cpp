#include "eitkit/phydnn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "eitkit/metrics.hpp"

namespace eitkit {

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("TrainHistory: cannot write " + path.string());
  os << "epoch,l_data_train,l_data_val,l_phy_train,l_phy_val\n";
  os.precision(12);
  for (std::size_t e = 0; e < l_data_train.size(); ++e)
    os << (e + 1) << "," << l_data_train[e] << "," << l_data_val[e] << "," << l_phy_train[e] << ","
       << l_phy_val[e] << "\n";
}

std::vector<double> physics_loss_gap(const std::vector<double>& dnn,
                                     const std::vector<double>& phydnn) {
  if (dnn.size() != phydnn.size())
    throw ValueError("physics_loss_gap: series lengths differ");
  std::vector<double> gap(dnn.size());
  for (std::size_t i = 0; i < dnn.size(); ++i)
    gap[i] = (dnn[i] - phydnn[i]) / std::max(dnn[i], 1e-12) * 100.0;
  return gap;
}

namespace {

ad::MatrixRM<float> normalize_frames(const ReconNet<float>& net,
                                     const std::vector<VoltageFrame>& frames, std::size_t begin,
                                     std::size_t end) {
  const auto m = net.v0.size();
  ad::MatrixRM<float> in(static_cast<Eigen::Index>(end - begin), m);
  for (std::size_t i = begin; i < end; ++i) {
    const VoltageFrame& v = frames[i];
    if (v.size() != m)
      throw ValueError("reconstruct: frame has " + std::to_string(v.size()) +
                       " entries, expected " + std::to_string(m));
    for (Eigen::Index k = 0; k < m; ++k)
      in(static_cast<Eigen::Index>(i - begin), k) =
          static_cast<float>((v[k] - net.v0[k]) / (std::abs(net.v0[k]) + 1e-9));
  }
  return in;
}

std::vector<ConductivityImage> run_batch(const ReconNet<float>& net,
                                         const ad::MatrixRM<float>& in) {
  const int B = static_cast<int>(in.rows());
  const int n = net.grid_n;
  ad::Tensor<float> input(ad::Shape::of({B, static_cast<int>(in.cols())}));
  Eigen::Map<ad::MatrixRM<float>>(input.v.data(), B, in.cols()) = in;
  ad::Tape<float> tape;
  const ad::Tensor<float>& out = ad::forward_eval(net.g, net.params, input, tape);
  std::vector<ConductivityImage> images(static_cast<std::size_t>(B));
  for (int s = 0; s < B; ++s) {
    images[static_cast<std::size_t>(s)].resize(n, n);
    const float* p = out.v.data() + static_cast<std::ptrdiff_t>(s) * n * n;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        images[static_cast<std::size_t>(s)](r, c) = static_cast<double>(p[r * n + c]);
  }
  return images;
}

}  // namespace

ReconResult reconstruct(const ReconNet<float>& net, const VoltageFrame& v_meas) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<VoltageFrame> one{v_meas};
  auto images = run_batch(net, normalize_frames(net, one, 0, 1));
  const auto t1 = std::chrono::steady_clock::now();
  ReconResult result;
  result.image = std::move(images[0]);
  result.seconds = std::chrono::duration<double>(t1 - t0).count();
  return result;
}

std::vector<ConductivityImage> reconstruct_batch(const ReconNet<float>& net,
                                                 const std::vector<VoltageFrame>& frames,
                                                 int batch) {
  std::vector<ConductivityImage> out;
  out.reserve(frames.size());
  for (std::size_t begin = 0; begin < frames.size(); begin += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(frames.size(), begin + static_cast<std::size_t>(batch));
    auto images = run_batch(net, normalize_frames(net, frames, begin, end));
    for (auto& img : images) out.push_back(std::move(img));
  }
  return out;
}

std::vector<double> log_spaced(double exp_lo, double exp_hi, int count) {
  if (count < 1) throw ValueError("log_spaced: count must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(count));
  if (count == 1) {
    out[0] = std::pow(10.0, exp_lo);
    return out;
  }
  for (int i = 0; i < count; ++i)
    out[static_cast<std::size_t>(i)] =
        std::pow(10.0, exp_lo + (exp_hi - exp_lo) * i / static_cast<double>(count - 1));
  return out;
}

GridSearchResult grid_search_beta(const std::vector<double>& betas, const Dataset& train,
                                  const Dataset& test, const TrainConfig& base,
                                  const ForwardNet<float>& surrogate) {
  if (betas.empty()) throw ValueError("grid_search_beta: beta list is empty");
  for (double b : betas)
    if (!(b >= 0.0)) throw ValueError("grid_search_beta: betas must be >= 0");

  GridSearchResult result;
  result.table.reserve(betas.size());
  double best = -std::numeric_limits<double>::infinity();

  std::vector<VoltageFrame> test_frames(test.voltages.begin(), test.voltages.end());

  for (double beta : betas) {
    TrainConfig cfg = base;
    cfg.beta = beta;
    ReconNet<float> net =
        build_recon_net<float>(train.grid_n, static_cast<int>(surrogate.v0.size()), 0, cfg.seed);
    net.skip = train.skip;
    net.v0 = surrogate.v0.cast<double>();
    try {
      train_recon(net, train, cfg, surrogate);
    } catch (const Error& e) {
      throw Error("grid_search_beta: beta=" + std::to_string(beta) + ": " + e.what());
    }

    const auto images = reconstruct_batch(net, test_frames);
    std::vector<MetricsReport> reports;
    reports.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i)
      reports.push_back(evaluate_pair(images[i], test.sigmas[i]));
    const double score = summarize(reports).mean.score_s;
    result.table.push_back({beta, score});
    if (score > best) {
      best = score;
      result.best_beta = beta;
      result.best_model = std::move(net);
    }
  }
  return result;
}

void save_recon_net(const std::filesystem::path& path, const ReconNet<float>& net,
                    const TrainConfig& cfg) {
  NamedTensors entries;
  entries.emplace_back("grid_n", TensorData::scalar(net.grid_n));
  entries.emplace_back("depth", TensorData::scalar(net.depth));
  entries.emplace_back("skip", TensorData::scalar(net.skip));
  entries.emplace_back("measurements", TensorData::scalar(static_cast<double>(net.v0.size())));
  entries.emplace_back("alpha", TensorData::scalar(cfg.alpha));
  entries.emplace_back("beta", TensorData::scalar(cfg.beta));
  entries.emplace_back("v0", TensorData::from_vector(net.v0));
  for (std::size_t slot = 0; slot < net.g.params().size(); ++slot) {
    const auto& [name, shape] = net.g.params()[slot];
    std::vector<std::uint64_t> dims;
    for (int i = 0; i < shape.rank; ++i)
      dims.push_back(static_cast<std::uint64_t>(shape.d[static_cast<std::size_t>(i)]));
    const auto& v = net.params[static_cast<int>(slot)].v;
    entries.emplace_back("param." + name,
                         TensorData::from_f32(std::move(dims),
                                              std::vector<float>(v.data(), v.data() + v.size())));
  }
  write_archive(path, entries);
}

ReconNet<float> load_recon_net(const std::filesystem::path& path) {
  const NamedTensors entries = read_archive(path);
  const int grid_n = static_cast<int>(archive_get(entries, "grid_n").as_scalar());
  const int depth = static_cast<int>(archive_get(entries, "depth").as_scalar());
  const int m = static_cast<int>(archive_get(entries, "measurements").as_scalar());

  ReconNet<float> net = build_recon_net<float>(grid_n, m, depth);
  net.skip = static_cast<int>(archive_get(entries, "skip").as_scalar());
  net.v0 = archive_get(entries, "v0").as_vector();
  for (std::size_t slot = 0; slot < net.g.params().size(); ++slot) {
    const auto& [name, shape] = net.g.params()[slot];
    const TensorData& t = archive_get(entries, "param." + name);
    if (t.element_count() != static_cast<std::uint64_t>(shape.count()))
      throw ValueError("load_recon_net: parameter " + name + " has wrong size");
    auto& dst = net.params[static_cast<int>(slot)].v;
    for (Eigen::Index i = 0; i < dst.size(); ++i) dst[i] = t.f32[static_cast<std::size_t>(i)];
  }
  return net;
}

}  // namespace eitkit
