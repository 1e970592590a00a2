#pragma once

// Differentiable forward-operator network F(sigma) ~ V: a frozen linear
// physics branch (sensitivity matrix J about a baseline) blended with a CNN
// correction branch through a learnable scalar,
//   F(sigma) = gamma (V0 + J vec(sigma - sigma0)) + (1 - gamma) CNN(sigma).

#include <cstdint>
#include <filesystem>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "eitkit/autodiff.hpp"
#include "eitkit/container.hpp"
#include "eitkit/fem.hpp"
#include "eitkit/phantom.hpp"

namespace eitkit {

template <class S>
struct ForwardNet {
  int grid_n = 0;
  int skip = 3;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> J;  // m x n^2, frozen
  Eigen::Vector<S, Eigen::Dynamic> v0;                 // m, frozen
  Eigen::Vector<S, Eigen::Dynamic> sigma0;             // n^2, frozen
  ad::Graph cnn;
  ad::ParameterSet<S> params;  // CNN weights plus the fusion scalar
  int gamma_slot = -1;

  int measurement_count() const { return static_cast<int>(v0.size()); }
  S gamma() const { return params[gamma_slot].v[0]; }

  template <class T>
  ForwardNet<T> cast() const {
    ForwardNet<T> out;
    out.grid_n = grid_n;
    out.skip = skip;
    out.J = J.template cast<T>();
    out.v0 = v0.template cast<T>();
    out.sigma0 = sigma0.template cast<T>();
    out.cnn = cnn;
    out.params = params.template cast<T>();
    out.gamma_slot = gamma_slot;
    return out;
  }
};

/// CNN branch: conv3x3(8)+relu, maxpool2, conv3x3(16)+relu, maxpool2,
/// conv3x3(32)+relu, global mean, dense -> measurement count. The final
/// dense starts at zero so a fresh net is a pure physics predictor scaled
/// by gamma; gamma starts at 0.5.
template <class S>
ForwardNet<S> build_forward_net(const SensitivityMatrix& J, const VoltageFrame& v0, int grid_n,
                                std::uint64_t seed = 0) {
  if (J.baseline.rows() != grid_n || J.baseline.cols() != grid_n)
    throw ValueError("build_forward_net: J baseline grid does not match grid_n");
  if (J.entries.cols() != static_cast<Eigen::Index>(grid_n) * grid_n)
    throw ValueError("build_forward_net: J has " + std::to_string(J.entries.cols()) +
                     " columns, expected " + std::to_string(grid_n * grid_n));
  if (J.entries.rows() != v0.size())
    throw ValueError("build_forward_net: J rows and v0 length differ");
  if (grid_n % 4 != 0) throw ValueError("build_forward_net: grid_n must be divisible by 4");

  ForwardNet<S> net;
  net.grid_n = grid_n;
  net.J = J.entries.template cast<S>();
  net.v0 = v0.template cast<S>();
  Eigen::VectorXd s0(static_cast<Eigen::Index>(grid_n) * grid_n);
  for (int r = 0; r < grid_n; ++r)
    for (int c = 0; c < grid_n; ++c) s0[r * grid_n + c] = J.baseline(r, c);
  net.sigma0 = s0.template cast<S>();

  const int m = static_cast<int>(v0.size());
  ad::Graph& g = net.cnn;
  int x = g.add_input(ad::Shape::of({1, grid_n, grid_n}));
  x = g.add_relu(g.add_conv3x3(x, 8, "conv1"));
  x = g.add_maxpool2(x);
  x = g.add_relu(g.add_conv3x3(x, 16, "conv2"));
  x = g.add_maxpool2(x);
  x = g.add_relu(g.add_conv3x3(x, 32, "conv3"));
  x = g.add_global_mean(x);
  const int head_w_slot = static_cast<int>(g.params().size());
  x = g.add_dense(x, m, "head");
  g.set_output(x);
  net.gamma_slot = g.add_param("gamma", ad::Shape::of({1}));

  Rng rng(Rng::derive(seed, 0xf0f0, 0));
  net.params = ad::init_parameters<S>(g, rng, {head_w_slot});
  net.params[net.gamma_slot].v[0] = S(0.5);
  return net;
}

template <class S>
struct ForwardNetEval {
  ad::MatrixRM<S> v_lin;   // B x m
  ad::MatrixRM<S> v_cnn;   // B x m
  ad::MatrixRM<S> v_out;   // B x m
  ad::Tape<S> tape;
};

/// sigma_batch is B x n^2 row-major (flattened images).
template <class S>
void forward_net_eval(const ForwardNet<S>& net, const ad::MatrixRM<S>& sigma_batch,
                      ForwardNetEval<S>& eval) {
  const int B = static_cast<int>(sigma_batch.rows());
  const int n2 = net.grid_n * net.grid_n;
  if (sigma_batch.cols() != n2)
    throw ShapeError("forward_net_eval: sigma batch has wrong pixel count");

  eval.v_lin.noalias() = (sigma_batch.rowwise() - net.sigma0.transpose()) * net.J.transpose();
  eval.v_lin.rowwise() += net.v0.transpose();

  ad::Tensor<S> input(ad::Shape::of({B, 1, net.grid_n, net.grid_n}));
  Eigen::Map<ad::MatrixRM<S>>(input.v.data(), B, n2) = sigma_batch;
  const ad::Tensor<S>& out = ad::forward_eval(net.cnn, net.params, input, eval.tape);
  eval.v_cnn = Eigen::Map<const ad::MatrixRM<S>>(out.v.data(), B, net.measurement_count());

  const S gamma = net.gamma();
  eval.v_out = gamma * eval.v_lin + (S(1) - gamma) * eval.v_cnn;
}

/// Backpropagates an upstream dL/dV through both branches. Gradients for the
/// CNN parameters and gamma are accumulated into `grads` (aligned with
/// net.params); J, v0, sigma0 take none. If dsigma is non-null it receives
/// dL/dsigma (B x n^2).
template <class S>
void forward_net_backward(const ForwardNet<S>& net, const ForwardNetEval<S>& eval,
                          const ad::MatrixRM<S>& upstream, ad::Gradients<S>& grads,
                          std::type_identity_t<ad::MatrixRM<S>>* dsigma = nullptr) {
  const int B = static_cast<int>(upstream.rows());
  const int m = net.measurement_count();
  if (upstream.cols() != m) throw ShapeError("forward_net_backward: upstream has wrong width");
  const S gamma = net.gamma();

  ad::Tensor<S> up(ad::Shape::of({B, m}));
  Eigen::Map<ad::MatrixRM<S>>(up.v.data(), B, m) = (S(1) - gamma) * upstream;
  ad::Gradients<S> cnn_grads;
  ad::backward(net.cnn, net.params, eval.tape, up, cnn_grads);

  for (std::size_t i = 0; i < cnn_grads.params.size(); ++i)
    grads.params[i].v += cnn_grads.params[i].v;
  grads.params[static_cast<std::size_t>(net.gamma_slot)].v[0] +=
      (upstream.array() * (eval.v_lin - eval.v_cnn).array()).sum();

  if (dsigma) {
    dsigma->noalias() = gamma * (upstream * net.J);
    *dsigma += Eigen::Map<const ad::MatrixRM<S>>(cnn_grads.input.v.data(), B,
                                                 net.grid_n * net.grid_n);
  }
}

/// Convenience single/batch inference.
template <class S>
ad::MatrixRM<S> forward_net_predict(const ForwardNet<S>& net, const ad::MatrixRM<S>& sigma_batch) {
  ForwardNetEval<S> eval;
  forward_net_eval(net, sigma_batch, eval);
  return eval.v_out;
}

struct ForwardTrainConfig {
  int epochs = 100;
  double lr = 1e-3;
  int batch = 32;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct ForwardTrainHistory {
  std::vector<double> train_mse;
  std::vector<double> val_mse;
};

struct ForwardEvalReport {
  double mse_learned = 0.0;
  double r_learned = 0.0;
  double mse_linear = 0.0;
  double r_linear = 0.0;
};

namespace detail {

template <class S>
ad::MatrixRM<S> dataset_sigma_rows(const Dataset& ds, const std::vector<int>& idx) {
  const int n = ds.grid_n;
  ad::MatrixRM<S> out(static_cast<Eigen::Index>(idx.size()), n * n);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& img = ds.sigmas[static_cast<std::size_t>(idx[k])];
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        out(static_cast<Eigen::Index>(k), r * n + c) = static_cast<S>(img(r, c));
  }
  return out;
}

template <class S>
ad::MatrixRM<S> dataset_voltage_rows(const Dataset& ds, const std::vector<int>& idx) {
  const auto m = ds.voltages.empty() ? 0 : ds.voltages[0].size();
  ad::MatrixRM<S> out(static_cast<Eigen::Index>(idx.size()), m);
  for (std::size_t k = 0; k < idx.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) =
        ds.voltages[static_cast<std::size_t>(idx[k])].transpose().template cast<S>();
  return out;
}

inline double pearson_flat(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double ma = a.mean(), mb = b.mean();
  const Eigen::ArrayXd da = a.array() - ma, db = b.array() - mb;
  const double va = da.square().sum(), vb = db.square().sum();
  if (va == 0.0 || vb == 0.0) return 0.0;
  return (da * db).sum() / std::sqrt(va * vb);
}

}  // namespace detail

/// Minimizes mean ||F(sigma) - V||^2 / m with Adam on clean pairs only
/// (noise-flagged samples are skipped; the surrogate learns physics, not
/// noise). J and v0 are never touched. Deterministic for a fixed seed and
/// thread count.
template <class S>
ForwardTrainHistory train_forward_net(ForwardNet<S>& net, const Dataset& train,
                                      const ForwardTrainConfig& cfg) {
  if (train.grid_n != net.grid_n)
    throw ValueError("train_forward_net: dataset grid does not match net");
  std::vector<int> clean;
  for (int i = 0; i < train.size(); ++i)
    if (!train.noise_flags[static_cast<std::size_t>(i)]) clean.push_back(i);
  if (clean.size() < 2)
    throw ValueError("train_forward_net: need at least two noise-free samples");

  Rng rng(Rng::derive(cfg.seed, 0x5f0a, 1));
  rng.shuffle(clean);
  const int val_count =
      std::max(1, static_cast<int>(std::floor(cfg.val_fraction * static_cast<double>(clean.size()))));
  std::vector<int> val_idx(clean.end() - val_count, clean.end());
  std::vector<int> train_idx(clean.begin(), clean.end() - val_count);

  const int m = net.measurement_count();
  const ad::MatrixRM<S> val_sigma = detail::dataset_sigma_rows<S>(train, val_idx);
  const ad::MatrixRM<S> val_v = detail::dataset_voltage_rows<S>(train, val_idx);

  ad::AdamState<S> adam = ad::AdamState<S>::init(net.params);
  ForwardTrainHistory history;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train_idx);
    double epoch_loss = 0.0;
    int steps = 0;
    for (std::size_t begin = 0; begin < train_idx.size(); begin += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(train_idx.size(), begin + static_cast<std::size_t>(cfg.batch));
      const std::vector<int> batch(train_idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                   train_idx.begin() + static_cast<std::ptrdiff_t>(end));
      const int B = static_cast<int>(batch.size());
      const ad::MatrixRM<S> sig = detail::dataset_sigma_rows<S>(train, batch);
      const ad::MatrixRM<S> v = detail::dataset_voltage_rows<S>(train, batch);

      ForwardNetEval<S> eval;
      forward_net_eval(net, sig, eval);
      const ad::MatrixRM<S> resid = eval.v_out - v;
      const double loss = static_cast<double>(resid.squaredNorm()) / (B * m);
      if (!std::isfinite(loss))
        throw DivergenceError("train_forward_net: loss diverged at epoch " + std::to_string(epoch));
      epoch_loss += loss;
      ++steps;

      ad::Gradients<S> grads = ad::Gradients<S>::zeros(net.cnn, B);
      const ad::MatrixRM<S> upstream = resid * static_cast<S>(2.0 / (B * m));
      forward_net_backward(net, eval, upstream, grads, nullptr);
      ad::adam_step(net.params, grads, adam, cfg.lr);
    }
    history.train_mse.push_back(steps ? epoch_loss / steps : 0.0);

    const ad::MatrixRM<S> pred = forward_net_predict(net, val_sigma);
    history.val_mse.push_back(static_cast<double>((pred - val_v).squaredNorm()) /
                              (val_sigma.rows() * m));
  }
  return history;
}

/// Per-sample MSE averaged over the test set plus the Pearson correlation of
/// the concatenated predicted/true voltage vectors, for both the learned
/// operator and the bare linear model V0 + J (sigma - sigma0).
template <class S>
ForwardEvalReport eval_forward_net(const ForwardNet<S>& net, const Dataset& test) {
  if (test.size() == 0) throw ValueError("eval_forward_net: empty test set");
  if (test.grid_n != net.grid_n)
    throw ValueError("eval_forward_net: dataset grid does not match net");
  std::vector<int> idx(static_cast<std::size_t>(test.size()));
  for (int i = 0; i < test.size(); ++i) idx[static_cast<std::size_t>(i)] = i;

  const int m = net.measurement_count();
  const ad::MatrixRM<S> sig = detail::dataset_sigma_rows<S>(test, idx);
  const ad::MatrixRM<S> v = detail::dataset_voltage_rows<S>(test, idx);

  ForwardNetEval<S> eval;
  forward_net_eval(net, sig, eval);

  const Eigen::MatrixXd pred = eval.v_out.template cast<double>();
  const Eigen::MatrixXd lin = eval.v_lin.template cast<double>();
  const Eigen::MatrixXd truth = v.template cast<double>();

  ForwardEvalReport report;
  report.mse_learned = (pred - truth).squaredNorm() / static_cast<double>(truth.size());
  report.mse_linear = (lin - truth).squaredNorm() / static_cast<double>(truth.size());

  const Eigen::VectorXd pf = Eigen::Map<const Eigen::VectorXd>(pred.data(), pred.size());
  const Eigen::VectorXd lf = Eigen::Map<const Eigen::VectorXd>(lin.data(), lin.size());
  const Eigen::VectorXd tf = Eigen::Map<const Eigen::VectorXd>(truth.data(), truth.size());
  report.r_learned = detail::pearson_flat(pf, tf);
  report.r_linear = detail::pearson_flat(lf, tf);
  return report;
}

/// Checkpoint: meta + frozen physics (J f32, v0/sigma0 f64) + named CNN
/// parameters.
void save_forward_net(const std::filesystem::path& path, const ForwardNet<float>& net);
ForwardNet<float> load_forward_net(const std::filesystem::path& path);

}  // namespace eitkit
