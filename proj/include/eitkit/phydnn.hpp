#pragma once

// Physics-driven reconstruction network and trainer. The composite objective
//   L = alpha ||sigma - sigma_p||^2 + beta ||F(sigma_p) - V_meas||^2
// couples supervised image loss with forward-model consistency through the
// differentiable surrogate; a warm-up phase logs the physics term without
// backpropagating it.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "eitkit/autodiff.hpp"
#include "eitkit/fem.hpp"
#include "eitkit/phantom.hpp"
#include "eitkit/surrogate.hpp"

namespace eitkit {

template <class S>
struct ReconNet {
  int grid_n = 0;
  int depth = 2;
  int skip = 3;
  ad::Graph g;
  ad::ParameterSet<S> params;
  Eigen::VectorXd v0;  // baseline frame for input normalization

  template <class T>
  ReconNet<T> cast() const {
    ReconNet<T> out;
    out.grid_n = grid_n;
    out.depth = depth;
    out.skip = skip;
    out.g = g;
    out.params = params.template cast<T>();
    out.v0 = v0;
    return out;
  }
};

/// U-Net over a dense 208 -> n^2 input projection: `depth` encoder levels of
/// paired 3x3 convs (16 * 2^level channels) with maxpool, a bottleneck pair,
/// nearest-upsample decoder with channel-concat skips, and a 1x1 output conv.
/// grid_n must be divisible by 2^depth. Default depth: 3 for grid >= 64,
/// else 2.
template <class S>
ReconNet<S> build_recon_net(int grid_n, int measurements, int depth = 0, std::uint64_t seed = 0) {
  if (depth <= 0) depth = grid_n >= 64 ? 3 : 2;
  if (grid_n % (1 << depth) != 0)
    throw ValueError("build_recon_net: grid_n must be divisible by 2^depth");

  ReconNet<S> net;
  net.grid_n = grid_n;
  net.depth = depth;
  ad::Graph& g = net.g;

  int x = g.add_input(ad::Shape::of({measurements}));
  x = g.add_dense(x, grid_n * grid_n, "in_proj");
  x = g.add_reshape(x, ad::Shape::of({1, grid_n, grid_n}));

  std::vector<int> skips;
  int ch = 16;
  for (int level = 0; level < depth; ++level) {
    const std::string tag = "enc" + std::to_string(level);
    x = g.add_relu(g.add_conv3x3(x, ch, tag + "a"));
    x = g.add_relu(g.add_conv3x3(x, ch, tag + "b"));
    skips.push_back(x);
    x = g.add_maxpool2(x);
    ch *= 2;
  }
  x = g.add_relu(g.add_conv3x3(x, ch, "bota"));
  x = g.add_relu(g.add_conv3x3(x, ch, "botb"));
  for (int level = depth - 1; level >= 0; --level) {
    ch /= 2;
    const std::string tag = "dec" + std::to_string(level);
    x = g.add_upsample2(x);
    x = g.add_concat_channels(x, skips[static_cast<std::size_t>(level)]);
    x = g.add_relu(g.add_conv3x3(x, ch, tag + "a"));
    x = g.add_relu(g.add_conv3x3(x, ch, tag + "b"));
  }
  x = g.add_conv1x1(x, 1, "out_proj");
  g.set_output(x);

  Rng rng(Rng::derive(seed, 0xd11, 0));
  net.params = ad::init_parameters<S>(g, rng);
  return net;
}

struct TrainConfig {
  double alpha = 1.0;
  double beta = 0.0029;
  int warmup_epochs = 30;
  int epochs = 100;
  double lr = 1e-3;
  int batch = 32;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  int threads = 1;
};

struct TrainHistory {
  std::vector<double> l_data_train, l_data_val, l_phy_train, l_phy_val;
  std::uint64_t warmup_param_hash = 0;  // parameter bytes at the end of warm-up

  void write_csv(const std::filesystem::path& path) const;
};

struct CompositeLoss {
  double total = 0.0;
  double data = 0.0;
  double phy = 0.0;
};

/// Composite loss on a batch: L_data is the mean squared pixel error, L_phy
/// the mean squared surrogate-voltage error, L = alpha L_data + beta L_phy.
/// When dsigma_pred is non-null it receives dL/dsigma_pred (both terms);
/// gradients never reach the surrogate parameters.
template <class S>
CompositeLoss composite_loss(const ad::MatrixRM<S>& sigma_true, const ad::MatrixRM<S>& sigma_pred,
                             const ad::MatrixRM<S>& v_meas, const ForwardNet<S>& surrogate,
                             double alpha, double beta, ad::MatrixRM<S>* dsigma_pred = nullptr) {
  if (sigma_true.rows() != sigma_pred.rows() || sigma_true.cols() != sigma_pred.cols())
    throw ShapeError("composite_loss: sigma shapes differ");
  if (v_meas.rows() != sigma_pred.rows())
    throw ShapeError("composite_loss: batch sizes differ");
  const auto B = sigma_pred.rows();
  const auto n2 = sigma_pred.cols();
  const auto m = v_meas.cols();

  CompositeLoss loss;
  const ad::MatrixRM<S> rd = sigma_pred - sigma_true;
  loss.data = static_cast<double>(rd.squaredNorm()) / static_cast<double>(B * n2);

  ForwardNetEval<S> eval;
  forward_net_eval(surrogate, sigma_pred, eval);
  const ad::MatrixRM<S> rp = eval.v_out - v_meas;
  loss.phy = static_cast<double>(rp.squaredNorm()) / static_cast<double>(B * m);
  loss.total = alpha * loss.data + beta * loss.phy;
  if (!std::isfinite(loss.total)) throw DivergenceError("composite_loss: non-finite loss");

  if (dsigma_pred) {
    *dsigma_pred = rd * static_cast<S>(2.0 * alpha / static_cast<double>(B * n2));
    if (beta != 0.0) {
      ad::Gradients<S> unused = ad::Gradients<S>::zeros(surrogate.cnn, static_cast<int>(B));
      ad::MatrixRM<S> dphy;
      forward_net_backward(surrogate, eval,
                           ad::MatrixRM<S>(rp * static_cast<S>(2.0 * beta / static_cast<double>(B * m))),
                           unused, &dphy);
      *dsigma_pred += dphy;
    }
  }
  return loss;
}

/// Relative physics-loss difference (L_dnn - L_phydnn) / L_dnn in percent,
/// elementwise over equal-length series; denominators floored at 1e-12.
std::vector<double> physics_loss_gap(const std::vector<double>& dnn,
                                     const std::vector<double>& phydnn);

namespace detail {

template <class S>
ad::MatrixRM<S> normalized_inputs(const Dataset& ds, const Eigen::VectorXd& v0) {
  const auto m = v0.size();
  ad::MatrixRM<S> out(ds.size(), m);
  for (int i = 0; i < ds.size(); ++i) {
    const auto& v = ds.voltages[static_cast<std::size_t>(i)];
    if (v.size() != m) throw ValueError("normalized_inputs: frame length mismatch");
    for (Eigen::Index k = 0; k < m; ++k)
      out(i, k) = static_cast<S>((v[k] - v0[k]) / (std::abs(v0[k]) + 1e-9));
  }
  return out;
}

}  // namespace detail

/// Supervised training with the physics term excluded from backpropagation
/// for the first warmup_epochs (it is still computed and logged, for the
/// baseline run it is logged for all epochs but never optimized when
/// beta = 0). Inputs are normalized as (V - V0) / (|V0| + 1e-9).
/// Deterministic for fixed seed and thread count; with threads = 1 the run
/// is bitwise reproducible.
template <class S>
TrainHistory train_recon(ReconNet<S>& net, const Dataset& train, const TrainConfig& cfg,
                         const ForwardNet<S>& surrogate) {
  if (net.grid_n != surrogate.grid_n)
    throw ValueError("train_recon: surrogate grid " + std::to_string(surrogate.grid_n) +
                     " does not match net grid " + std::to_string(net.grid_n));
  if (train.grid_n != net.grid_n) throw ValueError("train_recon: dataset grid does not match net");
  if (train.skip != surrogate.skip)
    throw ValueError("train_recon: dataset protocol does not match surrogate");
  if (cfg.warmup_epochs > cfg.epochs)
    throw ValueError("train_recon: warmup_epochs exceeds epochs");
  if (net.v0.size() == 0) throw ValueError("train_recon: net has no baseline frame (v0)");

  const int n2 = net.grid_n * net.grid_n;
  const int m = surrogate.measurement_count();

  const ad::MatrixRM<S> inputs = detail::normalized_inputs<S>(train, net.v0);
  const ad::MatrixRM<S> targets = detail::dataset_sigma_rows<S>(
      train, [&] {
        std::vector<int> all(static_cast<std::size_t>(train.size()));
        for (int i = 0; i < train.size(); ++i) all[static_cast<std::size_t>(i)] = i;
        return all;
      }());
  const ad::MatrixRM<S> v_meas = detail::dataset_voltage_rows<S>(
      train, [&] {
        std::vector<int> all(static_cast<std::size_t>(train.size()));
        for (int i = 0; i < train.size(); ++i) all[static_cast<std::size_t>(i)] = i;
        return all;
      }());

  Rng rng(Rng::derive(cfg.seed, 0x7e41, 2));
  std::vector<int> order(static_cast<std::size_t>(train.size()));
  for (int i = 0; i < train.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  const int val_count =
      cfg.val_fraction > 0.0
          ? std::max(1, static_cast<int>(std::floor(cfg.val_fraction *
                                                    static_cast<double>(order.size()))))
          : 0;
  std::vector<int> val_idx(order.end() - val_count, order.end());
  std::vector<int> train_idx(order.begin(), order.end() - val_count);

  ad::AdamState<S> adam = ad::AdamState<S>::init(net.params);
  TrainHistory history;
  if (cfg.warmup_epochs == 0) history.warmup_param_hash = net.params.byte_hash();

  const int threads = std::max(1, cfg.threads);

  // One forward/backward over a contiguous index range; used for both
  // training chunks and validation scoring.
  struct ChunkResult {
    double sq_data = 0.0;
    double sq_phy = 0.0;
    ad::Gradients<S> grads;
  };

  auto eval_chunk = [&](const std::vector<int>& idx, std::size_t begin, std::size_t end,
                        bool physics_grad, double inv_bn2, double inv_bm, ChunkResult& out,
                        bool want_grads) {
    const int cb = static_cast<int>(end - begin);
    ad::Tensor<S> in(ad::Shape::of({cb, m}));
    ad::MatrixRM<S> sig_true(cb, n2);
    ad::MatrixRM<S> v_true(cb, m);
    for (int k = 0; k < cb; ++k) {
      const int row = idx[begin + static_cast<std::size_t>(k)];
      Eigen::Map<ad::MatrixRM<S>>(in.v.data(), cb, m).row(k) = inputs.row(row);
      sig_true.row(k) = targets.row(row);
      v_true.row(k) = v_meas.row(row);
    }

    ad::Tape<S> tape;
    const ad::Tensor<S>& pred = ad::forward_eval(net.g, net.params, in, tape);
    Eigen::Map<const ad::MatrixRM<S>> sig_pred(pred.v.data(), cb, n2);

    const ad::MatrixRM<S> rd = sig_pred - sig_true;
    out.sq_data = static_cast<double>(rd.squaredNorm());

    ForwardNetEval<S> surro;
    forward_net_eval(surrogate, ad::MatrixRM<S>(sig_pred), surro);
    const ad::MatrixRM<S> rp = surro.v_out - v_true;
    out.sq_phy = static_cast<double>(rp.squaredNorm());

    if (!want_grads) return;
    ad::MatrixRM<S> dsig = rd * static_cast<S>(2.0 * cfg.alpha * inv_bn2);
    if (physics_grad) {
      ad::Gradients<S> unused = ad::Gradients<S>::zeros(surrogate.cnn, cb);
      ad::MatrixRM<S> dphy;
      forward_net_backward(surrogate, surro,
                           ad::MatrixRM<S>(rp * static_cast<S>(2.0 * cfg.beta * inv_bm)), unused,
                           &dphy);
      dsig += dphy;
    }
    ad::Tensor<S> upstream(pred.shape);
    Eigen::Map<ad::MatrixRM<S>>(upstream.v.data(), cb, n2) = dsig;
    ad::backward(net.g, net.params, tape, upstream, out.grads);
  };

  auto split_ranges = [&](std::size_t count) {
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    const std::size_t per = (count + static_cast<std::size_t>(threads) - 1) /
                            static_cast<std::size_t>(threads);
    for (std::size_t b = 0; b < count; b += per) ranges.emplace_back(b, std::min(count, b + per));
    return ranges;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool physics_active = epoch >= cfg.warmup_epochs && cfg.beta != 0.0;
    rng.shuffle(train_idx);

    double sum_data = 0.0, sum_phy = 0.0;
    int steps = 0;
    for (std::size_t begin = 0; begin < train_idx.size();
         begin += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end =
          std::min(train_idx.size(), begin + static_cast<std::size_t>(cfg.batch));
      const int B = static_cast<int>(end - begin);
      const double inv_bn2 = 1.0 / (static_cast<double>(B) * n2);
      const double inv_bm = 1.0 / (static_cast<double>(B) * m);

      const auto ranges = split_ranges(end - begin);
      std::vector<ChunkResult> results(ranges.size());
      parallel_for(0, static_cast<int>(ranges.size()), threads, [&](int c) {
        const auto [rb, re] = ranges[static_cast<std::size_t>(c)];
        eval_chunk(train_idx, begin + rb, begin + re, physics_active, inv_bn2, inv_bm,
                   results[static_cast<std::size_t>(c)], true);
      });

      ad::Gradients<S>& total = results[0].grads;
      double sq_data = results[0].sq_data, sq_phy = results[0].sq_phy;
      for (std::size_t c = 1; c < results.size(); ++c) {
        total.accumulate(results[c].grads);
        sq_data += results[c].sq_data;
        sq_phy += results[c].sq_phy;
      }

      const double l_data = sq_data * inv_bn2;
      const double l_phy = sq_phy * inv_bm;
      if (!std::isfinite(l_data) || !std::isfinite(l_phy))
        throw DivergenceError("train_recon: loss diverged at epoch " + std::to_string(epoch));
      sum_data += l_data;
      sum_phy += l_phy;
      ++steps;

      ad::adam_step(net.params, total, adam, cfg.lr);
    }

    history.l_data_train.push_back(steps ? sum_data / steps : 0.0);
    history.l_phy_train.push_back(steps ? sum_phy / steps : 0.0);

    // Validation pass (no grads).
    if (val_idx.empty()) {
      history.l_data_val.push_back(0.0);
      history.l_phy_val.push_back(0.0);
    } else {
      double sq_data = 0.0, sq_phy = 0.0;
      const auto ranges = split_ranges(val_idx.size());
      std::vector<ChunkResult> results(ranges.size());
      parallel_for(0, static_cast<int>(ranges.size()), threads, [&](int c) {
        const auto [rb, re] = ranges[static_cast<std::size_t>(c)];
        eval_chunk(val_idx, rb, re, false, 0.0, 0.0, results[static_cast<std::size_t>(c)], false);
      });
      for (const auto& r : results) {
        sq_data += r.sq_data;
        sq_phy += r.sq_phy;
      }
      history.l_data_val.push_back(sq_data / (static_cast<double>(val_idx.size()) * n2));
      history.l_phy_val.push_back(sq_phy / (static_cast<double>(val_idx.size()) * m));
    }

    if (epoch + 1 == cfg.warmup_epochs) history.warmup_param_hash = net.params.byte_hash();
  }
  return history;
}

struct ReconResult {
  ConductivityImage image;
  double seconds = 0.0;
};

/// Single-frame inference (absolute conductivity map) with wall-clock latency.
ReconResult reconstruct(const ReconNet<float>& net, const VoltageFrame& v_meas);

/// Batched inference used by evaluation loops.
std::vector<ConductivityImage> reconstruct_batch(const ReconNet<float>& net,
                                                 const std::vector<VoltageFrame>& frames,
                                                 int batch = 64);

struct BetaScore {
  double beta = 0.0;
  double mean_score = 0.0;
};

struct GridSearchResult {
  std::vector<BetaScore> table;
  double best_beta = 0.0;
  ReconNet<float> best_model;
};

/// Trains one model per beta under identical settings and seed, scores each
/// on the test split by the weighted metric S, returns the table and the
/// argmax model.
GridSearchResult grid_search_beta(const std::vector<double>& betas, const Dataset& train,
                                  const Dataset& test, const TrainConfig& base,
                                  const ForwardNet<float>& surrogate);

/// Log-spaced beta list, exponents from lo to hi inclusive.
std::vector<double> log_spaced(double exp_lo, double exp_hi, int count);

void save_recon_net(const std::filesystem::path& path, const ReconNet<float>& net,
                    const TrainConfig& cfg);
ReconNet<float> load_recon_net(const std::filesystem::path& path);

}  // namespace eitkit
