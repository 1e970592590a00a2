// eitkit command-line interface: dataset generation, forward-operator and
// reconstruction training, classical baselines, evaluation, and frame/image
// io. Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "eitkit/classical.hpp"
#include "eitkit/config.hpp"
#include "eitkit/container.hpp"
#include "eitkit/fem.hpp"
#include "eitkit/frames.hpp"
#include "eitkit/metrics.hpp"
#include "eitkit/phantom.hpp"
#include "eitkit/phydnn.hpp"
#include "eitkit/surrogate.hpp"

namespace fs = std::filesystem;
using namespace eitkit;

namespace {

/// Two-way binding between a CLI option and a config-file key so that file
/// values fill in anything not given on the command line, and every run can
/// serialize its resolved settings.
struct Bindings {
  struct Item {
    std::string key;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
    CLI::Option* opt = nullptr;
  };
  std::vector<Item> items;

  void add(const std::string& key, std::string* var, CLI::Option* opt) {
    items.push_back({key, [var](const std::string& s) { *var = s; },
                     [var]() { return *var; }, opt});
  }
  void add(const std::string& key, int* var, CLI::Option* opt) {
    items.push_back({key,
                     [var, key](const std::string& s) {
                       RunConfig c;
                       c.set(key, s);
                       *var = static_cast<int>(c.get_int(key));
                     },
                     [var]() { return std::to_string(*var); }, opt});
  }
  void add(const std::string& key, std::uint64_t* var, CLI::Option* opt) {
    items.push_back({key,
                     [var, key](const std::string& s) {
                       RunConfig c;
                       c.set(key, s);
                       *var = static_cast<std::uint64_t>(c.get_int(key));
                     },
                     [var]() { return std::to_string(*var); }, opt});
  }
  void add(const std::string& key, double* var, CLI::Option* opt) {
    items.push_back({key,
                     [var, key](const std::string& s) {
                       RunConfig c;
                       c.set(key, s);
                       *var = c.get_double(key);
                     },
                     [var]() {
                       char buf[40];
                       std::snprintf(buf, sizeof(buf), "%.17g", *var);
                       return std::string(buf);
                     },
                     opt});
  }

  std::set<std::string> known_keys() const {
    std::set<std::string> keys = {"command"};
    for (const auto& item : items) keys.insert(item.key);
    return keys;
  }

  /// File values apply only where the flag was not given explicitly.
  void apply_file(const fs::path& path) {
    const RunConfig file = load_config_file(path, known_keys());
    for (auto& item : items) {
      if (item.opt && item.opt->count() > 0) continue;
      if (file.has(item.key)) item.set(file.get(item.key));
    }
  }

  RunConfig resolved(const std::string& command) const {
    RunConfig out;
    out.set("command", command);
    for (const auto& item : items) out.set(item.key, item.get());
    return out;
  }
};

void write_resolved(const Bindings& bindings, const std::string& command, const fs::path& where) {
  fs::create_directories(where.parent_path().empty() ? "." : where.parent_path());
  write_config_file(where, bindings.resolved(command));
}

fs::path sidecar_config(const fs::path& output_file) {
  return fs::path(output_file.string() + ".config.txt");
}

ConductivityImage image_from_container(const TensorData& t) {
  if (t.dims.size() != 2)
    throw ValueError("expected a rank-2 image container, got rank " +
                     std::to_string(t.dims.size()));
  return t.as_matrix();
}

std::vector<double> parse_betas(const std::string& betas_csv, const std::string& betas_log) {
  if (!betas_log.empty()) {
    double lo = 0, hi = 0;
    int count = 0;
    if (std::sscanf(betas_log.c_str(), "%lf:%lf:%d", &lo, &hi, &count) != 3 || count < 1)
      throw ValueError("--betas-log expects exp_lo:exp_hi:count, got " + betas_log);
    return log_spaced(lo, hi, count);
  }
  std::vector<double> betas;
  std::string token;
  std::istringstream ss(betas_csv);
  while (std::getline(ss, token, ',')) {
    if (token.empty()) continue;
    betas.push_back(std::stod(token));
  }
  if (betas.empty()) throw ValueError("no betas given; use --betas or --betas-log");
  return betas;
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricsReport>& rows,
                       const MetricsSummary& summary) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os.precision(10);
  os << "sample,ssim,cc,rie,psnr_db,score_s\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    os << i << "," << rows[i].ssim << "," << rows[i].cc << "," << rows[i].rie << ","
       << rows[i].psnr_db << "," << rows[i].score_s << "\n";
  os << "mean," << summary.mean.ssim << "," << summary.mean.cc << "," << summary.mean.rie << ","
     << summary.mean.psnr_db << "," << summary.mean.score_s << "\n";
}

ForwardNet<float> surrogate_for_dataset(const fs::path& dataset_dir, const Dataset& ds,
                                        std::uint64_t seed) {
  const Mesh mesh = build_mesh(ds.grid_n);
  const Protocol protocol = make_protocol(ds.skip);
  const ConductivityImage sigma0 = ConductivityImage::Constant(ds.grid_n, ds.grid_n, 1.0);
  const SensitivityMatrix J = compute_jacobian(mesh, sigma0, protocol);
  const VoltageFrame v0 = load_baseline(dataset_dir);
  ForwardNet<float> net = build_forward_net<float>(J, v0, ds.grid_n, seed);
  net.skip = ds.skip;
  return net;
}

int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eitkit - tomographic tactile sensing toolkit"};
  app.require_subcommand(1);
  int exit_code = 0;

  // ---------------------------------------------------------------- mesh-info
  {
    auto* cmd = app.add_subcommand("mesh-info", "Print mesh and protocol facts");
    auto grid = std::make_shared<int>(32);
    auto skip = std::make_shared<int>(3);
    auto width = std::make_shared<int>(0);
    cmd->add_option("--grid", *grid, "Elements per side");
    cmd->add_option("--skip", *skip, "Electrode skip");
    cmd->add_option("--electrode-width", *width, "Boundary edges per electrode (0 = default)");
    cmd->callback([=, &exit_code]() {
      exit_code = run_guarded([&]() {
        const Mesh mesh = build_mesh(*grid, *width);
        const Protocol protocol = make_protocol(*skip);
        std::cout << "grid_n=" << mesh.grid_n << "\nelements=" << mesh.element_count()
                  << "\nnodes=" << mesh.node_count()
                  << "\nelectrode_width=" << mesh.electrode_width
                  << "\nelectrodes=" << kNumElectrodes << "\nskip=" << protocol.skip
                  << "\ndrives=" << protocol.drive_pairs.size()
                  << "\nmeasurements=" << protocol.measurement_count() << "\n";
        for (int e = 0; e < kNumElectrodes; ++e) {
          std::cout << "electrode_" << e << "_nodes=";
          const auto& nodes = mesh.electrodes[static_cast<std::size_t>(e)];
          for (std::size_t i = 0; i < nodes.size(); ++i)
            std::cout << (i ? " " : "") << nodes[i];
          std::cout << "\n";
        }
      });
    });
  }

  // -------------------------------------------------------------- gen-dataset
  {
    auto* cmd = app.add_subcommand("gen-dataset", "Generate paired (sigma, V) datasets");
    struct Opts {
      std::string out, config;
      int grid = 32, skip = 3, width = 0, train = 2000, test = 500, threads = 2;
      std::uint64_t seed = 0;
      double snr_lo = 30.0, snr_hi = 60.0, noise_fraction = 0.5;
    };
    auto o = std::make_shared<Opts>();
    auto b = std::make_shared<Bindings>();
    b->add("out", &o->out, cmd->add_option("--out", o->out, "Output directory")->required());
    b->add("grid", &o->grid, cmd->add_option("--grid", o->grid, "Elements per side"));
    b->add("skip", &o->skip, cmd->add_option("--skip", o->skip, "Electrode skip"));
    b->add("electrode_width", &o->width,
           cmd->add_option("--electrode-width", o->width, "Electrode width (0 = default)"));
    b->add("train_count", &o->train, cmd->add_option("--train", o->train, "Training samples"));
    b->add("test_count", &o->test, cmd->add_option("--test", o->test, "Test samples"));
    b->add("seed", &o->seed, cmd->add_option("--seed", o->seed, "RNG seed"));
    b->add("snr_lo", &o->snr_lo, cmd->add_option("--snr-lo", o->snr_lo, "Min SNR (dB)"));
    b->add("snr_hi", &o->snr_hi, cmd->add_option("--snr-hi", o->snr_hi, "Max SNR (dB)"));
    b->add("noise_fraction", &o->noise_fraction,
           cmd->add_option("--noise-fraction", o->noise_fraction, "Noisy share of training"));
    b->add("threads", &o->threads, cmd->add_option("--threads", o->threads, "Worker threads"));
    cmd->add_option("--config", o->config, "key=value file with defaults");
    cmd->callback([=, &exit_code]() {
      exit_code = run_guarded([&]() {
        if (!o->config.empty()) b->apply_file(o->config);
        const Mesh mesh = build_mesh(o->grid, o->width);
        const Protocol protocol = make_protocol(o->skip);

        DatasetConfig train_cfg;
        train_cfg.count = o->train;
        train_cfg.seed = o->seed;
        train_cfg.split = "train";
        train_cfg.noise_fraction = o->noise_fraction;
        train_cfg.snr_lo_db = o->snr_lo;
        train_cfg.snr_hi_db = o->snr_hi;
        train_cfg.threads = o->threads;
        DatasetConfig test_cfg = train_cfg;
        test_cfg.count = o->test;
        test_cfg.split = "test";
        test_cfg.noise_fraction = 0.0;

        const fs::path dir(o->out);
        fs::create_directories(dir);
        save_dataset(dir, generate_dataset(train_cfg, mesh, protocol));
        save_dataset(dir, generate_dataset(test_cfg, mesh, protocol));
        save_baseline(dir, baseline_frame(mesh, protocol));
        write_resolved(*b, "gen-dataset", dir / "config.txt");
        std::cout << "wrote " << (o->train + o->test) << " samples to " << dir.string() << "\n";
      });
    });
  }

  // --------------------------------------------------------- train-forward-op
  {
    auto* cmd = app.add_subcommand("train-forward-op", "Train the surrogate forward operator");
    struct Opts {
      std::string dataset, out, history, config;
      int epochs = 100, batch = 32, threads = 2;
      double lr = 1e-3, val_fraction = 0.1;
      std::uint64_t seed = 0;
    };
    auto o = std::make_shared<Opts>();
    auto b = std::make_shared<Bindings>();
    b->add("dataset", &o->dataset,
           cmd->add_option("--dataset", o->dataset, "Dataset directory")->required());
    b->add("out", &o->out, cmd->add_option("--out", o->out, "Checkpoint path")->required());
    b->add("epochs", &o->epochs, cmd->add_option("--epochs", o->epochs, "Training epochs"));
    b->add("lr", &o->lr, cmd->add_option("--lr", o->lr, "Adam learning rate"));
    b->add("batch", &o->batch, cmd->add_option("--batch", o->batch, "Batch size"));
    b->add("val_fraction", &o->val_fraction,
           cmd->add_option("--val-fraction", o->val_fraction, "Validation share"));
    b->add("seed", &o->seed, cmd->add_option("--seed", o->seed, "RNG seed"));
    b->add("threads", &o->threads, cmd->add_option("--threads", o->threads, "Worker threads"));
    b->add("history", &o->history, cmd->add_option("--history", o->history, "Loss CSV path"));
    cmd->add_option("--config", o->config, "key=value file with defaults");
    cmd->callback([=, &exit_code]() {
      exit_code = run_guarded([&]() {
        if (!o->config.empty()) b->apply_file(o->config);
        const Dataset train = load_dataset(o->dataset, "train");
        ForwardNet<float> net = surrogate_for_dataset(o->dataset, train, o->seed);

        ForwardTrainConfig cfg;
        cfg.epochs = o->epochs;
        cfg.lr = o->lr;
        cfg.batch = o->batch;
        cfg.val_fraction = o->val_fraction;
        cfg.seed = o->seed;
        cfg.threads = o->threads;
        const ForwardTrainHistory hist = train_forward_net(net, train, cfg);

        save_forward_net(o->out, net);
        write_resolved(*b, "train-forward-op", sidecar_config(o->out));
        if (!o->history.empty()) {
          std::ofstream os(o->history, std::ios::trunc);
          os.precision(12);
          os << "epoch,train_mse,val_mse\n";
          for (std::size_t e = 0; e < hist.train_mse.size(); ++e)
            os << (e + 1) << "," << hist.train_mse[e] << "," << hist.val_mse[e] << "\n";
        }
        std::cout << "final train MSE " << hist.train_mse.back() << ", val MSE "
                  << hist.val_mse.back() << ", gamma " << net.gamma() << "\n";
      });
    });
  }

  // ---------------------------------------------------------- eval-forward-op
  {
    auto* cmd = app.add_subcommand("eval-forward-op",
                                   "Compare the surrogate against the linear model");
    struct Opts {
      std::string dataset, checkpoint, out;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--dataset", o->dataset, "Dataset directory")->required();
    cmd->add_option("--checkpoint", o->checkpoint, "Surrogate checkpoint")->required();
    cmd->add_option("--out", o->out, "Report path (optional)");
    cmd->callback([=, &exit_code]() {
      exit_code = run_guarded([&]() {
        const Dataset test = load_dataset(o->dataset, "test");
        const ForwardNet<float> net = load_forward_net(o->checkpoint);
        const ForwardEvalReport r = eval_forward_net(net, test);
        std::ostringstream report;
        report.precision(10);
        report << "mse_learned=" << r.mse_learned << "\nr_learned=" << r.r_learned
               << "\nmse_linear=" << r.mse_linear << "\nr_linear=" << r.r_linear << "\n";
        std::cout << report.str();
        if (!o->out.empty()) {
          std::ofstream os(o->out, std::ios::trunc);
          os << report.str();
        }
      });
    });
  }

  // ---------------------------------------------------------------- train
  {
    auto* cmd = app.add_subcommand("train", "Train a reconstruction network");
    struct Opts {
      std::string dataset, surrogate, out, history, config;
      int warmup = 30, epochs = 100, batch = 32, depth = 0, threads = 2;
      double alpha = 1.0, beta = 0.0029, lr = 1e-3, val_fraction = 0.1;
      std::uint64_t seed = 0;
    };
    auto o = std::make_shared<Opts>();
    auto b = std::make_shared<Bindings>();
    b->add("dataset", &o->dataset,
           cmd->add_option("--dataset", o->dataset, "Dataset directory")->required());
    b->add("surrogate", &o->surrogate,
           cmd->add_option("--surrogate", o->surrogate, "Surrogate checkpoint")->required());
    b->add("out", &o->out, cmd->add_option("--out", o->out, "Checkpoint path")->required());
    b->add("alpha", &o->alpha, cmd->add_option("--alpha", o->alpha, "Data-loss weight"));
    b->add("beta", &o->beta, cmd->add_option("--beta", o->beta, "Physics-loss weight"));
    b->add("warmup", &o->warmup,
           cmd->add_option("--warmup", o->warmup, "Warm-up epochs (physics logged only)"));
    b->add("epochs", &o->epochs, cmd->add_option("--epochs", o->epochs, "Training epochs"));
    b->add("lr", &o->lr, cmd->add_option("--lr", o->lr, "Adam learning rate"));
    b->add("batch", &o->batch, cmd->add_option("--batch", o->batch, "Batch size"));
    b->add("depth", &o->depth, cmd->add_option("--depth", o->depth, "U-Net depth (0 = auto)"));
    b->add("val_fraction", &o->val_fraction,
           cmd->add_option("--val-fraction", o->val_fraction, "Validation share"));
    b->add("seed", &o->seed, cmd->add_option("--seed", o->seed, "RNG seed"));
    b->add("threads", &o->threads, cmd->add_option("--threads", o->threads, "Worker threads"));
    b->add("history", &o->history, cmd->add_option("--history", o->history, "Loss CSV path"));
    cmd->add_option("--config", o->config, "key=value file with defaults");
    cmd->callback([=, &exit_code]() {
      exit_code = run_guarded([&]() {
        if (!o->config.empty()) b->apply_file(o->config);
        const Dataset train = load_dataset(o->dataset, "train");
        const ForwardNet<float> surrogate = load_forward_net(o->surrogate);

        ReconNet<float> net = build_recon_net<float>(
            train.grid_n, surrogate.measurement_count(), o->depth, o->seed);
        net.skip = train.skip;
        net.v0 = surrogate.v0.cast<double>();

        TrainConfig cfg;
        cfg.alpha = o->alpha;
        cfg.beta = o->beta;
        cfg.warmup_epochs = o->warmup;
        cfg.epochs = o->epochs;
        cfg.lr = o->lr;
        cfg.batch = o->batch;
        cfg.seed = o->seed;
        cfg.val_fraction = o->val_fraction;
        cfg.threads = o->threads;
        const TrainHistory hist = train_recon(net, train, cfg, surrogate);

        save_recon_net(o->out, net, cfg);
        write_resolved(*b, "train", sidecar_config(o->out));
        if (!o->history.empty()) hist.write_csv(o->history);
        std::cout << "final l_data " << hist.l_data_train.back() << " (val "
                  << hist.l_data_val.back() << "), l_phy " << hist.l_phy_train.back() << " (val "
                  << hist.l_phy_val.back() << ")\n";
      });
    });
  }

  // --------------------------------------------------------- grid-search-beta
  {
    auto* cmd = app.add_subcommand("grid-search-beta",
                                   "Train one model per beta and score the test split");
    struct Opts {
      std::string dataset, surrogate, out, betas, betas_log, config;
      int warmup = 30, epochs = 100, batch = 32, threads = 2;
      double alpha = 1.0, lr = 1e-3, val_fraction = 0.1;
      std::uint64_t seed = 0;
    };
    auto o = std::make_shared<Opts>();
    auto b = std::make_shared<Bindings>();
    b->add("dataset", &o->dataset,
           cmd->add_option("--dataset", o->dataset, "Dataset directory")->required());
    b->add("surrogate", &o->surrogate,
           cmd->add_option("--surrogate", o->surrogate, "Surrogate checkpoint")->required());
    b->add("out", &o->out, cmd->add_option("--out", o->out, "Output directory")->required());
    b->add("betas", &o->betas, cmd->add_option("--betas", o->betas, "Comma-separated betas"));
    b->add("betas_log", &o->betas_log,
           cmd->add_option("--betas-log", o->betas_log, "exp_lo:exp_hi:count log grid"));
    b->add("alpha", &o->alpha, cmd->add_option("--alpha", o->alpha, "Data-loss weight"));
    b->add("warmup", &o->warmup, cmd->add_option("--warmup", o->warmup, "Warm-up epochs"));
    b->add("epochs", &o->epochs, cmd->add_option("--epochs", o->epochs, "Training epochs"));
    b->add("lr", &o->lr, cmd->add_option("--lr", o->lr, "Adam learning rate"));
    b->add("batch", &o->batch, cmd->add_option("--batch", o->batch, "Batch size"));
    b->add("val_fraction", &o->val_fraction,
           cmd->add_option("--val-fraction", o->val_fraction, "Validation share"));
    b->add("seed", &o->seed, cmd->add_option("--seed", o->seed, "RNG seed"));
    b->add("threads", &o->threads, cmd->add_option("--threads", o->threads, "Worker threads"));
    cmd->add_option("--config", o->config, "key=value file with defaults");
    cmd->callback([=, &exit_code]() {
      exit_code = run_guarded([&]() {
        if (!o->config.empty()) b->apply_file(o->config);
        const std::vector<double> betas = parse_betas(o->betas, o->betas_log);
        const Dataset train = load_dataset(o->dataset, "train");
        const Dataset test = load_dataset(o->dataset, "test");
        const ForwardNet<float> surrogate = load_forward_net(o->surrogate);

        TrainConfig cfg;
        cfg.alpha = o->alpha;
        cfg.warmup_epochs = o->warmup;
        cfg.epochs = o->epochs;
        cfg.lr = o->lr;
        cfg.batch = o->batch;
        cfg.seed = o->seed;
        cfg.val_fraction = o->val_fraction;
        cfg.threads = o->threads;
        const GridSearchResult result = grid_search_beta(betas, train, test, cfg, surrogate);

        const fs::path dir(o->out);
        fs::create_directories(dir);
        std::ofstream os(dir / "scores.csv", std::ios::trunc);
        os.precision(10);
        os << "beta,mean_score\n";
        for (const auto& row : result.table) os << row.beta << "," << row.mean_score << "\n";
        os.close();

        TrainConfig best_cfg = cfg;
        best_cfg.beta = result.best_beta;
        save_recon_net(dir / "best.eitd", result.best_model, best_cfg);
        write_resolved(*b, "grid-search-beta", dir / "config.txt");
        std::cout << "best beta " << result.best_beta << "\n";
        for (const auto& row : result.table)
          std::cout << "beta " << row.beta << " -> S " << row.mean_score << "\n";
      });
    });
  }

  // ------------------------------------------------------------- reconstruct
  {
    auto* cmd = app.add_subcommand("reconstruct", "Reconstruct images from voltage frames");
    struct Opts {
      std::string method, input, out, checkpoint, config;
      int grid = 32, skip = 3, width = 0, baseline_row = 0, tv_iters = 50;
      double lambda_noser = 1e-2, lambda_tv = 1e-3, tv_eps = 1e-6;
    };
    auto o = std::make_shared<Opts>();
    auto b = std::make_shared<Bindings>();
    b->add("method", &o->method,
           cmd->add_option("--method", o->method, "noser|tv|dnn|phydnn")->required());
    b->add("input", &o->input,
           cmd->add_option("--input", o->input, "CSV of voltage frames")->required());
    b->add("out", &o->out, cmd->add_option("--out", o->out, "Output directory")->required());
    b->add("checkpoint", &o->checkpoint,
           cmd->add_option("--checkpoint", o->checkpoint, "Network checkpoint (dnn/phydnn)"));
    b->add("grid", &o->grid, cmd->add_option("--grid", o->grid, "Grid for noser/tv"));
    b->add("skip", &o->skip, cmd->add_option("--skip", o->skip, "Protocol skip for noser/tv"));
    b->add("electrode_width", &o->width,
           cmd->add_option("--electrode-width", o->width, "Electrode width (0 = default)"));
    b->add("baseline_row", &o->baseline_row,
           cmd->add_option("--baseline-row", o->baseline_row, "Baseline row index in the CSV"));
    b->add("lambda_noser", &o->lambda_noser,
           cmd->add_option("--lambda-noser", o->lambda_noser, "NOSER regularization"));
    b->add("lambda_tv", &o->lambda_tv, cmd->add_option("--lambda-tv", o->lambda_tv, "TV weight"));
    b->add("tv_iters", &o->tv_iters, cmd->add_option("--tv-iters", o->tv_iters, "TV iterations"));
    b->add("tv_eps", &o->tv_eps, cmd->add_option("--tv-eps", o->tv_eps, "TV smoothing"));
    cmd->add_option("--config", o->config, "key=value file with defaults");
    cmd->callback([=, &exit_code]() {
      exit_code = run_guarded([&]() {
        if (!o->config.empty()) b->apply_file(o->config);
        const fs::path dir(o->out);
        fs::create_directories(dir);

        std::vector<ConductivityImage> images;
        double latency = 0.0;
        if (o->method == "dnn" || o->method == "phydnn") {
          if (o->checkpoint.empty())
            throw ValueError("--checkpoint is required for method " + o->method);
          ReconNet<float> net = load_recon_net(o->checkpoint);
          const MeasuredFrames frames =
              ingest_measured_frames(o->input, o->baseline_row, net.v0.size() > 0
                                                                    ? static_cast<int>(net.v0.size())
                                                                    : 208);
          // difference imaging against the measured baseline: the CSV's
          // no-contact row becomes the normalization frame
          net.v0 = frames.v0;
          for (const auto& frame : frames.frames) {
            const ReconResult r = reconstruct(net, frame);
            images.push_back(r.image);
            latency += r.seconds;
          }
        } else if (o->method == "noser" || o->method == "tv") {
          const MeasuredFrames frames = ingest_measured_frames(o->input, o->baseline_row);
          const Mesh mesh = build_mesh(o->grid, o->width);
          const Protocol protocol = make_protocol(o->skip);
          const ConductivityImage sigma0 = ConductivityImage::Constant(o->grid, o->grid, 1.0);
          const SensitivityMatrix J = compute_jacobian(mesh, sigma0, protocol);
          for (const auto& frame : frames.frames) {
            const VoltageFrame dv = frame - frames.v0;
            ConductivityImage delta;
            if (o->method == "noser") {
              delta = noser(J, dv, o->lambda_noser);
            } else {
              const TvResult tv = tv_reconstruct(J, dv, o->lambda_tv, o->tv_iters, o->tv_eps);
              if (!tv.converged) std::cerr << "warning: " << tv.warning << "\n";
              delta = tv.delta_sigma;
            }
            images.push_back(sigma0 + delta);
          }
        } else {
          throw ValueError("unknown method " + o->method);
        }

        for (std::size_t i = 0; i < images.size(); ++i) {
          char name[64];
          std::snprintf(name, sizeof(name), "frame_%03zu", i);
          write_container(dir / (std::string(name) + ".eitd"),
                          TensorData::from_matrix(images[i]));
          export_image_pgm(images[i], dir / (std::string(name) + ".pgm"));
        }
        write_resolved(*b, "reconstruct", dir / "config.txt");
        std::cout << "reconstructed " << images.size() << " frame(s)";
        if (latency > 0.0 && !images.empty())
          std::cout << ", mean latency " << latency / static_cast<double>(images.size()) * 1e3
                    << " ms";
        std::cout << "\n";
      });
    });
  }

  // ---------------------------------------------------------------- evaluate
  {
    auto* cmd = app.add_subcommand("evaluate", "Score a method on a dataset split");
    struct Opts {
      std::string dataset, method, checkpoint, out, split = "test", config;
      int tv_iters = 50;
      double lambda_noser = 1e-2, lambda_tv = 1e-3, tv_eps = 1e-6;
    };
    auto o = std::make_shared<Opts>();
    auto b = std::make_shared<Bindings>();
    b->add("dataset", &o->dataset,
           cmd->add_option("--dataset", o->dataset, "Dataset directory")->required());
    b->add("method", &o->method,
           cmd->add_option("--method", o->method, "noser|tv|dnn|phydnn")->required());
    b->add("checkpoint", &o->checkpoint,
           cmd->add_option("--checkpoint", o->checkpoint, "Network checkpoint (dnn/phydnn)"));
    b->add("split", &o->split, cmd->add_option("--split", o->split, "train|test"));
    b->add("out", &o->out, cmd->add_option("--out", o->out, "Metrics CSV path")->required());
    b->add("lambda_noser", &o->lambda_noser,
           cmd->add_option("--lambda-noser", o->lambda_noser, "NOSER regularization"));
    b->add("lambda_tv", &o->lambda_tv, cmd->add_option("--lambda-tv", o->lambda_tv, "TV weight"));
    b->add("tv_iters", &o->tv_iters, cmd->add_option("--tv-iters", o->tv_iters, "TV iterations"));
    b->add("tv_eps", &o->tv_eps, cmd->add_option("--tv-eps", o->tv_eps, "TV smoothing"));
    cmd->add_option("--config", o->config, "key=value file with defaults");
    cmd->callback([=, &exit_code]() {
      exit_code = run_guarded([&]() {
        if (!o->config.empty()) b->apply_file(o->config);
        const Dataset data = load_dataset(o->dataset, o->split);
        std::vector<ConductivityImage> images;

        if (o->method == "dnn" || o->method == "phydnn") {
          if (o->checkpoint.empty())
            throw ValueError("--checkpoint is required for method " + o->method);
          const ReconNet<float> net = load_recon_net(o->checkpoint);
          images = reconstruct_batch(net, data.voltages);
        } else if (o->method == "noser" || o->method == "tv") {
          const Mesh mesh = build_mesh(data.grid_n);
          const Protocol protocol = make_protocol(data.skip);
          const ConductivityImage sigma0 =
              ConductivityImage::Constant(data.grid_n, data.grid_n, 1.0);
          const SensitivityMatrix J = compute_jacobian(mesh, sigma0, protocol);
          const VoltageFrame v0 = load_baseline(o->dataset);
          for (const auto& v : data.voltages) {
            const VoltageFrame dv = v - v0;
            if (o->method == "noser") {
              images.push_back(sigma0 + noser(J, dv, o->lambda_noser));
            } else {
              images.push_back(
                  sigma0 + tv_reconstruct(J, dv, o->lambda_tv, o->tv_iters, o->tv_eps).delta_sigma);
            }
          }
        } else {
          throw ValueError("unknown method " + o->method);
        }

        std::vector<MetricsReport> rows;
        rows.reserve(images.size());
        for (std::size_t i = 0; i < images.size(); ++i)
          rows.push_back(evaluate_pair(images[i], data.sigmas[i]));
        const MetricsSummary summary = summarize(rows);
        write_metrics_csv(o->out, rows, summary);
        write_resolved(*b, "evaluate", sidecar_config(o->out));
        std::cout << o->method << " mean: ssim " << summary.mean.ssim << ", cc " << summary.mean.cc
                  << ", rie " << summary.mean.rie << ", psnr " << summary.mean.psnr_db << " dB, S "
                  << summary.mean.score_s << "\n";
      });
    });
  }

  // ------------------------------------------------------------------ ingest
  {
    auto* cmd = app.add_subcommand("ingest", "Split a measured CSV into baseline and frames");
    struct Opts {
      std::string input, out, config;
      int baseline_row = 0;
    };
    auto o = std::make_shared<Opts>();
    auto b = std::make_shared<Bindings>();
    b->add("input", &o->input, cmd->add_option("--input", o->input, "CSV path")->required());
    b->add("out", &o->out, cmd->add_option("--out", o->out, "Output directory")->required());
    b->add("baseline_row", &o->baseline_row,
           cmd->add_option("--baseline-row", o->baseline_row, "Baseline row index"));
    cmd->add_option("--config", o->config, "key=value file with defaults");
    cmd->callback([=, &exit_code]() {
      exit_code = run_guarded([&]() {
        if (!o->config.empty()) b->apply_file(o->config);
        const MeasuredFrames frames = ingest_measured_frames(o->input, o->baseline_row);
        const fs::path dir(o->out);
        fs::create_directories(dir);
        write_container(dir / "v0.eitd", TensorData::from_vector(frames.v0));
        for (std::size_t i = 0; i < frames.frames.size(); ++i) {
          char name[64];
          std::snprintf(name, sizeof(name), "frame_%03zu.eitd", i);
          write_container(dir / name, TensorData::from_vector(frames.frames[i]));
        }
        write_resolved(*b, "ingest", dir / "config.txt");
        std::cout << "baseline + " << frames.frames.size() << " frame(s) written to "
                  << dir.string() << "\n";
      });
    });
  }

  // ------------------------------------------------------------ export-image
  {
    auto* cmd = app.add_subcommand("export-image", "Render a conductivity container as P5");
    struct Opts {
      std::string input, out;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--input", o->input, "Image container (.eitd)")->required();
    cmd->add_option("--out", o->out, "Output .pgm path")->required();
    cmd->callback([=, &exit_code]() {
      exit_code = run_guarded([&]() {
        const ConductivityImage img = image_from_container(read_container(o->input));
        export_image_pgm(img, o->out);
        std::cout << "wrote " << o->out << "\n";
      });
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints usage/help text
    return code == 0 ? 0 : 1;
  }
  return exit_code;
}
