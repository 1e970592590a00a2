#pragma once

#include <vector>

#include <Eigen/Core>

#include "eitkit/common.hpp"

namespace eitkit {

/// Pearson correlation over flattened pixels; 0 (with *constant_input set)
/// when either image has zero variance.
double pearson_cc(const Eigen::Ref<const Eigen::MatrixXd>& a,
                  const Eigen::Ref<const Eigen::MatrixXd>& b, bool* constant_input = nullptr);

/// Relative image error ||est - gt||_2 / ||gt||_2.
double rie(const Eigen::Ref<const Eigen::MatrixXd>& est,
           const Eigen::Ref<const Eigen::MatrixXd>& gt);

/// 10 log10(data_range^2 / MSE); +inf when est == gt.
double psnr(const Eigen::Ref<const Eigen::MatrixXd>& est,
            const Eigen::Ref<const Eigen::MatrixXd>& gt, double data_range = 1.0);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Mean local SSIM with a Gaussian window over valid (fully interior)
/// positions. Images must be at least window x window.
double ssim(const Eigen::Ref<const Eigen::MatrixXd>& a,
            const Eigen::Ref<const Eigen::MatrixXd>& b, const SsimParams& params = {});

/// Model-selection score S = 0.25 (SSIM + CC + PSNR) - 0.25 RIE, PSNR in dB.
double weighted_score(double ssim_value, double cc, double psnr_db, double rie_value);

struct MetricsReport {
  double ssim = 0.0;
  double cc = 0.0;
  double rie = 0.0;
  double psnr_db = 0.0;
  double score_s = 0.0;
  bool cc_constant_input = false;
  bool psnr_infinite = false;
};

MetricsReport evaluate_pair(const Eigen::Ref<const Eigen::MatrixXd>& est,
                            const Eigen::Ref<const Eigen::MatrixXd>& gt);

/// Column means over reports; +inf PSNR samples are excluded from the psnr
/// and S means (their count is reported separately).
struct MetricsSummary {
  MetricsReport mean;
  int count = 0;
  int psnr_inf_excluded = 0;
};

MetricsSummary summarize(const std::vector<MetricsReport>& reports);

}  // namespace eitkit
