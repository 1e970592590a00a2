#include "eitkit/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace eitkit {

double pearson_cc(const Eigen::Ref<const Eigen::MatrixXd>& a,
                  const Eigen::Ref<const Eigen::MatrixXd>& b, bool* constant_input) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValueError("pearson_cc: shape mismatch");
  if (constant_input) *constant_input = false;
  const double n = static_cast<double>(a.size());
  const double ma = a.mean(), mb = b.mean();
  const Eigen::ArrayXXd da = a.array() - ma;
  const Eigen::ArrayXXd db = b.array() - mb;
  const double va = (da * da).sum() / n;
  const double vb = (db * db).sum() / n;
  if (va == 0.0 || vb == 0.0) {
    if (constant_input) *constant_input = true;
    return 0.0;
  }
  return (da * db).sum() / n / std::sqrt(va * vb);
}

double rie(const Eigen::Ref<const Eigen::MatrixXd>& est,
           const Eigen::Ref<const Eigen::MatrixXd>& gt) {
  if (est.rows() != gt.rows() || est.cols() != gt.cols())
    throw ValueError("rie: shape mismatch");
  const double denom = gt.norm();
  if (denom == 0.0) throw ValueError("rie: ground truth has zero norm");
  return (est - gt).norm() / denom;
}

double psnr(const Eigen::Ref<const Eigen::MatrixXd>& est,
            const Eigen::Ref<const Eigen::MatrixXd>& gt, double data_range) {
  if (est.rows() != gt.rows() || est.cols() != gt.cols())
    throw ValueError("psnr: shape mismatch");
  const double mse = (est - gt).squaredNorm() / static_cast<double>(est.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

namespace {

Eigen::VectorXd gaussian_kernel(int window, double sigma) {
  Eigen::VectorXd k(window);
  const double c = (window - 1) / 2.0;
  for (int i = 0; i < window; ++i) k[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
  return k / k.sum();
}

// Valid-mode separable correlation with a symmetric kernel: output is
// (rows - w + 1) x (cols - w + 1).
Eigen::MatrixXd filter_valid(const Eigen::MatrixXd& img, const Eigen::VectorXd& k) {
  const int w = static_cast<int>(k.size());
  const Eigen::Index ro = img.rows() - w + 1;
  const Eigen::Index co = img.cols() - w + 1;
  Eigen::MatrixXd rows(ro, img.cols());
  for (Eigen::Index i = 0; i < ro; ++i)
    rows.row(i) = k.transpose() * img.middleRows(i, w);
  Eigen::MatrixXd out(ro, co);
  for (Eigen::Index j = 0; j < co; ++j)
    out.col(j) = rows.middleCols(j, w) * k;
  return out;
}

}  // namespace

double ssim(const Eigen::Ref<const Eigen::MatrixXd>& a,
            const Eigen::Ref<const Eigen::MatrixXd>& b, const SsimParams& p) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValueError("ssim: shape mismatch");
  if (a.rows() < p.window || a.cols() < p.window)
    throw ValueError("ssim: image smaller than the " + std::to_string(p.window) + "x" +
                     std::to_string(p.window) + " window");

  const Eigen::VectorXd k = gaussian_kernel(p.window, p.sigma);
  const Eigen::MatrixXd ma = filter_valid(a, k);
  const Eigen::MatrixXd mb = filter_valid(b, k);
  const Eigen::MatrixXd maa = filter_valid(a.cwiseProduct(a), k);
  const Eigen::MatrixXd mbb = filter_valid(b.cwiseProduct(b), k);
  const Eigen::MatrixXd mab = filter_valid(a.cwiseProduct(b), k);

  const Eigen::ArrayXXd mu_a = ma.array();
  const Eigen::ArrayXXd mu_b = mb.array();
  const Eigen::ArrayXXd var_a = maa.array() - mu_a.square();
  const Eigen::ArrayXXd var_b = mbb.array() - mu_b.square();
  const Eigen::ArrayXXd cov = mab.array() - mu_a * mu_b;

  const double c1 = (p.k1 * p.data_range) * (p.k1 * p.data_range);
  const double c2 = (p.k2 * p.data_range) * (p.k2 * p.data_range);
  const Eigen::ArrayXXd num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
  const Eigen::ArrayXXd den = (mu_a.square() + mu_b.square() + c1) * (var_a + var_b + c2);
  return (num / den).mean();
}

double weighted_score(double ssim_value, double cc, double psnr_db, double rie_value) {
  return 0.25 * (ssim_value + cc + psnr_db) - 0.25 * rie_value;
}

MetricsReport evaluate_pair(const Eigen::Ref<const Eigen::MatrixXd>& est,
                            const Eigen::Ref<const Eigen::MatrixXd>& gt) {
  MetricsReport r;
  r.ssim = ssim(est, gt);
  r.cc = pearson_cc(est, gt, &r.cc_constant_input);
  r.rie = rie(est, gt);
  r.psnr_db = psnr(est, gt);
  r.psnr_infinite = std::isinf(r.psnr_db);
  r.score_s = weighted_score(r.ssim, r.cc, r.psnr_db, r.rie);
  return r;
}

MetricsSummary summarize(const std::vector<MetricsReport>& reports) {
  MetricsSummary s;
  s.count = static_cast<int>(reports.size());
  if (reports.empty()) return s;
  int finite = 0;
  for (const auto& r : reports) {
    s.mean.ssim += r.ssim;
    s.mean.cc += r.cc;
    s.mean.rie += r.rie;
    if (r.psnr_infinite) {
      ++s.psnr_inf_excluded;
    } else {
      s.mean.psnr_db += r.psnr_db;
      s.mean.score_s += r.score_s;
      ++finite;
    }
  }
  s.mean.ssim /= s.count;
  s.mean.cc /= s.count;
  s.mean.rie /= s.count;
  if (finite > 0) {
    s.mean.psnr_db /= finite;
    s.mean.score_s /= finite;
  }
  return s;
}

}  // namespace eitkit
