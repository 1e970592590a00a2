#include <doctest.h>

#include "eitkit/metrics.hpp"
#include "metrics_reference.hpp"

using namespace eitkit;

namespace {

Eigen::MatrixXd random_image(int n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  Eigen::MatrixXd m(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) m(r, c) = rng.uniform(lo, hi);
  return m;
}

}  // namespace

TEST_CASE("pearson correlation basics") {
  const Eigen::MatrixXd x = random_image(8, 1);
  CHECK(pearson_cc(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson_cc(x, Eigen::MatrixXd(-x)) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(pearson_cc(x, x) == pearson_cc(x, x));

  // invariance under positive affine maps of either argument
  const Eigen::MatrixXd y = random_image(8, 2);
  const double base = pearson_cc(x, y);
  CHECK(pearson_cc(Eigen::MatrixXd(2.5 * x.array() + 3.0), y) ==
        doctest::Approx(base).epsilon(1e-12));
  CHECK(pearson_cc(x, Eigen::MatrixXd(0.1 * y.array() - 7.0)) ==
        doctest::Approx(base).epsilon(1e-12));
  CHECK(pearson_cc(x, y) == doctest::Approx(pearson_cc(y, x)).epsilon(1e-14));
}

TEST_CASE("pearson correlation hand-computed 3x3 pair") {
  Eigen::MatrixXd a(3, 3), b(3, 3);
  a << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  b << 2, 1, 4, 3, 6, 5, 8, 7, 9;
  // direct covariance formula
  const double ma = a.mean(), mb = b.mean();
  double cov = 0, va = 0, vb = 0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      cov += (a(r, c) - ma) * (b(r, c) - mb);
      va += (a(r, c) - ma) * (a(r, c) - ma);
      vb += (b(r, c) - mb) * (b(r, c) - mb);
    }
  const double want = cov / std::sqrt(va * vb);
  CHECK(pearson_cc(a, b) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("pearson correlation flags constant inputs") {
  const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(4, 4, 2.0);
  const Eigen::MatrixXd x = random_image(4, 3);
  bool flag = false;
  CHECK(pearson_cc(flat, x, &flag) == 0.0);
  CHECK(flag);
}

TEST_CASE("relative image error") {
  const Eigen::MatrixXd gt = random_image(6, 4, 0.5, 1.5);
  CHECK(rie(gt, gt) == 0.0);
  CHECK(rie(Eigen::MatrixXd(Eigen::MatrixXd::Zero(6, 6)), gt) == doctest::Approx(1.0));
  CHECK(rie(Eigen::MatrixXd(2.0 * gt), gt) == doctest::Approx(1.0));
  CHECK_THROWS_AS(rie(gt, Eigen::MatrixXd(Eigen::MatrixXd::Zero(6, 6))), ValueError);
  // rie is not affine-invariant (contrast with cc)
  CHECK(rie(Eigen::MatrixXd(gt.array() + 1.0), gt) > 0.0);
}

TEST_CASE("psnr basics and oracle") {
  Eigen::MatrixXd gt = Eigen::MatrixXd::Zero(10, 10);
  Eigen::MatrixXd est = Eigen::MatrixXd::Constant(10, 10, 0.1);  // MSE = 0.01
  CHECK(psnr(est, gt) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(std::isinf(psnr(gt, gt)));

  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const Eigen::MatrixXd a = random_image(16, seed);
    const Eigen::MatrixXd b = random_image(16, seed + 100);
    CHECK(std::abs(psnr(a, b) - testing::psnr_reference(a, b)) < 1e-9);
  }
}

TEST_CASE("ssim basics") {
  const Eigen::MatrixXd x = random_image(16, 5);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(x, random_image(16, 6)) ==
        doctest::Approx(ssim(random_image(16, 6), x)).epsilon(1e-12));
  CHECK_THROWS_AS(ssim(random_image(8, 7), random_image(8, 8)), ValueError);
}

TEST_CASE("ssim closed form on constant images") {
  const Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(12, 12);
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Constant(12, 12, 1.0);
  // (2*0*1+C1)(0+C2) / ((0+1+C1)(0+C2)) = C1/(1+C1), C1 = 1e-4
  const double want = 1e-4 / (1.0 + 1e-4);
  CHECK(ssim(zeros, ones) == doctest::Approx(want).epsilon(1e-10));
  CHECK(want == doctest::Approx(9.999e-5).epsilon(1e-4));
}

TEST_CASE("ssim matches the reference implementation on random pairs") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Eigen::MatrixXd a = random_image(20, 30 + seed);
    const Eigen::MatrixXd b =
        0.7 * a + 0.3 * random_image(20, 60 + seed);  // correlated pair
    CHECK(std::abs(ssim(a, b) - testing::ssim_reference(a, b)) < 1e-6);
  }
}

TEST_CASE("weighted score formula and Table-style arithmetic") {
  CHECK(weighted_score(0, 0, 0, 0) == 0.0);

  const double s_dnn = weighted_score(0.9754, 0.9875, 33.1230, 0.0295);
  const double s_phy = weighted_score(0.9765, 0.9880, 33.2950, 0.0290);
  CHECK(std::abs(s_dnn - 8.7641) < 1e-9);
  CHECK(std::abs(s_phy - 8.807625) < 1e-9);
  CHECK(s_phy > s_dnn);
}

TEST_CASE("summaries exclude infinite psnr with a count") {
  std::vector<MetricsReport> reports;
  MetricsReport a;
  a.ssim = 0.5;
  a.cc = 0.5;
  a.rie = 0.1;
  a.psnr_db = 20.0;
  a.score_s = weighted_score(a.ssim, a.cc, a.psnr_db, a.rie);
  MetricsReport b = a;
  b.psnr_db = std::numeric_limits<double>::infinity();
  b.psnr_infinite = true;
  reports.push_back(a);
  reports.push_back(b);
  const MetricsSummary s = summarize(reports);
  CHECK(s.count == 2);
  CHECK(s.psnr_inf_excluded == 1);
  CHECK(s.mean.psnr_db == doctest::Approx(20.0));
  CHECK(std::isfinite(s.mean.score_s));
}

TEST_CASE("evaluate_pair wires everything together") {
  const Eigen::MatrixXd gt = random_image(16, 70, 0.2, 1.0);
  const MetricsReport r = evaluate_pair(gt, gt);
  CHECK(r.cc == doctest::Approx(1.0));
  CHECK(r.ssim == doctest::Approx(1.0));
  CHECK(r.rie == 0.0);
  CHECK(r.psnr_infinite);
}
