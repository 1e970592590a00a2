#pragma once

// Finite-difference gradient verification harness shared by the autodiff
// unit tests and the acceptance suite. Scalar objective sum(coeff . output);
// every parameter and input entry is checked by 64-bit central differences.

#include "eitkit/autodiff.hpp"

namespace eitkit::testing {

inline double max_gradient_error(ad::Graph& g, std::uint64_t seed, int batch = 2,
                                 double step = 1e-6) {
  Rng rng(seed);
  ad::ParameterSet<double> params = ad::ParameterSet<double>::zeros(g);
  for (auto& t : params.values)
    for (Eigen::Index i = 0; i < t.v.size(); ++i) t.v[i] = rng.normal() * 0.5;

  const ad::Shape per_sample = g.nodes()[static_cast<std::size_t>(g.input())].out;
  ad::Shape in_shape;
  in_shape.rank = per_sample.rank + 1;
  in_shape.d[0] = batch;
  for (int i = 0; i < per_sample.rank; ++i)
    in_shape.d[static_cast<std::size_t>(i + 1)] = per_sample.d[static_cast<std::size_t>(i)];
  ad::Tensor<double> input(in_shape);
  for (Eigen::Index i = 0; i < input.v.size(); ++i) input.v[i] = rng.normal();

  ad::Tape<double> tape;
  const ad::Tensor<double>& out = ad::forward_eval(g, params, input, tape);
  ad::Tensor<double> coeff(out.shape);
  for (Eigen::Index i = 0; i < coeff.v.size(); ++i) coeff.v[i] = rng.normal();

  ad::Gradients<double> grads;
  ad::backward(g, params, tape, coeff, grads);

  auto objective = [&]() {
    ad::Tape<double> t;
    const ad::Tensor<double>& o = ad::forward_eval(g, params, input, t);
    return (o.v * coeff.v).sum();
  };

  double max_abs_grad = 1e-8;
  for (const auto& pg : grads.params)
    if (pg.v.size() > 0) max_abs_grad = std::max(max_abs_grad, pg.v.abs().maxCoeff());
  if (grads.input.v.size() > 0)
    max_abs_grad = std::max(max_abs_grad, grads.input.v.abs().maxCoeff());

  double worst = 0.0;
  for (std::size_t slot = 0; slot < params.values.size(); ++slot) {
    auto& t = params.values[slot];
    for (Eigen::Index i = 0; i < t.v.size(); ++i) {
      const double keep = t.v[i];
      t.v[i] = keep + step;
      const double fp = objective();
      t.v[i] = keep - step;
      const double fm = objective();
      t.v[i] = keep;
      const double fd = (fp - fm) / (2.0 * step);
      worst = std::max(worst, std::abs(fd - grads.params[slot].v[i]) / max_abs_grad);
    }
  }
  for (Eigen::Index i = 0; i < input.v.size(); ++i) {
    const double keep = input.v[i];
    input.v[i] = keep + step;
    const double fp = objective();
    input.v[i] = keep - step;
    const double fm = objective();
    input.v[i] = keep;
    const double fd = (fp - fm) / (2.0 * step);
    worst = std::max(worst, std::abs(fd - grads.input.v[i]) / max_abs_grad);
  }
  return worst;
}

}  // namespace eitkit::testing
