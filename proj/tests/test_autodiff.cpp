#include <doctest.h>

#include <functional>

#include "eitkit/autodiff.hpp"
#include "ad_check.hpp"

using namespace eitkit;
using namespace eitkit::ad;


TEST_CASE("finite-difference gradient checks for every layer kind") {
  SUBCASE("dense") {
    Graph g;
    g.add_dense(g.add_input(Shape::of({5})), 4, "fc");
    CHECK(testing::max_gradient_error(g, 1) < 1e-4);
  }
  SUBCASE("conv3x3") {
    Graph g;
    g.add_conv3x3(g.add_input(Shape::of({2, 4, 4})), 3, "c");
    CHECK(testing::max_gradient_error(g, 2) < 1e-4);
  }
  SUBCASE("conv1x1") {
    Graph g;
    g.add_conv1x1(g.add_input(Shape::of({3, 4, 4})), 2, "c");
    CHECK(testing::max_gradient_error(g, 3) < 1e-4);
  }
  SUBCASE("relu") {
    Graph g;
    g.add_relu(g.add_input(Shape::of({2, 3, 3})));
    CHECK(testing::max_gradient_error(g, 4) < 1e-4);
  }
  SUBCASE("maxpool2") {
    Graph g;
    g.add_maxpool2(g.add_input(Shape::of({2, 4, 4})));
    CHECK(testing::max_gradient_error(g, 5) < 1e-4);
  }
  SUBCASE("nearest_upsample2") {
    Graph g;
    g.add_upsample2(g.add_input(Shape::of({2, 3, 3})));
    CHECK(testing::max_gradient_error(g, 6) < 1e-4);
  }
  SUBCASE("concat_channels") {
    Graph g;
    const int in = g.add_input(Shape::of({2, 4, 4}));
    const int left = g.add_relu(in);
    const int right = g.add_conv3x3(in, 2, "c");
    g.add_concat_channels(left, right);
    CHECK(testing::max_gradient_error(g, 7) < 1e-4);
  }
  SUBCASE("global_mean") {
    Graph g;
    g.add_global_mean(g.add_input(Shape::of({3, 4, 4})));
    CHECK(testing::max_gradient_error(g, 8) < 1e-4);
  }
  SUBCASE("reshape") {
    Graph g;
    const int in = g.add_input(Shape::of({2, 4, 4}));
    g.add_dense(g.add_reshape(in, Shape::of({32})), 3, "fc");
    CHECK(testing::max_gradient_error(g, 9) < 1e-4);
  }
  SUBCASE("composite encoder-decoder") {
    Graph g;
    int x = g.add_input(Shape::of({1, 8, 8}));
    x = g.add_relu(g.add_conv3x3(x, 4, "e1"));
    const int skip = x;
    x = g.add_maxpool2(x);
    x = g.add_relu(g.add_conv3x3(x, 8, "e2"));
    x = g.add_upsample2(x);
    x = g.add_concat_channels(x, skip);
    x = g.add_conv1x1(x, 1, "out");
    g.set_output(x);
    CHECK(testing::max_gradient_error(g, 10) < 1e-4);
  }
}

TEST_CASE("dense with identity weights is the identity") {
  Graph g;
  g.add_dense(g.add_input(Shape::of({3})), 3, "fc");
  ParameterSet<double> params = ParameterSet<double>::zeros(g);
  params[0].v.setZero();
  for (int i = 0; i < 3; ++i) params[0].v[i * 3 + i] = 1.0;

  Tensor<double> input = Tensor<double>::zeros({2, 3});
  input.v << 1, 2, 3, -4, 0, 4.5;
  Tape<double> tape;
  const auto& out = forward_eval(g, params, input, tape);
  CHECK((out.v - input.v).abs().maxCoeff() == 0.0);
}

TEST_CASE("relu clamps negatives") {
  Graph g;
  g.add_relu(g.add_input(Shape::of({3})));
  ParameterSet<double> params = ParameterSet<double>::zeros(g);
  Tensor<double> input = Tensor<double>::zeros({1, 3});
  input.v << -1, 0, 2;
  Tape<double> tape;
  const auto& out = forward_eval(g, params, input, tape);
  CHECK(out.v[0] == 0.0);
  CHECK(out.v[1] == 0.0);
  CHECK(out.v[2] == 2.0);

  // backward at a negative input routes zero gradient
  Tensor<double> up = Tensor<double>::zeros({1, 3});
  up.v << 1, 1, 1;
  Gradients<double> grads;
  backward(g, params, tape, up, grads);
  CHECK(grads.input.v[0] == 0.0);
  CHECK(grads.input.v[2] == 1.0);
}

TEST_CASE("conv3x3 all-ones kernel turns an impulse into a 3x3 plateau") {
  Graph g;
  g.add_conv3x3(g.add_input(Shape::of({1, 5, 5})), 1, "c");
  ParameterSet<double> params = ParameterSet<double>::zeros(g);
  params[0].v.setConstant(1.0);  // 1x1x3x3 kernel of ones

  Tensor<double> input = Tensor<double>::zeros({1, 1, 5, 5});
  input.v[2 * 5 + 2] = 1.0;  // centered impulse
  Tape<double> tape;
  const auto& out = forward_eval(g, params, input, tape);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      const double want = (std::abs(r - 2) <= 1 && std::abs(c - 2) <= 1) ? 1.0 : 0.0;
      CHECK(out.v[r * 5 + c] == want);
    }
}

TEST_CASE("maxpool tie-break routes to the first row-major index") {
  Graph g;
  g.add_maxpool2(g.add_input(Shape::of({1, 2, 2})));
  ParameterSet<double> params = ParameterSet<double>::zeros(g);
  Tensor<double> input = Tensor<double>::zeros({1, 1, 2, 2});
  input.v.setConstant(5.0);
  Tape<double> tape;
  const auto& out = forward_eval(g, params, input, tape);
  CHECK(out.v[0] == 5.0);

  Tensor<double> up = Tensor<double>::zeros({1, 1, 1, 1});
  up.v[0] = 1.0;
  Gradients<double> grads;
  backward(g, params, tape, up, grads);
  CHECK(grads.input.v[0] == 1.0);
  CHECK(grads.input.v[1] == 0.0);
  CHECK(grads.input.v[2] == 0.0);
  CHECK(grads.input.v[3] == 0.0);
}

TEST_CASE("scalar chain rule: y = w x, L = y^2") {
  Graph g;
  g.add_dense(g.add_input(Shape::of({1})), 1, "fc");
  ParameterSet<double> params = ParameterSet<double>::zeros(g);
  params[0].v[0] = 1.0;  // w
  Tensor<double> input = Tensor<double>::zeros({1, 1});
  input.v[0] = 2.0;  // x
  Tape<double> tape;
  const auto& y = forward_eval(g, params, input, tape);
  // dL/dw = 2 y x = 8 at w=1, x=2
  Tensor<double> up = Tensor<double>::zeros({1, 1});
  up.v[0] = 2.0 * y.v[0];
  Gradients<double> grads;
  backward(g, params, tape, up, grads);
  CHECK(grads.params[0].v[0] == doctest::Approx(8.0).epsilon(1e-14));
}

TEST_CASE("graph shape violations are rejected at construction") {
  Graph g;
  const int in = g.add_input(Shape::of({2, 5, 5}));
  CHECK_THROWS_AS(g.add_dense(in, 3, "fc"), ShapeError);        // dense wants rank 1
  CHECK_THROWS_AS(g.add_maxpool2(g.add_relu(in)), ShapeError);  // odd spatial dims

  Graph g2;
  const int a = g2.add_input(Shape::of({1, 4, 4}));
  const int b = g2.add_conv3x3(a, 2, "c");
  Graph g3;
  const int c = g3.add_input(Shape::of({1, 6, 6}));
  (void)b;
  CHECK_THROWS_AS(g3.add_reshape(c, Shape::of({35})), ShapeError);
}

TEST_CASE("forward rejects a wrong-shaped input, backward rejects stale tapes") {
  Graph g;
  g.add_dense(g.add_input(Shape::of({4})), 2, "fc");
  ParameterSet<double> params = ParameterSet<double>::zeros(g);

  Tensor<double> bad = Tensor<double>::zeros({2, 5});
  Tape<double> tape;
  CHECK_THROWS_AS(forward_eval(g, params, bad, tape), ShapeError);

  Tensor<double> good = Tensor<double>::zeros({2, 4});
  forward_eval(g, params, good, tape);

  AdamState<double> adam = AdamState<double>::init(params);
  Gradients<double> grads;
  Tensor<double> up = Tensor<double>::zeros({2, 2});
  backward(g, params, tape, up, grads);
  adam_step(params, grads, adam, 1e-3);  // bumps the revision
  CHECK_THROWS_AS(backward(g, params, tape, up, grads), StaleTapeError);
}

TEST_CASE("NaN check mode reports the offending op") {
  Graph g;
  g.add_relu(g.add_input(Shape::of({2})));
  ParameterSet<double> params = ParameterSet<double>::zeros(g);
  Tensor<double> input = Tensor<double>::zeros({1, 2});
  input.v[0] = std::numeric_limits<double>::quiet_NaN();
  Tape<double> tape;
  CHECK_THROWS_AS(forward_eval(g, params, input, tape, true), NonFiniteError);
}

TEST_CASE("adam analytic checks") {
  Graph g;
  g.add_param("p", Shape::of({1}));

  SUBCASE("first step with unit gradient moves by lr/(1+eps)") {
    ParameterSet<double> params = ParameterSet<double>::zeros(g);
    params.values[0].v[0] = 1.0;
    AdamState<double> adam = AdamState<double>::init(params);
    Gradients<double> grads;
    grads.params.emplace_back(Shape::of({1}));
    grads.params[0].v[0] = 1.0;
    adam_step(params, grads, adam, 1e-3);
    const double want = 1.0 - 1e-3 / (1.0 + 1e-8);
    CHECK(std::abs(params.values[0].v[0] - want) < 1e-12);
  }

  SUBCASE("zero gradient with zero state leaves parameters unchanged") {
    ParameterSet<double> params = ParameterSet<double>::zeros(g);
    params.values[0].v[0] = 0.7;
    AdamState<double> adam = AdamState<double>::init(params);
    Gradients<double> grads;
    grads.params.emplace_back(Shape::of({1}));
    adam_step(params, grads, adam, 1e-3);
    CHECK(params.values[0].v[0] == 0.7);
  }

  SUBCASE("two steps with constant gradient match the closed-form recursion") {
    const double g0 = 3.5, lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ParameterSet<double> params = ParameterSet<double>::zeros(g);
    params.values[0].v[0] = 2.0;
    AdamState<double> adam = AdamState<double>::init(params);
    Gradients<double> grads;
    grads.params.emplace_back(Shape::of({1}));
    grads.params[0].v[0] = g0;
    adam_step(params, grads, adam, lr, b1, b2, eps);
    adam_step(params, grads, adam, lr, b1, b2, eps);

    // hand recursion
    double m = 0, v = 0, p = 2.0;
    for (int t = 1; t <= 2; ++t) {
      m = b1 * m + (1 - b1) * g0;
      v = b2 * v + (1 - b2) * g0 * g0;
      const double mhat = m / (1 - std::pow(b1, t));
      const double vhat = v / (1 - std::pow(b2, t));
      p -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    CHECK(std::abs(params.values[0].v[0] - p) < 1e-12);
  }
}

TEST_CASE("training arithmetic is bitwise deterministic") {
  auto run = [](std::uint64_t seed) {
    Graph g;
    int x = g.add_input(Shape::of({1, 4, 4}));
    x = g.add_relu(g.add_conv3x3(x, 2, "c"));
    x = g.add_global_mean(x);
    x = g.add_dense(x, 3, "fc");
    g.set_output(x);
    Rng rng(seed);
    ParameterSet<float> params = init_parameters<float>(g, rng);
    AdamState<float> adam = AdamState<float>::init(params);
    Tensor<float> input = Tensor<float>::zeros({2, 1, 4, 4});
    for (Eigen::Index i = 0; i < input.v.size(); ++i)
      input.v[i] = static_cast<float>(rng.normal());
    for (int step = 0; step < 5; ++step) {
      Tape<float> tape;
      const auto& out = forward_eval(g, params, input, tape);
      Tensor<float> up(out.shape);
      up.v = out.v;  // L = 0.5 sum out^2
      Gradients<float> grads;
      backward(g, params, tape, up, grads);
      adam_step(params, grads, adam, 1e-3);
    }
    return params.byte_hash();
  };
  CHECK(run(42) == run(42));
  CHECK(run(42) != run(43));
}
