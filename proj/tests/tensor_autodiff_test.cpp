#include <cmath>

#include "dannet/graph.hpp"
#include "dannet/rng.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"

using namespace dannet;
using dannet::testing::fd_gradient;
using dannet::testing::max_rel_err;
using dannet::testing::to_double;

namespace {

Tensor<double> random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Smooth scalar readout used by op-level gradient checks: cross-entropy on
// globally pooled channels mixes every output with distinct weights.
double conv_loss(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                 const std::vector<int>& targets, Pad pad) {
  Graph<double> g;
  auto logits = g.global_avg_pool(g.conv2d(g.input(x), g.input(w), g.input(b), pad));
  return g.value(g.softmax_cross_entropy(logits, targets))[0];
}

}  // namespace

TEST_SUITE("tensor_autodiff") {

TEST_CASE("tensor invariants and serialization") {
  Tensor<double> t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.all_finite());
  CHECK_THROWS_AS(Tensor<double>({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>({2}, {1.0, 2.0, 3.0}), ShapeError);

  Rng rng(11);
  Tensor<double> d = random_tensor(rng, {2, 3, 4});
  save_tensor(d, "/tmp/dannet_t64.dgt");
  Tensor<double> d2 = load_tensor<double>("/tmp/dannet_t64.dgt");
  CHECK(d2.shape == d.shape);
  CHECK(d2.data == d.data);

  Tensor<float> f({3, 2}, {1.f, 2.f, 3.f, 4.f, 5.f, 6.f});
  save_tensor(f, "/tmp/dannet_t32.dgt");
  Tensor<float> f2 = load_tensor<float>("/tmp/dannet_t32.dgt");
  CHECK(f2.data == f.data);
  // Width is recovered from the payload, so cross-precision reads work.
  Tensor<double> f3 = load_tensor<double>("/tmp/dannet_t32.dgt");
  CHECK(f3.data[2] == doctest::Approx(3.0));

  CHECK_THROWS_AS(load_tensor<double>("/tmp/definitely_missing.dgt"), DataError);
}

TEST_CASE("conv2d forward basics") {
  // All-zero input stays zero under any kernel with zero bias.
  Graph<double> g;
  Rng rng(1);
  auto x = g.input(Tensor<double>({1, 2, 4, 4}));
  auto w = g.input(random_tensor(rng, {3, 2, 3, 3}));
  auto b = g.input(Tensor<double>({3}));
  auto y = g.conv2d(x, w, b, Pad::kSame);
  CHECK(g.value(y).shape == std::vector<int>{1, 3, 4, 4});
  for (double v : g.value(y).data) CHECK(v == 0.0);

  // 1x1 scalar multiply-add: 2*3 + 1 = 7.
  Graph<double> g2;
  auto y2 = g2.conv2d(g2.input(Tensor<double>({1, 1, 1, 1}, {2.0})),
                      g2.input(Tensor<double>({1, 1, 1, 1}, {3.0})), g2.input(Tensor<double>({1}, {1.0})),
                      Pad::kSame);
  CHECK(g2.value(y2)[0] == doctest::Approx(7.0));

  // Valid padding shrinks 3x3 outputs by 2.
  Graph<double> g3;
  auto y3 = g3.conv2d(g3.input(Tensor<double>({1, 1, 5, 6})), g3.input(Tensor<double>({1, 1, 3, 3})),
                      g3.input(Tensor<double>({1})), Pad::kValid);
  CHECK(g3.value(y3).shape == std::vector<int>{1, 1, 3, 4});
}

TEST_CASE("conv2d rejects mismatched shapes") {
  Graph<double> g;
  auto x = g.input(Tensor<double>({1, 3, 4, 4}));
  auto w = g.input(Tensor<double>({2, 4, 3, 3}));
  auto b = g.input(Tensor<double>({2}));
  CHECK_THROWS_WITH_AS(g.conv2d(x, w, b, Pad::kSame),
                       doctest::Contains("[1,3,4,4]"), ShapeError);
  auto w5 = g.input(Tensor<double>({2, 3, 5, 5}));
  CHECK_THROWS_AS(g.conv2d(x, w5, b, Pad::kSame), ShapeError);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(42);
  Tensor<double> x = random_tensor(rng, {2, 3, 5, 5});
  Tensor<double> w = random_tensor(rng, {4, 3, 3, 3});
  Tensor<double> b = random_tensor(rng, {4});
  std::vector<int> targets = {1, 3};

  Graph<double> g;
  auto xi = g.input(x), wi = g.input(w), bi = g.input(b);
  auto loss = g.softmax_cross_entropy(g.global_avg_pool(g.conv2d(xi, wi, bi, Pad::kSame)), targets);
  g.backward(loss);

  const double h = 1e-6;
  auto fd_w = fd_gradient(w, [&]() { return conv_loss(x, w, b, targets, Pad::kSame); }, h);
  CHECK(max_rel_err(to_double(g.grad(wi)), fd_w) < 1e-5);
  auto fd_x = fd_gradient(x, [&]() { return conv_loss(x, w, b, targets, Pad::kSame); }, h);
  CHECK(max_rel_err(to_double(g.grad(xi)), fd_x) < 1e-5);
  auto fd_b = fd_gradient(b, [&]() { return conv_loss(x, w, b, targets, Pad::kSame); }, h);
  CHECK(max_rel_err(to_double(g.grad(bi)), fd_b) < 1e-5);
}

TEST_CASE("conv2d 1x1 gradients match finite differences") {
  Rng rng(43);
  Tensor<double> x = random_tensor(rng, {2, 4, 3, 3});
  Tensor<double> w = random_tensor(rng, {3, 4, 1, 1});
  Tensor<double> b = random_tensor(rng, {3});
  std::vector<int> targets = {0, 2};
  Graph<double> g;
  auto xi = g.input(x), wi = g.input(w), bi = g.input(b);
  auto loss = g.softmax_cross_entropy(g.global_avg_pool(g.conv2d(xi, wi, bi, Pad::kValid)), targets);
  g.backward(loss);
  auto fd_w = fd_gradient(w, [&]() { return conv_loss(x, w, b, targets, Pad::kValid); }, 1e-6);
  CHECK(max_rel_err(to_double(g.grad(wi)), fd_w) < 1e-5);
}

TEST_CASE("batch_norm normalizes per channel in train mode") {
  Rng rng(7);
  Tensor<double> x = random_tensor(rng, {4, 3, 2, 2}, -2.0, 5.0);
  Graph<double> g;
  auto y = g.batch_norm(g.input(x), g.input(Tensor<double>::full({3}, 1.0)), g.input(Tensor<double>({3})),
                        Mode::kTrain, {});
  const auto& out = g.value(y);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 4; ++i) mean += out.at4(b, c, i / 2, i % 2);
    mean /= 16.0;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 4; ++i) {
        const double d = out.at4(b, c, i / 2, i % 2) - mean;
        var += d * d;
      }
    var /= 16.0;
    CHECK(std::fabs(mean) < 1e-6);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("batch_norm zero gamma yields beta") {
  Rng rng(8);
  Tensor<double> x = random_tensor(rng, {2, 2, 3, 3});
  Tensor<double> beta({2}, {0.7, -1.2});
  Graph<double> g;
  auto y = g.batch_norm(g.input(x), g.input(Tensor<double>({2})), g.input(beta), Mode::kTrain, {});
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 9; ++i) CHECK(g.value(y).at4(b, c, i / 3, i % 3) == doctest::Approx(beta[c]));
}

TEST_CASE("batch_norm rejects degenerate train batches") {
  Graph<double> g;
  auto x = g.input(Tensor<double>({1, 3, 1, 1}));
  CHECK_THROWS_AS(
      g.batch_norm(x, g.input(Tensor<double>::full({3}, 1.0)), g.input(Tensor<double>({3})), Mode::kTrain, {}),
      DataError);
}

TEST_CASE("batch_norm gradients match finite differences") {
  Rng rng(9);
  Tensor<double> x = random_tensor(rng, {4, 3, 2, 2});
  Tensor<double> gamma = random_tensor(rng, {3}, 0.5, 1.5);
  Tensor<double> beta = random_tensor(rng, {3}, -0.5, 0.5);
  std::vector<int> targets = {0, 2, 1, 0};

  auto loss_fn = [&]() {
    Graph<double> g;
    auto y = g.batch_norm(g.input(x), g.input(gamma), g.input(beta), Mode::kTrain, {});
    return g.value(g.softmax_cross_entropy(g.global_avg_pool(y), targets))[0];
  };
  Graph<double> g;
  auto xi = g.input(x), gi = g.input(gamma), bi = g.input(beta);
  auto loss = g.softmax_cross_entropy(g.global_avg_pool(g.batch_norm(xi, gi, bi, Mode::kTrain, {})), targets);
  g.backward(loss);

  CHECK(max_rel_err(to_double(g.grad(xi)), fd_gradient(x, loss_fn, 1e-6)) < 1e-4);
  CHECK(max_rel_err(to_double(g.grad(gi)), fd_gradient(gamma, loss_fn, 1e-6)) < 1e-4);
  CHECK(max_rel_err(to_double(g.grad(bi)), fd_gradient(beta, loss_fn, 1e-6)) < 1e-4);
}

TEST_CASE("batch_norm running stats feed eval mode") {
  Rng rng(10);
  Tensor<double> mean({2}), var = Tensor<double>::full({2}, 1.0);
  RunningStats<double> stats{&mean, &var};
  Tensor<double> x = random_tensor(rng, {8, 2, 3, 3}, 1.0, 3.0);
  for (int i = 0; i < 60; ++i) {
    Graph<double> g;
    g.batch_norm(g.input(x), g.input(Tensor<double>::full({2}, 1.0)), g.input(Tensor<double>({2})), Mode::kTrain,
                 stats);
  }
  // After many updates on the same batch the running stats approach it.
  Graph<double> g;
  auto y = g.batch_norm(g.input(x), g.input(Tensor<double>::full({2}, 1.0)), g.input(Tensor<double>({2})),
                        Mode::kEval, stats);
  double m = 0.0;
  for (int b = 0; b < 8; ++b)
    for (int i = 0; i < 9; ++i) m += g.value(y).at4(b, 0, i / 3, i % 3);
  CHECK(std::fabs(m / 72.0) < 0.01);
}

TEST_CASE("relu") {
  Graph<double> g;
  auto y = g.relu(g.input(Tensor<double>({1, 3}, {-1.0, 0.0, 2.0})));
  CHECK(g.value(y).data == std::vector<double>{0.0, 0.0, 2.0});

  // All-negative input: zero output, zero gradient.
  Graph<double> g2;
  auto x2 = g2.input(Tensor<double>({2, 3}, {-1, -2, -3, -4, -5, -6}));
  auto loss = g2.sum(g2.relu(x2));
  g2.backward(loss);
  for (auto v : g2.grad(x2).data) CHECK(static_cast<double>(v) == 0.0);

  // Gradient mask is the indicator x > 0 (checked away from the kink).
  Rng rng(12);
  Tensor<double> x = random_tensor(rng, {4, 5});
  Graph<double> g3;
  auto xi = g3.input(x);
  g3.backward(g3.sum(g3.relu(xi)));
  auto fd = fd_gradient(x, [&]() {
    Graph<double> gg;
    return gg.value(gg.sum(gg.relu(gg.input(x))))[0];
  }, 1e-6);
  for (size_t i = 0; i < x.data.size(); ++i) {
    if (std::fabs(x.data[i]) < 1e-4) continue;
    CHECK(static_cast<double>(g3.grad(xi).data[i]) == doctest::Approx(x.data[i] > 0 ? 1.0 : 0.0));
    CHECK(fd.data[i] == doctest::Approx(x.data[i] > 0 ? 1.0 : 0.0).epsilon(1e-6));
  }
}

TEST_CASE("avg_pool_2x2") {
  Graph<double> g;
  auto y = g.avg_pool_2x2(g.input(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4})));
  CHECK(g.value(y).shape == std::vector<int>{1, 1, 1, 1});
  CHECK(g.value(y)[0] == doctest::Approx(2.5));

  // Constant invariance, including odd trailing rows/columns.
  Graph<double> g2;
  auto y2 = g2.avg_pool_2x2(g2.input(Tensor<double>::full({1, 1, 3, 3}, 1.0)));
  CHECK(g2.value(y2).shape == std::vector<int>{1, 1, 2, 2});
  for (double v : g2.value(y2).data) CHECK(v == doctest::Approx(1.0));

  Graph<double> g3;
  auto y3 = g3.avg_pool_2x2(g3.input(Tensor<double>::full({2, 3, 5, 7}, -0.37)));
  for (double v : g3.value(y3).data) CHECK(v == doctest::Approx(-0.37));

  // Backward distributes uniformly over the actual window.
  Graph<double> g4;
  auto x4 = g4.input(Tensor<double>::full({1, 1, 3, 3}, 2.0));
  g4.backward(g4.sum(g4.avg_pool_2x2(x4)));
  const auto& dx = g4.grad(x4);
  CHECK(static_cast<double>(dx.at4(0, 0, 0, 0)) == doctest::Approx(0.25));  // 2x2 window
  CHECK(static_cast<double>(dx.at4(0, 0, 0, 2)) == doctest::Approx(0.5));   // 2x1 edge window
  CHECK(static_cast<double>(dx.at4(0, 0, 2, 2)) == doctest::Approx(1.0));   // 1x1 corner window
}

TEST_CASE("concat_channels") {
  Rng rng(13);
  Tensor<double> a = random_tensor(rng, {2, 3, 4, 4});
  Tensor<double> b = random_tensor(rng, {2, 5, 4, 4});

  Graph<double> g;
  auto ai = g.input(a);
  auto single = g.concat_channels({ai});
  CHECK(g.value(single).data == a.data);  // identity

  auto bi = g.input(b);
  auto cat = g.concat_channels({ai, bi});
  CHECK(g.value(cat).shape == std::vector<int>{2, 8, 4, 4});
  CHECK(g.value(cat).at4(1, 3, 2, 2) == b.at4(1, 0, 2, 2));

  // Sum-loss backward gives all-ones gradients of each input's own shape.
  Graph<double> g2;
  auto a2 = g2.input(a), b2 = g2.input(b);
  g2.backward(g2.sum(g2.concat_channels({a2, b2})));
  for (auto v : g2.grad(a2).data) CHECK(static_cast<double>(v) == 1.0);
  for (auto v : g2.grad(b2).data) CHECK(static_cast<double>(v) == 1.0);

  Graph<double> g3;
  auto bad = g3.input(Tensor<double>({2, 3, 5, 4}));
  CHECK_THROWS_AS(g3.concat_channels({g3.input(a), bad}), ShapeError);
}

TEST_CASE("concat split/merge round-trip") {
  // Gradient of a loss through concat, split back per input and
  // re-concatenated, equals the gradient at the concatenated tensor.
  Rng rng(14);
  Tensor<double> a = random_tensor(rng, {2, 2, 3, 3});
  Tensor<double> b = random_tensor(rng, {2, 4, 3, 3});
  Tensor<double> w = random_tensor(rng, {3, 6, 1, 1});
  std::vector<int> targets = {0, 1};

  Graph<double> g;
  auto ai = g.input(a), bi = g.input(b);
  auto cat = g.concat_channels({ai, bi});
  auto loss = g.softmax_cross_entropy(
      g.global_avg_pool(g.conv2d(cat, g.input(w), g.input(Tensor<double>({3})), Pad::kValid)), targets);
  g.backward(loss);

  const auto& dcat = g.grad(cat);
  const auto& da = g.grad(ai);
  const auto& db = g.grad(bi);
  for (int bb = 0; bb < 2; ++bb)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        for (int c = 0; c < 2; ++c) CHECK(da.at4(bb, c, y, x) == dcat.at4(bb, c, y, x));
        for (int c = 0; c < 4; ++c) CHECK(db.at4(bb, c, y, x) == dcat.at4(bb, 2 + c, y, x));
      }
}

TEST_CASE("affine") {
  // Identity weight, zero bias.
  Tensor<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at2(i, i) = 1.0;
  Rng rng(15);
  Tensor<double> x = random_tensor(rng, {2, 3});
  Graph<double> g;
  auto y = g.affine(g.input(x), g.input(eye), g.input(Tensor<double>({3})));
  CHECK(g.value(y).data == x.data);

  // Zero weight: every row equals the bias.
  Tensor<double> bias({4}, {1, 2, 3, 4});
  Graph<double> g2;
  auto y2 = g2.affine(g2.input(x), g2.input(Tensor<double>({3, 4})), g2.input(bias));
  for (int r = 0; r < 2; ++r)
    for (int k = 0; k < 4; ++k) CHECK(g2.value(y2).at2(r, k) == doctest::Approx(bias[k]));

  Graph<double> g3;
  CHECK_THROWS_AS(g3.affine(g3.input(x), g3.input(Tensor<double>({4, 2})), g3.input(Tensor<double>({2}))),
                  ShapeError);
}

TEST_CASE("affine gradients match finite differences") {
  Rng rng(16);
  Tensor<double> x = random_tensor(rng, {3, 4});
  Tensor<double> w = random_tensor(rng, {4, 2});
  Tensor<double> b = random_tensor(rng, {2});
  std::vector<int> targets = {0, 1, 0};
  auto loss_fn = [&]() {
    Graph<double> g;
    return g.value(g.softmax_cross_entropy(g.affine(g.input(x), g.input(w), g.input(b)), targets))[0];
  };
  Graph<double> g;
  auto xi = g.input(x), wi = g.input(w), bi = g.input(b);
  g.backward(g.softmax_cross_entropy(g.affine(xi, wi, bi), targets));
  CHECK(max_rel_err(to_double(g.grad(wi)), fd_gradient(w, loss_fn, 1e-5)) < 1e-6);
  CHECK(max_rel_err(to_double(g.grad(xi)), fd_gradient(x, loss_fn, 1e-5)) < 1e-6);
  CHECK(max_rel_err(to_double(g.grad(bi)), fd_gradient(b, loss_fn, 1e-5)) < 1e-6);
}

TEST_CASE("softmax_cross_entropy") {
  // Uniform logits: loss = B * ln K.
  Graph<double> g;
  auto loss = g.softmax_cross_entropy(g.input(Tensor<double>({1, 7})), {3});
  CHECK(g.value(loss)[0] == doctest::Approx(std::log(7.0)));

  // Extreme logits stay finite through max-subtraction.
  Graph<double> g2;
  auto loss2 = g2.softmax_cross_entropy(g2.input(Tensor<double>({1, 2}, {1000.0, 0.0})), {0});
  CHECK(g2.value(loss2)[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::isfinite(g2.value(loss2)[0]));

  // Batch sum, not mean.
  Graph<double> g3;
  auto loss3 = g3.softmax_cross_entropy(g3.input(Tensor<double>({4, 5})), {0, 1, 2, 3});
  CHECK(g3.value(loss3)[0] == doctest::Approx(4.0 * std::log(5.0)));

  Graph<double> g4;
  CHECK_THROWS_AS(g4.softmax_cross_entropy(g4.input(Tensor<double>({1, 3})), {3}), std::out_of_range);
  CHECK_THROWS_AS(g4.softmax_cross_entropy(g4.input(Tensor<double>({1, 3})), {-1}), std::out_of_range);
}

TEST_CASE("softmax_cross_entropy gradients: finite differences and row sums") {
  Rng rng(17);
  Tensor<double> logits = random_tensor(rng, {5, 7});
  std::vector<int> targets = {0, 6, 3, 2, 5};
  auto loss_fn = [&]() {
    Graph<double> g;
    return g.value(g.softmax_cross_entropy(g.input(logits), targets))[0];
  };
  Graph<double> g;
  auto li = g.input(logits);
  g.backward(g.softmax_cross_entropy(li, targets));
  CHECK(max_rel_err(to_double(g.grad(li)), fd_gradient(logits, loss_fn, 1e-5)) < 1e-6);
  for (int r = 0; r < 5; ++r) {
    long double row = 0.0L;
    for (int k = 0; k < 7; ++k) row += g.grad(li).at2(r, k);
    CHECK(std::fabs(static_cast<double>(row)) < 1e-12);
  }
}

TEST_CASE("backward contract") {
  Rng rng(18);
  Tensor<double> x = random_tensor(rng, {3, 4});

  // loss = sum(x) -> all-ones gradient.
  Graph<double> g;
  auto xi = g.input(x);
  g.backward(g.sum(xi));
  for (auto v : g.grad(xi).data) CHECK(static_cast<double>(v) == 1.0);

  // Loss independent of a parameter -> all-zero gradient for it.
  ParameterSet<double> params;
  params.create("used", {3, 4});
  params.create("unused", {2, 2});
  Graph<double> g2;
  auto used = g2.param("used", params.at("used").value);
  g2.param("unused", params.at("unused").value);
  g2.backward(g2.sum(used));
  params.zero_grads();
  g2.accumulate_param_grads(params);
  for (auto v : params.at("used").grad.data) CHECK(static_cast<double>(v) == 1.0);
  for (auto v : params.at("unused").grad.data) CHECK(static_cast<double>(v) == 0.0);

  // Non-scalar loss is a contract violation.
  Graph<double> g3;
  auto y = g3.input(x);
  CHECK_THROWS_AS(g3.backward(y), ShapeError);

  // Repeated backward calls produce identical gradients.
  Graph<double> g4;
  auto x4 = g4.input(x);
  auto loss4 = g4.softmax_cross_entropy(x4, {1, 2, 0});
  g4.backward(loss4);
  auto first = g4.grad(x4).data;
  g4.backward(loss4);
  CHECK(g4.grad(x4).data == first);
}

TEST_CASE("grl forward and backward algebra") {
  Tensor<double> t({3}, {1.0, 2.0, 3.0});
  CHECK(grl_forward(t).data == t.data);
  CHECK(grl_forward(grl_forward(t)).data == grl_forward(t).data);

  Tensor<double> up({2}, {2.0, 4.0});
  auto r = grl_backward(up, 0.5);
  CHECK(r.data == std::vector<double>{-1.0, -2.0});
  auto z = grl_backward(up, 0.0);
  CHECK(z.data[0] == 0.0);
  CHECK(z.data[1] == 0.0);
  auto flip = grl_backward(up, 1.0);
  CHECK(flip.data == std::vector<double>{-2.0, -4.0});

  // Exact elementwise property over random tensors and lambdas.
  Rng rng(19);
  for (int it = 0; it < 200; ++it) {
    Tensor<double> x = random_tensor(rng, {1 + static_cast<int>(rng.uniform_int(5)),
                                           1 + static_cast<int>(rng.uniform_int(7))},
                                     -10.0, 10.0);
    const double lambda = rng.uniform(0.0, 4.0);
    CHECK(grl_forward(x).data == x.data);
    auto back = grl_backward(x, lambda);
    for (size_t i = 0; i < x.data.size(); ++i) CHECK(back.data[i] == -lambda * x.data[i]);
  }
}

TEST_CASE("grl inside a graph reverses and scales upstream gradients") {
  Rng rng(20);
  Tensor<double> x = random_tensor(rng, {2, 3});
  for (double lambda : {0.0, 0.5, 1.0, 2.0}) {
    Graph<double> g;
    auto xi = g.input(x);
    auto out = g.grl(xi, lambda);
    CHECK(g.value(out).data == x.data);
    g.backward(g.sum(out));
    for (auto v : g.grad(xi).data) CHECK(static_cast<double>(v) == -lambda);
  }
}

TEST_CASE("determinism: identical inputs give bit-identical forward and backward") {
  Rng rng(21);
  Tensor<double> x = random_tensor(rng, {2, 3, 6, 5});
  Tensor<double> w = random_tensor(rng, {4, 3, 3, 3});
  std::vector<int> targets = {1, 0};
  auto run = [&]() {
    Graph<double> g;
    auto xi = g.input(x);
    auto c = g.conv2d(xi, g.input(w), g.input(Tensor<double>({4})), Pad::kSame);
    auto loss = g.softmax_cross_entropy(g.global_avg_pool(g.relu(c)), targets);
    g.backward(loss);
    return std::make_pair(g.value(loss)[0], g.grad(xi).data);
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

}  // TEST_SUITE
