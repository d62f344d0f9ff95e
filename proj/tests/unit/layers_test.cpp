#include <cmath>

#include "doctest.h"
#include "mrsys/checkpoint.hpp"
#include "mrsys/error.hpp"
#include "mrsys/layers.hpp"
#include "test_util.hpp"

using namespace mrsys;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * uniform(rng, -1.0, 1.0);
  return t;
}

// Scalar objective sum(c .* y) so every output contributes a distinct gradient.
double weighted_sum(const Tensor& y, const Tensor& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
  return s;
}

}  // namespace

TEST_CASE("dense: identity and hand-computed 2x2") {
  Dense id(3, 3, Activation::Identity);
  for (int i = 0; i < 3; ++i) id.weight(i, i) = 1.0;
  const Tensor x = Tensor::vector(std::vector<double>{0.5, -2.0, 3.0});
  CHECK(id.forward(x) == x);

  Dense d(2, 2, Activation::Identity);
  d.weight = Tensor::matrix(2, 2, {1, 2, 3, 4});
  d.bias = Tensor::vector(std::vector<double>{1, 1});
  const Tensor y = d.forward(Tensor::vector(std::vector<double>{1, 1}));
  CHECK(y[0] == 4.0);
  CHECK(y[1] == 8.0);
  CHECK_THROWS_AS(d.forward(Tensor({3})), ValidationError);
}

TEST_CASE("dense: gradients match finite differences for every activation") {
  Rng rng(7);
  for (auto act : {Activation::Identity, Activation::ReLU, Activation::Tanh, Activation::Sigmoid,
                   Activation::Softmax}) {
    Dense d(4, 3, act);
    d.init(rng);
    d.bias = random_tensor({3}, rng, 0.3);
    Tensor x = random_tensor({5, 4}, rng);
    Tensor dx_store({5, 4});
    const Tensor c = random_tensor({5, 3}, rng);
    ParamList params;
    d.collect("d", params);
    params.push_back({"x", &x, &dx_store});
    const double err = grad_check(
        params, [&] { return weighted_sum(d.forward(x), c); },
        [&] {
          zero_grads(params);
          Dense::Cache cache;
          d.forward(x, &cache);
          dx_store = d.backward(cache, c);
        });
    CHECK(err <= 1e-6);
  }
}

TEST_CASE("gru: zero weights halve the initial state") {
  Gru g(3, 2);
  const Tensor h0 = Tensor::vector(std::vector<double>{0.8, -0.4});
  const Tensor states = g.forward(Tensor({1, 3}, 1.0), h0);
  CHECK(states(0, 0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(states(0, 1) == doctest::Approx(-0.2).epsilon(1e-15));

  const Tensor zeros = g.forward(Tensor({4, 3}), Tensor({2}));
  for (double v : zeros.data()) CHECK(v == 0.0);
}

TEST_CASE("gru: BPTT gradient over T=5 matches finite differences") {
  Rng rng(9);
  Gru g(3, 4);
  g.init(rng);
  for (Tensor* b : {&g.b_z, &g.b_r, &g.b_h}) *b = random_tensor({4}, rng, 0.5);
  Tensor x = random_tensor({5, 3}, rng);
  Tensor h0 = random_tensor({4}, rng, 0.5);
  Tensor dx({5, 3}), dh0({4});
  const Tensor c = random_tensor({5, 4}, rng);
  ParamList params;
  g.collect("gru", params);
  params.push_back({"x", &x, &dx});
  params.push_back({"h0", &h0, &dh0});
  const double err = grad_check(
      params, [&] { return weighted_sum(g.forward(x, h0), c); },
      [&] {
        zero_grads(params);
        Gru::Cache cache;
        g.forward(x, h0, &cache);
        auto grads = g.backward(cache, c);
        dx = grads.inputs;
        dh0 = grads.h0;
      });
  CHECK(err <= 1e-5);
}

TEST_CASE("batchnorm: train-mode normalization and constant batches") {
  Rng rng(2);
  BatchNorm bn(3);
  const Tensor x = random_tensor({8, 3}, rng, 4.0);
  const Tensor y = bn.forward(x, NormMode::Train);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0.0, var_x = 0.0, var_y = 0.0, mx = 0.0;
    for (std::size_t r = 0; r < 8; ++r) mean += y(r, j) / 8.0, mx += x(r, j) / 8.0;
    for (std::size_t r = 0; r < 8; ++r) {
      var_y += (y(r, j) - mean) * (y(r, j) - mean) / 8.0;
      var_x += (x(r, j) - mx) * (x(r, j) - mx) / 8.0;
    }
    CHECK(std::abs(mean) < 1e-12);
    const double expected = var_x / (var_x + bn.epsilon);
    CHECK(std::abs(var_y - expected) / expected < 1e-9);
  }

  BatchNorm shifted(2);
  shifted.beta = Tensor::vector(std::vector<double>{0.3, -1.0});
  const Tensor constant = shifted.forward(Tensor({4, 2}, 2.5), NormMode::Train);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(constant(r, 0) == doctest::Approx(0.3));
    CHECK(constant(r, 1) == doctest::Approx(-1.0));
  }
  CHECK_THROWS_AS(bn.forward(Tensor({1, 3}), NormMode::Train), ValidationError);
}

TEST_CASE("batchnorm: running statistics and gradient check") {
  Rng rng(4);
  BatchNorm bn(3);
  bn.gamma = random_tensor({3}, rng);
  bn.beta = random_tensor({3}, rng);
  Tensor x = random_tensor({6, 3}, rng, 2.0);
  Tensor dx({6, 3});
  const Tensor c = random_tensor({6, 3}, rng);
  ParamList params;
  bn.collect("bn", params);
  params.push_back({"x", &x, &dx});
  const double err = grad_check(
      params, [&] { return weighted_sum(bn.forward(x, NormMode::Train), c); },
      [&] {
        zero_grads(params);
        BatchNorm::Cache cache;
        bn.forward(x, NormMode::Train, &cache);
        dx = bn.backward(cache, c);
      });
  CHECK(err <= 1e-5);

  BatchNorm fresh(1);
  fresh.forward(Tensor({2, 1}, std::vector<double>{1.0, 3.0}), NormMode::Train);
  CHECK(fresh.running_mean[0] == doctest::Approx(0.2));
  CHECK(fresh.running_var[0] == doctest::Approx(0.9 + 0.1 * 1.0));
}

TEST_CASE("attention gate: singleton and symmetric weights") {
  AttentionGate gate({2, 3});
  const Tensor x = Tensor::matrix(1, 5, {1, 2, 3, 4, 5});
  const Tensor only_second = gate.forward(x, Tensor::matrix(1, 2, {0, 1}));
  CHECK(only_second(0, 0) == 0.0);
  CHECK(only_second(0, 1) == 0.0);
  CHECK(only_second(0, 2) == 3.0);
  CHECK(only_second(0, 4) == 5.0);

  // Zero scorer weights: equal logits.
  const Tensor both = gate.forward(x, Tensor::matrix(1, 2, {1, 1}));
  for (std::size_t i = 0; i < 5; ++i) CHECK(both(0, i) == doctest::Approx(0.5 * x(0, i)));
  CHECK_THROWS_AS(gate.forward(x, Tensor::matrix(1, 2, {0, 0})), ValidationError);
}

TEST_CASE("attention gate: weights sum to one and gradients match") {
  Rng rng(12);
  AttentionGate gate({3, 2, 4});
  gate.init(rng);
  gate.scorer.bias = random_tensor({3}, rng);
  Tensor x = random_tensor({4, 9}, rng);
  const Tensor mask = Tensor::matrix(4, 3, {1, 1, 1, 0, 1, 1, 1, 0, 1, 0, 0, 1});
  AttentionGate::Cache cache;
  gate.forward(x, mask, &cache);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t b = 0; b < 3; ++b) {
      s += cache.weights(r, b);
      if (mask(r, b) == 0.0) CHECK(cache.weights(r, b) == 0.0);
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  // Keep absent entries at zero so the check probes only live inputs.
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t b = 0; b < 3; ++b)
      if (mask(r, b) == 0.0)
        for (std::size_t i = gate.offset(b); i < gate.offset(b + 1); ++i) x(r, i) = 0.0;

  Tensor dx({4, 9});
  const Tensor c = random_tensor({4, 9}, rng);
  ParamList params;
  gate.collect("gate", params);
  params.push_back({"x", &x, &dx});
  const double err = grad_check(
      params, [&] { return weighted_sum(gate.forward(x, mask), c); },
      [&] {
        zero_grads(params);
        AttentionGate::Cache k;
        gate.forward(x, mask, &k);
        dx = gate.backward(k, c);
      });
  CHECK(err <= 1e-5);
}

TEST_CASE("conv1d max-pool: padding and gradient check") {
  Rng rng(21);
  Conv1dMaxPool conv(3, 4, 5);
  conv.init(rng);
  conv.bias = random_tensor({5}, rng, 0.2);
  CHECK(conv.forward(random_tensor({1, 4}, rng)).size() == 5);

  Tensor x = random_tensor({7, 4}, rng);
  Tensor dx({7, 4});
  const Tensor c = random_tensor({5}, rng);
  ParamList params;
  conv.collect("conv", params);
  params.push_back({"x", &x, &dx});
  const double err = grad_check(
      params, [&] { return weighted_sum(conv.forward(x), c); },
      [&] {
        zero_grads(params);
        Conv1dMaxPool::Cache cache;
        conv.forward(x, &cache);
        dx = conv.backward(cache, c);
      });
  CHECK(err <= 1e-5);
}

TEST_CASE("losses: closed forms") {
  const Tensor p = Tensor::vector(std::vector<double>{0.2, -1.0, 3.0});
  CHECK(loss_eval(LossKind::MSE, p, p).value == 0.0);

  const Tensor half = Tensor::vector(std::vector<double>{0.5});
  const Tensor one = Tensor::vector(std::vector<double>{1.0});
  CHECK(loss_eval(LossKind::WeightedBCE, half, one).value == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(loss_eval(LossKind::WeightedBCE, half, Tensor::vector(std::vector<double>{0.5})),
                  ValidationError);
  CHECK_THROWS_AS(loss_eval(LossKind::MSE, half, p), ValidationError);

  // Identical positive pair and orthogonal negative pair cost nothing.
  const Tensor labels = Tensor::vector(std::vector<double>{1, 0});
  const Tensor easy = Tensor::matrix(4, 2, {1, 0, 0, 1, 1, 0, 1, 0});
  CHECK(loss_eval(LossKind::CosineContrastive, easy, labels).value == 0.0);
  // Orthogonal positive costs 1, identical negative costs 1 - margin.
  const Tensor hard = Tensor::matrix(4, 2, {1, 0, 1, 0, 0, 1, 1, 0});
  CHECK(loss_eval(LossKind::CosineContrastive, hard, labels).value == doctest::Approx(0.9));
}

TEST_CASE("losses: gradients match finite differences") {
  Rng rng(30);
  LossOptions opts;
  opts.positive_weight = 3.0;
  opts.negative_weight = 0.7;
  opts.margin = -0.5;  // keeps every negative pair active

  Tensor pred = random_tensor({3, 4}, rng);
  Tensor grad({3, 4});
  const Tensor target = random_tensor({3, 4}, rng);
  ParamList params{{"pred", &pred, &grad}};
  CHECK(grad_check(params, [&] { return mse_loss(pred, target).value; },
                   [&] { grad = mse_loss(pred, target).grad; }) <= 1e-6);

  Tensor prob({6});
  for (double& v : prob.data()) v = uniform(rng, 0.1, 0.9);
  Tensor gprob({6});
  const Tensor y = Tensor::vector(std::vector<double>{1, 0, 0, 1, 1, 0});
  ParamList bparams{{"p", &prob, &gprob}};
  CHECK(grad_check(bparams, [&] { return loss_eval(LossKind::WeightedBCE, prob, y, opts).value; },
                   [&] { gprob = loss_eval(LossKind::WeightedBCE, prob, y, opts).grad; }) <= 1e-6);

  Tensor pairs = random_tensor({6, 5}, rng);
  Tensor gpairs({6, 5});
  const Tensor labels = Tensor::vector(std::vector<double>{1, 0, 1});
  ParamList cparams{{"pairs", &pairs, &gpairs}};
  CHECK(grad_check(cparams,
                   [&] { return loss_eval(LossKind::CosineContrastive, pairs, labels, opts).value; },
                   [&] { gpairs = loss_eval(LossKind::CosineContrastive, pairs, labels, opts).grad; }) <=
        1e-6);

  Tensor logits = random_tensor({3, 4}, rng);
  Tensor glogits({3, 4});
  const std::vector<std::size_t> cls{0, 3, 1};
  ParamList sparams{{"logits", &logits, &glogits}};
  CHECK(grad_check(sparams, [&] { return softmax_cross_entropy(logits, cls).value; },
                   [&] { glogits = softmax_cross_entropy(logits, cls).grad; }) <= 1e-6);
}

TEST_CASE("sgd_step arithmetic and divergence detection") {
  Tensor p({1}, 1.0), g({1}, 0.0);
  ParamList params{{"p", &p, &g}};
  sgd_step(params, 0.1, 0.0);
  CHECK(p[0] == 1.0);
  g[0] = 1.0;
  sgd_step(params, 0.1, 0.0);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-15));
  p[0] = 1.0;
  g[0] = 0.0;
  sgd_step(params, 0.1, 0.5);
  CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-15));
  g[0] = std::nan("");
  CHECK_THROWS_AS(sgd_step(params, 0.1, 0.0), RuntimeError);
  CHECK_THROWS_AS(sgd_step(params, 0.0, 0.0), ValidationError);
}

TEST_CASE("grad_check flags a corrupted gradient") {
  Rng rng(8);
  Dense d(3, 2, Activation::Tanh);
  d.init(rng);
  const Tensor x = random_tensor({4, 3}, rng, 2.0);
  const Tensor c = random_tensor({4, 2}, rng, 2.0);
  ParamList params;
  d.collect("d", params);
  const double err = grad_check(
      params, [&] { return weighted_sum(d.forward(x), c); },
      [&] {
        zero_grads(params);
        Dense::Cache cache;
        d.forward(x, &cache);
        d.backward(cache, c);
        for (double& v : d.weight_grad.data()) v *= 1.1;
      });
  CHECK(err >= 1e-2);
}

TEST_CASE("checkpoint round trip and corruption errors") {
  testutil::TempDir dir;
  Checkpoint ck;
  ck.put("a", Tensor::matrix(2, 2, {1, 2, 3, 4}));
  ck.put_scalar("s", 0.125);
  ck.save(dir / "m.mrsys");
  const auto back = Checkpoint::load(dir / "m.mrsys");
  CHECK(back.get("a") == ck.get("a"));
  CHECK(back.scalar("s") == 0.125);
  CHECK_THROWS_AS(back.get("a", {4}), ValidationError);

  auto bytes = testutil::read_file(dir / "m.mrsys");
  auto corrupt = bytes;
  corrupt[0] = 'X';
  testutil::write_file(dir / "bad.mrsys", corrupt);
  try {
    Checkpoint::load(dir / "bad.mrsys");
    FAIL("expected error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("not an MRSYS1 container") != std::string::npos);
  }
  testutil::write_file(dir / "short.mrsys", bytes.substr(0, bytes.size() - 5));
  try {
    Checkpoint::load(dir / "short.mrsys");
    FAIL("expected error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("expected " + std::to_string(bytes.size()) + " bytes") != std::string::npos);
    CHECK(msg.find("got " + std::to_string(bytes.size() - 5)) != std::string::npos);
  }
}
