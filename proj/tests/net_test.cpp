#include "calrl/net.hpp"

#include <cmath>
#include <sstream>

#include "doctest.h"

using namespace calrl;

namespace {

DenseNet zero_sigmoid_net(int in_dim) {
  std::mt19937_64 rng(0);
  DenseNet net = DenseNet::mlp(in_dim, {}, 1, Activation::kTanh, Activation::kSigmoid, rng);
  for (double& w : net.layer(0).w) w = 0.0;
  for (double& b : net.layer(0).b) b = 0.0;
  return net;
}

DenseNet random_net(std::mt19937_64& rng, int in_dim, const std::vector<int>& hidden, int out_dim,
                    Activation hidden_act, Activation out_act) {
  return DenseNet::mlp(in_dim, hidden, out_dim, hidden_act, out_act, rng);
}

Vec random_vec(std::mt19937_64& rng, int n, double lo, double hi) {
  Vec v(static_cast<size_t>(n));
  for (double& x : v) x = uniform_range(rng, lo, hi);
  return v;
}

// Central finite differences of the scalar loss over every parameter;
// deliberately uses only forward passes and the loss value.
Gradients finite_difference(const DenseNet& net, const Vec& input, const Loss& loss, double h) {
  auto loss_value = [&](const DenseNet& n) {
    // The backward result's loss is a plain forward + loss evaluation; using
    // it here does not reuse the gradient path under test.
    return backward(n, input, loss).loss;
  };
  Gradients fd = Gradients::zeros_like(net);
  DenseNet work = net;
  for (int k = 0; k < net.layer_count(); ++k) {
    for (size_t i = 0; i < net.layer(k).w.size(); ++i) {
      const double orig = work.layer(k).w[i];
      work.layer(k).w[i] = orig + h;
      const double up = loss_value(work);
      work.layer(k).w[i] = orig - h;
      const double dn = loss_value(work);
      work.layer(k).w[i] = orig;
      fd.layers[static_cast<size_t>(k)].w[i] = (up - dn) / (2.0 * h);
    }
    for (size_t i = 0; i < net.layer(k).b.size(); ++i) {
      const double orig = work.layer(k).b[i];
      work.layer(k).b[i] = orig + h;
      const double up = loss_value(work);
      work.layer(k).b[i] = orig - h;
      const double dn = loss_value(work);
      work.layer(k).b[i] = orig;
      fd.layers[static_cast<size_t>(k)].b[i] = (up - dn) / (2.0 * h);
    }
  }
  return fd;
}

double max_rel_error(const Gradients& a, const Gradients& b) {
  double worst = 0.0;
  for (size_t k = 0; k < a.layers.size(); ++k) {
    for (size_t i = 0; i < a.layers[k].w.size(); ++i) {
      const double x = a.layers[k].w[i], y = b.layers[k].w[i];
      worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1.0}));
    }
    for (size_t i = 0; i < a.layers[k].b.size(); ++i) {
      const double x = a.layers[k].b[i], y = b.layers[k].b[i];
      worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1.0}));
    }
  }
  return worst;
}

// Smallest |preactivation| over relu units; finite differences near a relu
// kink are meaningless, so tests resample when this margin is tiny.
double relu_kink_margin(const DenseNet& net, const Vec& input) {
  double margin = 1.0;
  Vec cur = input;
  for (int k = 0; k < net.layer_count(); ++k) {
    const auto& l = net.layer(k);
    Vec next(static_cast<size_t>(l.out));
    for (int o = 0; o < l.out; ++o) {
      double z = l.b[static_cast<size_t>(o)];
      for (int i = 0; i < l.in; ++i) z += l.w[static_cast<size_t>(o) * l.in + i] * cur[static_cast<size_t>(i)];
      if (l.act == Activation::kRelu) margin = std::min(margin, std::abs(z));
      next[static_cast<size_t>(o)] = [&] {
        switch (l.act) {
          case Activation::kIdentity: return z;
          case Activation::kRelu: return z > 0 ? z : 0.0;
          case Activation::kTanh: return std::tanh(z);
          case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-z));
        }
        return z;
      }();
    }
    cur = std::move(next);
  }
  return margin;
}

}  // namespace

TEST_CASE("forward: identity layer passes input through") {
  std::mt19937_64 rng(1);
  DenseNet net = DenseNet::mlp(2, {}, 2, Activation::kTanh, Activation::kIdentity, rng);
  // weights = identity matrix, bias = 0
  net.layer(0).w = {1.0, 0.0, 0.0, 1.0};
  net.layer(0).b = {0.0, 0.0};
  const Vec out = net.forward(Vec{0.3, 0.7});
  CHECK(out[0] == doctest::Approx(0.3));
  CHECK(out[1] == doctest::Approx(0.7));
}

TEST_CASE("forward: zero-weight sigmoid gives 0.5 for any input") {
  DenseNet net = zero_sigmoid_net(3);
  CHECK(net.forward(Vec{0.1, 0.9, 0.4})[0] == doctest::Approx(0.5));
  CHECK(net.forward(Vec{-3.0, 12.0, 0.0})[0] == doctest::Approx(0.5));
}

TEST_CASE("forward: matches an independent straight-line re-evaluation") {
  std::mt19937_64 rng(42);
  DenseNet net = random_net(rng, 3, {4}, 2, Activation::kTanh, Activation::kSigmoid);
  const Vec input{0.25, -0.5, 0.75};

  // re-do the arithmetic by hand from the raw parameter arrays
  double h[4];
  for (int o = 0; o < 4; ++o) {
    double z = net.layer(0).b[static_cast<size_t>(o)];
    for (int i = 0; i < 3; ++i) z += net.layer(0).w[static_cast<size_t>(o * 3 + i)] * input[static_cast<size_t>(i)];
    h[o] = std::tanh(z);
  }
  double expect[2];
  for (int o = 0; o < 2; ++o) {
    double z = net.layer(1).b[static_cast<size_t>(o)];
    for (int i = 0; i < 4; ++i) z += net.layer(1).w[static_cast<size_t>(o * 4 + i)] * h[i];
    expect[o] = 1.0 / (1.0 + std::exp(-z));
  }

  const Vec out = net.forward(input);
  CHECK(out[0] == doctest::Approx(expect[0]).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(expect[1]).epsilon(1e-12));
}

TEST_CASE("forward: dimension mismatch is rejected") {
  DenseNet net = zero_sigmoid_net(3);
  CHECK_THROWS_AS((void)net.forward(Vec{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("layer dimension chaining is enforced") {
  std::mt19937_64 rng(7);
  std::vector<LayerShape> bad{{3, 4, Activation::kTanh}, {5, 2, Activation::kIdentity}};
  CHECK_THROWS_AS(DenseNet(3, bad, rng), std::invalid_argument);
}

TEST_CASE("backward: zero-weight sigmoid net, BCE target 1, loss = ln 2") {
  DenseNet net = zero_sigmoid_net(2);
  const BackwardResult r = backward(net, Vec{0.4, 0.6}, BceLoss{{1.0}});
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("backward: squared loss at the net's own output is zero with zero gradients") {
  std::mt19937_64 rng(9);
  DenseNet net = random_net(rng, 3, {5}, 2, Activation::kTanh, Activation::kIdentity);
  const Vec input{0.2, 0.8, -0.1};
  const Vec out = net.forward(input);
  const BackwardResult r = backward(net, input, SquaredLoss{out});
  CHECK(r.loss == doctest::Approx(0.0));
  for (const auto& l : r.grads.layers) {
    for (double g : l.w) CHECK(g == 0.0);
    for (double g : l.b) CHECK(g == 0.0);
  }
}

TEST_CASE("backward: analytic gradients match central finite differences") {
  std::mt19937_64 rng(1234);
  const Activation hidden_pool[] = {Activation::kTanh, Activation::kSigmoid, Activation::kRelu,
                                    Activation::kIdentity};
  for (int trial = 0; trial < 15; ++trial) {
    const int in_dim = 2 + uniform_int(rng, 3);
    const int hid = 3 + uniform_int(rng, 4);
    const Activation hact = hidden_pool[uniform_int(rng, 4)];

    {
      // bce over a sigmoid head
      DenseNet net = random_net(rng, in_dim, {hid}, 1, hact, Activation::kSigmoid);
      Vec input = random_vec(rng, in_dim, -1.0, 1.0);
      while (hact == Activation::kRelu && relu_kink_margin(net, input) < 1e-3) {
        input = random_vec(rng, in_dim, -1.0, 1.0);
      }
      const Loss loss = BceLoss{{uniform_int(rng, 2) ? 1.0 : 0.0}};
      const BackwardResult r = backward(net, input, loss);
      CHECK(max_rel_error(r.grads, finite_difference(net, input, loss, 1e-5)) < 1e-4);
    }
    {
      // squared over an identity head
      DenseNet net = random_net(rng, in_dim, {hid}, 2, hact, Activation::kIdentity);
      Vec input = random_vec(rng, in_dim, -1.0, 1.0);
      while (hact == Activation::kRelu && relu_kink_margin(net, input) < 1e-3) {
        input = random_vec(rng, in_dim, -1.0, 1.0);
      }
      const Loss loss = SquaredLoss{random_vec(rng, 2, -1.0, 1.0)};
      const BackwardResult r = backward(net, input, loss);
      CHECK(max_rel_error(r.grads, finite_difference(net, input, loss, 1e-5)) < 1e-4);
    }
    {
      // actor-critic surrogate over [logits..., value]
      DenseNet net = random_net(rng, in_dim, {hid}, 4, hact, Activation::kIdentity);
      Vec input = random_vec(rng, in_dim, -1.0, 1.0);
      while (hact == Activation::kRelu && relu_kink_margin(net, input) < 1e-3) {
        input = random_vec(rng, in_dim, -1.0, 1.0);
      }
      PolicySurrogateLoss ps;
      ps.action = uniform_int(rng, 3);
      ps.advantage = uniform_range(rng, -2.0, 2.0);
      ps.ret = uniform_range(rng, -2.0, 2.0);
      const Loss loss = ps;
      const BackwardResult r = backward(net, input, loss);
      CHECK(max_rel_error(r.grads, finite_difference(net, input, loss, 1e-5)) < 1e-4);
    }
  }
}

TEST_CASE("apply_gradients: sgd arithmetic") {
  std::mt19937_64 rng(3);
  DenseNet net = DenseNet::mlp(1, {}, 1, Activation::kTanh, Activation::kIdentity, rng);
  net.layer(0).w = {1.0};
  net.layer(0).b = {0.0};
  Gradients g = Gradients::zeros_like(net);
  g.layers[0].w = {2.0};
  OptimizerState opt = OptimizerState::sgd(0.1);
  apply_gradients(net, g, opt);
  CHECK(net.layer(0).w[0] == doctest::Approx(0.8));
}

TEST_CASE("apply_gradients: zero gradient leaves parameters unchanged, adam moments decayed") {
  std::mt19937_64 rng(4);
  DenseNet net = random_net(rng, 2, {3}, 1, Activation::kTanh, Activation::kSigmoid);
  OptimizerState opt = OptimizerState::adam(1e-3);

  Gradients ones = Gradients::zeros_like(net);
  for (auto& l : ones.layers) {
    for (double& x : l.w) x = 1.0;
    for (double& x : l.b) x = 1.0;
  }
  apply_gradients(net, ones, opt);
  const double m_before = opt.m[0];

  const DenseNet before = net;
  Gradients zero = Gradients::zeros_like(net);
  apply_gradients(net, zero, opt);
  for (int k = 0; k < net.layer_count(); ++k) {
    for (size_t i = 0; i < net.layer(k).w.size(); ++i) {
      CHECK(net.layer(k).w[i] == doctest::Approx(before.layer(k).w[i]).epsilon(1e-12));
    }
  }
  CHECK(opt.m[0] == doctest::Approx(m_before * 0.9));
}

TEST_CASE("apply_gradients: adam first step moves every parameter by about lr") {
  std::mt19937_64 rng(5);
  DenseNet net = random_net(rng, 2, {3}, 1, Activation::kTanh, Activation::kSigmoid);
  const DenseNet before = net;
  Gradients ones = Gradients::zeros_like(net);
  for (auto& l : ones.layers) {
    for (double& x : l.w) x = 1.0;
    for (double& x : l.b) x = 1.0;
  }
  // closed form at step 1 with g = 1: m_hat = 1, v_hat = 1, delta = lr / (1 + eps)
  OptimizerState opt = OptimizerState::adam(1e-3);
  apply_gradients(net, ones, opt);
  for (int k = 0; k < net.layer_count(); ++k) {
    for (size_t i = 0; i < net.layer(k).w.size(); ++i) {
      const double delta = before.layer(k).w[i] - net.layer(k).w[i];
      CHECK(delta == doctest::Approx(1e-3).epsilon(1e-6));
    }
  }
}

TEST_CASE("apply_gradients: shape mismatch is rejected") {
  std::mt19937_64 rng(6);
  DenseNet net = random_net(rng, 2, {3}, 1, Activation::kTanh, Activation::kSigmoid);
  DenseNet other = random_net(rng, 2, {4}, 1, Activation::kTanh, Activation::kSigmoid);
  Gradients g = Gradients::zeros_like(other);
  OptimizerState opt = OptimizerState::sgd(0.1);
  CHECK_THROWS_AS(apply_gradients(net, g, opt), std::invalid_argument);
}

TEST_CASE("training determinism: identical seeds give bit-identical parameters") {
  auto train = [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    DenseNet net = DenseNet::mlp(2, {8}, 1, Activation::kTanh, Activation::kSigmoid, rng);
    OptimizerState opt = OptimizerState::adam(1e-3);
    for (int step = 0; step < 50; ++step) {
      const Vec input{uniform01(rng), uniform01(rng)};
      const double y = input[0] > input[1] ? 1.0 : 0.0;
      const BackwardResult r = backward(net, input, BceLoss{{y}});
      apply_gradients(net, r.grads, opt);
    }
    return net;
  };
  const DenseNet a = train(77);
  const DenseNet b = train(77);
  for (int k = 0; k < a.layer_count(); ++k) {
    for (size_t i = 0; i < a.layer(k).w.size(); ++i) CHECK(a.layer(k).w[i] == b.layer(k).w[i]);
    for (size_t i = 0; i < a.layer(k).b.size(); ++i) CHECK(a.layer(k).b[i] == b.layer(k).b[i]);
  }
}

TEST_CASE("training: BCE on a separable set decreases loss at least 95 of 100 steps") {
  std::mt19937_64 rng(11);
  DenseNet net = DenseNet::mlp(2, {8}, 1, Activation::kTanh, Activation::kSigmoid, rng);
  OptimizerState opt = OptimizerState::adam(1e-2);

  std::vector<std::pair<Vec, double>> data;
  for (int i = 0; i < 40; ++i) {
    const Vec x{uniform01(rng), uniform01(rng)};
    data.emplace_back(x, x[0] > x[1] ? 1.0 : 0.0);
  }
  auto full_batch_loss_step = [&](bool apply) {
    Gradients total = Gradients::zeros_like(net);
    double loss = 0.0;
    for (const auto& [x, y] : data) {
      const BackwardResult r = backward(net, x, BceLoss{{y}});
      loss += r.loss;
      total.accumulate(r.grads);
    }
    total.scale(1.0 / static_cast<double>(data.size()));
    if (apply) apply_gradients(net, total, opt);
    return loss / static_cast<double>(data.size());
  };

  int decreases = 0;
  double prev = full_batch_loss_step(true);
  for (int step = 0; step < 100; ++step) {
    const double cur = full_batch_loss_step(true);
    if (cur < prev) ++decreases;
    prev = cur;
  }
  CHECK(decreases >= 95);
}

TEST_CASE("checkpoint: text round-trip restores parameters exactly") {
  std::mt19937_64 rng(13);
  DenseNet net = random_net(rng, 3, {4, 4}, 2, Activation::kRelu, Activation::kIdentity);
  std::stringstream ss;
  save_checkpoint(net, ss);
  const DenseNet loaded = load_checkpoint(ss);
  REQUIRE(loaded.layer_count() == net.layer_count());
  CHECK(loaded.input_dim() == net.input_dim());
  for (int k = 0; k < net.layer_count(); ++k) {
    CHECK(loaded.layer(k).act == net.layer(k).act);
    for (size_t i = 0; i < net.layer(k).w.size(); ++i) CHECK(loaded.layer(k).w[i] == net.layer(k).w[i]);
    for (size_t i = 0; i < net.layer(k).b.size(); ++i) CHECK(loaded.layer(k).b[i] == net.layer(k).b[i]);
  }
}

TEST_CASE("checkpoint: bad tag is rejected") {
  std::stringstream ss("not-a-checkpoint 1\n");
  CHECK_THROWS_AS((void)load_checkpoint(ss), std::runtime_error);
}

TEST_CASE("softmax sums to one") {
  const Vec p = softmax(Vec{1.0, 2.0, 3.0});
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p[2] > p[1]);
}
