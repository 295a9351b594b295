#include "calrl/net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace calrl {

double uniform01(std::mt19937_64& rng) {
  // 53 random mantissa bits -> [0, 1). Identical on every platform.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform_range(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

int uniform_int(std::mt19937_64& rng, int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  // Rejection sampling to avoid modulo bias.
  const std::uint64_t bound = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % static_cast<std::uint64_t>(n);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= bound);
  return static_cast<int>(x % static_cast<std::uint64_t>(n));
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  throw std::logic_error("activation_name: bad enum");
}

Activation activation_from_name(std::string_view name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw std::invalid_argument("unknown activation: " + std::string(name));
}

double clamp_prob(double p) {
  return std::clamp(p, kProbEps, 1.0 - kProbEps);
}

namespace {

double activate(Activation a, double z) {
  switch (a) {
    case Activation::kIdentity: return z;
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
    case Activation::kTanh: return std::tanh(z);
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

// Derivative expressed through the post-activation value y = act(z).
double activate_deriv(Activation a, double y) {
  switch (a) {
    case Activation::kIdentity: return 1.0;
    case Activation::kRelu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: return 1.0 - y * y;
    case Activation::kSigmoid: return y * (1.0 - y);
  }
  return 1.0;
}

}  // namespace

DenseNet::DenseNet(int input_dim, std::span<const LayerShape> shapes, std::mt19937_64& rng)
    : input_dim_(input_dim) {
  if (input_dim <= 0) throw std::invalid_argument("DenseNet: input_dim must be positive");
  int expect = input_dim;
  layers_.reserve(shapes.size());
  for (const LayerShape& s : shapes) {
    if (s.in != expect) {
      throw std::invalid_argument("DenseNet: layer input " + std::to_string(s.in) +
                                  " does not chain with previous output " + std::to_string(expect));
    }
    if (s.out <= 0) throw std::invalid_argument("DenseNet: layer output must be positive");
    Layer layer;
    layer.in = s.in;
    layer.out = s.out;
    layer.act = s.act;
    layer.w.resize(static_cast<size_t>(s.in) * static_cast<size_t>(s.out));
    layer.b.assign(static_cast<size_t>(s.out), 0.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
    for (double& x : layer.w) x = uniform_range(rng, -bound, bound);
    for (double& x : layer.b) x = uniform_range(rng, -bound, bound);
    layers_.push_back(std::move(layer));
    expect = s.out;
  }
  if (layers_.empty()) throw std::invalid_argument("DenseNet: at least one layer required");
}

DenseNet DenseNet::mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                       Activation hidden_act, Activation output_act, std::mt19937_64& rng) {
  std::vector<LayerShape> shapes;
  int in = input_dim;
  for (int h : hidden) {
    shapes.push_back({in, h, hidden_act});
    in = h;
  }
  shapes.push_back({in, output_dim, output_act});
  return DenseNet(input_dim, shapes, rng);
}

int DenseNet::output_dim() const {
  if (layers_.empty()) return 0;
  return layers_.back().out;
}

int DenseNet::parameter_count() const {
  int n = 0;
  for (const Layer& l : layers_) n += static_cast<int>(l.w.size() + l.b.size());
  return n;
}

Vec DenseNet::forward(std::span<const double> input) const {
  if (static_cast<int>(input.size()) != input_dim_) {
    throw std::invalid_argument("forward: input length " + std::to_string(input.size()) +
                                " != input_dim " + std::to_string(input_dim_));
  }
  Vec cur(input.begin(), input.end());
  Vec next;
  for (const Layer& l : layers_) {
    next.assign(static_cast<size_t>(l.out), 0.0);
    for (int o = 0; o < l.out; ++o) {
      const double* row = l.w.data() + static_cast<size_t>(o) * static_cast<size_t>(l.in);
      double z = l.b[static_cast<size_t>(o)];
      for (int i = 0; i < l.in; ++i) z += row[i] * cur[static_cast<size_t>(i)];
      next[static_cast<size_t>(o)] = activate(l.act, z);
    }
    cur.swap(next);
  }
  return cur;
}

bool DenseNet::all_finite() const {
  for (const Layer& l : layers_) {
    for (double x : l.w)
      if (!std::isfinite(x)) return false;
    for (double x : l.b)
      if (!std::isfinite(x)) return false;
  }
  return true;
}

Gradients Gradients::zeros_like(const DenseNet& net) {
  Gradients g;
  g.layers.resize(static_cast<size_t>(net.layer_count()));
  for (int k = 0; k < net.layer_count(); ++k) {
    g.layers[static_cast<size_t>(k)].w.assign(net.layer(k).w.size(), 0.0);
    g.layers[static_cast<size_t>(k)].b.assign(net.layer(k).b.size(), 0.0);
  }
  return g;
}

void Gradients::accumulate(const Gradients& other) {
  if (layers.size() != other.layers.size()) throw std::invalid_argument("Gradients::accumulate: layer count mismatch");
  for (size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].w.size() != other.layers[k].w.size() || layers[k].b.size() != other.layers[k].b.size())
      throw std::invalid_argument("Gradients::accumulate: shape mismatch");
    for (size_t i = 0; i < layers[k].w.size(); ++i) layers[k].w[i] += other.layers[k].w[i];
    for (size_t i = 0; i < layers[k].b.size(); ++i) layers[k].b[i] += other.layers[k].b[i];
  }
}

void Gradients::scale(double factor) {
  for (auto& l : layers) {
    for (double& x : l.w) x *= factor;
    for (double& x : l.b) x *= factor;
  }
}

namespace {

// Loss value plus d(loss)/d(output) for each loss form. `out` is the net's
// final post-activation output.
struct LossEval {
  double loss;
  Vec dout;
};

LossEval eval_bce(const Vec& out, const BceLoss& l) {
  if (out.size() != l.target.size()) throw std::invalid_argument("bce: target length mismatch");
  LossEval e{0.0, Vec(out.size(), 0.0)};
  for (size_t i = 0; i < out.size(); ++i) {
    const double y = l.target[i];
    const double p = clamp_prob(out[i]);
    e.loss += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    // Zero slope outside the clamp window.
    if (out[i] > kProbEps && out[i] < 1.0 - kProbEps) {
      e.dout[i] = (p - y) / (p * (1.0 - p));
    }
  }
  return e;
}

LossEval eval_squared(const Vec& out, const SquaredLoss& l) {
  if (out.size() != l.target.size()) throw std::invalid_argument("squared: target length mismatch");
  LossEval e{0.0, Vec(out.size(), 0.0)};
  for (size_t i = 0; i < out.size(); ++i) {
    const double d = out[i] - l.target[i];
    e.loss += d * d;
    e.dout[i] = 2.0 * d;
  }
  return e;
}

LossEval eval_policy_surrogate(const Vec& out, const PolicySurrogateLoss& l) {
  if (out.size() < 2) throw std::invalid_argument("policy surrogate: output must hold logits plus a value");
  const int num_actions = static_cast<int>(out.size()) - 1;
  if (l.action < 0 || l.action >= num_actions) throw std::invalid_argument("policy surrogate: action out of range");

  const Vec pi = softmax(std::span<const double>(out.data(), static_cast<size_t>(num_actions)));
  const double v = out.back();

  double entropy = 0.0;
  for (double p : pi) {
    if (p > 0.0) entropy -= p * std::log(p);
  }
  const double logp_a = std::log(clamp_prob(pi[static_cast<size_t>(l.action)]));
  const double value_err = l.ret - v;

  LossEval e{0.0, Vec(out.size(), 0.0)};
  e.loss = -l.advantage * logp_a + l.value_coeff * value_err * value_err - l.entropy_coeff * entropy;
  for (int i = 0; i < num_actions; ++i) {
    const double p = pi[static_cast<size_t>(i)];
    const double indicator = (i == l.action) ? 1.0 : 0.0;
    const double d_pg = -l.advantage * (indicator - p);
    const double d_ent = l.entropy_coeff * p * (std::log(std::max(p, kProbEps)) + entropy);
    e.dout[static_cast<size_t>(i)] = d_pg + d_ent;
  }
  e.dout.back() = -2.0 * l.value_coeff * value_err;
  return e;
}

}  // namespace

BackwardResult backward(const DenseNet& net, std::span<const double> input, const Loss& loss) {
  if (static_cast<int>(input.size()) != net.input_dim()) {
    throw std::invalid_argument("backward: input length mismatch");
  }

  // Forward pass, keeping every post-activation vector.
  std::vector<Vec> acts;
  acts.reserve(static_cast<size_t>(net.layer_count()) + 1);
  acts.emplace_back(input.begin(), input.end());
  for (int k = 0; k < net.layer_count(); ++k) {
    const auto& l = net.layer(k);
    Vec y(static_cast<size_t>(l.out), 0.0);
    const Vec& x = acts.back();
    for (int o = 0; o < l.out; ++o) {
      const double* row = l.w.data() + static_cast<size_t>(o) * static_cast<size_t>(l.in);
      double z = l.b[static_cast<size_t>(o)];
      for (int i = 0; i < l.in; ++i) z += row[i] * x[static_cast<size_t>(i)];
      y[static_cast<size_t>(o)] = activate(l.act, z);
    }
    acts.push_back(std::move(y));
  }

  const Vec& out = acts.back();
  LossEval e = std::visit(
      [&out](const auto& l) -> LossEval {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, BceLoss>) {
          return eval_bce(out, l);
        } else if constexpr (std::is_same_v<T, SquaredLoss>) {
          return eval_squared(out, l);
        } else {
          return eval_policy_surrogate(out, l);
        }
      },
      loss);

  BackwardResult result;
  result.loss = e.loss;
  result.grads = Gradients::zeros_like(net);

  // Backward pass: delta = dL/dy for the current layer's output.
  Vec delta = std::move(e.dout);
  for (int k = net.layer_count() - 1; k >= 0; --k) {
    const auto& l = net.layer(k);
    const Vec& x = acts[static_cast<size_t>(k)];
    const Vec& y = acts[static_cast<size_t>(k) + 1];
    auto& g = result.grads.layers[static_cast<size_t>(k)];
    Vec dprev(static_cast<size_t>(l.in), 0.0);
    for (int o = 0; o < l.out; ++o) {
      const double dz = delta[static_cast<size_t>(o)] * activate_deriv(l.act, y[static_cast<size_t>(o)]);
      g.b[static_cast<size_t>(o)] = dz;
      double* grow = g.w.data() + static_cast<size_t>(o) * static_cast<size_t>(l.in);
      const double* wrow = l.w.data() + static_cast<size_t>(o) * static_cast<size_t>(l.in);
      for (int i = 0; i < l.in; ++i) {
        grow[i] = dz * x[static_cast<size_t>(i)];
        dprev[static_cast<size_t>(i)] += dz * wrow[i];
      }
    }
    delta.swap(dprev);
  }
  return result;
}

OptimizerState OptimizerState::sgd(double lr) {
  OptimizerState s;
  s.method = Method::kSgd;
  s.learning_rate = lr;
  return s;
}

OptimizerState OptimizerState::adam(double lr) {
  OptimizerState s;
  s.method = Method::kAdam;
  s.learning_rate = lr;
  return s;
}

void apply_gradients(DenseNet& net, const Gradients& g, OptimizerState& opt) {
  if (static_cast<int>(g.layers.size()) != net.layer_count()) {
    throw std::invalid_argument("apply_gradients: layer count mismatch");
  }
  for (int k = 0; k < net.layer_count(); ++k) {
    if (g.layers[static_cast<size_t>(k)].w.size() != net.layer(k).w.size() ||
        g.layers[static_cast<size_t>(k)].b.size() != net.layer(k).b.size()) {
      throw std::invalid_argument("apply_gradients: shape mismatch at layer " + std::to_string(k));
    }
  }

  if (opt.method == OptimizerState::Method::kSgd) {
    for (int k = 0; k < net.layer_count(); ++k) {
      auto& l = net.layer(k);
      const auto& gl = g.layers[static_cast<size_t>(k)];
      for (size_t i = 0; i < l.w.size(); ++i) l.w[i] -= opt.learning_rate * gl.w[i];
      for (size_t i = 0; i < l.b.size(); ++i) l.b[i] -= opt.learning_rate * gl.b[i];
    }
  } else {
    const size_t total = static_cast<size_t>(net.parameter_count());
    if (opt.m.empty()) {
      opt.m.assign(total, 0.0);
      opt.v.assign(total, 0.0);
    } else if (opt.m.size() != total || opt.v.size() != total) {
      throw std::invalid_argument("apply_gradients: adam moment shape mismatch");
    }
    opt.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    size_t idx = 0;
    auto update_span = [&](Vec& params, const Vec& grads) {
      for (size_t i = 0; i < params.size(); ++i, ++idx) {
        const double gi = grads[i];
        opt.m[idx] = opt.beta1 * opt.m[idx] + (1.0 - opt.beta1) * gi;
        opt.v[idx] = opt.beta2 * opt.v[idx] + (1.0 - opt.beta2) * gi * gi;
        const double mhat = opt.m[idx] / bc1;
        const double vhat = opt.v[idx] / bc2;
        params[i] -= opt.learning_rate * mhat / (std::sqrt(vhat) + opt.eps);
      }
    };
    for (int k = 0; k < net.layer_count(); ++k) {
      update_span(net.layer(k).w, g.layers[static_cast<size_t>(k)].w);
      update_span(net.layer(k).b, g.layers[static_cast<size_t>(k)].b);
    }
  }

  if (!net.all_finite()) throw std::runtime_error("apply_gradients: parameters turned non-finite");
}

namespace {
constexpr const char* kCheckpointTag = "calrl-net";
constexpr int kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const DenseNet& net, std::ostream& out) {
  out << kCheckpointTag << ' ' << kCheckpointVersion << '\n';
  out << "input_dim " << net.input_dim() << '\n';
  out << "layers " << net.layer_count() << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (int k = 0; k < net.layer_count(); ++k) {
    const auto& l = net.layer(k);
    out << "layer " << l.out << ' ' << l.in << ' ' << activation_name(l.act) << '\n';
    for (size_t i = 0; i < l.w.size(); ++i) out << l.w[i] << (i + 1 == l.w.size() ? '\n' : ' ');
    for (size_t i = 0; i < l.b.size(); ++i) out << l.b[i] << (i + 1 == l.b.size() ? '\n' : ' ');
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

void save_checkpoint(const DenseNet& net, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  save_checkpoint(net, f);
}

DenseNet load_checkpoint(std::istream& in) {
  std::string tag;
  int version = 0;
  in >> tag >> version;
  if (!in || tag != kCheckpointTag) throw std::runtime_error("load_checkpoint: bad format tag");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  }
  std::string key;
  int input_dim = 0, layer_count = 0;
  in >> key >> input_dim;
  if (!in || key != "input_dim") throw std::runtime_error("load_checkpoint: expected input_dim");
  in >> key >> layer_count;
  if (!in || key != "layers") throw std::runtime_error("load_checkpoint: expected layers");

  // Build through a dummy-initialized net of matching shapes, then overwrite.
  std::vector<LayerShape> shapes;
  struct Raw {
    Vec w, b;
  };
  std::vector<Raw> raw;
  for (int k = 0; k < layer_count; ++k) {
    std::string act;
    int out = 0, in_dim = 0;
    in >> key >> out >> in_dim >> act;
    if (!in || key != "layer") throw std::runtime_error("load_checkpoint: expected layer header");
    shapes.push_back({in_dim, out, activation_from_name(act)});
    Raw r;
    r.w.resize(static_cast<size_t>(out) * static_cast<size_t>(in_dim));
    r.b.resize(static_cast<size_t>(out));
    for (double& x : r.w) in >> x;
    for (double& x : r.b) in >> x;
    if (!in) throw std::runtime_error("load_checkpoint: truncated parameter block");
    raw.push_back(std::move(r));
  }
  std::mt19937_64 rng(0);
  DenseNet net(input_dim, shapes, rng);
  for (int k = 0; k < layer_count; ++k) {
    net.layer(k).w = std::move(raw[static_cast<size_t>(k)].w);
    net.layer(k).b = std::move(raw[static_cast<size_t>(k)].b);
  }
  return net;
}

DenseNet load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  return load_checkpoint(f);
}

Vec softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vec out(logits.size(), 0.0);
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

}  // namespace calrl
