#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace calrl {

using Vec = std::vector<double>;

// Deterministic helpers on top of mt19937_64. The std:: distributions are
// implementation-defined, so anything that must reproduce bit-for-bit across
// runs goes through these instead.
double uniform01(std::mt19937_64& rng);                       // [0, 1)
double uniform_range(std::mt19937_64& rng, double lo, double hi);
int uniform_int(std::mt19937_64& rng, int n);                 // [0, n)

enum class Activation { kIdentity, kRelu, kTanh, kSigmoid };

std::string_view activation_name(Activation a);
Activation activation_from_name(std::string_view name);

// Probabilities are clamped to [kProbEps, 1 - kProbEps] before any log so a
// saturated sigmoid can never produce an infinite cross-entropy loss.
inline constexpr double kProbEps = 1e-7;
double clamp_prob(double p);

struct LayerShape {
  int in;
  int out;
  Activation act;
};

/// Dense feed-forward network: an ordered stack of affine layers, each
/// followed by an elementwise activation. Plain value type; copying one is
/// how parameter snapshots are taken.
class DenseNet {
 public:
  struct Layer {
    int in = 0;
    int out = 0;
    Activation act = Activation::kIdentity;
    Vec w;  // row-major [out x in]
    Vec b;  // [out]
  };

  DenseNet() = default;

  // Weights drawn uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  DenseNet(int input_dim, std::span<const LayerShape> shapes, std::mt19937_64& rng);

  static DenseNet mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                      Activation hidden_act, Activation output_act, std::mt19937_64& rng);

  int input_dim() const { return input_dim_; }
  int output_dim() const;
  int layer_count() const { return static_cast<int>(layers_.size()); }
  const Layer& layer(int k) const { return layers_[static_cast<size_t>(k)]; }
  Layer& layer(int k) { return layers_[static_cast<size_t>(k)]; }
  int parameter_count() const;

  /// Throws std::invalid_argument on input length mismatch.
  Vec forward(std::span<const double> input) const;

  bool all_finite() const;

 private:
  friend struct ForwardTrace;
  int input_dim_ = 0;
  std::vector<Layer> layers_;
};

/// Per-layer gradient arrays, shape-congruent with the net they came from.
struct Gradients {
  struct LayerGrad {
    Vec w;
    Vec b;
  };
  std::vector<LayerGrad> layers;

  static Gradients zeros_like(const DenseNet& net);
  void accumulate(const Gradients& other);  // elementwise +=
  void scale(double factor);
};

// Loss forms understood by backward().
//
// Bce: per-output binary cross-entropy against targets in [0,1]; the net
// output is treated as a probability (clamped before the log).
// Squared: sum of squared errors against a target of matching length.
// PolicySurrogate: actor-critic surrogate over an output layout of
// [action logits..., value]:
//   -advantage*log pi(a) + value_coeff*(ret - v)^2 - entropy_coeff*H(pi)
struct BceLoss {
  Vec target;
};
struct SquaredLoss {
  Vec target;
};
struct PolicySurrogateLoss {
  int action = 0;
  double advantage = 0.0;
  double ret = 0.0;
  double value_coeff = 0.5;
  double entropy_coeff = 0.01;
};
using Loss = std::variant<BceLoss, SquaredLoss, PolicySurrogateLoss>;

struct BackwardResult {
  double loss = 0.0;
  Gradients grads;
};

/// Analytic loss and gradient for one input. Gradients are exact derivatives
/// of the returned scalar with respect to every weight and bias.
BackwardResult backward(const DenseNet& net, std::span<const double> input, const Loss& loss);

struct OptimizerState {
  enum class Method { kSgd, kAdam };

  Method method = Method::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // Adam moments over the flattened parameter vector; empty until first use.
  Vec m;
  Vec v;
  std::int64_t step = 0;

  static OptimizerState sgd(double lr);
  static OptimizerState adam(double lr);
};

/// In-place parameter update. Throws std::invalid_argument on shape mismatch
/// and std::runtime_error if any parameter turns non-finite.
void apply_gradients(DenseNet& net, const Gradients& g, OptimizerState& opt);

// Checkpoint container: versioned text format holding layer shapes,
// activation tags and row-major parameter arrays.
void save_checkpoint(const DenseNet& net, std::ostream& out);
void save_checkpoint(const DenseNet& net, const std::string& path);
DenseNet load_checkpoint(std::istream& in);
DenseNet load_checkpoint(const std::string& path);

// Softmax with max-subtraction; used by the policy head and tests.
Vec softmax(std::span<const double> logits);

}  // namespace calrl
