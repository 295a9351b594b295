#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "calrl/env.hpp"
#include "calrl/esce.hpp"
#include "calrl/net.hpp"
#include "calrl/rounds.hpp"

namespace calrl {

// r_t = alpha * r_c + beta * r_e.
struct RewardMix {
  double alpha = 0.0;
  double beta = 1.0;
};

double mix_rewards(double r_c, double r_e, const RewardMix& mix);

// Deterministic per-stream seed derivation (splitmix64 over base ^ stream).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Actor-critic network over a shared dense trunk. The underlying net's
/// output layout is [action logits..., value]; the policy head is the logit
/// slice and the value head the trailing scalar.
class PolicyNet {
 public:
  PolicyNet(int observation_dim, int num_actions, const std::vector<int>& hidden,
            std::mt19937_64& rng);
  PolicyNet(DenseNet net, int num_actions);  // e.g. from a checkpoint

  int num_actions() const { return num_actions_; }
  int observation_dim() const { return net_.input_dim(); }
  const DenseNet& net() const { return net_; }
  DenseNet& net() { return net_; }

  Vec action_probs(const Observation& obs) const;
  double value(const Observation& obs) const;

  struct ActResult {
    int action = 0;
    double log_prob = 0.0;
    double value = 0.0;
  };
  /// Samples from the softmax policy.
  ActResult act(const Observation& obs, std::mt19937_64& rng) const;
  /// Greedy evaluation mode: argmax action, deterministic.
  int greedy_action(const Observation& obs) const;

 private:
  DenseNet net_;
  int num_actions_;
};

struct RolloutStep {
  Observation observation;
  int action = 0;
  double reward = 0.0;  // mixed reward
  double value = 0.0;
  bool done = false;
};

struct RolloutBuffer {
  std::vector<RolloutStep> steps;
  int n_steps = 8;
  double gamma = 0.99;

  bool full() const { return static_cast<int>(steps.size()) >= n_steps; }
  void clear() { steps.clear(); }
};

struct ReturnsAdvantages {
  Vec returns;
  Vec advantages;
};

/// n-step discounted returns R_t = r_t + gamma * R_{t+1}, restarted at done
/// flags and seeded with the bootstrap value when the buffer ends
/// mid-episode; advantages A_t = R_t - V(s_t).
ReturnsAdvantages compute_returns(const RolloutBuffer& buffer, double bootstrap_value);

struct UpdateResult {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  bool applied = false;  // false when a non-finite advantage forced a skip
};

struct SurrogateGradient {
  Gradients grads;
  UpdateResult losses;
};

/// Mean gradient of the actor-critic surrogate over the buffer, without
/// touching the network. losses.applied is false (and grads empty) when any
/// advantage or return is non-finite.
SurrogateGradient surrogate_gradient(const PolicyNet& policy, const RolloutBuffer& buffer,
                                     const ReturnsAdvantages& ra, double entropy_coeff,
                                     double value_coeff);

/// Single-threaded convenience: surrogate_gradient + one apply_gradients.
UpdateResult update(PolicyNet& policy, const RolloutBuffer& buffer, const ReturnsAdvantages& ra,
                    OptimizerState& opt, double entropy_coeff, double value_coeff);

/// Shared parameters with a serialized writer. Workers act on snapshots and
/// refresh after each gradient they contribute.
class SharedPolicy {
 public:
  SharedPolicy(PolicyNet net, OptimizerState opt);

  PolicyNet snapshot() const;
  void apply(const Gradients& g);
  int updates_applied() const;

  /// Single-threaded access, e.g. for checkpointing between collection
  /// phases. Not for use while workers run.
  PolicyNet& unsafe_policy() { return net_; }
  const PolicyNet& unsafe_policy() const { return net_; }

 private:
  mutable std::mutex mu_;
  PolicyNet net_;
  OptimizerState opt_;
  int updates_ = 0;
};

struct EpisodeStats {
  long episode = 0;
  int worker = 0;
  double raw_env_return = 0.0;
  double mixed_return = 0.0;
  int calibrated_reward_count = 0;
  int length = 0;
};

// A completed round together with the rollout-time sufficiency flags of its
// states, kept for metric evaluation and sensitive-pool recording.
struct WorkerRound {
  Round round;
  std::vector<char> flagged;
};

struct RolloutConfig {
  int workers = 1;
  long step_budget = 0;
  bool stop_when_main_pools_full = false;
  int n_steps = 8;
  double gamma = 0.99;
  double entropy_coeff = 0.01;
  double value_coeff = 0.5;
  RewardMix mix;
  std::uint64_t seed = 0;
  bool update_policy = true;
  bool collect_rounds = true;
  int max_eval_rounds = 1024;
};

struct RolloutResult {
  std::vector<EpisodeStats> episodes;
  std::vector<WorkerRound> rounds;  // capped at max_eval_rounds
  long total_steps = 0;
  long rounds_pushed = 0;
  long calibrated_rewards = 0;
  int gradient_updates = 0;
  int skipped_updates = 0;
  std::vector<std::string> worker_errors;
};

/// Runs `workers` rollout workers, each owning a private environment, acting
/// on policy snapshots, pushing completed rounds into the shared pools,
/// requesting calibrated rewards from the ESCE snapshot and submitting
/// n-step surrogate gradients through the serialized writer. With one worker
/// and a fixed seed the result is fully deterministic. A worker failure is
/// contained and reported in worker_errors; the others continue.
RolloutResult run_workers(const RolloutConfig& config, const EnvConfig& env_config,
                          SharedPolicy& shared, PoolSet& pools, const EsceModel* esce);

}  // namespace calrl
