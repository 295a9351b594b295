#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "calrl/net.hpp"

namespace calrl {

// Fixed-length state vector, every component in [0, 1].
struct Observation {
  Vec values;
};

enum class SignalKind { kNone, kPositive, kNegative };
enum class NegativeCause { kPenalty, kDeath, kEpisodeEnd };

std::string_view signal_kind_name(SignalKind k);
std::string_view negative_cause_name(NegativeCause c);

// Environmental signal taxonomy: positive = desired signals (positive
// rewards), negative = penalties, deaths and episode endings.
struct EnvSignal {
  SignalKind kind = SignalKind::kNone;
  NegativeCause negative_cause = NegativeCause::kPenalty;  // valid when kind == kNegative
  double magnitude = 0.0;

  static EnvSignal none() { return {}; }
  static EnvSignal positive(double magnitude);
  static EnvSignal negative(NegativeCause cause, double magnitude);
};

struct StepResult {
  Observation observation;  // state after the transition
  double env_reward = 0.0;
  EnvSignal signal;
  bool done = false;
};

struct EnvConfig {
  std::string env_name = "delayed-chain";  // delayed-chain | trap-grid

  // delayed-chain: a 1-D corridor of chain_length cells. The last
  // corridor_length cells form a success corridor that absorbs toward the
  // goal; the goal cell itself is absorbing. Reward only on arrival at the
  // goal cell, so every episode runs to the step budget.
  int chain_length = 10;
  int corridor_length = 3;

  // trap-grid: grid_width x grid_height cells addressed as flat indices
  // y*width + x. Landing on the goal pays goal_reward and teleports the
  // agent back to the start (episode continues); the trap kills; penalty
  // cells charge penalty_magnitude and the episode continues.
  int grid_width = 5;
  int grid_height = 5;
  int start_cell = 0;
  int goal_cell = -1;  // -1: last cell
  int trap_cell = -1;  // -1: center cell
  std::vector<int> penalty_cells;
  double penalty_magnitude = -0.25;

  double goal_reward = 1.0;
  double trap_penalty = -1.0;
  int max_episode_steps = 40;
  bool hindsight = false;
  std::uint64_t seed = 0;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual Observation reset() = 0;
  /// Throws std::logic_error when the episode is already done and
  /// std::invalid_argument for an out-of-range action.
  virtual StepResult step(int action) = 0;
  virtual int action_count() const = 0;
  virtual int observation_dim() const = 0;
  virtual bool done() const = 0;
};

/// Validates the config and constructs the environment, wrapped in the
/// hindsight adapter when config.hindsight is set.
std::unique_ptr<Env> make_env(const EnvConfig& config);

/// Hindsight rewards: positive env_reward values are withheld and the
/// accumulated sum is released on the next negative signal or at episode
/// end. Signals themselves pass through unaltered.
class HindsightEnv : public Env {
 public:
  explicit HindsightEnv(std::unique_ptr<Env> inner);
  Observation reset() override;
  StepResult step(int action) override;
  int action_count() const override { return inner_->action_count(); }
  int observation_dim() const override { return inner_->observation_dim(); }
  bool done() const override { return inner_->done(); }

 private:
  std::unique_ptr<Env> inner_;
  double withheld_ = 0.0;
};

// ---- Enumerable view for the sufficiency oracle ----

struct EnumTransition {
  EnvSignal signal;
  double reward = 0.0;
  bool done = false;
  int next_state = -1;  // -1 when the episode terminates
};

/// Explicit finite transition model. State ids encode (cell, steps taken);
/// state_step strictly increases along any transition, so the graph is a DAG.
class EnumerableMdp {
 public:
  virtual ~EnumerableMdp() = default;
  virtual int state_count() const = 0;
  virtual int initial_state() const = 0;
  virtual int action_count() const = 0;
  virtual int state_step(int s) const = 0;
  virtual Observation state_observation(int s) const = 0;
  virtual std::string state_label(int s) const = 0;
  virtual EnumTransition transition(int s, int action) const = 0;
};

/// Throws std::invalid_argument for configs whose state space cannot be
/// enumerated (both built-in environments can).
std::unique_ptr<EnumerableMdp> make_enumerable_mdp(const EnvConfig& config);

// Action distribution for a given observation; entries sum to 1.
using PolicyFn = std::function<Vec(const Observation&)>;

struct OracleResult {
  // P(next environmental signal is positive | state, policy), per state id.
  Vec positive_signal_prob;
  // State ids with probability >= 1 - epsilon.
  std::vector<int> sufficient;

  bool is_sufficient_state(int s) const;
};

/// Dynamic programming over the explicit transition model: a state is
/// sufficient when the next environmental signal is positive with
/// probability at least 1 - epsilon under the given policy.
OracleResult sufficiency_oracle(const EnvConfig& config, const PolicyFn& policy, double epsilon);

}  // namespace calrl
