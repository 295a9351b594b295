#include "calrl/env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace calrl {

std::string_view signal_kind_name(SignalKind k) {
  switch (k) {
    case SignalKind::kNone: return "none";
    case SignalKind::kPositive: return "positive";
    case SignalKind::kNegative: return "negative";
  }
  throw std::logic_error("signal_kind_name: bad enum");
}

std::string_view negative_cause_name(NegativeCause c) {
  switch (c) {
    case NegativeCause::kPenalty: return "penalty";
    case NegativeCause::kDeath: return "death";
    case NegativeCause::kEpisodeEnd: return "episode_end";
  }
  throw std::logic_error("negative_cause_name: bad enum");
}

EnvSignal EnvSignal::positive(double magnitude) {
  if (magnitude <= 0.0) throw std::invalid_argument("positive signal requires magnitude > 0");
  EnvSignal s;
  s.kind = SignalKind::kPositive;
  s.magnitude = magnitude;
  return s;
}

EnvSignal EnvSignal::negative(NegativeCause cause, double magnitude) {
  EnvSignal s;
  s.kind = SignalKind::kNegative;
  s.negative_cause = cause;
  s.magnitude = magnitude;
  return s;
}

namespace {

// Outcome of one transition of the underlying deterministic dynamics,
// shared between the stateful Env and the enumerable view.
struct Outcome {
  int next_cell = 0;
  EnvSignal signal;
  double reward = 0.0;
  bool done = false;
};

Observation cell_observation(int cell, int num_cells, int step, int max_steps) {
  Observation obs;
  obs.values.assign(static_cast<size_t>(num_cells) + 1, 0.0);
  obs.values[static_cast<size_t>(cell)] = 1.0;
  obs.values.back() = static_cast<double>(step) / static_cast<double>(max_steps);
  return obs;
}

// ---- delayed-chain dynamics ----
//
// Cells 0..N-1, actions {0: left, 1: right}. Cells >= N-C form the success
// corridor: any action there moves one cell toward the goal. The goal cell
// N-1 is absorbing. A positive signal fires exactly on arrival at the goal;
// the episode ends only when the step budget runs out.
struct ChainModel {
  int length;
  int corridor;
  int max_steps;
  double goal_reward;

  explicit ChainModel(const EnvConfig& c)
      : length(c.chain_length),
        corridor(c.corridor_length),
        max_steps(c.max_episode_steps),
        goal_reward(c.goal_reward) {
    if (length < 2) throw std::invalid_argument("delayed-chain: chain_length must be >= 2");
    if (corridor < 1 || corridor > length)
      throw std::invalid_argument("delayed-chain: corridor_length must be in [1, chain_length]");
    if (max_steps < 1) throw std::invalid_argument("max_episode_steps must be >= 1");
    if (c.goal_reward <= 0.0) throw std::invalid_argument("goal_reward must be > 0");
  }

  int num_cells() const { return length; }
  int num_actions() const { return 2; }
  int start_cell() const { return 0; }
  bool in_corridor(int cell) const { return cell >= length - corridor; }

  Outcome step(int cell, int steps_taken, int action) const {
    Outcome o;
    const int goal = length - 1;
    if (cell == goal) {
      o.next_cell = goal;  // absorbing
    } else if (in_corridor(cell)) {
      o.next_cell = cell + 1;  // absorbed toward the goal regardless of action
    } else {
      o.next_cell = std::clamp(cell + (action == 1 ? 1 : -1), 0, goal);
    }
    const bool arrived = (cell != goal && o.next_cell == goal);
    const bool truncated = steps_taken + 1 >= max_steps;
    if (arrived) {
      o.signal = EnvSignal::positive(goal_reward);
      o.reward = goal_reward;
    } else if (truncated) {
      o.signal = EnvSignal::negative(NegativeCause::kEpisodeEnd, 0.0);
    }
    o.done = truncated;
    return o;
  }
};

// ---- trap-grid dynamics ----
//
// Actions {0: up, 1: down, 2: left, 3: right}, clamped at the walls.
// Landing on the goal pays goal_reward and teleports back to the start so
// one episode can hold several positive rounds. The trap is fatal. Penalty
// cells charge penalty_magnitude without ending the episode.
struct GridModel {
  int width;
  int height;
  int start;
  int goal;
  int trap;
  std::vector<int> penalty_cells;
  double penalty_magnitude;
  double goal_reward;
  double trap_penalty;
  int max_steps;

  explicit GridModel(const EnvConfig& c)
      : width(c.grid_width),
        height(c.grid_height),
        start(c.start_cell),
        goal(c.goal_cell),
        trap(c.trap_cell),
        penalty_cells(c.penalty_cells),
        penalty_magnitude(c.penalty_magnitude),
        goal_reward(c.goal_reward),
        trap_penalty(c.trap_penalty),
        max_steps(c.max_episode_steps) {
    if (width < 2 || height < 1 || (width * height) < 3)
      throw std::invalid_argument("trap-grid: grid must hold at least 3 cells");
    const int n = width * height;
    if (goal < 0) goal = n - 1;
    if (trap < 0) trap = (height / 2) * width + width / 2;
    auto check_cell = [n](int cell, const char* what) {
      if (cell < 0 || cell >= n)
        throw std::invalid_argument(std::string("trap-grid: ") + what + " cell out of range");
    };
    check_cell(start, "start");
    check_cell(goal, "goal");
    check_cell(trap, "trap");
    if (start == goal || start == trap || goal == trap)
      throw std::invalid_argument("trap-grid: start, goal and trap cells must be distinct");
    for (int p : penalty_cells) {
      check_cell(p, "penalty");
      if (p == goal || p == trap || p == start)
        throw std::invalid_argument("trap-grid: penalty cell collides with start/goal/trap");
    }
    if (penalty_magnitude >= 0.0 && !penalty_cells.empty())
      throw std::invalid_argument("trap-grid: penalty_magnitude must be negative");
    if (max_steps < 1) throw std::invalid_argument("max_episode_steps must be >= 1");
    if (goal_reward <= 0.0) throw std::invalid_argument("goal_reward must be > 0");
  }

  int num_cells() const { return width * height; }
  int num_actions() const { return 4; }
  int start_cell() const { return start; }

  Outcome step(int cell, int steps_taken, int action) const {
    const int x = cell % width;
    const int y = cell / width;
    int nx = x, ny = y;
    switch (action) {
      case 0: ny = std::max(0, y - 1); break;
      case 1: ny = std::min(height - 1, y + 1); break;
      case 2: nx = std::max(0, x - 1); break;
      case 3: nx = std::min(width - 1, x + 1); break;
      default: throw std::invalid_argument("trap-grid: action out of range");
    }
    int landed = ny * width + nx;

    Outcome o;
    const bool truncated = steps_taken + 1 >= max_steps;
    if (landed == trap) {
      o.signal = EnvSignal::negative(NegativeCause::kDeath, trap_penalty);
      o.reward = trap_penalty;
      o.next_cell = landed;
      o.done = true;
      return o;
    }
    if (landed == goal) {
      o.signal = EnvSignal::positive(goal_reward);
      o.reward = goal_reward;
      landed = start;  // teleport; the episode continues
    } else if (std::find(penalty_cells.begin(), penalty_cells.end(), landed) != penalty_cells.end()) {
      o.signal = EnvSignal::negative(NegativeCause::kPenalty, penalty_magnitude);
      o.reward = penalty_magnitude;
    }
    if (truncated && o.signal.kind == SignalKind::kNone) {
      o.signal = EnvSignal::negative(NegativeCause::kEpisodeEnd, 0.0);
    }
    o.next_cell = landed;
    o.done = truncated;
    return o;
  }
};

template <typename Model>
class ModelEnv final : public Env {
 public:
  explicit ModelEnv(const EnvConfig& config) : model_(config), max_steps_(config.max_episode_steps) {}

  Observation reset() override {
    cell_ = model_.start_cell();
    steps_ = 0;
    done_ = false;
    started_ = true;
    return cell_observation(cell_, model_.num_cells(), steps_, max_steps_);
  }

  StepResult step(int action) override {
    if (!started_) throw std::logic_error("step: reset() must be called first");
    if (done_) throw std::logic_error("step: episode is already done");
    if (action < 0 || action >= model_.num_actions())
      throw std::invalid_argument("step: action out of range");
    const Outcome o = model_.step(cell_, steps_, action);
    cell_ = o.next_cell;
    steps_ += 1;
    done_ = o.done;
    StepResult r;
    r.observation = cell_observation(cell_, model_.num_cells(), steps_, max_steps_);
    r.env_reward = o.reward;
    r.signal = o.signal;
    r.done = o.done;
    return r;
  }

  int action_count() const override { return model_.num_actions(); }
  int observation_dim() const override { return model_.num_cells() + 1; }
  bool done() const override { return done_; }

 private:
  Model model_;
  int max_steps_;
  int cell_ = 0;
  int steps_ = 0;
  bool done_ = false;
  bool started_ = false;
};

template <typename Model>
class ModelMdp final : public EnumerableMdp {
 public:
  explicit ModelMdp(const EnvConfig& config) : model_(config), max_steps_(config.max_episode_steps) {}

  int state_count() const override { return model_.num_cells() * max_steps_; }
  int initial_state() const override { return encode(model_.start_cell(), 0); }
  int action_count() const override { return model_.num_actions(); }
  int state_step(int s) const override { return s / model_.num_cells(); }
  int state_cell(int s) const { return s % model_.num_cells(); }

  Observation state_observation(int s) const override {
    return cell_observation(state_cell(s), model_.num_cells(), state_step(s), max_steps_);
  }

  std::string state_label(int s) const override {
    return "cell=" + std::to_string(state_cell(s)) + " step=" + std::to_string(state_step(s));
  }

  EnumTransition transition(int s, int action) const override {
    const Outcome o = model_.step(state_cell(s), state_step(s), action);
    EnumTransition t;
    t.signal = o.signal;
    t.reward = o.reward;
    t.done = o.done;
    t.next_state = o.done ? -1 : encode(o.next_cell, state_step(s) + 1);
    return t;
  }

 private:
  int encode(int cell, int step) const { return step * model_.num_cells() + cell; }

  Model model_;
  int max_steps_;
};

}  // namespace

HindsightEnv::HindsightEnv(std::unique_ptr<Env> inner) : inner_(std::move(inner)) {}

Observation HindsightEnv::reset() {
  withheld_ = 0.0;
  return inner_->reset();
}

StepResult HindsightEnv::step(int action) {
  StepResult r = inner_->step(action);
  if (r.env_reward > 0.0) {
    withheld_ += r.env_reward;
    r.env_reward = 0.0;
  }
  if (r.signal.kind == SignalKind::kNegative || r.done) {
    r.env_reward += withheld_;
    withheld_ = 0.0;
  }
  return r;
}

std::unique_ptr<Env> make_env(const EnvConfig& config) {
  std::unique_ptr<Env> env;
  if (config.env_name == "delayed-chain") {
    env = std::make_unique<ModelEnv<ChainModel>>(config);
  } else if (config.env_name == "trap-grid") {
    env = std::make_unique<ModelEnv<GridModel>>(config);
  } else {
    throw std::invalid_argument("unknown env_name: " + config.env_name);
  }
  if (config.hindsight) env = std::make_unique<HindsightEnv>(std::move(env));
  return env;
}

std::unique_ptr<EnumerableMdp> make_enumerable_mdp(const EnvConfig& config) {
  if (config.env_name == "delayed-chain") return std::make_unique<ModelMdp<ChainModel>>(config);
  if (config.env_name == "trap-grid") return std::make_unique<ModelMdp<GridModel>>(config);
  throw std::invalid_argument("state space not enumerable for env_name: " + config.env_name);
}

bool OracleResult::is_sufficient_state(int s) const {
  return std::binary_search(sufficient.begin(), sufficient.end(), s);
}

OracleResult sufficiency_oracle(const EnvConfig& config, const PolicyFn& policy, double epsilon) {
  if (epsilon < 0.0 || epsilon >= 1.0) throw std::invalid_argument("oracle: epsilon must be in [0, 1)");
  const auto mdp = make_enumerable_mdp(config);
  const int n = mdp->state_count();
  const int num_actions = mdp->action_count();

  OracleResult result;
  result.positive_signal_prob.assign(static_cast<size_t>(n), 0.0);

  // state_step strictly increases along transitions, so sweeping states in
  // decreasing step order visits every successor before its predecessors.
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return mdp->state_step(a) > mdp->state_step(b); });

  for (int s : order) {
    const Vec probs = policy(mdp->state_observation(s));
    if (static_cast<int>(probs.size()) != num_actions)
      throw std::invalid_argument("oracle: policy returned wrong number of action probabilities");
    double q = 0.0;
    for (int a = 0; a < num_actions; ++a) {
      const double pa = probs[static_cast<size_t>(a)];
      if (pa == 0.0) continue;
      const EnumTransition t = mdp->transition(s, a);
      if (t.signal.kind == SignalKind::kPositive) {
        q += pa;
      } else if (t.signal.kind == SignalKind::kNone && t.next_state >= 0) {
        q += pa * result.positive_signal_prob[static_cast<size_t>(t.next_state)];
      }
      // negative signal contributes 0
    }
    result.positive_signal_prob[static_cast<size_t>(s)] = q;
  }

  for (int s = 0; s < n; ++s) {
    if (result.positive_signal_prob[static_cast<size_t>(s)] >= 1.0 - epsilon) {
      result.sufficient.push_back(s);
    }
  }
  return result;
}

}  // namespace calrl
