#include "calrl/agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace calrl {

double mix_rewards(double r_c, double r_e, const RewardMix& mix) {
  if (mix.alpha < 0.0 || mix.beta < 0.0) throw std::invalid_argument("mix_rewards: coefficients must be >= 0");
  if (mix.alpha == 0.0 && mix.beta == 0.0) throw std::invalid_argument("mix_rewards: alpha and beta are both zero");
  return mix.alpha * r_c + mix.beta * r_e;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

PolicyNet::PolicyNet(int observation_dim, int num_actions, const std::vector<int>& hidden,
                     std::mt19937_64& rng)
    : net_(DenseNet::mlp(observation_dim, hidden, num_actions + 1, Activation::kTanh,
                         Activation::kIdentity, rng)),
      num_actions_(num_actions) {
  if (num_actions < 2) throw std::invalid_argument("PolicyNet: need at least two actions");
}

PolicyNet::PolicyNet(DenseNet net, int num_actions) : net_(std::move(net)), num_actions_(num_actions) {
  if (num_actions < 2) throw std::invalid_argument("PolicyNet: need at least two actions");
  if (net_.output_dim() != num_actions + 1) {
    throw std::invalid_argument("PolicyNet: net output must be num_actions + 1");
  }
}

Vec PolicyNet::action_probs(const Observation& obs) const {
  const Vec out = net_.forward(obs.values);
  return softmax(std::span<const double>(out.data(), static_cast<size_t>(num_actions_)));
}

double PolicyNet::value(const Observation& obs) const { return net_.forward(obs.values).back(); }

PolicyNet::ActResult PolicyNet::act(const Observation& obs, std::mt19937_64& rng) const {
  const Vec out = net_.forward(obs.values);
  const Vec probs = softmax(std::span<const double>(out.data(), static_cast<size_t>(num_actions_)));
  const double u = uniform01(rng);
  double cum = 0.0;
  int action = num_actions_ - 1;
  for (int a = 0; a < num_actions_; ++a) {
    cum += probs[static_cast<size_t>(a)];
    if (u < cum) {
      action = a;
      break;
    }
  }
  ActResult r;
  r.action = action;
  r.log_prob = std::log(clamp_prob(probs[static_cast<size_t>(action)]));
  r.value = out.back();
  return r;
}

int PolicyNet::greedy_action(const Observation& obs) const {
  const Vec probs = action_probs(obs);
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

ReturnsAdvantages compute_returns(const RolloutBuffer& buffer, double bootstrap_value) {
  if (buffer.steps.empty()) throw std::invalid_argument("compute_returns: empty buffer");
  const size_t n = buffer.steps.size();
  ReturnsAdvantages ra;
  ra.returns.assign(n, 0.0);
  ra.advantages.assign(n, 0.0);
  double running = buffer.steps.back().done ? 0.0 : bootstrap_value;
  for (size_t i = n; i-- > 0;) {
    const RolloutStep& s = buffer.steps[i];
    if (s.done) running = 0.0;
    running = s.reward + buffer.gamma * running;
    ra.returns[i] = running;
    ra.advantages[i] = running - s.value;
  }
  return ra;
}

SurrogateGradient surrogate_gradient(const PolicyNet& policy, const RolloutBuffer& buffer,
                                     const ReturnsAdvantages& ra, double entropy_coeff,
                                     double value_coeff) {
  if (buffer.steps.size() != ra.returns.size() || buffer.steps.size() != ra.advantages.size()) {
    throw std::invalid_argument("surrogate_gradient: returns misaligned with buffer");
  }
  SurrogateGradient out;
  for (double a : ra.advantages) {
    if (!std::isfinite(a)) return out;  // losses.applied stays false
  }
  for (double r : ra.returns) {
    if (!std::isfinite(r)) return out;
  }

  Gradients total = Gradients::zeros_like(policy.net());
  double policy_loss = 0.0, value_loss = 0.0, entropy_sum = 0.0;
  for (size_t i = 0; i < buffer.steps.size(); ++i) {
    const RolloutStep& s = buffer.steps[i];
    PolicySurrogateLoss loss;
    loss.action = s.action;
    loss.advantage = ra.advantages[i];
    loss.ret = ra.returns[i];
    loss.value_coeff = value_coeff;
    loss.entropy_coeff = entropy_coeff;
    BackwardResult br = backward(policy.net(), s.observation.values, loss);
    total.accumulate(br.grads);

    const Vec net_out = policy.net().forward(s.observation.values);
    const Vec probs = softmax(std::span<const double>(net_out.data(), static_cast<size_t>(policy.num_actions())));
    double h = 0.0;
    for (double p : probs) {
      if (p > 0.0) h -= p * std::log(p);
    }
    policy_loss += -ra.advantages[i] * std::log(clamp_prob(probs[static_cast<size_t>(s.action)]));
    const double verr = ra.returns[i] - net_out.back();
    value_loss += verr * verr;
    entropy_sum += h;
  }
  const double inv = 1.0 / static_cast<double>(buffer.steps.size());
  total.scale(inv);
  out.grads = std::move(total);
  out.losses.policy_loss = policy_loss * inv;
  out.losses.value_loss = value_loss * inv;
  out.losses.entropy = entropy_sum * inv;
  out.losses.applied = true;
  return out;
}

UpdateResult update(PolicyNet& policy, const RolloutBuffer& buffer, const ReturnsAdvantages& ra,
                    OptimizerState& opt, double entropy_coeff, double value_coeff) {
  SurrogateGradient g = surrogate_gradient(policy, buffer, ra, entropy_coeff, value_coeff);
  if (g.losses.applied) apply_gradients(policy.net(), g.grads, opt);
  return g.losses;
}

SharedPolicy::SharedPolicy(PolicyNet net, OptimizerState opt)
    : net_(std::move(net)), opt_(std::move(opt)) {}

PolicyNet SharedPolicy::snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return net_;
}

void SharedPolicy::apply(const Gradients& g) {
  std::lock_guard<std::mutex> lock(mu_);
  apply_gradients(net_.net(), g, opt_);
  ++updates_;
}

int SharedPolicy::updates_applied() const {
  std::lock_guard<std::mutex> lock(mu_);
  return updates_;
}

namespace {

struct SharedRolloutState {
  std::mutex mu;  // guards pools, result aggregates and the episode counter
  std::atomic<long> steps_claimed{0};
  std::atomic<long> steps_executed{0};
  std::atomic<bool> pools_full{false};
  long episode_counter = 0;
};

void worker_loop(int worker_id, const RolloutConfig& cfg, const EnvConfig& env_config,
                 SharedPolicy& shared, PoolSet& pools, const EsceModel* esce,
                 SharedRolloutState& st, RolloutResult& result) {
  EnvConfig worker_env = env_config;
  worker_env.seed = derive_seed(env_config.seed, static_cast<std::uint64_t>(worker_id) * 2);
  auto env = make_env(worker_env);
  std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(worker_id) * 2 + 1));

  PolicyNet snap = shared.snapshot();
  RolloutBuffer buffer;
  buffer.n_steps = cfg.n_steps;
  buffer.gamma = cfg.gamma;

  Observation obs = env->reset();
  CalibrationState cal = esce ? esce->make_calibration_state() : CalibrationState{};
  EpisodeStats ep;
  ep.worker = worker_id;
  std::vector<Observation> round_states;
  std::vector<char> round_flags;

  auto flush_gradient = [&](double bootstrap) {
    if (buffer.steps.empty()) return;
    if (cfg.update_policy) {
      const ReturnsAdvantages ra = compute_returns(buffer, bootstrap);
      SurrogateGradient g = surrogate_gradient(snap, buffer, ra, cfg.entropy_coeff, cfg.value_coeff);
      if (g.losses.applied) {
        shared.apply(g.grads);
        snap = shared.snapshot();
        std::lock_guard<std::mutex> lock(st.mu);
        ++result.gradient_updates;
      } else {
        std::lock_guard<std::mutex> lock(st.mu);
        ++result.skipped_updates;
      }
    }
    buffer.clear();
  };

  while (true) {
    if (cfg.stop_when_main_pools_full && st.pools_full.load()) break;
    if (st.steps_claimed.fetch_add(1) >= cfg.step_budget) break;

    const PolicyNet::ActResult a = snap.act(obs, rng);
    const StepResult sr = env->step(a.action);
    st.steps_executed.fetch_add(1);

    const bool flagged = esce != nullptr && esce->is_sufficient(obs);
    const double r_c = esce != nullptr ? esce->calibrate(obs, cal, sr.signal) : 0.0;
    const double mixed = mix_rewards(r_c, sr.env_reward, cfg.mix);

    buffer.steps.push_back({obs, a.action, mixed, a.value, sr.done});
    round_states.push_back(obs);
    round_flags.push_back(flagged ? 1 : 0);

    ep.raw_env_return += sr.env_reward;
    ep.mixed_return += mixed;
    if (r_c != 0.0) ep.calibrated_reward_count += 1;
    ep.length += 1;

    if (sr.signal.kind != SignalKind::kNone) {
      Round round;
      round.states = std::move(round_states);
      round.label = sr.signal.kind == SignalKind::kPositive ? Label::kPositive : Label::kNegative;
      round.terminating_signal = sr.signal;
      round_states.clear();

      std::lock_guard<std::mutex> lock(st.mu);
      push_round(pools, round);
      ++result.rounds_pushed;
      if (cfg.collect_rounds && static_cast<int>(result.rounds.size()) < cfg.max_eval_rounds) {
        result.rounds.push_back(WorkerRound{std::move(round), std::move(round_flags)});
      }
      round_flags.clear();
      if (cfg.stop_when_main_pools_full && pools.positive.full() && pools.negative.full()) {
        st.pools_full.store(true);
      }
    }

    if (sr.done || buffer.full()) {
      flush_gradient(sr.done ? 0.0 : snap.value(sr.observation));
    }

    if (sr.done) {
      {
        std::lock_guard<std::mutex> lock(st.mu);
        ep.episode = st.episode_counter++;
        result.calibrated_rewards += ep.calibrated_reward_count;
        result.episodes.push_back(ep);
      }
      ep = EpisodeStats{};
      ep.worker = worker_id;
      obs = env->reset();
      cal = esce ? esce->make_calibration_state() : CalibrationState{};
      round_states.clear();
      round_flags.clear();
    } else {
      obs = sr.observation;
    }
  }
  // Partial buffer at shutdown still contributes a gradient.
  flush_gradient(buffer.steps.empty() || buffer.steps.back().done ? 0.0 : snap.value(obs));
}

}  // namespace

RolloutResult run_workers(const RolloutConfig& cfg, const EnvConfig& env_config, SharedPolicy& shared,
                          PoolSet& pools, const EsceModel* esce) {
  if (cfg.workers < 1) throw std::invalid_argument("run_workers: worker count must be >= 1");
  RolloutResult result;
  SharedRolloutState st;

  if (cfg.workers == 1) {
    try {
      worker_loop(0, cfg, env_config, shared, pools, esce, st, result);
    } catch (const std::exception& e) {
      result.worker_errors.push_back(std::string("worker 0: ") + e.what());
    }
  } else {
    std::vector<std::thread> threads;
    std::vector<std::string> errors(static_cast<size_t>(cfg.workers));
    threads.reserve(static_cast<size_t>(cfg.workers));
    for (int w = 0; w < cfg.workers; ++w) {
      threads.emplace_back([&, w]() {
        try {
          worker_loop(w, cfg, env_config, shared, pools, esce, st, result);
        } catch (const std::exception& e) {
          errors[static_cast<size_t>(w)] = e.what();
        } catch (...) {
          errors[static_cast<size_t>(w)] = "unknown worker failure";
        }
      });
    }
    for (auto& t : threads) t.join();
    for (int w = 0; w < cfg.workers; ++w) {
      if (!errors[static_cast<size_t>(w)].empty()) {
        result.worker_errors.push_back("worker " + std::to_string(w) + ": " + errors[static_cast<size_t>(w)]);
      }
    }
  }

  result.total_steps = st.steps_executed.load();
  return result;
}

}  // namespace calrl
