#include "calrl/esce.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace calrl {

EsceModel::EsceModel(int observation_dim, const EsceConfig& config, std::mt19937_64& rng)
    : net_(DenseNet::mlp(observation_dim, config.hidden, 1, Activation::kTanh, Activation::kSigmoid, rng)),
      opt_(OptimizerState::adam(config.learning_rate)),
      cfg_(config) {
  validate_config();
}

EsceModel::EsceModel(DenseNet net, const EsceConfig& config)
    : net_(std::move(net)), opt_(OptimizerState::adam(config.learning_rate)), cfg_(config) {
  if (net_.output_dim() != 1) throw std::invalid_argument("EsceModel: net must have a single output");
  validate_config();
}

void EsceModel::validate_config() const {
  if (cfg_.tau <= 0.0 || cfg_.tau >= 1.0) throw std::invalid_argument("EsceModel: tau must be in (0, 1)");
  if (cfg_.sigma < 0.81 || cfg_.sigma > 1.0) {
    throw std::invalid_argument("EsceModel: sigma must lie in [0.81, 1]");
  }
  if (cfg_.phase1_epochs < 1) throw std::invalid_argument("EsceModel: phase1_epochs must be positive");
  if (cfg_.phase2_max_iters < 0) throw std::invalid_argument("EsceModel: phase2_max_iters must be >= 0");
  if (cfg_.batch_size < 1) throw std::invalid_argument("EsceModel: batch_size must be positive");
  if (cfg_.sensitive_fraction < 0.0 || cfg_.sensitive_fraction > 1.0) {
    throw std::invalid_argument("EsceModel: sensitive_fraction must be in [0, 1]");
  }
  if (cfg_.calibrated_magnitude <= 0.0) {
    throw std::invalid_argument("EsceModel: calibrated_magnitude must be positive");
  }
}

CalibrationState EsceModel::make_calibration_state() const {
  CalibrationState cal;
  cal.calibrated_magnitude = cfg_.calibrated_magnitude;
  return cal;
}

double EsceModel::predict(const Observation& obs) const {
  const Vec out = net_.forward(obs.values);
  return clamp_prob(out[0]);
}

bool EsceModel::is_sufficient(const Observation& obs) const { return predict(obs) >= cfg_.tau; }

double EsceModel::sgd_batch(std::span<const LabeledState> batch, bool negative_only) {
  Gradients total = Gradients::zeros_like(net_);
  double loss_sum = 0.0;
  for (const LabeledState& s : batch) {
    // Phase 2 keeps only the negative term -log(1 - p), which is BCE with
    // target 0 restricted to negative-labeled states.
    const double target = (!negative_only && s.label == Label::kPositive) ? 1.0 : 0.0;
    BackwardResult r = backward(net_, s.observation.values, BceLoss{{target}});
    loss_sum += r.loss;
    total.accumulate(r.grads);
  }
  total.scale(1.0 / static_cast<double>(batch.size()));
  apply_gradients(net_, total, opt_);
  return loss_sum / static_cast<double>(batch.size());
}

double EsceModel::train_phase1(const PoolSet& pools, std::mt19937_64& rng) {
  if (pools.positive.empty() || pools.negative.empty()) {
    throw std::runtime_error("train_phase1: both main pools must be non-empty");
  }
  const int pool_states = pools.positive.size() + pools.negative.size();
  const int batches_per_epoch = std::max(1, (pool_states + cfg_.batch_size - 1) / cfg_.batch_size);

  double epoch_loss = 0.0;
  for (int epoch = 0; epoch < cfg_.phase1_epochs; ++epoch) {
    epoch_loss = 0.0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      const auto batch = sample_batch(pools, cfg_.batch_size, cfg_.sensitive_fraction, rng);
      epoch_loss += sgd_batch(batch, /*negative_only=*/false);
    }
    epoch_loss /= static_cast<double>(batches_per_epoch);
  }
  return epoch_loss;
}

int EsceModel::train_phase2(const PoolSet& pools, std::mt19937_64& rng) {
  if (pools.negative.empty()) throw std::runtime_error("train_phase2: negative pool is empty");

  int iters = 0;
  while (negative_recall(pools.negative) < cfg_.sigma && iters < cfg_.phase2_max_iters) {
    std::vector<LabeledState> batch;
    batch.reserve(static_cast<size_t>(cfg_.batch_size));
    for (int i = 0; i < cfg_.batch_size; ++i) {
      batch.push_back(pools.negative.at(uniform_int(rng, pools.negative.size())));
    }
    sgd_batch(batch, /*negative_only=*/true);
    ++iters;
  }
  return iters;
}

double EsceModel::negative_recall(const Pool& negative_pool) const {
  if (negative_pool.empty()) return 0.0;
  int below = 0;
  for (int i = 0; i < negative_pool.size(); ++i) {
    if (predict(negative_pool.at(i).observation) < cfg_.tau) ++below;
  }
  return static_cast<double>(below) / static_cast<double>(negative_pool.size());
}

std::vector<std::vector<char>> EsceModel::flag_rounds(std::span<const Round> rounds) const {
  std::vector<std::vector<char>> flags;
  flags.reserve(rounds.size());
  for (const Round& round : rounds) {
    std::vector<char> f(round.states.size(), 0);
    for (size_t i = 0; i < round.states.size(); ++i) {
      f[i] = is_sufficient(round.states[i]) ? 1 : 0;
    }
    flags.push_back(std::move(f));
  }
  return flags;
}

EsceMetrics EsceModel::evaluate(std::span<const Round> rounds) const {
  const auto flags = flag_rounds(rounds);
  return evaluate_with_flags(rounds, flags);
}

EsceMetrics EsceModel::evaluate_with_flags(std::span<const Round> rounds,
                                           std::span<const std::vector<char>> flags) {
  if (rounds.size() != flags.size()) {
    throw std::invalid_argument("evaluate_with_flags: one flag vector per round required");
  }
  EsceMetrics m;
  int neg_states = 0;
  int neg_below = 0;
  for (size_t r = 0; r < rounds.size(); ++r) {
    if (flags[r].size() != rounds[r].states.size()) {
      throw std::invalid_argument("evaluate_with_flags: flags misaligned with round states");
    }
    const bool any = std::any_of(flags[r].begin(), flags[r].end(), [](char x) { return x != 0; });
    const bool positive = rounds[r].label == Label::kPositive;
    if (any) ++m.n_ident;
    if (any && positive) ++m.n_suff;
    if (positive) ++m.n_pos;
    if (!positive) {
      for (char x : flags[r]) {
        ++neg_states;
        if (!x) ++neg_below;
      }
    }
  }
  m.precision_pos = m.n_ident > 0 ? static_cast<double>(m.n_suff) / static_cast<double>(m.n_ident) : 0.0;
  m.recall_pos = m.n_pos > 0 ? static_cast<double>(m.n_suff) / static_cast<double>(m.n_pos) : 0.0;
  m.recall_neg = neg_states > 0 ? static_cast<double>(neg_below) / static_cast<double>(neg_states) : 0.0;
  return m;
}

double EsceModel::calibrate(const Observation& obs, CalibrationState& cal, const EnvSignal& signal) const {
  double reward = 0.0;
  if (!cal.rewarded_this_round && is_sufficient(obs)) {
    reward = cal.calibrated_magnitude;
    cal.rewarded_this_round = true;
  }
  if (signal.kind != SignalKind::kNone) cal.rewarded_this_round = false;  // a new round begins
  return reward;
}

}  // namespace calrl
