#pragma once

#include <random>
#include <span>
#include <vector>

#include "calrl/net.hpp"
#include "calrl/rounds.hpp"

namespace calrl {

struct EsceConfig {
  double tau = 0.5;                    // sufficiency threshold on the predicted probability
  double sigma = 0.95;                 // negative-recall target ending phase 2; tuned band [0.81, 1]
  int phase1_epochs = 3;
  int phase2_max_iters = 500;
  int batch_size = 64;
  double sensitive_fraction = 0.75;    // share of each phase-1 batch drawn from the sensitive pools
  double calibrated_magnitude = 1.0;
  double learning_rate = 1e-3;
  std::vector<int> hidden = {64, 64};
};

// Round-level identification quality. n_ident counts rounds holding at least
// one flagged state, n_suff those among them that end positive, n_pos all
// positive rounds.
struct EsceMetrics {
  double precision_pos = 0.0;  // n_suff / n_ident, 0 when n_ident == 0
  double recall_pos = 0.0;     // n_suff / n_pos, 0 when n_pos == 0
  double recall_neg = 0.0;     // fraction of negative-round states predicted below tau
  int n_ident = 0;
  int n_suff = 0;
  int n_pos = 0;
};

// At most one calibrated reward is emitted between consecutive environmental
// signals; any non-none signal starts a new round.
struct CalibrationState {
  bool rewarded_this_round = false;
  double calibrated_magnitude = 1.0;
};

/// Binary classifier over observations that extracts states which reliably
/// precede a positive environmental signal, trained in two phases: joint
/// binary cross-entropy over both main pools, then negative-only boundary
/// tightening until the negative recall reaches sigma.
class EsceModel {
 public:
  EsceModel(int observation_dim, const EsceConfig& config, std::mt19937_64& rng);
  EsceModel(DenseNet net, const EsceConfig& config);  // e.g. from a checkpoint

  const EsceConfig& config() const { return cfg_; }
  const DenseNet& net() const { return net_; }
  int observation_dim() const { return net_.input_dim(); }

  CalibrationState make_calibration_state() const;

  /// Clamped sigmoid output in (0, 1).
  double predict(const Observation& obs) const;

  /// predict(obs) >= tau.
  bool is_sufficient(const Observation& obs) const;

  /// Phase 1: phase1_epochs passes of sensitive-sampled batches minimizing
  /// per-sample binary cross-entropy, positive label = 1. Returns the final
  /// epoch's mean per-sample loss. Throws when either main pool is empty.
  double train_phase1(const PoolSet& pools, std::mt19937_64& rng);

  /// Phase 2: negative-only batches minimizing -log(1 - p) until the
  /// fraction of negative-pool states below tau reaches sigma or
  /// phase2_max_iters batches have run. Returns the iteration count.
  int train_phase2(const PoolSet& pools, std::mt19937_64& rng);

  /// Fraction of the pool's states with predicted probability below tau.
  double negative_recall(const Pool& negative_pool) const;

  std::vector<std::vector<char>> flag_rounds(std::span<const Round> rounds) const;
  EsceMetrics evaluate(std::span<const Round> rounds) const;
  // Same counting applied to precomputed flags (p >= tau per state), so the
  // rollout-time flags and the logged metrics cannot drift apart.
  static EsceMetrics evaluate_with_flags(std::span<const Round> rounds,
                                         std::span<const std::vector<char>> flags);

  /// One calibration step: emits cal.calibrated_magnitude when the state is
  /// sufficient and nothing has been awarded this round, then resets the
  /// round flag if the step's signal is non-none.
  double calibrate(const Observation& obs, CalibrationState& cal, const EnvSignal& signal) const;

 private:
  void validate_config() const;
  double sgd_batch(std::span<const LabeledState> batch, bool negative_only);

  DenseNet net_;
  OptimizerState opt_;
  EsceConfig cfg_;
};

}  // namespace calrl
