#pragma once

#include <deque>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "calrl/env.hpp"

namespace calrl {

struct Transition {
  Observation observation;  // state the action was taken from
  int action = 0;
  double env_reward = 0.0;
  EnvSignal signal;
  bool done = false;
  int step_index = 0;
};

enum class Label { kPositive, kNegative };

// Maximal state segment between consecutive environmental signals, labeled
// by the signal that ends it. The state on which the signal arrives belongs
// to the ending round.
struct Round {
  std::vector<Observation> states;
  Label label = Label::kNegative;
  EnvSignal terminating_signal;
};

struct LabeledState {
  Observation observation;
  Label label = Label::kNegative;
};

/// Bounded FIFO store of labeled states; overflow evicts the oldest entry.
class Pool {
 public:
  explicit Pool(int capacity);

  void push(LabeledState state);
  int size() const { return static_cast<int>(states_.size()); }
  int capacity() const { return capacity_; }
  bool empty() const { return states_.empty(); }
  bool full() const { return size() >= capacity_; }
  void clear() { states_.clear(); }
  const LabeledState& at(int i) const { return states_[static_cast<size_t>(i)]; }

 private:
  int capacity_;
  std::deque<LabeledState> states_;
};

/// The four labeled-state stores: positive / negative signal pools plus the
/// two sensitive pools of hard examples (missed positive rounds, falsely
/// flagged negative states).
struct PoolSet {
  PoolSet(int main_capacity, int sensitive_capacity);

  Pool positive;
  Pool negative;
  Pool sensitive_miss;   // positive-labeled states only
  Pool sensitive_false;  // negative-labeled states only

  void clear_main();
  void clear_all();
};

/// Cuts a finished trajectory into rounds along its environmental signals.
/// The trajectory must end with done = true; every transition that carries a
/// signal closes the current round, and the round takes that signal as its
/// label.
std::vector<Round> segment(std::span<const Transition> trajectory);

/// Appends every state of the round to the pool matching its label.
void push_round(PoolSet& pools, const Round& round);

/// Sensitive-pool bookkeeping from per-state sufficiency flags aligned with
/// the rounds: a positive round with no flagged state contributes all of its
/// states to sensitive_miss; flagged states inside negative rounds go to
/// sensitive_false. Throws std::invalid_argument on misaligned flags.
void record_sensitive(PoolSet& pools, std::span<const Round> rounds,
                      std::span<const std::vector<char>> flags);

/// Batch construction: floor(n * sensitive_fraction) states drawn uniformly
/// (with replacement) from the union of the two sensitive pools, falling
/// back to the main pools when both sensitive pools are empty; the remainder
/// drawn uniformly from positive + negative; the batch order is shuffled.
/// Throws std::runtime_error when both main pools are empty.
std::vector<LabeledState> sample_batch(const PoolSet& pools, int n, double sensitive_fraction,
                                       std::mt19937_64& rng);

/// One labeled observation per line, for offline debugging.
void export_pools(const PoolSet& pools, std::ostream& out);

}  // namespace calrl
