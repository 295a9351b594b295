#include "calrl/rounds.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace calrl {

Pool::Pool(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw std::invalid_argument("Pool: capacity must be positive");
}

void Pool::push(LabeledState state) {
  if (full()) states_.pop_front();
  states_.push_back(std::move(state));
}

PoolSet::PoolSet(int main_capacity, int sensitive_capacity)
    : positive(main_capacity),
      negative(main_capacity),
      sensitive_miss(sensitive_capacity),
      sensitive_false(sensitive_capacity) {}

void PoolSet::clear_main() {
  positive.clear();
  negative.clear();
}

void PoolSet::clear_all() {
  clear_main();
  sensitive_miss.clear();
  sensitive_false.clear();
}

std::vector<Round> segment(std::span<const Transition> trajectory) {
  if (trajectory.empty() || !trajectory.back().done) {
    throw std::invalid_argument("segment: trajectory must end with done = true");
  }
  std::vector<Round> rounds;
  Round current;
  for (const Transition& t : trajectory) {
    current.states.push_back(t.observation);
    if (t.signal.kind != SignalKind::kNone) {
      current.label = t.signal.kind == SignalKind::kPositive ? Label::kPositive : Label::kNegative;
      current.terminating_signal = t.signal;
      rounds.push_back(std::move(current));
      current = Round{};
    }
  }
  // A trailing segment without a signal can only arise on a done transition
  // that carried none; the environments never produce one, but labeling it
  // negative keeps the partition property for hand-built trajectories.
  if (!current.states.empty()) {
    current.label = Label::kNegative;
    current.terminating_signal = EnvSignal::negative(NegativeCause::kEpisodeEnd, 0.0);
    rounds.push_back(std::move(current));
  }
  return rounds;
}

void push_round(PoolSet& pools, const Round& round) {
  if (round.states.empty()) throw std::invalid_argument("push_round: round has no states");
  Pool& target = round.label == Label::kPositive ? pools.positive : pools.negative;
  for (const Observation& obs : round.states) {
    target.push(LabeledState{obs, round.label});
  }
}

void record_sensitive(PoolSet& pools, std::span<const Round> rounds,
                      std::span<const std::vector<char>> flags) {
  if (rounds.size() != flags.size()) {
    throw std::invalid_argument("record_sensitive: one flag vector per round required");
  }
  for (size_t r = 0; r < rounds.size(); ++r) {
    const Round& round = rounds[r];
    const std::vector<char>& f = flags[r];
    if (f.size() != round.states.size()) {
      throw std::invalid_argument("record_sensitive: flags misaligned with round states");
    }
    const bool any_flagged = std::any_of(f.begin(), f.end(), [](char x) { return x != 0; });
    if (round.label == Label::kPositive) {
      if (!any_flagged) {
        for (const Observation& obs : round.states) {
          pools.sensitive_miss.push(LabeledState{obs, Label::kPositive});
        }
      }
    } else {
      for (size_t i = 0; i < f.size(); ++i) {
        if (f[i]) pools.sensitive_false.push(LabeledState{round.states[i], Label::kNegative});
      }
    }
  }
}

namespace {

const LabeledState& draw_from_union(const Pool& a, const Pool& b, std::mt19937_64& rng) {
  const int total = a.size() + b.size();
  const int i = uniform_int(rng, total);
  return i < a.size() ? a.at(i) : b.at(i - a.size());
}

}  // namespace

std::vector<LabeledState> sample_batch(const PoolSet& pools, int n, double sensitive_fraction,
                                       std::mt19937_64& rng) {
  if (n <= 0) throw std::invalid_argument("sample_batch: n must be positive");
  if (sensitive_fraction < 0.0 || sensitive_fraction > 1.0) {
    throw std::invalid_argument("sample_batch: sensitive_fraction must be in [0, 1]");
  }
  if (pools.positive.empty() && pools.negative.empty()) {
    throw std::runtime_error("sample_batch: both main pools are empty");
  }

  const bool have_sensitive = !pools.sensitive_miss.empty() || !pools.sensitive_false.empty();
  const int n_sensitive = have_sensitive ? static_cast<int>(n * sensitive_fraction) : 0;

  std::vector<LabeledState> batch;
  batch.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n_sensitive; ++i) {
    batch.push_back(draw_from_union(pools.sensitive_miss, pools.sensitive_false, rng));
  }
  for (int i = n_sensitive; i < n; ++i) {
    batch.push_back(draw_from_union(pools.positive, pools.negative, rng));
  }
  // Fisher-Yates shuffle; std::shuffle is implementation-defined.
  for (int i = n - 1; i > 0; --i) {
    const int j = uniform_int(rng, i + 1);
    std::swap(batch[static_cast<size_t>(i)], batch[static_cast<size_t>(j)]);
  }
  return batch;
}

void export_pools(const PoolSet& pools, std::ostream& out) {
  auto dump = [&out](const Pool& pool, const char* name) {
    for (int i = 0; i < pool.size(); ++i) {
      const LabeledState& s = pool.at(i);
      nlohmann::json rec;
      rec["pool"] = name;
      rec["label"] = s.label == Label::kPositive ? "positive" : "negative";
      rec["observation"] = s.observation.values;
      out << rec.dump() << '\n';
    }
  };
  dump(pools.positive, "positive");
  dump(pools.negative, "negative");
  dump(pools.sensitive_miss, "sensitive_miss");
  dump(pools.sensitive_false, "sensitive_false");
}

}  // namespace calrl
