#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "calrl/agent.hpp"
#include "calrl/env.hpp"
#include "calrl/esce.hpp"

namespace calrl {

enum class MixMode { kBaseline, kSemi, kFull, kHindsightFull };

std::string_view mix_mode_name(MixMode m);
MixMode mix_mode_from_name(std::string_view name);

// baseline: (alpha, beta) = (0, 1); semi: (0.3, 1); full and hindsight-full:
// (1, 0). hindsight-full additionally forces env.hindsight = true.
RewardMix mix_for_mode(MixMode m);

struct ExperimentConfig {
  EnvConfig env;
  MixMode mode = MixMode::kBaseline;
  std::vector<std::uint64_t> seeds = {1};
  int outer_iterations = 50;
  long steps_per_iteration = 4000;  // pool-fill step cap per outer iteration
  bool stop_when_pools_full = true;
  int pool_capacity = 2000;
  int sensitive_capacity = 500;
  bool retain_sensitive_pools = false;  // strict clearing unless set

  EsceConfig esce;

  std::vector<int> agent_hidden = {64, 64};
  double agent_learning_rate = 7e-4;
  double gamma = 0.99;
  int n_steps = 8;
  double entropy_coeff = 0.01;
  double value_coeff = 0.5;
  int workers = 1;
  int max_eval_rounds = 1024;

  int window_episodes = 100;
  double convergence_threshold = 0.01;  // relative window-mean change
  int convergence_patience = 3;         // consecutive small changes required
  int convergence_min_iterations = 10;
  bool convergence_enabled = true;

  std::string output_dir = "runs/out";
};

// One line-delimited record per outer iteration per seed. Wall-clock time is
// written to the per-seed summary instead so identical runs produce
// byte-identical metric logs.
struct MetricsRecord {
  std::uint64_t seed = 0;
  int outer_iteration = 0;
  long episodes_completed = 0;  // cumulative
  long total_env_steps = 0;     // cumulative
  double window_mean_return = 0.0;
  double window_min_return = 0.0;
  double window_max_return = 0.0;
  double window_mean_mixed = 0.0;
  long calibrated_rewards = 0;  // cumulative
  EsceMetrics esce;
  double phase1_loss = 0.0;
  int phase2_iters = 0;
  long gradient_updates = 0;  // cumulative

  std::string to_json_line() const;
  static MetricsRecord from_json_line(const std::string& line);
};

enum class RunStatus : int {
  kSuccess = 0,         // converged (or an empty budget)
  kConfigError = 2,
  kBudgetExhausted = 3,
};

struct RunOutcome {
  RunStatus status = RunStatus::kSuccess;
  std::string message;
};

// ---- config file handling ----
//
// Human-readable `key = value` lines, '#' comments. Every tunable default is
// reachable through a key; unknown keys are rejected with the full key list.
ExperimentConfig parse_experiment_config(const std::vector<std::pair<std::string, std::string>>& entries);
ExperimentConfig load_experiment_config(const std::string& path);
void apply_config_override(ExperimentConfig& config, const std::string& key, const std::string& value);
void save_experiment_config(const ExperimentConfig& config, const std::string& path);
std::vector<std::string> experiment_config_keys();

/// Environment-variable overrides: CALRL_OUTPUT_DIR replaces output_dir and
/// CALRL_SEED replaces the seed list with a single seed.
void apply_env_overrides(ExperimentConfig& config);

// ---- experiment driver ----

/// Runs the full alternating loop for every seed: collect transitions with
/// calibrated rewards through the workers, train the extractor (joint phase,
/// then the sigma-guarded negative phase), clear pools, repeat until
/// convergence or the iteration budget is spent. Writes per-seed metric
/// logs, checkpoints and learning-curve charts plus a seed-averaged chart
/// under config.output_dir.
RunOutcome run_experiment(const ExperimentConfig& config);

struct LoadedRun {
  std::string dir;
  ExperimentConfig config;
  // metrics[i] holds the records of seed i, ordered by outer iteration.
  std::vector<std::vector<MetricsRecord>> per_seed;
};

LoadedRun load_run(const std::string& run_dir);

/// Aligned per-iteration means and confidence bands over >= 2 finished runs
/// with compatible environments; writes a flat table and an overlaid chart.
/// Mismatched env configs are rejected through the outcome.
RunOutcome compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_table_path,
                        const std::string& out_chart_path);

std::vector<std::string> metric_names();
double metric_value(const MetricsRecord& rec, const std::string& name);

/// Line chart of the named metrics from one run directory: one series per
/// seed plus the seed mean for a single metric, or seed means per metric when
/// several are named. Unknown metric names are rejected through the outcome
/// with the list of valid names; an empty log is rejected too.
RunOutcome emit_metric_chart(const std::string& run_dir, const std::vector<std::string>& metrics,
                             const std::string& out_path);

}  // namespace calrl
