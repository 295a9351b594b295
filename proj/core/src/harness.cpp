#include "calrl/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "calrl/chart.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace calrl {

std::string_view mix_mode_name(MixMode m) {
  switch (m) {
    case MixMode::kBaseline: return "baseline";
    case MixMode::kSemi: return "semi";
    case MixMode::kFull: return "full";
    case MixMode::kHindsightFull: return "hindsight-full";
  }
  throw std::logic_error("mix_mode_name: bad enum");
}

MixMode mix_mode_from_name(std::string_view name) {
  if (name == "baseline") return MixMode::kBaseline;
  if (name == "semi") return MixMode::kSemi;
  if (name == "full") return MixMode::kFull;
  if (name == "hindsight-full") return MixMode::kHindsightFull;
  throw std::invalid_argument("unknown mode: " + std::string(name) +
                              " (expected baseline|semi|full|hindsight-full)");
}

RewardMix mix_for_mode(MixMode m) {
  switch (m) {
    case MixMode::kBaseline: return {0.0, 1.0};
    case MixMode::kSemi: return {0.3, 1.0};
    case MixMode::kFull:
    case MixMode::kHindsightFull: return {1.0, 0.0};
  }
  throw std::logic_error("mix_for_mode: bad enum");
}

std::string MetricsRecord::to_json_line() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["outer_iteration"] = outer_iteration;
  j["episodes_completed"] = episodes_completed;
  j["total_env_steps"] = total_env_steps;
  j["window_mean_return"] = window_mean_return;
  j["window_min_return"] = window_min_return;
  j["window_max_return"] = window_max_return;
  j["window_mean_mixed"] = window_mean_mixed;
  j["calibrated_rewards"] = calibrated_rewards;
  j["precision_pos"] = esce.precision_pos;
  j["recall_pos"] = esce.recall_pos;
  j["recall_neg"] = esce.recall_neg;
  j["n_ident"] = esce.n_ident;
  j["n_suff"] = esce.n_suff;
  j["n_pos"] = esce.n_pos;
  j["phase1_loss"] = phase1_loss;
  j["phase2_iters"] = phase2_iters;
  j["gradient_updates"] = gradient_updates;
  return j.dump();
}

MetricsRecord MetricsRecord::from_json_line(const std::string& line) {
  const nlohmann::json j = nlohmann::json::parse(line);
  MetricsRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.outer_iteration = j.at("outer_iteration").get<int>();
  r.episodes_completed = j.at("episodes_completed").get<long>();
  r.total_env_steps = j.at("total_env_steps").get<long>();
  r.window_mean_return = j.at("window_mean_return").get<double>();
  r.window_min_return = j.at("window_min_return").get<double>();
  r.window_max_return = j.at("window_max_return").get<double>();
  r.window_mean_mixed = j.at("window_mean_mixed").get<double>();
  r.calibrated_rewards = j.at("calibrated_rewards").get<long>();
  r.esce.precision_pos = j.at("precision_pos").get<double>();
  r.esce.recall_pos = j.at("recall_pos").get<double>();
  r.esce.recall_neg = j.at("recall_neg").get<double>();
  r.esce.n_ident = j.at("n_ident").get<int>();
  r.esce.n_suff = j.at("n_suff").get<int>();
  r.esce.n_pos = j.at("n_pos").get<int>();
  r.phase1_loss = j.at("phase1_loss").get<double>();
  r.phase2_iters = j.at("phase2_iters").get<int>();
  r.gradient_updates = j.at("gradient_updates").get<long>();
  return r;
}

// ---- config handling ----

namespace {

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

int parse_int(const std::string& v) {
  size_t pos = 0;
  const int x = std::stoi(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("expected an integer, got '" + v + "'");
  return x;
}

long parse_long(const std::string& v) {
  size_t pos = 0;
  const long x = std::stol(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("expected an integer, got '" + v + "'");
  return x;
}

double parse_double(const std::string& v) {
  size_t pos = 0;
  const double x = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("expected a number, got '" + v + "'");
  return x;
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& v, Parse parse) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    // trim
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(parse(item.substr(b, e - b + 1)));
  }
  return out;
}

template <typename T>
std::string join_list(const std::vector<T>& xs) {
  std::ostringstream os;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) os << ',';
    os << xs[i];
  }
  return os.str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> experiment_config_keys() {
  return {
      "env.name", "env.chain_length", "env.corridor_length", "env.grid_width", "env.grid_height",
      "env.start_cell", "env.goal_cell", "env.trap_cell", "env.penalty_cells",
      "env.penalty_magnitude", "env.goal_reward", "env.trap_penalty", "env.max_episode_steps",
      "env.hindsight", "mode", "seeds", "outer_iterations", "steps_per_iteration",
      "stop_when_pools_full", "pool_capacity", "sensitive_capacity", "retain_sensitive_pools",
      "esce.tau", "esce.sigma", "esce.phase1_epochs", "esce.phase2_max_iters", "esce.batch_size",
      "esce.sensitive_fraction", "esce.calibrated_magnitude", "esce.learning_rate", "esce.hidden",
      "agent.hidden", "agent.learning_rate", "agent.gamma", "agent.n_steps", "agent.entropy_coeff",
      "agent.value_coeff", "workers", "max_eval_rounds", "window_episodes",
      "convergence_threshold", "convergence_patience", "convergence_min_iterations",
      "convergence_enabled", "output_dir",
  };
}

void apply_config_override(ExperimentConfig& c, const std::string& key, const std::string& value) {
  if (key == "env.name") c.env.env_name = value;
  else if (key == "env.chain_length") c.env.chain_length = parse_int(value);
  else if (key == "env.corridor_length") c.env.corridor_length = parse_int(value);
  else if (key == "env.grid_width") c.env.grid_width = parse_int(value);
  else if (key == "env.grid_height") c.env.grid_height = parse_int(value);
  else if (key == "env.start_cell") c.env.start_cell = parse_int(value);
  else if (key == "env.goal_cell") c.env.goal_cell = parse_int(value);
  else if (key == "env.trap_cell") c.env.trap_cell = parse_int(value);
  else if (key == "env.penalty_cells") c.env.penalty_cells = parse_list<int>(value, parse_int);
  else if (key == "env.penalty_magnitude") c.env.penalty_magnitude = parse_double(value);
  else if (key == "env.goal_reward") c.env.goal_reward = parse_double(value);
  else if (key == "env.trap_penalty") c.env.trap_penalty = parse_double(value);
  else if (key == "env.max_episode_steps") c.env.max_episode_steps = parse_int(value);
  else if (key == "env.hindsight") c.env.hindsight = parse_bool(value);
  else if (key == "mode") c.mode = mix_mode_from_name(value);
  else if (key == "seeds")
    c.seeds = parse_list<std::uint64_t>(value, [](const std::string& v) {
      return static_cast<std::uint64_t>(std::stoull(v));
    });
  else if (key == "outer_iterations") c.outer_iterations = parse_int(value);
  else if (key == "steps_per_iteration") c.steps_per_iteration = parse_long(value);
  else if (key == "stop_when_pools_full") c.stop_when_pools_full = parse_bool(value);
  else if (key == "pool_capacity") c.pool_capacity = parse_int(value);
  else if (key == "sensitive_capacity") c.sensitive_capacity = parse_int(value);
  else if (key == "retain_sensitive_pools") c.retain_sensitive_pools = parse_bool(value);
  else if (key == "esce.tau") c.esce.tau = parse_double(value);
  else if (key == "esce.sigma") c.esce.sigma = parse_double(value);
  else if (key == "esce.phase1_epochs") c.esce.phase1_epochs = parse_int(value);
  else if (key == "esce.phase2_max_iters") c.esce.phase2_max_iters = parse_int(value);
  else if (key == "esce.batch_size") c.esce.batch_size = parse_int(value);
  else if (key == "esce.sensitive_fraction") c.esce.sensitive_fraction = parse_double(value);
  else if (key == "esce.calibrated_magnitude") c.esce.calibrated_magnitude = parse_double(value);
  else if (key == "esce.learning_rate") c.esce.learning_rate = parse_double(value);
  else if (key == "esce.hidden") c.esce.hidden = parse_list<int>(value, parse_int);
  else if (key == "agent.hidden") c.agent_hidden = parse_list<int>(value, parse_int);
  else if (key == "agent.learning_rate") c.agent_learning_rate = parse_double(value);
  else if (key == "agent.gamma") c.gamma = parse_double(value);
  else if (key == "agent.n_steps") c.n_steps = parse_int(value);
  else if (key == "agent.entropy_coeff") c.entropy_coeff = parse_double(value);
  else if (key == "agent.value_coeff") c.value_coeff = parse_double(value);
  else if (key == "workers") c.workers = parse_int(value);
  else if (key == "max_eval_rounds") c.max_eval_rounds = parse_int(value);
  else if (key == "window_episodes") c.window_episodes = parse_int(value);
  else if (key == "convergence_threshold") c.convergence_threshold = parse_double(value);
  else if (key == "convergence_patience") c.convergence_patience = parse_int(value);
  else if (key == "convergence_min_iterations") c.convergence_min_iterations = parse_int(value);
  else if (key == "convergence_enabled") c.convergence_enabled = parse_bool(value);
  else if (key == "output_dir") c.output_dir = value;
  else {
    std::string msg = "unknown config key '" + key + "'; valid keys:";
    for (const auto& k : experiment_config_keys()) msg += " " + k;
    throw std::invalid_argument(msg);
  }
}

ExperimentConfig parse_experiment_config(const std::vector<std::pair<std::string, std::string>>& entries) {
  ExperimentConfig c;
  for (const auto& [k, v] : entries) apply_config_override(c, k, v);
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    entries.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return parse_experiment_config(entries);
}

void save_experiment_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write config file " + path);
  f.precision(17);
  f << "env.name = " << c.env.env_name << '\n';
  f << "env.chain_length = " << c.env.chain_length << '\n';
  f << "env.corridor_length = " << c.env.corridor_length << '\n';
  f << "env.grid_width = " << c.env.grid_width << '\n';
  f << "env.grid_height = " << c.env.grid_height << '\n';
  f << "env.start_cell = " << c.env.start_cell << '\n';
  f << "env.goal_cell = " << c.env.goal_cell << '\n';
  f << "env.trap_cell = " << c.env.trap_cell << '\n';
  if (!c.env.penalty_cells.empty()) f << "env.penalty_cells = " << join_list(c.env.penalty_cells) << '\n';
  f << "env.penalty_magnitude = " << c.env.penalty_magnitude << '\n';
  f << "env.goal_reward = " << c.env.goal_reward << '\n';
  f << "env.trap_penalty = " << c.env.trap_penalty << '\n';
  f << "env.max_episode_steps = " << c.env.max_episode_steps << '\n';
  f << "env.hindsight = " << (c.env.hindsight ? "true" : "false") << '\n';
  f << "mode = " << mix_mode_name(c.mode) << '\n';
  f << "seeds = " << join_list(c.seeds) << '\n';
  f << "outer_iterations = " << c.outer_iterations << '\n';
  f << "steps_per_iteration = " << c.steps_per_iteration << '\n';
  f << "stop_when_pools_full = " << (c.stop_when_pools_full ? "true" : "false") << '\n';
  f << "pool_capacity = " << c.pool_capacity << '\n';
  f << "sensitive_capacity = " << c.sensitive_capacity << '\n';
  f << "retain_sensitive_pools = " << (c.retain_sensitive_pools ? "true" : "false") << '\n';
  f << "esce.tau = " << c.esce.tau << '\n';
  f << "esce.sigma = " << c.esce.sigma << '\n';
  f << "esce.phase1_epochs = " << c.esce.phase1_epochs << '\n';
  f << "esce.phase2_max_iters = " << c.esce.phase2_max_iters << '\n';
  f << "esce.batch_size = " << c.esce.batch_size << '\n';
  f << "esce.sensitive_fraction = " << c.esce.sensitive_fraction << '\n';
  f << "esce.calibrated_magnitude = " << c.esce.calibrated_magnitude << '\n';
  f << "esce.learning_rate = " << c.esce.learning_rate << '\n';
  f << "esce.hidden = " << join_list(c.esce.hidden) << '\n';
  f << "agent.hidden = " << join_list(c.agent_hidden) << '\n';
  f << "agent.learning_rate = " << c.agent_learning_rate << '\n';
  f << "agent.gamma = " << c.gamma << '\n';
  f << "agent.n_steps = " << c.n_steps << '\n';
  f << "agent.entropy_coeff = " << c.entropy_coeff << '\n';
  f << "agent.value_coeff = " << c.value_coeff << '\n';
  f << "workers = " << c.workers << '\n';
  f << "max_eval_rounds = " << c.max_eval_rounds << '\n';
  f << "window_episodes = " << c.window_episodes << '\n';
  f << "convergence_threshold = " << c.convergence_threshold << '\n';
  f << "convergence_patience = " << c.convergence_patience << '\n';
  f << "convergence_min_iterations = " << c.convergence_min_iterations << '\n';
  f << "convergence_enabled = " << (c.convergence_enabled ? "true" : "false") << '\n';
  f << "output_dir = " << c.output_dir << '\n';
}

void apply_env_overrides(ExperimentConfig& config) {
  if (const char* dir = std::getenv("CALRL_OUTPUT_DIR")) config.output_dir = dir;
  if (const char* seed = std::getenv("CALRL_SEED")) {
    config.seeds = {static_cast<std::uint64_t>(std::stoull(seed))};
  }
}

// ---- experiment driver ----

namespace {

struct SeedOutcome {
  bool converged = false;
  int iterations_run = 0;
  long episodes = 0;
  double wall_ms = 0.0;
  std::vector<std::string> worker_errors;
};

struct WindowStats {
  double mean = 0.0, mn = 0.0, mx = 0.0;
};

WindowStats window_stats(const std::deque<double>& w) {
  WindowStats s;
  if (w.empty()) return s;
  s.mn = s.mx = w.front();
  double sum = 0.0;
  for (double x : w) {
    sum += x;
    s.mn = std::min(s.mn, x);
    s.mx = std::max(s.mx, x);
  }
  s.mean = sum / static_cast<double>(w.size());
  return s;
}

SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& seed_dir,
                     std::vector<MetricsRecord>* records_out) {
  const auto t0 = std::chrono::steady_clock::now();
  SeedOutcome outcome;

  const auto probe = make_env(cfg.env);
  const int obs_dim = probe->observation_dim();
  const int num_actions = probe->action_count();

  std::mt19937_64 policy_rng(derive_seed(seed, 1));
  std::mt19937_64 esce_rng(derive_seed(seed, 2));
  std::mt19937_64 train_rng(derive_seed(seed, 3));

  SharedPolicy shared(PolicyNet(obs_dim, num_actions, cfg.agent_hidden, policy_rng),
                      OptimizerState::adam(cfg.agent_learning_rate));
  EsceModel esce(obs_dim, cfg.esce, esce_rng);
  PoolSet pools(cfg.pool_capacity, cfg.sensitive_capacity);

  std::ofstream log(seed_dir / "metrics.jsonl");
  if (!log) throw std::runtime_error("cannot write metric log under " + seed_dir.string());

  std::deque<double> window_raw, window_mixed;
  long episodes_completed = 0, total_steps = 0, calibrated_total = 0, updates_total = 0;
  double prev_mean = 0.0;
  bool have_prev_mean = false;
  int small_changes = 0;
  int retain_ticks = 0;

  for (int outer = 1; outer <= cfg.outer_iterations; ++outer) {
    RolloutConfig rc;
    rc.workers = cfg.workers;
    rc.step_budget = cfg.steps_per_iteration;
    rc.stop_when_main_pools_full = cfg.stop_when_pools_full;
    rc.n_steps = cfg.n_steps;
    rc.gamma = cfg.gamma;
    rc.entropy_coeff = cfg.entropy_coeff;
    rc.value_coeff = cfg.value_coeff;
    rc.mix = mix_for_mode(cfg.mode);
    rc.seed = derive_seed(seed, 1000 + static_cast<std::uint64_t>(outer));
    rc.max_eval_rounds = cfg.max_eval_rounds;

    RolloutResult rr = run_workers(rc, cfg.env, shared, pools, &esce);
    for (const auto& err : rr.worker_errors) outcome.worker_errors.push_back(err);

    for (const EpisodeStats& e : rr.episodes) {
      window_raw.push_back(e.raw_env_return);
      window_mixed.push_back(e.mixed_return);
      while (static_cast<int>(window_raw.size()) > cfg.window_episodes) window_raw.pop_front();
      while (static_cast<int>(window_mixed.size()) > cfg.window_episodes) window_mixed.pop_front();
    }
    episodes_completed += static_cast<long>(rr.episodes.size());
    total_steps += rr.total_steps;
    calibrated_total += rr.calibrated_rewards;
    updates_total += rr.gradient_updates;

    MetricsRecord rec;
    rec.seed = seed;
    rec.outer_iteration = outer;
    rec.episodes_completed = episodes_completed;
    rec.total_env_steps = total_steps;
    rec.calibrated_rewards = calibrated_total;
    rec.gradient_updates = updates_total;

    std::vector<Round> rounds;
    std::vector<std::vector<char>> flags;
    rounds.reserve(rr.rounds.size());
    flags.reserve(rr.rounds.size());
    for (WorkerRound& wr : rr.rounds) {
      rounds.push_back(std::move(wr.round));
      flags.push_back(std::move(wr.flagged));
    }
    if (!rounds.empty()) rec.esce = EsceModel::evaluate_with_flags(rounds, flags);

    // Extractor training only once both signal classes have been seen.
    if (!pools.positive.empty() && !pools.negative.empty()) {
      record_sensitive(pools, rounds, flags);
      rec.phase1_loss = esce.train_phase1(pools, train_rng);
      rec.phase2_iters = esce.train_phase2(pools, train_rng);
    }

    if (cfg.retain_sensitive_pools) {
      pools.clear_main();
      if (++retain_ticks >= 2) {
        pools.sensitive_miss.clear();
        pools.sensitive_false.clear();
        retain_ticks = 0;
      }
    } else {
      pools.clear_all();
    }

    const WindowStats raw = window_stats(window_raw);
    const WindowStats mixed = window_stats(window_mixed);
    rec.window_mean_return = raw.mean;
    rec.window_min_return = raw.mn;
    rec.window_max_return = raw.mx;
    rec.window_mean_mixed = mixed.mean;

    log << rec.to_json_line() << '\n';
    if (records_out) records_out->push_back(rec);
    outcome.iterations_run = outer;

    const bool window_full = static_cast<int>(window_raw.size()) >= cfg.window_episodes;
    if (cfg.convergence_enabled && window_full) {
      if (have_prev_mean && outer >= cfg.convergence_min_iterations) {
        const double scale = std::max(std::abs(prev_mean), std::abs(raw.mean));
        const bool small = std::abs(raw.mean - prev_mean) <= cfg.convergence_threshold * scale;
        small_changes = small ? small_changes + 1 : 0;
        if (small_changes >= cfg.convergence_patience) {
          outcome.converged = true;
        }
      }
      prev_mean = raw.mean;
      have_prev_mean = true;
    }
    if (outcome.converged) break;
  }

  log.flush();
  save_checkpoint(shared.unsafe_policy().net(), (seed_dir / "policy.ckpt").string());
  save_checkpoint(esce.net(), (seed_dir / "esce.ckpt").string());

  outcome.episodes = episodes_completed;
  outcome.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return outcome;
}

void emit_seed_chart(const std::vector<MetricsRecord>& recs, const fs::path& path,
                     std::uint64_t seed) {
  if (recs.empty()) return;
  ChartSpec spec;
  spec.title = "window mean environmental return (seed " + std::to_string(seed) + ")";
  spec.x_label = "outer iteration";
  spec.y_label = "window_mean_return";
  ChartSeries s;
  s.name = "seed " + std::to_string(seed);
  for (const auto& r : recs) s.points.emplace_back(r.outer_iteration, r.window_mean_return);
  spec.series.push_back(std::move(s));
  write_svg_chart(spec, path.string());
}

void emit_mean_chart(const std::vector<std::vector<MetricsRecord>>& per_seed, const fs::path& path) {
  ChartSpec spec;
  spec.title = "window mean environmental return";
  spec.x_label = "outer iteration";
  spec.y_label = "window_mean_return";
  size_t min_len = std::string::npos;
  bool any = false;
  for (const auto& recs : per_seed) {
    if (recs.empty()) continue;
    any = true;
    min_len = std::min(min_len, recs.size());
    ChartSeries s;
    s.name = "seed " + std::to_string(recs.front().seed);
    for (const auto& r : recs) s.points.emplace_back(r.outer_iteration, r.window_mean_return);
    spec.series.push_back(std::move(s));
  }
  if (!any) return;
  ChartSeries mean;
  mean.name = "mean";
  mean.color = "#000000";
  mean.emphasized = true;
  for (size_t i = 0; i < min_len; ++i) {
    double sum = 0.0;
    int n = 0;
    for (const auto& recs : per_seed) {
      if (i < recs.size()) {
        sum += recs[i].window_mean_return;
        ++n;
      }
    }
    if (n > 0) mean.points.emplace_back(static_cast<double>(i + 1), sum / n);
  }
  spec.series.push_back(std::move(mean));
  write_svg_chart(spec, path.string());
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& config) {
  ExperimentConfig cfg = config;
  if (cfg.mode == MixMode::kHindsightFull) cfg.env.hindsight = true;

  // Configuration problems surface before anything touches the disk.
  try {
    if (cfg.seeds.empty()) throw std::invalid_argument("at least one seed required");
    if (cfg.outer_iterations < 0) throw std::invalid_argument("outer_iterations must be >= 0");
    if (cfg.steps_per_iteration < 1) throw std::invalid_argument("steps_per_iteration must be >= 1");
    if (cfg.workers < 1) throw std::invalid_argument("workers must be >= 1");
    if (cfg.window_episodes < 1) throw std::invalid_argument("window_episodes must be >= 1");
    (void)make_env(cfg.env);
    std::mt19937_64 probe_rng(0);
    (void)EsceModel(2, cfg.esce, probe_rng);  // validates the extractor settings
  } catch (const std::exception& e) {
    return {RunStatus::kConfigError, e.what()};
  }

  const fs::path out_dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    return {RunStatus::kConfigError, "cannot create output directory " + cfg.output_dir};
  }
  {
    std::ofstream probe(out_dir / ".write_probe");
    if (!probe) return {RunStatus::kConfigError, "output directory not writable: " + cfg.output_dir};
  }
  fs::remove(out_dir / ".write_probe", ec);

  try {
    save_experiment_config(cfg, (out_dir / "config.kv").string());

    const RewardMix mix = mix_for_mode(cfg.mode);
    bool all_converged = true;
    std::vector<std::vector<MetricsRecord>> per_seed;
    nlohmann::json summary;
    summary["mode"] = std::string(mix_mode_name(cfg.mode));
    summary["alpha"] = mix.alpha;
    summary["beta"] = mix.beta;
    summary["seeds"] = nlohmann::json::array();

    for (std::uint64_t seed : cfg.seeds) {
      const fs::path seed_dir = out_dir / ("seed_" + std::to_string(seed));
      fs::create_directories(seed_dir);
      std::vector<MetricsRecord> recs;
      const SeedOutcome so = run_seed(cfg, seed, seed_dir, &recs);
      emit_seed_chart(recs, seed_dir / "learning_curve.svg", seed);
      per_seed.push_back(std::move(recs));
      if (!so.converged) all_converged = false;

      nlohmann::json js;
      js["seed"] = seed;
      js["converged"] = so.converged;
      js["iterations_run"] = so.iterations_run;
      js["episodes"] = so.episodes;
      js["wall_clock_ms"] = so.wall_ms;
      js["worker_errors"] = so.worker_errors;
      summary["seeds"].push_back(js);
    }

    emit_mean_chart(per_seed, out_dir / "learning_curve_mean.svg");
    std::ofstream sf(out_dir / "summary.json");
    sf << summary.dump(2) << '\n';

    if (cfg.outer_iterations == 0 || all_converged) {
      return {RunStatus::kSuccess, "converged"};
    }
    return {RunStatus::kBudgetExhausted, "iteration budget exhausted before convergence"};
  } catch (const std::exception& e) {
    return {RunStatus::kConfigError, e.what()};
  }
}

LoadedRun load_run(const std::string& run_dir) {
  LoadedRun run;
  run.dir = run_dir;
  const fs::path dir(run_dir);
  if (!fs::is_directory(dir)) throw std::runtime_error("not a run directory: " + run_dir);
  run.config = load_experiment_config((dir / "config.kv").string());
  for (std::uint64_t seed : run.config.seeds) {
    const fs::path log_path = dir / ("seed_" + std::to_string(seed)) / "metrics.jsonl";
    std::ifstream f(log_path);
    if (!f) throw std::runtime_error("missing metric log " + log_path.string());
    std::vector<MetricsRecord> recs;
    std::string line;
    while (std::getline(f, line)) {
      if (!trim(line).empty()) recs.push_back(MetricsRecord::from_json_line(line));
    }
    run.per_seed.push_back(std::move(recs));
  }
  return run;
}

namespace {

bool env_compatible(const EnvConfig& a, const EnvConfig& b) {
  return a.env_name == b.env_name && a.chain_length == b.chain_length &&
         a.corridor_length == b.corridor_length && a.grid_width == b.grid_width &&
         a.grid_height == b.grid_height && a.start_cell == b.start_cell &&
         a.goal_cell == b.goal_cell && a.trap_cell == b.trap_cell &&
         a.penalty_cells == b.penalty_cells && a.max_episode_steps == b.max_episode_steps;
}

struct MeanCi {
  double mean = 0.0;
  double ci = 0.0;  // 1.96 * sd / sqrt(n)
};

MeanCi mean_ci(const std::vector<double>& xs) {
  MeanCi m;
  if (xs.empty()) return m;
  double sum = 0.0;
  for (double x : xs) sum += x;
  m.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    m.ci = 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
  }
  return m;
}

}  // namespace

RunOutcome compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_table_path,
                        const std::string& out_chart_path) {
  try {
    if (run_dirs.size() < 2) {
      return {RunStatus::kConfigError, "compare needs at least two run directories"};
    }
    std::vector<LoadedRun> runs;
    for (const auto& d : run_dirs) runs.push_back(load_run(d));
    for (size_t i = 1; i < runs.size(); ++i) {
      if (!env_compatible(runs[0].config.env, runs[i].config.env)) {
        return {RunStatus::kConfigError,
                "mismatched env configs between " + runs[0].dir + " and " + runs[i].dir};
      }
    }

    // Align on iterations present in every seed of every run.
    size_t n_iters = std::string::npos;
    for (const auto& run : runs) {
      for (const auto& recs : run.per_seed) n_iters = std::min(n_iters, recs.size());
    }
    if (n_iters == std::string::npos || n_iters == 0) {
      return {RunStatus::kConfigError, "no overlapping iterations across runs"};
    }

    std::ofstream table(out_table_path);
    if (!table) return {RunStatus::kConfigError, "cannot write " + out_table_path};
    table.precision(10);
    table << "iteration";
    std::vector<std::string> names;
    for (const auto& run : runs) {
      std::string name = fs::path(run.dir).filename().string();
      if (name.empty()) name = run.dir;
      names.push_back(name);
      table << '\t' << name << "_mean\t" << name << "_ci";
    }
    for (size_t i = 1; i < runs.size(); ++i) table << '\t' << names[i] << "_minus_" << names[0];
    table << '\n';

    ChartSpec spec;
    spec.title = "window mean environmental return";
    spec.x_label = "outer iteration";
    spec.y_label = "window_mean_return";
    std::vector<ChartSeries> series(runs.size());
    for (size_t r = 0; r < runs.size(); ++r) series[r].name = names[r];

    for (size_t it = 0; it < n_iters; ++it) {
      table << (it + 1);
      std::vector<double> means(runs.size());
      for (size_t r = 0; r < runs.size(); ++r) {
        std::vector<double> vals;
        for (const auto& recs : runs[r].per_seed) vals.push_back(recs[it].window_mean_return);
        const MeanCi m = mean_ci(vals);
        means[r] = m.mean;
        series[r].points.emplace_back(static_cast<double>(it + 1), m.mean);
        table << '\t' << m.mean << '\t' << m.ci;
      }
      for (size_t r = 1; r < runs.size(); ++r) table << '\t' << (means[r] - means[0]);
      table << '\n';
    }
    for (auto& s : series) spec.series.push_back(std::move(s));
    write_svg_chart(spec, out_chart_path);
    return {RunStatus::kSuccess, "compared " + std::to_string(runs.size()) + " runs"};
  } catch (const std::exception& e) {
    return {RunStatus::kConfigError, e.what()};
  }
}

std::vector<std::string> metric_names() {
  return {"episodes_completed", "total_env_steps",  "window_mean_return", "window_min_return",
          "window_max_return",  "window_mean_mixed", "calibrated_rewards", "precision_pos",
          "recall_pos",         "recall_neg",        "n_ident",            "n_suff",
          "n_pos",              "phase1_loss",       "phase2_iters",       "gradient_updates"};
}

double metric_value(const MetricsRecord& r, const std::string& name) {
  if (name == "episodes_completed") return static_cast<double>(r.episodes_completed);
  if (name == "total_env_steps") return static_cast<double>(r.total_env_steps);
  if (name == "window_mean_return") return r.window_mean_return;
  if (name == "window_min_return") return r.window_min_return;
  if (name == "window_max_return") return r.window_max_return;
  if (name == "window_mean_mixed") return r.window_mean_mixed;
  if (name == "calibrated_rewards") return static_cast<double>(r.calibrated_rewards);
  if (name == "precision_pos") return r.esce.precision_pos;
  if (name == "recall_pos") return r.esce.recall_pos;
  if (name == "recall_neg") return r.esce.recall_neg;
  if (name == "n_ident") return static_cast<double>(r.esce.n_ident);
  if (name == "n_suff") return static_cast<double>(r.esce.n_suff);
  if (name == "n_pos") return static_cast<double>(r.esce.n_pos);
  if (name == "phase1_loss") return r.phase1_loss;
  if (name == "phase2_iters") return static_cast<double>(r.phase2_iters);
  if (name == "gradient_updates") return static_cast<double>(r.gradient_updates);
  std::string msg = "unknown metric '" + name + "'; valid metrics:";
  for (const auto& m : metric_names()) msg += " " + m;
  throw std::invalid_argument(msg);
}

RunOutcome emit_metric_chart(const std::string& run_dir, const std::vector<std::string>& metrics,
                             const std::string& out_path) {
  try {
    if (metrics.empty()) return {RunStatus::kConfigError, "no metric names given"};
    for (const auto& m : metrics) {
      MetricsRecord probe;
      (void)metric_value(probe, m);  // rejects unknown names up front
    }
    const LoadedRun run = load_run(run_dir);
    bool any = false;
    for (const auto& recs : run.per_seed) any = any || !recs.empty();
    if (!any) return {RunStatus::kConfigError, "metric log is empty under " + run_dir};

    ChartSpec spec;
    spec.x_label = "outer iteration";

    if (metrics.size() == 1) {
      spec.title = metrics[0];
      spec.y_label = metrics[0];
      size_t min_len = std::string::npos;
      for (const auto& recs : run.per_seed) {
        if (recs.empty()) continue;
        min_len = std::min(min_len, recs.size());
        ChartSeries s;
        s.name = "seed " + std::to_string(recs.front().seed);
        for (const auto& r : recs) {
          s.points.emplace_back(r.outer_iteration, metric_value(r, metrics[0]));
        }
        spec.series.push_back(std::move(s));
      }
      if (spec.series.size() > 1) {
        ChartSeries mean;
        mean.name = "mean";
        mean.color = "#000000";
        mean.emphasized = true;
        for (size_t i = 0; i < min_len; ++i) {
          double sum = 0.0;
          int n = 0;
          for (const auto& recs : run.per_seed) {
            if (i < recs.size()) {
              sum += metric_value(recs[i], metrics[0]);
              ++n;
            }
          }
          mean.points.emplace_back(static_cast<double>(i + 1), sum / n);
        }
        spec.series.push_back(std::move(mean));
      }
    } else {
      // Several metrics: one seed-averaged series per metric.
      std::string title;
      for (const auto& m : metrics) title += (title.empty() ? "" : " / ") + m;
      spec.title = title;
      spec.y_label = "value";
      size_t min_len = std::string::npos;
      for (const auto& recs : run.per_seed) {
        if (!recs.empty()) min_len = std::min(min_len, recs.size());
      }
      for (const auto& m : metrics) {
        ChartSeries s;
        s.name = m;
        for (size_t i = 0; i < min_len; ++i) {
          double sum = 0.0;
          int n = 0;
          for (const auto& recs : run.per_seed) {
            if (i < recs.size()) {
              sum += metric_value(recs[i], m);
              ++n;
            }
          }
          s.points.emplace_back(static_cast<double>(i + 1), sum / n);
        }
        spec.series.push_back(std::move(s));
      }
    }

    write_svg_chart(spec, out_path);
    return {RunStatus::kSuccess, "chart written to " + out_path};
  } catch (const std::exception& e) {
    return {RunStatus::kConfigError, e.what()};
  }
}

}  // namespace calrl
