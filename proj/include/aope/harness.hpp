#ifndef AOPE_HARNESS_HPP_
#define AOPE_HARNESS_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aope/marl.hpp"
#include "aope/rules.hpp"

namespace aope::harness {

struct MakespanStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 when n < 2
  int n = 0;
  std::vector<double> samples;
};

MakespanStats summarize(std::span<const double> samples);

/// Environment seed of evaluation rollout k. Every evaluated method sees the same seeds.
std::uint64_t eval_seed(std::uint64_t seed, int k);

/// Builds a fresh controller for one rollout, given that rollout's seed.
using ControllerFactory = std::function<std::unique_ptr<rules::Controller>(std::uint64_t rollout_seed)>;

/// Runs n rollouts (seeds eval_seed(seed, k)) and collects makespans in rollout order.
MakespanStats evaluate_controller(const ControllerFactory& factory, const orders::OrderSet& orders,
                                  const sim::EnvParams& params, int n_rollouts, std::uint64_t seed, int workers = 1);

/// What `evaluate` runs: uniformly random choices, a rule combination or trained actors.
struct PolicySource {
  enum class Kind { Random, Rules, Policies } kind = Kind::Random;
  rules::RuleCombo combo;
  marl::PolicySet policies;
  bool greedy = false;  // trained actors: argmax instead of sampling
};

ControllerFactory make_factory(const PolicySource& source);

/// Throws Error when trained actors do not fit the order set.
MakespanStats evaluate(const PolicySource& source, const orders::OrderSet& orders, const sim::EnvParams& params,
                       int n_rollouts, std::uint64_t seed, int workers = 1);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;  // two-sided
};

/// Welch's unequal-variance t-test of mean(a) - mean(b). Throws Error when a sample has fewer
/// than two values or both variances are zero.
WelchResult welch_t(std::span<const double> a, std::span<const double> b);

struct SwitchRow {
  std::string label;  // agent name, or "ALL"
  MakespanStats stats;
  double percent_change = 0.0;  // 100 (T_switched - T_base) / T_base
  std::optional<WelchResult> test;  // empty when the test is degenerate
};

struct SwitchStudy {
  MakespanStats baseline;
  std::vector<SwitchRow> rows;  // FR, PC, PR1, PR2, then all four at once
};

/// Replaces one CDSC actor at a time with the ILLR actor of the same agent.
SwitchStudy switch_study(const marl::AgentBundle& base, const marl::AgentBundle& replacement,
                         const orders::OrderSet& orders, const sim::EnvParams& params, int n_rollouts,
                         std::uint64_t seed, bool greedy = false, int workers = 1);

// ---------------------------------------------------------------------------------------------
// Curves

struct CurvePoint {
  int episode = 0;
  double mean = 0.0;
  double std = 0.0;  // across seeds; 0 with one seed
  int n_seeds = 0;
};

/// Per-episode mean and standard deviation of the rollout-mean makespan across seeds.
std::vector<CurvePoint> makespan_curve(const std::vector<marl::EpisodeMetrics>& log);

struct EvPoint {
  int episode = 0;
  std::array<std::optional<double>, kNumAgents> ev;
};

/// Per-agent explained variance averaged across seeds, then smoothed with a trailing moving
/// average over the last `window` episodes that have a value.
std::vector<EvPoint> smoothed_ev(const std::vector<marl::EpisodeMetrics>& log, int window);

/// For each labelled metric log writes <label>_makespan.csv (episode,mean,std,n_seeds) and
/// <label>_ev.csv (episode,ev_FR,ev_PC,ev_PR1,ev_PR2). Returns the written paths.
std::vector<std::filesystem::path> emit_curves(const std::vector<std::pair<std::string, std::filesystem::path>>& logs,
                                               const std::filesystem::path& out_dir, int window = 50);

// ---------------------------------------------------------------------------------------------
// Run configuration and artifacts

/// Training or evaluation run read from an INI file:
///
///   [run]     framework, estimator, lambda, seeds (comma list), episodes, rollouts_per_episode,
///             orders (CSV path or profile name), env (INI path, optional), eval_rollouts,
///             checkpoint_every
///   [ppo]     epsilon, gamma, zeta, epochs, minibatch, actor_lr, critic_lr, lr_decay,
///             lr_decay_every, hidden (comma list), entropy_coef, max_grad_norm,
///             normalize_advantages
///   [reward]  t_ofs, time_unit_s, swap_branch, local_discount (per_decision | zeta)
///
/// Relative paths resolve against the file's directory.
struct RunConfig {
  marl::FrameworkConfig framework;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string orders = "lm";
  std::filesystem::path env;
  int eval_rollouts = 192;
  int checkpoint_every = 0;
};

RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
void write_run_config(std::ostream& out, const RunConfig& config);

/// A CSV path, or a built-in profile name generated with seed 1.
orders::OrderSet resolve_orders(const std::string& spec);
sim::EnvParams resolve_env(const std::filesystem::path& path);

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::vector<std::uint64_t> seeds;
  std::string framework_json;  // empty when no training config is involved
  std::string env_ini;
  std::string orders_csv;
  std::map<std::string, std::string> extra;
};

/// manifest.json with the full configuration, inputs and tool version.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Raw makespans, one row per rollout: `rollout,seed,makespan_s`.
void write_makespans(std::ostream& out, const MakespanStats& stats, std::uint64_t seed);

/// Trains every configured seed into out_dir/seed_<s>/ (metrics.csv, final.bin), then writes
/// the combined metrics.csv, eval_summary.csv (final policy, eval_rollouts sampled rollouts),
/// run.ini and manifest.json into out_dir. `progress` receives one line per 10 episodes.
struct TrainingRun {
  std::vector<marl::EpisodeMetrics> metrics;
  std::vector<std::pair<std::uint64_t, MakespanStats>> evaluations;
};
TrainingRun run_training(const RunConfig& config, const std::filesystem::path& out_dir,
                         const std::vector<std::string>& argv, int workers,
                         const std::function<void(const std::string&)>& progress = {});

/// True when out_dir holds a finished run of exactly this configuration.
bool training_complete(const RunConfig& config, const std::filesystem::path& out_dir);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace aope::harness

#endif  // AOPE_HARNESS_HPP_
