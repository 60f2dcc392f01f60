#ifndef AOPE_MARL_HPP_
#define AOPE_MARL_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "aope/nn.hpp"
#include "aope/orders.hpp"
#include "aope/rl.hpp"
#include "aope/rules.hpp"
#include "aope/sim.hpp"

namespace aope::marl {

enum class FrameworkKind { ILLR, ILGR, CDIC, CDSC };
enum class CriticState { Local, Global };
enum class RewardKind { Local, Global };
enum class CriticArch { Individual, Shared };

std::string framework_name(FrameworkKind kind);
FrameworkKind framework_from_name(const std::string& name);
std::string estimator_name(rl::Estimator e);
rl::Estimator estimator_from_name(const std::string& name);

/// How elapsed time discounts local (per-decision) rewards.
enum class LocalDiscount {
  PerDecision,  // one γ per decision of the agent
  Zeta,         // γ^{Δt/ζ}, as for the global reward
};

struct Hyperparameters {
  double epsilon = 0.2;
  int rollouts_per_episode = 64;  // N_ℓ
  int epochs = 5;                 // N_k
  int episodes = 5000;            // N_ep
  int minibatch = 64;
  double actor_lr = 1e-3;
  double critic_lr = 3e-4;
  double lr_decay = 0.8;
  int lr_decay_every = 250;
  std::vector<int> hidden = {128, 128};
  double entropy_coef = 0.0;
  double max_grad_norm = 0.5;      // <= 0 disables clipping
  bool normalize_advantages = true;
};

struct RewardConfig {
  double t_ofs = 6.6;
  double time_unit_s = 1000.0;
  bool swap_branch = false;
  LocalDiscount local_discount = LocalDiscount::PerDecision;
};

/// One of the four training frameworks. `make` fills the critic wiring from the kind.
///
///           critic state   reward   critics
///   ILLR    local          local    one per agent
///   ILGR    local          global   one per agent
///   CDIC    global         global   one per agent
///   CDSC    global         global   one shared, conditioned on the agent id
struct FrameworkConfig {
  FrameworkKind kind = FrameworkKind::CDSC;
  CriticState critic_state = CriticState::Global;
  RewardKind reward = RewardKind::Global;
  CriticArch critic_arch = CriticArch::Shared;
  bool per_agent_chains = true;  // individual critics evaluate each agent's own decision chain
  rl::AdvantageConfig advantage;
  Hyperparameters hyper;
  RewardConfig reward_config;

  static FrameworkConfig make(FrameworkKind kind, rl::Estimator estimator = rl::Estimator::GAE, double lambda = 0.95);
  /// Throws Error when the wiring does not match the kind or a value is out of range.
  void validate() const;
  std::string label() const;
};

/// JSON round trip of every field; used by checkpoints and manifests.
std::string config_to_json(const FrameworkConfig& config);
FrameworkConfig config_from_json(const std::string& json);

/// Running mean and variance (parallel-merge form) used to standardize network inputs.
struct RunningNorm {
  nn::Vector mean;
  nn::Vector var;
  double count = 0.0;

  RunningNorm() = default;
  explicit RunningNorm(int dim) : mean(nn::Vector::Zero(dim)), var(nn::Vector::Ones(dim)) {}
  int dim() const { return static_cast<int>(mean.size()); }
  /// Adds the columns of `batch` (dim x n).
  void update(const nn::Matrix& batch);
  /// Mean and standard deviation (floored at 0.01); 0 and 1 before the first update.
  double center(int i) const { return count > 0.0 ? mean[i] : 0.0; }
  double scale(int i) const;
  /// (x - center) / scale, clipped to [-5, 5].
  nn::Matrix apply(const nn::Matrix& x) const;
  friend bool operator==(const RunningNorm&, const RunningNorm&) = default;
};

/// Actors, critics, their optimizers and input normalizers.
struct AgentBundle {
  FrameworkKind kind = FrameworkKind::CDSC;
  orders::OrderStats stats;
  std::array<nn::Mlp, kNumAgents> actors;
  std::array<nn::AdamState, kNumAgents> actor_opt;
  std::array<RunningNorm, kNumAgents> obs_norm;
  std::vector<nn::Mlp> critics;  // kNumAgents individual critics or one shared critic
  std::vector<nn::AdamState> critic_opt;
  std::vector<RunningNorm> critic_norm;  // one per critic, over its input
  std::vector<RunningNorm> return_norm;  // one per critic, 1-d: critics predict standardized returns
  int episodes_completed = 0;

  /// Actor weights depend only on `seed` and the agent, never on the framework.
  static AgentBundle create(const FrameworkConfig& config, const orders::OrderStats& stats, std::uint64_t seed);

  int critic_index(AgentId agent) const { return critics.size() == 1 ? 0 : index(agent); }
  void set_completed_episodes(int n);
  friend bool operator==(const AgentBundle&, const AgentBundle&) = default;
};

int actor_input_dim(AgentId agent);
int critic_input_dim(const FrameworkConfig& config, AgentId agent);

/// Global state followed by a one-hot agent id (length 4).
std::vector<double> shared_critic_input(const std::vector<double>& state, AgentId agent);

/// Raw (unnormalized) critic input of one decision for the framework.
std::vector<double> critic_input(const FrameworkConfig& config, const std::vector<double>& obs,
                                 const std::vector<double>& state, AgentId agent);

struct Transition {
  AgentId agent = AgentId::FR;
  Tick tick = 0;
  int action = 0;
  double logp_old = 0.0;
  std::vector<double> obs;    // actor input
  std::vector<double> state;  // global state (empty for local-state critics)
  sim::ActionMask mask;
  double reward = 0.0;
  Tick dt = 0;        // ticks until the next decision in this transition's chain, or to the end
  double value = 0.0;
  double ret = 0.0;   // C_t
  double advantage = 0.0;
};

struct Rollout {
  std::uint64_t seed = 0;
  std::vector<Transition> transitions;  // time-ordered; same-tick decisions in agent order
  Tick end_tick = 0;
  double makespan_s = 0.0;
};

/// Raised when an episode cannot finish; `trace_path` holds the decision trace (may be empty).
class DeadlockError : public Error {
 public:
  DeadlockError(const std::string& what, std::filesystem::path trace_path)
      : Error(what), trace_path_(std::move(trace_path)) {}
  const std::filesystem::path& trace_path() const { return trace_path_; }

 private:
  std::filesystem::path trace_path_;
};

/// Runs one episode with the bundle's actors (masked sampling, or argmax when `greedy`) and
/// attaches rewards per the framework. Values and advantages are filled by `attach_estimates`.
Rollout collect_rollout(const orders::OrderSet& orders, const sim::EnvParams& params, const AgentBundle& bundle,
                        const FrameworkConfig& config, std::uint64_t seed, bool greedy = false);

/// Indices into `rollout.transitions` of each advantage chain: one per agent with individual
/// critics, or one merged chain with the shared critic.
std::vector<std::vector<std::size_t>> decision_chains(const Rollout& rollout, const FrameworkConfig& config);

/// Evaluates the critics and fills value, ret and advantage of every transition.
void attach_estimates(Rollout& rollout, const AgentBundle& bundle, const FrameworkConfig& config);

struct UpdateMetrics {
  double actor_loss = 0.0;   // mean negative clipped objective
  double critic_loss = 0.0;  // mean squared error in standardized return units
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double mean_ratio = 1.0;
  int minibatches = 0;
  int skipped_steps = 0;
  bool aborted = false;  // a non-finite loss rolled the update back
  std::array<std::optional<double>, kNumAgents> explained_variance;
};

/// N_k epochs of clipped PPO over the buffer. Rollouts must carry estimates. Leaves the
/// bundle unchanged when a loss turns non-finite.
UpdateMetrics update(AgentBundle& bundle, const std::vector<Rollout>& buffer, const FrameworkConfig& config,
                     std::uint64_t seed);

/// Adds the buffer's actor inputs to the observation normalizers. Called after `update`,
/// which refreshes the critic-side normalizers itself, so that logp_old stays consistent.
void update_observation_normalizers(AgentBundle& bundle, const std::vector<Rollout>& buffer);

/// Mean of ρ = π_new / π_old over the buffer under the bundle's current actors.
double mean_ratio(const AgentBundle& bundle, const std::vector<Rollout>& buffer);

// ---------------------------------------------------------------------------------------------
// Training loop

struct EpisodeMetrics {
  int episode = 0;
  std::uint64_t seed = 0;
  double mean_makespan = 0.0;
  double std_makespan = 0.0;
  UpdateMetrics update;
};

/// CSV with header `episode,seed,mean_makespan,std_makespan,ev_FR,ev_PC,ev_PR1,ev_PR2,
/// actor_loss,critic_loss,entropy,clip_fraction,approx_kl,aborted`; missing EV is empty.
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const EpisodeMetrics& m);
std::vector<EpisodeMetrics> read_metrics(std::istream& in);

struct TrainOptions {
  std::uint64_t seed = 1;
  int workers = 1;
  int checkpoint_every = 0;  // episodes; 0 = only the final checkpoint
  std::filesystem::path out_dir;  // empty = no files
  std::function<void(const EpisodeMetrics&)> on_episode;
};

struct TrainResult {
  AgentBundle bundle;
  std::vector<EpisodeMetrics> metrics;
};

/// Algorithm: per episode, collect N_ℓ rollouts with the frozen bundle, attach estimates,
/// update, then refresh normalizers and learning rates. Environment and network seeds all
/// derive from `options.seed`.
TrainResult train(const FrameworkConfig& config, const orders::OrderSet& orders, const sim::EnvParams& params,
                  const TrainOptions& options);

/// Rollout seed k of an episode.
std::uint64_t rollout_seed(std::uint64_t master, int episode, int k);

/// Worker count from AOPE_WORKERS (default 1).
int workers_from_env();

// ---------------------------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const AgentBundle& bundle, const FrameworkConfig& config);
struct Checkpoint {
  AgentBundle bundle;
  FrameworkConfig config;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------------------------
// Execution with trained actors

/// Four actors with their observation normalizers; agents may come from different bundles.
struct PolicySet {
  std::array<const nn::Mlp*, kNumAgents> actors{};
  std::array<const RunningNorm*, kNumAgents> norms{};

  static PolicySet from(const AgentBundle& bundle);
  /// Throws Error when an actor does not fit the order set's action spaces.
  void check(const orders::OrderStats& stats) const;
};

/// Decentralized execution: each actor sees only its own observation.
class PolicyController final : public rules::Controller {
 public:
  PolicyController(PolicySet policies, std::uint64_t seed, bool greedy)
      : policies_(policies), rng_(seed), greedy_(greedy) {}
  int decide(const sim::SimState& state, const sim::DecisionRequest& request) override;

 private:
  PolicySet policies_;
  std::mt19937_64 rng_;
  bool greedy_;
};

}  // namespace aope::marl

#endif  // AOPE_MARL_HPP_
