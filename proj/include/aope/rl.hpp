#ifndef AOPE_RL_HPP_
#define AOPE_RL_HPP_

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <vector>

#include "aope/common.hpp"
#include "aope/sim.hpp"

namespace aope::rl {

using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------------------------
// Masked categorical policy

/// π̂(k) = π(k) m(k) / Σ_j m(j) π(j) with π = softmax(logits) and m(k) = 1 for valid actions.
/// Throws Error when no action is valid.
Vector masked_policy(const Vector& logits, const sim::ActionMask& mask);

/// log π̂(action); the action must be valid.
double masked_log_prob(const Vector& logits, const sim::ActionMask& mask, int action);

/// ∂ log π̂(action) / ∂ logits = onehot(action) - π̂ (zero on invalid actions).
Vector masked_log_prob_grad(const Vector& logits, const sim::ActionMask& mask, int action);

/// Entropy of π̂ and its gradient with respect to the logits.
double masked_entropy(const Vector& logits, const sim::ActionMask& mask, Vector* grad = nullptr);

// ---------------------------------------------------------------------------------------------
// Objectives

/// Batch mean of min(ρ A, clip(ρ, 1-ε, 1+ε) A). This is maximized.
double ppo_clip_objective(std::span<const double> ratios, std::span<const double> advantages, double epsilon);

/// ∂/∂ρ of one sample's clipped term: A when the unclipped branch is the minimum, else 0.
double ppo_clip_ratio_grad(double ratio, double advantage, double epsilon);

/// Mean squared error between predictions and targets.
double critic_loss(std::span<const double> predictions, std::span<const double> targets);

// ---------------------------------------------------------------------------------------------
// Advantage estimation over one decision chain
//
// A chain is a time-ordered sequence of decisions (one agent's, or the merged stream of all
// agents). Element j carries its reward r_j, decision tick t_j and critic value V_j. The
// successor of the last element is terminal with value 0. Discount exponents are the
// elapsed ticks divided by ζ.

enum class Estimator { MC, TD0, GAE };

struct AdvantageConfig {
  Estimator estimator = Estimator::GAE;
  double gamma = 0.99;
  double lambda = 0.95;
  double zeta = 800.0;

  void validate() const;
};

/// C_j = r_j + γ^{(t_{j+1} - t_j)/ζ} C_{j+1}, C_last = r_last.
std::vector<double> reward_to_go(std::span<const double> rewards, std::span<const Tick> ticks, double gamma,
                                 double zeta);

/// δ = r + γ^{Δt/ζ} V(s', i') - V(s, i).
double modified_td_error(double reward, double gamma, double dt, double zeta, double next_value, double value);

/// δ_j for every element of the chain (terminal successor value 0).
std::vector<double> td_errors(std::span<const double> rewards, std::span<const Tick> ticks,
                              std::span<const double> values, double gamma, double zeta);

/// A_j = δ_j + (γλ)^{Δt_j/ζ} A_{j+1}, A_last = δ_last.
std::vector<double> async_gae(std::span<const double> rewards, std::span<const Tick> ticks,
                              std::span<const double> values, double gamma, double lambda, double zeta);

/// A_j = C_j - V_j.
std::vector<double> mc_advantage(std::span<const double> returns, std::span<const double> values);

/// Advantages by the configured estimator; TD0 is GAE with λ = 0.
std::vector<double> estimate_advantages(std::span<const double> rewards, std::span<const Tick> ticks,
                                        std::span<const double> values, const AdvantageConfig& config);

// ---------------------------------------------------------------------------------------------
// Rewards and diagnostics

/// Terminal global reward from the makespan. The default form decreases with the makespan:
///   t ≥ t_ofs: -2 [(t - t_ofs)^4 + 1],   t < t_ofs: 2 [(t_ofs - t)^4 - 1].
/// `literal` selects the branch-swapped variant:
///   t ≥ t_ofs: 2 [(t - t_ofs)^4 - 1],    t < t_ofs: -2 [(t - t_ofs)^4 + 1].
/// `time_unit_s` converts seconds into the unit of t and t_ofs (ksec by default).
double terminal_global_reward(double makespan_seconds, double t_ofs, bool literal = false,
                              double time_unit_s = 1000.0);

/// Negative elapsed time in seconds until the agent's next decision.
double local_reward(Tick elapsed_ticks);

/// 1 - Var(V_exp - V_pred) / Var(V_pred), or with Var(V_exp) in the denominator when
/// `conventional` is set. Empty when fewer than two samples or the denominator is zero.
std::optional<double> explained_variance(std::span<const double> expected, std::span<const double> predicted,
                                         bool conventional = false);

}  // namespace aope::rl

#endif  // AOPE_RL_HPP_
