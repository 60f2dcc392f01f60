#include "aope/rl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace aope::rl {

namespace {

void require_valid(const Vector& logits, const sim::ActionMask& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != logits.size()) throw Error("mask size does not match logits");
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t b) { return b != 0; })) {
    throw Error("masked policy: no valid action");
  }
}

}  // namespace

Vector masked_policy(const Vector& logits, const sim::ActionMask& mask) {
  require_valid(logits, mask);
  // Renormalizing softmax over the valid subset equals a softmax restricted to it.
  double max_logit = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < logits.size(); ++k)
    if (mask[k]) max_logit = std::max(max_logit, logits[k]);
  Vector p = Vector::Zero(logits.size());
  double z = 0.0;
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    if (!mask[k]) continue;
    p[k] = std::exp(logits[k] - max_logit);
    z += p[k];
  }
  return p / z;
}

double masked_log_prob(const Vector& logits, const sim::ActionMask& mask, int action) {
  require_valid(logits, mask);
  if (action < 0 || action >= logits.size() || !mask[action]) throw Error("log prob of a masked action");
  double max_logit = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < logits.size(); ++k)
    if (mask[k]) max_logit = std::max(max_logit, logits[k]);
  double z = 0.0;
  for (Eigen::Index k = 0; k < logits.size(); ++k)
    if (mask[k]) z += std::exp(logits[k] - max_logit);
  return logits[action] - max_logit - std::log(z);
}

Vector masked_log_prob_grad(const Vector& logits, const sim::ActionMask& mask, int action) {
  Vector g = -masked_policy(logits, mask);
  g[action] += 1.0;
  return g;
}

double masked_entropy(const Vector& logits, const sim::ActionMask& mask, Vector* grad) {
  Vector p = masked_policy(logits, mask);
  Vector logp = Vector::Zero(p.size());
  double h = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0) continue;
    logp[k] = std::log(p[k]);
    h -= p[k] * logp[k];
  }
  if (grad) {
    // ∂H/∂z_k = -p_k (log p_k + H) on the valid support.
    *grad = Vector::Zero(p.size());
    for (Eigen::Index k = 0; k < p.size(); ++k)
      if (p[k] > 0.0) (*grad)[k] = -p[k] * (logp[k] + h);
  }
  return h;
}

double ppo_clip_objective(std::span<const double> ratios, std::span<const double> advantages, double epsilon) {
  if (ratios.size() != advantages.size()) throw Error("ppo_clip_objective: size mismatch");
  if (ratios.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    double r = ratios[i], a = advantages[i];
    sum += std::min(r * a, std::clamp(r, 1.0 - epsilon, 1.0 + epsilon) * a);
  }
  return sum / static_cast<double>(ratios.size());
}

double ppo_clip_ratio_grad(double ratio, double advantage, double epsilon) {
  double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return ratio * advantage <= clipped * advantage ? advantage : 0.0;
}

double critic_loss(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) throw Error("critic_loss: size mismatch");
  if (predictions.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    double d = predictions[i] - targets[i];
    sum += d * d;
  }
  return sum / static_cast<double>(predictions.size());
}

void AdvantageConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("gamma must be in [0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("lambda must be in [0, 1]");
  if (!(zeta > 0.0)) throw Error("zeta must be positive");
}

namespace {

/// γ^{Δ/ζ}, with 0^0 = 1 so simultaneous decisions are not discounted.
double discount(double base, double dt, double zeta) {
  if (dt == 0.0) return 1.0;
  return std::pow(base, dt / zeta);
}

void check_chain(std::span<const double> rewards, std::span<const Tick> ticks) {
  if (rewards.size() != ticks.size()) throw Error("chain: rewards and ticks differ in length");
  for (std::size_t j = 1; j < ticks.size(); ++j)
    if (ticks[j] < ticks[j - 1]) throw Error("chain: ticks are not time-ordered");
}

}  // namespace

std::vector<double> reward_to_go(std::span<const double> rewards, std::span<const Tick> ticks, double gamma,
                                 double zeta) {
  check_chain(rewards, ticks);
  std::vector<double> c(rewards.size());
  double next = 0.0;
  for (std::size_t j = rewards.size(); j-- > 0;) {
    double coeff = j + 1 < rewards.size() ? discount(gamma, static_cast<double>(ticks[j + 1] - ticks[j]), zeta) : 0.0;
    c[j] = rewards[j] + coeff * next;
    next = c[j];
  }
  return c;
}

double modified_td_error(double reward, double gamma, double dt, double zeta, double next_value, double value) {
  return reward + discount(gamma, dt, zeta) * next_value - value;
}

std::vector<double> td_errors(std::span<const double> rewards, std::span<const Tick> ticks,
                              std::span<const double> values, double gamma, double zeta) {
  check_chain(rewards, ticks);
  if (values.size() != rewards.size()) throw Error("chain: values and rewards differ in length");
  std::vector<double> d(rewards.size());
  for (std::size_t j = 0; j < rewards.size(); ++j) {
    if (j + 1 < rewards.size()) {
      d[j] = modified_td_error(rewards[j], gamma, static_cast<double>(ticks[j + 1] - ticks[j]), zeta, values[j + 1],
                               values[j]);
    } else {
      d[j] = rewards[j] - values[j];
    }
  }
  return d;
}

std::vector<double> async_gae(std::span<const double> rewards, std::span<const Tick> ticks,
                              std::span<const double> values, double gamma, double lambda, double zeta) {
  std::vector<double> delta = td_errors(rewards, ticks, values, gamma, zeta);
  // λ = 0 is the one-step estimate even across same-tick successors, where (γλ)^0 would be 1.
  if (lambda == 0.0) return delta;
  std::vector<double> a(delta.size());
  double next = 0.0;
  for (std::size_t j = delta.size(); j-- > 0;) {
    double coeff =
        j + 1 < delta.size() ? discount(gamma * lambda, static_cast<double>(ticks[j + 1] - ticks[j]), zeta) : 0.0;
    a[j] = delta[j] + coeff * next;
    next = a[j];
  }
  return a;
}

std::vector<double> mc_advantage(std::span<const double> returns, std::span<const double> values) {
  if (returns.size() != values.size()) throw Error("mc_advantage: size mismatch");
  std::vector<double> a(returns.size());
  for (std::size_t j = 0; j < a.size(); ++j) a[j] = returns[j] - values[j];
  return a;
}

std::vector<double> estimate_advantages(std::span<const double> rewards, std::span<const Tick> ticks,
                                        std::span<const double> values, const AdvantageConfig& cfg) {
  cfg.validate();
  switch (cfg.estimator) {
    case Estimator::MC: return mc_advantage(reward_to_go(rewards, ticks, cfg.gamma, cfg.zeta), values);
    case Estimator::TD0: return td_errors(rewards, ticks, values, cfg.gamma, cfg.zeta);
    case Estimator::GAE: return async_gae(rewards, ticks, values, cfg.gamma, cfg.lambda, cfg.zeta);
  }
  return {};
}

double terminal_global_reward(double makespan_seconds, double t_ofs, bool literal, double time_unit_s) {
  if (!(time_unit_s > 0.0)) throw Error("terminal reward time unit must be positive");
  const double t = makespan_seconds / time_unit_s;
  const double d4 = std::pow(t - t_ofs, 4);
  if (literal) return t >= t_ofs ? 2.0 * (d4 - 1.0) : -2.0 * (d4 + 1.0);
  return t >= t_ofs ? -2.0 * (d4 + 1.0) : 2.0 * (d4 - 1.0);
}

double local_reward(Tick elapsed_ticks) {
  if (elapsed_ticks < 0) throw Error("local_reward: negative elapsed time");
  return -ticks_to_seconds(elapsed_ticks);
}

std::optional<double> explained_variance(std::span<const double> expected, std::span<const double> predicted,
                                         bool conventional) {
  if (expected.size() != predicted.size()) throw Error("explained_variance: size mismatch");
  const std::size_t n = expected.size();
  if (n < 2) return std::nullopt;
  auto variance = [n](auto&& at) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += at(i);
    mean /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (at(i) - mean) * (at(i) - mean);
    return v / static_cast<double>(n);
  };
  double residual = variance([&](std::size_t i) { return expected[i] - predicted[i]; });
  double denom = conventional ? variance([&](std::size_t i) { return expected[i]; })
                              : variance([&](std::size_t i) { return predicted[i]; });
  if (denom <= 0.0) return std::nullopt;
  return 1.0 - residual / denom;
}

}  // namespace aope::rl
