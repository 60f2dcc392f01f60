#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "aope/rl.hpp"

using namespace aope;
using rl::Vector;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x[i++] = d;
  return x;
}

// Explicit double sum: A_j = Σ_{l≥j} (γλ)^{(t_l - t_j)/ζ} δ_l.
std::vector<double> gae_oracle(const std::vector<double>& r, const std::vector<Tick>& t, const std::vector<double>& v,
                               double gamma, double lambda, double zeta) {
  const std::size_t n = r.size();
  std::vector<double> delta(n), a(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double next = j + 1 < n ? v[j + 1] : 0.0;
    double dt = j + 1 < n ? static_cast<double>(t[j + 1] - t[j]) : 0.0;
    delta[j] = r[j] + std::pow(gamma, dt / zeta) * next - v[j];
  }
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t l = j; l < n; ++l)
      a[j] += std::pow(gamma * lambda, static_cast<double>(t[l] - t[j]) / zeta) * delta[l];
  return a;
}

}  // namespace

TEST(MaskedPolicy, RenormalizesOverValidActions) {
  Vector z = vec({1.0, 2.0, 3.0, 4.0});
  Vector p = rl::masked_policy(z, {1, 0, 1, 0});
  EXPECT_DOUBLE_EQ(p[1], 0.0);
  EXPECT_DOUBLE_EQ(p[3], 0.0);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(2.0)), 1e-12);
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
}

TEST(MaskedPolicy, EqualLogitsGiveUniformOverValid) {
  Vector p = rl::masked_policy(Vector::Zero(4), {1, 1, 0, 1});
  EXPECT_NEAR(p[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(p[3], 1.0 / 3.0, 1e-12);
  EXPECT_EQ(p[2], 0.0);
}

TEST(MaskedPolicy, AllMaskedIsAnError) {
  EXPECT_THROW(rl::masked_policy(Vector::Zero(3), {0, 0, 0}), Error);
  EXPECT_THROW(rl::masked_policy(Vector::Zero(3), {1, 0}), Error);
}

TEST(MaskedPolicy, IsADistributionOnRandomInputs) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 1 + static_cast<int>(rng() % 12);
    Vector z(n);
    sim::ActionMask m(n);
    for (int k = 0; k < n; ++k) z[k] = nd(rng), m[k] = rng() % 2;
    m[rng() % n] = 1;
    Vector p = rl::masked_policy(z, m);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    for (int k = 0; k < n; ++k) {
      EXPECT_GE(p[k], 0.0);
      if (!m[k]) EXPECT_EQ(p[k], 0.0);
    }
  }
}

TEST(MaskedPolicy, LogProbMatchesPolicyAndRejectsMaskedAction) {
  Vector z = vec({0.3, -1.2, 2.5});
  sim::ActionMask m{1, 1, 0};
  Vector p = rl::masked_policy(z, m);
  EXPECT_NEAR(rl::masked_log_prob(z, m, 1), std::log(p[1]), 1e-12);
  EXPECT_THROW(rl::masked_log_prob(z, m, 2), Error);
}

TEST(MaskedPolicy, LogProbGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 8);
    Vector z(n);
    sim::ActionMask m(n);
    for (int k = 0; k < n; ++k) z[k] = nd(rng), m[k] = rng() % 3 != 0;
    int action = static_cast<int>(rng() % n);
    m[action] = 1;
    Vector g = rl::masked_log_prob_grad(z, m, action);
    for (int k = 0; k < n; ++k) {
      const double h = 1e-6;
      Vector zp = z, zm = z;
      zp[k] += h;
      zm[k] -= h;
      double fd = (rl::masked_log_prob(zp, m, action) - rl::masked_log_prob(zm, m, action)) / (2 * h);
      EXPECT_NEAR(g[k], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(MaskedPolicy, EntropyGradientMatchesFiniteDifferences) {
  Vector z = vec({0.5, -0.4, 1.3, 0.0, -2.0});
  sim::ActionMask m{1, 1, 0, 1, 1};
  Vector g;
  rl::masked_entropy(z, m, &g);
  for (int k = 0; k < z.size(); ++k) {
    Vector zp = z, zm = z;
    zp[k] += 1e-6;
    zm[k] -= 1e-6;
    double fd = (rl::masked_entropy(zp, m) - rl::masked_entropy(zm, m)) / 2e-6;
    EXPECT_NEAR(g[k], fd, 1e-7);
  }
  EXPECT_NEAR(rl::masked_entropy(Vector::Zero(4), {1, 1, 1, 1}), std::log(4.0), 1e-12);
}

TEST(PpoClip, HandValues) {
  std::vector<double> r{1.5}, a{1.0};
  EXPECT_NEAR(rl::ppo_clip_objective(r, a, 0.2), 1.2, 1e-12);
  r = {0.5};
  a = {-1.0};
  EXPECT_NEAR(rl::ppo_clip_objective(r, a, 0.2), -0.8, 1e-12);
  r = {1.1};
  a = {2.0};
  EXPECT_NEAR(rl::ppo_clip_objective(r, a, 0.2), 2.2, 1e-12);
  r = {1.0, 1.5, 0.5};
  a = {1.0, 1.0, -1.0};
  EXPECT_NEAR(rl::ppo_clip_objective(r, a, 0.2), (1.0 + 1.2 - 0.8) / 3.0, 1e-12);
}

TEST(PpoClip, FlatBeyondTheActiveClipBoundary) {
  for (double rho : {1.25, 1.5, 3.0, 10.0}) {
    std::vector<double> r{rho}, a{0.7};
    EXPECT_NEAR(rl::ppo_clip_objective(r, a, 0.2), 1.2 * 0.7, 1e-12);
    EXPECT_EQ(rl::ppo_clip_ratio_grad(rho, 0.7, 0.2), 0.0);
  }
  for (double rho : {0.1, 0.5, 0.79}) {
    std::vector<double> r{rho}, a{-0.7};
    EXPECT_NEAR(rl::ppo_clip_objective(r, a, 0.2), 0.8 * -0.7, 1e-12);
    EXPECT_EQ(rl::ppo_clip_ratio_grad(rho, -0.7, 0.2), 0.0);
  }
  // Pessimistic side stays unclipped.
  EXPECT_EQ(rl::ppo_clip_ratio_grad(0.5, 0.7, 0.2), 0.7);
  EXPECT_EQ(rl::ppo_clip_ratio_grad(1.5, -0.7, 0.2), -0.7);
}

TEST(PpoClip, RatioGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ur(0.3, 1.8), ua(-2.0, 2.0);
  for (int k = 0; k < 200; ++k) {
    double rho = ur(rng), a = ua(rng);
    if (std::abs(std::abs(rho - 1.0) - 0.2) < 1e-3) continue;
    std::vector<double> rp{rho + 1e-7}, rm{rho - 1e-7}, av{a};
    double fd = (rl::ppo_clip_objective(rp, av, 0.2) - rl::ppo_clip_objective(rm, av, 0.2)) / 2e-7;
    EXPECT_NEAR(rl::ppo_clip_ratio_grad(rho, a, 0.2), fd, 1e-6);
  }
}

TEST(RewardToGo, HandAndOracleValues) {
  std::vector<double> r{5.0};
  std::vector<Tick> t{0};
  EXPECT_DOUBLE_EQ(rl::reward_to_go(r, t, 0.99, 800)[0], 5.0);

  r = {1.0, 2.0, 3.0};
  t = {0, 400, 800};
  auto c = rl::reward_to_go(r, t, 0.99, 800);
  EXPECT_NEAR(c[2], 3.0, 1e-12);
  EXPECT_NEAR(c[1], 2.0 + std::pow(0.99, 0.5) * 3.0, 1e-12);
  EXPECT_NEAR(c[0], 1.0 + std::pow(0.99, 0.5) * 2.0 + 0.99 * 3.0, 1e-12);

  auto myopic = rl::reward_to_go(r, t, 0.0, 800);
  for (std::size_t j = 0; j < r.size(); ++j) EXPECT_DOUBLE_EQ(myopic[j], r[j]);
}

TEST(RewardToGo, SameTickDecisionsAreNotDiscounted) {
  std::vector<double> r{0.0, 0.0, 4.0};
  std::vector<Tick> t{10, 10, 10};
  auto c = rl::reward_to_go(r, t, 0.0, 800);
  EXPECT_DOUBLE_EQ(c[0], 4.0);
}

TEST(RewardToGo, RejectsUnorderedTicks) {
  std::vector<double> r{1.0, 1.0};
  std::vector<Tick> t{5, 3};
  EXPECT_THROW(rl::reward_to_go(r, t, 0.99, 800), Error);
}

TEST(TdError, HandValues) {
  EXPECT_NEAR(rl::modified_td_error(1.0, 0.99, 800, 800, 2.0, 1.0), 1.98, 1e-12);
  // Δt = ζ reduces to the classical TD(0) error.
  EXPECT_NEAR(rl::modified_td_error(0.5, 0.9, 37, 37, 3.0, 1.0), 0.5 + 0.9 * 3.0 - 1.0, 1e-12);
  std::vector<double> r{1.0, 2.0}, v{0.5, 4.0};
  std::vector<Tick> t{0, 100};
  auto d = rl::td_errors(r, t, v, 0.99, 800);
  EXPECT_NEAR(d[1], 2.0 - 4.0, 1e-12);  // terminal successor value 0
}

TEST(AsyncGae, LambdaZeroIsTdError) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 100; ++trial) {
    int n = 1 + static_cast<int>(rng() % 30);
    std::vector<double> r(n), v(n);
    std::vector<Tick> t(n);
    Tick now = 0;
    for (int j = 0; j < n; ++j) r[j] = nd(rng), v[j] = nd(rng), t[j] = now, now += static_cast<Tick>(rng() % 2000);
    auto a = rl::async_gae(r, t, v, 0.99, 0.0, 800);
    auto d = rl::td_errors(r, t, v, 0.99, 800);
    for (int j = 0; j < n; ++j) EXPECT_EQ(a[j], d[j]);
  }
}

TEST(AsyncGae, SameTickSuccessorIsNotDiscounted) {
  std::vector<double> r{0.0, 1.0}, v{0.5, 0.25};
  std::vector<Tick> t{40, 40};
  auto d = rl::td_errors(r, t, v, 0.99, 800);
  auto a = rl::async_gae(r, t, v, 0.99, 0.5, 800);
  EXPECT_NEAR(a[0], d[0] + d[1], 1e-12);
  auto zero = rl::async_gae(r, t, v, 0.99, 0.0, 800);
  EXPECT_EQ(zero, d);
}

TEST(AsyncGae, LambdaOneIsMonteCarlo) {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 100; ++trial) {
    int n = 1 + static_cast<int>(rng() % 30);
    std::vector<double> r(n), v(n);
    std::vector<Tick> t(n);
    Tick now = 0;
    for (int j = 0; j < n; ++j) r[j] = nd(rng), v[j] = nd(rng), t[j] = now, now += static_cast<Tick>(rng() % 2000);
    auto a = rl::async_gae(r, t, v, 0.99, 1.0, 800);
    auto mc = rl::mc_advantage(rl::reward_to_go(r, t, 0.99, 800), v);
    for (int j = 0; j < n; ++j) EXPECT_NEAR(a[j], mc[j], 1e-9);
  }
}

TEST(AsyncGae, MatchesExplicitDoubleSum) {
  std::vector<double> r{0.3, -1.0, 0.0, 2.0, 5.0}, v{1.0, 0.5, -0.2, 0.8, 1.5};
  std::vector<Tick> t{0, 130, 131, 900, 2000};
  auto a = rl::async_gae(r, t, v, 0.99, 0.75, 800);
  auto o = gae_oracle(r, {t.begin(), t.end()}, v, 0.99, 0.75, 800);
  for (std::size_t j = 0; j < r.size(); ++j) EXPECT_NEAR(a[j], o[j], 1e-12);
}

TEST(AsyncGae, UnitStepsEqualClassicalTruncatedGae) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> nd;
  const double gamma = 0.97, lambda = 0.8, zeta = 250;
  for (int trial = 0; trial < 100; ++trial) {
    int n = 1 + static_cast<int>(rng() % 40);
    std::vector<double> r(n), v(n);
    std::vector<Tick> t(n);
    for (int j = 0; j < n; ++j) r[j] = nd(rng), v[j] = nd(rng), t[j] = static_cast<Tick>(j * zeta);
    auto a = rl::async_gae(r, t, v, gamma, lambda, zeta);
    // Classical recursion over steps with V_T = 0.
    std::vector<double> c(n);
    double next = 0.0;
    for (int j = n - 1; j >= 0; --j) {
      double d = r[j] + gamma * (j + 1 < n ? v[j + 1] : 0.0) - v[j];
      c[j] = d + gamma * lambda * next;
      next = c[j];
    }
    for (int j = 0; j < n; ++j) EXPECT_NEAR(a[j], c[j], 1e-9);
  }
}

TEST(Estimators, DispatchAndValidation) {
  std::vector<double> r{1.0, 2.0}, v{0.0, 0.0};
  std::vector<Tick> t{0, 800};
  rl::AdvantageConfig cfg;
  cfg.estimator = rl::Estimator::MC;
  auto mc = rl::estimate_advantages(r, t, v, cfg);
  EXPECT_NEAR(mc[0], 1.0 + 0.99 * 2.0, 1e-12);
  cfg.estimator = rl::Estimator::TD0;
  EXPECT_EQ(rl::estimate_advantages(r, t, v, cfg), rl::td_errors(r, t, v, 0.99, 800));
  cfg.zeta = 0;
  EXPECT_THROW(rl::estimate_advantages(r, t, v, cfg), Error);
}

TEST(McAdvantage, Identities) {
  std::vector<double> c{1.0, -2.0, 3.5}, v{1.0, -2.0, 3.5}, zero(3, 0.0);
  for (double a : rl::mc_advantage(c, v)) EXPECT_EQ(a, 0.0);
  EXPECT_EQ(rl::mc_advantage(c, zero), c);
}

TEST(CriticLoss, HandValues) {
  std::vector<double> c{1.0, 2.0, 3.0}, plus{2.0, 3.0, 4.0};
  EXPECT_EQ(rl::critic_loss(c, c), 0.0);
  EXPECT_DOUBLE_EQ(rl::critic_loss(plus, c), 1.0);
  std::vector<double> p{0.0, 1.0}, y{3.0, -1.0};
  EXPECT_DOUBLE_EQ(rl::critic_loss(p, y), (9.0 + 4.0) / 2.0);
}

TEST(TerminalReward, CorrectedFormHandValues) {
  EXPECT_DOUBLE_EQ(rl::terminal_global_reward(6600, 6.6), -2.0);
  EXPECT_NEAR(rl::terminal_global_reward(5600, 6.6), 0.0, 1e-9);
  EXPECT_NEAR(rl::terminal_global_reward(7600, 6.6), -4.0, 1e-9);
  EXPECT_NEAR(rl::terminal_global_reward(4600, 6.6), 2.0 * (16.0 - 1.0), 1e-9);
}

TEST(TerminalReward, CorrectedFormIsNonIncreasingAndContinuous) {
  double prev = rl::terminal_global_reward(100.0, 6.4);
  for (double t = 110.0; t < 12000.0; t += 10.0) {
    double r = rl::terminal_global_reward(t, 6.4);
    EXPECT_LE(r, prev + 1e-12);
    prev = r;
  }
  EXPECT_NEAR(rl::terminal_global_reward(6400.0 - 1e-6, 6.4), rl::terminal_global_reward(6400.0, 6.4), 1e-9);
}

TEST(TerminalReward, LiteralFormAndUnits) {
  EXPECT_NEAR(rl::terminal_global_reward(7600, 6.6, true), 0.0, 1e-9);
  EXPECT_NEAR(rl::terminal_global_reward(5600, 6.6, true), -4.0, 1e-9);
  // A 245 s unit maps 1617 s to t = 6.6.
  EXPECT_NEAR(rl::terminal_global_reward(1617.0, 6.6, false, 245.0), -2.0, 1e-9);
  EXPECT_THROW(rl::terminal_global_reward(1000.0, 6.6, false, 0.0), Error);
}

TEST(LocalReward, UnitConversion) {
  EXPECT_EQ(rl::local_reward(0), 0.0);
  EXPECT_DOUBLE_EQ(rl::local_reward(50), -5.0);
  EXPECT_DOUBLE_EQ(rl::local_reward(120), -12.0);
  EXPECT_THROW(rl::local_reward(-1), Error);
}

TEST(ExplainedVariance, HandValues) {
  std::vector<double> pred{1.0, 2.0, 3.0}, exp{1.0, 2.0, 5.0};
  // Var(0,0,2) = 8/9, Var(1,2,3) = 2/3.
  EXPECT_NEAR(*rl::explained_variance(exp, pred), 1.0 - (8.0 / 9.0) / (2.0 / 3.0), 1e-12);
  EXPECT_DOUBLE_EQ(*rl::explained_variance(pred, pred), 1.0);
  std::vector<double> shifted{4.0, 5.0, 6.0};
  EXPECT_DOUBLE_EQ(*rl::explained_variance(shifted, pred), 1.0);
  // Conventional variant divides by Var(exp) = 26/9.
  EXPECT_NEAR(*rl::explained_variance(exp, pred, true), 1.0 - (8.0 / 9.0) / (26.0 / 9.0), 1e-12);
}

TEST(ExplainedVariance, MissingWhenUndefined) {
  std::vector<double> flat{2.0, 2.0, 2.0}, exp{1.0, 2.0, 3.0}, one{1.0};
  EXPECT_FALSE(rl::explained_variance(exp, flat).has_value());
  EXPECT_FALSE(rl::explained_variance(one, one).has_value());
}
