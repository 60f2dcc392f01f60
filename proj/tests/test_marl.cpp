#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "aope/marl.hpp"

using namespace aope;
using marl::FrameworkConfig;
using marl::FrameworkKind;

namespace {

const orders::OrderSet& desk_lm() {
  static const auto set = orders::generate_orders(orders::profile_desk_lm(), 1);
  return set;
}

constexpr std::array<FrameworkKind, 4> kKinds = {FrameworkKind::ILLR, FrameworkKind::ILGR, FrameworkKind::CDIC,
                                                 FrameworkKind::CDSC};

FrameworkConfig small(FrameworkKind kind, rl::Estimator est = rl::Estimator::GAE) {
  auto c = FrameworkConfig::make(kind, est, 0.95);
  c.hyper.hidden = {32, 32};
  c.hyper.rollouts_per_episode = 2;
  c.hyper.episodes = 1;
  c.hyper.epochs = 2;
  c.reward_config.time_unit_s = 245.0;
  return c;
}

std::vector<marl::Rollout> buffer_for(const marl::AgentBundle& b, const FrameworkConfig& c, int n, std::uint64_t seed) {
  std::vector<marl::Rollout> buf;
  for (int k = 0; k < n; ++k) {
    buf.push_back(marl::collect_rollout(desk_lm(), {}, b, c, marl::rollout_seed(seed, 0, k)));
    marl::attach_estimates(buf.back(), b, c);
  }
  return buf;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("aope_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Framework, WiringPerKind) {
  auto illr = FrameworkConfig::make(FrameworkKind::ILLR);
  EXPECT_EQ(illr.critic_state, marl::CriticState::Local);
  EXPECT_EQ(illr.reward, marl::RewardKind::Local);
  EXPECT_EQ(illr.critic_arch, marl::CriticArch::Individual);
  auto ilgr = FrameworkConfig::make(FrameworkKind::ILGR);
  EXPECT_EQ(ilgr.critic_state, marl::CriticState::Local);
  EXPECT_EQ(ilgr.reward, marl::RewardKind::Global);
  auto cdic = FrameworkConfig::make(FrameworkKind::CDIC);
  EXPECT_EQ(cdic.critic_state, marl::CriticState::Global);
  EXPECT_EQ(cdic.critic_arch, marl::CriticArch::Individual);
  auto cdsc = FrameworkConfig::make(FrameworkKind::CDSC);
  EXPECT_EQ(cdsc.critic_arch, marl::CriticArch::Shared);
  EXPECT_EQ(cdsc.reward, marl::RewardKind::Global);
  for (auto k : kKinds) EXPECT_NO_THROW(FrameworkConfig::make(k).validate());
}

TEST(Framework, ValidationRejectsMismatchedWiring) {
  auto c = FrameworkConfig::make(FrameworkKind::CDSC);
  c.critic_arch = marl::CriticArch::Individual;
  EXPECT_THROW(c.validate(), Error);
  c = FrameworkConfig::make(FrameworkKind::ILLR);
  c.reward = marl::RewardKind::Global;
  EXPECT_THROW(c.validate(), Error);
  c = FrameworkConfig::make(FrameworkKind::CDSC);
  c.hyper.epsilon = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = FrameworkConfig::make(FrameworkKind::CDSC);
  c.advantage.lambda = 1.5;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Framework, DefaultsAndLabels) {
  auto c = FrameworkConfig::make(FrameworkKind::CDSC);
  EXPECT_EQ(c.hyper.epsilon, 0.2);
  EXPECT_EQ(c.hyper.rollouts_per_episode, 64);
  EXPECT_EQ(c.hyper.epochs, 5);
  EXPECT_EQ(c.hyper.episodes, 5000);
  EXPECT_EQ(c.hyper.actor_lr, 1e-3);
  EXPECT_EQ(c.hyper.critic_lr, 3e-4);
  EXPECT_EQ(c.hyper.lr_decay, 0.8);
  EXPECT_EQ(c.hyper.lr_decay_every, 250);
  EXPECT_EQ(c.advantage.gamma, 0.99);
  EXPECT_EQ(c.advantage.zeta, 800);
  EXPECT_EQ(c.hyper.hidden, (std::vector<int>{128, 128}));
  EXPECT_EQ(FrameworkConfig::make(FrameworkKind::CDSC, rl::Estimator::TD0, 0.9).advantage.lambda, 0.0);
  for (auto k : kKinds) EXPECT_EQ(marl::framework_from_name(marl::framework_name(k)), k);
  EXPECT_THROW(marl::framework_from_name("MADDPG"), Error);
}

TEST(Framework, JsonRoundTrip) {
  auto c = FrameworkConfig::make(FrameworkKind::ILLR, rl::Estimator::MC);
  c.hyper.hidden = {17, 9};
  c.reward_config.t_ofs = 6.4;
  c.reward_config.local_discount = marl::LocalDiscount::Zeta;
  auto d = marl::config_from_json(marl::config_to_json(c));
  EXPECT_EQ(marl::config_to_json(d), marl::config_to_json(c));
  EXPECT_EQ(d.hyper.hidden, c.hyper.hidden);
  EXPECT_EQ(d.reward_config.local_discount, marl::LocalDiscount::Zeta);
  EXPECT_EQ(d.advantage.estimator, rl::Estimator::MC);
}

TEST(CriticInput, Dimensions) {
  for (AgentId a : kAllAgents) {
    EXPECT_EQ(marl::actor_input_dim(a), sim::feature_count(a) + 1);
    EXPECT_EQ(marl::critic_input_dim(FrameworkConfig::make(FrameworkKind::ILLR), a), marl::actor_input_dim(a));
    EXPECT_EQ(marl::critic_input_dim(FrameworkConfig::make(FrameworkKind::ILGR), a), marl::actor_input_dim(a));
    EXPECT_EQ(marl::critic_input_dim(FrameworkConfig::make(FrameworkKind::CDIC), a), 182);
    EXPECT_EQ(marl::critic_input_dim(FrameworkConfig::make(FrameworkKind::CDSC), a), 186);
  }
}

TEST(CriticInput, SharedInputAppendsOneHotAgent) {
  std::vector<double> state(182);
  for (int i = 0; i < 182; ++i) state[i] = 0.5 * i;
  for (AgentId a : kAllAgents) {
    auto x = marl::shared_critic_input(state, a);
    ASSERT_EQ(x.size(), 186u);
    EXPECT_TRUE(std::equal(state.begin(), state.end(), x.begin()));
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) sum += x[182 + k];
    EXPECT_EQ(sum, 1.0);
    EXPECT_EQ(x[182 + index(a)], 1.0);
  }
}

TEST(RunningNorm, MergeEqualsSingleBatch) {
  nn::Matrix a(2, 5), b(2, 3);
  a << 1, 2, 3, 4, 5, -1, 0, 1, 0, -1;
  b << 10, 11, 12, 7, 7, 7;
  marl::RunningNorm split(2), whole(2);
  EXPECT_EQ(split.center(0), 0.0);
  EXPECT_EQ(split.scale(0), 1.0);
  split.update(a);
  split.update(b);
  nn::Matrix ab(2, 8);
  ab << a, b;
  whole.update(ab);
  EXPECT_NEAR((split.mean - whole.mean).norm(), 0.0, 1e-12);
  EXPECT_NEAR((split.var - whole.var).norm(), 0.0, 1e-12);
  EXPECT_EQ(split.count, 8.0);
}

TEST(RunningNorm, ApplyStandardizesAndClips) {
  marl::RunningNorm n(1);
  nn::Matrix x(1, 4);
  x << 0, 0, 0, 0;
  n.update(x);
  EXPECT_EQ(n.scale(0), 0.01);
  nn::Matrix y(1, 2);
  y << 0.005, 1.0;
  auto z = n.apply(y);
  EXPECT_NEAR(z(0, 0), 0.5, 1e-12);
  EXPECT_EQ(z(0, 1), 5.0);
}

TEST(Bundle, ActorsDependOnlyOnSeed) {
  auto ref = marl::AgentBundle::create(small(FrameworkKind::ILLR), desk_lm().stats(), 5);
  for (auto k : kKinds) {
    auto b = marl::AgentBundle::create(small(k), desk_lm().stats(), 5);
    for (int i = 0; i < kNumAgents; ++i) EXPECT_TRUE(b.actors[i] == ref.actors[i]);
    EXPECT_EQ(b.critics.size(), k == FrameworkKind::CDSC ? 1u : 4u);
  }
  auto other = marl::AgentBundle::create(small(FrameworkKind::ILLR), desk_lm().stats(), 6);
  EXPECT_FALSE(other.actors[0] == ref.actors[0]);
}

TEST(Rollout, FirstRolloutIdenticalAcrossFrameworks) {
  std::vector<std::vector<int>> actions;
  std::vector<double> makespans;
  for (auto k : kKinds) {
    auto c = small(k);
    auto b = marl::AgentBundle::create(c, desk_lm().stats(), 9);
    auto r = marl::collect_rollout(desk_lm(), {}, b, c, 123);
    std::vector<int> a;
    for (const auto& t : r.transitions) a.push_back(t.action);
    actions.push_back(a);
    makespans.push_back(r.makespan_s);
  }
  for (std::size_t k = 1; k < actions.size(); ++k) {
    EXPECT_EQ(actions[k], actions[0]);
    EXPECT_EQ(makespans[k], makespans[0]);
  }
}

TEST(Rollout, TransitionsAreOrderedAndValid) {
  auto c = small(FrameworkKind::CDSC);
  auto b = marl::AgentBundle::create(c, desk_lm().stats(), 1);
  auto r = marl::collect_rollout(desk_lm(), {}, b, c, 4);
  ASSERT_FALSE(r.transitions.empty());
  std::set<int> agents;
  for (std::size_t k = 0; k < r.transitions.size(); ++k) {
    const auto& t = r.transitions[k];
    ASSERT_TRUE(t.mask[t.action]);
    ASSERT_LE(t.logp_old, 0.0);
    ASSERT_EQ(static_cast<int>(t.obs.size()), marl::actor_input_dim(t.agent));
    ASSERT_EQ(static_cast<int>(t.state.size()), sim::kGlobalStateDim);
    if (k) {
      const auto& p = r.transitions[k - 1];
      ASSERT_TRUE(p.tick < t.tick || (p.tick == t.tick && index(p.agent) < index(t.agent)));
    }
    agents.insert(index(t.agent));
  }
  EXPECT_EQ(agents.size(), 4u);
  EXPECT_EQ(r.makespan_s, ticks_to_seconds(r.end_tick));
}

TEST(Rollout, LocalRewardsUnderIllr) {
  auto c = small(FrameworkKind::ILLR);
  auto b = marl::AgentBundle::create(c, desk_lm().stats(), 1);
  auto r = marl::collect_rollout(desk_lm(), {}, b, c, 4);
  std::array<double, kNumAgents> sum{};
  std::array<Tick, kNumAgents> first;
  first.fill(-1);
  for (const auto& t : r.transitions) {
    EXPECT_DOUBLE_EQ(t.reward, rl::local_reward(t.dt));
    sum[index(t.agent)] += t.reward;
    if (first[index(t.agent)] < 0) first[index(t.agent)] = t.tick;
  }
  // Each agent's local rewards add up to minus its time from first decision to the end.
  for (int i = 0; i < kNumAgents; ++i) EXPECT_NEAR(sum[i], -ticks_to_seconds(r.end_tick - first[i]), 1e-6);
}

TEST(Rollout, SingleTerminalRewardUnderCdsc) {
  auto c = small(FrameworkKind::CDSC);
  auto b = marl::AgentBundle::create(c, desk_lm().stats(), 1);
  auto r = marl::collect_rollout(desk_lm(), {}, b, c, 4);
  const double r_tml = rl::terminal_global_reward(r.makespan_s, 6.6, false, 245.0);
  for (std::size_t k = 0; k + 1 < r.transitions.size(); ++k) EXPECT_EQ(r.transitions[k].reward, 0.0);
  EXPECT_DOUBLE_EQ(r.transitions.back().reward, r_tml);
  EXPECT_EQ(r.transitions.back().dt, r.end_tick - r.transitions.back().tick);
}

TEST(Rollout, PerAgentTerminalRewardWithIndividualCritics) {
  for (auto k : {FrameworkKind::ILGR, FrameworkKind::CDIC}) {
    auto c = small(k);
    auto b = marl::AgentBundle::create(c, desk_lm().stats(), 1);
    auto r = marl::collect_rollout(desk_lm(), {}, b, c, 4);
    const double r_tml = rl::terminal_global_reward(r.makespan_s, 6.6, false, 245.0);
    auto chains = marl::decision_chains(r, c);
    ASSERT_EQ(chains.size(), 4u);
    for (const auto& chain : chains) {
      ASSERT_FALSE(chain.empty());
      for (std::size_t j = 0; j < chain.size(); ++j) {
        const auto& t = r.transitions[chain[j]];
        EXPECT_EQ(t.reward, j + 1 == chain.size() ? r_tml : 0.0);
        if (j + 1 < chain.size()) EXPECT_EQ(t.dt, r.transitions[chain[j + 1]].tick - t.tick);
      }
    }
  }
}

TEST(Rollout, SharedCriticUsesOneMergedChain) {
  auto c = small(FrameworkKind::CDSC);
  auto b = marl::AgentBundle::create(c, desk_lm().stats(), 1);
  auto r = marl::collect_rollout(desk_lm(), {}, b, c, 4);
  auto chains = marl::decision_chains(r, c);
  ASSERT_EQ(chains.size(), 1u);
  EXPECT_EQ(chains[0].size(), r.transitions.size());
  std::set<int> agents;
  for (std::size_t j = 0; j + 1 < chains[0].size() && j < 64; ++j) agents.insert(index(r.transitions[j].agent));
  EXPECT_GE(agents.size(), 2u);
}

TEST(Rollout, GreedyIsDeterministic) {
  auto c = small(FrameworkKind::CDSC);
  auto b = marl::AgentBundle::create(c, desk_lm().stats(), 1);
  auto r1 = marl::collect_rollout(desk_lm(), {}, b, c, 4, true);
  auto r2 = marl::collect_rollout(desk_lm(), {}, b, c, 4, true);
  EXPECT_EQ(r1.makespan_s, r2.makespan_s);
}

TEST(Estimates, ReturnsMatchChainOracles) {
  for (auto k : kKinds) {
    auto c = small(k);
    auto b = marl::AgentBundle::create(c, desk_lm().stats(), 2);
    auto r = marl::collect_rollout(desk_lm(), {}, b, c, 8);
    marl::attach_estimates(r, b, c);
    for (const auto& chain : marl::decision_chains(r, c)) {
      std::vector<double> rewards, values;
      std::vector<Tick> ticks;
      for (std::size_t j = 0; j < chain.size(); ++j) {
        const auto& t = r.transitions[chain[j]];
        rewards.push_back(t.reward);
        values.push_back(t.value);
        ticks.push_back(k == FrameworkKind::ILLR ? static_cast<Tick>(j) : t.tick);
      }
      const double zeta = k == FrameworkKind::ILLR ? 1.0 : 800.0;
      auto ret = rl::reward_to_go(rewards, ticks, 0.99, zeta);
      auto adv = rl::async_gae(rewards, ticks, values, 0.99, 0.95, zeta);
      for (std::size_t j = 0; j < chain.size(); ++j) {
        EXPECT_NEAR(r.transitions[chain[j]].ret, ret[j], 1e-9);
        EXPECT_NEAR(r.transitions[chain[j]].advantage, adv[j], 1e-9);
      }
    }
  }
}

TEST(Update, ZeroAdvantageLeavesActorsUnchanged) {
  auto c = small(FrameworkKind::CDSC);
  auto b = marl::AgentBundle::create(c, desk_lm().stats(), 3);
  auto buf = buffer_for(b, c, 2, 3);
  for (auto& r : buf)
    for (auto& t : r.transitions) t.advantage = 0.0;
  auto before = b.actors;
  auto m = marl::update(b, buf, c, 1);
  EXPECT_FALSE(m.aborted);
  for (int i = 0; i < kNumAgents; ++i) EXPECT_TRUE(b.actors[i] == before[i]);
  EXPECT_FALSE(b.critics[0] == marl::AgentBundle::create(c, desk_lm().stats(), 3).critics[0]);
}

TEST(Update, ReturnRescalingPreservesCriticOutputs) {
  auto c = small(FrameworkKind::CDIC);
  // Steps this small vanish in double precision.
  c.hyper.actor_lr = 1e-300;
  c.hyper.critic_lr = 1e-300;
  auto b = marl::AgentBundle::create(c, desk_lm().stats(), 3);
  auto buf = buffer_for(b, c, 2, 3);
  marl::update(b, buf, c, 1);
  EXPECT_GT(b.return_norm[0].count, 0.0);
  // With the input normalizers reset, only the return rescaling differs from a fresh bundle.
  for (auto& n : b.critic_norm) n = marl::RunningNorm(n.dim());
  auto fresh = marl::AgentBundle::create(c, desk_lm().stats(), 3);
  auto base = buf[0], rescaled = buf[0];
  marl::attach_estimates(base, fresh, c);
  marl::attach_estimates(rescaled, b, c);
  for (std::size_t k = 0; k < base.transitions.size(); ++k)
    EXPECT_NEAR(rescaled.transitions[k].value, base.transitions[k].value, 1e-9);
}

TEST(Update, RatioStaysNearTrustRegion) {
  auto c = small(FrameworkKind::CDSC);
  c.hyper.epochs = 5;
  auto b = marl::AgentBundle::create(c, desk_lm().stats(), 4);
  auto buf = buffer_for(b, c, 2, 4);
  EXPECT_NEAR(marl::mean_ratio(b, buf), 1.0, 1e-12);
  auto m = marl::update(b, buf, c, 2);
  EXPECT_FALSE(m.aborted);
  EXPECT_GT(m.minibatches, 0);
  const double ratio = marl::mean_ratio(b, buf);
  EXPECT_GE(ratio, 1.0 - c.hyper.epsilon - 0.05);
  EXPECT_LE(ratio, 1.0 + c.hyper.epsilon + 0.05);
  for (int i = 0; i < kNumAgents; ++i) ASSERT_TRUE(b.actors[i].all_finite());
  for (auto ev : m.explained_variance) EXPECT_TRUE(ev.has_value());
}

TEST(Update, EmptyBufferIsANoOp) {
  auto c = small(FrameworkKind::ILGR);
  auto b = marl::AgentBundle::create(c, desk_lm().stats(), 4);
  auto before = b;
  marl::update(b, {}, c, 1);
  EXPECT_TRUE(b == before);
}

TEST(Metrics, CsvRoundTrip) {
  marl::EpisodeMetrics a;
  a.episode = 3;
  a.seed = 17;
  a.mean_makespan = 1234.5;
  a.std_makespan = 12.25;
  a.update.explained_variance = {0.5, std::nullopt, -0.25, 0.875};
  a.update.actor_loss = 0.125;
  a.update.aborted = true;
  std::stringstream ss;
  marl::write_metrics_header(ss);
  marl::write_metrics_row(ss, a);
  auto rows = marl::read_metrics(ss);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].episode, 3);
  EXPECT_EQ(rows[0].seed, 17u);
  EXPECT_DOUBLE_EQ(rows[0].mean_makespan, 1234.5);
  EXPECT_FALSE(rows[0].update.explained_variance[1].has_value());
  EXPECT_DOUBLE_EQ(*rows[0].update.explained_variance[2], -0.25);
  EXPECT_TRUE(rows[0].update.aborted);
}

TEST(Training, SmokeRunWritesArtifactsAndCheckpointRoundTrips) {
  auto c = small(FrameworkKind::CDSC);
  auto dir = temp_dir("smoke");
  marl::TrainOptions opt;
  opt.seed = 7;
  opt.out_dir = dir;
  auto res = marl::train(c, desk_lm(), {}, opt);
  ASSERT_EQ(res.metrics.size(), 1u);
  EXPECT_GT(res.metrics[0].mean_makespan, 0.0);
  EXPECT_EQ(res.bundle.episodes_completed, 1);
  EXPECT_TRUE(std::filesystem::exists(dir / "metrics.csv"));
  ASSERT_TRUE(std::filesystem::exists(dir / "final.bin"));
  auto ck = marl::load_checkpoint(dir / "final.bin");
  EXPECT_TRUE(ck.bundle == res.bundle);
  EXPECT_EQ(marl::config_to_json(ck.config), marl::config_to_json(c));
  std::filesystem::remove_all(dir);
}

TEST(Training, ReproducibleAndIndependentOfWorkerCount) {
  auto c = small(FrameworkKind::ILGR);
  c.hyper.episodes = 2;
  marl::TrainOptions opt;
  opt.seed = 3;
  auto a = marl::train(c, desk_lm(), {}, opt);
  opt.workers = 2;
  auto b = marl::train(c, desk_lm(), {}, opt);
  EXPECT_TRUE(a.bundle == b.bundle);
  ASSERT_EQ(a.metrics.size(), 2u);
  EXPECT_EQ(a.metrics[1].mean_makespan, b.metrics[1].mean_makespan);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  auto dir = temp_dir("ckpt");
  {
    std::ofstream out(dir / "bad.bin", std::ios::binary);
    out << "not a checkpoint";
  }
  EXPECT_THROW(marl::load_checkpoint(dir / "bad.bin"), Error);
  EXPECT_THROW(marl::load_checkpoint(dir / "missing.bin"), Error);
  std::filesystem::remove_all(dir);
}

TEST(Policy, ControllerReproducesCollectedRollout) {
  auto c = small(FrameworkKind::CDSC);
  auto b = marl::AgentBundle::create(c, desk_lm().stats(), 11);
  auto r = marl::collect_rollout(desk_lm(), {}, b, c, 21);
  marl::PolicyController ctl(marl::PolicySet::from(b), derive_seed(21, hash_name("policy")), false);
  auto s = sim::reset(desk_lm(), 21);
  EXPECT_EQ(rules::run_episode(s, ctl), r.makespan_s);
}

TEST(Policy, CheckRejectsMismatchedOrderSet) {
  auto c = small(FrameworkKind::CDSC);
  auto b = marl::AgentBundle::create(c, desk_lm().stats(), 11);
  auto set = marl::PolicySet::from(b);
  EXPECT_NO_THROW(set.check(desk_lm().stats()));
  auto hm = orders::generate_orders(orders::profile_desk_hm(), 1);
  EXPECT_THROW(set.check(hm.stats()), Error);
}
