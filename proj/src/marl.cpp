#include "aope/marl.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

namespace aope::marl {

using nn::Matrix;
using nn::Vector;
using json = nlohmann::json;

// ---------------------------------------------------------------------------------------------
// Names and configuration

std::string framework_name(FrameworkKind kind) {
  switch (kind) {
    case FrameworkKind::ILLR: return "ILLR";
    case FrameworkKind::ILGR: return "ILGR";
    case FrameworkKind::CDIC: return "CDIC";
    case FrameworkKind::CDSC: return "CDSC";
  }
  return "?";
}

FrameworkKind framework_from_name(const std::string& name) {
  for (auto k : {FrameworkKind::ILLR, FrameworkKind::ILGR, FrameworkKind::CDIC, FrameworkKind::CDSC})
    if (framework_name(k) == name) return k;
  throw Error("unknown framework: " + name);
}

std::string estimator_name(rl::Estimator e) {
  switch (e) {
    case rl::Estimator::MC: return "MC";
    case rl::Estimator::TD0: return "TD0";
    case rl::Estimator::GAE: return "GAE";
  }
  return "?";
}

rl::Estimator estimator_from_name(const std::string& name) {
  for (auto e : {rl::Estimator::MC, rl::Estimator::TD0, rl::Estimator::GAE})
    if (estimator_name(e) == name) return e;
  throw Error("unknown advantage estimator: " + name);
}

namespace {

struct Wiring {
  CriticState state;
  RewardKind reward;
  CriticArch arch;
};

Wiring wiring_of(FrameworkKind kind) {
  switch (kind) {
    case FrameworkKind::ILLR: return {CriticState::Local, RewardKind::Local, CriticArch::Individual};
    case FrameworkKind::ILGR: return {CriticState::Local, RewardKind::Global, CriticArch::Individual};
    case FrameworkKind::CDIC: return {CriticState::Global, RewardKind::Global, CriticArch::Individual};
    case FrameworkKind::CDSC: return {CriticState::Global, RewardKind::Global, CriticArch::Shared};
  }
  throw Error("bad framework kind");
}

}  // namespace

FrameworkConfig FrameworkConfig::make(FrameworkKind kind, rl::Estimator estimator, double lambda) {
  FrameworkConfig c;
  c.kind = kind;
  Wiring w = wiring_of(kind);
  c.critic_state = w.state;
  c.reward = w.reward;
  c.critic_arch = w.arch;
  c.advantage.estimator = estimator;
  c.advantage.lambda = estimator == rl::Estimator::TD0 ? 0.0 : lambda;
  return c;
}

void FrameworkConfig::validate() const {
  Wiring w = wiring_of(kind);
  if (w.state != critic_state || w.reward != reward || w.arch != critic_arch)
    throw Error(framework_name(kind) + ": critic state, reward and critic layout do not match the framework");
  if (advantage.estimator == rl::Estimator::GAE && critic_arch == CriticArch::Individual && !per_agent_chains)
    throw Error("GAE with individual critics needs per-agent decision chains");
  advantage.validate();
  const auto& h = hyper;
  if (!(h.epsilon > 0.0 && h.epsilon < 1.0)) throw Error("epsilon must be in (0, 1)");
  if (h.rollouts_per_episode < 1 || h.epochs < 1 || h.episodes < 0 || h.minibatch < 1)
    throw Error("rollout, epoch, episode and minibatch counts must be positive");
  if (!(h.actor_lr > 0.0) || !(h.critic_lr > 0.0)) throw Error("learning rates must be positive");
  if (!(h.lr_decay > 0.0 && h.lr_decay <= 1.0) || h.lr_decay_every < 1) throw Error("bad learning-rate decay");
  if (h.hidden.empty() || std::any_of(h.hidden.begin(), h.hidden.end(), [](int n) { return n < 1; }))
    throw Error("hidden layer sizes must be positive");
  if (h.entropy_coef < 0.0) throw Error("entropy coefficient must be non-negative");
  if (!(reward_config.time_unit_s > 0.0)) throw Error("reward time unit must be positive");
}

std::string FrameworkConfig::label() const {
  std::string s = framework_name(kind) + "-" + estimator_name(advantage.estimator);
  if (advantage.estimator == rl::Estimator::GAE) {
    std::ostringstream os;
    os << advantage.lambda;
    s += "-l" + os.str();
  }
  return s;
}

std::string config_to_json(const FrameworkConfig& c) {
  json j;
  j["kind"] = framework_name(c.kind);
  j["critic_state"] = c.critic_state == CriticState::Local ? "local" : "global";
  j["reward"] = c.reward == RewardKind::Local ? "local" : "global";
  j["critic_arch"] = c.critic_arch == CriticArch::Individual ? "individual" : "shared";
  j["per_agent_chains"] = c.per_agent_chains;
  j["advantage"] = {{"estimator", estimator_name(c.advantage.estimator)},
                    {"gamma", c.advantage.gamma},
                    {"lambda", c.advantage.lambda},
                    {"zeta", c.advantage.zeta}};
  const auto& h = c.hyper;
  j["hyper"] = {{"epsilon", h.epsilon},
                {"rollouts_per_episode", h.rollouts_per_episode},
                {"epochs", h.epochs},
                {"episodes", h.episodes},
                {"minibatch", h.minibatch},
                {"actor_lr", h.actor_lr},
                {"critic_lr", h.critic_lr},
                {"lr_decay", h.lr_decay},
                {"lr_decay_every", h.lr_decay_every},
                {"hidden", h.hidden},
                {"entropy_coef", h.entropy_coef},
                {"max_grad_norm", h.max_grad_norm},
                {"normalize_advantages", h.normalize_advantages}};
  const auto& r = c.reward_config;
  j["reward_config"] = {{"t_ofs", r.t_ofs},
                        {"time_unit_s", r.time_unit_s},
                        {"swap_branch", r.swap_branch},
                        {"local_discount", r.local_discount == LocalDiscount::PerDecision ? "per_decision" : "zeta"}};
  return j.dump(2);
}

FrameworkConfig config_from_json(const std::string& text) {
  try {
    json j = json::parse(text);
    FrameworkConfig c;
    c.kind = framework_from_name(j.at("kind").get<std::string>());
    c.critic_state = j.at("critic_state").get<std::string>() == "local" ? CriticState::Local : CriticState::Global;
    c.reward = j.at("reward").get<std::string>() == "local" ? RewardKind::Local : RewardKind::Global;
    c.critic_arch = j.at("critic_arch").get<std::string>() == "individual" ? CriticArch::Individual : CriticArch::Shared;
    c.per_agent_chains = j.at("per_agent_chains").get<bool>();
    const auto& a = j.at("advantage");
    c.advantage.estimator = estimator_from_name(a.at("estimator").get<std::string>());
    c.advantage.gamma = a.at("gamma").get<double>();
    c.advantage.lambda = a.at("lambda").get<double>();
    c.advantage.zeta = a.at("zeta").get<double>();
    const auto& h = j.at("hyper");
    c.hyper.epsilon = h.at("epsilon").get<double>();
    c.hyper.rollouts_per_episode = h.at("rollouts_per_episode").get<int>();
    c.hyper.epochs = h.at("epochs").get<int>();
    c.hyper.episodes = h.at("episodes").get<int>();
    c.hyper.minibatch = h.at("minibatch").get<int>();
    c.hyper.actor_lr = h.at("actor_lr").get<double>();
    c.hyper.critic_lr = h.at("critic_lr").get<double>();
    c.hyper.lr_decay = h.at("lr_decay").get<double>();
    c.hyper.lr_decay_every = h.at("lr_decay_every").get<int>();
    c.hyper.hidden = h.at("hidden").get<std::vector<int>>();
    c.hyper.entropy_coef = h.at("entropy_coef").get<double>();
    c.hyper.max_grad_norm = h.at("max_grad_norm").get<double>();
    c.hyper.normalize_advantages = h.at("normalize_advantages").get<bool>();
    const auto& r = j.at("reward_config");
    c.reward_config.t_ofs = r.at("t_ofs").get<double>();
    c.reward_config.time_unit_s = r.at("time_unit_s").get<double>();
    c.reward_config.swap_branch = r.at("swap_branch").get<bool>();
    c.reward_config.local_discount =
        r.at("local_discount").get<std::string>() == "zeta" ? LocalDiscount::Zeta : LocalDiscount::PerDecision;
    return c;
  } catch (const json::exception& e) {
    throw Error(std::string("framework config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------------------------
// Normalizers

void RunningNorm::update(const Matrix& batch) {
  if (batch.rows() != mean.size()) throw Error("normalizer dimension mismatch");
  const double n = static_cast<double>(batch.cols());
  if (n == 0.0) return;
  Vector bm = batch.rowwise().mean();
  Vector bv = (batch.colwise() - bm).array().square().rowwise().mean();
  if (count == 0.0) {
    mean = bm;
    var = bv;
    count = n;
    return;
  }
  const double total = count + n;
  Vector delta = bm - mean;
  mean += delta * (n / total);
  var = (var * count + bv * n + delta.array().square().matrix() * (count * n / total)) / total;
  count = total;
}

double RunningNorm::scale(int i) const {
  if (count == 0.0) return 1.0;
  return std::max(std::sqrt(var[i]), 0.01);
}

Matrix RunningNorm::apply(const Matrix& x) const {
  if (x.rows() != mean.size()) throw Error("normalizer dimension mismatch");
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double c = center(static_cast<int>(i)), s = scale(static_cast<int>(i));
    for (Eigen::Index k = 0; k < x.cols(); ++k) y(i, k) = std::clamp((x(i, k) - c) / s, -5.0, 5.0);
  }
  return y;
}

// ---------------------------------------------------------------------------------------------
// Bundle

int actor_input_dim(AgentId agent) { return sim::feature_count(agent) + 1; }

int critic_input_dim(const FrameworkConfig& config, AgentId agent) {
  if (config.critic_state == CriticState::Local) return actor_input_dim(agent);
  if (config.critic_arch == CriticArch::Shared) return sim::kGlobalStateDim + kNumAgents;
  return sim::kGlobalStateDim;
}

std::vector<double> shared_critic_input(const std::vector<double>& state, AgentId agent) {
  std::vector<double> v(state);
  v.resize(state.size() + kNumAgents, 0.0);
  v[state.size() + index(agent)] = 1.0;
  return v;
}

std::vector<double> critic_input(const FrameworkConfig& config, const std::vector<double>& obs,
                                 const std::vector<double>& state, AgentId agent) {
  if (config.critic_state == CriticState::Local) return obs;
  if (config.critic_arch == CriticArch::Shared) return shared_critic_input(state, agent);
  return state;
}

AgentBundle AgentBundle::create(const FrameworkConfig& config, const orders::OrderStats& stats, std::uint64_t seed) {
  config.validate();
  AgentBundle b;
  b.kind = config.kind;
  b.stats = stats;
  const auto& h = config.hyper;
  nn::AdamConfig actor_cfg{h.actor_lr, 0.9, 0.999, 1e-8, h.lr_decay, h.lr_decay_every};
  nn::AdamConfig critic_cfg{h.critic_lr, 0.9, 0.999, 1e-8, h.lr_decay, h.lr_decay_every};
  for (AgentId a : kAllAgents) {
    std::vector<int> sizes{actor_input_dim(a)};
    sizes.insert(sizes.end(), h.hidden.begin(), h.hidden.end());
    sizes.push_back(sim::action_space(stats, a).size);
    nn::Mlp actor(sizes);
    nn::orthogonal_init(actor, nn::default_gains(actor, 0.01), derive_seed(seed, hash_name("actor") + index(a)));
    b.actors[index(a)] = std::move(actor);
    b.actor_opt[index(a)] = nn::AdamState(b.actors[index(a)], actor_cfg);
    b.obs_norm[index(a)] = RunningNorm(actor_input_dim(a));
  }
  const int n_critics = config.critic_arch == CriticArch::Shared ? 1 : kNumAgents;
  for (int c = 0; c < n_critics; ++c) {
    AgentId a = kAllAgents[c];
    std::vector<int> sizes{critic_input_dim(config, a)};
    sizes.insert(sizes.end(), h.hidden.begin(), h.hidden.end());
    sizes.push_back(1);
    nn::Mlp critic(sizes);
    nn::orthogonal_init(critic, nn::default_gains(critic, 1.0), derive_seed(seed, hash_name("critic") + c));
    b.critic_opt.emplace_back(critic, critic_cfg);
    b.critics.push_back(std::move(critic));
    b.critic_norm.emplace_back(sizes.front());
    b.return_norm.emplace_back(1);
  }
  return b;
}

void AgentBundle::set_completed_episodes(int n) {
  episodes_completed = n;
  for (auto& o : actor_opt) o.set_completed_episodes(n);
  for (auto& o : critic_opt) o.set_completed_episodes(n);
}

// ---------------------------------------------------------------------------------------------
// Acting

namespace {

Matrix to_column(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

struct Sampled {
  int action;
  double logp;
};

Sampled act(const nn::Mlp& actor, const RunningNorm& norm, const std::vector<double>& input,
            const sim::ActionMask& mask, std::mt19937_64& rng, bool greedy) {
  Vector logits = nn::forward(actor, norm.apply(to_column(input))).col(0);
  Vector p = rl::masked_policy(logits, mask);
  int action = -1;
  if (greedy) {
    double best = -1.0;
    for (Eigen::Index k = 0; k < p.size(); ++k)
      if (mask[k] && p[k] > best) best = p[k], action = static_cast<int>(k);
  } else {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    double acc = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      if (!mask[k]) continue;
      action = static_cast<int>(k);
      acc += p[k];
      if (u < acc) break;
    }
  }
  return {action, rl::masked_log_prob(logits, mask, action)};
}

std::filesystem::path dump_trace(const Rollout& r) {
  std::error_code ec;
  auto path = std::filesystem::temp_directory_path(ec) / ("aope_deadlock_" + std::to_string(r.seed) + ".csv");
  if (ec) return {};
  std::ofstream out(path);
  if (!out) return {};
  out << "tick,agent,action\n";
  for (const auto& t : r.transitions) out << t.tick << ',' << agent_name(t.agent) << ',' << t.action << '\n';
  return path;
}

}  // namespace

Rollout collect_rollout(const orders::OrderSet& orders, const sim::EnvParams& params, const AgentBundle& bundle,
                        const FrameworkConfig& config, std::uint64_t seed, bool greedy) {
  Rollout r;
  r.seed = seed;
  sim::SimState state = sim::reset(orders, seed, params);
  std::mt19937_64 rng(derive_seed(seed, hash_name("policy")));
  const bool need_state = config.critic_state == CriticState::Global;
  auto requests = sim::outstanding_requests(state);
  while (!state.done) {
    sim::Decisions d;
    std::vector<double> gs;
    if (need_state && !requests.empty()) gs = sim::global_state(state);
    for (const auto& req : requests) {
      const int i = index(req.agent);
      Transition t;
      t.agent = req.agent;
      t.tick = state.tick;
      t.obs = sim::observe(state, req.agent).input();
      t.state = gs;
      t.mask = req.valid_actions;
      Sampled s = act(bundle.actors[i], bundle.obs_norm[i], t.obs, t.mask, rng, greedy);
      t.action = s.action;
      t.logp_old = s.logp;
      d[i] = s.action;
      r.transitions.push_back(std::move(t));
    }
    try {
      requests = sim::step(state, d).requests;
    } catch (const sim::InvalidDecision&) {
      throw;
    } catch (const Error& e) {
      auto path = dump_trace(r);
      throw DeadlockError(std::string("episode did not finish: ") + e.what() +
                              (path.empty() ? "" : " (trace: " + path.string() + ")"),
                          path);
    }
  }
  r.end_tick = state.tick;
  r.makespan_s = ticks_to_seconds(state.tick);

  // Time to the next decision of the same chain; rewards arrive with that successor.
  auto chains = decision_chains(r, config);
  for (const auto& chain : chains) {
    for (std::size_t j = 0; j < chain.size(); ++j) {
      Tick next = j + 1 < chain.size() ? r.transitions[chain[j + 1]].tick : r.end_tick;
      r.transitions[chain[j]].dt = next - r.transitions[chain[j]].tick;
    }
  }
  if (config.reward == RewardKind::Local) {
    for (auto& t : r.transitions) t.reward = rl::local_reward(t.dt);
  } else {
    const auto& rc = config.reward_config;
    const double r_tml = rl::terminal_global_reward(r.makespan_s, rc.t_ofs, rc.swap_branch, rc.time_unit_s);
    for (const auto& chain : chains)
      if (!chain.empty()) r.transitions[chain.back()].reward = r_tml;
  }
  return r;
}

std::vector<std::vector<std::size_t>> decision_chains(const Rollout& rollout, const FrameworkConfig& config) {
  const auto& ts = rollout.transitions;
  if (config.critic_arch == CriticArch::Shared || !config.per_agent_chains) {
    std::vector<std::size_t> all(ts.size());
    std::iota(all.begin(), all.end(), 0);
    return {all};
  }
  std::vector<std::vector<std::size_t>> chains(kNumAgents);
  for (std::size_t k = 0; k < ts.size(); ++k) chains[index(ts[k].agent)].push_back(k);
  return chains;
}

namespace {

/// Critic inputs of the given transitions, one column each, normalized by the critic's norm.
Matrix critic_batch(const AgentBundle& b, const FrameworkConfig& config, const std::vector<const Transition*>& ts,
                    int critic) {
  const int dim = b.critics[critic].input_dim();
  Matrix x(dim, static_cast<Eigen::Index>(ts.size()));
  for (std::size_t k = 0; k < ts.size(); ++k) {
    auto v = critic_input(config, ts[k]->obs, ts[k]->state, ts[k]->agent);
    if (static_cast<int>(v.size()) != dim) throw Error("critic input dimension mismatch");
    x.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Vector>(v.data(), dim);
  }
  return x;
}

}  // namespace

void attach_estimates(Rollout& rollout, const AgentBundle& bundle, const FrameworkConfig& config) {
  auto& ts = rollout.transitions;
  // Values, one critic at a time.
  for (std::size_t c = 0; c < bundle.critics.size(); ++c) {
    std::vector<const Transition*> mine;
    std::vector<std::size_t> where;
    for (std::size_t k = 0; k < ts.size(); ++k) {
      if (bundle.critic_index(ts[k].agent) != static_cast<int>(c)) continue;
      mine.push_back(&ts[k]);
      where.push_back(k);
    }
    if (mine.empty()) continue;
    Matrix x = bundle.critic_norm[c].apply(critic_batch(bundle, config, mine, static_cast<int>(c)));
    Matrix v = nn::forward(bundle.critics[c], x);
    const double mu = bundle.return_norm[c].center(0), sigma = bundle.return_norm[c].scale(0);
    for (std::size_t k = 0; k < where.size(); ++k) ts[where[k]].value = v(0, static_cast<Eigen::Index>(k)) * sigma + mu;
  }
  // Returns and advantages along each chain.
  const bool per_decision =
      config.reward == RewardKind::Local && config.reward_config.local_discount == LocalDiscount::PerDecision;
  rl::AdvantageConfig adv = config.advantage;
  if (per_decision) adv.zeta = 1.0;
  for (const auto& chain : decision_chains(rollout, config)) {
    if (chain.empty()) continue;
    std::vector<double> rewards, values;
    std::vector<Tick> ticks;
    for (std::size_t j = 0; j < chain.size(); ++j) {
      const auto& t = ts[chain[j]];
      rewards.push_back(t.reward);
      values.push_back(t.value);
      ticks.push_back(per_decision ? static_cast<Tick>(j) : t.tick);
    }
    auto ret = rl::reward_to_go(rewards, ticks, adv.gamma, adv.zeta);
    auto a = rl::estimate_advantages(rewards, ticks, values, adv);
    for (std::size_t j = 0; j < chain.size(); ++j) {
      ts[chain[j]].ret = ret[j];
      ts[chain[j]].advantage = a[j];
    }
  }
}

// ---------------------------------------------------------------------------------------------
// Update

namespace {

/// Refits the return normalizer and rescales the value head so denormalized outputs are unchanged.
void refit_returns(nn::Mlp& critic, RunningNorm& norm, const Matrix& returns) {
  const double mu0 = norm.center(0), s0 = norm.scale(0);
  norm.update(returns);
  const double mu1 = norm.center(0), s1 = norm.scale(0);
  auto& head = critic.layers().back();
  head.weight *= s0 / s1;
  head.bias = (head.bias.array() * s0 + mu0 - mu1) / s1;
}

double clip_if(nn::Gradients& g, double max_norm) { return max_norm > 0.0 ? nn::clip_grad_norm(g, max_norm) : 0.0; }

}  // namespace

UpdateMetrics update(AgentBundle& bundle, const std::vector<Rollout>& buffer, const FrameworkConfig& config,
                     std::uint64_t seed) {
  UpdateMetrics m;
  const AgentBundle snapshot = bundle;
  const auto& h = config.hyper;

  std::vector<const Transition*> all;
  for (const auto& r : buffer)
    for (const auto& t : r.transitions) all.push_back(&t);
  if (all.empty()) return m;
  const std::size_t n = all.size();

  // Diagnostics of the critic that produced the estimates.
  for (AgentId a : kAllAgents) {
    std::vector<double> exp, pred;
    for (const auto* t : all)
      if (t->agent == a) exp.push_back(t->ret), pred.push_back(t->value);
    m.explained_variance[index(a)] = rl::explained_variance(exp, pred);
  }

  // Per-agent advantage standardization.
  std::vector<double> adv(n);
  for (std::size_t k = 0; k < n; ++k) adv[k] = all[k]->advantage;
  if (h.normalize_advantages) {
    for (AgentId a : kAllAgents) {
      double sum = 0.0, sq = 0.0, cnt = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        if (all[k]->agent == a) sum += adv[k], sq += adv[k] * adv[k], cnt += 1.0;
      if (cnt < 2.0) continue;
      const double mean = sum / cnt, sd = std::sqrt(std::max(0.0, sq / cnt - mean * mean));
      for (std::size_t k = 0; k < n; ++k)
        if (all[k]->agent == a) adv[k] = (adv[k] - mean) / (sd + 1e-8);
    }
  }

  // Critic-side normalizers follow the fresh data; actor inputs keep the collection-time norm.
  const int n_critics = static_cast<int>(bundle.critics.size());
  std::vector<std::vector<std::size_t>> by_critic(n_critics);
  for (std::size_t k = 0; k < n; ++k) by_critic[bundle.critic_index(all[k]->agent)].push_back(k);
  std::vector<Matrix> critic_x(n_critics);
  std::vector<std::vector<Eigen::Index>> critic_col(n_critics, std::vector<Eigen::Index>(n, -1));
  std::vector<double> target(n);
  for (int c = 0; c < n_critics; ++c) {
    if (by_critic[c].empty()) continue;
    std::vector<const Transition*> ts;
    Matrix rets(1, static_cast<Eigen::Index>(by_critic[c].size()));
    for (std::size_t j = 0; j < by_critic[c].size(); ++j) {
      ts.push_back(all[by_critic[c][j]]);
      rets(0, static_cast<Eigen::Index>(j)) = all[by_critic[c][j]]->ret;
      critic_col[c][by_critic[c][j]] = static_cast<Eigen::Index>(j);
    }
    Matrix raw = critic_batch(bundle, config, ts, c);
    bundle.critic_norm[c].update(raw);
    critic_x[c] = bundle.critic_norm[c].apply(raw);
    refit_returns(bundle.critics[c], bundle.return_norm[c], rets);
    const double mu = bundle.return_norm[c].center(0), s = bundle.return_norm[c].scale(0);
    for (std::size_t j = 0; j < by_critic[c].size(); ++j) target[by_critic[c][j]] = (all[by_critic[c][j]]->ret - mu) / s;
  }

  std::array<Matrix, kNumAgents> actor_x;
  std::vector<Eigen::Index> actor_col(n, -1);
  for (AgentId a : kAllAgents) {
    std::vector<std::size_t> ks;
    for (std::size_t k = 0; k < n; ++k)
      if (all[k]->agent == a) ks.push_back(k);
    Matrix raw(actor_input_dim(a), static_cast<Eigen::Index>(ks.size()));
    for (std::size_t j = 0; j < ks.size(); ++j) {
      const auto& o = all[ks[j]]->obs;
      raw.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Vector>(o.data(), static_cast<Eigen::Index>(o.size()));
      actor_col[ks[j]] = static_cast<Eigen::Index>(j);
    }
    actor_x[index(a)] = bundle.obs_norm[index(a)].apply(raw);
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double actor_loss_sum = 0.0, critic_loss_sum = 0.0, entropy_sum = 0.0, kl_sum = 0.0, ratio_sum = 0.0;
  double actor_samples = 0.0, clipped = 0.0;
  int actor_steps = 0, critic_steps = 0;

  for (int epoch = 0; epoch < h.epochs && !m.aborted; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n && !m.aborted; start += static_cast<std::size_t>(h.minibatch)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(h.minibatch));
      ++m.minibatches;

      for (AgentId a : kAllAgents) {
        const int i = index(a);
        std::vector<std::size_t> ks;
        for (std::size_t q = start; q < end; ++q)
          if (all[order[q]]->agent == a) ks.push_back(order[q]);
        if (ks.empty()) continue;
        const auto cnt = static_cast<Eigen::Index>(ks.size());
        Matrix x(actor_x[i].rows(), cnt);
        for (Eigen::Index j = 0; j < cnt; ++j) x.col(j) = actor_x[i].col(actor_col[ks[j]]);
        nn::Cache cache;
        Matrix logits = nn::forward(bundle.actors[i], x, &cache);
        Matrix dy = Matrix::Zero(logits.rows(), cnt);
        double loss = 0.0;
        for (Eigen::Index j = 0; j < cnt; ++j) {
          const Transition& t = *all[ks[j]];
          const double A = adv[ks[j]];
          Vector z = logits.col(j);
          Vector p = rl::masked_policy(z, t.mask);
          const double logp = rl::masked_log_prob(z, t.mask, t.action);
          const double ratio = std::exp(logp - t.logp_old);
          const double obj = std::min(ratio * A, std::clamp(ratio, 1.0 - h.epsilon, 1.0 + h.epsilon) * A);
          Vector g = -p;
          g[t.action] += 1.0;
          g *= rl::ppo_clip_ratio_grad(ratio, A, h.epsilon) * ratio;
          Vector eg;
          const double ent = rl::masked_entropy(z, t.mask, h.entropy_coef > 0.0 ? &eg : nullptr);
          if (h.entropy_coef > 0.0) g += h.entropy_coef * eg;
          dy.col(j) = -g / static_cast<double>(cnt);
          loss -= (obj + h.entropy_coef * ent) / static_cast<double>(cnt);
          entropy_sum += ent;
          kl_sum += (ratio - 1.0) - (logp - t.logp_old);
          ratio_sum += ratio;
          if (std::abs(ratio - 1.0) > h.epsilon) clipped += 1.0;
          actor_samples += 1.0;
        }
        if (!std::isfinite(loss)) {
          m.aborted = true;
          break;
        }
        actor_loss_sum += loss;
        ++actor_steps;
        nn::Gradients grads = nn::backward(bundle.actors[i], cache, dy);
        clip_if(grads, h.max_grad_norm);
        if (!nn::adam_step(bundle.actors[i], grads, bundle.actor_opt[i])) ++m.skipped_steps;
      }

      for (int c = 0; c < n_critics && !m.aborted; ++c) {
        std::vector<std::size_t> ks;
        for (std::size_t q = start; q < end; ++q)
          if (bundle.critic_index(all[order[q]]->agent) == c) ks.push_back(order[q]);
        if (ks.empty()) continue;
        const auto cnt = static_cast<Eigen::Index>(ks.size());
        Matrix x(critic_x[c].rows(), cnt);
        for (Eigen::Index j = 0; j < cnt; ++j) x.col(j) = critic_x[c].col(critic_col[c][ks[j]]);
        nn::Cache cache;
        Matrix v = nn::forward(bundle.critics[c], x, &cache);
        Matrix dy(1, cnt);
        std::vector<double> pred(static_cast<std::size_t>(cnt)), tgt(static_cast<std::size_t>(cnt));
        for (Eigen::Index j = 0; j < cnt; ++j) {
          pred[j] = v(0, j);
          tgt[j] = target[ks[j]];
          dy(0, j) = 2.0 * (v(0, j) - tgt[j]) / static_cast<double>(cnt);
        }
        const double loss = rl::critic_loss(pred, tgt);
        if (!std::isfinite(loss)) {
          m.aborted = true;
          break;
        }
        critic_loss_sum += loss;
        ++critic_steps;
        nn::Gradients grads = nn::backward(bundle.critics[c], cache, dy);
        clip_if(grads, h.max_grad_norm);
        if (!nn::adam_step(bundle.critics[c], grads, bundle.critic_opt[c])) ++m.skipped_steps;
      }
    }
  }

  if (m.aborted) {
    auto ev = m.explained_variance;
    bundle = snapshot;
    m = UpdateMetrics{};
    m.aborted = true;
    m.explained_variance = ev;
    return m;
  }
  m.actor_loss = actor_steps ? actor_loss_sum / actor_steps : 0.0;
  m.critic_loss = critic_steps ? critic_loss_sum / critic_steps : 0.0;
  if (actor_samples > 0.0) {
    m.entropy = entropy_sum / actor_samples;
    m.approx_kl = kl_sum / actor_samples;
    m.clip_fraction = clipped / actor_samples;
  }
  m.mean_ratio = mean_ratio(bundle, buffer);
  return m;
}

void update_observation_normalizers(AgentBundle& bundle, const std::vector<Rollout>& buffer) {
  for (AgentId a : kAllAgents) {
    std::vector<const std::vector<double>*> obs;
    for (const auto& r : buffer)
      for (const auto& t : r.transitions)
        if (t.agent == a) obs.push_back(&t.obs);
    if (obs.empty()) continue;
    Matrix x(actor_input_dim(a), static_cast<Eigen::Index>(obs.size()));
    for (std::size_t k = 0; k < obs.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = to_column(*obs[k]);
    bundle.obs_norm[index(a)].update(x);
  }
}

double mean_ratio(const AgentBundle& bundle, const std::vector<Rollout>& buffer) {
  double sum = 0.0, cnt = 0.0;
  for (const auto& r : buffer) {
    for (const auto& t : r.transitions) {
      const int i = index(t.agent);
      Vector z = nn::forward(bundle.actors[i], bundle.obs_norm[i].apply(to_column(t.obs))).col(0);
      sum += std::exp(rl::masked_log_prob(z, t.mask, t.action) - t.logp_old);
      cnt += 1.0;
    }
  }
  return cnt > 0.0 ? sum / cnt : 1.0;
}

// ---------------------------------------------------------------------------------------------
// Metrics log

void write_metrics_header(std::ostream& out) {
  out << "episode,seed,mean_makespan,std_makespan,ev_FR,ev_PC,ev_PR1,ev_PR2,actor_loss,critic_loss,entropy,"
         "clip_fraction,approx_kl,aborted\n";
}

void write_metrics_row(std::ostream& out, const EpisodeMetrics& m) {
  out << m.episode << ',' << m.seed << ',' << m.mean_makespan << ',' << m.std_makespan;
  for (const auto& ev : m.update.explained_variance) {
    out << ',';
    if (ev) out << *ev;
  }
  const auto& u = m.update;
  out << ',' << u.actor_loss << ',' << u.critic_loss << ',' << u.entropy << ',' << u.clip_fraction << ','
      << u.approx_kl << ',' << (u.aborted ? 1 : 0) << '\n';
}

std::vector<EpisodeMetrics> read_metrics(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("metric log is empty");
  std::vector<EpisodeMetrics> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 14) throw Error("metric log line " + std::to_string(line_no) + ": expected 14 fields");
    try {
      EpisodeMetrics m;
      m.episode = std::stoi(f[0]);
      m.seed = std::stoull(f[1]);
      m.mean_makespan = std::stod(f[2]);
      m.std_makespan = std::stod(f[3]);
      for (int a = 0; a < kNumAgents; ++a)
        if (!f[4 + a].empty()) m.update.explained_variance[a] = std::stod(f[4 + a]);
      m.update.actor_loss = std::stod(f[8]);
      m.update.critic_loss = std::stod(f[9]);
      m.update.entropy = std::stod(f[10]);
      m.update.clip_fraction = std::stod(f[11]);
      m.update.approx_kl = std::stod(f[12]);
      m.update.aborted = f[13] == "1";
      rows.push_back(m);
    } catch (const std::exception&) {
      throw Error("metric log line " + std::to_string(line_no) + ": bad number");
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------------------------
// Training

std::uint64_t rollout_seed(std::uint64_t master, int episode, int k) {
  return derive_seed(derive_seed(master, hash_name("rollout") + static_cast<std::uint64_t>(episode)),
                     static_cast<std::uint64_t>(k));
}

int workers_from_env() {
  const char* v = std::getenv("AOPE_WORKERS");
  if (!v || !*v) return 1;
  try {
    return std::max(1, std::stoi(v));
  } catch (const std::exception&) {
    throw Error(std::string("AOPE_WORKERS is not a number: ") + v);
  }
}

TrainResult train(const FrameworkConfig& config, const orders::OrderSet& orders, const sim::EnvParams& params,
                  const TrainOptions& options) {
  config.validate();
  const auto& h = config.hyper;
  TrainResult result;
  result.bundle = AgentBundle::create(config, orders.stats(), derive_seed(options.seed, hash_name("init")));
  auto& bundle = result.bundle;

  std::ofstream log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log.open(options.out_dir / "metrics.csv");
    if (!log) throw Error("cannot write " + (options.out_dir / "metrics.csv").string());
    write_metrics_header(log);
  }

  for (int ep = 0; ep < h.episodes; ++ep) {
    std::vector<Rollout> buffer(static_cast<std::size_t>(h.rollouts_per_episode));
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
      for (int k = next++; k < h.rollouts_per_episode; k = next++) {
        try {
          buffer[k] = collect_rollout(orders, params, bundle, config, rollout_seed(options.seed, ep, k));
          attach_estimates(buffer[k], bundle, config);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < std::min(options.workers, h.rollouts_per_episode); ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);

    EpisodeMetrics em;
    em.episode = ep;
    em.seed = options.seed;
    double sum = 0.0, sq = 0.0;
    for (const auto& r : buffer) sum += r.makespan_s, sq += r.makespan_s * r.makespan_s;
    const double cnt = static_cast<double>(buffer.size());
    em.mean_makespan = sum / cnt;
    em.std_makespan = cnt > 1 ? std::sqrt(std::max(0.0, (sq - cnt * em.mean_makespan * em.mean_makespan) / (cnt - 1))) : 0.0;

    em.update = update(bundle, buffer, config, derive_seed(options.seed, hash_name("update") + static_cast<std::uint64_t>(ep)));
    update_observation_normalizers(bundle, buffer);
    bundle.set_completed_episodes(ep + 1);

    result.metrics.push_back(em);
    if (log) {
      write_metrics_row(log, em);
      log.flush();
    }
    if (options.on_episode) options.on_episode(em);
    if (!options.out_dir.empty() && options.checkpoint_every > 0 && (ep + 1) % options.checkpoint_every == 0)
      save_checkpoint(options.out_dir / ("checkpoint_" + std::to_string(ep + 1) + ".bin"), bundle, config);
  }
  if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "final.bin", bundle, config);
  return result;
}

// ---------------------------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::uint64_t kMagic = 0x54504b4345504f41ull;  // "AOPECKPT"
constexpr std::uint64_t kVersion = 1;

void write_norm(std::ostream& out, const RunningNorm& n) {
  nn::write_matrix(out, n.mean);
  nn::write_matrix(out, n.var);
  nn::write_f64(out, n.count);
}

RunningNorm read_norm(std::istream& in) {
  RunningNorm n;
  n.mean = nn::read_matrix(in);
  n.var = nn::read_matrix(in);
  n.count = nn::read_f64(in);
  if (n.mean.size() != n.var.size()) throw Error("checkpoint: corrupt normalizer");
  return n;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const AgentBundle& b, const FrameworkConfig& config) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    nn::write_u64(out, kMagic);
    nn::write_u64(out, kVersion);
    std::string cfg = config_to_json(config);
    nn::write_u64(out, cfg.size());
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    for (int v : {b.stats.n_orders, b.stats.n_items, b.stats.n_types, b.stats.n_shippings})
      nn::write_u64(out, static_cast<std::uint64_t>(v));
    nn::write_u64(out, static_cast<std::uint64_t>(b.episodes_completed));
    for (int i = 0; i < kNumAgents; ++i) {
      nn::write_mlp(out, b.actors[i]);
      nn::write_adam(out, b.actor_opt[i]);
      write_norm(out, b.obs_norm[i]);
    }
    nn::write_u64(out, b.critics.size());
    for (std::size_t c = 0; c < b.critics.size(); ++c) {
      nn::write_mlp(out, b.critics[c]);
      nn::write_adam(out, b.critic_opt[c]);
      write_norm(out, b.critic_norm[c]);
      write_norm(out, b.return_norm[c]);
    }
    if (!out) throw Error("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  try {
    if (nn::read_u64(in) != kMagic) throw Error("not a checkpoint file");
    if (auto v = nn::read_u64(in); v != kVersion) throw Error("unsupported checkpoint version " + std::to_string(v));
    Checkpoint ck;
    const auto len = nn::read_u64(in);
    if (len > (1u << 20)) throw Error("corrupt config block");
    std::string cfg(len, '\0');
    in.read(cfg.data(), static_cast<std::streamsize>(len));
    ck.config = config_from_json(cfg);
    auto& b = ck.bundle;
    b.kind = ck.config.kind;
    b.stats.n_orders = static_cast<int>(nn::read_u64(in));
    b.stats.n_items = static_cast<int>(nn::read_u64(in));
    b.stats.n_types = static_cast<int>(nn::read_u64(in));
    b.stats.n_shippings = static_cast<int>(nn::read_u64(in));
    b.episodes_completed = static_cast<int>(nn::read_u64(in));
    for (int i = 0; i < kNumAgents; ++i) {
      b.actors[i] = nn::read_mlp(in);
      b.actor_opt[i] = nn::read_adam(in);
      b.obs_norm[i] = read_norm(in);
    }
    const auto n_critics = nn::read_u64(in);
    if (n_critics != 1 && n_critics != kNumAgents) throw Error("bad critic count");
    for (std::uint64_t c = 0; c < n_critics; ++c) {
      b.critics.push_back(nn::read_mlp(in));
      b.critic_opt.push_back(nn::read_adam(in));
      b.critic_norm.push_back(read_norm(in));
      b.return_norm.push_back(read_norm(in));
    }
    PolicySet::from(b).check(b.stats);
    return ck;
  } catch (const Error& e) {
    throw Error("checkpoint " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------------------------
// Execution

PolicySet PolicySet::from(const AgentBundle& bundle) {
  PolicySet p;
  for (int i = 0; i < kNumAgents; ++i) {
    p.actors[i] = &bundle.actors[i];
    p.norms[i] = &bundle.obs_norm[i];
  }
  return p;
}

void PolicySet::check(const orders::OrderStats& stats) const {
  for (AgentId a : kAllAgents) {
    const int i = index(a);
    if (!actors[i] || !norms[i]) throw Error(std::string(agent_name(a)) + ": no policy");
    if (actors[i]->input_dim() != actor_input_dim(a) || norms[i]->dim() != actor_input_dim(a))
      throw Error(std::string(agent_name(a)) + ": policy input dimension does not match the observation");
    if (actors[i]->output_dim() != sim::action_space(stats, a).size)
      throw Error(std::string(agent_name(a)) + ": policy was trained for a different action space (" +
                  std::to_string(actors[i]->output_dim()) + " vs " +
                  std::to_string(sim::action_space(stats, a).size) + ")");
  }
}

int PolicyController::decide(const sim::SimState& state, const sim::DecisionRequest& request) {
  const int i = index(request.agent);
  auto obs = sim::observe(state, request.agent).input();
  return act(*policies_.actors[i], *policies_.norms[i], obs, request.valid_actions, rng_, greedy_).action;
}

}  // namespace aope::marl
