#include "aope/harness.hpp"

#include <algorithm>
#include <atomic>
#include <boost/math/distributions/students_t.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace aope::harness {

namespace pt = boost::property_tree;
using json = nlohmann::json;

MakespanStats summarize(std::span<const double> samples) {
  MakespanStats s;
  s.samples.assign(samples.begin(), samples.end());
  s.n = static_cast<int>(samples.size());
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double x : samples) sum += x;
  s.mean = sum / s.n;
  if (s.n > 1) {
    double sq = 0.0;
    for (double x : samples) sq += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(sq / (s.n - 1));
  }
  return s;
}

std::uint64_t eval_seed(std::uint64_t seed, int k) {
  return derive_seed(seed, hash_name("eval") + static_cast<std::uint64_t>(k));
}

MakespanStats evaluate_controller(const ControllerFactory& factory, const orders::OrderSet& orders,
                                  const sim::EnvParams& params, int n_rollouts, std::uint64_t seed, int workers) {
  if (n_rollouts < 1) throw Error("evaluate: need at least one rollout");
  std::vector<double> makespans(static_cast<std::size_t>(n_rollouts));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex mutex;
  auto work = [&] {
    for (int k = next++; k < n_rollouts; k = next++) {
      try {
        const auto s = eval_seed(seed, k);
        auto controller = factory(s);
        auto state = sim::reset(orders, s, params);
        makespans[k] = rules::run_episode(state, *controller);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::min(workers, n_rollouts); ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return summarize(makespans);
}

ControllerFactory make_factory(const PolicySource& source) {
  switch (source.kind) {
    case PolicySource::Kind::Random:
      return [](std::uint64_t s) -> std::unique_ptr<rules::Controller> {
        return std::make_unique<rules::RandomController>(derive_seed(s, hash_name("random")));
      };
    case PolicySource::Kind::Rules:
      return [combo = source.combo](std::uint64_t) -> std::unique_ptr<rules::Controller> {
        return std::make_unique<rules::RuleController>(combo);
      };
    case PolicySource::Kind::Policies:
      // Same sampling stream as training rollouts with this seed.
      return [p = source.policies, greedy = source.greedy](std::uint64_t s) -> std::unique_ptr<rules::Controller> {
        return std::make_unique<marl::PolicyController>(p, derive_seed(s, hash_name("policy")), greedy);
      };
  }
  throw Error("bad policy source");
}

MakespanStats evaluate(const PolicySource& source, const orders::OrderSet& orders, const sim::EnvParams& params,
                       int n_rollouts, std::uint64_t seed, int workers) {
  if (source.kind == PolicySource::Kind::Policies) source.policies.check(orders.stats());
  return evaluate_controller(make_factory(source), orders, params, n_rollouts, seed, workers);
}

WelchResult welch_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw Error("welch_t: each sample needs at least two values");
  auto sa = summarize(a), sb = summarize(b);
  const double va = sa.std * sa.std / sa.n, vb = sb.std * sb.std / sb.n;
  if (va + vb <= 0.0) throw Error("welch_t: both samples have zero variance");
  WelchResult r;
  r.t = (sa.mean - sb.mean) / std::sqrt(va + vb);
  r.dof = (va + vb) * (va + vb) / (va * va / (sa.n - 1) + vb * vb / (sb.n - 1));
  boost::math::students_t dist(r.dof);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

SwitchStudy switch_study(const marl::AgentBundle& base, const marl::AgentBundle& replacement,
                         const orders::OrderSet& orders, const sim::EnvParams& params, int n_rollouts,
                         std::uint64_t seed, bool greedy, int workers) {
  PolicySource src;
  src.kind = PolicySource::Kind::Policies;
  src.greedy = greedy;
  src.policies = marl::PolicySet::from(base);
  marl::PolicySet::from(replacement).check(orders.stats());

  SwitchStudy study;
  study.baseline = evaluate(src, orders, params, n_rollouts, seed, workers);
  auto row = [&](const std::string& label, const std::vector<AgentId>& swapped) {
    PolicySource s = src;
    for (AgentId a : swapped) {
      s.policies.actors[index(a)] = &replacement.actors[index(a)];
      s.policies.norms[index(a)] = &replacement.obs_norm[index(a)];
    }
    SwitchRow r;
    r.label = label;
    r.stats = evaluate(s, orders, params, n_rollouts, seed, workers);
    r.percent_change = 100.0 * (r.stats.mean - study.baseline.mean) / study.baseline.mean;
    try {
      r.test = welch_t(r.stats.samples, study.baseline.samples);
    } catch (const Error&) {
      r.test.reset();
    }
    return r;
  };
  for (AgentId a : kAllAgents) study.rows.push_back(row(std::string(agent_name(a)), {a}));
  study.rows.push_back(row("ALL", {kAllAgents.begin(), kAllAgents.end()}));
  return study;
}

// ---------------------------------------------------------------------------------------------
// Curves

std::vector<CurvePoint> makespan_curve(const std::vector<marl::EpisodeMetrics>& log) {
  std::map<int, std::vector<double>> by_episode;
  for (const auto& m : log) by_episode[m.episode].push_back(m.mean_makespan);
  std::vector<CurvePoint> curve;
  for (const auto& [ep, values] : by_episode) {
    auto s = summarize(values);
    curve.push_back({ep, s.mean, s.std, s.n});
  }
  return curve;
}

std::vector<EvPoint> smoothed_ev(const std::vector<marl::EpisodeMetrics>& log, int window) {
  if (window < 1) throw Error("smoothing window must be positive");
  std::map<int, std::array<std::vector<double>, kNumAgents>> by_episode;
  for (const auto& m : log) {
    auto& slot = by_episode[m.episode];
    for (int a = 0; a < kNumAgents; ++a)
      if (m.update.explained_variance[a]) slot[a].push_back(*m.update.explained_variance[a]);
  }
  std::vector<EvPoint> raw;
  for (const auto& [ep, values] : by_episode) {
    EvPoint p;
    p.episode = ep;
    for (int a = 0; a < kNumAgents; ++a)
      if (!values[a].empty()) p.ev[a] = summarize(values[a]).mean;
    raw.push_back(p);
  }
  std::vector<EvPoint> out = raw;
  for (int a = 0; a < kNumAgents; ++a) {
    std::vector<double> recent;
    for (std::size_t k = 0; k < raw.size(); ++k) {
      if (raw[k].ev[a]) recent.push_back(*raw[k].ev[a]);
      if (static_cast<int>(recent.size()) > window) recent.erase(recent.begin());
      if (recent.empty()) continue;
      double sum = 0.0;
      for (double v : recent) sum += v;
      out[k].ev[a] = sum / static_cast<double>(recent.size());
    }
  }
  return out;
}

std::vector<std::filesystem::path> emit_curves(const std::vector<std::pair<std::string, std::filesystem::path>>& logs,
                                               const std::filesystem::path& out_dir, int window) {
  if (logs.empty()) throw Error("emit_curves: no metric logs");
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& [label, path] : logs) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open metric log " + path.string());
    auto log = marl::read_metrics(in);
    if (log.empty()) throw Error("metric log " + path.string() + " has no rows");

    auto mk = out_dir / (label + "_makespan.csv");
    std::ofstream m(mk);
    m << "episode,mean,std,n_seeds\n";
    for (const auto& p : makespan_curve(log)) m << p.episode << ',' << p.mean << ',' << p.std << ',' << p.n_seeds << '\n';
    written.push_back(mk);

    auto evp = out_dir / (label + "_ev.csv");
    std::ofstream e(evp);
    e << "episode,ev_FR,ev_PC,ev_PR1,ev_PR2\n";
    for (const auto& p : smoothed_ev(log, window)) {
      e << p.episode;
      for (const auto& v : p.ev) {
        e << ',';
        if (v) e << *v;
      }
      e << '\n';
    }
    written.push_back(evp);
    if (!m || !e) throw Error("cannot write curves to " + out_dir.string());
  }
  return written;
}

// ---------------------------------------------------------------------------------------------
// Run configuration

namespace {

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    std::istringstream is(item);
    T v;
    if (!(is >> v) || !is.eof()) throw Error("bad list entry: " + item);
    out.push_back(v);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t k = 0; k < v.size(); ++k) os << (k ? "," : "") << v[k];
  return os.str();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  // absolute and normal so that run.ini text does not depend on how the config was reached
  return std::filesystem::absolute(path).lexically_normal();
}

}  // namespace

RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(std::string("run config: ") + e.what());
  }
  RunConfig c;
  try {
    auto kind = marl::framework_from_name(tree.get<std::string>("run.framework", "CDSC"));
    auto est = marl::estimator_from_name(tree.get<std::string>("run.estimator", "GAE"));
    c.framework = marl::FrameworkConfig::make(kind, est, tree.get("run.lambda", 0.95));
    auto& f = c.framework;
    auto& h = f.hyper;
    if (auto s = tree.get_optional<std::string>("run.seeds")) c.seeds = parse_list<std::uint64_t>(*s);
    h.episodes = tree.get("run.episodes", h.episodes);
    h.rollouts_per_episode = tree.get("run.rollouts_per_episode", h.rollouts_per_episode);
    c.orders = tree.get("run.orders", c.orders);
    if (c.orders.find('/') != std::string::npos || c.orders.ends_with(".csv"))
      c.orders = resolve(base_dir, c.orders).string();
    c.env = resolve(base_dir, tree.get<std::string>("run.env", ""));
    c.eval_rollouts = tree.get("run.eval_rollouts", c.eval_rollouts);
    c.checkpoint_every = tree.get("run.checkpoint_every", c.checkpoint_every);

    h.epsilon = tree.get("ppo.epsilon", h.epsilon);
    f.advantage.gamma = tree.get("ppo.gamma", f.advantage.gamma);
    f.advantage.zeta = tree.get("ppo.zeta", f.advantage.zeta);
    h.epochs = tree.get("ppo.epochs", h.epochs);
    h.minibatch = tree.get("ppo.minibatch", h.minibatch);
    h.actor_lr = tree.get("ppo.actor_lr", h.actor_lr);
    h.critic_lr = tree.get("ppo.critic_lr", h.critic_lr);
    h.lr_decay = tree.get("ppo.lr_decay", h.lr_decay);
    h.lr_decay_every = tree.get("ppo.lr_decay_every", h.lr_decay_every);
    if (auto s = tree.get_optional<std::string>("ppo.hidden")) h.hidden = parse_list<int>(*s);
    h.entropy_coef = tree.get("ppo.entropy_coef", h.entropy_coef);
    h.max_grad_norm = tree.get("ppo.max_grad_norm", h.max_grad_norm);
    h.normalize_advantages = tree.get("ppo.normalize_advantages", h.normalize_advantages);

    auto& r = f.reward_config;
    r.t_ofs = tree.get("reward.t_ofs", r.t_ofs);
    r.time_unit_s = tree.get("reward.time_unit_s", r.time_unit_s);
    r.swap_branch = tree.get("reward.swap_branch", r.swap_branch);
    auto ld = tree.get<std::string>("reward.local_discount", "per_decision");
    if (ld == "per_decision") r.local_discount = marl::LocalDiscount::PerDecision;
    else if (ld == "zeta") r.local_discount = marl::LocalDiscount::Zeta;
    else throw Error("reward.local_discount must be per_decision or zeta");
  } catch (const pt::ptree_error& e) {
    throw Error(std::string("run config: ") + e.what());
  }
  if (c.seeds.empty()) throw Error("run config: no seeds");
  if (c.eval_rollouts < 1) throw Error("run config: eval_rollouts must be positive");
  c.framework.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open run config " + path.string());
  return parse_run_config(in, path.parent_path());
}

void write_run_config(std::ostream& out, const RunConfig& c) {
  const auto& f = c.framework;
  const auto& h = f.hyper;
  const auto& r = f.reward_config;
  out << "[run]\n"
      << "framework = " << marl::framework_name(f.kind) << '\n'
      << "estimator = " << marl::estimator_name(f.advantage.estimator) << '\n'
      << "lambda = " << f.advantage.lambda << '\n'
      << "seeds = " << join(c.seeds) << '\n'
      << "episodes = " << h.episodes << '\n'
      << "rollouts_per_episode = " << h.rollouts_per_episode << '\n'
      << "orders = " << c.orders << '\n'
      << "env = " << c.env.string() << '\n'
      << "eval_rollouts = " << c.eval_rollouts << '\n'
      << "checkpoint_every = " << c.checkpoint_every << "\n\n"
      << "[ppo]\n"
      << "epsilon = " << h.epsilon << '\n'
      << "gamma = " << f.advantage.gamma << '\n'
      << "zeta = " << f.advantage.zeta << '\n'
      << "epochs = " << h.epochs << '\n'
      << "minibatch = " << h.minibatch << '\n'
      << "actor_lr = " << h.actor_lr << '\n'
      << "critic_lr = " << h.critic_lr << '\n'
      << "lr_decay = " << h.lr_decay << '\n'
      << "lr_decay_every = " << h.lr_decay_every << '\n'
      << "hidden = " << join(h.hidden) << '\n'
      << "entropy_coef = " << h.entropy_coef << '\n'
      << "max_grad_norm = " << h.max_grad_norm << '\n'
      << "normalize_advantages = " << (h.normalize_advantages ? "true" : "false") << "\n\n"
      << "[reward]\n"
      << "t_ofs = " << r.t_ofs << '\n'
      << "time_unit_s = " << r.time_unit_s << '\n'
      << "swap_branch = " << (r.swap_branch ? "true" : "false") << '\n'
      << "local_discount = " << (r.local_discount == marl::LocalDiscount::PerDecision ? "per_decision" : "zeta")
      << '\n';
}

orders::OrderSet resolve_orders(const std::string& spec) {
  if (std::filesystem::exists(spec)) return orders::load_orders(spec);
  try {
    return orders::generate_orders(orders::profile_by_name(spec), 1);
  } catch (const Error&) {
    throw Error("orders: no such file or profile: " + spec);
  }
}

sim::EnvParams resolve_env(const std::filesystem::path& path) {
  if (path.empty()) return {};
  return sim::load_env_params(path);
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  json j;
  j["tool"] = "aope";
  j["version"] = kVersion;
  j["command"] = m.command;
  j["argv"] = m.argv;
  j["seeds"] = m.seeds;
  if (!m.framework_json.empty()) j["framework"] = json::parse(m.framework_json);
  j["env_ini"] = m.env_ini;
  j["orders_csv"] = m.orders_csv;
  j["extra"] = m.extra;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("cannot write manifest " + path.string());
}

void write_makespans(std::ostream& out, const MakespanStats& stats, std::uint64_t seed) {
  out << "rollout,seed,makespan_s\n";
  for (std::size_t k = 0; k < stats.samples.size(); ++k)
    out << k << ',' << eval_seed(seed, static_cast<int>(k)) << ',' << stats.samples[k] << '\n';
}

namespace {

std::string env_text(const sim::EnvParams& p) {
  std::ostringstream os;
  sim::write_env_params(os, p);
  return os.str();
}

std::string orders_text(const orders::OrderSet& o) {
  std::ostringstream os;
  orders::write_orders(os, o);
  return os.str();
}

std::string run_config_text(const RunConfig& c) {
  std::ostringstream os;
  write_run_config(os, c);
  return os.str();
}

}  // namespace

TrainingRun run_training(const RunConfig& rc, const std::filesystem::path& out_dir,
                         const std::vector<std::string>& argv, int workers,
                         const std::function<void(const std::string&)>& progress) {
  auto o = resolve_orders(rc.orders);
  auto params = resolve_env(rc.env);
  std::filesystem::create_directories(out_dir);
  std::filesystem::remove(out_dir / "run.ini");
  TrainingRun run;
  for (auto seed : rc.seeds) {
    marl::TrainOptions opt;
    opt.seed = seed;
    opt.workers = workers;
    opt.checkpoint_every = rc.checkpoint_every;
    opt.out_dir = out_dir / ("seed_" + std::to_string(seed));
    opt.on_episode = [&](const marl::EpisodeMetrics& m) {
      if (progress && m.episode % 10 == 0) {
        std::ostringstream os;
        os << rc.framework.label() << " seed " << seed << " episode " << m.episode << ": " << m.mean_makespan << " s";
        progress(os.str());
      }
    };
    auto result = marl::train(rc.framework, o, params, opt);
    run.metrics.insert(run.metrics.end(), result.metrics.begin(), result.metrics.end());
    PolicySource ps;
    ps.kind = PolicySource::Kind::Policies;
    ps.policies = marl::PolicySet::from(result.bundle);
    run.evaluations.emplace_back(seed, evaluate(ps, o, params, rc.eval_rollouts, seed, workers));
  }
  {
    std::ofstream m(out_dir / "metrics.csv");
    marl::write_metrics_header(m);
    for (const auto& row : run.metrics) marl::write_metrics_row(m, row);
    std::ofstream e(out_dir / "eval_summary.csv");
    e << "seed,mean,std,n\n";
    for (const auto& [seed, s] : run.evaluations) e << seed << ',' << s.mean << ',' << s.std << ',' << s.n << '\n';
    for (const auto& [seed, s] : run.evaluations) {
      std::ofstream r(out_dir / ("seed_" + std::to_string(seed)) / "eval_makespans.csv");
      write_makespans(r, s, seed);
    }
    if (!m || !e) throw Error("cannot write run outputs to " + out_dir.string());
  }
  write_manifest(out_dir / "manifest.json", {"train", argv, rc.seeds, marl::config_to_json(rc.framework),
                                             env_text(params), orders_text(o), {{"orders_spec", rc.orders}}});
  // Written last: its presence marks the run as complete.
  std::ofstream cfg(out_dir / "run.ini");
  cfg << run_config_text(rc);
  return run;
}

bool training_complete(const RunConfig& rc, const std::filesystem::path& out_dir) {
  std::ifstream in(out_dir / "run.ini");
  if (!in) return false;
  std::ostringstream os;
  os << in.rdbuf();
  if (os.str() != run_config_text(rc)) return false;
  for (auto seed : rc.seeds)
    if (!std::filesystem::exists(out_dir / ("seed_" + std::to_string(seed)) / "final.bin")) return false;
  return std::filesystem::exists(out_dir / "metrics.csv") && std::filesystem::exists(out_dir / "eval_summary.csv");
}

}  // namespace aope::harness
