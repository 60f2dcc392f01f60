// Command-line front end: training, evaluation, rule grid search and figure data.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "aope/harness.hpp"

using namespace aope;
namespace fs = std::filesystem;

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

void print_stats(const std::string& label, const harness::MakespanStats& s) {
  std::cout << label << ": " << s.mean << " +- " << s.std << " s (n=" << s.n << ")\n";
}

std::vector<std::uint64_t> eval_seeds(std::uint64_t seed, int n) {
  std::vector<std::uint64_t> v;
  for (int k = 0; k < n; ++k) v.push_back(harness::eval_seed(seed, k));
  return v;
}

void write_trace(const fs::path& path, const orders::OrderSet& o, const sim::EnvParams& params,
                 const harness::ControllerFactory& factory, std::uint64_t seed) {
  const auto s = harness::eval_seed(seed, 0);
  auto state = sim::reset(o, s, params);
  state.record_trace = true;
  auto controller = factory(s);
  rules::run_episode(state, *controller);
  std::ofstream out(path);
  out << "tick,agent,action,event\n";
  for (const auto& e : state.trace) out << e.tick << ',' << agent_name(e.agent) << ',' << e.action << ',' << e.event << '\n';
  if (!out) throw Error("cannot write trace " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Order-picking line simulator and multi-agent PPO trainer"};
  app.require_subcommand(1);
  std::vector<std::string> args(argv, argv + argc);
  const int workers = marl::workers_from_env();

  // train ------------------------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train one framework over one or more seeds");
  fs::path train_config, train_out = "runs/train";
  std::vector<std::uint64_t> train_seeds;
  int train_episodes = -1;
  train->add_option("-c,--config", train_config, "Run configuration INI")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--out", train_out, "Output directory");
  train->add_option("--seeds", train_seeds, "Override the configured seeds");
  train->add_option("--episodes", train_episodes, "Override the configured episode count");

  // eval -------------------------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint, a rule combination or random choice");
  fs::path eval_ckpt, eval_env, eval_out, eval_trace;
  std::string eval_orders = "lm";
  int eval_rules = -1, eval_n = 192;
  std::uint64_t eval_seed = 1;
  bool eval_random = false, eval_greedy = false;
  auto* src = eval->add_option_group("policy");
  src->add_option("--checkpoint", eval_ckpt, "Trained checkpoint")->check(CLI::ExistingFile);
  src->add_option("--rules", eval_rules, "Rule combination id (0-4095)")->check(CLI::Range(0, rules::kNumCombos - 1));
  src->add_flag("--random", eval_random, "Uniformly random valid actions");
  src->require_option(1);
  eval->add_option("--orders", eval_orders, "Order CSV or profile name");
  eval->add_option("--env", eval_env, "Environment parameter INI")->check(CLI::ExistingFile);
  eval->add_option("-n,--rollouts", eval_n, "Number of rollouts")->check(CLI::PositiveNumber);
  eval->add_option("--seed", eval_seed, "Evaluation seed");
  eval->add_flag("--greedy", eval_greedy, "Argmax actions instead of sampling");
  eval->add_option("-o,--out", eval_out, "Output directory for makespans.csv and manifest.json");
  eval->add_option("--trace", eval_trace, "Write the event trace of the first rollout (tick,agent,action,event)");

  // random-baseline --------------------------------------------------------------------------
  auto* rnd = app.add_subcommand("random-baseline", "Makespan of uniformly random control");
  std::string rnd_orders = "lm";
  fs::path rnd_env, rnd_out;
  int rnd_n = 192;
  std::uint64_t rnd_seed = 1;
  rnd->add_option("--orders", rnd_orders, "Order CSV or profile name");
  rnd->add_option("--env", rnd_env, "Environment parameter INI")->check(CLI::ExistingFile);
  rnd->add_option("-n,--rollouts", rnd_n, "Number of rollouts")->check(CLI::PositiveNumber);
  rnd->add_option("--seed", rnd_seed, "Evaluation seed");
  rnd->add_option("-o,--out", rnd_out, "Output directory");

  // gridsearch -------------------------------------------------------------------------------
  auto* grid = app.add_subcommand("gridsearch", "Evaluate rule combinations and rank them");
  std::string grid_orders = "lm";
  fs::path grid_env, grid_out = "gridsearch.csv";
  int grid_n = 4;
  std::uint64_t grid_seed = 1;
  std::vector<int> grid_combos;
  grid->add_option("--orders", grid_orders, "Order CSV or profile name");
  grid->add_option("--env", grid_env, "Environment parameter INI")->check(CLI::ExistingFile);
  grid->add_option("-n,--rollouts", grid_n, "Rollouts per combination")->check(CLI::PositiveNumber);
  grid->add_option("--seed", grid_seed, "Evaluation seed");
  grid->add_option("--combos", grid_combos, "Only these combination ids")->delimiter(',');
  grid->add_option("-o,--out", grid_out, "Output CSV");

  // switch-study -----------------------------------------------------------------------------
  auto* sw = app.add_subcommand("switch-study", "Swap single agents of a CDSC policy for ILLR ones");
  fs::path sw_base, sw_repl, sw_env, sw_out = "switch_study.csv";
  std::string sw_orders = "hm";
  int sw_n = 192;
  std::uint64_t sw_seed = 1;
  bool sw_greedy = false;
  sw->add_option("--base", sw_base, "CDSC checkpoint")->required()->check(CLI::ExistingFile);
  sw->add_option("--replacement", sw_repl, "ILLR checkpoint")->required()->check(CLI::ExistingFile);
  sw->add_option("--orders", sw_orders, "Order CSV or profile name");
  sw->add_option("--env", sw_env, "Environment parameter INI")->check(CLI::ExistingFile);
  sw->add_option("-n,--rollouts", sw_n, "Rollouts per variant")->check(CLI::PositiveNumber);
  sw->add_option("--seed", sw_seed, "Evaluation seed");
  sw->add_flag("--greedy", sw_greedy, "Argmax actions instead of sampling");
  sw->add_option("-o,--out", sw_out, "Output CSV");

  // emit-curves ------------------------------------------------------------------------------
  auto* curves = app.add_subcommand("emit-curves", "Learning-curve and explained-variance CSVs from metric logs");
  std::vector<std::string> curve_logs;
  fs::path curve_out = "curves";
  int curve_window = 50;
  curves->add_option("--log", curve_logs, "label=metrics.csv (repeatable)")->required();
  curves->add_option("-o,--out", curve_out, "Output directory");
  curves->add_option("--window", curve_window, "Explained-variance moving-average window")->check(CLI::PositiveNumber);

  // gen-orders -------------------------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-orders", "Generate an order set matching a profile");
  std::string gen_profile = "lm";
  std::vector<int> gen_counts;
  std::uint64_t gen_seed = 1;
  fs::path gen_out;
  gen->add_option("--profile", gen_profile, "lm, hm, desk-lm or desk-hm");
  gen->add_option("--counts", gen_counts, "orders,items,types,shippings (overrides --profile)")
      ->delimiter(',')
      ->expected(4);
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("-o,--out", gen_out, "Output CSV (stdout when absent)");

  // env-defaults -----------------------------------------------------------------------------
  auto* envd = app.add_subcommand("env-defaults", "Print the default environment parameter INI");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      auto rc = harness::load_run_config(train_config);
      if (!train_seeds.empty()) rc.seeds = train_seeds;
      if (train_episodes >= 0) rc.framework.hyper.episodes = train_episodes;
      auto run = harness::run_training(rc, train_out, args, workers, [](const std::string& line) { std::cerr << line << '\n'; });
      for (const auto& [seed, stats] : run.evaluations)
        print_stats(rc.framework.label() + " seed " + std::to_string(seed), stats);
    } else if (*eval) {
      auto o = harness::resolve_orders(eval_orders);
      auto params = harness::resolve_env(eval_env);
      harness::PolicySource ps;
      std::optional<marl::Checkpoint> ck;
      std::string label;
      if (!eval_ckpt.empty()) {
        ck = marl::load_checkpoint(eval_ckpt);
        ps.kind = harness::PolicySource::Kind::Policies;
        ps.policies = marl::PolicySet::from(ck->bundle);
        ps.greedy = eval_greedy;
        label = ck->config.label();
      } else if (eval_rules >= 0) {
        ps.kind = harness::PolicySource::Kind::Rules;
        ps.combo = rules::RuleCombo::from_id(eval_rules);
        label = "rules " + ps.combo.label();
      } else {
        ps.kind = harness::PolicySource::Kind::Random;
        label = "random";
      }
      auto stats = harness::evaluate(ps, o, params, eval_n, eval_seed, workers);
      print_stats(label, stats);
      if (!eval_trace.empty()) write_trace(eval_trace, o, params, harness::make_factory(ps), eval_seed);
      if (!eval_out.empty()) {
        fs::create_directories(eval_out);
        std::ofstream m(eval_out / "makespans.csv");
        harness::write_makespans(m, stats, eval_seed);
        harness::write_manifest(eval_out / "manifest.json",
                                {"eval", args, {eval_seed}, ck ? marl::config_to_json(ck->config) : "",
                                 env_text(params), orders_text(o), {{"policy", label}}});
      }
    } else if (*rnd) {
      auto o = harness::resolve_orders(rnd_orders);
      auto params = harness::resolve_env(rnd_env);
      harness::PolicySource ps;
      auto stats = harness::evaluate(ps, o, params, rnd_n, rnd_seed, workers);
      print_stats("random", stats);
      if (!rnd_out.empty()) {
        fs::create_directories(rnd_out);
        std::ofstream m(rnd_out / "makespans.csv");
        harness::write_makespans(m, stats, rnd_seed);
        harness::write_manifest(rnd_out / "manifest.json",
                                {"random-baseline", args, {rnd_seed}, "", env_text(params), orders_text(o), {}});
      }
    } else if (*grid) {
      auto o = harness::resolve_orders(grid_orders);
      rules::GridSearchOptions opt;
      opt.params = harness::resolve_env(grid_env);
      opt.seeds = eval_seeds(grid_seed, grid_n);
      opt.combo_ids = grid_combos;
      opt.workers = workers;
      auto results = rules::grid_search(o, opt);
      if (grid_out.has_parent_path()) fs::create_directories(grid_out.parent_path());
      std::ofstream out(grid_out);
      out << "combo_id,fr_rule,pc_rule,pr1_rule,pr2_rule,mean,std,n\n";
      for (const auto& r : results) {
        out << r.combo.id();
        for (int rule : r.combo.rule) out << ',' << rule;
        out << ',' << r.mean << ',' << r.std << ',' << r.n << '\n';
      }
      if (!out) throw Error("cannot write " + grid_out.string());
      std::cout << "evaluated " << results.size() << " combinations; best " << results.front().combo.id() << " ("
                << results.front().combo.label() << "): " << results.front().mean << " +- " << results.front().std
                << " s\n";
      harness::write_manifest(fs::path(grid_out).replace_extension(".manifest.json"),
                              {"gridsearch", args, opt.seeds, "", env_text(opt.params), orders_text(o), {}});
    } else if (*sw) {
      auto o = harness::resolve_orders(sw_orders);
      auto params = harness::resolve_env(sw_env);
      auto base = marl::load_checkpoint(sw_base);
      auto repl = marl::load_checkpoint(sw_repl);
      auto study = harness::switch_study(base.bundle, repl.bundle, o, params, sw_n, sw_seed, sw_greedy, workers);
      if (sw_out.has_parent_path()) fs::create_directories(sw_out.parent_path());
      std::ofstream out(sw_out);
      out << "switched,mean,std,n,percent_change,t,dof,p\n";
      out << "none," << study.baseline.mean << ',' << study.baseline.std << ',' << study.baseline.n << ",0,,,\n";
      print_stats("baseline", study.baseline);
      for (const auto& r : study.rows) {
        out << r.label << ',' << r.stats.mean << ',' << r.stats.std << ',' << r.stats.n << ',' << r.percent_change;
        if (r.test) out << ',' << r.test->t << ',' << r.test->dof << ',' << r.test->p << '\n';
        else out << ",,,\n";
        std::cout << "switch " << r.label << ": " << r.percent_change << " %";
        if (r.test) std::cout << " (t=" << r.test->t << ", p=" << r.test->p << ")";
        std::cout << '\n';
      }
      harness::write_manifest(fs::path(sw_out).replace_extension(".manifest.json"),
                              {"switch-study", args, {sw_seed}, "", env_text(params), orders_text(o),
                               {{"base", sw_base.string()}, {"replacement", sw_repl.string()}}});
    } else if (*curves) {
      std::vector<std::pair<std::string, fs::path>> logs;
      for (const auto& spec : curve_logs) {
        auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw Error("--log expects label=path, got " + spec);
        logs.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
      }
      for (const auto& p : harness::emit_curves(logs, curve_out, curve_window)) std::cout << p.string() << '\n';
    } else if (*gen) {
      orders::Profile prof;
      if (gen_counts.empty()) {
        prof = orders::profile_by_name(gen_profile);
      } else {
        prof.name = "custom";
        prof.target = {gen_counts[0], gen_counts[1], gen_counts[2], gen_counts[3]};
      }
      auto o = orders::generate_orders(prof, gen_seed);
      if (gen_out.empty()) orders::write_orders(std::cout, o);
      else orders::save_orders(gen_out, o);
    } else if (*envd) {
      sim::write_env_params(std::cout, {});
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
