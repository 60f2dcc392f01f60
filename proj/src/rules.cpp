#include "aope/rules.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <set>
#include <thread>

namespace aope::rules {

RuleCombo RuleCombo::from_id(int id) {
  if (id < 0 || id >= kNumCombos) throw Error("rule combo id out of range: " + std::to_string(id));
  return RuleCombo{{id % 8, (id / 8) % 8, (id / 64) % 8, id / 512}};
}

std::string RuleCombo::label() const {
  return "FR" + std::to_string(rule[0]) + "-PC" + std::to_string(rule[1]) + "-PR1" + std::to_string(rule[2]) +
         "-PR2" + std::to_string(rule[3]);
}

int seed_score(const sim::ShippingBox& candidate, const std::vector<const sim::ShippingBox*>& allocated,
               SeedWeights weights) {
  std::set<int> distinct(candidate.types.begin(), candidate.types.end());
  int score = 0;
  for (int type : distinct) {
    bool shared = std::any_of(allocated.begin(), allocated.end(), [type](const sim::ShippingBox* b) {
      return std::find(b->types.begin(), b->types.end(), type) != b->types.end();
    });
    score += shared ? weights.w_s : weights.w_d;
  }
  return score;
}

namespace {

struct Keys {
  double items = 0.0;
  double distance = 0.0;
};

/// Best valid action under (primary, secondary) keys; ties go to the lowest index.
int pick_best(const sim::ActionMask& mask, const std::vector<Keys>& keys, int rule) {
  const double item_sign = (rule & 1) ? -1.0 : 1.0;  // maximize signed keys
  const double dist_sign = (rule & 2) ? -1.0 : 1.0;
  const bool distance_first = (rule & 4) != 0;
  int best = -1;
  std::pair<double, double> best_key;
  for (int a = 0; a < static_cast<int>(mask.size()); ++a) {
    if (!mask[a]) continue;
    double i = item_sign * keys[a].items, d = dist_sign * keys[a].distance;
    std::pair<double, double> k = distance_first ? std::make_pair(d, i) : std::make_pair(i, d);
    if (best < 0 || k > best_key) {
      best = a;
      best_key = k;
    }
  }
  return best;
}

int decide_fr(const sim::SimState& s, const sim::DecisionRequest& req, int rule) {
  std::vector<const sim::ShippingBox*> allocated;
  for (const auto& b : s.boxes)
    if (b.status == sim::BoxStatus::Allocated) allocated.push_back(&b);

  auto key = [&](const sim::ShippingBox& b) -> double {
    switch (rule) {
      case 0: return b.total_required();
      case 1: return -b.total_required();
      case 2: return static_cast<double>(b.types.size());
      case 3: return -static_cast<double>(b.types.size());
      default: return seed_score(b, allocated, kSeedWeights[rule - 4]);
    }
  };
  int best = -1;
  double best_key = 0.0;
  for (int a = 0; a < static_cast<int>(req.valid_actions.size()); ++a) {
    if (!req.valid_actions[a]) continue;
    double k = key(s.boxes[a]);
    if (best < 0 || k > best_key) {
      best = a;
      best_key = k;
    }
  }
  return best;
}

int decide_pc(const sim::SimState& s, const sim::DecisionRequest& req, int rule) {
  const int offered = req.context / sim::kPortsPerConveyor;
  std::vector<Keys> keys(req.valid_actions.size());
  for (int t = 0; t < static_cast<int>(keys.size()); ++t) {
    if (!req.valid_actions[t]) continue;
    int nearest = -1;
    for (int c = 0; c < sim::kNumConveyors; ++c) {
      const auto& conv = s.conveyors[c];
      bool carries = std::find(conv.slots.begin(), conv.slots.end(), t) != conv.slots.end() ||
                     std::any_of(conv.ports.begin(), conv.ports.end(),
                                 [t](const sim::LoadingPort& p) { return p.type == t; });
      if (carries && (nearest < 0 || std::abs(c - s.pr1.location) < std::abs(nearest - s.pr1.location)))
        nearest = c;
    }
    if (nearest < 0) nearest = offered;
    keys[t] = {static_cast<double>(s.pending_release[t]), static_cast<double>(std::abs(nearest - s.pr1.location))};
  }
  return pick_best(req.valid_actions, keys, rule);
}

int head_run(const sim::Conveyor& c) {
  int first = c.first_index();
  if (first < 0) return 0;
  int run = 0;
  for (int i = first; i >= 0; --i) {
    if (c.slots[i] < 0) continue;
    if (c.slots[i] != c.slots[first]) break;
    ++run;
  }
  return run;
}

int decide_pr1(const sim::SimState& s, const sim::DecisionRequest& req, int rule) {
  std::vector<Keys> keys(sim::kNumConveyors);
  for (int c = 0; c < sim::kNumConveyors; ++c)
    keys[c] = {static_cast<double>(head_run(s.conveyors[c])), static_cast<double>(std::abs(c - s.pr1.location))};
  return pick_best(req.valid_actions, keys, rule);
}

int decide_pr2(const sim::SimState& s, const sim::DecisionRequest& req, int rule) {
  std::vector<Keys> keys(sim::kBoxSlots);
  for (int k = 0; k < sim::kBoxSlots; ++k) {
    int b = s.fr.slot_box[k];
    keys[k] = {b >= 0 ? static_cast<double>(s.boxes[b].total_unsorted()) : 0.0,
               static_cast<double>(std::abs(k - s.pr2.location))};
  }
  return pick_best(req.valid_actions, keys, rule);
}

}  // namespace

int rule_decide(const sim::SimState& state, const sim::DecisionRequest& request, int rule) {
  if (rule < 0 || rule >= kRulesPerProcess) throw Error("rule index out of range: " + std::to_string(rule));
  switch (request.agent) {
    case AgentId::FR: return decide_fr(state, request, rule);
    case AgentId::PC: return decide_pc(state, request, rule);
    case AgentId::PR1: return decide_pr1(state, request, rule);
    case AgentId::PR2: return decide_pr2(state, request, rule);
  }
  return -1;
}

int random_decide(const sim::DecisionRequest& request, std::mt19937_64& rng) {
  int n_valid = 0;
  for (auto b : request.valid_actions) n_valid += b != 0;
  if (n_valid == 0) throw Error("random_decide: empty action mask");
  int k = std::uniform_int_distribution<int>(0, n_valid - 1)(rng);
  for (int a = 0; a < static_cast<int>(request.valid_actions.size()); ++a) {
    if (request.valid_actions[a] && k-- == 0) return a;
  }
  return -1;
}

double run_episode(sim::SimState& state, Controller& controller) {
  auto requests = sim::outstanding_requests(state);
  while (!state.done) {
    sim::Decisions d;
    for (const auto& r : requests) d[index(r.agent)] = controller.decide(state, r);
    requests = sim::step(state, d).requests;
  }
  return ticks_to_seconds(state.tick);
}

std::vector<ComboResult> grid_search(const orders::OrderSet& orders, const GridSearchOptions& options) {
  if (options.seeds.empty()) throw Error("grid_search: no seeds");
  std::vector<int> ids = options.combo_ids;
  if (ids.empty()) {
    ids.resize(kNumCombos);
    for (int i = 0; i < kNumCombos; ++i) ids[i] = i;
  }
  std::vector<ComboResult> results(ids.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < ids.size(); i = next++) {
      RuleCombo combo = RuleCombo::from_id(ids[i]);
      RuleController controller(combo);
      double sum = 0.0, sq = 0.0;
      for (auto seed : options.seeds) {
        auto state = sim::reset(orders, seed, options.params);
        double m = run_episode(state, controller);
        sum += m;
        sq += m * m;
      }
      const double n = static_cast<double>(options.seeds.size());
      double mean = sum / n;
      double var = n > 1 ? std::max(0.0, (sq - n * mean * mean) / (n - 1)) : 0.0;
      results[i] = {combo, mean, std::sqrt(var), static_cast<int>(n)};
    }
  };
  int workers = std::max(1, options.workers);
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  std::stable_sort(results.begin(), results.end(), [](const ComboResult& a, const ComboResult& b) {
    return a.mean != b.mean ? a.mean < b.mean : a.combo.id() < b.combo.id();
  });
  return results;
}

}  // namespace aope::rules
