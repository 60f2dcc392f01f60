#ifndef AOPE_RULES_HPP_
#define AOPE_RULES_HPP_

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "aope/sim.hpp"

namespace aope::rules {

inline constexpr int kRulesPerProcess = 8;
inline constexpr int kNumCombos = kRulesPerProcess * kRulesPerProcess * kRulesPerProcess * kRulesPerProcess;

/// Seed-algorithm weights: w_s per candidate type already required by an allocated box,
/// w_d per candidate type that is not.
struct SeedWeights {
  int w_s = 1;
  int w_d = 0;
};

inline constexpr std::array<SeedWeights, 4> kSeedWeights = {{{1, 0}, {0, 1}, {1, -1}, {-1, 1}}};

/// Rule indices, one per process.
///
/// FR: 0 most items, 1 fewest items, 2 most types, 3 fewest types, 4..7 seed algorithm with
/// kSeedWeights[rule - 4].
///
/// PC, PR1, PR2 share one encoding of their "most/fewest items, farthest/closest" family:
///   bit 0: 0 = most items, 1 = fewest items
///   bit 1: 0 = farthest,   1 = closest
///   bit 2: 0 = item count is the primary key, 1 = distance is the primary key
/// The other key breaks ties; remaining ties go to the lowest action index.
///   PC  item count: items that loading the type would release; distance: |PR1 - nearest
///       conveyor already carrying or queuing the type| (the offered conveyor if none).
///   PR1 item count: length of the same-type run at the conveyor's head; distance: |PR1 - conveyor|.
///   PR2 item count: unsorted items of the slot's box; distance: |PR2 - slot|.
struct RuleCombo {
  std::array<int, kNumAgents> rule{};

  /// Combo id in [0, 4096): FR + 8 PC + 64 PR1 + 512 PR2.
  int id() const { return rule[0] + 8 * rule[1] + 64 * rule[2] + 512 * rule[3]; }
  static RuleCombo from_id(int id);
  std::string label() const;

  friend bool operator==(const RuleCombo&, const RuleCombo&) = default;
};

/// Σ over distinct candidate types of w_s (type required by an allocated box) or w_d (not).
int seed_score(const sim::ShippingBox& candidate, const std::vector<const sim::ShippingBox*>& allocated,
               SeedWeights weights);

/// Applies one process rule to an outstanding request.
int rule_decide(const sim::SimState& state, const sim::DecisionRequest& request, int rule);

/// Uniformly random valid action.
int random_decide(const sim::DecisionRequest& request, std::mt19937_64& rng);

/// Something that answers decision requests.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual int decide(const sim::SimState& state, const sim::DecisionRequest& request) = 0;
};

class RuleController final : public Controller {
 public:
  explicit RuleController(RuleCombo combo) : combo_(combo) {}
  int decide(const sim::SimState& state, const sim::DecisionRequest& request) override {
    return rule_decide(state, request, combo_.rule[index(request.agent)]);
  }

 private:
  RuleCombo combo_;
};

class RandomController final : public Controller {
 public:
  explicit RandomController(std::uint64_t seed) : rng_(seed) {}
  int decide(const sim::SimState&, const sim::DecisionRequest& request) override {
    return random_decide(request, rng_);
  }

 private:
  std::mt19937_64 rng_;
};

/// Runs one episode to completion; returns the makespan in seconds.
double run_episode(sim::SimState& state, Controller& controller);

struct ComboResult {
  RuleCombo combo;
  double mean = 0.0;
  double std = 0.0;
  int n = 0;
};

struct GridSearchOptions {
  std::vector<std::uint64_t> seeds;    // one rollout per seed and combo
  std::vector<int> combo_ids;          // empty = all 4096
  sim::EnvParams params;
  int workers = 1;
};

/// Evaluates every requested combo on the same environment seeds; results sorted by mean
/// makespan (ties by combo id). The first entry is the best combo.
std::vector<ComboResult> grid_search(const orders::OrderSet& orders, const GridSearchOptions& options);

}  // namespace aope::rules

#endif  // AOPE_RULES_HPP_
