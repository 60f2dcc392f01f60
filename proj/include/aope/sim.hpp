#ifndef AOPE_SIM_HPP_
#define AOPE_SIM_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "aope/common.hpp"
#include "aope/orders.hpp"
#include "aope/params.hpp"

namespace aope::sim {

inline constexpr int kNumConveyors = 3;
inline constexpr int kPortsPerConveyor = 6;
inline constexpr int kCarouselSlots = 28;
inline constexpr int kBoxSlots = 4;

/// Feature counts per agent, excluding the shared time-step scalar.
inline constexpr int kFrFeatures = 7;
inline constexpr int kPcFeatures = 28;
inline constexpr int kPr1Features = 27;
inline constexpr int kPr2Features = 119;
inline constexpr std::array<int, kNumAgents> kFeatureCounts = {kFrFeatures, kPcFeatures, kPr1Features, kPr2Features};
inline constexpr int kGlobalStateDim = kFrFeatures + kPcFeatures + kPr1Features + kPr2Features + 1;

constexpr int feature_count(AgentId id) { return kFeatureCounts[index(id)]; }

using ActionMask = std::vector<std::uint8_t>;

enum class BoxStatus : std::uint8_t { Unallocated, Allocated, Completed };

/// A shipping destination. Vectors are aligned: entry j describes item type `types[j]`.
struct ShippingBox {
  int id = 0;
  std::vector<int> types;
  std::vector<int> required;
  std::vector<int> sorted;
  std::vector<int> unreleased;  // demand not yet handed to a loading port
  BoxStatus status = BoxStatus::Unallocated;
  int slot = -1;

  int total_required() const;
  int total_unsorted() const;
  /// Units of `type` this box still accepts.
  int need(int type) const;
};

enum class PortPhase : std::uint8_t { Idle, Setup, Loading, Ready };

struct LoadingPort {
  int type = -1;
  int queued = 0;  // items of `type` not yet on the belt
  PortPhase phase = PortPhase::Idle;
  Tick busy_until = 0;

  bool free() const { return phase == PortPhase::Idle && queued == 0; }
  bool work_in_progress() const { return phase != PortPhase::Idle; }
};

struct Conveyor {
  std::vector<int> slots;  // item type or -1; index conveyor_length-1 is the head
  std::array<LoadingPort, kPortsPerConveyor> ports;

  int item_count() const;
  /// Index of the item closest to the head, or -1.
  int first_index() const;
  int last_index() const;
};

/// 28-position ring. World position p holds cell (p - offset) mod 28; rotation advances offset.
struct Carousel {
  std::array<int, kCarouselSlots> cells;
  int offset = 0;

  Carousel() { cells.fill(-1); }
  int& at(int position);
  int at(int position) const;
  int item_count() const;
};

enum class Pr1Phase : std::uint8_t { Idle, Moving, WaitHead, Picking, Placing, WaitCarousel };
enum class Pr2Phase : std::uint8_t { Idle, WaitItem, Picking, Moving, Dropping };

struct Pr1State {
  int location = 0;   // conveyor index
  int direction = 1;
  Pr1Phase phase = Pr1Phase::Idle;
  int target = -1;
  int run_type = -1;  // type of the batch being picked from `target`
  int held_type = -1;
  Tick busy_until = 0;
};

struct Pr2State {
  int location = 0;  // box slot index
  int direction = 1;
  Pr2Phase phase = Pr2Phase::Idle;
  int target = -1;   // box slot
  int held_type = -1;
  Tick busy_until = 0;
  int sorted_total = 0;
};

struct FlowRack {
  std::array<int, kBoxSlots> slot_box;  // box id or -1
  std::array<Tick, kBoxSlots> replacing_until;  // > tick while a completed box is swapped out

  FlowRack() {
    slot_box.fill(-1);
    replacing_until.fill(0);
  }
};

/// One named random stream per stochastic source.
struct RandomStreams {
  std::mt19937_64 port_setup, port_load, pr1_pick, pr1_place, pr2_pick, pr2_drop, box_replace;
};

/// Asks an agent's controller to choose its next task.
struct DecisionRequest {
  Tick tick = 0;
  AgentId agent = AgentId::FR;
  ActionMask valid_actions;
  /// PC only: the free port being filled, as conveyor * 6 + port.
  int context = -1;
};

struct TraceEvent {
  Tick tick;
  AgentId agent;
  int action;
  std::string event;
};

/// Full simulator state. Copyable; a copy evolves identically given the same decisions.
struct SimState {
  EnvParams params;
  orders::OrderStats stats;
  Tick tick = 0;
  std::vector<ShippingBox> boxes;
  FlowRack fr;
  std::array<Conveyor, kNumConveyors> conveyors;
  Carousel carousel;
  Pr1State pr1;
  Pr2State pr2;
  std::vector<int> pending_release;  // per type, unreleased demand of allocated boxes
  int completed_boxes = 0;
  int pc_context = 0;  // port most recently offered to PC
  std::array<std::optional<DecisionRequest>, kNumAgents> outstanding;
  RandomStreams rng;
  bool done = false;
  bool record_trace = false;
  std::vector<TraceEvent> trace;

  int n_types() const { return stats.n_types; }
  int n_boxes() const { return stats.n_shippings; }
};

/// Decisions for one step; entry i answers agent i's outstanding request.
using Decisions = std::array<std::optional<int>, kNumAgents>;

struct StepResult {
  std::vector<DecisionRequest> requests;  // outstanding after the step
  bool done = false;
};

/// Raised when a step's decisions do not answer the outstanding requests.
class InvalidDecision : public Error {
 public:
  InvalidDecision(AgentId agent, const std::string& what);
  AgentId agent() const { return agent_; }

 private:
  AgentId agent_;
};

/// Builds the initial state: every box unallocated, belts and carousel empty, robots home,
/// tick 0. The initial FR request is already outstanding.
SimState reset(const orders::OrderSet& orders, std::uint64_t seed, const EnvParams& params = {});

/// Applies the decisions, then advances exactly one tick.
StepResult step(SimState& state, const Decisions& decisions);

/// Outstanding requests in agent order.
std::vector<DecisionRequest> outstanding_requests(const SimState& state);

struct Observation {
  AgentId agent = AgentId::FR;
  std::vector<double> features;
  double time_step = 0.0;  // elapsed time in ksec
  ActionMask action_mask;

  /// Actor input: features followed by the time step.
  std::vector<double> input() const;
};

Observation observe(const SimState& state, AgentId agent);
/// Concatenated FR, PC, PR1 and PR2 feature blocks plus one time-step scalar; masks excluded.
std::vector<double> global_state(const SimState& state);

/// Currently valid actions of an agent (all zero when it has nothing to decide).
ActionMask valid_actions(const SimState& state, AgentId agent);

struct ActionSpace {
  AgentId agent;
  int size;
  std::string description;
};

/// FR: one action per shipping box; PC: one per item type; PR1: 3 conveyors; PR2: 4 box slots.
ActionSpace action_space(const orders::OrderStats& stats, AgentId agent);

/// Item counts per location; `total()` equals the order set's n_items at every tick.
struct ItemCensus {
  int unreleased = 0, port_queue = 0, conveyor = 0, pr1 = 0, carousel = 0, pr2 = 0, boxed = 0;
  int total() const { return unreleased + port_queue + conveyor + pr1 + carousel + pr2 + boxed; }
};

ItemCensus census(const SimState& state);

/// Hash of the dynamic state (positions, contents, timers; not the RNG engines).
std::uint64_t state_hash(const SimState& state);

/// Location indices normalized to [0, 1] for observations; -1 positions map to 0.
double belt_position(const SimState& state, int slot);

}  // namespace aope::sim

#endif  // AOPE_SIM_HPP_
