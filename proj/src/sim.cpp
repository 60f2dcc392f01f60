#include "aope/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace aope::sim {

int ShippingBox::total_required() const {
  int n = 0;
  for (int r : required) n += r;
  return n;
}

int ShippingBox::total_unsorted() const {
  int n = 0;
  for (std::size_t j = 0; j < required.size(); ++j) n += required[j] - sorted[j];
  return n;
}

int ShippingBox::need(int type) const {
  for (std::size_t j = 0; j < types.size(); ++j)
    if (types[j] == type) return required[j] - sorted[j];
  return 0;
}

int Conveyor::item_count() const {
  int n = 0;
  for (int s : slots) n += s >= 0;
  return n;
}

int Conveyor::first_index() const {
  for (int i = static_cast<int>(slots.size()) - 1; i >= 0; --i)
    if (slots[i] >= 0) return i;
  return -1;
}

int Conveyor::last_index() const {
  for (int i = 0; i < static_cast<int>(slots.size()); ++i)
    if (slots[i] >= 0) return i;
  return -1;
}

namespace {
int ring(int x) { return ((x % kCarouselSlots) + kCarouselSlots) % kCarouselSlots; }
}  // namespace

int& Carousel::at(int position) { return cells[ring(position - offset)]; }
int Carousel::at(int position) const { return cells[ring(position - offset)]; }

int Carousel::item_count() const {
  int n = 0;
  for (int c : cells) n += c >= 0;
  return n;
}

InvalidDecision::InvalidDecision(AgentId agent, const std::string& what)
    : Error(std::string(agent_name(agent)) + ": " + what), agent_(agent) {}

namespace {

Tick draw(std::mt19937_64& rng, const Duration& d) {
  double v = d.mean_ticks;
  if (d.rel_sigma > 0.0) v = std::normal_distribution<double>(d.mean_ticks, d.rel_sigma * d.mean_ticks)(rng);
  return std::max<Tick>(1, static_cast<Tick>(std::llround(v)));
}

void trace(SimState& s, AgentId agent, int action, const char* event) {
  if (s.record_trace) s.trace.push_back({s.tick, agent, action, event});
}

int port_position(const EnvParams& p, int port) { return port * p.port_spacing; }

// ---------------------------------------------------------------------------------------------
// Masks

ActionMask fr_mask(const SimState& s) {
  ActionMask m(s.n_boxes(), 0);
  bool slot_free = false;
  for (int k = 0; k < kBoxSlots; ++k)
    slot_free |= s.fr.slot_box[k] < 0 && s.fr.replacing_until[k] <= s.tick;
  if (!slot_free) return m;
  for (const auto& b : s.boxes) m[b.id] = b.status == BoxStatus::Unallocated;
  return m;
}

int find_free_port(const SimState& s) {
  // Least-loaded conveyor first, then the free port nearest its head.
  std::array<int, kNumConveyors> order = {0, 1, 2};
  std::array<int, kNumConveyors> load{};
  for (int c = 0; c < kNumConveyors; ++c) {
    load[c] = s.conveyors[c].item_count();
    for (const auto& p : s.conveyors[c].ports) load[c] += p.queued;
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return load[a] < load[b]; });
  for (int c : order)
    for (int p = kPortsPerConveyor - 1; p >= 0; --p)
      if (s.conveyors[c].ports[p].free()) return c * kPortsPerConveyor + p;
  return -1;
}

ActionMask pc_mask(const SimState& s) {
  ActionMask m(s.n_types(), 0);
  if (find_free_port(s) < 0) return m;
  for (int t = 0; t < s.n_types(); ++t) m[t] = s.pending_release[t] > 0;
  return m;
}

ActionMask pr1_mask(const SimState& s) {
  ActionMask m(kNumConveyors, 0);
  if (s.pr1.phase != Pr1Phase::Idle) return m;
  for (int c = 0; c < kNumConveyors; ++c) m[c] = s.conveyors[c].item_count() > 0;
  return m;
}

bool sortable(const SimState& s, int type, int slot) {
  int b = s.fr.slot_box[slot];
  return type >= 0 && b >= 0 && s.boxes[b].need(type) > 0;
}

ActionMask pr2_mask(const SimState& s) {
  ActionMask m(kBoxSlots, 0);
  if (s.pr2.phase != Pr2Phase::Idle) return m;
  for (int c : s.carousel.cells) {
    if (c < 0) continue;
    for (int k = 0; k < kBoxSlots; ++k) m[k] |= sortable(s, c, k);
  }
  return m;
}

bool any(const ActionMask& m) { return std::any_of(m.begin(), m.end(), [](std::uint8_t b) { return b != 0; }); }

// ---------------------------------------------------------------------------------------------
// Decisions

void apply_fr(SimState& s, int box_id) {
  int slot = -1;
  for (int k = 0; k < kBoxSlots && slot < 0; ++k)
    if (s.fr.slot_box[k] < 0 && s.fr.replacing_until[k] <= s.tick) slot = k;
  auto& box = s.boxes[box_id];
  box.status = BoxStatus::Allocated;
  box.slot = slot;
  s.fr.slot_box[slot] = box_id;
  for (std::size_t j = 0; j < box.types.size(); ++j) {
    box.unreleased[j] = box.required[j];
    s.pending_release[box.types[j]] += box.required[j];
  }
  trace(s, AgentId::FR, box_id, "allocate");
}

void apply_pc(SimState& s, int type, int context) {
  auto& port = s.conveyors[context / kPortsPerConveyor].ports[context % kPortsPerConveyor];
  port.type = type;
  port.queued = s.pending_release[type];
  s.pending_release[type] = 0;
  for (int b : s.fr.slot_box) {
    if (b < 0) continue;
    auto& box = s.boxes[b];
    for (std::size_t j = 0; j < box.types.size(); ++j)
      if (box.types[j] == type) box.unreleased[j] = 0;
  }
  port.phase = PortPhase::Setup;
  port.busy_until = s.tick + draw(s.rng.port_setup, s.params.port_setup);
  trace(s, AgentId::PC, type, "load");
}

void apply_pr1(SimState& s, int conveyor) {
  auto& r = s.pr1;
  r.target = conveyor;
  r.run_type = -1;
  int dist = std::abs(conveyor - r.location);
  if (dist > 0) {
    r.direction = conveyor > r.location ? 1 : -1;
    r.phase = Pr1Phase::Moving;
    r.busy_until = s.tick + static_cast<Tick>(dist) * s.params.pr1_travel_ticks;
  } else {
    r.phase = Pr1Phase::WaitHead;
  }
  trace(s, AgentId::PR1, conveyor, "select");
}

void apply_pr2(SimState& s, int slot) {
  s.pr2.target = slot;
  s.pr2.phase = Pr2Phase::WaitItem;
  trace(s, AgentId::PR2, slot, "select");
}

// ---------------------------------------------------------------------------------------------
// Dynamics

void advance_conveyors(SimState& s) {
  if (s.tick % s.params.conveyor_ticks_per_slot != 0) return;
  for (auto& c : s.conveyors) {
    for (int i = static_cast<int>(c.slots.size()) - 2; i >= 0; --i) {
      if (c.slots[i] >= 0 && c.slots[i + 1] < 0) {
        c.slots[i + 1] = c.slots[i];
        c.slots[i] = -1;
      }
    }
  }
}

void advance_ports(SimState& s) {
  for (auto& c : s.conveyors) {
    for (int p = 0; p < kPortsPerConveyor; ++p) {
      auto& port = c.ports[p];
      if (port.phase == PortPhase::Setup && s.tick >= port.busy_until) {
        port.phase = PortPhase::Loading;
        port.busy_until = s.tick + draw(s.rng.port_load, s.params.port_load);
      }
      if (port.phase == PortPhase::Loading && s.tick >= port.busy_until) port.phase = PortPhase::Ready;
      if (port.phase == PortPhase::Ready) {
        int& slot = c.slots[port_position(s.params, p)];
        if (slot < 0) {
          slot = port.type;
          port.queued -= 1;
          if (port.queued > 0) {
            port.phase = PortPhase::Loading;
            port.busy_until = s.tick + draw(s.rng.port_load, s.params.port_load);
          } else {
            port.phase = PortPhase::Idle;
            port.type = -1;
          }
        }
      }
    }
  }
}

void advance_carousel(SimState& s) {
  if (s.tick % s.params.carousel_ticks_per_slot == 0) s.carousel.offset = ring(s.carousel.offset + 1);
}

void advance_pr1(SimState& s) {
  auto& r = s.pr1;
  const int head = s.params.conveyor_length - 1;
  if (r.phase == Pr1Phase::Moving && s.tick >= r.busy_until) {
    r.location = r.target;
    r.phase = Pr1Phase::WaitHead;
  }
  if (r.phase == Pr1Phase::WaitHead) {
    auto& c = s.conveyors[r.target];
    int f = c.first_index();
    if (f < 0 || (r.run_type >= 0 && c.slots[f] != r.run_type)) {
      r.phase = Pr1Phase::Idle;
      r.run_type = -1;
    } else if (f == head) {
      r.held_type = c.slots[f];
      r.run_type = c.slots[f];
      c.slots[f] = -1;
      r.phase = Pr1Phase::Picking;
      r.busy_until = s.tick + draw(s.rng.pr1_pick, s.params.pr1_pick);
    }
    return;
  }
  if (r.phase == Pr1Phase::Picking && s.tick >= r.busy_until) {
    r.phase = Pr1Phase::Placing;
    r.busy_until = s.tick + draw(s.rng.pr1_place, s.params.pr1_place);
  }
  if (r.phase == Pr1Phase::Placing && s.tick >= r.busy_until) r.phase = Pr1Phase::WaitCarousel;
  if (r.phase == Pr1Phase::WaitCarousel) {
    int& cell = s.carousel.at(0);
    if (cell < 0) {
      cell = r.held_type;
      r.held_type = -1;
      const auto& c = s.conveyors[r.target];
      int f = c.first_index();
      if (f >= 0 && c.slots[f] == r.run_type) {
        r.phase = Pr1Phase::WaitHead;
      } else {
        r.phase = Pr1Phase::Idle;
        r.run_type = -1;
      }
    }
  }
}

void advance_pr2(SimState& s) {
  auto& r = s.pr2;
  if (r.phase == Pr2Phase::WaitItem) {
    int& cell = s.carousel.at(s.params.pr2_pick_position);
    if (sortable(s, cell, r.target)) {
      r.held_type = cell;
      cell = -1;
      r.phase = Pr2Phase::Picking;
      r.busy_until = s.tick + draw(s.rng.pr2_pick, s.params.pr2_pick);
    }
    return;
  }
  if (r.phase == Pr2Phase::Picking && s.tick >= r.busy_until) {
    int dist = std::abs(r.target - r.location);
    if (dist > 0) {
      r.direction = r.target > r.location ? 1 : -1;
      r.phase = Pr2Phase::Moving;
      r.busy_until = s.tick + static_cast<Tick>(dist) * s.params.pr2_travel_ticks;
    } else {
      r.phase = Pr2Phase::Dropping;
      r.busy_until = s.tick + draw(s.rng.pr2_drop, s.params.pr2_drop);
    }
    return;
  }
  if (r.phase == Pr2Phase::Moving && s.tick >= r.busy_until) {
    r.location = r.target;
    r.phase = Pr2Phase::Dropping;
    r.busy_until = s.tick + draw(s.rng.pr2_drop, s.params.pr2_drop);
    return;
  }
  if (r.phase == Pr2Phase::Dropping && s.tick >= r.busy_until) {
    auto& box = s.boxes[s.fr.slot_box[r.target]];
    for (std::size_t j = 0; j < box.types.size(); ++j)
      if (box.types[j] == r.held_type) box.sorted[j] += 1;
    r.held_type = -1;
    r.sorted_total += 1;
    r.phase = Pr2Phase::Idle;
    trace(s, AgentId::PR2, r.target, "sort");
    if (box.total_unsorted() == 0) {
      box.status = BoxStatus::Completed;
      s.fr.slot_box[r.target] = -1;
      s.fr.replacing_until[r.target] = s.tick + draw(s.rng.box_replace, s.params.box_replace);
      s.completed_boxes += 1;
      trace(s, AgentId::FR, box.id, "box_complete");
    }
  }
}

void issue_requests(SimState& s) {
  auto issue = [&](AgentId a, ActionMask m, int context = -1) {
    if (s.outstanding[index(a)] || !any(m)) return;
    s.outstanding[index(a)] = DecisionRequest{s.tick, a, std::move(m), context};
  };
  issue(AgentId::FR, fr_mask(s));
  int port = find_free_port(s);
  if (port >= 0 && !s.outstanding[index(AgentId::PC)]) {
    ActionMask m = pc_mask(s);
    if (any(m)) s.pc_context = port;
    issue(AgentId::PC, std::move(m), port);
  }
  issue(AgentId::PR1, pr1_mask(s));
  issue(AgentId::PR2, pr2_mask(s));
}

}  // namespace

SimState reset(const orders::OrderSet& orders, std::uint64_t seed, const EnvParams& params) {
  if (orders.empty()) throw Error("reset: empty order set");
  validate(params);
  SimState s;
  s.params = params;
  s.stats = orders.stats();
  s.boxes.resize(s.stats.n_shippings);
  for (int b = 0; b < s.stats.n_shippings; ++b) s.boxes[b].id = b;
  for (const auto& l : orders.lines()) {
    auto& box = s.boxes[l.box_id];
    box.types.push_back(l.type_id);
    box.required.push_back(l.quantity);
    box.sorted.push_back(0);
    box.unreleased.push_back(0);
  }
  for (auto& c : s.conveyors) c.slots.assign(params.conveyor_length, -1);
  s.pending_release.assign(s.stats.n_types, 0);

  auto stream = [&](const char* name) { return std::mt19937_64(derive_seed(seed, hash_name(name))); };
  s.rng.port_setup = stream("port_setup");
  s.rng.port_load = stream("port_load");
  s.rng.pr1_pick = stream("pr1_pick");
  s.rng.pr1_place = stream("pr1_place");
  s.rng.pr2_pick = stream("pr2_pick");
  s.rng.pr2_drop = stream("pr2_drop");
  s.rng.box_replace = stream("box_replace");

  issue_requests(s);
  return s;
}

StepResult step(SimState& s, const Decisions& decisions) {
  if (s.done) throw Error("step: episode already finished");
  for (auto a : kAllAgents) {
    const auto& req = s.outstanding[index(a)];
    const auto& d = decisions[index(a)];
    if (req && !d) throw InvalidDecision(a, "outstanding request was not answered");
    if (!req && d) throw InvalidDecision(a, "decision supplied without a request");
    if (d && (*d < 0 || *d >= static_cast<int>(req->valid_actions.size()) || !req->valid_actions[*d])) {
      throw InvalidDecision(a, "action " + std::to_string(*d) + " is masked out");
    }
  }
  for (auto a : kAllAgents) {
    const auto& d = decisions[index(a)];
    if (!d) continue;
    switch (a) {
      case AgentId::FR: apply_fr(s, *d); break;
      case AgentId::PC: apply_pc(s, *d, s.outstanding[index(a)]->context); break;
      case AgentId::PR1: apply_pr1(s, *d); break;
      case AgentId::PR2: apply_pr2(s, *d); break;
    }
    s.outstanding[index(a)].reset();
  }

  s.tick += 1;
  if (s.tick > s.params.max_ticks) throw Error("simulation exceeded max_ticks; the line is deadlocked");
  advance_conveyors(s);
  advance_ports(s);
  advance_carousel(s);
  advance_pr1(s);
  advance_pr2(s);

  if (s.completed_boxes == s.n_boxes()) {
    s.done = true;
    trace(s, AgentId::PR2, -1, "done");
    return {{}, true};
  }
  issue_requests(s);
  return {outstanding_requests(s), false};
}

std::vector<DecisionRequest> outstanding_requests(const SimState& s) {
  std::vector<DecisionRequest> out;
  for (const auto& r : s.outstanding)
    if (r) out.push_back(*r);
  return out;
}

ActionMask valid_actions(const SimState& s, AgentId agent) {
  if (s.done) {
    return ActionMask(action_space(s.stats, agent).size, 0);
  }
  switch (agent) {
    case AgentId::FR: return fr_mask(s);
    case AgentId::PC: return pc_mask(s);
    case AgentId::PR1: return pr1_mask(s);
    case AgentId::PR2: return pr2_mask(s);
  }
  return {};
}

ActionSpace action_space(const orders::OrderStats& stats, AgentId agent) {
  switch (agent) {
    case AgentId::FR: return {agent, stats.n_shippings, "allocate one unallocated shipping box"};
    case AgentId::PC: return {agent, stats.n_types, "item type to load at the offered port"};
    case AgentId::PR1: return {agent, kNumConveyors, "conveyor to pick the next same-type batch from"};
    case AgentId::PR2: return {agent, kBoxSlots, "allocated box slot to sort the next item into"};
  }
  return {agent, 0, ""};
}

// ---------------------------------------------------------------------------------------------
// Observations

double belt_position(const SimState& s, int slot) {
  return slot < 0 ? 0.0 : static_cast<double>(slot + 1) / s.params.conveyor_length;
}

namespace {

double port_location(int port) { return port < 0 ? 0.0 : static_cast<double>(port + 1) / kPortsPerConveyor; }

/// Items queued in work-in-progress ports and the most downstream WIP port, per conveyor.
std::pair<int, int> wip_summary(const Conveyor& c) {
  int items = 0, loc = -1;
  for (int p = 0; p < kPortsPerConveyor; ++p) {
    if (c.ports[p].work_in_progress()) {
      items += c.ports[p].queued;
      loc = p;
    }
  }
  return {items, loc};
}

void fr_features(const SimState& s, std::vector<double>& f) {
  std::vector<std::uint8_t> unsorted_types(s.n_types(), 0), waiting_types(s.n_types(), 0),
      unallocated_types(s.n_types(), 0);
  int unsorted = 0, waiting = 0, n_unalloc = 0, unalloc_items = 0;
  for (const auto& b : s.boxes) {
    if (b.status == BoxStatus::Allocated) {
      for (std::size_t j = 0; j < b.types.size(); ++j) {
        int left = b.required[j] - b.sorted[j];
        unsorted += left;
        if (left > 0) unsorted_types[b.types[j]] = 1;
        waiting += b.unreleased[j];
        if (b.unreleased[j] > 0) waiting_types[b.types[j]] = 1;
      }
    } else if (b.status == BoxStatus::Unallocated) {
      n_unalloc += 1;
      unalloc_items += b.total_required();
      for (int t : b.types) unallocated_types[t] = 1;
    }
  }
  auto count = [](const std::vector<std::uint8_t>& v) {
    return static_cast<double>(std::count(v.begin(), v.end(), std::uint8_t{1}));
  };
  f.push_back(unsorted);
  f.push_back(count(unsorted_types));
  f.push_back(waiting);
  f.push_back(count(waiting_types));
  f.push_back(n_unalloc);
  f.push_back(unalloc_items);
  f.push_back(count(unallocated_types));
}

void pc_features(const SimState& s, std::vector<double>& f) {
  const int ctx_conveyor = s.pc_context / kPortsPerConveyor;
  f.push_back(static_cast<double>(ctx_conveyor) / (kNumConveyors - 1));
  for (const auto& c : s.conveyors) f.push_back(c.item_count());
  for (const auto& c : s.conveyors) {
    f.push_back(belt_position(s, c.first_index()));
    f.push_back(belt_position(s, c.last_index()));
  }
  for (const auto& port : s.conveyors[ctx_conveyor].ports) {
    f.push_back(port.queued);
    f.push_back(port.queued > 0 ? 1.0 : 0.0);
  }
  for (const auto& c : s.conveyors) {
    auto [items, loc] = wip_summary(c);
    f.push_back(items);
    f.push_back(port_location(loc));
  }
}

void pr1_features(const SimState& s, std::vector<double>& f) {
  f.push_back(static_cast<double>(s.pr1.location) / (kNumConveyors - 1));
  f.push_back(s.pr1.direction);
  f.push_back(s.carousel.item_count());
  for (const auto& c : s.conveyors) f.push_back(c.item_count());
  for (const auto& c : s.conveyors) {
    int first = c.first_index();
    int run = 0;
    if (first >= 0) {
      for (int i = first; i >= 0; --i) {
        if (c.slots[i] < 0) continue;
        if (c.slots[i] != c.slots[first]) break;
        run += 1;
      }
    }
    f.push_back(belt_position(s, first));
    f.push_back(run);
  }
  for (const auto& c : s.conveyors) f.push_back(belt_position(s, c.last_index()));
  for (int p = 0; p < kPortsPerConveyor; ++p) {
    int q = 0;
    for (const auto& c : s.conveyors) q += c.ports[p].queued;
    f.push_back(q);
  }
  for (const auto& c : s.conveyors) {
    auto [items, loc] = wip_summary(c);
    f.push_back(items);
    f.push_back(port_location(loc));
  }
}

void pr2_features(const SimState& s, std::vector<double>& f) {
  f.push_back(static_cast<double>(s.pr2.location) / (kBoxSlots - 1));
  f.push_back(s.pr2.direction);
  f.push_back(s.pr2.sorted_total);
  // Row k: the item that reaches the pick position after k carousel moves.
  for (int k = 0; k < kCarouselSlots; ++k) {
    int type = s.carousel.at(s.params.pr2_pick_position - k);
    for (int slot = 0; slot < kBoxSlots; ++slot) f.push_back(sortable(s, type, slot) ? 1.0 : 0.0);
  }
  for (int slot = 0; slot < kBoxSlots; ++slot) {
    int b = s.fr.slot_box[slot];
    f.push_back(b >= 0 ? s.boxes[b].total_unsorted() : 0.0);
  }
}

void features(const SimState& s, AgentId agent, std::vector<double>& f) {
  switch (agent) {
    case AgentId::FR: fr_features(s, f); break;
    case AgentId::PC: pc_features(s, f); break;
    case AgentId::PR1: pr1_features(s, f); break;
    case AgentId::PR2: pr2_features(s, f); break;
  }
}

double time_step(const SimState& s) { return ticks_to_seconds(s.tick) / 1000.0; }

}  // namespace

std::vector<double> Observation::input() const {
  std::vector<double> x = features;
  x.push_back(time_step);
  return x;
}

Observation observe(const SimState& s, AgentId agent) {
  Observation o;
  o.agent = agent;
  o.features.reserve(feature_count(agent));
  features(s, agent, o.features);
  o.time_step = time_step(s);
  o.action_mask = valid_actions(s, agent);
  return o;
}

std::vector<double> global_state(const SimState& s) {
  std::vector<double> g;
  g.reserve(kGlobalStateDim);
  for (auto a : kAllAgents) features(s, a, g);
  g.push_back(time_step(s));
  return g;
}

ItemCensus census(const SimState& s) {
  ItemCensus c;
  for (const auto& b : s.boxes) {
    for (std::size_t j = 0; j < b.types.size(); ++j) {
      c.boxed += b.sorted[j];
      c.unreleased += b.status == BoxStatus::Unallocated ? b.required[j] : b.unreleased[j];
    }
  }
  for (const auto& conv : s.conveyors) {
    c.conveyor += conv.item_count();
    for (const auto& p : conv.ports) c.port_queue += p.queued;
  }
  c.pr1 = s.pr1.held_type >= 0;
  c.carousel = s.carousel.item_count();
  c.pr2 = s.pr2.held_type >= 0;
  return c;
}

std::uint64_t state_hash(const SimState& s) {
  std::uint64_t h = 0x12345678ULL;
  auto mix = [&h](std::int64_t v) { h = mix64(h ^ static_cast<std::uint64_t>(v)); };
  mix(s.tick);
  for (const auto& b : s.boxes) {
    mix(static_cast<int>(b.status));
    mix(b.slot);
    for (int v : b.sorted) mix(v);
    for (int v : b.unreleased) mix(v);
  }
  for (int k = 0; k < kBoxSlots; ++k) {
    mix(s.fr.slot_box[k]);
    mix(s.fr.replacing_until[k]);
  }
  for (const auto& c : s.conveyors) {
    for (int v : c.slots) mix(v);
    for (const auto& p : c.ports) {
      mix(p.type);
      mix(p.queued);
      mix(static_cast<int>(p.phase));
      mix(p.busy_until);
    }
  }
  for (int v : s.carousel.cells) mix(v);
  mix(s.carousel.offset);
  for (auto v : {s.pr1.location, s.pr1.direction, static_cast<int>(s.pr1.phase), s.pr1.target, s.pr1.run_type,
                 s.pr1.held_type})
    mix(v);
  mix(s.pr1.busy_until);
  for (auto v : {s.pr2.location, s.pr2.direction, static_cast<int>(s.pr2.phase), s.pr2.target, s.pr2.held_type,
                 s.pr2.sorted_total})
    mix(v);
  mix(s.pr2.busy_until);
  for (int v : s.pending_release) mix(v);
  return h;
}

}  // namespace aope::sim
