#ifndef AOPE_PARAMS_HPP_
#define AOPE_PARAMS_HPP_

#include <filesystem>
#include <iosfwd>

#include "aope/common.hpp"

namespace aope::sim {

/// A stochastic duration: Normal(mean, rel_sigma * mean), truncated at one tick.
struct Duration {
  double mean_ticks = 10.0;
  double rel_sigma = 0.1;
};

/// Kinematic and stochastic parameters of the order-picking line.
///
/// None of these are published; the defaults put a uniformly random controller on the
/// full low-mix order set in the 5,000-6,000 s makespan range.
struct EnvParams {
  // [layout]
  int conveyor_length = 18;     // slots per conveyor; head (PR1 side) is the last slot
  int port_spacing = 3;         // slots between adjacent loading ports; port p sits at p * spacing
  int pr2_pick_position = 14;   // carousel ring position served by PR2 (PR1 places at 0)

  // [speed]
  int conveyor_ticks_per_slot = 10;
  int carousel_ticks_per_slot = 20;
  int pr1_travel_ticks = 100;   // per conveyor of lateral distance
  int pr2_travel_ticks = 80;    // per box slot of distance

  // [durations]
  Duration port_setup{450.0, 0.1};   // item-type replacement at a loading port
  Duration port_load{30.0, 0.1};     // one item from inventory onto the port
  Duration pr1_pick{40.0, 0.1};
  Duration pr1_place{30.0, 0.1};
  Duration pr2_pick{40.0, 0.1};
  Duration pr2_drop{20.0, 0.1};
  Duration box_replace{150.0, 0.1};  // FR swaps a completed box for an empty slot

  // [limits]
  Tick max_ticks = 2'000'000;        // hard cap; exceeding it is treated as a deadlock
};

/// Reads an INI-style parameter file (sections above); absent keys keep their defaults.
EnvParams load_env_params(const std::filesystem::path& path);
EnvParams parse_env_params(std::istream& in);
/// Writes every parameter, so the output fully reproduces the input.
void write_env_params(std::ostream& out, const EnvParams& p);

/// Throws Error on non-physical values (non-positive speeds, ports past the head, ...).
void validate(const EnvParams& p);

}  // namespace aope::sim

#endif  // AOPE_PARAMS_HPP_
