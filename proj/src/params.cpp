#include "aope/params.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <ostream>
#include <string>

namespace aope::sim {

namespace pt = boost::property_tree;

namespace {

void read_duration(const pt::ptree& tree, const std::string& key, Duration& d) {
  d.mean_ticks = tree.get<double>("durations." + key + "_mean", d.mean_ticks);
  d.rel_sigma = tree.get<double>("durations." + key + "_rel_sigma", d.rel_sigma);
}

void write_duration(std::ostream& out, const char* key, const Duration& d) {
  out << key << "_mean = " << d.mean_ticks << '\n' << key << "_rel_sigma = " << d.rel_sigma << '\n';
}

}  // namespace

EnvParams parse_env_params(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(std::string("env params: ") + e.what());
  }
  EnvParams p;
  try {
    p.conveyor_length = tree.get("layout.conveyor_length", p.conveyor_length);
    p.port_spacing = tree.get("layout.port_spacing", p.port_spacing);
    p.pr2_pick_position = tree.get("layout.pr2_pick_position", p.pr2_pick_position);
    p.conveyor_ticks_per_slot = tree.get("speed.conveyor_ticks_per_slot", p.conveyor_ticks_per_slot);
    p.carousel_ticks_per_slot = tree.get("speed.carousel_ticks_per_slot", p.carousel_ticks_per_slot);
    p.pr1_travel_ticks = tree.get("speed.pr1_travel_ticks", p.pr1_travel_ticks);
    p.pr2_travel_ticks = tree.get("speed.pr2_travel_ticks", p.pr2_travel_ticks);
    read_duration(tree, "port_setup", p.port_setup);
    read_duration(tree, "port_load", p.port_load);
    read_duration(tree, "pr1_pick", p.pr1_pick);
    read_duration(tree, "pr1_place", p.pr1_place);
    read_duration(tree, "pr2_pick", p.pr2_pick);
    read_duration(tree, "pr2_drop", p.pr2_drop);
    read_duration(tree, "box_replace", p.box_replace);
    p.max_ticks = tree.get("limits.max_ticks", p.max_ticks);
  } catch (const pt::ptree_error& e) {
    throw Error(std::string("env params: ") + e.what());
  }
  validate(p);
  return p;
}

EnvParams load_env_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open env params " + path.string());
  return parse_env_params(in);
}

void write_env_params(std::ostream& out, const EnvParams& p) {
  out << "[layout]\n"
      << "conveyor_length = " << p.conveyor_length << '\n'
      << "port_spacing = " << p.port_spacing << '\n'
      << "pr2_pick_position = " << p.pr2_pick_position << "\n\n"
      << "[speed]\n"
      << "conveyor_ticks_per_slot = " << p.conveyor_ticks_per_slot << '\n'
      << "carousel_ticks_per_slot = " << p.carousel_ticks_per_slot << '\n'
      << "pr1_travel_ticks = " << p.pr1_travel_ticks << '\n'
      << "pr2_travel_ticks = " << p.pr2_travel_ticks << "\n\n"
      << "[durations]\n";
  write_duration(out, "port_setup", p.port_setup);
  write_duration(out, "port_load", p.port_load);
  write_duration(out, "pr1_pick", p.pr1_pick);
  write_duration(out, "pr1_place", p.pr1_place);
  write_duration(out, "pr2_pick", p.pr2_pick);
  write_duration(out, "pr2_drop", p.pr2_drop);
  write_duration(out, "box_replace", p.box_replace);
  out << "\n[limits]\nmax_ticks = " << p.max_ticks << '\n';
}

void validate(const EnvParams& p) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("env params: ") + what);
  };
  require(p.conveyor_length >= 2, "conveyor_length must be >= 2");
  require(p.port_spacing >= 1, "port_spacing must be >= 1");
  require(5 * p.port_spacing < p.conveyor_length - 1, "six ports must fit upstream of the conveyor head");
  require(p.pr2_pick_position >= 0 && p.pr2_pick_position < 28, "pr2_pick_position must be in [0, 28)");
  require(p.conveyor_ticks_per_slot >= 1 && p.carousel_ticks_per_slot >= 1, "speeds must be >= 1 tick per slot");
  require(p.pr1_travel_ticks >= 0 && p.pr2_travel_ticks >= 0, "travel ticks must be >= 0");
  for (const Duration* d : {&p.port_setup, &p.port_load, &p.pr1_pick, &p.pr1_place, &p.pr2_pick, &p.pr2_drop,
                            &p.box_replace}) {
    require(d->mean_ticks > 0.0, "duration means must be positive");
    require(d->rel_sigma >= 0.0, "duration sigma must be non-negative");
  }
  require(p.max_ticks > 0, "max_ticks must be positive");
}

}  // namespace aope::sim
