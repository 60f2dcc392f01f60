#ifndef AOPE_COMMON_HPP_
#define AOPE_COMMON_HPP_

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace aope {

/// The four process controllers, in upstream-to-downstream order.
enum class AgentId : int { FR = 0, PC = 1, PR1 = 2, PR2 = 3 };

inline constexpr int kNumAgents = 4;
inline constexpr std::array<AgentId, kNumAgents> kAllAgents = {AgentId::FR, AgentId::PC, AgentId::PR1,
                                                               AgentId::PR2};

constexpr int index(AgentId id) { return static_cast<int>(id); }

inline std::string_view agent_name(AgentId id) {
  switch (id) {
    case AgentId::FR: return "FR";
    case AgentId::PC: return "PC";
    case AgentId::PR1: return "PR1";
    case AgentId::PR2: return "PR2";
  }
  return "?";
}

inline AgentId agent_from_name(std::string_view name) {
  for (auto id : kAllAgents) {
    if (agent_name(id) == name) return id;
  }
  throw std::invalid_argument("unknown agent name: " + std::string(name));
}

/// Base class of all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Simulation ticks; one tick is 0.1 s.
using Tick = std::int64_t;
inline constexpr double kSecondsPerTick = 0.1;

inline double ticks_to_seconds(Tick t) { return static_cast<double>(t) * kSecondsPerTick; }

/// SplitMix64 finalizer; used to derive independent seeds from (seed, tag) pairs.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) { return mix64(seed ^ mix64(tag)); }

inline std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace aope

#endif  // AOPE_COMMON_HPP_
