#ifndef AOPE_ORDERS_HPP_
#define AOPE_ORDERS_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "aope/common.hpp"

namespace aope::orders {

/// One (shipping box, item type) pair with the quantity ordered.
struct OrderLine {
  int box_id = 0;
  int type_id = 0;
  int quantity = 1;

  friend bool operator==(const OrderLine&, const OrderLine&) = default;
};

/// Headline statistics of a picking order set.
struct OrderStats {
  int n_orders = 0;     // unique (box, type) pairs
  int n_items = 0;      // total quantity
  int n_types = 0;      // distinct item types
  int n_shippings = 0;  // distinct shipping boxes

  friend bool operator==(const OrderStats&, const OrderStats&) = default;
};

/// Raised by the loader and the generator; carries the offending CSV line when known.
class OrderError : public Error {
 public:
  OrderError(const std::string& what, int line = 0);
  int line() const { return line_; }

 private:
  int line_;
};

/// A validated batch of picking orders.
///
/// Lines are kept in canonical order (box, then type). Box and type ids are dense:
/// every id in [0, n_shippings) and [0, n_types) is used by at least one line.
class OrderSet {
 public:
  OrderSet() = default;
  /// Validates and canonicalizes `lines`; throws OrderError on duplicates, non-positive
  /// quantities, sparse ids or an empty set.
  explicit OrderSet(std::vector<OrderLine> lines);

  const std::vector<OrderLine>& lines() const { return lines_; }
  const OrderStats& stats() const { return stats_; }
  bool empty() const { return lines_.empty(); }

  /// Recomputes the statistics from the lines.
  static OrderStats compute_stats(const std::vector<OrderLine>& lines);

  friend bool operator==(const OrderSet& a, const OrderSet& b) { return a.lines_ == b.lines_; }

 private:
  std::vector<OrderLine> lines_;
  OrderStats stats_;
};

/// Parses a CSV with header `box_id,type_id,qty`.
OrderSet parse_orders(std::istream& in);
OrderSet load_orders(const std::filesystem::path& path);

/// Canonical CSV serialization (header, LF line endings, lines sorted by box then type).
void write_orders(std::ostream& out, const OrderSet& set);
void save_orders(const std::filesystem::path& path, const OrderSet& set);

/// Target statistics for the generator.
struct Profile {
  std::string name;
  OrderStats target;
  /// Success probability of the geometric distribution used for extra quantities.
  double extra_qty_p = 0.6;
  /// Upper bound on the quantity of a single line before repair.
  int max_qty = 6;
};

/// Table II "Low Mixed" targets: 179 orders, 201 items, 16 types, 42 shippings.
Profile profile_lm();
/// Table II "High Mixed" targets: 186 orders, 200 items, 95 types, 41 shippings.
Profile profile_hm();
/// Reduced low-mix profile used for desk-scale experiments (~40 orders, 8 types).
Profile profile_desk_lm();
/// Reduced high-mix counterpart of profile_desk_lm (same item/box counts, 3x the types).
Profile profile_desk_hm();
/// Looks up one of the named profiles (lm, hm, desk-lm, desk-hm).
Profile profile_by_name(const std::string& name);

/// Throws OrderError if no order set with these statistics exists.
void check_feasible(const OrderStats& target);

/// Draws an order set whose statistics equal `profile.target` exactly.
OrderSet generate_orders(const Profile& profile, std::uint64_t seed);

}  // namespace aope::orders

#endif  // AOPE_ORDERS_HPP_
