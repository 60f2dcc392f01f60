#include "aope/orders.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

namespace aope::orders {

OrderError::OrderError(const std::string& what, int line)
    : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

OrderStats OrderSet::compute_stats(const std::vector<OrderLine>& lines) {
  OrderStats s;
  std::set<int> types, boxes;
  for (const auto& l : lines) {
    s.n_orders += 1;
    s.n_items += l.quantity;
    types.insert(l.type_id);
    boxes.insert(l.box_id);
  }
  s.n_types = static_cast<int>(types.size());
  s.n_shippings = static_cast<int>(boxes.size());
  return s;
}

OrderSet::OrderSet(std::vector<OrderLine> lines) : lines_(std::move(lines)) {
  if (lines_.empty()) throw OrderError("order set is empty");
  std::sort(lines_.begin(), lines_.end(), [](const OrderLine& a, const OrderLine& b) {
    return a.box_id != b.box_id ? a.box_id < b.box_id : a.type_id < b.type_id;
  });
  for (std::size_t i = 0; i < lines_.size(); ++i) {
    const auto& l = lines_[i];
    if (l.quantity <= 0) throw OrderError("non-positive quantity for box " + std::to_string(l.box_id));
    if (l.box_id < 0 || l.type_id < 0) throw OrderError("negative id");
    if (i > 0 && lines_[i - 1].box_id == l.box_id && lines_[i - 1].type_id == l.type_id) {
      throw OrderError("duplicate (box, type) pair (" + std::to_string(l.box_id) + ", " +
                       std::to_string(l.type_id) + ")");
    }
  }
  stats_ = compute_stats(lines_);
  int max_box = 0, max_type = 0;
  for (const auto& l : lines_) {
    max_box = std::max(max_box, l.box_id);
    max_type = std::max(max_type, l.type_id);
  }
  if (max_box + 1 != stats_.n_shippings) throw OrderError("box ids are not dense from 0");
  if (max_type + 1 != stats_.n_types) throw OrderError("type ids are not dense from 0");
}

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& field, int line) {
  std::string t = trim(field);
  if (t.empty()) throw OrderError("empty field", line);
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(t, &used);
  } catch (const std::exception&) {
    throw OrderError("not an integer: '" + t + "'", line);
  }
  if (used != t.size()) throw OrderError("not an integer: '" + t + "'", line);
  return v;
}

}  // namespace

OrderSet parse_orders(std::istream& in) {
  std::string row;
  int line_no = 0;
  if (!std::getline(in, row)) throw OrderError("missing header");
  ++line_no;
  if (trim(row) != "box_id,type_id,qty") throw OrderError("expected header 'box_id,type_id,qty'", line_no);

  std::vector<OrderLine> lines;
  std::set<std::pair<int, int>> seen;
  while (std::getline(in, row)) {
    ++line_no;
    if (trim(row).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(row);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 3) throw OrderError("expected 3 fields, got " + std::to_string(fields.size()), line_no);
    OrderLine l{parse_int(fields[0], line_no), parse_int(fields[1], line_no), parse_int(fields[2], line_no)};
    if (l.box_id < 0 || l.type_id < 0) throw OrderError("negative id", line_no);
    if (l.quantity <= 0) throw OrderError("non-positive quantity", line_no);
    if (!seen.emplace(l.box_id, l.type_id).second) {
      throw OrderError("duplicate (box, type) pair (" + std::to_string(l.box_id) + ", " +
                           std::to_string(l.type_id) + ")",
                       line_no);
    }
    lines.push_back(l);
  }
  return OrderSet(std::move(lines));
}

OrderSet load_orders(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw OrderError("cannot open " + path.string());
  return parse_orders(in);
}

void write_orders(std::ostream& out, const OrderSet& set) {
  out << "box_id,type_id,qty\n";
  for (const auto& l : set.lines()) out << l.box_id << ',' << l.type_id << ',' << l.quantity << '\n';
}

void save_orders(const std::filesystem::path& path, const OrderSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw OrderError("cannot write " + path.string());
  write_orders(out, set);
}

Profile profile_lm() { return {"lm", {179, 201, 16, 42}}; }
Profile profile_hm() { return {"hm", {186, 200, 95, 41}}; }
Profile profile_desk_lm() { return {"desk-lm", {40, 46, 8, 10}}; }
Profile profile_desk_hm() { return {"desk-hm", {40, 46, 24, 10}}; }

Profile profile_by_name(const std::string& name) {
  if (name == "lm") return profile_lm();
  if (name == "hm") return profile_hm();
  if (name == "desk-lm") return profile_desk_lm();
  if (name == "desk-hm") return profile_desk_hm();
  throw OrderError("unknown order profile '" + name + "'");
}

void check_feasible(const OrderStats& t) {
  if (t.n_orders < 1 || t.n_types < 1 || t.n_shippings < 1) throw OrderError("all statistics must be positive");
  if (t.n_orders < t.n_shippings) throw OrderError("n_orders < n_shippings: some box would have no line");
  if (t.n_orders < t.n_types) throw OrderError("n_orders < n_types: some type would have no line");
  if (t.n_items < t.n_orders) throw OrderError("n_items < n_orders: some line would have zero quantity");
  if (static_cast<long long>(t.n_shippings) * t.n_types < t.n_orders) {
    throw OrderError("n_orders exceeds n_shippings * n_types unique pairs");
  }
}

OrderSet generate_orders(const Profile& profile, std::uint64_t seed) {
  const OrderStats& t = profile.target;
  check_feasible(t);
  std::mt19937_64 rng(derive_seed(seed, hash_name("orders")));

  // Lines per box: at least one each, at most n_types.
  std::vector<int> per_box(t.n_shippings, 1);
  for (int extra = t.n_orders - t.n_shippings; extra > 0; --extra) {
    std::vector<int> open;
    for (int b = 0; b < t.n_shippings; ++b)
      if (per_box[b] < t.n_types) open.push_back(b);
    per_box[open[std::uniform_int_distribution<std::size_t>(0, open.size() - 1)(rng)]] += 1;
  }

  // Skewed type popularity over a random permutation of type ids.
  std::vector<int> perm(t.n_types);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> weight(t.n_types);
  for (int k = 0; k < t.n_types; ++k) weight[perm[k]] = 1.0 / std::pow(k + 1.0, 0.8);

  std::vector<std::vector<int>> box_types(t.n_shippings);
  for (int b = 0; b < t.n_shippings; ++b) {
    std::vector<double> w = weight;
    for (int j = 0; j < per_box[b]; ++j) {
      std::discrete_distribution<int> pick(w.begin(), w.end());
      int type = pick(rng);
      box_types[b].push_back(type);
      w[type] = 0.0;
    }
  }

  // Repair coverage: every type must appear in at least one line.
  std::vector<int> type_count(t.n_types, 0);
  for (const auto& ts : box_types)
    for (int ty : ts) type_count[ty] += 1;
  for (int missing = 0; missing < t.n_types; ++missing) {
    if (type_count[missing] > 0) continue;
    std::vector<std::pair<int, int>> donors;  // (box, position)
    for (int b = 0; b < t.n_shippings; ++b)
      for (std::size_t j = 0; j < box_types[b].size(); ++j)
        if (type_count[box_types[b][j]] >= 2) donors.emplace_back(b, static_cast<int>(j));
    auto [b, j] = donors[std::uniform_int_distribution<std::size_t>(0, donors.size() - 1)(rng)];
    type_count[box_types[b][j]] -= 1;
    box_types[b][j] = missing;
    type_count[missing] += 1;
  }

  std::vector<OrderLine> lines;
  lines.reserve(t.n_orders);
  for (int b = 0; b < t.n_shippings; ++b)
    for (int ty : box_types[b]) lines.push_back({b, ty, 1});

  // Quantities: 1 + truncated geometric extra, then repaired to the exact item total.
  const int extra_target = t.n_items - t.n_orders;
  std::geometric_distribution<int> geo(profile.extra_qty_p);
  int extra_sum = 0;
  for (auto& l : lines) {
    int e = std::min(geo(rng), profile.max_qty - 1);
    l.quantity += e;
    extra_sum += e;
  }
  std::uniform_int_distribution<std::size_t> any(0, lines.size() - 1);
  while (extra_sum > extra_target) {
    auto& l = lines[any(rng)];
    if (l.quantity > 1) {
      l.quantity -= 1;
      extra_sum -= 1;
    }
  }
  while (extra_sum < extra_target) {
    lines[any(rng)].quantity += 1;
    extra_sum += 1;
  }
  return OrderSet(std::move(lines));
}

}  // namespace aope::orders
