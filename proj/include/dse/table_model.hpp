#pragma once

// Index sets, observed counts, the count-distribution (CD) map and the
// assumption validators for a two-source contingency table.
//
// Full-table enumeration order (used by FullTable storage, design-matrix rows
// and the table output file): quadrants (i,j) = (1,1), (1,0), (0,1), (0,0);
// within a quadrant k ascending, then l ascending.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dse/errors.hpp"

namespace dse {

struct Dims {
  int n_a = 1;
  int n_b = 1;

  constexpr std::size_t quadrant_size() const noexcept {
    return static_cast<std::size_t>(n_a) * static_cast<std::size_t>(n_b);
  }
  constexpr std::size_t full_size() const noexcept { return 4 * quadrant_size(); }
  constexpr std::size_t param_count() const noexcept {
    return quadrant_size() + static_cast<std::size_t>(n_a) + static_cast<std::size_t>(n_b);
  }

  friend constexpr auto operator<=>(const Dims&, const Dims&) = default;
};

inline Dims make_dims(int n_a, int n_b) {
  if (n_a < 1 || n_b < 1)
    throw DomainError("dims must be positive, got " + std::to_string(n_a) + "x" + std::to_string(n_b));
  return Dims{n_a, n_b};
}

inline std::string to_string(const Dims& d) {
  return std::to_string(d.n_a) + "x" + std::to_string(d.n_b);
}

/// Quadrant position of (i,j) in the enumeration order.
constexpr int quadrant_rank(int i, int j) noexcept { return (1 - i) * 2 + (1 - j); }

struct FullIndex {
  int i = 1;
  int j = 1;
  int k = 1;
  int l = 1;

  friend constexpr auto operator<=>(const FullIndex&, const FullIndex&) = default;

  bool valid(const Dims& d) const noexcept {
    return (i == 0 || i == 1) && (j == 0 || j == 1) && k >= 1 && k <= d.n_a && l >= 1 && l <= d.n_b;
  }

  std::size_t flat(const Dims& d) const noexcept {
    return static_cast<std::size_t>(quadrant_rank(i, j)) * d.quadrant_size() +
           static_cast<std::size_t>(k - 1) * static_cast<std::size_t>(d.n_b) +
           static_cast<std::size_t>(l - 1);
  }

  static FullIndex from_flat(std::size_t idx, const Dims& d) noexcept {
    const std::size_t q = idx / d.quadrant_size();
    const std::size_t r = idx % d.quadrant_size();
    const int i = q < 2 ? 1 : 0;
    const int j = (q % 2 == 0) ? 1 : 0;
    return FullIndex{i, j, static_cast<int>(r / d.n_b) + 1, static_cast<int>(r % d.n_b) + 1};
  }
};

/// Coordinate of an observed count. Negative k or l are missing codes.
struct DataIndex {
  int i = 1;
  int j = 1;
  int k = 1;
  int l = 1;

  friend constexpr auto operator<=>(const DataIndex&, const DataIndex&) = default;
};

inline std::string to_string(const FullIndex& v) {
  return "(" + std::to_string(v.i) + "," + std::to_string(v.j) + "," + std::to_string(v.k) + "," +
         std::to_string(v.l) + ")";
}
inline std::string to_string(const DataIndex& u) {
  return "(" + std::to_string(u.i) + "," + std::to_string(u.j) + "," + std::to_string(u.k) + "," +
         std::to_string(u.l) + ")";
}

/// Throws StructuralError for (0,0,.,.) keys and DomainError for any other malformed key.
inline void check_data_index(const DataIndex& u, const Dims& d) {
  if ((u.i != 0 && u.i != 1) || (u.j != 0 && u.j != 1))
    throw DomainError("data index " + to_string(u) + ": inclusion flags must be 0 or 1");
  if (u.i == 0 && u.j == 0)
    throw StructuralError("data index " + to_string(u) +
                          " lies in the (0,0) quadrant; units missing from both sources are never "
                          "recorded (S3)");
  if (u.k == 0 || u.k > d.n_a || u.l == 0 || u.l > d.n_b)
    throw DomainError("data index " + to_string(u) + " has a category outside " + to_string(d));
  if (u.i == 0 && u.k > 0)
    throw DomainError("data index " + to_string(u) + ": a unit absent from A cannot carry an A category");
  if (u.j == 0 && u.l > 0)
    throw DomainError("data index " + to_string(u) + ": a unit absent from B cannot carry a B category");
}

class ObservedData {
 public:
  ObservedData() = default;
  ObservedData(Dims dims, std::map<DataIndex, double> counts) : dims_(dims), counts_(std::move(counts)) {
    make_dims(dims_.n_a, dims_.n_b);
    for (const auto& [u, x] : counts_) {
      check_data_index(u, dims_);
      if (!std::isfinite(x) || x < 0.0)
        throw DomainError("count at " + to_string(u) + " must be finite and nonnegative");
    }
  }

  const Dims& dims() const noexcept { return dims_; }
  const std::map<DataIndex, double>& counts() const noexcept { return counts_; }

  /// x_u, or 0 when u carries no record.
  double value(const DataIndex& u) const {
    auto it = counts_.find(u);
    return it == counts_.end() ? 0.0 : it->second;
  }
  bool contains(const DataIndex& u) const { return counts_.count(u) != 0; }

  double total() const {
    double s = 0.0;
    for (const auto& kv : counts_) s += kv.second;
    return s;
  }

  friend bool operator==(const ObservedData&, const ObservedData&) = default;

 private:
  Dims dims_{};
  std::map<DataIndex, double> counts_;
};

/// Dense nonnegative table over the full index set.
class FullTable {
 public:
  FullTable() = default;
  explicit FullTable(Dims dims, double fill = 0.0) : dims_(dims), values_(dims.full_size(), fill) {}
  FullTable(Dims dims, std::vector<double> values) : dims_(dims), values_(std::move(values)) {
    if (values_.size() != dims_.full_size())
      throw DomainError("table has " + std::to_string(values_.size()) + " values, expected " +
                        std::to_string(dims_.full_size()));
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return values_.size(); }

  double& operator[](const FullIndex& v) { return values_[v.flat(dims_)]; }
  double operator[](const FullIndex& v) const { return values_[v.flat(dims_)]; }
  double& at(std::size_t flat) { return values_[flat]; }
  double at(std::size_t flat) const { return values_[flat]; }
  double operator()(int i, int j, int k, int l) const { return (*this)[FullIndex{i, j, k, l}]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  friend bool operator==(const FullTable&, const FullTable&) = default;

 private:
  Dims dims_{};
  std::vector<double> values_;
};

class CDMap {
 public:
  struct Entry {
    DataIndex key;
    std::vector<FullIndex> targets;  // sorted, unique
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  CDMap() = default;
  CDMap(Dims dims, std::map<DataIndex, std::vector<FullIndex>> forward) : dims_(dims) {
    make_dims(dims_.n_a, dims_.n_b);
    entries_.reserve(forward.size());
    for (auto& [u, targets] : forward) {
      std::sort(targets.begin(), targets.end());
      targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
      if (targets.empty()) throw DomainError("CD(" + to_string(u) + ") is empty");
      for (const auto& v : targets)
        if (!v.valid(dims_))
          throw DomainError("CD(" + to_string(u) + ") contains " + to_string(v) + ", outside " +
                            to_string(dims_));
      entries_.push_back(Entry{u, std::move(targets)});
    }
  }

  const Dims& dims() const noexcept { return dims_; }
  std::span<const Entry> entries() const noexcept { return entries_; }

  const Entry* find(const DataIndex& u) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), u,
                               [](const Entry& e, const DataIndex& key) { return e.key < key; });
    return (it != entries_.end() && it->key == u) ? &*it : nullptr;
  }
  bool contains(const DataIndex& u) const { return find(u) != nullptr; }

  const std::vector<FullIndex>& forward(const DataIndex& u) const {
    const Entry* e = find(u);
    if (!e) throw DomainError("no CD entry for " + to_string(u));
    return e->targets;
  }

  bool maps_to(const DataIndex& u, const FullIndex& v) const {
    const auto& t = forward(u);
    return std::binary_search(t.begin(), t.end(), v);
  }

  friend bool operator==(const CDMap&, const CDMap&) = default;

 private:
  Dims dims_{};
  std::vector<Entry> entries_;  // sorted by key
};

/// CD map for the single missing code -1: every -1 slot expands over all
/// categories of its source while (i,j) and observed slots stay fixed.
inline CDMap build_standard_cd(const ObservedData& data) {
  const Dims d = data.dims();
  std::map<DataIndex, std::vector<FullIndex>> forward;
  for (const auto& [u, x] : data.counts()) {
    (void)x;
    if (u.i == 0 && u.j == 0)
      throw StructuralError("data index " + to_string(u) + " lies in the (0,0) quadrant (S3)");
    if ((u.k < 0 && u.k != -1) || (u.l < 0 && u.l != -1))
      throw UnsupportedConventionError("missing code in " + to_string(u) +
                                       " is not -1; supply an explicit CD-map file (load_explicit_cd)");
    std::vector<FullIndex> targets;
    const int k_lo = u.k < 0 ? 1 : u.k, k_hi = u.k < 0 ? d.n_a : u.k;
    const int l_lo = u.l < 0 ? 1 : u.l, l_hi = u.l < 0 ? d.n_b : u.l;
    for (int k = k_lo; k <= k_hi; ++k)
      for (int l = l_lo; l <= l_hi; ++l) targets.push_back(FullIndex{u.i, u.j, k, l});
    forward.emplace(u, std::move(targets));
  }
  return CDMap(d, std::move(forward));
}

/// CD^-(v): data coordinates with a positive count that may be distributed to v.
inline std::vector<DataIndex> cd_minus(const CDMap& cd, const ObservedData& data, const FullIndex& v) {
  std::vector<DataIndex> out;
  for (const auto& e : cd.entries())
    if (data.value(e.key) > 0.0 && std::binary_search(e.targets.begin(), e.targets.end(), v))
      out.push_back(e.key);
  return out;
}

/// Row labels k with (1,0,k,1) in CD(u); u must be a (1,0,.,.) coordinate.
inline std::vector<int> cd_b0(const CDMap& cd, const DataIndex& u) {
  if (u.i != 1 || u.j != 0) throw DomainError("cd_b0 needs a (1,0,.,.) coordinate, got " + to_string(u));
  const auto& t = cd.forward(u);
  std::vector<int> ks;
  for (int k = 1; k <= cd.dims().n_a; ++k)
    if (std::binary_search(t.begin(), t.end(), FullIndex{1, 0, k, 1})) ks.push_back(k);
  return ks;
}

/// Column labels l with (0,1,1,l) in CD(u); u must be a (0,1,.,.) coordinate.
inline std::vector<int> cd_a0(const CDMap& cd, const DataIndex& u) {
  if (u.i != 0 || u.j != 1) throw DomainError("cd_a0 needs a (0,1,.,.) coordinate, got " + to_string(u));
  const auto& t = cd.forward(u);
  std::vector<int> ls;
  for (int l = 1; l <= cd.dims().n_b; ++l)
    if (std::binary_search(t.begin(), t.end(), FullIndex{0, 1, 1, l})) ls.push_back(l);
  return ls;
}

/// CD^-_{B=0}(k): (1,0,.,.) coordinates with positive count whose row set contains k.
inline std::vector<DataIndex> cd_b0_minus(const CDMap& cd, const ObservedData& data, int k) {
  std::vector<DataIndex> out;
  for (const auto& e : cd.entries()) {
    if (e.key.i != 1 || e.key.j != 0 || !(data.value(e.key) > 0.0)) continue;
    const auto ks = cd_b0(cd, e.key);
    if (std::binary_search(ks.begin(), ks.end(), k)) out.push_back(e.key);
  }
  return out;
}

inline std::vector<DataIndex> cd_a0_minus(const CDMap& cd, const ObservedData& data, int l) {
  std::vector<DataIndex> out;
  for (const auto& e : cd.entries()) {
    if (e.key.i != 0 || e.key.j != 1 || !(data.value(e.key) > 0.0)) continue;
    const auto ls = cd_a0(cd, e.key);
    if (std::binary_search(ls.begin(), ls.end(), l)) out.push_back(e.key);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validators. Failures are report entries, never exceptions.

struct AssumptionCheck {
  std::string id;  // "S1".."S4", "P1".."P3"
  bool passed = true;
  std::string detail;
  std::optional<DataIndex> witness_u;
  std::optional<FullIndex> witness_v;
};

struct ValidationReport {
  std::vector<AssumptionCheck> checks;

  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }
  const AssumptionCheck* find(const std::string& id) const {
    for (const auto& c : checks)
      if (c.id == id) return &c;
    return nullptr;
  }
  bool passed(const std::string& id) const {
    const auto* c = find(id);
    return c && c->passed;
  }
};

inline ValidationReport validate_structural(const CDMap& cd) {
  const Dims d = cd.dims();
  ValidationReport rep;
  rep.checks.push_back({"S1", true, "model choice - always satisfied by this artifact (maximal model)", {}, {}});

  AssumptionCheck s2{"S2", true, "every CD target shares (i,j) with its data coordinate", {}, {}};
  AssumptionCheck s3{"S3", true, "no CD target lies in the (0,0) quadrant", {}, {}};
  AssumptionCheck s4{"S4", true, "single-source targets cover whole rows / columns", {}, {}};

  for (const auto& e : cd.entries()) {
    for (const auto& v : e.targets) {
      if (s2.passed && (v.i != e.key.i || v.j != e.key.j)) {
        s2.passed = false;
        s2.detail = "CD" + to_string(e.key) + " contains " + to_string(v);
        s2.witness_u = e.key;
        s2.witness_v = v;
      }
      if (s3.passed && v.i == 0 && v.j == 0) {
        s3.passed = false;
        s3.detail = "CD" + to_string(e.key) + " contains " + to_string(v);
        s3.witness_u = e.key;
        s3.witness_v = v;
      }
      if (!s4.passed) continue;
      // (1,0) targets need the full l-range of their row; (0,1) targets the full k-range of their column.
      if (v.i == 1 && v.j == 0) {
        for (int c = 1; c <= d.n_b && s4.passed; ++c) {
          FullIndex w{1, 0, v.k, c};
          if (!std::binary_search(e.targets.begin(), e.targets.end(), w)) {
            s4.passed = false;
            s4.detail = "CD" + to_string(e.key) + " contains " + to_string(v) + " but not " + to_string(w);
            s4.witness_u = e.key;
            s4.witness_v = w;
          }
        }
      } else if (v.i == 0 && v.j == 1) {
        for (int c = 1; c <= d.n_a && s4.passed; ++c) {
          FullIndex w{0, 1, c, v.l};
          if (!std::binary_search(e.targets.begin(), e.targets.end(), w)) {
            s4.passed = false;
            s4.detail = "CD" + to_string(e.key) + " contains " + to_string(v) + " but not " + to_string(w);
            s4.witness_u = e.key;
            s4.witness_v = w;
          }
        }
      }
    }
  }
  rep.checks.push_back(std::move(s2));
  rep.checks.push_back(std::move(s3));
  rep.checks.push_back(std::move(s4));
  return rep;
}

/// P1-P3: sufficient conditions for strictly positive sub-map fixed points.
inline ValidationReport validate_positive(const CDMap& cd, const ObservedData& data) {
  const Dims d = cd.dims();
  ValidationReport rep;

  AssumptionCheck p1{"P1", true, "every matched cell has a positive singleton count", {}, {}};
  std::vector<char> has_singleton(d.quadrant_size(), 0);
  for (const auto& e : cd.entries()) {
    if (e.targets.size() != 1 || !(data.value(e.key) > 0.0)) continue;
    const auto& v = e.targets.front();
    if (v.i == 1 && v.j == 1) has_singleton[static_cast<std::size_t>(v.k - 1) * d.n_b + (v.l - 1)] = 1;
  }
  for (int k = 1; k <= d.n_a && p1.passed; ++k)
    for (int l = 1; l <= d.n_b && p1.passed; ++l)
      if (!has_singleton[static_cast<std::size_t>(k - 1) * d.n_b + (l - 1)]) {
        p1.passed = false;
        p1.witness_v = FullIndex{1, 1, k, l};
        p1.detail = "no positive singleton count maps to " + to_string(*p1.witness_v);
      }

  AssumptionCheck p2{"P2", true, "every A-only row has a positive whole-row count", {}, {}};
  std::vector<char> row_ok(static_cast<std::size_t>(d.n_a), 0);
  AssumptionCheck p3{"P3", true, "every B-only column has a positive whole-column count", {}, {}};
  std::vector<char> col_ok(static_cast<std::size_t>(d.n_b), 0);
  for (const auto& e : cd.entries()) {
    if (!(data.value(e.key) > 0.0)) continue;
    const auto& t = e.targets;
    if (t.size() == static_cast<std::size_t>(d.n_b) && t.front().i == 1 && t.front().j == 0) {
      const int k = t.front().k;
      bool whole = true;
      for (int c = 1; c <= d.n_b; ++c) whole = whole && t[c - 1] == FullIndex{1, 0, k, c};
      if (whole) row_ok[k - 1] = 1;
    }
    if (t.size() == static_cast<std::size_t>(d.n_a) && t.front().i == 0 && t.front().j == 1) {
      const int l = t.front().l;
      bool whole = true;
      for (int c = 1; c <= d.n_a; ++c) whole = whole && t[c - 1] == FullIndex{0, 1, c, l};
      if (whole) col_ok[l - 1] = 1;
    }
  }
  for (int k = 1; k <= d.n_a && p2.passed; ++k)
    if (!row_ok[k - 1]) {
      p2.passed = false;
      p2.witness_v = FullIndex{1, 0, k, 1};
      p2.detail = "no positive count covers exactly row k=" + std::to_string(k) + " of the (1,0) quadrant";
    }
  for (int l = 1; l <= d.n_b && p3.passed; ++l)
    if (!col_ok[l - 1]) {
      p3.passed = false;
      p3.witness_v = FullIndex{0, 1, 1, l};
      p3.detail = "no positive count covers exactly column l=" + std::to_string(l) + " of the (0,1) quadrant";
    }

  rep.checks.push_back(std::move(p1));
  rep.checks.push_back(std::move(p2));
  rep.checks.push_back(std::move(p3));
  return rep;
}

/// OP1: table is nonnegative and every positive count has a positive target.
inline bool check_op1(const FullTable& table, const ObservedData& data, const CDMap& cd) {
  for (double y : table.values())
    if (!(y >= 0.0)) return false;
  for (const auto& [u, x] : data.counts()) {
    if (!(x > 0.0)) continue;
    const auto* e = cd.find(u);
    if (!e) return false;
    bool any = false;
    for (const auto& v : e->targets) any = any || table[v] > 0.0;
    if (!any) return false;
  }
  return true;
}

/// z_{1,0,k,:} for k = 1..n_A.
inline std::vector<double> row_totals(const FullTable& t) {
  const Dims d = t.dims();
  std::vector<double> rows(static_cast<std::size_t>(d.n_a), 0.0);
  for (int k = 1; k <= d.n_a; ++k)
    for (int c = 1; c <= d.n_b; ++c) rows[k - 1] += t(1, 0, k, c);
  return rows;
}

/// z_{0,1,:,l} for l = 1..n_B.
inline std::vector<double> col_totals(const FullTable& t) {
  const Dims d = t.dims();
  std::vector<double> cols(static_cast<std::size_t>(d.n_b), 0.0);
  for (int l = 1; l <= d.n_b; ++l)
    for (int c = 1; c <= d.n_a; ++c) cols[l - 1] += t(0, 1, c, l);
  return cols;
}

/// |a-b| / max(|a|,|b|), 0 when both vanish.
inline double relative_difference(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

inline double max_relative_difference(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("size mismatch in max_relative_difference");
  double m = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) m = std::max(m, relative_difference(a[n], b[n]));
  return m;
}

}  // namespace dse
