#pragma once

// Fast estimator: fixed points of the DIST restriction to the matched
// quadrant and of the two marginal DIST maps, then closed-form
// reconstruction of the full table. No Poisson regression inside the loop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dse/em.hpp"
#include "dse/errors.hpp"
#include "dse/regression.hpp"
#include "dse/table_model.hpp"

namespace dse {

struct FixpointOptions {
  double tol = 1e-10;
  int max_iters = 10000;
  double delta_clamp = 0.0;  // 0 disables; otherwise x_u -> max(delta, x_u)
};

/// Matched-quadrant values z_{1,1,k,l}, row-major in (k,l).
struct MatchBlock {
  Dims dims{};
  std::vector<double> values;

  MatchBlock() = default;
  explicit MatchBlock(Dims d, double fill = 0.0) : dims(d), values(d.quadrant_size(), fill) {}
  MatchBlock(Dims d, std::vector<double> v) : dims(d), values(std::move(v)) {
    if (values.size() != dims.quadrant_size()) throw DomainError("match block size does not match dims");
  }
  double& operator()(int k, int l) { return values[index(k, l)]; }
  double operator()(int k, int l) const { return values[index(k, l)]; }
  std::size_t index(int k, int l) const noexcept {
    return static_cast<std::size_t>(k - 1) * static_cast<std::size_t>(dims.n_b) + static_cast<std::size_t>(l - 1);
  }
  friend bool operator==(const MatchBlock&, const MatchBlock&) = default;
};

/// Row totals z_{1,0,k,:} (length n_A) or column totals z_{0,1,:,l} (length n_B).
using MarginVector = std::vector<double>;

inline MatchBlock match_block_of(const FullTable& t) {
  MatchBlock b(t.dims());
  for (int k = 1; k <= t.dims().n_a; ++k)
    for (int l = 1; l <= t.dims().n_b; ++l) b(k, l) = t(1, 1, k, l);
  return b;
}

/// A positive-count source over a small index space (block cells or margin labels).
struct SubMapPlan {
  struct Source {
    DataIndex key;
    double count = 0.0;
    std::vector<std::size_t> targets;
  };
  std::size_t size = 0;
  std::vector<Source> sources;
  std::vector<char> covered;
};

inline SubMapPlan make_match_plan(const ObservedData& data, const CDMap& cd) {
  const Dims d = cd.dims();
  SubMapPlan plan;
  plan.size = d.quadrant_size();
  plan.covered.assign(plan.size, 0);
  for (const auto& e : cd.entries()) {
    const bool any_matched = std::any_of(e.targets.begin(), e.targets.end(), [](const FullIndex& v) { return v.i == 1 && v.j == 1; });
    if (!any_matched) continue;
    std::vector<std::size_t> idx;
    for (const auto& v : e.targets) {
      if (v.i != 1 || v.j != 1)
        throw StructuralError("CD" + to_string(e.key) + " mixes the matched quadrant with " + to_string(v) + " (S2)");
      idx.push_back(static_cast<std::size_t>(v.k - 1) * d.n_b + (v.l - 1));
      plan.covered[idx.back()] = 1;
    }
    const double x = data.value(e.key);
    if (x > 0.0) plan.sources.push_back({e.key, x, std::move(idx)});
  }
  return plan;
}

inline SubMapPlan make_b0_plan(const ObservedData& data, const CDMap& cd) {
  SubMapPlan plan;
  plan.size = static_cast<std::size_t>(cd.dims().n_a);
  plan.covered.assign(plan.size, 0);
  for (const auto& e : cd.entries()) {
    if (e.key.i != 1 || e.key.j != 0) continue;
    std::vector<std::size_t> idx;
    for (int k : cd_b0(cd, e.key)) {
      idx.push_back(static_cast<std::size_t>(k - 1));
      plan.covered[idx.back()] = 1;
    }
    const double x = data.value(e.key);
    if (x > 0.0 && !idx.empty()) plan.sources.push_back({e.key, x, std::move(idx)});
  }
  return plan;
}

inline SubMapPlan make_a0_plan(const ObservedData& data, const CDMap& cd) {
  SubMapPlan plan;
  plan.size = static_cast<std::size_t>(cd.dims().n_b);
  plan.covered.assign(plan.size, 0);
  for (const auto& e : cd.entries()) {
    if (e.key.i != 0 || e.key.j != 1) continue;
    std::vector<std::size_t> idx;
    for (int l : cd_a0(cd, e.key)) {
      idx.push_back(static_cast<std::size_t>(l - 1));
      plan.covered[idx.back()] = 1;
    }
    const double x = data.value(e.key);
    if (x > 0.0 && !idx.empty()) plan.sources.push_back({e.key, x, std::move(idx)});
  }
  return plan;
}

/// Same two-branch redistribution as DIST, on the reduced index space.
inline std::vector<double> apply_submap(const SubMapPlan& plan, const std::vector<double>& z) {
  if (z.size() != plan.size) throw DomainError("sub-map input has the wrong length");
  std::vector<double> out(z);
  for (std::size_t n = 0; n < z.size(); ++n) {
    if (!(z[n] >= 0.0)) throw DomainError("sub-map input must be nonnegative");
    if (plan.covered[n]) out[n] = 0.0;
  }
  for (const auto& s : plan.sources) {
    double denom = 0.0;
    for (std::size_t t : s.targets) denom += z[t];
    if (!(denom > 0.0))
      throw DivisionHazardError("OP1 violated: every target of " + to_string(s.key) + " is zero");
    for (std::size_t t : s.targets) out[t] += s.count * z[t] / denom;
  }
  return out;
}

inline MatchBlock dist_match(const ObservedData& data, const CDMap& cd, const MatchBlock& block) {
  return MatchBlock(block.dims, apply_submap(make_match_plan(data, cd), block.values));
}

/// Marginal DIST map for the A-only row totals.
inline MarginVector dist_b0(const ObservedData& data, const CDMap& cd, const MarginVector& rows) {
  return apply_submap(make_b0_plan(data, cd), rows);
}

/// Marginal DIST map for the B-only column totals.
inline MarginVector dist_a0(const ObservedData& data, const CDMap& cd, const MarginVector& cols) {
  return apply_submap(make_a0_plan(data, cd), cols);
}

struct FixpointTrace {
  std::vector<double> changes;  // max relative change per iteration
  bool converged = false;
  int iterations() const { return static_cast<int>(changes.size()); }
};

template <class T>
struct FixpointResult {
  T value;
  FixpointTrace trace;
};

/// Iterates z <- map(z) until max_n |dz_n| / (1 + |z_n|) < tol.
template <class Map>
FixpointResult<std::vector<double>> iterate_fixpoint(Map&& map, std::vector<double> init, const FixpointOptions& opts) {
  if (!(opts.tol > 0.0) || opts.max_iters < 1) throw DomainError("fixpoint options need tol > 0 and max_iters >= 1");
  FixpointResult<std::vector<double>> res{std::move(init), {}};
  for (int it = 0; it < opts.max_iters; ++it) {
    std::vector<double> next = map(res.value);
    double change = 0.0;
    for (std::size_t n = 0; n < next.size(); ++n)
      change = std::max(change, std::abs(next[n] - res.value[n]) / (1.0 + std::abs(next[n])));
    res.value = std::move(next);
    res.trace.changes.push_back(change);
    if (change < opts.tol) {
      res.trace.converged = true;
      break;
    }
  }
  return res;
}

/// Full table from matched block, A-only row totals and B-only column totals:
/// (1,0) rows follow the block's row profile, (0,1) columns its column
/// profile, and (0,0) = (1,0)*(0,1)/(1,1) cellwise.
inline FullTable reconstruct(const MatchBlock& block, const MarginVector& rows, const MarginVector& cols) {
  const Dims d = block.dims;
  if (rows.size() != static_cast<std::size_t>(d.n_a) || cols.size() != static_cast<std::size_t>(d.n_b))
    throw DomainError("reconstruct: margin lengths do not match dims");
  for (int k = 1; k <= d.n_a; ++k)
    for (int l = 1; l <= d.n_b; ++l)
      if (!(block(k, l) > 0.0))
        throw PositivityError("reconstruction needs strictly positive fixed points; matched cell " +
                              to_string(FullIndex{1, 1, k, l}) + " is " + std::to_string(block(k, l)) +
                              " (retry with a delta clamp)");
  for (int k = 1; k <= d.n_a; ++k)
    if (!(rows[k - 1] > 0.0))
      throw PositivityError("reconstruction needs strictly positive fixed points; A-only row total k=" +
                            std::to_string(k) + " is " + std::to_string(rows[k - 1]) + " (retry with a delta clamp)");
  for (int l = 1; l <= d.n_b; ++l)
    if (!(cols[l - 1] > 0.0))
      throw PositivityError("reconstruction needs strictly positive fixed points; B-only column total l=" +
                            std::to_string(l) + " is " + std::to_string(cols[l - 1]) + " (retry with a delta clamp)");

  std::vector<double> row_sum(static_cast<std::size_t>(d.n_a), 0.0), col_sum(static_cast<std::size_t>(d.n_b), 0.0);
  for (int k = 1; k <= d.n_a; ++k)
    for (int l = 1; l <= d.n_b; ++l) {
      row_sum[k - 1] += block(k, l);
      col_sum[l - 1] += block(k, l);
    }

  FullTable t(d);
  for (int k = 1; k <= d.n_a; ++k)
    for (int l = 1; l <= d.n_b; ++l) {
      const double m = block(k, l);
      const double a_only = rows[k - 1] * (m / row_sum[k - 1]);
      const double b_only = cols[l - 1] * (m / col_sum[l - 1]);
      t[FullIndex{1, 1, k, l}] = m;
      t[FullIndex{1, 0, k, l}] = a_only;
      t[FullIndex{0, 1, k, l}] = b_only;
      t[FullIndex{0, 0, k, l}] = a_only * b_only / m;
    }
  return t;
}

/// x'_u = max(delta, x_u) over every coordinate with a CD entry.
inline ObservedData clamp_data(const ObservedData& data, const CDMap& cd, double delta) {
  std::map<DataIndex, double> counts = data.counts();
  for (const auto& e : cd.entries()) counts[e.key] = std::max(delta, data.value(e.key));
  return ObservedData(data.dims(), std::move(counts));
}

struct FastResult {
  FullTable table;
  ParamVector params;
  FixpointTrace match_trace, rows_trace, cols_trace;
  std::vector<std::string> warnings;

  bool converged() const { return match_trace.converged && rows_trace.converged && cols_trace.converged; }
  int iterations() const { return match_trace.iterations() + rows_trace.iterations() + cols_trace.iterations(); }
};

namespace detail {

// Equal split of each positive count over its targets; uncovered slots 1.
inline std::vector<double> equal_split_init(const SubMapPlan& plan) {
  std::vector<double> z(plan.size, 0.0);
  double total = 0.0;
  for (const auto& s : plan.sources) {
    total += s.count;
    for (std::size_t t : s.targets) z[t] += s.count / static_cast<double>(s.targets.size());
  }
  if (total == 0.0) return std::vector<double>(plan.size, 1.0);
  for (std::size_t n = 0; n < plan.size; ++n)
    if (!plan.covered[n]) z[n] = 1.0;
  return z;
}

}  // namespace detail

inline FastResult run_fast(const ObservedData& input, const CDMap& cd, const FixpointOptions& opts = {},
                           const PoissonFitOptions& solver = {}) {
  if (!(opts.delta_clamp >= 0.0)) throw DomainError("delta clamp must be nonnegative");
  const auto structural = validate_structural(cd);
  for (const auto& c : structural.checks)
    if (!c.passed) throw StructuralError(c.id + " violated: " + c.detail);

  FastResult res;
  const auto positive = validate_positive(cd, input);
  if (!positive.all_passed() && opts.delta_clamp == 0.0)
    for (const auto& c : positive.checks)
      if (!c.passed) res.warnings.push_back(c.id + " fails (" + c.detail + "); fixed points may contain zeros");

  const ObservedData data = opts.delta_clamp > 0.0 ? clamp_data(input, cd, opts.delta_clamp) : input;
  for (const auto& kv : data.counts())
    if (!cd.contains(kv.first)) throw StructuralError("observed coordinate " + to_string(kv.first) + " has no CD entry");

  const SubMapPlan match_plan = make_match_plan(data, cd);
  const SubMapPlan b0_plan = make_b0_plan(data, cd);
  const SubMapPlan a0_plan = make_a0_plan(data, cd);

  auto match = iterate_fixpoint([&](const std::vector<double>& z) { return apply_submap(match_plan, z); },
                                detail::equal_split_init(match_plan), opts);
  auto rows = iterate_fixpoint([&](const std::vector<double>& z) { return apply_submap(b0_plan, z); },
                               detail::equal_split_init(b0_plan), opts);
  auto cols = iterate_fixpoint([&](const std::vector<double>& z) { return apply_submap(a0_plan, z); },
                               detail::equal_split_init(a0_plan), opts);
  res.match_trace = std::move(match.trace);
  res.rows_trace = std::move(rows.trace);
  res.cols_trace = std::move(cols.trace);
  if (!res.converged()) res.warnings.push_back("a sub-map iteration hit max_iters before reaching tol");

  res.table = reconstruct(MatchBlock(cd.dims(), std::move(match.value)), rows.value, cols.value);
  res.params = pr(res.table, solver);
  return res;
}

}  // namespace dse
