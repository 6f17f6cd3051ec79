#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dse/errors.hpp"
#include "dse/regression.hpp"
#include "dse/table_model.hpp"

namespace dse {

/// Precomputed redistribution pattern of (data, CD): the positive counts with
/// their flat target lists, and which cells are reachable from any CD image.
struct DistPlan {
  struct Source {
    DataIndex key;
    double count = 0.0;
    std::vector<std::size_t> targets;
  };

  Dims dims{};
  std::vector<Source> sources;  // x_u > 0 only, ordered by key
  std::vector<char> covered;    // v in CD(u) for some u (zero counts included)
};

inline DistPlan make_dist_plan(const ObservedData& data, const CDMap& cd) {
  if (data.dims() != cd.dims()) throw DomainError("data and CD map have different dims");
  for (const auto& kv : data.counts())
    if (!cd.contains(kv.first)) throw StructuralError("observed coordinate " + to_string(kv.first) + " has no CD entry");
  DistPlan plan;
  plan.dims = cd.dims();
  plan.covered.assign(plan.dims.full_size(), 0);
  for (const auto& e : cd.entries()) {
    std::vector<std::size_t> flat;
    flat.reserve(e.targets.size());
    for (const auto& v : e.targets) {
      flat.push_back(v.flat(plan.dims));
      plan.covered[flat.back()] = 1;
    }
    const double x = data.value(e.key);
    if (x > 0.0) plan.sources.push_back({e.key, x, std::move(flat)});
  }
  return plan;
}

/// DIST: uncovered cells pass through; covered cells receive
/// sum_{u in CD^-(v)} x_u table[v] / sum_{w in CD(u)} table[w].
/// Summation order is fixed (sources by key), so results are deterministic.
inline FullTable dist(const DistPlan& plan, const FullTable& table) {
  if (table.dims() != plan.dims) throw DomainError("dist: table dims do not match the plan");
  FullTable out = table;
  for (std::size_t v = 0; v < out.size(); ++v) {
    if (!(table.at(v) >= 0.0)) throw DomainError("dist: negative or NaN entry at " + to_string(FullIndex::from_flat(v, plan.dims)));
    if (plan.covered[v]) out.at(v) = 0.0;
  }
  for (const auto& s : plan.sources) {
    double denom = 0.0;
    for (std::size_t t : s.targets) denom += table.at(t);
    if (!(denom > 0.0))
      throw DivisionHazardError("OP1 violated: every CD target of " + to_string(s.key) + " (count " +
                                std::to_string(s.count) + ") is zero");
    for (std::size_t t : s.targets) out.at(t) += s.count * table.at(t) / denom;
  }
  return out;
}

inline FullTable dist(const ObservedData& data, const CDMap& cd, const FullTable& table) {
  return dist(make_dist_plan(data, cd), table);
}

inline FullTable em_step(const DistPlan& plan, const FullTable& table, const PoissonFitOptions& solver = {},
                         const ParamVector* warm = nullptr) {
  return dist(plan, ue(fit_poisson(table, solver, warm).params));
}

/// One EM iteration: DIST(UE(PR(table))).
inline FullTable em_step(const ObservedData& data, const CDMap& cd, const FullTable& table,
                         const PoissonFitOptions& solver = {}) {
  return em_step(make_dist_plan(data, cd), table, solver);
}

enum class EmInit { AllOnes, ProportionalSpread };

struct EmOptions {
  double tol = 1e-8;  // on max_v |dy_v| / (1 + |y_v|)
  int max_iters = 5000;
  EmInit init = EmInit::AllOnes;
};

struct EmIteration {
  int iteration = 0;
  double loglik = 0.0;  // loglik(table_t, PR(table_t))
  double max_rel_change = 0.0;
  double seconds = 0.0;  // elapsed since the start of run_em
};

struct EmTrace {
  std::vector<EmIteration> iterations;
  bool converged = false;
  int iteration_count() const { return static_cast<int>(iterations.size()); }
};

struct EmResult {
  FullTable table;
  ParamVector params;
  EmTrace trace;
};

/// Each positive count split equally over its CD image; every other cell 1.
inline FullTable proportional_spread(const DistPlan& plan) {
  FullTable t(plan.dims, 1.0);
  for (std::size_t v = 0; v < t.size(); ++v)
    if (plan.covered[v]) t.at(v) = 0.0;
  for (const auto& s : plan.sources)
    for (std::size_t v : s.targets) t.at(v) += s.count / static_cast<double>(s.targets.size());
  return t;
}

inline double max_relative_change(const FullTable& before, const FullTable& after) {
  double m = 0.0;
  for (std::size_t v = 0; v < after.size(); ++v)
    m = std::max(m, std::abs(after.at(v) - before.at(v)) / (1.0 + std::abs(after.at(v))));
  return m;
}

inline EmResult run_em(const ObservedData& data, const CDMap& cd, const EmOptions& opts = {},
                       const PoissonFitOptions& solver = {}) {
  if (!(opts.tol > 0.0) || opts.max_iters < 1) throw DomainError("EM options need tol > 0 and max_iters >= 1");
  const auto structural = validate_structural(cd);
  if (!structural.all_passed()) {
    for (const auto& c : structural.checks)
      if (!c.passed) throw StructuralError(c.id + " violated: " + c.detail);
  }
  const DistPlan plan = make_dist_plan(data, cd);
  const auto t0 = std::chrono::steady_clock::now();

  EmResult res;
  FullTable table = opts.init == EmInit::AllOnes ? FullTable(cd.dims(), 1.0) : proportional_spread(plan);
  if (!check_op1(table, data, cd)) throw DivisionHazardError("EM initial table violates OP1");

  // Parameters from the previous M-step seed the next one; the fit itself is unique.
  PoissonFit fit = fit_poisson(table, solver);
  for (int it = 1; it <= opts.max_iters; ++it) {
    FullTable next = dist(plan, ue(fit.params));
    const double change = max_relative_change(table, next);
    table = std::move(next);
    fit = fit_poisson(table, solver, &fit.params);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.trace.iterations.push_back({it, loglik(table, fit.params), change, secs});
    if (change < opts.tol) {
      res.trace.converged = true;
      break;
    }
  }
  res.table = std::move(table);
  res.params = std::move(fit.params);
  return res;
}

}  // namespace dse
