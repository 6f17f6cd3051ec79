#include <gtest/gtest.h>

#include <random>

#include "dse/em.hpp"
#include "dse/fast_fixpoint.hpp"
#include "support.hpp"

using namespace dse;
using dse::test::nz_data;
using dse::test::nz_expected;

namespace {

// Closed-form marginal map for the A-only row totals, written from the
// per-row sum over contributing counts.
MarginVector closed_form_rows(const ObservedData& data, const CDMap& cd, const MarginVector& rows) {
  const int n_a = cd.dims().n_a;
  MarginVector out(rows);
  for (int k = 1; k <= n_a; ++k) {
    bool touched = false;
    for (const auto& e : cd.entries())
      if (e.key.i == 1 && e.key.j == 0) {
        const auto ks = cd_b0(cd, e.key);
        touched = touched || std::find(ks.begin(), ks.end(), k) != ks.end();
      }
    if (!touched) continue;
    double acc = 0.0;
    for (const auto& u : cd_b0_minus(cd, data, k)) {
      double denom = 0.0;
      for (int c : cd_b0(cd, u)) denom += rows[c - 1];
      acc += data.value(u) * rows[k - 1] / denom;
    }
    out[k - 1] = acc;
  }
  return out;
}

MarginVector closed_form_cols(const ObservedData& data, const CDMap& cd, const MarginVector& cols) {
  const int n_b = cd.dims().n_b;
  MarginVector out(cols);
  for (int l = 1; l <= n_b; ++l) {
    bool touched = false;
    for (const auto& e : cd.entries())
      if (e.key.i == 0 && e.key.j == 1) {
        const auto ls = cd_a0(cd, e.key);
        touched = touched || std::find(ls.begin(), ls.end(), l) != ls.end();
      }
    if (!touched) continue;
    double acc = 0.0;
    for (const auto& u : cd_a0_minus(cd, data, l)) {
      double denom = 0.0;
      for (int c : cd_a0(cd, u)) denom += cols[c - 1];
      acc += data.value(u) * cols[l - 1] / denom;
    }
    out[l - 1] = acc;
  }
  return out;
}

MatchBlock nz_block() { return match_block_of(nz_expected()); }

}  // namespace

TEST(DistMatch, ReferenceBlockIsNearlyFixed) {
  const auto data = nz_data();
  const auto block = nz_block();
  const auto out = dist_match(data, build_standard_cd(data), block);
  EXPECT_LT(max_relative_difference(out.values, block.values), 1e-3);
}

TEST(DistMatch, SingletonDataReplacesBlock) {
  const Dims d{2, 3};
  std::map<DataIndex, double> counts;
  for (int k = 1; k <= 2; ++k)
    for (int l = 1; l <= 3; ++l) counts[{1, 1, k, l}] = k * 10.0 + l;
  const ObservedData data(d, counts);
  const auto out = dist_match(data, build_standard_cd(data), MatchBlock(d, 3.5));
  for (int k = 1; k <= 2; ++k)
    for (int l = 1; l <= 3; ++l) EXPECT_DOUBLE_EQ(out(k, l), k * 10.0 + l);
}

TEST(DistMatch, EqualsRestrictionOfFullDist) {
  std::mt19937_64 rng(41);
  for (int n = 0; n < 200; ++n) {
    const auto inst = n % 2 ? dse::test::random_general(rng, 6) : dse::test::random_standard(rng, 6);
    const auto t = dse::test::random_op1_table(rng, inst.data, inst.cd);
    const auto full = dist(inst.data, inst.cd, t);
    const auto block = dist_match(inst.data, inst.cd, match_block_of(t));
    ASSERT_LE(max_relative_difference(block.values, match_block_of(full).values), 1e-13);
  }
}

TEST(DistMatch, MixedQuadrantTargetsAreStructural) {
  const Dims d{2, 2};
  const ObservedData data(d, {{{1, 1, 1, -1}, 3.0}});
  const CDMap cd(d, {{{1, 1, 1, -1}, {{1, 1, 1, 1}, {1, 0, 1, 2}}}});
  EXPECT_THROW(make_match_plan(data, cd), StructuralError);
}

TEST(DistMargins, ReferenceTotalsAreNearlyFixed) {
  const auto data = nz_data();
  const auto cd = build_standard_cd(data);
  const MarginVector rows{39027.6, 4412.5};
  const auto r = dist_b0(data, cd, rows);
  EXPECT_LT(max_relative_difference(r, rows), 1e-3);
  const auto t = nz_expected();
  const auto cols = col_totals(t);
  EXPECT_LT(max_relative_difference(dist_a0(data, cd, cols), cols), 1e-3);
}

TEST(DistMargins, UntouchedRowIsUnchanged) {
  const Dims d{3, 2};
  const ObservedData data(d, {{{1, 0, 1, -1}, 5.0}, {{1, 0, 2, -1}, 4.0}});
  const auto out = dist_b0(data, build_standard_cd(data), MarginVector{1.0, 2.0, 7.25});
  EXPECT_EQ(out, (MarginVector{5.0, 4.0, 7.25}));
}

TEST(DistMargins, MatchClosedFormAndFullDist) {
  std::mt19937_64 rng(42);
  for (int n = 0; n < 200; ++n) {
    const auto inst = n % 2 ? dse::test::random_general(rng, 6) : dse::test::random_standard(rng, 6);
    const auto t = dse::test::random_op1_table(rng, inst.data, inst.cd);
    const auto rows = row_totals(t), cols = col_totals(t);
    const auto full = dist(inst.data, inst.cd, t);
    const auto r = dist_b0(inst.data, inst.cd, rows);
    const auto c = dist_a0(inst.data, inst.cd, cols);
    ASSERT_LE(max_relative_difference(r, row_totals(full)), 1e-12);
    ASSERT_LE(max_relative_difference(c, col_totals(full)), 1e-12);
    ASSERT_LE(max_relative_difference(r, closed_form_rows(inst.data, inst.cd, rows)), 1e-12);
    ASSERT_LE(max_relative_difference(c, closed_form_cols(inst.data, inst.cd, cols)), 1e-12);
  }
}

TEST(IterateFixpoint, ObservedBlockStartConvergesToReference) {
  const auto data = nz_data();
  const auto cd = build_standard_cd(data);
  const auto plan = make_match_plan(data, cd);
  std::vector<double> init;
  for (int k = 1; k <= 2; ++k)
    for (int l = 1; l <= 2; ++l) init.push_back(data.value({1, 1, k, l}));
  const auto res = iterate_fixpoint([&](const std::vector<double>& z) { return apply_submap(plan, z); }, init, {});
  EXPECT_TRUE(res.trace.converged);
  EXPECT_LT(max_relative_difference(res.value, nz_block().values), 1e-3);
}

TEST(IterateFixpoint, IdentityMapStopsAfterOneStep) {
  const auto res = iterate_fixpoint([](const std::vector<double>& z) { return z; }, {1.0, 2.0}, {});
  EXPECT_TRUE(res.trace.converged);
  EXPECT_EQ(res.trace.iterations(), 1);
}

TEST(IterateFixpoint, LimitDoesNotDependOnPositiveStart) {
  const auto data = nz_data();
  const auto plan = make_match_plan(data, build_standard_cd(data));
  auto map = [&](const std::vector<double>& z) { return apply_submap(plan, z); };
  const auto a = iterate_fixpoint(map, {1, 1, 1, 1}, {});
  const auto b = iterate_fixpoint(map, {5, 900, 3, 0.25}, {});
  EXPECT_LT(max_relative_difference(a.value, b.value), 1e-6);
}

TEST(IterateFixpoint, CapIsReported) {
  const auto res = iterate_fixpoint([](const std::vector<double>& z) { return std::vector<double>{z[0] * 2}; }, {1.0},
                                    FixpointOptions{1e-10, 5, 0.0});
  EXPECT_FALSE(res.trace.converged);
  EXPECT_EQ(res.trace.iterations(), 5);
}

TEST(Reconstruct, BothMissingCellFromReferenceValues) {
  const auto t = nz_expected();
  const auto out = reconstruct(match_block_of(t), row_totals(t), col_totals(t));
  // 402709.4 * 38616.0 / 3170294.8
  EXPECT_NEAR(out(0, 0, 1, 1), 4905.2, 0.5);
  EXPECT_NEAR(out(0, 0, 1, 1), 402709.4 * 38616.0 / 3170294.8, 1.0);
}

TEST(Reconstruct, ConstantInputs) {
  const Dims d{3, 4};
  const double c = 2.0, r = 12.0, s = 6.0;
  const auto out = reconstruct(MatchBlock(d, c), MarginVector(3, r), MarginVector(4, s));
  for (int k = 1; k <= 3; ++k)
    for (int l = 1; l <= 4; ++l) {
      EXPECT_DOUBLE_EQ(out(1, 1, k, l), c);
      EXPECT_DOUBLE_EQ(out(1, 0, k, l), r / 4);
      EXPECT_DOUBLE_EQ(out(0, 1, k, l), s / 3);
      EXPECT_DOUBLE_EQ(out(0, 0, k, l), r * s / (c * 12));
    }
}

TEST(Reconstruct, ZeroInputsAreRejected) {
  const Dims d{2, 2};
  MatchBlock b(d, 1.0);
  EXPECT_THROW(reconstruct(b, {1.0, 0.0}, {1.0, 1.0}), PositivityError);
  EXPECT_THROW(reconstruct(b, {1.0, 1.0}, {0.0, 1.0}), PositivityError);
  b(2, 1) = 0.0;
  EXPECT_THROW(reconstruct(b, {1.0, 1.0}, {1.0, 1.0}), PositivityError);
  EXPECT_THROW(reconstruct(MatchBlock(d, 1.0), {1.0}, {1.0, 1.0}), DomainError);
}

TEST(RunFast, ReproducesReferenceEstimate) {
  const auto data = nz_data();
  const auto res = run_fast(data, build_standard_cd(data));
  EXPECT_TRUE(res.converged());
  EXPECT_TRUE(res.warnings.empty());
  const auto want = nz_expected();
  for (std::size_t n = 0; n < want.size(); ++n)
    EXPECT_NEAR(res.table.at(n), want.at(n), 0.5) << to_string(FullIndex::from_flat(n, want.dims()));
}

TEST(RunFast, OutputIsFixedByBothMaps) {
  const auto data = nz_data();
  const auto cd = build_standard_cd(data);
  const auto res = run_fast(data, cd);
  EXPECT_LT(max_relative_difference(dist(data, cd, res.table).values(), res.table.values()), 1e-6);
  EXPECT_LT(max_relative_difference(ue(pr(res.table)).values(), res.table.values()), 1e-6);
  EXPECT_LT(max_relative_difference(ue(res.params).values(), res.table.values()), 1e-6);
}

TEST(RunFast, QuadrantProportionality) {
  const auto data = nz_data();
  const auto t = run_fast(data, build_standard_cd(data)).table;
  EXPECT_NEAR(t(1, 0, 1, 1) / t(1, 0, 1, 2), t(1, 1, 1, 1) / t(1, 1, 1, 2), 1e-8 * t(1, 1, 1, 1) / t(1, 1, 1, 2));
  EXPECT_NEAR(t(0, 1, 1, 2) / t(0, 1, 2, 2), t(1, 1, 1, 2) / t(1, 1, 2, 2), 1e-8);
  for (int k = 1; k <= 2; ++k)
    for (int l = 1; l <= 2; ++l) {
      const double lhs = t(0, 0, k, l) * t(1, 1, k, l), rhs = t(1, 0, k, l) * t(0, 1, k, l);
      EXPECT_LE(relative_difference(lhs, rhs), 1e-12);
    }
}

TEST(RunFast, ZeroedSingletonWithClampCompletes) {
  auto counts = nz_data().counts();
  counts[{1, 1, 2, 2}] = 0.0;
  const ObservedData data(Dims{2, 2}, counts);
  const auto cd = build_standard_cd(data);
  const auto res = run_fast(data, cd, FixpointOptions{1e-10, 10000, 1e-8});
  for (double y : res.table.values()) EXPECT_GT(y, 0.0);
  const auto em = run_em(data, cd);
  const double diff = max_relative_difference(em.table.values(), res.table.values());
  EXPECT_TRUE(std::isfinite(diff));
}

TEST(RunFast, MissingRowWitnessWithoutClampIsAPositivityError) {
  auto counts = nz_data().counts();
  counts[{1, 0, 2, -1}] = 0.0;
  counts[{1, 0, -1, -1}] = 0.0;
  const ObservedData data(Dims{2, 2}, counts);
  EXPECT_THROW(run_fast(data, build_standard_cd(data)), PositivityError);
}

TEST(RunFast, FailedPositiveCheckIsWarned) {
  auto counts = nz_data().counts();
  counts[{1, 0, 2, -1}] = 0.0;
  const ObservedData data(Dims{2, 2}, counts);
  const auto res = run_fast(data, build_standard_cd(data));
  ASSERT_FALSE(res.warnings.empty());
  EXPECT_NE(res.warnings.front().find("P2"), std::string::npos);
}

TEST(RunFast, StructuralViolationIsRejected) {
  const Dims d{2, 2};
  const ObservedData data(d, {{{1, 0, -1, -1}, 5.0}});
  const CDMap cd(d, {{{1, 0, -1, -1}, {{1, 0, 1, 1}, {1, 0, 2, 1}}}});
  EXPECT_THROW(run_fast(data, cd), StructuralError);
  EXPECT_THROW(run_fast(nz_data(), build_standard_cd(nz_data()), FixpointOptions{1e-10, 10, -1.0}), DomainError);
}

TEST(ClampData, RaisesEveryMappedCount) {
  auto counts = nz_data().counts();
  counts[{1, 1, 2, 2}] = 0.0;
  const ObservedData data(Dims{2, 2}, counts);
  const auto clamped = clamp_data(data, build_standard_cd(data), 0.5);
  EXPECT_EQ(clamped.value({1, 1, 2, 2}), 0.5);
  EXPECT_EQ(clamped.value({1, 1, 1, 1}), 3004335);
}

// Marginal fixed points extend cellwise: rebuild the one-list quadrants from
// fixed row / column totals and any positive block, then apply the full map.
TEST(MarginalFixProperty, OneListCellsAreFixed) {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0.05, 50.0);
  int checked = 0;
  for (int n = 0; n < 5000 && checked < 200; ++n) {
    const auto inst = n % 2 ? dse::test::random_general(rng, 6) : dse::test::random_standard(rng, 6);
    const Dims d = inst.cd.dims();
    const auto positive = validate_positive(inst.cd, inst.data);
    if (!positive.passed("P2") || !positive.passed("P3")) continue;
    const auto b0 = make_b0_plan(inst.data, inst.cd);
    const auto a0 = make_a0_plan(inst.data, inst.cd);
    FixpointOptions opts{1e-14, 100000, 0.0};
    const auto rows = iterate_fixpoint([&](const std::vector<double>& z) { return apply_submap(b0, z); },
                                       std::vector<double>(static_cast<std::size_t>(d.n_a), 1.0), opts);
    const auto cols = iterate_fixpoint([&](const std::vector<double>& z) { return apply_submap(a0, z); },
                                       std::vector<double>(static_cast<std::size_t>(d.n_b), 1.0), opts);
    ASSERT_TRUE(rows.trace.converged && cols.trace.converged);
    MatchBlock block(d);
    for (double& v : block.values) v = u(rng);
    FullTable t = reconstruct(block, rows.value, cols.value);
    const auto out = dist(inst.data, inst.cd, t);
    for (int k = 1; k <= d.n_a; ++k)
      for (int l = 1; l <= d.n_b; ++l) {
        ASSERT_LE(relative_difference(out(1, 0, k, l), t(1, 0, k, l)), 1e-12);
        ASSERT_LE(relative_difference(out(0, 1, k, l), t(0, 1, k, l)), 1e-12);
      }
    ++checked;
  }
  EXPECT_GE(checked, 200);
}
