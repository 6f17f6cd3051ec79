#pragma once

// Shared fixtures and brute-force oracles for the test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "dse/table_model.hpp"

namespace dse::test {

// Reference survey counts, two categories per register.
inline ObservedData nz_data() {
  return ObservedData(Dims{2, 2}, {{{1, 1, 1, 1}, 3004335},
                                   {{1, 1, 1, 2}, 31995},
                                   {{1, 1, 1, -1}, 150840},
                                   {{1, 1, 2, 1}, 108189},
                                   {{1, 1, 2, 2}, 435465},
                                   {{1, 1, 2, -1}, 12405},
                                   {{1, 1, -1, 1}, 16512},
                                   {{1, 1, -1, 2}, 2769},
                                   {{1, 1, -1, -1}, 900},
                                   {{1, 0, 1, -1}, 38634},
                                   {{1, 0, 2, -1}, 4368},
                                   {{1, 0, -1, -1}, 438},
                                   {{0, 1, -1, 1}, 398838},
                                   {{0, 1, -1, 2}, 146976},
                                   {{0, 1, -1, -1}, 24636}});
}

// Published estimates for nz_data(), one decimal.
inline FullTable nz_expected() {
  FullTable t(Dims{2, 2});
  t[{1, 1, 1, 1}] = 3170294.8;
  t[{1, 1, 1, 2}] = 33787.9;
  t[{1, 1, 2, 1}] = 111242.5;
  t[{1, 1, 2, 2}] = 448084.8;
  t[{1, 0, 1, 1}] = 38616.0;
  t[{1, 0, 1, 2}] = 411.6;
  t[{1, 0, 2, 1}] = 877.6;
  t[{1, 0, 2, 2}] = 3534.9;
  t[{0, 1, 1, 1}] = 402709.4;
  t[{0, 1, 1, 2}] = 10770.8;
  t[{0, 1, 2, 1}] = 14130.7;
  t[{0, 1, 2, 2}] = 142839.1;
  t[{0, 0, 1, 1}] = 4905.2;
  t[{0, 0, 1, 2}] = 131.2;
  t[{0, 0, 2, 1}] = 111.5;
  t[{0, 0, 2, 2}] = 1126.8;
  return t;
}

inline bool within_golden(double got, double want) {
  return std::abs(got - want) <= std::max(0.5, 1e-3 * std::abs(want));
}

inline std::vector<FullIndex> all_cells(const Dims& d) {
  std::vector<FullIndex> out;
  for (std::size_t n = 0; n < d.full_size(); ++n) out.push_back(FullIndex::from_flat(n, d));
  return out;
}

/// Every key the single -1 convention can produce.
inline std::vector<DataIndex> standard_keys(const Dims& d) {
  std::vector<DataIndex> keys;
  for (int k = -1; k <= d.n_a; ++k)
    for (int l = -1; l <= d.n_b; ++l) {
      if (k == 0 || l == 0) continue;
      keys.push_back({1, 1, k, l});
    }
  for (int k = -1; k <= d.n_a; ++k)
    if (k != 0) keys.push_back({1, 0, k, -1});
  for (int l = -1; l <= d.n_b; ++l)
    if (l != 0) keys.push_back({0, 1, -1, l});
  return keys;
}

struct RandomInstance {
  ObservedData data;
  CDMap cd;
};

/// Random standard-convention data: each key present with probability
/// `keep`, and a present count is zero with probability `zero`.
inline RandomInstance random_standard(std::mt19937_64& rng, int max_dim, double keep = 0.8, double zero = 0.15) {
  std::uniform_int_distribution<int> dim(1, max_dim);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Dims d{dim(rng), dim(rng)};
  std::map<DataIndex, double> counts;
  for (const auto& key : standard_keys(d)) {
    if (u01(rng) > keep) continue;
    counts[key] = u01(rng) < zero ? 0.0 : std::floor(1.0 + 1000.0 * u01(rng));
  }
  if (counts.empty()) counts[{1, 1, 1, 1}] = 7.0;
  ObservedData data(d, std::move(counts));
  CDMap cd = build_standard_cd(data);
  return {std::move(data), std::move(cd)};
}

/// Random map obeying the structural rules but not the -1 convention: keys
/// with codes -2..-4 mapping to arbitrary sets of matched cells, whole
/// (1,0) rows and whole (0,1) columns.
inline RandomInstance random_general(std::mt19937_64& rng, int max_dim) {
  std::uniform_int_distribution<int> dim(1, max_dim);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Dims d{dim(rng), dim(rng)};
  std::map<DataIndex, std::vector<FullIndex>> fwd;
  std::map<DataIndex, double> counts;
  auto count = [&] { return u01(rng) < 0.15 ? 0.0 : 1.0 + 500.0 * u01(rng); };
  for (int k = 1; k <= d.n_a; ++k)
    for (int l = 1; l <= d.n_b; ++l)
      if (u01(rng) < 0.7) {
        fwd[{1, 1, k, l}] = {{1, 1, k, l}};
        counts[{1, 1, k, l}] = count();
      }
  for (int code = 2; code <= 4; ++code) {
    std::vector<FullIndex> m, r, c;
    for (int k = 1; k <= d.n_a; ++k)
      for (int l = 1; l <= d.n_b; ++l)
        if (u01(rng) < 0.5) m.push_back({1, 1, k, l});
    for (int k = 1; k <= d.n_a; ++k)
      if (u01(rng) < 0.5)
        for (int l = 1; l <= d.n_b; ++l) r.push_back({1, 0, k, l});
    for (int l = 1; l <= d.n_b; ++l)
      if (u01(rng) < 0.5)
        for (int k = 1; k <= d.n_a; ++k) c.push_back({0, 1, k, l});
    if (!m.empty()) {
      fwd[{1, 1, -code, -code}] = m;
      counts[{1, 1, -code, -code}] = count();
    }
    if (!r.empty()) {
      fwd[{1, 0, -code, -1}] = r;
      counts[{1, 0, -code, -1}] = count();
    }
    if (!c.empty()) {
      fwd[{0, 1, -1, -code}] = c;
      counts[{0, 1, -1, -code}] = count();
    }
  }
  if (fwd.empty()) {
    fwd[{1, 1, 1, 1}] = {{1, 1, 1, 1}};
    counts[{1, 1, 1, 1}] = 3.0;
  }
  return {ObservedData(d, std::move(counts)), CDMap(d, std::move(fwd))};
}

/// Positive entries on a random subset of cells, then patched so every
/// positive count has at least one positive target.
inline FullTable random_op1_table(std::mt19937_64& rng, const ObservedData& data, const CDMap& cd,
                                  double zero = 0.3) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  FullTable t(cd.dims());
  for (std::size_t n = 0; n < t.size(); ++n) t.at(n) = u01(rng) < zero ? 0.0 : 0.01 + 100.0 * u01(rng);
  for (const auto& e : cd.entries()) {
    if (!(data.value(e.key) > 0.0)) continue;
    bool any = false;
    for (const auto& v : e.targets) any = any || t[v] > 0.0;
    if (!any) t[e.targets[std::uniform_int_distribution<std::size_t>(0, e.targets.size() - 1)(rng)]] = 1.0 + u01(rng);
  }
  return t;
}

/// Redistribution written directly from its cellwise definition: loop over
/// every cell and every key, no precomputation.
inline FullTable naive_dist(const ObservedData& data, const CDMap& cd, const FullTable& z) {
  FullTable out = z;
  for (const auto& v : all_cells(cd.dims())) {
    bool covered = false;
    double acc = 0.0;
    for (const auto& e : cd.entries()) {
      if (std::find(e.targets.begin(), e.targets.end(), v) == e.targets.end()) continue;
      covered = true;
      const double x = data.value(e.key);
      if (!(x > 0.0)) continue;
      double denom = 0.0;
      for (const auto& w : e.targets) denom += z[w];
      acc += x * z[v] / denom;
    }
    if (covered) out[v] = acc;
  }
  return out;
}

/// Column rank by Gaussian elimination with partial pivoting on a dense copy.
inline int elimination_rank(std::vector<std::vector<double>> m) {
  if (m.empty()) return 0;
  const std::size_t rows = m.size(), cols = m[0].size();
  std::size_t rank = 0;
  for (std::size_t c = 0; c < cols && rank < rows; ++c) {
    std::size_t piv = rank;
    for (std::size_t r = rank; r < rows; ++r)
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    if (std::abs(m[piv][c]) < 1e-9) continue;
    std::swap(m[piv], m[rank]);
    for (std::size_t r = 0; r < rows; ++r) {
      if (r == rank) continue;
      const double f = m[r][c] / m[rank][c];
      for (std::size_t cc = c; cc < cols; ++cc) m[r][cc] -= f * m[rank][cc];
    }
    ++rank;
  }
  return static_cast<int>(rank);
}

}  // namespace dse::test
