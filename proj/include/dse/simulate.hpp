#pragma once

// Random instances for equivalence testing and benchmarking. All draws come
// from std::mt19937_64 streams seeded from SimSpec::seed, so an instance is
// replayable within one build of the standard library.

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dse/errors.hpp"
#include "dse/io.hpp"
#include "dse/regression.hpp"
#include "dse/table_model.hpp"

namespace dse {

inline constexpr const char* kGeneratorName = "mt19937_64";

struct SimSpec {
  Dims dims{2, 2};
  std::uint64_t seed = 1;
  double lambda_min = -0.5;
  double lambda_max = 0.5;
  double missing_rate_a = 0.1;  // probability an A category label is erased
  double missing_rate_b = 0.1;
  double min_cell = 0.0;         // floor on drawn counts of the observable quadrants
  double population = 1e5;       // expected total of the full table, in [1e3, 1e6]
};

inline void validate(const SimSpec& s) {
  make_dims(s.dims.n_a, s.dims.n_b);
  if (!(s.lambda_min <= s.lambda_max)) throw DomainError("lambda range is empty");
  if (!(s.missing_rate_a >= 0.0 && s.missing_rate_a <= 1.0) || !(s.missing_rate_b >= 0.0 && s.missing_rate_b <= 1.0))
    throw DomainError("missing rates must lie in [0,1]");
  if (!(s.min_cell >= 0.0)) throw DomainError("min_cell must be nonnegative");
  if (!(s.population >= 1e3 && s.population <= 1e6)) throw DomainError("population must lie in [1e3, 1e6]");
}

namespace detail {
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}
}  // namespace detail

/// Non-intercept coefficients uniform on [lambda_min, lambda_max]; lambda0
/// chosen so the expected table total equals spec.population.
inline ParamVector gen_params(const SimSpec& spec) {
  validate(spec);
  auto rng = detail::stream(spec.seed, 1);
  std::uniform_real_distribution<double> unif(spec.lambda_min, spec.lambda_max);
  ParamVector p(spec.dims);
  for (std::size_t n = 1; n < p.size(); ++n) p[n] = spec.lambda_min == spec.lambda_max ? spec.lambda_min : unif(rng);
  p[ParamLayout::lambda0()] = 0.0;
  const FullTable mean = ue(p);
  double mass = 0.0;
  for (double y : mean.values()) mass += y;
  p[ParamLayout::lambda0()] = std::log(spec.population / mass);
  return p;
}

/// Independent Poisson draws with means ue(params).
inline FullTable gen_truth(const ParamVector& params, std::uint64_t seed) {
  auto rng = detail::stream(seed, 2);
  const FullTable mean = ue(params);
  FullTable t(params.dims);
  for (std::size_t v = 0; v < t.size(); ++v) {
    const double m = mean.at(v);
    if (m <= 0.0) continue;
    std::poisson_distribution<long long> pois(m);
    t.at(v) = static_cast<double>(pois(rng));
  }
  return t;
}

/// Missing-at-random label erasure with binomial splitting. The (0,0)
/// quadrant is dropped; (1,0) cells always lose l, (0,1) cells always lose k.
inline ObservedData apply_missingness(const FullTable& truth, const SimSpec& spec) {
  validate(spec);
  auto rng = detail::stream(spec.seed, 3);
  const Dims d = truth.dims();
  std::map<DataIndex, double> counts;
  auto add = [&](DataIndex u, long long n) { counts[u] += static_cast<double>(n); };
  auto split = [&](long long n, double p) {
    if (n <= 0 || p <= 0.0) return 0LL;
    if (p >= 1.0) return n;
    std::binomial_distribution<long long> bin(n, p);
    return bin(rng);
  };
  for (int k = 1; k <= d.n_a; ++k)
    for (int l = 1; l <= d.n_b; ++l) {
      const auto both = static_cast<long long>(std::llround(truth(1, 1, k, l)));
      const long long a_gone = split(both, spec.missing_rate_a);
      const long long a_gone_b_gone = split(a_gone, spec.missing_rate_b);
      const long long a_kept_b_gone = split(both - a_gone, spec.missing_rate_b);
      add({1, 1, k, l}, both - a_gone - a_kept_b_gone);
      add({1, 1, k, -1}, a_kept_b_gone);
      add({1, 1, -1, l}, a_gone - a_gone_b_gone);
      add({1, 1, -1, -1}, a_gone_b_gone);

      const auto a_only = static_cast<long long>(std::llround(truth(1, 0, k, l)));
      const long long a_only_gone = split(a_only, spec.missing_rate_a);
      add({1, 0, k, -1}, a_only - a_only_gone);
      add({1, 0, -1, -1}, a_only_gone);

      const auto b_only = static_cast<long long>(std::llround(truth(0, 1, k, l)));
      const long long b_only_gone = split(b_only, spec.missing_rate_b);
      add({0, 1, -1, l}, b_only - b_only_gone);
      add({0, 1, -1, -1}, b_only_gone);
    }
  return ObservedData(d, std::move(counts));
}

struct SimInstance {
  ParamVector params;
  FullTable truth;
  ObservedData data;
  int attempts = 1;
};

inline SimInstance simulate(const SimSpec& spec) {
  SimInstance s;
  s.params = gen_params(spec);
  s.truth = gen_truth(s.params, spec.seed);
  if (spec.min_cell > 0.0) {
    const double floor = std::ceil(spec.min_cell);
    for (std::size_t v = 0; v < s.truth.size(); ++v) {
      const auto f = FullIndex::from_flat(v, spec.dims);
      if (!(f.i == 0 && f.j == 0)) s.truth.at(v) = std::max(s.truth.at(v), floor);
    }
  }
  s.data = apply_missingness(s.truth, spec);
  return s;
}

/// Resamples with successive seeds until the instance satisfies P1-P3.
inline SimInstance simulate_positive(SimSpec spec, int max_attempts = 100) {
  for (int a = 1; a <= max_attempts; ++a, ++spec.seed) {
    SimInstance s = simulate(spec);
    if (validate_positive(build_standard_cd(s.data), s.data).all_passed()) {
      s.attempts = a;
      return s;
    }
  }
  throw DomainError("no P1-P3 instance found in " + std::to_string(max_attempts) + " attempts");
}

/// key = value lines; '#' starts a comment.
/// Keys: n_a n_b seed lambda_min lambda_max missing_rate_a missing_rate_b min_cell population.
inline SimSpec parse_sim_spec(std::istream& in) {
  SimSpec s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
    const std::string key(detail::trim(std::string_view(line).substr(0, eq)));
    const std::string_view val = detail::trim(std::string_view(line).substr(eq + 1));
    if (key == "n_a") s.dims.n_a = detail::parse_int(val, lineno, "n_a");
    else if (key == "n_b") s.dims.n_b = detail::parse_int(val, lineno, "n_b");
    else if (key == "seed") {
      const std::string tmp(val);
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(tmp.data(), tmp.data() + tmp.size(), v);
      if (ec != std::errc() || p != tmp.data() + tmp.size() || tmp.empty())
        throw ParseError("expected an unsigned integer for seed", lineno);
      s.seed = v;
    }
    else if (key == "lambda_min") s.lambda_min = detail::parse_double(val, lineno, "lambda_min");
    else if (key == "lambda_max") s.lambda_max = detail::parse_double(val, lineno, "lambda_max");
    else if (key == "missing_rate_a") s.missing_rate_a = detail::parse_double(val, lineno, "missing_rate_a");
    else if (key == "missing_rate_b") s.missing_rate_b = detail::parse_double(val, lineno, "missing_rate_b");
    else if (key == "min_cell") s.min_cell = detail::parse_double(val, lineno, "min_cell");
    else if (key == "population") s.population = detail::parse_double(val, lineno, "population");
    else throw ParseError("unknown key '" + key + "'", lineno);
  }
  try {
    validate(s);
  } catch (const DomainError& e) {
    throw ParseError(std::string("invalid simulation spec: ") + e.what());
  }
  return s;
}

}  // namespace dse
