#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dse/cli.hpp"

namespace {

dse::cli::EstimateOptions to_options(const std::string& method, std::optional<double> tol, std::optional<int> max_iters,
                                     const std::string& init, double delta) {
  dse::cli::EstimateOptions o;
  o.method = method == "fast" ? dse::cli::Method::Fast : dse::cli::Method::Em;
  o.tol = tol;
  o.max_iters = max_iters;
  o.init = init == "spread" ? dse::EmInit::ProportionalSpread : dse::EmInit::AllOnes;
  o.delta_clamp = delta;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-system estimation for two partially labelled lists"};
  app.require_subcommand(1);

  std::string data, method = "em", init = "ones", spec, out_prefix = "sim", grid;
  std::optional<std::string> cd_file, out;
  std::optional<double> tol;
  std::optional<int> max_iters;
  std::optional<std::uint64_t> seed;
  double delta = 0.0, equiv_tol = 1e-6, population = 1e5, missing = 0.1;

  auto* validate = app.add_subcommand("validate", "Check the structural and positive assumptions");
  validate->add_option("data", data, "Observed-data CSV")->required();
  validate->add_option("--cd-file", cd_file, "Explicit CD map (default: standard -1 convention)");

  auto* estimate = app.add_subcommand("estimate", "Estimate the full table");
  estimate->add_option("data", data, "Observed-data CSV")->required();
  estimate->add_option("--cd-file", cd_file, "Explicit CD map");
  estimate->add_option("--method", method, "em or fast")->check(CLI::IsMember({"em", "fast"}));
  estimate->add_option("--tol", tol, "Convergence tolerance")->check(CLI::PositiveNumber);
  estimate->add_option("--max-iters", max_iters, "Iteration cap")->check(CLI::PositiveNumber);
  estimate->add_option("--init", init, "EM start: ones or spread")->check(CLI::IsMember({"ones", "spread"}));
  estimate->add_option("--delta-clamp", delta, "Fast method: raise every covered count to at least delta")
      ->check(CLI::NonNegativeNumber);
  estimate->add_option("--out", out, "Write the estimated table CSV here");

  auto* compare = app.add_subcommand("compare", "Run both methods and compare");
  compare->add_option("data", data, "Observed-data CSV")->required();
  compare->add_option("--cd-file", cd_file, "Explicit CD map");
  compare->add_option("--tol", tol, "EM tolerance")->check(CLI::PositiveNumber);
  compare->add_option("--max-iters", max_iters, "Iteration cap")->check(CLI::PositiveNumber);
  compare->add_option("--init", init, "EM start: ones or spread")->check(CLI::IsMember({"ones", "spread"}));
  compare->add_option("--delta-clamp", delta, "Fast method clamp")->check(CLI::NonNegativeNumber);
  compare->add_option("--equiv-tol", equiv_tol, "Max relative difference counted as equivalent");

  auto* simulate = app.add_subcommand("simulate", "Draw a truth table and observed data");
  simulate->add_option("spec", spec, "Simulation spec file")->required();
  simulate->add_option("--seed", seed, "Override the spec seed");
  simulate->add_option("--out", out_prefix, "Output prefix for <prefix>_truth.csv and <prefix>_data.csv");

  auto* bench = app.add_subcommand("bench", "Time both methods on simulated instances");
  bench->add_option("--grid", grid, "Comma-separated AxB sizes, e.g. 5x5,10x10");
  bench->add_option("--seed", seed, "Base seed");
  bench->add_option("--population", population, "Expected table total")->check(CLI::Range(1e3, 1e6));
  bench->add_option("--missing-rate", missing, "Label erasure rate for both lists")->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : dse::cli::kParseFailure;
  }

  namespace cli = dse::cli;
  if (*validate) return cli::cmd_validate(data, cd_file, std::cout, std::cerr);
  if (*estimate)
    return cli::cmd_estimate(data, cd_file, to_options(method, tol, max_iters, init, delta), out, std::cout, std::cerr);
  if (*compare) {
    const auto em_opts = to_options("em", tol, max_iters, init, delta);
    const auto fast_opts = to_options("fast", std::nullopt, max_iters, init, delta);
    return cli::cmd_compare(data, cd_file, em_opts, fast_opts, equiv_tol, std::cout, std::cerr);
  }
  if (*simulate) return cli::cmd_simulate(spec, out_prefix, seed, std::cout, std::cerr);
  cli::BenchOptions b;
  if (seed) b.seed = *seed;
  b.population = population;
  b.missing_rate = missing;
  return cli::cmd_bench(grid, b, std::cout, std::cerr);
}
