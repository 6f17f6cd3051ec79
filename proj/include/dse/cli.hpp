#pragma once

// Subcommand implementations behind the `dse` tool. Each command writes a
// human-readable report followed by a "--- json ---" line and one line of
// JSON, and returns the process exit code:
//   0 success, 1 validation failure, 2 numerical failure, 3 parse failure.

#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dse/em.hpp"
#include "dse/errors.hpp"
#include "dse/fast_fixpoint.hpp"
#include "dse/io.hpp"
#include "dse/regression.hpp"
#include "dse/simulate.hpp"
#include "dse/table_model.hpp"

namespace dse::cli {

using nlohmann::json;

enum ExitCode : int { kOk = 0, kValidationFailure = 1, kNumericalFailure = 2, kParseFailure = 3 };

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return kParseFailure;
  if (dynamic_cast<const StructuralError*>(&e) || dynamic_cast<const DomainError*>(&e)) return kValidationFailure;
  return kNumericalFailure;
}

struct Inputs {
  ObservedData data;
  CDMap cd;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Data file plus optional explicit CD file; dims come from the largest category seen in either.
inline Inputs load_inputs(const std::string& data_path, const std::optional<std::string>& cd_path) {
  std::istringstream data_in(read_file(data_path));
  const auto rows = parse_observed_rows(data_in);
  std::string cd_text;
  std::vector<CdRow> cd_rows;
  if (cd_path) {
    cd_text = read_file(*cd_path);
    cd_rows = parse_cd_rows(cd_text);
  }
  const Dims dims = infer_dims(rows, cd_rows);
  Inputs in{make_observed(rows, dims), {}};
  in.cd = cd_path ? load_explicit_cd(cd_text, dims) : build_standard_cd(in.data);
  return in;
}

inline json to_json(const ValidationReport& rep) {
  json arr = json::array();
  for (const auto& c : rep.checks) {
    json j{{"id", c.id}, {"passed", c.passed}, {"detail", c.detail}};
    if (c.witness_u) j["witness_u"] = to_string(*c.witness_u);
    if (c.witness_v) j["witness_v"] = to_string(*c.witness_v);
    arr.push_back(std::move(j));
  }
  return arr;
}

inline void print_checks(std::ostream& out, const ValidationReport& rep, bool positive) {
  for (const auto& c : rep.checks)
    out << "  " << c.id << "  " << (c.passed ? "PASS" : (positive ? "WARN" : "FAIL")) << "  " << c.detail << '\n';
}

inline void emit_json(std::ostream& out, const json& j) { out << "--- json ---\n" << j.dump() << '\n'; }

// ---------------------------------------------------------------------------

inline int cmd_validate(const std::string& data_path, const std::optional<std::string>& cd_path, std::ostream& out,
                        std::ostream& err) {
  Inputs in;
  try {
    in = load_inputs(data_path, cd_path);
  } catch (const StructuralError& e) {
    out << "structural assumptions:\n  S3  FAIL  " << e.what() << "\nstatus: invalid\n";
    emit_json(out, json{{"status", "invalid"}, {"structural", json::array({json{{"id", "S3"}, {"passed", false}, {"detail", e.what()}}})}});
    return kValidationFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  const auto structural = validate_structural(in.cd);
  out << "dims: " << to_string(in.data.dims()) << "  observed coordinates: " << in.data.counts().size() << '\n';
  out << "structural assumptions:\n";
  print_checks(out, structural, false);
  json j{{"dims", {in.data.dims().n_a, in.data.dims().n_b}}, {"structural", to_json(structural)}};
  bool warn = false;
  if (structural.all_passed()) {
    const auto positive = validate_positive(in.cd, in.data);
    out << "positive assumptions:\n";
    print_checks(out, positive, true);
    warn = !positive.all_passed();
    j["positive"] = to_json(positive);
  }
  const bool ok = structural.all_passed();
  out << "status: " << (ok ? "ok" : "invalid") << (warn ? " (with warnings)" : "") << '\n';
  j["status"] = ok ? "ok" : "invalid";
  j["warning"] = warn;
  emit_json(out, j);
  return ok ? kOk : kValidationFailure;
}

// ---------------------------------------------------------------------------

enum class Method { Em, Fast };

struct EstimateOptions {
  Method method = Method::Em;
  std::optional<double> tol;     // defaults: 1e-8 (em), 1e-10 (fast)
  std::optional<int> max_iters;  // defaults: 5000 (em), 10000 (fast)
  EmInit init = EmInit::AllOnes;
  double delta_clamp = 0.0;
};

struct RunReport {
  std::string method;
  bool converged = false;
  int iterations = 0;
  double wall_seconds = 0.0;
  std::string table_path;
  FullTable table;
  ParamVector params;
  double loglik = 0.0;
  double dist_residual = 0.0;  // max relative |DIST(y) - y|
  double uepr_residual = 0.0;  // max relative |UE(PR(y)) - y|
  std::vector<std::string> warnings;
};

/// Runs one method; wall time covers the solver call only.
inline RunReport estimate(const Inputs& in, const EstimateOptions& opts) {
  shared_design(in.data.dims());  // design setup is shared by both methods, kept out of the timing
  RunReport rep;
  const auto t0 = std::chrono::steady_clock::now();
  if (opts.method == Method::Em) {
    EmOptions eo;
    eo.tol = opts.tol.value_or(1e-8);
    eo.max_iters = opts.max_iters.value_or(5000);
    eo.init = opts.init;
    auto r = run_em(in.data, in.cd, eo);
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.method = "em";
    rep.converged = r.trace.converged;
    rep.iterations = r.trace.iteration_count();
    rep.table = std::move(r.table);
    rep.params = std::move(r.params);
    if (!rep.converged) rep.warnings.push_back("EM reached max_iters before tol");
  } else {
    FixpointOptions fo;
    fo.tol = opts.tol.value_or(1e-10);
    fo.max_iters = opts.max_iters.value_or(10000);
    fo.delta_clamp = opts.delta_clamp;
    auto r = run_fast(in.data, in.cd, fo);
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.method = "fast";
    rep.converged = r.converged();
    rep.iterations = r.iterations();
    rep.table = std::move(r.table);
    rep.params = std::move(r.params);
    rep.warnings = std::move(r.warnings);
  }
  rep.loglik = loglik(rep.table, rep.params);
  const ObservedData& data = in.data;
  rep.dist_residual = max_relative_difference(dist(data, in.cd, rep.table).values(), rep.table.values());
  rep.uepr_residual = max_relative_difference(ue(pr(rep.table)).values(), rep.table.values());
  return rep;
}

inline json to_json(const RunReport& r) {
  std::vector<double> params(r.params.coef.data(), r.params.coef.data() + r.params.coef.size());
  std::vector<double> table(r.table.values().begin(), r.table.values().end());
  return json{{"method", r.method},
              {"converged", r.converged},
              {"iterations", r.iterations},
              {"wall_seconds", r.wall_seconds},
              {"table_path", r.table_path},
              {"loglik", r.loglik},
              {"dist_residual", r.dist_residual},
              {"uepr_residual", r.uepr_residual},
              {"params", params},
              {"table", table},
              {"warnings", r.warnings}};
}

inline void print_report(std::ostream& out, const RunReport& r) {
  out << "method: " << r.method << "\nconverged: " << (r.converged ? "yes" : "no") << "\niterations: " << r.iterations
      << "\nwall time (s): " << r.wall_seconds << '\n';
  if (!r.table_path.empty()) out << "table written to: " << r.table_path << '\n';
  out << "loglik: " << std::setprecision(12) << r.loglik << '\n'
      << "fixed-point residual DIST: " << std::setprecision(3) << r.dist_residual << '\n'
      << "fixed-point residual UE(PR): " << r.uepr_residual << '\n'
      << std::setprecision(6) << "estimated table:\n";
  for (std::size_t n = 0; n < r.table.size(); ++n)
    out << "  " << to_string(FullIndex::from_flat(n, r.table.dims())) << "  " << std::fixed << std::setprecision(1)
        << r.table.at(n) << std::defaultfloat << std::setprecision(6) << '\n';
  out << "parameters:";
  for (Eigen::Index n = 0; n < r.params.coef.size(); ++n) out << ' ' << r.params.coef[n];
  out << '\n';
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
}

inline int cmd_estimate(const std::string& data_path, const std::optional<std::string>& cd_path,
                        const EstimateOptions& opts, const std::optional<std::string>& out_path, std::ostream& out,
                        std::ostream& err) {
  try {
    const Inputs in = load_inputs(data_path, cd_path);
    RunReport rep = estimate(in, opts);
    if (out_path) {
      std::ofstream f(*out_path);
      if (!f) throw ParseError("cannot write '" + *out_path + "'");
      write_full_table(f, rep.table);
      rep.table_path = *out_path;
    }
    print_report(out, rep);
    emit_json(out, to_json(rep));
    return kOk;
  } catch (const PositivityError& e) {
    err << "error: " << e.what() << "\nhint: rerun with --delta-clamp <delta> (e.g. 1e-8)\n";
    return kNumericalFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

// ---------------------------------------------------------------------------

struct Comparison {
  std::optional<RunReport> em, fast;
  std::string em_error, fast_error;
  double max_rel_diff = std::numeric_limits<double>::infinity();
  double speedup = 0.0;  // em time / fast time
  bool equivalent = false;
};

inline Comparison compare(const Inputs& in, EstimateOptions em_opts, EstimateOptions fast_opts, double equiv_tol) {
  Comparison c;
  em_opts.method = Method::Em;
  fast_opts.method = Method::Fast;
  try {
    c.em = estimate(in, em_opts);
  } catch (const std::exception& e) {
    c.em_error = e.what();
  }
  try {
    c.fast = estimate(in, fast_opts);
  } catch (const std::exception& e) {
    c.fast_error = e.what();
  }
  if (c.em && c.fast) {
    c.max_rel_diff = max_relative_difference(c.em->table.values(), c.fast->table.values());
    c.speedup = c.fast->wall_seconds > 0.0 ? c.em->wall_seconds / c.fast->wall_seconds
                                           : std::numeric_limits<double>::infinity();
    c.equivalent = c.max_rel_diff <= equiv_tol && c.em->converged && c.fast->converged;
  }
  return c;
}

inline int cmd_compare(const std::string& data_path, const std::optional<std::string>& cd_path,
                       const EstimateOptions& em_opts, const EstimateOptions& fast_opts, double equiv_tol,
                       std::ostream& out, std::ostream& err) {
  Inputs in;
  try {
    in = load_inputs(data_path, cd_path);
    for (const auto& ch : validate_structural(in.cd).checks)
      if (!ch.passed) throw StructuralError(ch.id + " violated: " + ch.detail);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  const Comparison c = compare(in, em_opts, fast_opts, equiv_tol);
  json j{{"equivalent", c.equivalent}, {"equiv_tol", equiv_tol}};
  auto side = [&](const char* name, const std::optional<RunReport>& r, const std::string& error) {
    if (r) {
      out << name << ": converged=" << (r->converged ? "yes" : "no") << " iterations=" << r->iterations
          << " wall_s=" << r->wall_seconds << '\n';
      j[name] = json{{"converged", r->converged}, {"iterations", r->iterations}, {"wall_seconds", r->wall_seconds}};
    } else {
      out << name << ": FAILED (" << error << ")\n";
      j[name] = json{{"error", error}};
    }
  };
  side("em", c.em, c.em_error);
  side("fast", c.fast, c.fast_error);
  if (c.em && c.fast) {
    out << "max relative difference: " << c.max_rel_diff << "\nspeedup (em/fast): " << c.speedup << '\n';
    j["max_rel_diff"] = c.max_rel_diff;
    j["speedup"] = c.speedup;
  }
  out << "equivalent: " << (c.equivalent ? "yes" : "NO") << " (tolerance " << equiv_tol << ")\n";
  emit_json(out, j);
  return kOk;
}

// ---------------------------------------------------------------------------

inline int cmd_simulate(const std::string& spec_path, const std::string& out_prefix, std::optional<std::uint64_t> seed,
                        std::ostream& out, std::ostream& err) {
  try {
    std::istringstream spec_in(read_file(spec_path));
    SimSpec spec = parse_sim_spec(spec_in);
    if (seed) spec.seed = *seed;
    const SimInstance s = simulate(spec);
    const std::string truth_path = out_prefix + "_truth.csv", data_path = out_prefix + "_data.csv";
    std::ofstream tf(truth_path), df(data_path);
    if (!tf || !df) throw ParseError("cannot write output files with prefix '" + out_prefix + "'");
    write_full_table(tf, s.truth);
    write_observed_data(df, s.data);
    out << "dims: " << to_string(spec.dims) << "\nseed: " << spec.seed << "\ngenerator: " << kGeneratorName
        << "\ntruth: " << truth_path << "\ndata: " << data_path << '\n';
    emit_json(out, json{{"dims", {spec.dims.n_a, spec.dims.n_b}},
                        {"seed", spec.seed},
                        {"generator", kGeneratorName},
                        {"truth", truth_path},
                        {"data", data_path}});
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

// ---------------------------------------------------------------------------

/// "5x5,10x10" -> {{5,5},{10,10}}; empty string -> empty grid.
inline std::vector<Dims> parse_grid(const std::string& text) {
  std::vector<Dims> grid;
  if (detail::trim(text).empty()) return grid;
  for (auto cell : detail::split(text, ',')) {
    const auto x = cell.find_first_of("xX");
    if (x == std::string_view::npos) throw ParseError("grid cell '" + std::string(cell) + "' is not of the form AxB");
    const int a = detail::parse_int(cell.substr(0, x), 0, "grid n_A");
    const int b = detail::parse_int(cell.substr(x + 1), 0, "grid n_B");
    if (a < 1 || b < 1) throw ParseError("grid dims must be positive");
    grid.push_back(Dims{a, b});
  }
  return grid;
}

struct BenchRow {
  Dims dims;
  double em_seconds = 0.0, fast_seconds = 0.0, speedup = 0.0, max_rel_diff = 0.0;
  int em_iters = 0, fast_iters = 0;
  std::string status = "ok";
};

struct BenchOptions {
  std::uint64_t seed = 1;
  double population = 1e5;
  double missing_rate = 0.1;
};

inline std::vector<BenchRow> bench(const std::vector<Dims>& grid, const BenchOptions& opts) {
  std::vector<BenchRow> rows;
  for (const auto& d : grid) {
    BenchRow row;
    row.dims = d;
    try {
      SimSpec spec;
      spec.dims = d;
      spec.seed = opts.seed;
      spec.population = opts.population;
      spec.missing_rate_a = spec.missing_rate_b = opts.missing_rate;
      spec.min_cell = 1.0;
      const SimInstance s = simulate_positive(spec);
      const Inputs in{s.data, build_standard_cd(s.data)};
      const Comparison c = compare(in, {}, {}, 1e-6);
      if (!c.em || !c.fast) throw NumericalError(c.em ? c.fast_error : c.em_error);
      row.em_seconds = c.em->wall_seconds;
      row.fast_seconds = c.fast->wall_seconds;
      row.speedup = c.speedup;
      row.max_rel_diff = c.max_rel_diff;
      row.em_iters = c.em->iterations;
      row.fast_iters = c.fast->iterations;
      if (!c.em->converged || !c.fast->converged) row.status = "not-converged";
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline int cmd_bench(const std::string& grid_text, const BenchOptions& opts, std::ostream& out, std::ostream& err) {
  std::vector<Dims> grid;
  try {
    grid = parse_grid(grid_text);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  const auto rows = bench(grid, opts);
  out << std::left << std::setw(8) << "n_A" << std::setw(8) << "n_B" << std::setw(14) << "em_s" << std::setw(14)
      << "fast_s" << std::setw(12) << "speedup" << std::setw(10) << "em_it" << std::setw(10) << "fast_it"
      << std::setw(14) << "max_rel_diff" << "status\n";
  json arr = json::array();
  for (const auto& r : rows) {
    out << std::setw(8) << r.dims.n_a << std::setw(8) << r.dims.n_b << std::setw(14) << r.em_seconds << std::setw(14)
        << r.fast_seconds << std::setw(12) << r.speedup << std::setw(10) << r.em_iters << std::setw(10) << r.fast_iters
        << std::setw(14) << r.max_rel_diff << r.status << '\n';
    arr.push_back(json{{"n_a", r.dims.n_a},
                       {"n_b", r.dims.n_b},
                       {"em_seconds", r.em_seconds},
                       {"fast_seconds", r.fast_seconds},
                       {"speedup", r.speedup},
                       {"em_iters", r.em_iters},
                       {"fast_iters", r.fast_iters},
                       {"max_rel_diff", r.max_rel_diff},
                       {"status", r.status}});
  }
  emit_json(out, json{{"seed", opts.seed}, {"generator", kGeneratorName}, {"rows", arr}});
  return kOk;
}

}  // namespace dse::cli
