#pragma once

// Text formats.
//
// Observed data (CSV):
//   i,j,k,l,count
//   1,1,1,-1,150840
// One row per data coordinate. Negative k / l are missing codes. Blank lines
// and lines starting with '#' are ignored.
//
// CD map:
//   1,1,1,-1 -> (1,1,1,1);(1,1,1,2)
// One row per data coordinate; targets separated by ';'.
//
// Full table (CSV):
//   i,j,k,l,y
// One row per cell in full-table enumeration order. Values are written in the
// shortest form that reads back to the identical double.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "dse/errors.hpp"
#include "dse/table_model.hpp"

namespace dse {

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline int parse_int(std::string_view s, std::size_t line, const char* what) {
  s = trim(s);
  int v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty())
    throw ParseError("expected an integer for " + std::string(what) + ", got '" + std::string(s) + "'", line);
  return v;
}

inline double parse_double(std::string_view s, std::size_t line, const char* what) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty())
    throw ParseError("expected a number for " + std::string(what) + ", got '" + std::string(s) + "'", line);
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw InternalError("failed to format a double");
  return std::string(buf, p);
}

inline bool skippable(std::string_view line) {
  line = trim(line);
  return line.empty() || line.front() == '#';
}

inline std::string strip_spaces(std::string_view s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  return out;
}

}  // namespace detail

struct DataRow {
  DataIndex key;
  double count = 0.0;
  std::size_t line = 0;
};

inline std::vector<DataRow> parse_observed_rows(std::istream& in) {
  std::vector<DataRow> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    if (!header) {
      if (detail::strip_spaces(line) != "i,j,k,l,count")
        throw ParseError("expected header 'i,j,k,l,count'", lineno);
      header = true;
      continue;
    }
    const auto f = detail::split(line, ',');
    if (f.size() != 5) throw ParseError("expected 5 comma-separated fields", lineno);
    DataRow r;
    r.key = DataIndex{detail::parse_int(f[0], lineno, "i"), detail::parse_int(f[1], lineno, "j"),
                      detail::parse_int(f[2], lineno, "k"), detail::parse_int(f[3], lineno, "l")};
    r.count = detail::parse_double(f[4], lineno, "count");
    r.line = lineno;
    rows.push_back(r);
  }
  if (!header) throw ParseError("observed-data file is empty (missing header 'i,j,k,l,count')");
  return rows;
}

struct CdRow {
  DataIndex key;
  std::vector<FullIndex> targets;
  std::size_t line = 0;
};

inline std::vector<CdRow> parse_cd_rows(std::string_view content) {
  std::vector<CdRow> rows;
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start <= content.size()) {
    const auto nl = content.find('\n', start);
    const std::string_view raw = content.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    start = nl == std::string_view::npos ? content.size() + 1 : nl + 1;
    ++lineno;
    if (detail::skippable(raw)) continue;
    const std::string line = detail::strip_spaces(raw);
    const auto arrow = line.find("->");
    if (arrow == std::string::npos) throw ParseError("CD row needs 'i,j,k,l -> (i,j,k,l);...'", lineno);
    const auto lhs = detail::split(std::string_view(line).substr(0, arrow), ',');
    if (lhs.size() != 4) throw ParseError("CD row key must have 4 fields", lineno);
    CdRow r;
    r.line = lineno;
    r.key = DataIndex{detail::parse_int(lhs[0], lineno, "i"), detail::parse_int(lhs[1], lineno, "j"),
                      detail::parse_int(lhs[2], lineno, "k"), detail::parse_int(lhs[3], lineno, "l")};
    const std::string_view rhs = std::string_view(line).substr(arrow + 2);
    if (rhs.empty()) throw ParseError("empty target set for " + to_string(r.key), lineno);
    for (auto tok : detail::split(rhs, ';')) {
      if (tok.size() < 2 || tok.front() != '(' || tok.back() != ')')
        throw ParseError("malformed target '" + std::string(tok) + "'", lineno);
      const auto f = detail::split(tok.substr(1, tok.size() - 2), ',');
      if (f.size() != 4) throw ParseError("target must have 4 fields", lineno);
      r.targets.push_back(FullIndex{detail::parse_int(f[0], lineno, "i"), detail::parse_int(f[1], lineno, "j"),
                                    detail::parse_int(f[2], lineno, "k"), detail::parse_int(f[3], lineno, "l")});
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Smallest dims holding every positive category in the given rows.
inline Dims infer_dims(const std::vector<DataRow>& data, const std::vector<CdRow>& cd = {}) {
  Dims d{1, 1};
  for (const auto& r : data) {
    d.n_a = std::max(d.n_a, r.key.k);
    d.n_b = std::max(d.n_b, r.key.l);
  }
  for (const auto& r : cd) {
    d.n_a = std::max(d.n_a, r.key.k);
    d.n_b = std::max(d.n_b, r.key.l);
    for (const auto& v : r.targets) {
      d.n_a = std::max(d.n_a, v.k);
      d.n_b = std::max(d.n_b, v.l);
    }
  }
  return d;
}

inline ObservedData make_observed(const std::vector<DataRow>& rows, const Dims& dims) {
  std::map<DataIndex, double> counts;
  for (const auto& r : rows) {
    try {
      check_data_index(r.key, dims);
    } catch (const StructuralError& e) {
      throw StructuralError("line " + std::to_string(r.line) + ": " + e.what());
    } catch (const DomainError& e) {
      throw ParseError(e.what(), r.line);
    }
    if (!std::isfinite(r.count) || r.count < 0.0) throw ParseError("count must be finite and nonnegative", r.line);
    if (!counts.emplace(r.key, r.count).second) throw ParseError("duplicate coordinate " + to_string(r.key), r.line);
  }
  return ObservedData(dims, std::move(counts));
}

inline ObservedData read_observed_data(std::istream& in, std::optional<Dims> dims = std::nullopt) {
  const auto rows = parse_observed_rows(in);
  return make_observed(rows, dims ? *dims : infer_dims(rows));
}

inline void write_observed_data(std::ostream& out, const ObservedData& data) {
  out << "i,j,k,l,count\n";
  for (const auto& [u, x] : data.counts())
    out << u.i << ',' << u.j << ',' << u.k << ',' << u.l << ',' << detail::format_double(x) << '\n';
}

/// CD map with exactly the listed target sets.
inline CDMap load_explicit_cd(std::string_view content, const Dims& dims) {
  std::map<DataIndex, std::vector<FullIndex>> forward;
  for (auto& r : parse_cd_rows(content)) {
    if ((r.key.i != 0 && r.key.i != 1) || (r.key.j != 0 && r.key.j != 1) || r.key.k == 0 || r.key.l == 0 ||
        r.key.k > dims.n_a || r.key.l > dims.n_b)
      throw ParseError("CD key " + to_string(r.key) + " is out of range for " + to_string(dims), r.line);
    for (const auto& v : r.targets)
      if (!v.valid(dims)) throw ParseError("target " + to_string(v) + " is out of range for " + to_string(dims), r.line);
    const auto key = r.key;
    if (!forward.emplace(key, std::move(r.targets)).second)
      throw ParseError("duplicate CD row for " + to_string(key), r.line);
  }
  return CDMap(dims, std::move(forward));
}

inline void write_cd_map(std::ostream& out, const CDMap& cd) {
  for (const auto& e : cd.entries()) {
    out << e.key.i << ',' << e.key.j << ',' << e.key.k << ',' << e.key.l << " -> ";
    for (std::size_t n = 0; n < e.targets.size(); ++n) out << (n ? ";" : "") << to_string(e.targets[n]);
    out << '\n';
  }
}

inline void write_full_table(std::ostream& out, const FullTable& t) {
  out << "i,j,k,l,y\n";
  for (std::size_t n = 0; n < t.size(); ++n) {
    const auto v = FullIndex::from_flat(n, t.dims());
    out << v.i << ',' << v.j << ',' << v.k << ',' << v.l << ',' << detail::format_double(t.at(n)) << '\n';
  }
}

inline FullTable read_full_table(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::vector<std::pair<FullIndex, double>> cells;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    if (!header) {
      if (detail::strip_spaces(line) != "i,j,k,l,y") throw ParseError("expected header 'i,j,k,l,y'", lineno);
      header = true;
      continue;
    }
    const auto f = detail::split(line, ',');
    if (f.size() != 5) throw ParseError("expected 5 comma-separated fields", lineno);
    FullIndex v{detail::parse_int(f[0], lineno, "i"), detail::parse_int(f[1], lineno, "j"),
                detail::parse_int(f[2], lineno, "k"), detail::parse_int(f[3], lineno, "l")};
    if ((v.i != 0 && v.i != 1) || (v.j != 0 && v.j != 1) || v.k < 1 || v.l < 1)
      throw ParseError("invalid table coordinate " + to_string(v), lineno);
    const double y = detail::parse_double(f[4], lineno, "y");
    if (!std::isfinite(y) || y < 0.0) throw ParseError("table value must be finite and nonnegative", lineno);
    cells.emplace_back(v, y);
  }
  if (!header) throw ParseError("table file is empty (missing header 'i,j,k,l,y')");
  Dims d{1, 1};
  for (const auto& c : cells) {
    d.n_a = std::max(d.n_a, c.first.k);
    d.n_b = std::max(d.n_b, c.first.l);
  }
  if (cells.size() != d.full_size())
    throw ParseError("table has " + std::to_string(cells.size()) + " rows, expected " + std::to_string(d.full_size()));
  FullTable t(d, -1.0);
  for (const auto& [v, y] : cells) {
    if (t[v] != -1.0) throw ParseError("duplicate table cell " + to_string(v));
    t[v] = y;
  }
  return t;
}

}  // namespace dse
