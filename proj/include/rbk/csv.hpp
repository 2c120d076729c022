#ifndef RBK_CSV_HPP
#define RBK_CSV_HPP

// Minimal numeric CSV reading/writing for the project's file formats:
// one header row, comma separated, '.' decimal, LF newlines.

#include <charconv>
#include <cstddef>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rbk/error.hpp"
#include "rbk/geometry.hpp"

namespace rbk::csv {

inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    std::string_view field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    out.emplace_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

/// Numeric columns selected by name from a headered CSV.
struct Table {
  std::vector<std::string> columns;     ///< requested column names, in request order
  std::vector<std::vector<double>> data;  ///< data[c][row]
  std::vector<std::string> ignored;     ///< header columns that were not requested

  std::size_t rows() const noexcept { return data.empty() ? 0 : data.front().size(); }
  const std::vector<double>& operator[](std::size_t c) const { return data[c]; }
};

/// Reads the named columns (all must be present in the header); other
/// columns are skipped and listed in `ignored`. Malformed rows raise a
/// format error naming the 1-based line number.
inline Table read_table(std::istream& is, std::span<const std::string> wanted) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorKind::format, "line 1: missing header");
  const auto header = split(line);
  Table t;
  std::vector<std::size_t> pos;
  for (const auto& w : wanted) {
    std::size_t found = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == w) found = i;
    if (found == header.size()) throw Error(ErrorKind::format, "line 1: header lacks column '" + w + "'");
    pos.push_back(found);
    t.columns.push_back(w);
  }
  for (const auto& h : header) {
    bool used = false;
    for (const auto& w : wanted) used = used || h == w;
    if (!used) t.ignored.push_back(h);
  }
  t.data.assign(wanted.size(), {});
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line);
    if (fields.size() != header.size())
      throw Error(ErrorKind::format, "line " + std::to_string(lineno) + ": expected " +
                                         std::to_string(header.size()) + " fields, found " +
                                         std::to_string(fields.size()));
    for (std::size_t c = 0; c < pos.size(); ++c) {
      double v = 0.0;
      if (!parse_double(fields[pos[c]], v))
        throw Error(ErrorKind::format, "line " + std::to_string(lineno) + ": column '" + wanted[c] +
                                           "' is not a number: '" + fields[pos[c]] + "'");
      t.data[c].push_back(v);
    }
  }
  return t;
}

inline Table read_table(std::istream& is, std::initializer_list<std::string> wanted) {
  const std::vector<std::string> w(wanted);
  return read_table(is, std::span<const std::string>(w));
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// `x,y,value` observations.
inline ObservationSet read_observations(std::istream& is) {
  const Table t = read_table(is, {"x", "y", "value"});
  ObservationSet obs;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    obs.locations.push_back({t[0][i], t[1][i]});
    obs.values.push_back(t[2][i]);
  }
  return obs;
}

/// `x,y` sites; extra columns are allowed.
inline std::vector<Location2D> read_sites(std::istream& is) {
  const Table t = read_table(is, {"x", "y"});
  std::vector<Location2D> out;
  for (std::size_t i = 0; i < t.rows(); ++i) out.push_back({t[0][i], t[1][i]});
  return out;
}

}  // namespace rbk::csv

#endif  // RBK_CSV_HPP
