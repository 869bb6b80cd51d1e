#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mfloc/error.hpp"

namespace mfloc::csv {

/// Decimal text with 17 significant digits; reads back to the identical double.
inline std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

inline double parse_double(std::string_view text) {
  std::string owned(text);
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(owned.c_str(), &end);
  // ERANGE on gradual underflow still yields the correctly rounded subnormal.
  if (end == owned.c_str() || *end != '\0' || (errno == ERANGE && std::abs(v) == HUGE_VAL))
    throw io_error("not a number: '" + owned + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

/// A parsed CSV table: `#` comment lines are kept separately from data rows.
struct table {
  std::vector<std::string> comments;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline table parse(std::istream& in) {
  table t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    if (sv.front() == '#') {
      t.comments.emplace_back(sv.substr(1));
      continue;
    }
    auto cells = split(sv);
    if (!have_header) {
      for (auto c : cells) t.header.emplace_back(trim(c));
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw io_error("row has " + std::to_string(cells.size()) + " cells, header has " +
                     std::to_string(t.header.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (auto c : cells) row.push_back(parse_double(trim(c)));
    t.rows.push_back(std::move(row));
  }
  if (!have_header) throw io_error("csv input has no header");
  return t;
}

inline table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  return parse(in);
}

/// Writes the provenance block: one `# line` per entry.
inline void write_comments(std::ostream& out, const std::vector<std::string>& lines) {
  for (const auto& l : lines) out << "# " << l << '\n';
}

} // namespace mfloc::csv
