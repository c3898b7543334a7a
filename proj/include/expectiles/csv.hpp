#pragma once

// Minimal numeric CSV: comma separated, header row required, '.' decimals.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace expectiles::csv {

class ParseError : public std::invalid_argument {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::invalid_argument("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }

  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw std::invalid_argument("CSV has no column named '" + name + "'");
  }

  const std::vector<double>& column(const std::string& name) const { return columns[index(name)]; }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline bool parse_double(std::string_view cell, double& out) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  if (cell.empty()) return false;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size();
}

}  // namespace detail

inline Table read(std::istream& in) {
  Table table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line);
    if (!have_header) {
      for (auto c : cells) {
        if (c.size() >= 2 && c.front() == '"' && c.back() == '"') c = c.substr(1, c.size() - 2);
        if (c.empty()) throw ParseError(line_no, "empty column name in header");
        table.header.emplace_back(c);
      }
      table.columns.resize(table.header.size());
      have_header = true;
      continue;
    }
    if (cells.size() != table.header.size()) {
      throw ParseError(line_no, "expected " + std::to_string(table.header.size()) + " fields, found " +
                                    std::to_string(cells.size()));
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      double v = 0.0;
      if (!detail::parse_double(cells[i], v)) {
        throw ParseError(line_no, "field '" + std::string(cells[i]) + "' in column '" + table.header[i] +
                                      "' is not a number");
      }
      table.columns[i].push_back(v);
    }
  }
  if (!have_header) throw ParseError(line_no, "missing header row");
  return table;
}

/// Round-trip formatting with 17 significant digits.
inline std::string format(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    out << cells[i];
  }
  out << '\n';
}

inline void write_row(std::ostream& out, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ',';
    out << format(values[i]);
  }
  out << '\n';
}

}  // namespace expectiles::csv
