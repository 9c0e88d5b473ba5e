#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "earl/core.hpp"

namespace earl {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim_cell(std::string s) {
  auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && ws(s.back())) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && ws(s[b])) ++b;
  return s.substr(b);
}

inline double parse_cell(const std::string& cell, std::size_t row, const std::string& column) {
  double v = 0.0;
  const char* begin = cell.data();
  const char* end = cell.data() + cell.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (cell.empty() || ec != std::errc() || ptr != end)
    throw ParseError("row " + std::to_string(row) + ", column '" + column +
                     "': non-numeric cell '" + cell + "'");
  if (!std::isfinite(v))
    throw ParseError("row " + std::to_string(row) + ", column '" + column +
                     "': non-finite value '" + cell + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Reads a `y,a,x1,...,xp` table. Columns may appear in any order; the
/// covariates must be exactly x1..xp. A treatment column coded 0/1 is
/// remapped to -1/+1 and a warning appended to `warnings` (if given).
/// Row numbers in error messages count the header as row 1.
inline Dataset load_csv(const std::filesystem::path& path,
                        std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim_cell(line).empty())
    throw ParseError("'" + path.string() + "' is empty");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);

  std::vector<std::string> header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim_cell(h);
  int y_col = -1, a_col = -1;
  std::vector<int> x_col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h == "y") {
      y_col = static_cast<int>(c);
    } else if (h == "a") {
      a_col = static_cast<int>(c);
    } else if (h.size() >= 2 && h[0] == 'x') {
      std::size_t j = 0;
      auto [ptr, ec] = std::from_chars(h.data() + 1, h.data() + h.size(), j);
      if (ec != std::errc() || ptr != h.data() + h.size() || j < 1)
        throw ParseError("row 1: unrecognized column '" + h + "'");
      if (x_col.size() < j) x_col.resize(j, -1);
      if (x_col[j - 1] != -1) throw ParseError("row 1: duplicate column '" + h + "'");
      x_col[j - 1] = static_cast<int>(c);
    } else {
      throw ParseError("row 1: unrecognized column '" + h + "'");
    }
  }
  if (y_col < 0) throw ParseError("missing column 'y'");
  if (a_col < 0) throw ParseError("missing column 'a'");
  if (x_col.empty()) throw ParseError("missing covariate columns x1..xp");
  for (std::size_t j = 0; j < x_col.size(); ++j)
    if (x_col[j] < 0) throw ParseError("missing column 'x" + std::to_string(j + 1) + "'");

  std::vector<double> ys, as, xs;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim_cell(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("row " + std::to_string(row) + ": expected " +
                       std::to_string(header.size()) + " cells, found " +
                       std::to_string(cells.size()));
    for (auto& c : cells) c = detail::trim_cell(c);
    ys.push_back(detail::parse_cell(cells[static_cast<std::size_t>(y_col)], row, "y"));
    as.push_back(detail::parse_cell(cells[static_cast<std::size_t>(a_col)], row, "a"));
    for (std::size_t j = 0; j < x_col.size(); ++j)
      xs.push_back(detail::parse_cell(cells[static_cast<std::size_t>(x_col[j])], row,
                                      "x" + std::to_string(j + 1)));
  }
  if (ys.empty()) throw ParseError("'" + path.string() + "' has a header but no data rows");

  bool has_minus = false, has_zero = false;
  for (std::size_t i = 0; i < as.size(); ++i) {
    const double a = as[i];
    if (a == -1.0) has_minus = true;
    else if (a == 0.0) has_zero = true;
    else if (a != 1.0)
      throw ParseError("row " + std::to_string(i + 2) + ", column 'a': treatment must be -1/1 or 0/1");
  }
  if (has_minus && has_zero)
    throw ParseError("column 'a' mixes -1/1 and 0/1 coding");
  if (has_zero && warnings) warnings->push_back("treatment column coded 0/1; remapped 0 -> -1");

  const auto n = static_cast<Eigen::Index>(ys.size());
  const auto p = static_cast<Eigen::Index>(x_col.size());
  Matrix X(n, p);
  Eigen::VectorXi A(n);
  Vector Y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Y[i] = ys[static_cast<std::size_t>(i)];
    A[i] = as[static_cast<std::size_t>(i)] == 0.0 ? -1 : static_cast<int>(as[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = xs[static_cast<std::size_t>(i * p + j)];
  }
  return Dataset(std::move(X), std::move(A), std::move(Y));
}

/// Writes the dataset with shortest round-trip formatting for every value.
inline void write_csv(const Dataset& data, std::ostream& out) {
  out << "y,a";
  for (std::size_t j = 0; j < data.p(); ++j) out << ",x" << j + 1;
  out << '\n';
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << detail::format_double(data.Y()[r]) << ',' << data.A()[r];
    for (Eigen::Index j = 0; j < data.X().cols(); ++j) out << ',' << detail::format_double(data.X()(r, j));
    out << '\n';
  }
}

inline void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  write_csv(data, out);
}

}  // namespace earl
