// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small CSV table: comma delimiter, one header row, reals printed with 17
// significant digits so they re-parse to the same double.

#ifndef FP8Q_CSV_HPP_
#define FP8Q_CSV_HPP_

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fp8q/format.hpp"

namespace fp8q {

inline std::string csv_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  void add_row(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw Error("csv: row width does not match header");
    for (const auto& cell : row) {
      if (cell.find_first_of(",\n\"") != std::string::npos) throw Error("csv: cell needs quoting: " + cell);
    }
    rows_.push_back(std::move(row));
  }

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header_.size(); ++i) {
      if (header_[i] == name) return i;
    }
    throw Error("csv: no column " + name);
  }

  double real(std::size_t row, const std::string& col) const { return std::stod(rows_.at(row).at(column(col))); }

  void write(std::ostream& os) const {
    write_line(os, header_);
    for (const auto& r : rows_) write_line(os, r);
  }

  std::string str() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path + " for writing");
    write(os);
    if (!os) throw Error("write failed: " + path);
  }

  static CsvTable parse(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw Error("csv: missing header");
    CsvTable t(split(line));
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      t.add_row(split(line));
    }
    return t;
  }

  static CsvTable load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open " + path);
    return parse(is);
  }

 private:
  static void write_line(std::ostream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  }

  static std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace fp8q

#endif  // FP8Q_CSV_HPP_
