#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfnal {

inline constexpr const char* kToolVersion = "0.1.0";

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// First line of every output file: tool version and resolved-config hash.
inline std::string provenance_line(const std::string& config_hash) {
  return std::string("# gfnal ") + kToolVersion + " config_hash=" + config_hash;
}

class CsvWriter {
 public:
  CsvWriter(std::ostream& os, const std::string& config_hash, const std::vector<std::string>& columns) : os_(os) {
    os_ << provenance_line(config_hash) << '\n';
    row(columns);
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) os_ << (i ? "," : "") << fields[i];
    os_ << '\n';
  }

 private:
  std::ostream& os_;
};

struct CsvTable {
  std::string provenance;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw std::runtime_error("csv: missing column " + name);
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (t.provenance.empty()) t.provenance = line;
      continue;
    }
    auto fields = split_csv_line(line);
    if (!have_header) {
      t.columns = std::move(fields);
      have_header = true;
    } else {
      if (fields.size() != t.columns.size()) throw std::runtime_error("csv: ragged row: " + line);
      t.rows.push_back(std::move(fields));
    }
  }
  if (!have_header) throw std::runtime_error("csv: missing header row");
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_csv(in);
}

}  // namespace gfnal
