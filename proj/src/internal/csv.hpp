#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cascade/errors.hpp"
#include "cascade/types.hpp"

namespace cascade::io {

// Fixed-significant-digit rendering; C locale, '.' decimal point.
inline std::string format_real(Real x, int significant_digits = 17) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", significant_digits, x);
  return buf;
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// getline that tolerates CRLF input files
inline bool read_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

inline Real parse_real(const std::string& field, std::size_t row,
                       const std::string& column) {
  try {
    std::size_t pos = 0;
    Real v = std::stod(field, &pos);
    if (pos != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw DataError("row " + std::to_string(row) + ": cannot parse '" + field +
                    "' as number in column " + column);
  }
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace cascade::io
