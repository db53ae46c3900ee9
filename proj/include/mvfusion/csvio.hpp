#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mvfusion/errors.hpp"
#include "mvfusion/tensor.hpp"

namespace mvf {

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& file, std::size_t line) {
  double x = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  auto [ptr, ec] = std::from_chars(b, e, x);
  if (ec != std::errc{} || ptr != e)
    throw ConfigError(file + ":" + std::to_string(line) + ": bad number '" + s + "'");
  return x;
}

inline long parse_int(const std::string& s, const std::string& file, std::size_t line) {
  long x = 0;
  const char* b = s.data();
  const char* e = b + s.size();
  auto [ptr, ec] = std::from_chars(b, e, x);
  if (ec != std::errc{} || ptr != e)
    throw ConfigError(file + ":" + std::to_string(line) + ": bad integer '" + s + "'");
  return x;
}

}  // namespace detail

// Feature matrix with an f0,f1,... header.
inline Tensor read_view_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  const auto header = detail::split_line(line);
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] != "f" + std::to_string(j))
      throw ConfigError(path + ":1: expected header column f" + std::to_string(j) + ", got '" + header[j] + "'");
  const std::size_t d = header.size();

  std::vector<double> data;
  std::size_t ln = 1, rows = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    const auto cells = detail::split_line(line);
    if (cells.size() != d)
      throw ConfigError(path + ":" + std::to_string(ln) + ": expected " + std::to_string(d) + " columns, got " +
                        std::to_string(cells.size()));
    for (const std::string& c : cells) data.push_back(detail::parse_double(c, path, ln));
    ++rows;
  }
  if (rows == 0) throw ConfigError(path + ": no data rows");
  return Tensor::matrix(rows, d, std::move(data));
}

// Single `label` column; -1 marks an unlabeled row.
inline std::vector<int> read_labels_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || !detail::split_line(line).front().starts_with("label"))
    throw ConfigError(path + ":1: expected header 'label'");
  std::vector<int> out;
  std::size_t ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    const long y = detail::parse_int(detail::split_line(line).front(), path, ln);
    if (y < -1) throw ConfigError(path + ":" + std::to_string(ln) + ": label below -1");
    out.push_back(static_cast<int>(y));
  }
  if (out.empty()) throw ConfigError(path + ": no data rows");
  return out;
}

// Single `present` column of 0/1 flags.
inline std::vector<std::uint8_t> read_mask_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || detail::split_line(line).front() != "present")
    throw ConfigError(path + ":1: expected header 'present'");
  std::vector<std::uint8_t> out;
  std::size_t ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    const long p = detail::parse_int(detail::split_line(line).front(), path, ln);
    if (p != 0 && p != 1) throw ConfigError(path + ":" + std::to_string(ln) + ": present flag must be 0 or 1");
    out.push_back(static_cast<std::uint8_t>(p));
  }
  if (out.empty()) throw ConfigError(path + ": no data rows");
  return out;
}

// Shortest round-trippable decimal form.
inline std::string format_value(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  double back = 0.0;
  std::from_chars(buf, buf + std::string(buf).size(), back);
  if (back == x) {
    for (int prec = 1; prec <= 16; ++prec) {
      char shorter[32];
      std::snprintf(shorter, sizeof shorter, "%.*g", prec, x);
      double b2 = 0.0;
      std::from_chars(shorter, shorter + std::string(shorter).size(), b2);
      if (b2 == x) return shorter;
    }
  }
  return buf;
}

// Writes through a temp file and renames, so readers never see partial data.
inline void atomic_write_text(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp);
    out << content;
    if (!out.good()) throw ConfigError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw ConfigError("rename " + tmp + " -> " + path + ": " + ec.message());
}

inline void write_view_csv(const std::string& path, const Tensor& X) {
  std::ostringstream out;
  for (std::size_t j = 0; j < X.cols(); ++j) out << (j ? ",f" : "f") << j;
  out << "\n";
  for (std::size_t i = 0; i < X.rows(); ++i) {
    for (std::size_t j = 0; j < X.cols(); ++j) out << (j ? "," : "") << format_value(X(i, j));
    out << "\n";
  }
  atomic_write_text(path, out.str());
}

inline void write_labels_csv(const std::string& path, const std::vector<int>& labels) {
  std::ostringstream out;
  out << "label\n";
  for (int y : labels) out << y << "\n";
  atomic_write_text(path, out.str());
}

inline void write_mask_csv(const std::string& path, const std::vector<std::uint8_t>& present) {
  std::ostringstream out;
  out << "present\n";
  for (std::uint8_t p : present) out << static_cast<int>(p) << "\n";
  atomic_write_text(path, out.str());
}

}  // namespace mvf
