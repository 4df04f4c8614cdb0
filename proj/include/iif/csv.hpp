#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "iif/dataset.hpp"
#include "iif/error.hpp"

namespace iif::csv {

// Shortest decimal form that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw Error("format_double failed");
  return std::string(buf, end);
}

inline std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline void write_row(std::ostream& os, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) os << ',';
    os << escape(fields[i]);
  }
  os << "\r\n";
}

// Splits one record. Quoted fields may contain commas and doubled quotes but
// not line breaks.
inline std::vector<std::string> split_row(std::string_view line, std::size_t row) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError(row, "unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

inline double parse_double(std::string_view s, std::size_t row) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError(row, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline std::uint64_t parse_uint(std::string_view s, std::size_t row) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError(row, "not a non-negative integer: '" + std::string(s) + "'");
  }
  return v;
}

// Reads lines, dropping a trailing '\r'. Line numbers are 1-based.
template <typename Fn>
void for_each_line(std::istream& is, Fn&& fn) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    fn(std::string_view(line), n);
  }
}

// ---------------------------------------------------------------------------
// Sample files
//
//   # num_classes=<C>
//   label,instance_count,f_0,...,f_{d-1}
//   <label>,<count>,<f_0>,...
//
// The directive and the column header are optional on read. Row numbers in
// errors are file line numbers.

inline void write_samples(std::ostream& os, const SampleSet& set) {
  std::size_t dim = set.dim;
  if (dim == 0 && !set.samples.empty()) dim = set.samples.front().features.size();
  if (set.num_classes) os << "# num_classes=" << set.num_classes << "\r\n";
  std::vector<std::string> header = {"label", "instance_count"};
  for (std::size_t k = 0; k < dim; ++k) header.push_back("f_" + std::to_string(k));
  write_row(os, header);
  std::vector<std::string> row;
  for (const auto& s : set.samples) {
    if (s.features.size() != dim) throw DimensionError("sample features", dim, s.features.size());
    row.clear();
    row.push_back(std::to_string(s.label));
    row.push_back(std::to_string(s.instance_count));
    for (double v : s.features) row.push_back(format_double(v));
    write_row(os, row);
  }
}

inline SampleSet read_samples(std::istream& is) {
  SampleSet set;
  bool have_dim = false;
  for_each_line(is, [&](std::string_view line, std::size_t row) {
    if (line.empty()) return;
    if (line.front() == '#') {
      constexpr std::string_view key = "num_classes=";
      auto body = line.substr(1);
      while (!body.empty() && body.front() == ' ') body.remove_prefix(1);
      if (body.starts_with(key)) set.num_classes = parse_uint(body.substr(key.size()), row);
      return;
    }
    const auto fields = split_row(line, row);
    if (fields.front() == "label") {
      if (fields.size() < 2) throw ParseError(row, "header needs label,instance_count columns");
      set.dim = fields.size() - 2;
      have_dim = true;
      return;
    }
    if (fields.size() < 2) throw ParseError(row, "expected label,instance_count,features...");
    if (!have_dim) {
      set.dim = fields.size() - 2;
      have_dim = true;
    }
    if (fields.size() - 2 != set.dim) {
      throw DimensionError("row " + std::to_string(row) + " feature count", set.dim,
                           fields.size() - 2);
    }
    LabeledSample s;
    s.label = parse_uint(fields[0], row);
    if (set.num_classes && s.label >= set.num_classes) {
      throw ParseError(row, "label " + std::to_string(s.label) + " >= declared num_classes " +
                                std::to_string(set.num_classes));
    }
    const auto count = parse_uint(fields[1], row);
    if (count == 0 || count > UINT32_MAX) throw ParseError(row, "instance_count must be >= 1");
    s.instance_count = static_cast<std::uint32_t>(count);
    s.features.reserve(set.dim);
    for (std::size_t k = 2; k < fields.size(); ++k) {
      const double v = parse_double(fields[k], row);
      if (!std::isfinite(v)) throw ParseError(row, "non-finite feature");
      s.features.push_back(v);
    }
    set.samples.push_back(std::move(s));
  });
  if (set.num_classes == 0) {
    for (const auto& s : set.samples) set.num_classes = std::max(set.num_classes, s.label + 1);
  }
  return set;
}

inline SampleSet load_samples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return read_samples(in);
}

inline void save_samples(const SampleSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_samples(out, set);
  if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace iif::csv
