#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "recdf/errors.hpp"

namespace recdf {

// RFC-4180 CSV reading/writing. Writers emit doubles with 17 significant
// digits so a write/read round trip reproduces every value exactly. Report
// files may carry a "#key=value" metadata preamble ahead of the header row;
// the reader collects those lines instead of treating them as records.

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v,
                           std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first != last && (*first == ' ' || *first == '\t')) ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc()) {
    throw ValidationError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline std::string csv_quote(std::string_view field) {
  const bool needs = field.find_first_of(",\"\r\n") != std::string_view::npos;
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::map<std::string, std::string> metadata;  // from '#key=value' preamble

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
};

namespace detail {

// One record, honoring quoted fields that may span lines.
inline bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  int ch;
  while ((ch = in.get()) != EOF) {
    any = true;
    char c = static_cast<char>(ch);
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get();
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get();
      fields.push_back(std::move(field));
      return true;
    } else if (c == '\n') {
      fields.push_back(std::move(field));
      return true;
    } else {
      field += c;
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

}  // namespace detail

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  // metadata preamble
  while (in.peek() == '#') {
    std::getline(in, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto eq = line.find('=');
    if (eq != std::string::npos) {
      t.metadata[line.substr(1, eq - 1)] = line.substr(eq + 1);
    }
  }
  if (!detail::read_record(in, t.header)) {
    throw ValidationError("CSV input is empty (header row required)");
  }
  std::vector<std::string> rec;
  while (detail::read_record(in, rec)) {
    if (rec.size() == 1 && rec[0].empty()) continue;  // trailing blank line
    if (rec.size() != t.header.size()) {
      throw ValidationError("CSV row has " + std::to_string(rec.size()) +
                            " fields, header has " +
                            std::to_string(t.header.size()));
    }
    t.rows.push_back(rec);
  }
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open CSV file: " + path);
  return read_csv(in);
}

inline void write_csv(std::ostream& out, const CsvTable& t) {
  for (const auto& [k, v] : t.metadata) {
    out << '#' << k << '=' << v << '\n';
  }
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (i) out << ',';
    out << csv_quote(t.header[i]);
  }
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << csv_quote(row[i]);
    }
    out << '\n';
  }
}

inline void write_csv_file(const std::string& path, const CsvTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open output file: " + path);
  write_csv(out, t);
}

}  // namespace recdf
