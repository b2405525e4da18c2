#pragma once

// Minimal RFC-4180 CSV reading and writing.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "crimelab/errors.hpp"

namespace crimelab::csv {

using Row = std::vector<std::string>;

/// Streaming reader. Handles quoted fields with embedded commas, quotes and
/// line breaks, CRLF line endings and a leading UTF-8 byte-order mark.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {
    if (in_.peek() == 0xEF) {
      char bom[3];
      in_.read(bom, 3);
      if (!(static_cast<unsigned char>(bom[1]) == 0xBB &&
            static_cast<unsigned char>(bom[2]) == 0xBF)) {
        in_.seekg(0);
      }
    }
  }

  /// Reads the next record. Returns false at end of input. `line` receives
  /// the 1-based physical line number on which the record started.
  bool next(Row& row, std::size_t* line = nullptr) {
    row.clear();
    if (in_.peek() == std::char_traits<char>::eof()) return false;
    if (line) *line = line_ + 1;
    std::string field;
    bool quoted = false;
    bool was_quoted = false;
    for (;;) {
      const int ci = in_.get();
      if (ci == std::char_traits<char>::eof()) {
        if (quoted) throw FormatError("unterminated quoted field starting on line " +
                                      std::to_string(line ? *line : line_));
        row.push_back(std::move(field));
        ++line_;
        return true;
      }
      const char c = static_cast<char>(ci);
      if (quoted) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get();
            field.push_back('"');
          } else {
            quoted = false;
          }
        } else {
          if (c == '\n') ++line_;
          field.push_back(c);
        }
        continue;
      }
      if (c == '"' && field.empty() && !was_quoted) {
        quoted = true;
        was_quoted = true;
      } else if (c == ',') {
        row.push_back(std::move(field));
        field.clear();
        was_quoted = false;
      } else if (c == '\r') {
        if (in_.peek() == '\n') in_.get();
        row.push_back(std::move(field));
        ++line_;
        return true;
      } else if (c == '\n') {
        row.push_back(std::move(field));
        ++line_;
        return true;
      } else {
        field.push_back(c);
      }
    }
  }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

/// Column-name → index map built from a header row.
class Header {
 public:
  Header() = default;
  explicit Header(const Row& names) : names_(names) {
    for (std::size_t i = 0; i < names.size(); ++i) index_.emplace(trim(names[i]), i);
  }

  std::optional<std::size_t> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Index of a required column; throws SchemaError naming the column.
  std::size_t require(std::string_view name, std::string_view source) const {
    auto idx = find(name);
    if (!idx) {
      throw SchemaError("missing required column \"" + std::string(name) + "\" in " +
                        std::string(source));
    }
    return *idx;
  }

  const Row& names() const { return names_; }

  static std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
    return std::string(s.substr(b, e - b));
  }

 private:
  Row names_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Whole-file table, for small auxiliary inputs.
struct Table {
  Header header;
  std::vector<Row> rows;
  std::vector<std::size_t> lines;
};

inline Table read_table(std::istream& in) {
  Reader reader(in);
  Table t;
  Row row;
  std::size_t line = 0;
  if (!reader.next(row, &line)) throw SchemaError("empty file: header row missing");
  t.header = Header(row);
  while (reader.next(row, &line)) {
    if (row.size() == 1 && row[0].empty()) continue;
    t.rows.push_back(row);
    t.lines.push_back(line);
  }
  return t;
}

inline Table read_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_table(in);
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void write_row(std::ostream& out, const Row& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out << ',';
    out << quote(row[i]);
  }
  out << '\n';
}

}  // namespace crimelab::csv
