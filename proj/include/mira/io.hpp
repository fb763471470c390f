// Copyright 2026 The MIRA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Matrix exchange formats.
//
//   CSV : one row per line, comma separated, no header, '.' decimal point.
//   JSON: {"rows": B, "cols": K, "data": [row-major values]}
//
// Doubles are written in shortest round-trip form via std::to_chars, which
// is locale independent.

#include "mira/core.hpp"
#include "mira/objective.hpp"
#include "mira/solver.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace mira::io {

inline constexpr int kSchemaVersion = 1;

class ParseError : public Error {
 public:
  using Error::Error;
};

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError("not a number: '" + std::string(s) + "'");
  return v;
}

inline RowMatrix parse_csv(std::string_view text) {
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    std::vector<double> row;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      try {
        row.push_back(parse_double(line.substr(start, comma - start)));
      } catch (const ParseError& e) {
        throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
      }
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError("line " + std::to_string(line_no) + " has " +
                       std::to_string(row.size()) + " columns, expected " +
                       std::to_string(rows.front().size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("empty matrix");
  RowMatrix m(static_cast<Index>(rows.size()),
              static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  return m;
}

inline std::string to_csv(const RowMatrix& m) {
  std::string out;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::json matrix_to_json(const RowMatrix& m) {
  nlohmann::json data = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline RowMatrix matrix_from_json(const nlohmann::json& j) {
  try {
    const auto rows = j.at("rows").get<Index>();
    const auto cols = j.at("cols").get<Index>();
    const auto& data = j.at("data");
    if (rows < 1 || cols < 1 || !data.is_array() ||
        data.size() != static_cast<std::size_t>(rows * cols))
      throw ParseError("matrix envelope: data length does not match rows*cols");
    RowMatrix m(rows, cols);
    for (Index t = 0; t < rows * cols; ++t)
      m.data()[t] = data[static_cast<std::size_t>(t)].get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("matrix envelope: ") + e.what());
  }
}

inline RowMatrix parse_matrix(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what());
    }
    return matrix_from_json(j);
  }
  return parse_csv(text);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

/// Reads CSV or the JSON envelope; the format is detected from the content.
inline RowMatrix read_matrix(const std::string& path) {
  return parse_matrix(read_file(path));
}

inline bool has_json_extension(std::string_view path) {
  return path.size() >= 5 && path.substr(path.size() - 5) == ".json";
}

/// Writes JSON when the path ends in ".json", CSV otherwise.
inline void write_matrix(const std::string& path, const RowMatrix& m) {
  if (has_json_extension(path))
    write_file(path, matrix_to_json(m).dump() + "\n");
  else
    write_file(path, to_csv(m));
}

inline nlohmann::json to_json(const ObjectiveBreakdown& b) {
  return {{"kl_term", b.kl_term},
          {"cond_entropy", b.cond_entropy},
          {"marg_entropy", b.marg_entropy},
          {"mi_estimate", b.mi_estimate},
          {"total", b.total}};
}

inline ObjectiveBreakdown breakdown_from_json(const nlohmann::json& j) {
  ObjectiveBreakdown b;
  b.kl_term = j.at("kl_term").get<double>();
  b.cond_entropy = j.at("cond_entropy").get<double>();
  b.marg_entropy = j.at("marg_entropy").get<double>();
  b.mi_estimate = j.at("mi_estimate").get<double>();
  b.total = j.at("total").get<double>();
  return b;
}

inline nlohmann::json to_json(const Vector& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Index j = 0; j < v.size(); ++j) a.push_back(v[j]);
  return a;
}

/// Result summary (the assignment itself goes to a separate CSV).
inline nlohmann::json to_json(const AssignmentResult& r) {
  return {{"schema_version", kSchemaVersion},
          {"rows", r.assignment.rows()},
          {"cols", r.assignment.cols()},
          {"marginal", to_json(r.marginal.values())},
          {"iterations_run", r.iterations_run},
          {"final_step_sse", r.final_step_sse},
          {"kkt_residual", r.kkt_residual},
          {"breakdown", to_json(r.breakdown)}};
}

}  // namespace mira::io
