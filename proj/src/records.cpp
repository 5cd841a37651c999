// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "records.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "saelab/errors.hpp"

namespace saelab::records {

Json make(const std::string& type) {
  Json j;
  j["schema"] = schema_version;
  j["type"] = type;
  return j;
}

std::string dump(const Json& j) { return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace); }

std::vector<Json> read_jsonl(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("missing input " + file.string());
  std::vector<Json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(Json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
  if (!out) throw IoError("failed writing " + file.string());
}

void write_jsonl(const std::filesystem::path& file, const std::vector<Json>& rows) {
  std::string text;
  for (const auto& r : rows) text += dump(r) + "\n";
  write_text(file, text);
}

std::vector<Json> of_type(const std::vector<Json>& rows, const std::string& type) {
  std::vector<Json> out;
  for (const auto& r : rows)
    if (r.value("type", "") == type) out.push_back(r);
  return out;
}

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string percent(const Json& rate) {
  if (!rate.is_number()) return "NA";
  return fixed(100.0 * rate.get<double>(), 2);
}

}  // namespace saelab::records
