// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

// JSON Lines helpers shared by the harness and the report writer.

#ifndef SAELAB_SRC_RECORDS_HPP
#define SAELAB_SRC_RECORDS_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace saelab::records {

using Json = nlohmann::ordered_json;

inline constexpr int schema_version = 1;

/// {"schema": 1, "type": type}
Json make(const std::string& type);

std::string dump(const Json& j);
std::vector<Json> read_jsonl(const std::filesystem::path& file);
void write_jsonl(const std::filesystem::path& file, const std::vector<Json>& rows);
void write_text(const std::filesystem::path& file, const std::string& text);

/// Rows of `rows` whose "type" equals `type`.
std::vector<Json> of_type(const std::vector<Json>& rows, const std::string& type);

/// "12.65" style percentage of a rate in [0, 1]; "NA" for null.
std::string percent(const Json& rate);
std::string fixed(double v, int digits);

}  // namespace saelab::records

#endif  // SAELAB_SRC_RECORDS_HPP
