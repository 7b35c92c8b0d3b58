/*
 * Copyright 2026 The capbias Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef CAPBIAS_JSON_LINES_HPP_
#define CAPBIAS_JSON_LINES_HPP_

#include <filesystem>
#include <fstream>
#include <istream>
#include <string>
#include <string_view>

#include "capbias/error.hpp"
#include "json.hpp"

namespace capbias {

using Json = nlohmann::json;

// "path:line: message"
inline std::string located(std::string_view source, std::size_t line,
                           std::string_view message) {
  std::string out(source);
  out += ':';
  out += std::to_string(line);
  out += ": ";
  out += message;
  return out;
}

// Calls fn(object, line_number) for every non-blank line of a JSON Lines
// stream. Lines that are not JSON objects raise ValidationError.
template <typename Fn>
void for_each_json_line(std::istream& in, std::string_view source, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json value;
    try {
      value = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ValidationError(
          located(source, line_no, std::string("invalid JSON: ") + e.what()));
    }
    if (!value.is_object()) {
      throw ValidationError(located(source, line_no, "expected a JSON object"));
    }
    fn(value, line_no);
  }
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  return out;
}

// Writes `content` to a sibling temporary file and renames it over `path`
// so a failed run never leaves a truncated file behind.
inline void write_file_atomically(const std::filesystem::path& path,
                                  std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    auto out = open_output(tmp);
    out << content;
    if (!out) throw ValidationError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
T required_field(const Json& object, const char* key, std::string_view source,
                 std::size_t line) {
  const auto it = object.find(key);
  if (it == object.end()) {
    throw ValidationError(
        located(source, line, std::string("missing field '") + key + "'"));
  }
  try {
    return it->template get<T>();
  } catch (const Json::exception&) {
    throw ValidationError(located(
        source, line, std::string("field '") + key + "' has the wrong type"));
  }
}

}  // namespace capbias

#endif  // CAPBIAS_JSON_LINES_HPP_
