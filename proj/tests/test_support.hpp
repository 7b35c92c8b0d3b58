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

#ifndef CAPBIAS_TESTS_TEST_SUPPORT_HPP_
#define CAPBIAS_TESTS_TEST_SUPPORT_HPP_

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "capbias/capbias.hpp"

namespace capbias::testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("capbias-test-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

struct Row {
  std::string caption;
  std::optional<std::size_t> attribute;
  std::string image;
};

// One caption per row; ids c0, c1, ... and images i0, i1, ... unless given.
inline Corpus make_corpus(const std::vector<Row>& rows,
                          const AttributeSpec& spec = AttributeSpec::gender(),
                          CaptionSource source = CaptionSource::kHuman) {
  std::vector<CaptionRecord> records;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CaptionRecord r;
    r.caption_id = "c" + std::to_string(i);
    r.image_id = rows[i].image.empty() ? "i" + std::to_string(i) : rows[i].image;
    r.tokens = tokenize(rows[i].caption);
    r.source = source;
    r.attribute = rows[i].attribute;
    records.push_back(std::move(r));
  }
  return Corpus(spec, std::move(records));
}

// Small synthetic pair for protocol tests.
inline SynthSpec small_synth(double theta_h, double theta_g, std::size_t n,
                             std::uint64_t seed = 0) {
  SynthSpec s;
  s.n_images = n;
  s.theta_human = theta_h;
  s.theta_generated = theta_g;
  s.seed = seed;
  return s;
}

struct CliResult {
  int exit_code = -1;
  std::string stdout_text;
  std::string stderr_text;
};

// Runs the capbias executable with shell-quoted arguments.
inline CliResult run_cli(const std::vector<std::string>& args,
                         const fs::path& scratch) {
  std::string cmd = "'" CAPBIAS_CLI_PATH "'";
  for (const auto& a : args) cmd += " '" + a + "'";
  const auto out = scratch / "cli.stdout";
  const auto err = scratch / "cli.stderr";
  cmd += " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.stdout_text = read_text(out);
  r.stderr_text = read_text(err);
  return r;
}

}  // namespace capbias::testing

#endif  // CAPBIAS_TESTS_TEST_SUPPORT_HPP_
