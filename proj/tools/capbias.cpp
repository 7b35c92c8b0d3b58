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

// Command-line front end for the capbias metrics.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <initializer_list>
#include <string>
#include <utility>

#include "CLI11.hpp"
#include "capbias/capbias.hpp"

namespace {

namespace fs = std::filesystem;
using capbias::Json;

std::string key_of(const std::string& flag) {
  std::string key = flag;
  for (auto& c : key) {
    if (c == '-') c = '_';
  }
  return key;
}

// Collects explicitly given flags as JSON so they can be layered over a
// config file.
class Overrides {
 public:
  explicit Overrides(CLI::App& app) : app_(app) {}

  template <typename T>
  void add(const std::string& flag, const std::string& help) {
    const auto key = key_of(flag);
    app_.add_option_function<T>(
           "--" + flag, [this, key](const T& v) { values_[key] = v; }, help)
        ->group("Run options");
  }
  void add_list(const std::string& flag, const std::string& help) {
    const auto key = key_of(flag);
    app_.add_option_function<std::vector<std::string>>(
           "--" + flag,
           [this, key](const std::vector<std::string>& v) { values_[key] = v; },
           help)
        ->delimiter(',')
        ->group("Run options");
  }
  void add_flag(const std::string& flag, const std::string& help) {
    const auto key = key_of(flag);
    app_.add_flag_function(
           "--" + flag, [this, key](std::int64_t) { values_[key] = true; },
           help)
        ->group("Run options");
  }
  void set(const std::string& key, Json value) { values_[key] = std::move(value); }

  Json merged(const std::optional<fs::path>& config_file) const {
    Json j = Json::object();
    if (config_file) {
      auto in = capbias::open_input(*config_file);
      try {
        in >> j;
      } catch (const Json::exception& e) {
        throw capbias::ValidationError(config_file->string() +
                                       ": invalid JSON: " + e.what());
      }
      if (!j.is_object()) {
        throw capbias::ValidationError(config_file->string() +
                                       ": expected a JSON object");
      }
    }
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

 private:
  CLI::App& app_;
  std::map<std::string, Json> values_;
};

void info(const capbias::RunConfig& config, const std::string& message) {
  if (!config.quiet) std::cerr << message << '\n';
}

capbias::SynthSpec synth_spec_from(const Json& merged) {
  Json j = Json::object();
  if (merged.contains("spec")) {
    auto in = capbias::open_input(merged["spec"].get<std::string>());
    try {
      in >> j;
    } catch (const Json::exception& e) {
      throw capbias::ValidationError("invalid synth spec: " +
                                     std::string(e.what()));
    }
  }
  for (const char* key : {"n_images", "theta_human", "theta_generated",
                          "subject_flip_probability", "filler_vocab",
                          "min_length", "max_length", "seed"}) {
    if (merged.contains(key)) j[key] = merged[key];
  }
  return capbias::SynthSpec::from_json(j);
}

int run(int argc, char** argv) {
  CLI::App app{"Bias metrics for image captioning corpora"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<fs::path> config_file;
  app.add_option("--config", config_file, "JSON file with run options")
      ->check(CLI::ExistingFile);

  Overrides o(app);
  o.add<std::uint64_t>("seed", "master seed");
  o.add<std::string>("out", "output file (directory for synth)");
  o.add_flag("quiet", "suppress progress messages");
  using Help = std::pair<const char*, const char*>;
  for (const auto& [f, help] : std::initializer_list<Help>{
           {"human", "human captions (JSON lines)"},
           {"generated", "generated captions (JSON lines)"},
           {"annotations", "image attribute annotations (JSON)"},
           {"objects", "image object annotations (JSON)"},
           {"wordlist", "attribute word list (TSV)"},
           {"lexicon", "object lexicon (JSON)"},
           {"task-words", "task words for BA, one per line"},
           {"allow-list", "allowed candidate task words, one per line"},
           {"table", "write a text table to this file"},
           {"checkpoint-dir", "write trained classifiers here"},
           {"attribute", "attribute name"},
           {"mask-token", "token that replaces attribute words"},
           {"encoder", "bag_mean or bi_recurrent"},
           {"ratio-numerator", "attribute value counted above the line"},
           {"ratio-denominator", "attribute value counted below the line"},
           {"input", "captions to mask or score (JSON lines)"},
           {"checkpoint", "trained classifier (JSON)"},
           {"vocab-hash", "expected vocabulary hash of the checkpoint"},
           {"spec", "synthetic corpus parameters (JSON)"}}) {
    o.add<std::string>(f, help);
  }
  o.add_list("values", "attribute values, comma separated");
  o.add_list("metrics", "metrics to compute, comma separated");
  for (const auto& [f, help] : std::initializer_list<Help>{
           {"n-seeds", "number of protocol seeds"},
           {"min-count", "minimum token count for the vocabulary"},
           {"embed-dim", "embedding width"},
           {"hidden-dim", "hidden width per direction"},
           {"recurrent-layers", "stacked recurrent layers"},
           {"epochs", "training epochs"},
           {"batch-size", "minibatch size"},
           {"top-k", "candidate task words for BA"},
           {"min-per-value", "minimum captions per value for a BA task word"},
           {"threads", "worker threads for the seed loop"},
           {"n-images", "synthetic images"},
           {"filler-vocab", "synthetic filler words"},
           {"min-length", "shortest synthetic caption"},
           {"max-length", "longest synthetic caption"}}) {
    o.add<std::size_t>(f, help);
  }
  for (const auto& [f, help] : std::initializer_list<Help>{
           {"test-fraction", "share of images held out per value"},
           {"learning-rate", "Adam step size"},
           {"theta-human", "marker agreement in human captions"},
           {"theta-generated", "marker agreement in generated captions"},
           {"subject-flip-probability", "chance a subject word is flipped"}}) {
    o.add<double>(f, help);
  }
  o.add_flag("count-mixed-as-error", "count Mixed captions as errors");
  o.add_flag("masked", "mask captions before building the vocabulary");

  auto* mask = app.add_subcommand("mask", "mask attribute words in captions");
  auto* vocab = app.add_subcommand("vocab", "export a vocabulary");
  auto* ba = app.add_subcommand("ba", "bias amplification");
  auto* dba = app.add_subcommand("dba", "directional bias amplification");
  auto* ratio_error =
      app.add_subcommand("ratio-error", "gender ratio and gender error");
  auto* lic = app.add_subcommand("lic", "leakage for image captioning");
  auto* leakage = app.add_subcommand("leakage", "classifier leakage");
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus pair");
  auto* score = app.add_subcommand("score", "per-caption classifier scores");
  auto* report = app.add_subcommand("report", "compute the selected metrics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? capbias::kExitOk : capbias::kExitValidation;
  }

  Json merged = o.merged(config_file);
  const auto metric_preset = [&](std::vector<std::string> metrics) {
    merged["metrics"] = std::move(metrics);
  };
  if (ba->parsed()) metric_preset({"ba"});
  if (ratio_error->parsed()) metric_preset({"ratio", "error"});
  if (lic->parsed()) metric_preset({"lic", "sc"});
  if (leakage->parsed()) metric_preset({"leakage", "lambda_m", "lambda_d"});
  if (dba->parsed()) {
    std::vector<std::string> m;
    if (merged.contains("objects")) m.push_back("dba_g");
    if (merged.contains("lexicon")) m.push_back("dba_o");
    if (m.empty()) {
      throw capbias::ValidationError("dba requires --objects or --lexicon");
    }
    metric_preset(m);
  }
  const auto config = capbias::RunConfig::from_json(merged);
  const auto input = [&]() -> fs::path {
    if (!merged.contains("input")) {
      throw capbias::ValidationError("this command requires --input");
    }
    return merged["input"].get<std::string>();
  };

  if (mask->parsed()) {
    const auto spec = config.attribute_spec();
    const auto in_path = input();
    auto in = capbias::open_input(in_path);
    std::ostringstream out;
    const auto summary = capbias::cmd_mask(in, in_path.string(), spec, out);
    if (config.out) {
      capbias::write_file_atomically(*config.out, out.str());
    } else {
      std::cout << out.str();
    }
    for (const auto& d : summary.rejected) info(config, "skipped: " + d);
    info(config, "masked " + std::to_string(summary.n_masked) + " tokens in " +
                     std::to_string(summary.records) + " captions");
    return capbias::kExitOk;
  }
  if (vocab->parsed()) {
    const auto j = capbias::cmd_vocab(input(), config.attribute_spec(),
                                      config.protocol.min_count,
                                      merged.value("masked", false));
    const auto text = j.dump(2) + "\n";
    if (config.out) {
      capbias::write_file_atomically(*config.out, text);
    } else {
      std::cout << text;
    }
    return capbias::kExitOk;
  }
  if (synth->parsed()) {
    if (!config.out) throw capbias::ValidationError("synth requires --out DIR");
    const auto spec = synth_spec_from(merged);
    capbias::cmd_synth(spec, *config.out);
    info(config, "wrote synthetic corpus to " + config.out->string());
    return capbias::kExitOk;
  }
  if (score->parsed()) {
    if (!merged.contains("checkpoint")) {
      throw capbias::ValidationError("score requires --checkpoint");
    }
    auto ck_in = capbias::open_input(merged["checkpoint"].get<std::string>());
    Json ck;
    try {
      ck_in >> ck;
    } catch (const Json::exception& e) {
      throw capbias::ValidationError("invalid checkpoint: " +
                                     std::string(e.what()));
    }
    std::optional<std::string> expected_hash;
    if (merged.contains("vocab_hash")) {
      expected_hash = merged["vocab_hash"].get<std::string>();
    }
    const auto clf =
        capbias::AttributeClassifier::from_checkpoint(ck, expected_hash);
    const auto in_path = input();
    auto in = capbias::open_input(in_path);
    const auto scored = capbias::cmd_score(clf, in, in_path.string(),
                                           config.attribute_spec());
    std::ostringstream out;
    capbias::write_scores(scored, clf.classes(), out);
    if (config.out) {
      capbias::write_file_atomically(*config.out, out.str());
    } else {
      std::cout << out.str();
    }
    return capbias::kExitOk;
  }
  (void)report;
  const auto output = capbias::run_metrics(config);
  capbias::write_metrics_output(config, output, std::cout);
  if (!config.quiet && (config.out || config.table)) {
    std::cerr << output.table;
  }
  return capbias::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const capbias::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return capbias::kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return capbias::kExitValidation;
  }
}
