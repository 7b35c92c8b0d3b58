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

#ifndef CAPBIAS_RUN_HPP_
#define CAPBIAS_RUN_HPP_

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "capbias/attribute.hpp"
#include "capbias/classifier.hpp"
#include "capbias/cooccur.hpp"
#include "capbias/corpus.hpp"
#include "capbias/error.hpp"
#include "capbias/hash.hpp"
#include "capbias/json_lines.hpp"
#include "capbias/lic.hpp"
#include "capbias/masking.hpp"
#include "capbias/synth.hpp"
#include "capbias/vocab.hpp"

namespace capbias {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

inline const std::vector<std::string>& known_metrics() {
  static const std::vector<std::string> names = {
      "lic",   "lic_m",  "lic_d",   "sc",    "leakage", "lambda_m",
      "lambda_d", "ba",  "dba_g",   "dba_o", "ratio",   "error"};
  return names;
}

inline bool is_protocol_metric(std::string_view m) {
  return m == "lic" || m == "lic_m" || m == "lic_d" || m == "sc" ||
         m == "leakage" || m == "lambda_m" || m == "lambda_d";
}

// One word per line; blank lines and '#' comments ignored.
inline std::vector<std::string> load_word_lines(const fs::path& path) {
  auto in = open_input(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto tokens = tokenize(line);
    if (line.empty() || line.front() == '#' || tokens.empty()) continue;
    out.push_back(tokens.front());
  }
  return out;
}

// Everything one metrics run needs. Keys of the JSON form equal the CLI flag
// names with dashes replaced by underscores.
struct RunConfig {
  std::optional<fs::path> human, generated, annotations, objects, wordlist,
      lexicon, task_words, allow_list, out, table, checkpoint_dir;
  std::string attribute = "gender";
  std::vector<std::string> values;
  std::optional<std::string> mask_token;
  std::vector<std::string> metrics;
  ProtocolConfig protocol;
  std::size_t top_k = 1000;
  std::size_t min_per_value = 100;
  bool count_mixed_as_error = false;
  std::string ratio_numerator = "male";
  std::string ratio_denominator = "female";
  bool quiet = false;

  static RunConfig from_json(const Json& j) {
    RunConfig c;
    try {
      const auto path = [&](const char* key, std::optional<fs::path>& dst) {
        if (j.contains(key) && !j[key].is_null()) {
          dst = fs::path(j[key].get<std::string>());
        }
      };
      path("human", c.human);
      path("generated", c.generated);
      path("annotations", c.annotations);
      path("objects", c.objects);
      path("wordlist", c.wordlist);
      path("lexicon", c.lexicon);
      path("task_words", c.task_words);
      path("allow_list", c.allow_list);
      path("out", c.out);
      path("table", c.table);
      path("checkpoint_dir", c.checkpoint_dir);
      c.attribute = j.value("attribute", c.attribute);
      c.values = string_list(j, "values");
      if (j.contains("mask_token")) {
        c.mask_token = j["mask_token"].get<std::string>();
      }
      c.metrics = string_list(j, "metrics");
      auto& p = c.protocol;
      p.n_seeds = j.value("n_seeds", p.n_seeds);
      p.test_fraction = j.value("test_fraction", p.test_fraction);
      p.min_count = j.value("min_count", p.min_count);
      p.master_seed = j.value("seed", p.master_seed);
      p.threads = j.value("threads", p.threads);
      Json classifier = Json::object();
      for (const char* key : {"embed_dim", "hidden_dim", "encoder",
                              "recurrent_layers", "epochs", "learning_rate",
                              "batch_size"}) {
        if (j.contains(key)) classifier[key] = j[key];
      }
      p.classifier = ClassifierConfig::from_json(classifier);
      c.top_k = j.value("top_k", c.top_k);
      c.min_per_value = j.value("min_per_value", c.min_per_value);
      c.count_mixed_as_error =
          j.value("count_mixed_as_error", c.count_mixed_as_error);
      c.ratio_numerator = j.value("ratio_numerator", c.ratio_numerator);
      c.ratio_denominator = j.value("ratio_denominator", c.ratio_denominator);
      c.quiet = j.value("quiet", c.quiet);
    } catch (const Json::exception& e) {
      throw ValidationError(std::string("invalid run configuration: ") +
                            e.what());
    }
    return c;
  }

  // Settings that affect metric values (paths excluded, input content is
  // hashed separately).
  Json canonical_json() const {
    Json j = protocol.to_json();
    j["attribute"] = attribute;
    j["metrics"] = metrics;
    j["top_k"] = top_k;
    j["min_per_value"] = min_per_value;
    j["count_mixed_as_error"] = count_mixed_as_error;
    j["ratio"] = {ratio_numerator, ratio_denominator};
    return j;
  }

  AttributeSpec attribute_spec() const {
    std::vector<std::string> vals = values;
    if (vals.empty()) {
      if (attribute == "gender") {
        vals = {"female", "male"};
      } else if (attribute == "race") {
        vals = {"darker", "lighter"};
      } else {
        throw ValidationError("attribute '" + attribute +
                              "' needs --values");
      }
    }
    std::vector<WordEntry> entries;
    if (wordlist) {
      entries = load_word_list(*wordlist);
    } else if (attribute == "gender") {
      entries = default_gender_words();
    }
    return AttributeSpec(attribute, vals,
                         mask_token.value_or("<" + attribute + ">"), entries);
  }

  // Checks that every selected metric has its inputs.
  void validate() const {
    protocol.validate();
    if (metrics.empty()) throw ValidationError("no metrics selected");
    for (const auto& m : metrics) {
      const auto& known = known_metrics();
      if (std::find(known.begin(), known.end(), m) == known.end()) {
        throw ValidationError("unknown metric '" + m + "'");
      }
      const auto need = [&](const std::optional<fs::path>& p,
                            const char* flag) {
        if (!p) {
          throw ValidationError("metric '" + m + "' requires --" +
                                std::string(flag));
        }
      };
      need(generated, "generated");
      if (m != "ratio" && m != "error") need(human, "human");
      if (is_protocol_metric(m) || m == "dba_o" || m == "error") {
        need(annotations, "annotations");
      }
      if (m == "dba_g") need(objects, "objects");
      if (m == "dba_o") need(lexicon, "lexicon");
    }
  }

 private:
  static std::vector<std::string> string_list(const Json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return {};
    if (j[key].is_array()) return j[key].get<std::vector<std::string>>();
    std::vector<std::string> out;
    std::stringstream ss(j[key].get<std::string>());
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }
};

namespace internal {

inline Corpus attach_annotations(const Corpus& corpus,
                                 const std::map<std::string, std::size_t>& ann) {
  std::vector<CaptionRecord> records = corpus.records();
  for (auto& r : records) {
    if (const auto it = ann.find(r.image_id); it != ann.end()) {
      r.attribute = it->second;
    }
  }
  return corpus.with_records(std::move(records));
}

inline Corpus annotated_only(const Corpus& corpus) {
  return corpus.filter(
      [](const CaptionRecord& r) { return r.attribute.has_value(); });
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string format_cell(const Json& metric) {
  char buf[64];
  const double mean = metric.at("mean").get<double>();
  if (metric.at("std").is_null()) {
    std::snprintf(buf, sizeof(buf), "%.2f", mean);
  } else {
    std::snprintf(buf, sizeof(buf), "%.2f +- %.2f", mean,
                  metric.at("std").get<double>());
  }
  return buf;
}

}  // namespace internal

// Plain-text table with one column per metric, in the order
// LIC, LIC_M, LIC_D, Ratio, Error, BA, DBA_G, DBA_O, SC, Leakage.
inline std::string render_table(const Json& report, const std::string& row) {
  static const std::vector<std::pair<std::string, std::string>> columns = {
      {"lic", "LIC"},     {"lic_m", "LIC_M"}, {"lic_d", "LIC_D"},
      {"ratio", "Ratio"}, {"error", "Error"}, {"ba", "BA"},
      {"dba_g", "DBA_G"}, {"dba_o", "DBA_O"}, {"sc", "SC"},
      {"leakage", "Leakage"}};
  std::vector<std::string> header = {"Model"};
  std::vector<std::string> cells = {row};
  for (const auto& [key, title] : columns) {
    for (const auto& m : report.at("metrics")) {
      if (m.at("name") == key) {
        header.push_back(title);
        cells.push_back(internal::format_cell(m));
      }
    }
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) {
    width[i] = std::max(header[i].size(), cells[i].size());
  }
  std::string out;
  const auto line = [&](const std::vector<std::string>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      out += (i ? " | " : "");
      out += v[i] + std::string(width[i] - v[i].size(), ' ');
    }
    out += '\n';
  };
  line(header);
  std::vector<std::string> rule;
  for (std::size_t w : width) rule.push_back(std::string(w, '-'));
  line(rule);
  line(cells);
  return out;
}

struct MetricsOutput {
  Json report;
  std::string table;
  std::optional<AttributeClassifier> f_star;
  std::optional<AttributeClassifier> f_hat;
};

// Loads the inputs, computes every selected metric and assembles the report.
// Throws before anything is written if any metric fails.
inline MetricsOutput run_metrics(const RunConfig& config) {
  config.validate();
  const auto spec = config.attribute_spec();
  const std::set<std::string> selected(config.metrics.begin(),
                                       config.metrics.end());
  const auto wants = [&](const char* m) { return selected.count(m) > 0; };

  Json diagnostics = Json::object();
  std::optional<std::map<std::string, std::size_t>> annotations;
  if (config.annotations) {
    auto in = open_input(*config.annotations);
    annotations =
        parse_annotations(in, config.annotations->string(), spec);
  }
  std::optional<ObjectAnnotations> objects;
  if (config.objects) {
    auto in = open_input(*config.objects);
    objects = parse_objects(in, config.objects->string());
  }
  const auto load = [&](const fs::path& path, bool strict, const char* key) {
    LoadReport report;
    auto in = open_input(path);
    auto raw = parse_captions(in, path.string(), report);
    diagnostics["load"][key] = {{"loaded", report.loaded},
                                {"rejected", report.rejected},
                                {"messages", report.diagnostics}};
    if (strict) {
      return assemble_corpus(std::move(raw), std::move(report), annotations,
                             config.annotations ? config.annotations->string()
                                                : std::string(),
                             spec, objects)
          .corpus;
    }
    auto loaded = assemble_corpus(std::move(raw), std::move(report),
                                  std::nullopt, "", spec, objects)
                      .corpus;
    return annotations ? internal::attach_annotations(loaded, *annotations)
                       : loaded;
  };
  std::optional<Corpus> human;
  if (config.human) human = load(*config.human, true, "human");
  const Corpus generated = load(*config.generated, false, "generated");

  Json corpus_hashes = {{"generated", generated.content_hash()}};
  if (human) corpus_hashes["human"] = human->content_hash();

  std::vector<Json> metrics;
  const auto single = [&](const std::string& name, double value,
                          const std::string& scale, Json notes) {
    Json m = {{"name", name},
              {"per_seed", {value}},
              {"mean", value},
              {"std", nullptr},
              {"std_defined", false},
              {"scale", scale},
              {"config_hash", sha256_hex(config.canonical_json().dump())},
              {"corpus_hashes", corpus_hashes}};
    if (!notes.is_null()) m["notes"] = std::move(notes);
    metrics.push_back(std::move(m));
  };

  if (wants("ba")) {
    std::optional<std::set<std::string>> allow;
    if (config.allow_list) {
      const auto words = load_word_lines(*config.allow_list);
      allow.emplace(words.begin(), words.end());
    }
    const auto task_words =
        config.task_words
            ? TaskWordSet(load_word_lines(*config.task_words),
                          TaskWordProvenance::kUserSupplied, spec)
            : select_task_words(*human, config.top_k,
                                config.min_per_value, allow);
    const auto gt = count_cooccurrence(*human, task_words,
                                       AttributeMode::kCaptionWords);
    const auto gen = count_cooccurrence(generated, task_words,
                                        AttributeMode::kCaptionWords);
    const auto result = ba(bias_of(gen), bias_of(gt));
    single("ba", kReportScale * result.value, "x100",
           {{"labels_used", result.labels_used},
            {"excluded_labels", result.excluded}});
  }
  if (wants("dba_g")) {
    std::set<std::string> labels;
    for (const auto& [_, objs] : *objects) labels.insert(objs.begin(), objs.end());
    std::vector<std::string> clean;
    for (const auto& l : labels) {
      if (!spec.value_of_word(l)) clean.push_back(l);
    }
    const TaskWordSet words(clean, TaskWordProvenance::kObjectLabels, spec);
    const auto gt = count_cooccurrence(*human, words,
                                       AttributeMode::kCaptionWords);
    const auto gen = count_cooccurrence(generated, words,
                                        AttributeMode::kCaptionWords);
    const auto r = dba(JointDistribution::from_table(gt),
                       JointDistribution::from_table(gen),
                       DbaDirection::kAttributeGivenLabel);
    single("dba_g", kReportScale * r.value, "x100",
           {{"cells_used", r.cells_used}, {"cells_skipped", r.cells_skipped}});
  }
  if (wants("dba_o")) {
    const auto lexicon = load_object_lexicon(*config.lexicon);
    std::vector<std::string> labels;
    for (const auto& [label, _] : lexicon) labels.push_back(label);
    const TaskWordSet words(labels, TaskWordProvenance::kUserSupplied, spec);
    const auto gt = count_cooccurrence(
        internal::annotated_only(*human), words, AttributeMode::kAnnotation,
        LabelPresence::kObjectMentions, &lexicon);
    const auto gen = count_cooccurrence(
        internal::annotated_only(generated), words, AttributeMode::kAnnotation,
        LabelPresence::kObjectMentions, &lexicon);
    const auto r = dba(JointDistribution::from_table(gt),
                       JointDistribution::from_table(gen),
                       DbaDirection::kLabelGivenAttribute);
    single("dba_o", kReportScale * r.value, "x100",
           {{"cells_used", r.cells_used}, {"cells_skipped", r.cells_skipped}});
  }
  if (wants("ratio")) {
    single("ratio",
           ratio(generated, config.ratio_numerator, config.ratio_denominator),
           "x1", nullptr);
  }
  if (wants("error")) {
    single("error",
           kReportScale *
               error_rate(generated,
                          ErrorOptions{config.count_mixed_as_error}),
           "x100", {{"count_mixed_as_error", config.count_mixed_as_error}});
  }

  MetricsOutput output;
  const bool protocol_selected =
      std::any_of(selected.begin(), selected.end(),
                  [](const std::string& m) { return is_protocol_metric(m); });
  if (protocol_selected) {
    auto protocol = config.protocol;
    protocol.keep_first_models = config.checkpoint_dir.has_value();
    auto result = run_protocol(*human, generated, protocol);
    for (const auto& r : result.reports) {
      const bool include = wants(r.name().c_str()) ||
                           (wants("lic") && (r.name() == "lic_m" ||
                                             r.name() == "lic_d"));
      if (include) metrics.push_back(r.to_json());
    }
    Json seeds = Json::array();
    for (const auto& s : result.seeds) {
      seeds.push_back({{"split_seed", s.split_seed},
                       {"init_seed", s.init_seed},
                       {"shuffle_seed", s.shuffle_seed},
                       {"train_images", s.train_images},
                       {"test_images", s.test_images},
                       {"v_pre_size", s.v_pre_size},
                       {"f_star_loss", {s.f_star_log.initial_loss,
                                        s.f_star_log.epoch_losses.back()}},
                       {"f_hat_loss", {s.f_hat_log.initial_loss,
                                       s.f_hat_log.epoch_losses.back()}}});
    }
    diagnostics["protocol_seeds"] = std::move(seeds);
    output.f_star = std::move(result.f_star);
    output.f_hat = std::move(result.f_hat);
  }

  // Report order follows known_metrics() so output does not depend on the
  // order metrics were requested in.
  std::vector<Json> ordered;
  for (const auto& name : known_metrics()) {
    for (auto& m : metrics) {
      if (m.at("name") == name) ordered.push_back(m);
    }
  }
  output.report = {
      {"tool", "capbias"},
      {"format_version", 1},
      {"generated_at", internal::utc_timestamp()},
      {"master_seed", config.protocol.master_seed},
      {"config", config.canonical_json()},
      {"config_hash", sha256_hex(config.canonical_json().dump())},
      {"corpus_hashes", corpus_hashes},
      {"metrics", ordered},
      {"diagnostics", diagnostics}};
  const auto row = config.generated->stem().string();
  output.table = render_table(output.report, row);
  return output;
}

// Writes the report (and table / checkpoints when configured). Nothing is
// written unless every metric succeeded.
inline void write_metrics_output(const RunConfig& config,
                                 const MetricsOutput& output,
                                 std::ostream& stdout_stream) {
  const std::string text = output.report.dump(2) + "\n";
  if (config.out) {
    write_file_atomically(*config.out, text);
  } else {
    stdout_stream << text;
  }
  if (config.table) write_file_atomically(*config.table, output.table);
  if (config.checkpoint_dir && output.f_star && output.f_hat) {
    fs::create_directories(*config.checkpoint_dir);
    write_file_atomically(*config.checkpoint_dir / "f_star.json",
                          output.f_star->to_checkpoint().dump() + "\n");
    write_file_atomically(*config.checkpoint_dir / "f_hat.json",
                          output.f_hat->to_checkpoint().dump() + "\n");
  }
}

struct MaskSummary {
  std::size_t records = 0;
  std::size_t n_masked = 0;
  std::vector<std::string> rejected;
};

// Streams captions JSON Lines through mask_caption. Output records keep
// their fields and gain "tokens" (masked), "caption" (masked text) and
// "n_masked".
inline MaskSummary cmd_mask(std::istream& in, std::string_view source,
                            const AttributeSpec& spec, std::ostream& out) {
  MaskSummary summary;
  std::set<std::string> ids;
  for_each_json_line(in, source, [&](const Json& obj, std::size_t line) {
    const auto id = required_field<std::string>(obj, "caption_id", source, line);
    required_field<std::string>(obj, "image_id", source, line);
    if (!ids.insert(id).second) {
      throw ValidationError(
          located(source, line, "duplicate caption_id '" + id + "'"));
    }
    auto tokens = obj.contains("tokens")
                      ? required_field<std::vector<std::string>>(
                            obj, "tokens", source, line)
                      : tokenize(required_field<std::string>(obj, "caption",
                                                             source, line));
    std::erase_if(tokens, [](const std::string& t) { return t.empty(); });
    if (tokens.empty()) {
      summary.rejected.push_back(
          located(source, line, "caption '" + id + "' is empty after "
                                "tokenization"));
      return;
    }
    auto masked = mask_caption(tokens, spec, id);
    Json rec = obj;
    rec["tokens"] = masked.tokens;
    rec["caption"] = join_tokens(masked.tokens);
    rec["n_masked"] = masked.n_masked;
    out << rec.dump() << '\n';
    ++summary.records;
    summary.n_masked += masked.n_masked;
  });
  return summary;
}

inline Json cmd_vocab(const fs::path& captions, const AttributeSpec& spec,
                      std::size_t min_count, bool masked) {
  LoadReport report;
  auto in = open_input(captions);
  auto raw = parse_captions(in, captions.string(), report);
  Corpus corpus =
      assemble_corpus(std::move(raw), report, std::nullopt, "", spec,
                      std::nullopt)
          .corpus;
  if (masked) corpus = mask_corpus(corpus).corpus;
  return build_vocab(corpus, min_count).to_json();
}

// Closed-form expectations for a synthetic pair.
inline Json synth_oracle(const SynthSpec& spec) {
  const double lic_m = bayes_lic_component(spec.theta_generated);
  const double lic_d = bayes_lic_component(spec.theta_human);
  return {{"expected_ba", expected_ba(spec)},
          {"expected_ba_x100", kReportScale * expected_ba(spec)},
          {"bayes_accuracy_human", bayes_accuracy(spec.theta_human)},
          {"bayes_accuracy_generated", bayes_accuracy(spec.theta_generated)},
          {"bayes_lic_d", lic_d},
          {"bayes_lic_m", lic_m},
          {"bayes_lic", lic_m - lic_d},
          {"expected_ratio", 1.0},
          {"expected_error_x100",
           kReportScale * spec.subject_flip_probability},
          {"task_words", spec.all_markers()}};
}

// Writes human_captions.jsonl, generated_captions.jsonl, annotations.jsonl,
// task_words.txt, synth_spec.json and oracle.json into `dir`.
inline void cmd_synth(const SynthSpec& spec, const fs::path& dir) {
  spec.validate();
  const auto pair = generate_pair(spec);
  fs::create_directories(dir);
  std::ostringstream human, generated, annotations, words;
  write_captions(pair.human, human);
  write_captions(pair.generated, generated);
  write_annotations(pair.human, annotations);
  for (const auto& w : spec.all_markers()) words << w << '\n';
  write_file_atomically(dir / "human_captions.jsonl", human.str());
  write_file_atomically(dir / "generated_captions.jsonl", generated.str());
  write_file_atomically(dir / "annotations.jsonl", annotations.str());
  write_file_atomically(dir / "task_words.txt", words.str());
  write_file_atomically(dir / "synth_spec.json", spec.to_json().dump(2) + "\n");
  write_file_atomically(dir / "oracle.json", synth_oracle(spec).dump(2) + "\n");
}

struct ScoredCaption {
  std::string caption_id;
  std::size_t predicted = 0;
  std::vector<double> scores;
};

// Per-caption bias scores of a trained classifier, sorted by the largest
// class confidence (descending), ties by caption id. Captions are masked
// with `spec` first.
inline std::vector<ScoredCaption> cmd_score(const AttributeClassifier& clf,
                                            std::istream& captions,
                                            std::string_view source,
                                            const AttributeSpec& spec) {
  if (spec.mask_token() != clf.vocabulary().mask_token()) {
    throw ValidationError("checkpoint was trained with mask token '" +
                          clf.vocabulary().mask_token() + "', not '" +
                          spec.mask_token() + "'");
  }
  LoadReport report;
  auto raw = parse_captions(captions, source, report);
  std::vector<ScoredCaption> out;
  for (const auto& c : raw) {
    const auto masked = mask_caption(c.record.tokens, spec);
    ScoredCaption s{c.record.caption_id, 0, clf.confidences(masked.tokens)};
    s.predicted = argmax(s.scores);
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    const double ma = *std::max_element(a.scores.begin(), a.scores.end());
    const double mb = *std::max_element(b.scores.begin(), b.scores.end());
    if (ma != mb) return ma > mb;
    return a.caption_id < b.caption_id;
  });
  return out;
}

inline void write_scores(const std::vector<ScoredCaption>& scored,
                         const std::vector<std::string>& classes,
                         std::ostream& out) {
  for (const auto& s : scored) {
    Json scores = Json::object();
    for (std::size_t k = 0; k < classes.size(); ++k) {
      scores[classes[k]] = s.scores[k];
    }
    out << Json{{"caption_id", s.caption_id},
                {"predicted", classes[s.predicted]},
                {"scores", scores}}
               .dump()
        << '\n';
  }
}

}  // namespace capbias

#endif  // CAPBIAS_RUN_HPP_
