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

#ifndef CAPBIAS_COOCCUR_HPP_
#define CAPBIAS_COOCCUR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "capbias/attribute.hpp"
#include "capbias/corpus.hpp"
#include "capbias/error.hpp"
#include "capbias/json_lines.hpp"
#include "capbias/masking.hpp"

namespace capbias {

enum class TaskWordProvenance { kTopKFiltered, kObjectLabels, kUserSupplied };

// The label set L. Non-empty, duplicate-free and disjoint from the attribute
// word lists.
class TaskWordSet {
 public:
  TaskWordSet(std::vector<std::string> words, TaskWordProvenance provenance,
              const AttributeSpec& spec)
      : words_(std::move(words)), provenance_(provenance) {
    if (words_.empty()) throw ValidationError("task word set is empty");
    std::set<std::string> seen;
    for (const auto& w : words_) {
      if (!seen.insert(w).second) {
        throw ValidationError("task word '" + w + "' listed twice");
      }
      if (spec.value_of_word(w)) {
        throw ValidationError("task word '" + w + "' is an attribute word");
      }
    }
  }

  const std::vector<std::string>& words() const { return words_; }
  std::size_t size() const { return words_.size(); }
  TaskWordProvenance provenance() const { return provenance_; }

 private:
  std::vector<std::string> words_;
  TaskWordProvenance provenance_;
};

// How the attribute of a caption is read.
enum class AttributeMode {
  kCaptionWords,  // the single value its words mention; Mixed/None skipped
  kAnnotation,    // the image annotation
};

// How the presence of a label in a caption is read.
enum class LabelPresence {
  kCaptionTokens,   // the label is a token of the caption
  kImageObjects,    // the label is annotated on the caption's image
  kObjectMentions,  // a surface form of the label occurs in the caption
};

// label -> surface forms; a surface form may span several tokens.
using ObjectLexicon = std::map<std::string, std::vector<std::string>>;

inline ObjectLexicon parse_object_lexicon(const Json& j) {
  if (!j.is_object()) {
    throw ValidationError("object lexicon must be a JSON object");
  }
  ObjectLexicon out;
  for (const auto& [label, forms] : j.items()) {
    if (!forms.is_array()) {
      throw ValidationError("lexicon entry '" + label + "' must be an array");
    }
    auto& dst = out[label];
    for (const auto& f : forms) {
      if (!f.is_string()) {
        throw ValidationError("lexicon entry '" + label +
                              "' must contain strings");
      }
      dst.push_back(f.get<std::string>());
    }
  }
  return out;
}

inline ObjectLexicon load_object_lexicon(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    return parse_object_lexicon(Json::parse(in));
  } catch (const Json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
}

// Counts c_al: the number of captions with attribute a in which label l is
// present, plus per-attribute caption totals. Captions whose attribute is
// undetermined are tallied in skipped_units().
class CooccurrenceTable {
 public:
  CooccurrenceTable(std::vector<std::string> labels, std::size_t n_attributes)
      : labels_(std::move(labels)),
        n_attributes_(n_attributes),
        counts_(labels_.size() * n_attributes, 0),
        row_sums_(n_attributes, 0),
        col_sums_(labels_.size(), 0),
        attribute_totals_(n_attributes, 0) {}

  void add_unit(std::size_t attribute, std::span<const std::size_t> present) {
    ++attribute_totals_.at(attribute);
    ++n_units_;
    for (const std::size_t l : present) {
      ++counts_[attribute * labels_.size() + l];
      ++row_sums_[attribute];
      ++col_sums_[l];
    }
  }

  void add_skipped() { ++skipped_units_; }

  // Associative merge of tables over disjoint caption shards.
  CooccurrenceTable& merge(const CooccurrenceTable& other) {
    if (other.labels_ != labels_ || other.n_attributes_ != n_attributes_) {
      throw ValidationError("cannot merge co-occurrence tables of different "
                            "shape");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      counts_[i] += other.counts_[i];
    }
    for (std::size_t a = 0; a < n_attributes_; ++a) {
      row_sums_[a] += other.row_sums_[a];
      attribute_totals_[a] += other.attribute_totals_[a];
    }
    for (std::size_t l = 0; l < labels_.size(); ++l) {
      col_sums_[l] += other.col_sums_[l];
    }
    n_units_ += other.n_units_;
    skipped_units_ += other.skipped_units_;
    return *this;
  }

  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t n_labels() const { return labels_.size(); }
  std::size_t n_attributes() const { return n_attributes_; }
  std::size_t count(std::size_t a, std::size_t l) const {
    return counts_[a * labels_.size() + l];
  }
  std::size_t row_sum(std::size_t a) const { return row_sums_[a]; }
  std::size_t col_sum(std::size_t l) const { return col_sums_[l]; }
  // Captions with attribute a, whether or not any label is present.
  std::size_t attribute_total(std::size_t a) const {
    return attribute_totals_[a];
  }
  std::size_t n_units() const { return n_units_; }
  std::size_t skipped_units() const { return skipped_units_; }

 private:
  std::vector<std::string> labels_;
  std::size_t n_attributes_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> row_sums_;
  std::vector<std::size_t> col_sums_;
  std::vector<std::size_t> attribute_totals_;
  std::size_t n_units_ = 0;
  std::size_t skipped_units_ = 0;
};

namespace internal {

inline bool contains_sequence(std::span<const std::string> tokens,
                              const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > tokens.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= tokens.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), tokens.begin() + i)) {
      return true;
    }
  }
  return false;
}

}  // namespace internal

inline LabelPresence default_presence(TaskWordProvenance provenance) {
  return provenance == TaskWordProvenance::kObjectLabels
             ? LabelPresence::kImageObjects
             : LabelPresence::kCaptionTokens;
}

inline CooccurrenceTable count_cooccurrence(
    const Corpus& corpus, const TaskWordSet& task_words, AttributeMode mode,
    LabelPresence presence, const ObjectLexicon* lexicon = nullptr) {
  const auto& spec = corpus.attribute_spec();
  const auto& labels = task_words.words();
  CooccurrenceTable table(labels, spec.value_count());
  std::unordered_map<std::string, std::size_t> label_index;
  for (std::size_t l = 0; l < labels.size(); ++l) label_index[labels[l]] = l;

  std::vector<std::vector<std::vector<std::string>>> forms;
  if (presence == LabelPresence::kObjectMentions) {
    if (!lexicon) {
      throw ValidationError("object-mention counting requires an object "
                            "lexicon");
    }
    forms.resize(labels.size());
    for (std::size_t l = 0; l < labels.size(); ++l) {
      const auto it = lexicon->find(labels[l]);
      forms[l].push_back(tokenize(labels[l]));
      if (it != lexicon->end()) {
        for (const auto& f : it->second) forms[l].push_back(tokenize(f));
      }
    }
  }
  if (presence == LabelPresence::kImageObjects &&
      !corpus.object_annotations()) {
    throw ValidationError("image-object counting requires object annotations");
  }

  std::vector<std::size_t> present;
  for (const auto& r : corpus.records()) {
    std::size_t attribute = 0;
    if (mode == AttributeMode::kCaptionWords) {
      const auto label = mention_label(r.tokens, spec);
      if (!label.is_only()) {
        table.add_skipped();
        continue;
      }
      attribute = label.value();
    } else {
      if (!r.attribute) {
        throw ValidationError("caption '" + r.caption_id +
                              "' has no attribute annotation");
      }
      attribute = *r.attribute;
    }
    present.clear();
    switch (presence) {
      case LabelPresence::kCaptionTokens: {
        for (const auto& t : r.tokens) {
          if (const auto it = label_index.find(t); it != label_index.end()) {
            present.push_back(it->second);
          }
        }
        break;
      }
      case LabelPresence::kImageObjects: {
        const auto it = corpus.object_annotations()->find(r.image_id);
        if (it == corpus.object_annotations()->end()) {
          throw ValidationError("object annotations do not cover image '" +
                                r.image_id + "'");
        }
        for (const auto& o : it->second) {
          if (const auto li = label_index.find(o); li != label_index.end()) {
            present.push_back(li->second);
          }
        }
        break;
      }
      case LabelPresence::kObjectMentions: {
        for (std::size_t l = 0; l < labels.size(); ++l) {
          for (const auto& f : forms[l]) {
            if (internal::contains_sequence(r.tokens, f)) {
              present.push_back(l);
              break;
            }
          }
        }
        break;
      }
    }
    std::sort(present.begin(), present.end());
    present.erase(std::unique(present.begin(), present.end()), present.end());
    table.add_unit(attribute, present);
  }
  return table;
}

inline CooccurrenceTable count_cooccurrence(const Corpus& corpus,
                                            const TaskWordSet& task_words,
                                            AttributeMode mode) {
  return count_cooccurrence(corpus, task_words, mode,
                            default_presence(task_words.provenance()));
}

// Top-`top_k` most frequent tokens (attribute words, the mask token and,
// when an allow-list is given, tokens outside it are never candidates),
// keeping only those co-occurring at least `min_per_value` times with every
// attribute value. Result is ordered by frequency, ties lexicographic.
inline TaskWordSet select_task_words(
    const Corpus& human, std::size_t top_k = 1000,
    std::size_t min_per_value = 100,
    const std::optional<std::set<std::string>>& allow_list = std::nullopt,
    AttributeMode mode = AttributeMode::kCaptionWords) {
  const auto& spec = human.attribute_spec();
  std::map<std::string, std::size_t> freq;
  for (const auto& r : human.records()) {
    for (const auto& t : r.tokens) {
      if (t == spec.mask_token() || spec.value_of_word(t)) continue;
      if (allow_list && !allow_list->count(t)) continue;
      ++freq[t];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(),
                                                          freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > top_k) ranked.resize(top_k);
  std::vector<std::string> candidates;
  for (const auto& [w, _] : ranked) candidates.push_back(w);
  if (candidates.empty()) {
    throw ValidationError("no candidate task words in the human captions");
  }
  const TaskWordSet all(candidates, TaskWordProvenance::kTopKFiltered, spec);
  const auto table = count_cooccurrence(human, all, mode,
                                        LabelPresence::kCaptionTokens);
  std::vector<std::string> kept;
  for (std::size_t l = 0; l < table.n_labels(); ++l) {
    bool ok = true;
    for (std::size_t a = 0; a < table.n_attributes(); ++a) {
      ok = ok && table.count(a, l) >= min_per_value;
    }
    if (ok) kept.push_back(table.labels()[l]);
  }
  if (kept.empty()) {
    throw ValidationError(
        "no task word co-occurs " + std::to_string(min_per_value) +
        " times with every attribute value among the top " +
        std::to_string(top_k) + " words; reduce min_per_value or raise top_k");
  }
  return TaskWordSet(std::move(kept), TaskWordProvenance::kTopKFiltered, spec);
}

// b_al = c_al / sum_a c_al. Columns with no co-occurrence are left undefined
// and reported by excluded().
class BiasMatrix {
 public:
  BiasMatrix(std::vector<std::string> labels, std::size_t n_attributes,
             std::vector<double> values, std::vector<bool> defined)
      : labels_(std::move(labels)),
        n_attributes_(n_attributes),
        values_(std::move(values)),
        defined_(std::move(defined)) {
    if (values_.size() != labels_.size() * n_attributes_ ||
        defined_.size() != labels_.size()) {
      throw ValidationError("bias matrix shape mismatch");
    }
  }

  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t n_attributes() const { return n_attributes_; }
  std::size_t n_labels() const { return labels_.size(); }
  bool defined(std::size_t l) const { return defined_[l]; }
  double at(std::size_t a, std::size_t l) const {
    return values_[a * labels_.size() + l];
  }

  std::vector<std::string> excluded() const {
    std::vector<std::string> out;
    for (std::size_t l = 0; l < labels_.size(); ++l) {
      if (!defined_[l]) out.push_back(labels_[l]);
    }
    return out;
  }

 private:
  std::vector<std::string> labels_;
  std::size_t n_attributes_;
  std::vector<double> values_;
  std::vector<bool> defined_;
};

inline BiasMatrix bias_of(const CooccurrenceTable& table) {
  const std::size_t L = table.n_labels();
  const std::size_t A = table.n_attributes();
  std::vector<double> values(L * A, 0.0);
  std::vector<bool> defined(L, false);
  for (std::size_t l = 0; l < L; ++l) {
    const auto total = table.col_sum(l);
    if (total == 0) continue;
    defined[l] = true;
    for (std::size_t a = 0; a < A; ++a) {
      values[a * L + l] = static_cast<double>(table.count(a, l)) /
                          static_cast<double>(total);
    }
  }
  return BiasMatrix(table.labels(), A, std::move(values), std::move(defined));
}

struct BaResult {
  double value = 0.0;  // unscaled
  std::size_t labels_used = 0;
  std::vector<std::string> excluded;
};

// BA = 1/|L| sum_{a,l} (b_hat_al - b_al) * 1[b_al > 1/|A|], over the labels
// whose column is defined in both matrices. The gate is strict.
inline BaResult ba(const BiasMatrix& b_hat, const BiasMatrix& b) {
  if (b_hat.labels() != b.labels() || b_hat.n_attributes() != b.n_attributes()) {
    throw ValidationError("BA needs bias matrices over the same A x L");
  }
  const double gate = 1.0 / static_cast<double>(b.n_attributes());
  BaResult result;
  double sum = 0.0;
  for (std::size_t l = 0; l < b.n_labels(); ++l) {
    if (!b.defined(l) || !b_hat.defined(l)) {
      result.excluded.push_back(b.labels()[l]);
      continue;
    }
    ++result.labels_used;
    for (std::size_t a = 0; a < b.n_attributes(); ++a) {
      if (b.at(a, l) > gate) sum += b_hat.at(a, l) - b.at(a, l);
    }
  }
  if (result.labels_used == 0) {
    throw ValidationError("BA undefined: no label co-occurs with the attribute "
                          "in both caption sets");
  }
  result.value = sum / static_cast<double>(result.labels_used);
  return result;
}

// Probabilities p(a,l), p(a), p(l) over A x L, with the conditionals derived
// from them. Conditionals with a zero marginal are undefined.
class JointDistribution {
 public:
  JointDistribution(std::vector<std::string> labels, std::size_t n_attributes,
                    std::vector<double> joint, std::vector<double> p_attribute,
                    std::vector<double> p_label)
      : labels_(std::move(labels)),
        n_attributes_(n_attributes),
        joint_(std::move(joint)),
        p_attribute_(std::move(p_attribute)),
        p_label_(std::move(p_label)) {
    if (joint_.size() != labels_.size() * n_attributes_ ||
        p_attribute_.size() != n_attributes_ ||
        p_label_.size() != labels_.size()) {
      throw ValidationError("joint distribution shape mismatch");
    }
    // Slack for marginals accumulated in floating point.
    const auto in_unit = [](double p) { return p >= -1e-12 && p <= 1.0 + 1e-12; };
    double total = 0.0;
    for (double p : p_attribute_) {
      if (!in_unit(p)) throw ValidationError("p(a) outside [0, 1]");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ValidationError("p(a) does not sum to 1");
    }
    for (double p : joint_) {
      if (!in_unit(p)) throw ValidationError("p(a, l) outside [0, 1]");
    }
    for (double p : p_label_) {
      if (!in_unit(p)) throw ValidationError("p(l) outside [0, 1]");
    }
  }

  // Empirical distribution over the captions counted in `table`.
  static JointDistribution from_table(const CooccurrenceTable& table) {
    if (table.n_units() == 0) {
      throw ValidationError("no captions with a determined attribute");
    }
    const double n = static_cast<double>(table.n_units());
    const std::size_t L = table.n_labels();
    const std::size_t A = table.n_attributes();
    std::vector<double> joint(L * A), pa(A), pl(L);
    for (std::size_t a = 0; a < A; ++a) {
      pa[a] = static_cast<double>(table.attribute_total(a)) / n;
      for (std::size_t l = 0; l < L; ++l) {
        joint[a * L + l] = static_cast<double>(table.count(a, l)) / n;
      }
    }
    for (std::size_t l = 0; l < L; ++l) {
      pl[l] = static_cast<double>(table.col_sum(l)) / n;
    }
    return JointDistribution(table.labels(), A, std::move(joint), std::move(pa),
                             std::move(pl));
  }

  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t n_attributes() const { return n_attributes_; }
  std::size_t n_labels() const { return labels_.size(); }
  double joint(std::size_t a, std::size_t l) const {
    return joint_[a * labels_.size() + l];
  }
  double p_attribute(std::size_t a) const { return p_attribute_[a]; }
  double p_label(std::size_t l) const { return p_label_[l]; }

  std::optional<double> attribute_given_label(std::size_t a,
                                              std::size_t l) const {
    if (p_label_[l] <= 0.0) return std::nullopt;
    return joint(a, l) / p_label_[l];
  }
  std::optional<double> label_given_attribute(std::size_t a,
                                              std::size_t l) const {
    if (p_attribute_[a] <= 0.0) return std::nullopt;
    return joint(a, l) / p_attribute_[a];
  }

 private:
  std::vector<std::string> labels_;
  std::size_t n_attributes_;
  std::vector<double> joint_;
  std::vector<double> p_attribute_;
  std::vector<double> p_label_;
};

enum class DbaDirection {
  kAttributeGivenLabel,  // DBA_G: delta = p_hat(a|l) - p(a|l)
  kLabelGivenAttribute,  // DBA_O: delta = p_hat(l|a) - p(l|a)
};

struct DbaResult {
  double value = 0.0;  // unscaled
  std::size_t cells_used = 0;
  std::size_t cells_skipped = 0;
};

// y_al = 1[p(a,l) > p(a) p(l)], row-major over A x L.
inline std::vector<bool> positive_correlation(const JointDistribution& d) {
  std::vector<bool> y(d.n_attributes() * d.n_labels());
  for (std::size_t a = 0; a < d.n_attributes(); ++a) {
    for (std::size_t l = 0; l < d.n_labels(); ++l) {
      y[a * d.n_labels() + l] =
          d.joint(a, l) > d.p_attribute(a) * d.p_label(l);
    }
  }
  return y;
}

// DBA with a given indicator y. Cells whose conditional is undefined on
// either side are skipped and shrink the divisor.
inline DbaResult dba_given_indicator(const std::vector<bool>& y,
                                     const JointDistribution& gt,
                                     const JointDistribution& gen,
                                     DbaDirection direction) {
  if (gt.labels() != gen.labels() || gt.n_attributes() != gen.n_attributes() ||
      y.size() != gt.n_attributes() * gt.n_labels()) {
    throw ValidationError("DBA needs distributions over the same A x L");
  }
  DbaResult result;
  double sum = 0.0;
  for (std::size_t a = 0; a < gt.n_attributes(); ++a) {
    for (std::size_t l = 0; l < gt.n_labels(); ++l) {
      const bool label_cond = direction == DbaDirection::kAttributeGivenLabel;
      const auto p = label_cond ? gt.attribute_given_label(a, l)
                                : gt.label_given_attribute(a, l);
      const auto p_hat = label_cond ? gen.attribute_given_label(a, l)
                                    : gen.label_given_attribute(a, l);
      if (!p || !p_hat) {
        ++result.cells_skipped;
        continue;
      }
      ++result.cells_used;
      const double delta = *p_hat - *p;
      sum += y[a * gt.n_labels() + l] ? delta : -delta;
    }
  }
  if (result.cells_used == 0) {
    throw ValidationError("DBA undefined: every conditional has a zero "
                          "marginal");
  }
  result.value = sum / static_cast<double>(result.cells_used);
  return result;
}

inline DbaResult dba(const JointDistribution& gt, const JointDistribution& gen,
                     DbaDirection direction) {
  return dba_given_indicator(positive_correlation(gt), gt, gen, direction);
}

namespace internal {

inline std::size_t only_value_count(const Corpus& corpus, std::size_t value) {
  std::size_t n = 0;
  for (const auto& r : corpus.records()) {
    const auto label = mention_label(r.tokens, corpus.attribute_spec());
    if (label.is_only() && label.value() == value) ++n;
  }
  return n;
}

inline void require_binary_word_lists(const AttributeSpec& spec) {
  if (spec.value_count() != 2 || !spec.has_word_lists()) {
    throw ValidationError("Ratio/Error need a two-valued attribute with word "
                          "lists");
  }
}

}  // namespace internal

// (#captions mentioning only `numerator`) / (#captions mentioning only
// `denominator`).
inline double ratio(const Corpus& generated, std::string_view numerator = "male",
                    std::string_view denominator = "female") {
  const auto& spec = generated.attribute_spec();
  internal::require_binary_word_lists(spec);
  const auto num = spec.index_of(numerator);
  const auto den = spec.index_of(denominator);
  if (!num || !den) {
    throw ValidationError("Ratio values must belong to attribute '" +
                          spec.name() + "'");
  }
  const auto d = internal::only_value_count(generated, *den);
  if (d == 0) {
    throw ValidationError("Ratio undefined: no caption mentions only '" +
                          std::string(denominator) + "'");
  }
  return static_cast<double>(internal::only_value_count(generated, *num)) /
         static_cast<double>(d);
}

struct ErrorOptions {
  // Count captions mentioning several values as errors (and in the
  // denominator). Off by default.
  bool count_mixed_as_error = false;
};

// Fraction of single-value captions whose mentioned value contradicts the
// image annotation. Unscaled.
inline double error_rate(const Corpus& generated, ErrorOptions options = {}) {
  const auto& spec = generated.attribute_spec();
  internal::require_binary_word_lists(spec);
  std::size_t considered = 0;
  std::size_t wrong = 0;
  for (const auto& r : generated.records()) {
    if (!r.attribute) continue;
    const auto label = mention_label(r.tokens, spec);
    if (label.is_only()) {
      ++considered;
      if (label.value() != *r.attribute) ++wrong;
    } else if (label.kind() == MentionLabel::Kind::kMixed &&
               options.count_mixed_as_error) {
      ++considered;
      ++wrong;
    }
  }
  if (considered == 0) {
    throw ValidationError("Error undefined: no annotated caption mentions an "
                          "attribute value");
  }
  return static_cast<double>(wrong) / static_cast<double>(considered);
}

}  // namespace capbias

#endif  // CAPBIAS_COOCCUR_HPP_
