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

#ifndef CAPBIAS_ATTRIBUTE_HPP_
#define CAPBIAS_ATTRIBUTE_HPP_

#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "capbias/error.hpp"
#include "capbias/json_lines.hpp"
#include "capbias/tokenize.hpp"

namespace capbias {

// One line of a word-list file. `plural` overrides the rule-based plural;
// the override "-" means the word has no plural form (pronouns, adjectives).
struct WordEntry {
  std::string value;
  std::string word;
  std::optional<std::string> plural;

  friend bool operator==(const WordEntry&, const WordEntry&) = default;
};

inline constexpr std::string_view kNoPlural = "-";

// English regular plural: s/x/ch/sh take "es", consonant + y takes "ies",
// everything else takes "s".
inline std::string regular_plural(std::string_view word) {
  std::string w(word);
  const auto ends_with = [&](std::string_view suffix) {
    return w.size() >= suffix.size() &&
           w.compare(w.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with("s") || ends_with("x") || ends_with("ch") || ends_with("sh")) {
    return w + "es";
  }
  if (w.size() >= 2 && w.back() == 'y') {
    const char prev = w[w.size() - 2];
    const bool vowel = prev == 'a' || prev == 'e' || prev == 'i' ||
                       prev == 'o' || prev == 'u';
    if (!vowel) return w.substr(0, w.size() - 1) + "ies";
  }
  return w + "s";
}

// Each word followed by its plural, in input order, without duplicates.
inline std::vector<std::string> expand_plurals(
    const std::vector<WordEntry>& entries) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  const auto add = [&](std::string w) {
    if (seen.insert(w).second) out.push_back(std::move(w));
  };
  for (const auto& entry : entries) {
    add(entry.word);
    if (!entry.plural) {
      add(regular_plural(entry.word));
    } else if (*entry.plural != kNoPlural) {
      add(*entry.plural);
    }
  }
  return out;
}

// Parses the word-list format: `value<TAB>word[<TAB>irregular_plural]`, one
// entry per line, '#' starts a comment line.
inline std::vector<WordEntry> parse_word_list(std::istream& in,
                                              std::string_view source) {
  std::vector<WordEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() ||
        fields[1].empty()) {
      throw ValidationError(located(
          source, line_no, "expected value<TAB>word[<TAB>irregular_plural]"));
    }
    WordEntry entry{fields[0], fields[1], std::nullopt};
    if (fields.size() == 3 && !fields[2].empty()) entry.plural = fields[2];
    entries.push_back(std::move(entry));
  }
  return entries;
}

inline std::vector<WordEntry> load_word_list(
    const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_word_list(in, path.string());
}

// Feminine and masculine word lists used for masking, Ratio, Error, BA and
// DBA_G. Irregular plurals are spelled out; pronouns and "pregnant" have
// none.
inline std::vector<WordEntry> default_gender_words() {
  const auto f = [](std::string w, std::optional<std::string> p = {}) {
    return WordEntry{"female", std::move(w), std::move(p)};
  };
  const auto m = [](std::string w, std::optional<std::string> p = {}) {
    return WordEntry{"male", std::move(w), std::move(p)};
  };
  const std::string none(kNoPlural);
  return {
      f("woman", "women"), f("female"), f("lady"), f("mother"), f("girl"),
      f("aunt"), f("wife", "wives"), f("actress"), f("princess"),
      f("waitress"), f("sister"), f("queen"), f("pregnant", none),
      f("daughter"), f("she", none), f("her", none), f("hers", none),
      f("herself", none),
      m("man", "men"), m("male"), m("father"), m("gentleman", "gentlemen"),
      m("boy"), m("uncle"), m("husband"), m("actor"), m("prince"),
      m("waiter"), m("son"), m("brother"), m("guy"), m("emperor"),
      m("dude"), m("cowboy"), m("he", none), m("his", none),
      m("him", none), m("himself", none),
  };
}

// A protected attribute: its ordered values, the token that replaces
// attribute words, and the (plural-expanded) word list of every value.
// Value order is significant: it breaks argmax ties.
class AttributeSpec {
 public:
  AttributeSpec(std::string name, std::vector<std::string> values,
                std::string mask_token, std::vector<WordEntry> entries = {})
      : name_(std::move(name)),
        values_(std::move(values)),
        mask_token_(std::move(mask_token)),
        entries_(std::move(entries)) {
    if (values_.size() < 2) {
      throw ValidationError("attribute '" + name_ +
                            "' needs at least two values");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (values_[i].empty()) {
        throw ValidationError("attribute values must be non-empty");
      }
      if (!value_index_.emplace(values_[i], i).second) {
        throw ValidationError("duplicate attribute value '" + values_[i] +
                              "'");
      }
    }
    // A mask token the tokenizer can emit could collide with a real word.
    if (mask_token_.empty() || is_tokenizer_fixed_point(mask_token_)) {
      throw ValidationError("mask token '" + mask_token_ +
                            "' must contain boundary punctuation, e.g. <" +
                            name_ + ">");
    }
    std::vector<std::vector<WordEntry>> per_value(values_.size());
    for (const auto& entry : entries_) {
      const auto idx = index_of(entry.value);
      if (!idx) {
        throw ValidationError("word list entry '" + entry.word +
                              "' has unknown attribute value '" + entry.value +
                              "'");
      }
      per_value[*idx].push_back(entry);
    }
    word_lists_.resize(values_.size());
    for (std::size_t v = 0; v < values_.size(); ++v) {
      word_lists_[v] = expand_plurals(per_value[v]);
      for (const auto& word : word_lists_[v]) {
        if (!is_tokenizer_fixed_point(word)) {
          throw ValidationError("word list entry '" + word +
                                "' is not a lowercase token");
        }
        const auto [it, inserted] = word_value_.emplace(word, v);
        if (!inserted && it->second != v) {
          throw ValidationError("word '" + word + "' is listed under both '" +
                                values_[it->second] + "' and '" + values_[v] +
                                "'");
        }
      }
    }
  }

  static AttributeSpec gender() {
    return AttributeSpec("gender", {"female", "male"}, "<gender>",
                         default_gender_words());
  }

  static AttributeSpec race() {
    return AttributeSpec("race", {"darker", "lighter"}, "<race>");
  }

  const std::string& name() const { return name_; }
  const std::vector<std::string>& values() const { return values_; }
  std::size_t value_count() const { return values_.size(); }
  const std::string& mask_token() const { return mask_token_; }
  const std::vector<WordEntry>& entries() const { return entries_; }

  std::optional<std::size_t> index_of(std::string_view value) const {
    const auto it = value_index_.find(std::string(value));
    if (it == value_index_.end()) return std::nullopt;
    return it->second;
  }

  // Expanded word list of value `v`.
  const std::vector<std::string>& word_list(std::size_t v) const {
    return word_lists_.at(v);
  }

  bool has_word_lists() const { return !word_value_.empty(); }

  // Attribute value a token reveals, if any. Exact whole-token match; a
  // possessive "'s" suffix is stripped before matching ("woman's" matches
  // "woman"), substrings never match ("mandate" does not match "man").
  std::optional<std::size_t> value_of_word(std::string_view token) const {
    if (auto it = word_value_.find(std::string(token));
        it != word_value_.end()) {
      return it->second;
    }
    if (token.size() > 2 && token.substr(token.size() - 2) == "'s") {
      const auto it =
          word_value_.find(std::string(token.substr(0, token.size() - 2)));
      if (it != word_value_.end()) return it->second;
    }
    return std::nullopt;
  }

  // Canonical text form used for provenance hashing.
  std::string canonical() const {
    std::string out = "attribute\t" + name_ + "\nmask\t" + mask_token_ + "\n";
    for (std::size_t v = 0; v < values_.size(); ++v) {
      out += "value\t" + values_[v];
      for (const auto& w : word_lists_[v]) out += "\t" + w;
      out += "\n";
    }
    return out;
  }

 private:
  std::string name_;
  std::vector<std::string> values_;
  std::string mask_token_;
  std::vector<WordEntry> entries_;
  std::vector<std::vector<std::string>> word_lists_;
  std::unordered_map<std::string, std::size_t> value_index_;
  std::unordered_map<std::string, std::size_t> word_value_;
};

}  // namespace capbias

#endif  // CAPBIAS_ATTRIBUTE_HPP_
