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

#ifndef CAPBIAS_MASKING_HPP_
#define CAPBIAS_MASKING_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "capbias/attribute.hpp"
#include "capbias/corpus.hpp"

namespace capbias {

struct MaskedCaption {
  std::vector<std::string> tokens;
  std::size_t n_masked = 0;
  std::string origin;
};

// Replaces every attribute word (plurals and "'s" possessives included) by
// the mask token. Identity when the spec has no word lists.
inline MaskedCaption mask_caption(std::span<const std::string> tokens,
                                  const AttributeSpec& spec,
                                  std::string origin = {}) {
  MaskedCaption out{{tokens.begin(), tokens.end()}, 0, std::move(origin)};
  if (!spec.has_word_lists()) return out;
  for (auto& token : out.tokens) {
    if (spec.value_of_word(token)) {
      token = spec.mask_token();
      ++out.n_masked;
    }
  }
  return out;
}

struct MaskedCorpus {
  Corpus corpus;
  std::size_t n_masked = 0;
};

inline MaskedCorpus mask_corpus(const Corpus& corpus) {
  std::vector<CaptionRecord> records = corpus.records();
  std::size_t total = 0;
  for (auto& r : records) {
    auto masked = mask_caption(r.tokens, corpus.attribute_spec());
    total += masked.n_masked;
    r.tokens = std::move(masked.tokens);
  }
  return {corpus.with_records(std::move(records)), total};
}

// Which attribute values a caption mentions explicitly.
class MentionLabel {
 public:
  enum class Kind { kOnlyValue, kMixed, kNone };

  static MentionLabel only(std::size_t value) {
    return MentionLabel(Kind::kOnlyValue, value);
  }
  static MentionLabel mixed() { return MentionLabel(Kind::kMixed, 0); }
  static MentionLabel none() { return MentionLabel(Kind::kNone, 0); }

  Kind kind() const { return kind_; }
  bool is_only() const { return kind_ == Kind::kOnlyValue; }
  // Valid only when is_only().
  std::size_t value() const { return value_; }

  friend bool operator==(const MentionLabel&, const MentionLabel&) = default;

 private:
  MentionLabel(Kind kind, std::size_t value) : kind_(kind), value_(value) {}
  Kind kind_;
  std::size_t value_;
};

inline MentionLabel mention_label(std::span<const std::string> tokens,
                                  const AttributeSpec& spec) {
  std::optional<std::size_t> found;
  for (const auto& token : tokens) {
    const auto v = spec.value_of_word(token);
    if (!v) continue;
    if (found && *found != *v) return MentionLabel::mixed();
    found = v;
  }
  return found ? MentionLabel::only(*found) : MentionLabel::none();
}

}  // namespace capbias

#endif  // CAPBIAS_MASKING_HPP_
