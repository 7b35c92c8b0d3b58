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

#ifndef CAPBIAS_VOCAB_HPP_
#define CAPBIAS_VOCAB_HPP_

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "capbias/corpus.hpp"
#include "capbias/error.hpp"
#include "capbias/hash.hpp"
#include "capbias/json_lines.hpp"

namespace capbias {

inline constexpr std::string_view kOovToken = "<oov>";
inline constexpr std::string_view kPadToken = "<pad>";

// Token <-> index map. Indices 0, 1, 2 hold the mask, OOV and padding
// tokens; the rest are contiguous.
class Vocabulary {
 public:
  static constexpr std::size_t kMaskIndex = 0;
  static constexpr std::size_t kOovIndex = 1;
  static constexpr std::size_t kPadIndex = 2;
  static constexpr std::size_t kSpecialCount = 3;

  // `tokens` lists the non-special tokens in index order.
  Vocabulary(std::string mask_token, const std::vector<std::string>& tokens) {
    tokens_ = {std::move(mask_token), std::string(kOovToken),
               std::string(kPadToken)};
    tokens_.insert(tokens_.end(), tokens.begin(), tokens.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty() || !index_.emplace(tokens_[i], i).second) {
        throw ValidationError("vocabulary token '" + tokens_[i] +
                              "' is empty or duplicated");
      }
    }
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::size_t i) const { return tokens_.at(i); }
  const std::string& mask_token() const { return tokens_[kMaskIndex]; }
  const std::string& oov_token() const { return tokens_[kOovIndex]; }
  const std::string& pad_token() const { return tokens_[kPadIndex]; }

  bool contains(std::string_view token) const {
    return index_.count(std::string(token)) > 0;
  }

  // Index of `token`, or the OOV index.
  std::size_t index_of(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? kOovIndex : it->second;
  }

  std::vector<std::size_t> encode(std::span<const std::string> tokens) const {
    std::vector<std::size_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(index_of(t));
    return ids;
  }

  // Non-special tokens in index order.
  std::vector<std::string> regular_tokens() const {
    return {tokens_.begin() + kSpecialCount, tokens_.end()};
  }

  std::string hash() const {
    Sha256 h;
    for (const auto& t : tokens_) h.update(t).update("\n");
    return h.hex_digest();
  }

  // {token: index}
  Json to_json() const {
    Json out = Json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) out[tokens_[i]] = i;
    return out;
  }

  static Vocabulary from_json(const Json& j) {
    if (!j.is_object()) throw ValidationError("vocabulary must be an object");
    std::vector<std::string> by_index(j.size());
    for (const auto& [token, idx] : j.items()) {
      if (!idx.is_number_unsigned() || idx.get<std::size_t>() >= j.size() ||
          !by_index[idx.get<std::size_t>()].empty()) {
        throw ValidationError("vocabulary indices must be contiguous from 0");
      }
      by_index[idx.get<std::size_t>()] = token;
    }
    if (by_index.size() < kSpecialCount || by_index[kOovIndex] != kOovToken ||
        by_index[kPadIndex] != kPadToken) {
      throw ValidationError("vocabulary is missing its special tokens");
    }
    return Vocabulary(by_index[kMaskIndex],
                      {by_index.begin() + kSpecialCount, by_index.end()});
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Every token seen at least `min_count` times, ordered by descending
// frequency, ties broken lexicographically. Special tokens are not counted.
template <typename Sequences>
Vocabulary build_vocab_from(const Sequences& sequences,
                            const std::string& mask_token,
                            std::size_t min_count = 1) {
  std::map<std::string, std::size_t> counts;
  bool any = false;
  for (const auto& seq : sequences) {
    any = true;
    for (const auto& t : seq) {
      if (t == mask_token || t == kOovToken || t == kPadToken) continue;
      ++counts[t];
    }
  }
  if (!any) throw ValidationError("cannot build a vocabulary from no captions");
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [token, n] : counts) {
    if (n >= min_count) ranked.emplace_back(token, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [token, _] : ranked) tokens.push_back(std::move(token));
  return Vocabulary(mask_token, tokens);
}

inline Vocabulary build_vocab(const Corpus& corpus, std::size_t min_count = 1) {
  if (corpus.empty()) {
    throw ValidationError("cannot build a vocabulary from an empty corpus");
  }
  std::vector<std::span<const std::string>> seqs;
  seqs.reserve(corpus.size());
  for (const auto& r : corpus.records()) seqs.emplace_back(r.tokens);
  return build_vocab_from(seqs, corpus.attribute_spec().mask_token(),
                          min_count);
}

// y*: tokens absent from the prediction vocabulary become the OOV token. The
// mask token always survives.
inline std::vector<std::string> align_to_prediction_vocab(
    std::span<const std::string> tokens, const Vocabulary& v_pre) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (t == v_pre.mask_token() || v_pre.contains(t)) {
      out.push_back(t);
    } else {
      out.push_back(v_pre.oov_token());
    }
  }
  return out;
}

inline Corpus align_corpus(const Corpus& corpus, const Vocabulary& v_pre) {
  std::vector<CaptionRecord> records = corpus.records();
  for (auto& r : records) r.tokens = align_to_prediction_vocab(r.tokens, v_pre);
  return corpus.with_records(std::move(records));
}

}  // namespace capbias

#endif  // CAPBIAS_VOCAB_HPP_
