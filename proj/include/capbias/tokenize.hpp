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

#ifndef CAPBIAS_TOKENIZE_HPP_
#define CAPBIAS_TOKENIZE_HPP_

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace capbias {

namespace internal {

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

inline bool is_ascii_punct(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

}  // namespace internal

// Splits a raw caption into lowercase word tokens. Whitespace separates
// tokens; ASCII punctuation is stripped from both ends of every token while
// interior characters (apostrophes, hyphens) are kept. Bytes outside ASCII
// pass through unchanged. Never returns empty tokens; the result is empty
// only when the caption has no word characters.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && internal::is_ascii_space(text[pos])) ++pos;
    std::size_t end = pos;
    while (end < text.size() && !internal::is_ascii_space(text[end])) ++end;
    std::size_t lo = pos;
    std::size_t hi = end;
    while (lo < hi && internal::is_ascii_punct(text[lo])) ++lo;
    while (hi > lo && internal::is_ascii_punct(text[hi - 1])) --hi;
    if (lo < hi) {
      std::string token(text.substr(lo, hi - lo));
      for (char& c : token) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      }
      tokens.push_back(std::move(token));
    }
    pos = end;
  }
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// True when `word` is a token the tokenizer can emit unchanged.
inline bool is_tokenizer_fixed_point(std::string_view word) {
  const auto tokens = tokenize(word);
  return tokens.size() == 1 && tokens.front() == word;
}

}  // namespace capbias

#endif  // CAPBIAS_TOKENIZE_HPP_
