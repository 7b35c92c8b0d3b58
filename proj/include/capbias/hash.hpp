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

#ifndef CAPBIAS_HASH_HPP_
#define CAPBIAS_HASH_HPP_

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <memory>
#include <string>
#include <string_view>

#include "capbias/error.hpp"

namespace capbias {

// Incremental SHA-256 used for provenance hashes of corpora, vocabularies
// and configurations.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw Error("SHA-256 initialization failed");
    }
  }

  Sha256& update(std::string_view data) {
    EVP_DigestUpdate(ctx_.get(), data.data(), data.size());
    return *this;
  }

  std::string hex_digest() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    EVP_DigestFinal_ex(ctx_.get(), digest.data(), &length);
    std::string out;
    out.reserve(2 * length);
    char buf[3];
    for (unsigned int i = 0; i < length; ++i) {
      std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
      out += buf;
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(std::string_view data) {
  return Sha256().update(data).hex_digest();
}

}  // namespace capbias

#endif  // CAPBIAS_HASH_HPP_
