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

#ifndef CAPBIAS_RNG_HPP_
#define CAPBIAS_RNG_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace capbias {

// SplitMix64 finalizer. Used to derive independent seeds from one master
// seed.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

enum class SeedPurpose : std::uint64_t {
  kSplit = 1,
  kInit = 2,
  kShuffle = 3,
  kSynthHuman = 4,
  kSynthGenerated = 5,
  kGradientCheck = 6,
};

// Seed for stream `purpose` of run `index` under `master`:
//   splitmix64(splitmix64(master + index * golden) ^ purpose * golden)
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index,
                                    SeedPurpose purpose) {
  constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
  const std::uint64_t run = splitmix64(master + index * kGolden);
  return splitmix64(run ^ (static_cast<std::uint64_t>(purpose) * kGolden));
}

// Random stream with platform-independent output. The engine sequence of
// std::mt19937_64 is fixed by the standard; the distributions below are
// written out because the standard library ones are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, n). Rejection sampling, unbiased. n must be > 0.
  std::size_t uniform_index(std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::size_t>(x % bound);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace capbias

#endif  // CAPBIAS_RNG_HPP_
