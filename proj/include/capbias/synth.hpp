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

#ifndef CAPBIAS_SYNTH_HPP_
#define CAPBIAS_SYNTH_HPP_

#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "capbias/attribute.hpp"
#include "capbias/corpus.hpp"
#include "capbias/error.hpp"
#include "capbias/json_lines.hpp"
#include "capbias/rng.hpp"

namespace capbias {

// Generative model of a paired human/generated caption corpus. Every image
// gets one caption per side: "a <subject> ..." followed by filler words with
// one marker word inserted at a random position. With probability theta the
// marker belongs to the image's attribute value, otherwise to another value
// chosen uniformly. Fillers are shared by all values and carry no signal.
struct SynthSpec {
  std::size_t n_images = 1000;
  std::string attribute = "gender";
  std::vector<std::string> values = {"female", "male"};
  // Subject word per value; must be an attribute word so masking removes it.
  std::map<std::string, std::vector<std::string>> subject_words = {
      {"female", {"woman"}}, {"male", {"man"}}};
  std::map<std::string, std::vector<std::string>> marker_words = {
      {"female", {"tulip"}}, {"male", {"anchor"}}};
  double theta_human = 0.5;
  double theta_generated = 0.5;
  // Probability that a caption's subject word names another value.
  double subject_flip_probability = 0.0;
  std::size_t filler_vocab = 50;
  std::size_t min_length = 6;
  std::size_t max_length = 10;
  std::uint64_t seed = 0;

  void validate() const {
    const auto fail = [](const std::string& m) {
      throw ValidationError("invalid synth spec: " + m);
    };
    if (values.size() < 2) fail("needs at least two values");
    if (n_images == 0 || n_images % values.size() != 0) {
      fail("n_images must be a positive multiple of the value count");
    }
    for (double theta : {theta_human, theta_generated}) {
      if (!(theta >= 0.5 && theta <= 1.0)) fail("theta must lie in [0.5, 1]");
    }
    if (!(subject_flip_probability >= 0.0 && subject_flip_probability <= 1.0)) {
      fail("subject_flip_probability must lie in [0, 1]");
    }
    if (filler_vocab == 0) fail("filler_vocab must be positive");
    if (min_length < 3 || max_length < min_length) {
      fail("need 3 <= min_length <= max_length");
    }
    std::set<std::string> markers;
    for (const auto& v : values) {
      const auto m = marker_words.find(v);
      const auto s = subject_words.find(v);
      if (m == marker_words.end() || m->second.empty()) {
        fail("value '" + v + "' has no marker words");
      }
      if (s == subject_words.end() || s->second.empty()) {
        fail("value '" + v + "' has no subject words");
      }
      for (const auto& w : m->second) {
        if (!markers.insert(w).second) fail("marker '" + w + "' repeated");
        if (!is_tokenizer_fixed_point(w)) fail("marker '" + w + "' not a token");
      }
    }
    for (std::size_t i = 0; i < filler_vocab; ++i) {
      if (markers.count(filler(i))) fail("marker collides with a filler");
    }
  }

  static std::string filler(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "w%03zu", i);
    return buf;
  }

  // Attribute spec whose word lists are the default gender lists when the
  // attribute is "gender", otherwise the subject words.
  AttributeSpec attribute_spec() const {
    if (attribute == "gender" && values == std::vector<std::string>{"female", "male"}) {
      return AttributeSpec::gender();
    }
    std::vector<WordEntry> entries;
    for (const auto& v : values) {
      for (const auto& w : subject_words.at(v)) {
        entries.push_back({v, w, std::string(kNoPlural)});
      }
    }
    return AttributeSpec(attribute, values, "<" + attribute + ">", entries);
  }

  std::vector<std::string> all_markers() const {
    std::vector<std::string> out;
    for (const auto& v : values) {
      for (const auto& w : marker_words.at(v)) out.push_back(w);
    }
    return out;
  }

  Json to_json() const {
    return {{"n_images", n_images},
            {"attribute", attribute},
            {"values", values},
            {"subject_words", subject_words},
            {"marker_words", marker_words},
            {"theta_human", theta_human},
            {"theta_generated", theta_generated},
            {"subject_flip_probability", subject_flip_probability},
            {"filler_vocab", filler_vocab},
            {"min_length", min_length},
            {"max_length", max_length},
            {"seed", seed}};
  }

  static SynthSpec from_json(const Json& j) {
    SynthSpec s;
    try {
      s.n_images = j.value("n_images", s.n_images);
      s.attribute = j.value("attribute", s.attribute);
      s.values = j.value("values", s.values);
      s.subject_words = j.value("subject_words", s.subject_words);
      s.marker_words = j.value("marker_words", s.marker_words);
      s.theta_human = j.value("theta_human", s.theta_human);
      s.theta_generated = j.value("theta_generated", s.theta_generated);
      s.subject_flip_probability =
          j.value("subject_flip_probability", s.subject_flip_probability);
      s.filler_vocab = j.value("filler_vocab", s.filler_vocab);
      s.min_length = j.value("min_length", s.min_length);
      s.max_length = j.value("max_length", s.max_length);
      s.seed = j.value("seed", s.seed);
    } catch (const Json::exception& e) {
      throw ValidationError(std::string("invalid synth spec: ") + e.what());
    }
    s.validate();
    return s;
  }
};

enum class SynthSide { kHuman, kGenerated };

namespace internal {

inline std::size_t other_value(Rng& rng, std::size_t own, std::size_t k) {
  const std::size_t pick = rng.uniform_index(k - 1);
  return pick >= own ? pick + 1 : pick;
}

}  // namespace internal

// One side of the synthetic pair. Images img-000000... alternate through the
// values, so attribute counts are exactly balanced.
inline Corpus generate(const SynthSpec& spec, SynthSide side) {
  spec.validate();
  const bool human = side == SynthSide::kHuman;
  const double theta = human ? spec.theta_human : spec.theta_generated;
  Rng rng(derive_seed(spec.seed, 0,
                      human ? SeedPurpose::kSynthHuman
                            : SeedPurpose::kSynthGenerated));
  const auto attr_spec = spec.attribute_spec();
  const std::size_t k = spec.values.size();
  for (std::size_t v = 0; v < k; ++v) {
    for (const auto& w : spec.subject_words.at(spec.values[v])) {
      if (attr_spec.value_of_word(w) != v) {
        throw ValidationError("synth subject word '" + w +
                              "' is not an attribute word of '" +
                              spec.values[v] + "'");
      }
    }
    for (const auto& w : spec.marker_words.at(spec.values[v])) {
      if (attr_spec.value_of_word(w)) {
        throw ValidationError("synth marker '" + w + "' is an attribute word");
      }
    }
  }
  std::vector<CaptionRecord> records;
  records.reserve(spec.n_images);
  char buf[32];
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    const std::size_t own = i % k;
    const std::size_t len =
        spec.min_length + rng.uniform_index(spec.max_length - spec.min_length + 1);
    const std::size_t subject_value =
        rng.bernoulli(spec.subject_flip_probability)
            ? internal::other_value(rng, own, k)
            : own;
    const std::size_t marker_value =
        rng.bernoulli(theta) ? own : internal::other_value(rng, own, k);
    const auto& subjects = spec.subject_words.at(spec.values[subject_value]);
    const auto& markers = spec.marker_words.at(spec.values[marker_value]);
    std::vector<std::string> body;
    for (std::size_t j = 0; j + 3 < len; ++j) {
      body.push_back(SynthSpec::filler(rng.uniform_index(spec.filler_vocab)));
    }
    const std::size_t at = rng.uniform_index(body.size() + 1);
    body.insert(body.begin() + static_cast<std::ptrdiff_t>(at),
                markers[rng.uniform_index(markers.size())]);
    CaptionRecord r;
    std::snprintf(buf, sizeof(buf), "%s-%06zu", human ? "h" : "g", i);
    r.caption_id = buf;
    std::snprintf(buf, sizeof(buf), "img-%06zu", i);
    r.image_id = buf;
    r.tokens = {"a", subjects[rng.uniform_index(subjects.size())]};
    r.tokens.insert(r.tokens.end(), body.begin(), body.end());
    r.source = human ? CaptionSource::kHuman : CaptionSource::kModel;
    r.attribute = own;
    records.push_back(std::move(r));
  }
  return Corpus(attr_spec, std::move(records));
}

struct SynthPair {
  Corpus human;
  Corpus generated;
};

inline SynthPair generate_pair(const SynthSpec& spec) {
  return {generate(spec, SynthSide::kHuman),
          generate(spec, SynthSide::kGenerated)};
}

// Closed-form BA over the marker words. The marker of value a has
// b_al = theta on each side; only that cell passes the strict gate
// b > 1/|A|, so every marker contributes theta_gen - theta_human, unless
// theta_human sits exactly on the gate.
inline double expected_ba(const SynthSpec& spec) {
  const double gate = 1.0 / static_cast<double>(spec.values.size());
  if (!(spec.theta_human > gate)) return 0.0;
  return spec.theta_generated - spec.theta_human;
}

// Accuracy of the Bayes classifier that reads only the marker.
inline double bayes_accuracy(double theta) { return theta; }

// LIC component (x100) of the Bayes classifier: correct with probability
// theta, at confidence theta.
inline double bayes_lic_component(double theta) {
  return 100.0 * theta * theta;
}

}  // namespace capbias

#endif  // CAPBIAS_SYNTH_HPP_
