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

#include <gtest/gtest.h>

#include <set>

#include "capbias/cooccur.hpp"
#include "capbias/synth.hpp"
#include "test_support.hpp"

namespace capbias {
namespace {

using testing::small_synth;

// Fraction of captions whose marker belongs to the image's own value.
double marker_agreement(const Corpus& c, const SynthSpec& spec) {
  std::size_t agree = 0;
  for (const auto& r : c.records()) {
    const auto& own = spec.marker_words.at(spec.values[*r.attribute]);
    for (const auto& t : r.tokens) {
      if (std::find(own.begin(), own.end(), t) != own.end()) {
        ++agree;
        break;
      }
    }
  }
  return static_cast<double>(agree) / static_cast<double>(c.size());
}

TEST(Synth, CaptionShape) {
  const auto spec = small_synth(0.8, 0.8, 100);
  const auto c = generate(spec, SynthSide::kHuman);
  ASSERT_EQ(c.size(), 100u);
  const auto markers = spec.all_markers();
  for (const auto& r : c.records()) {
    EXPECT_GE(r.tokens.size(), spec.min_length);
    EXPECT_LE(r.tokens.size(), spec.max_length);
    EXPECT_EQ(r.tokens[0], "a");
    std::size_t n_markers = 0;
    for (const auto& t : r.tokens) {
      n_markers += std::count(markers.begin(), markers.end(), t);
    }
    EXPECT_EQ(n_markers, 1u);
    EXPECT_EQ(mention_label(r.tokens, c.attribute_spec()),
              MentionLabel::only(*r.attribute));
  }
  EXPECT_EQ(c.records()[3].image_id, "img-000003");
  EXPECT_EQ(c.records()[3].caption_id, "h-000003");
}

TEST(Synth, DeterministicAndSidesDiffer) {
  const auto spec = small_synth(0.7, 0.7, 200, 4);
  const auto a = generate_pair(spec);
  const auto b = generate_pair(spec);
  EXPECT_EQ(a.human.content_hash(), b.human.content_hash());
  EXPECT_EQ(a.generated.content_hash(), b.generated.content_hash());
  EXPECT_NE(a.human.content_hash(), a.generated.content_hash());
  const auto other = generate_pair(small_synth(0.7, 0.7, 200, 5));
  EXPECT_NE(other.human.content_hash(), a.human.content_hash());
}

TEST(Synth, MarkerAgreementFollowsTheta) {
  for (double theta : {0.5, 0.8, 1.0}) {
    const auto spec = small_synth(theta, theta, 10000, 1);
    EXPECT_NEAR(marker_agreement(generate(spec, SynthSide::kHuman), spec),
                theta, 0.02)
        << theta;
  }
  EXPECT_EQ(bayes_accuracy(0.5), 0.5);
  EXPECT_EQ(bayes_accuracy(1.0), 1.0);
  EXPECT_DOUBLE_EQ(bayes_lic_component(0.5), 25.0);
}

TEST(Synth, ExpectedBaClosedForm) {
  EXPECT_EQ(expected_ba(small_synth(0.7, 0.7, 10)), 0.0);
  EXPECT_NEAR(expected_ba(small_synth(0.6, 0.9, 10)), 0.3, 1e-12);
  EXPECT_EQ(expected_ba(small_synth(0.5, 0.9, 10)), 0.0);
}

TEST(Synth, MeasuredBaMatchesClosedForm) {
  const auto spec = small_synth(0.6, 0.9, 10000, 2);
  const auto pair = generate_pair(spec);
  const TaskWordSet words(spec.all_markers(), TaskWordProvenance::kUserSupplied,
                          spec.attribute_spec());
  const auto b = bias_of(
      count_cooccurrence(pair.human, words, AttributeMode::kCaptionWords));
  const auto b_hat = bias_of(
      count_cooccurrence(pair.generated, words, AttributeMode::kCaptionWords));
  EXPECT_NEAR(ba(b_hat, b).value, expected_ba(spec), 0.02);
}

TEST(Synth, SubjectFlipsDriveErrorRate) {
  auto spec = small_synth(0.5, 0.5, 10000, 3);
  spec.subject_flip_probability = 0.1;
  const auto c = generate(spec, SynthSide::kGenerated);
  EXPECT_NEAR(error_rate(c), 0.1, 0.02);
  EXPECT_NEAR(ratio(c), 1.0, 0.1);
}

TEST(Synth, SpecValidation) {
  auto s = small_synth(0.5, 0.5, 101);
  EXPECT_THROW(s.validate(), ValidationError);
  s = small_synth(0.4, 0.5, 100);
  EXPECT_THROW(s.validate(), ValidationError);
  s = small_synth(0.5, 1.1, 100);
  EXPECT_THROW(s.validate(), ValidationError);
  s = small_synth(0.5, 0.5, 100);
  s.marker_words["female"] = {"girl"};
  EXPECT_THROW(generate(s, SynthSide::kHuman), ValidationError);
  s = small_synth(0.5, 0.5, 100);
  s.subject_words["female"] = {"man"};
  EXPECT_THROW(generate(s, SynthSide::kHuman), ValidationError);
}

TEST(Synth, SpecJsonRoundTrip) {
  auto s = small_synth(0.6, 0.9, 400, 8);
  s.subject_flip_probability = 0.05;
  const auto back = SynthSpec::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  EXPECT_THROW(SynthSpec::from_json(Json{{"theta_human", "high"}}),
               ValidationError);
}

}  // namespace
}  // namespace capbias
