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

#include <cmath>
#include <cstdlib>

#include "capbias/lic.hpp"
#include "capbias/synth.hpp"
#include "test_support.hpp"

namespace capbias {
namespace {

using testing::small_synth;
using testing::words;

// Returns the same confidences for every caption.
struct FixedModel {
  std::vector<double> scores;
  std::vector<double> confidences(std::span<const std::string>) const {
    return scores;
  }
};

// Reads the label off the first token ("0", "1", ...) at full confidence.
struct OracleModel {
  std::size_t classes = 2;
  std::vector<double> confidences(std::span<const std::string> tokens) const {
    std::vector<double> s(classes, 0.0);
    s[std::stoul(tokens.front())] = 1.0;
    return s;
  }
};

std::vector<LabeledCaption> balanced_set(std::size_t n, std::size_t classes) {
  std::vector<LabeledCaption> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({{std::to_string(i % classes), "x"}, i % classes});
  }
  return out;
}

TEST(Sc, PerfectConstantAndCounted) {
  const auto set = balanced_set(10, 2);
  EXPECT_DOUBLE_EQ(sc_accuracy(OracleModel{}, set), 1.0);
  EXPECT_DOUBLE_EQ(sc_accuracy(FixedModel{{0.6, 0.4}}, set), 0.5);
  std::vector<LabeledCaption> four = {{{"0"}, 0}, {{"1"}, 1}, {{"0"}, 0},
                                      {{"0"}, 1}};
  EXPECT_DOUBLE_EQ(sc_accuracy(OracleModel{}, four), 0.75);
  EXPECT_THROW(sc_accuracy(OracleModel{}, std::vector<LabeledCaption>{}),
               ValidationError);
}

TEST(Leakage, Arithmetic) {
  EXPECT_NEAR(leakage(0.8, 0.7), 0.1, 1e-12);
  EXPECT_THROW(leakage(AccuracyScore{0.8, "generated-test"},
                       AccuracyScore{0.7, "human-train"}),
               ValidationError);
  EXPECT_NEAR(leakage(AccuracyScore{0.8, "test"}, AccuracyScore{0.7, "test"}),
              0.1, 1e-12);
}

TEST(LicComponent, SaturatedClassifierScoresHundred) {
  EXPECT_DOUBLE_EQ(lic_component(OracleModel{}, balanced_set(8, 2)), 100.0);
}

TEST(LicComponent, ThreeClassFixedConfidence) {
  // Always predicts class 0 with confidence 0.34; every caption is class 0.
  const FixedModel model{{0.34, 0.33, 0.33}};
  std::vector<LabeledCaption> set(6, LabeledCaption{{"x"}, 0});
  EXPECT_NEAR(lic_component(model, set), 34.0, 1e-12);
  // Half the captions belong to another class: they contribute nothing.
  for (std::size_t i = 0; i < 3; ++i) set[i].label = 1;
  EXPECT_NEAR(lic_component(model, set), 17.0, 1e-12);
}

TEST(LicComponent, BoundedBySc) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s = {rng.uniform01(), rng.uniform01(), rng.uniform01()};
    const double total = s[0] + s[1] + s[2];
    for (auto& v : s) v /= total;
    const FixedModel m{s};
    std::vector<LabeledCaption> set;
    for (int i = 0; i < 10; ++i) {
      set.push_back({{"x"}, rng.uniform_index(3)});
    }
    const double component = lic_component(m, set);
    EXPECT_LE(component, 100.0 * sc_accuracy(m, set) + 1e-9);
    EXPECT_GE(component, 0.0);
    EXPECT_LE(component, 100.0);
  }
}

TEST(Lic, Arithmetic) {
  EXPECT_EQ(lic(42.0, 42.0), 0.0);
  EXPECT_NEAR(lic(48.5, 39.3), 9.2, 1e-12);
  EXPECT_THROW(lic(ComponentScore{50, "a"}, ComponentScore{40, "b"}),
               ValidationError);
}

TEST(MetricReport, SampleStandardDeviation) {
  const MetricReport r("lic", {1.0, 2.0, 3.0, 4.0}, "x100");
  EXPECT_DOUBLE_EQ(r.mean(), 2.5);
  EXPECT_NEAR(*r.stddev(), std::sqrt(5.0 / 3.0), 1e-12);
  const MetricReport one("lic", {7.0}, "x100");
  EXPECT_FALSE(one.stddev().has_value());
  EXPECT_TRUE(one.to_json()["std"].is_null());
  EXPECT_FALSE(one.to_json()["std_defined"].get<bool>());
  EXPECT_THROW(MetricReport("x", {}, "x1"), ValidationError);
}

TEST(ProtocolConfig, Validation) {
  ProtocolConfig c;
  c.n_seeds = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = ProtocolConfig{};
  c.test_fraction = 1.5;
  EXPECT_THROW(c.validate(), ValidationError);
  const auto spec = AttributeSpec::gender();
  ProtocolConfig a, b;
  b.master_seed = 1;
  EXPECT_NE(a.hash(spec), b.hash(spec));
  EXPECT_EQ(a.hash(spec), ProtocolConfig{}.hash(spec));
}

TEST(Threads, WorkerCountHonorsCapAndJobs) {
  EXPECT_EQ(worker_count(4, 2), 2u);
  EXPECT_EQ(worker_count(1, 10), 1u);
  EXPECT_GE(worker_count(0, 10), 1u);
  setenv("CAPBIAS_THREADS", "3", 1);
  EXPECT_EQ(worker_count(8, 10), 3u);
  unsetenv("CAPBIAS_THREADS");
}

TEST(Threads, ParallelForRunsEveryJobAndRethrows) {
  std::vector<int> hit(20, 0);
  parallel_for(20, 4, [&](std::size_t i) { hit[i] += 1; });
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(5, 2,
                            [](std::size_t i) {
                              if (i == 3) throw ValidationError("boom");
                            }),
               ValidationError);
}

ProtocolConfig quick_protocol(std::size_t seeds) {
  ProtocolConfig c;
  c.n_seeds = seeds;
  c.classifier.embed_dim = 16;
  c.classifier.hidden_dim = 16;
  c.classifier.epochs = 5;
  c.classifier.learning_rate = 1e-3;
  c.test_fraction = 0.2;
  return c;
}

TEST(Protocol, SingleSeedHasUndefinedStd) {
  const auto pair = generate_pair(small_synth(0.5, 0.9, 200));
  const auto r = run_protocol(pair.human, pair.generated, quick_protocol(1));
  EXPECT_FALSE(r.report("lic").stddev().has_value());
  EXPECT_FALSE(r.report("lic").notes().empty());
}

TEST(Protocol, DeterministicAcrossRunsAndThreadCounts) {
  const auto pair = generate_pair(small_synth(0.5, 0.9, 200));
  auto config = quick_protocol(3);
  config.threads = 1;
  const auto a = run_protocol(pair.human, pair.generated, config);
  config.threads = 3;
  const auto b = run_protocol(pair.human, pair.generated, config);
  for (const auto& rep : a.reports) {
    EXPECT_EQ(rep.per_seed(), b.report(rep.name()).per_seed()) << rep.name();
  }
}

TEST(Protocol, ComponentsAreBoundedAndLicIsTheirDifference) {
  const auto pair = generate_pair(small_synth(0.6, 0.9, 400));
  const auto r = run_protocol(pair.human, pair.generated, quick_protocol(2));
  for (std::size_t s = 0; s < 2; ++s) {
    const double m = r.report("lic_m").per_seed()[s];
    const double d = r.report("lic_d").per_seed()[s];
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 100.0);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 100.0);
    EXPECT_NEAR(r.report("lic").per_seed()[s], m - d, 1e-12);
    EXPECT_LE(m, r.report("lambda_m").per_seed()[s] + 1e-9);
  }
}

TEST(Protocol, StrongerGeneratedCorrelationGivesPositiveLicAndLeakage) {
  auto config = quick_protocol(3);
  config.classifier.epochs = 10;
  const auto pair = generate_pair(small_synth(0.6, 0.9, 1000));
  const auto r = run_protocol(pair.human, pair.generated, config);
  EXPECT_GT(r.report("lic").mean(), 0.0);
  EXPECT_GT(r.report("leakage").mean(), 0.0);
}

TEST(Protocol, IdenticalCorporaGiveZeroLeakage) {
  const auto pair = generate_pair(small_synth(0.7, 0.7, 300));
  const auto r = run_protocol(pair.human, pair.human, quick_protocol(3));
  EXPECT_EQ(r.report("leakage").mean(), 0.0);
  EXPECT_EQ(r.report("lic").mean(), 0.0);
}

TEST(Protocol, ShuffledLabelsGiveChanceComponent) {
  // Destroy the signal: annotations are permuted against the captions.
  auto pair = generate_pair(small_synth(1.0, 1.0, 1000));
  std::vector<CaptionRecord> records = pair.human.records();
  std::vector<std::size_t> labels;
  for (const auto& rec : records) labels.push_back(*rec.attribute);
  Rng rng(12);
  rng.shuffle(labels);
  for (std::size_t i = 0; i < records.size(); ++i) records[i].attribute = labels[i];
  const auto human = pair.human.with_records(records);
  std::vector<CaptionRecord> generated = pair.generated.records();
  for (auto& rec : generated) rec.attribute.reset();
  auto config = quick_protocol(10);
  config.classifier.learning_rate = 5e-5;
  config.classifier.epochs = 5;
  const auto r = run_protocol(human, pair.generated.with_records(generated), config);
  EXPECT_NEAR(r.report("lic_m").mean(), 25.0, 3.0);
}

TEST(Protocol, RejectsMissingGeneratedImages) {
  const auto pair = generate_pair(small_synth(0.5, 0.5, 100));
  const auto partial = pair.generated.filter(
      [](const CaptionRecord& r) { return r.image_id != "img-000007"; });
  auto config = quick_protocol(2);
  config.test_fraction = 0.5;
  EXPECT_THROW(run_protocol(pair.human, partial, config), ValidationError);
}

TEST(Protocol, KeepsFirstSeedModelsWhenAsked) {
  const auto pair = generate_pair(small_synth(0.5, 0.9, 200));
  auto config = quick_protocol(2);
  config.keep_first_models = true;
  const auto r = run_protocol(pair.human, pair.generated, config);
  ASSERT_TRUE(r.f_star.has_value());
  ASSERT_TRUE(r.f_hat.has_value());
  EXPECT_EQ(r.f_hat->vocabulary().hash(), r.seeds[0].v_pre_hash);
}

}  // namespace
}  // namespace capbias
