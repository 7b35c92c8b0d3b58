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

#include <array>
#include <map>
#include <set>

#include "capbias/cooccur.hpp"
#include "test_support.hpp"

namespace capbias {
namespace {

using testing::make_corpus;
using testing::Row;

TaskWordSet user_words(const std::vector<std::string>& w) {
  return TaskWordSet(w, TaskWordProvenance::kUserSupplied,
                     AttributeSpec::gender());
}

std::vector<Row> repeated(const std::string& caption, std::size_t n) {
  return std::vector<Row>(n, Row{caption, std::nullopt, ""});
}

TEST(TaskWords, ThresholdKeepsOnlyWordsFrequentWithEveryValue) {
  std::vector<Row> rows;
  for (const auto& [caption, n] :
       std::vector<std::pair<std::string, std::size_t>>{
           {"woman pizza", 150}, {"man pizza", 120},
           {"woman dress", 200}, {"man dress", 30}}) {
    const auto r = repeated(caption, n);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  const auto words = select_task_words(make_corpus(rows), 1000, 100);
  EXPECT_EQ(words.words(), std::vector<std::string>{"pizza"});
}

TEST(TaskWords, TopKOfOne) {
  std::vector<Row> rows = repeated("woman pizza pizza", 3);
  const auto more = repeated("man pizza", 3);
  rows.insert(rows.end(), more.begin(), more.end());
  rows.push_back({"woman cat", std::nullopt, ""});
  const auto words = select_task_words(make_corpus(rows), 1, 1);
  EXPECT_EQ(words.words(), std::vector<std::string>{"pizza"});
}

TEST(TaskWords, EmptyResultSuggestsReducingThreshold) {
  try {
    select_task_words(make_corpus({{"woman pizza", 0, ""}}), 10, 5);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("reduce"), std::string::npos);
  }
}

TEST(TaskWords, RejectsAttributeWordsAndDuplicates) {
  EXPECT_THROW(user_words({"woman"}), ValidationError);
  EXPECT_THROW(user_words({"cat", "cat"}), ValidationError);
  EXPECT_THROW(user_words({}), ValidationError);
}

TEST(Cooccurrence, SingleCaption) {
  const auto t = count_cooccurrence(make_corpus({{"a woman with a pizza",
                                                  std::nullopt, ""}}),
                                    user_words({"pizza"}),
                                    AttributeMode::kCaptionWords);
  EXPECT_EQ(t.count(0, 0), 1u);
  EXPECT_EQ(t.count(1, 0), 0u);
}

TEST(Cooccurrence, EmptyCorpusGivesZeros) {
  const auto t = count_cooccurrence(make_corpus({}), user_words({"pizza"}),
                                    AttributeMode::kCaptionWords);
  EXPECT_EQ(t.count(0, 0) + t.count(1, 0), 0u);
  EXPECT_EQ(t.n_units(), 0u);
}

TEST(Cooccurrence, MixedAndUngenderedCaptionsAreSkipped) {
  const auto t = count_cooccurrence(
      make_corpus({{"a man and a woman with pizza", std::nullopt, ""},
                   {"pizza on a table", std::nullopt, ""},
                   {"he eats pizza pizza", std::nullopt, ""}}),
      user_words({"pizza"}), AttributeMode::kCaptionWords);
  EXPECT_EQ(t.count(1, 0), 1u);
  EXPECT_EQ(t.count(0, 0), 0u);
  EXPECT_EQ(t.skipped_units(), 2u);
}

TEST(Cooccurrence, AnnotationModeAndObjectMentions) {
  const ObjectLexicon lexicon = {{"dining table", {"table", "desk"}},
                                 {"dog", {"puppy"}}};
  const auto c = make_corpus({{"a person at a desk with a puppy", 0, ""},
                              {"a person at a dining table", 1, ""}});
  const TaskWordSet labels({"dining table", "dog"},
                           TaskWordProvenance::kUserSupplied, c.attribute_spec());
  const auto t =
      count_cooccurrence(c, labels, AttributeMode::kAnnotation,
                         LabelPresence::kObjectMentions, &lexicon);
  EXPECT_EQ(t.count(0, 0), 1u);
  EXPECT_EQ(t.count(0, 1), 1u);
  EXPECT_EQ(t.count(1, 0), 1u);
  EXPECT_EQ(t.count(1, 1), 0u);
}

TEST(Cooccurrence, ImageObjectsPresence) {
  std::vector<CaptionRecord> records;
  records.push_back({"c0", "i0", tokenize("a woman"), CaptionSource::kHuman, 0});
  records.push_back({"c1", "i1", tokenize("a man"), CaptionSource::kHuman, 1});
  const Corpus c(AttributeSpec::gender(), records,
                 ObjectAnnotations{{"i0", {"cup", "dog"}}, {"i1", {"dog"}}});
  const TaskWordSet labels({"cup", "dog"}, TaskWordProvenance::kObjectLabels,
                           c.attribute_spec());
  const auto t = count_cooccurrence(c, labels, AttributeMode::kCaptionWords);
  EXPECT_EQ(t.count(0, 0), 1u);
  EXPECT_EQ(t.count(0, 1), 1u);
  EXPECT_EQ(t.count(1, 1), 1u);
  EXPECT_EQ(t.count(1, 0), 0u);
}

CooccurrenceTable table_with(std::size_t female, std::size_t male) {
  CooccurrenceTable t({"l"}, 2);
  const std::vector<std::size_t> present = {0};
  for (std::size_t i = 0; i < female; ++i) t.add_unit(0, present);
  for (std::size_t i = 0; i < male; ++i) t.add_unit(1, present);
  return t;
}

TEST(Bias, ColumnExamples) {
  auto b = bias_of(table_with(2, 2));
  EXPECT_DOUBLE_EQ(b.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(b.at(1, 0), 0.5);
  b = bias_of(table_with(3, 1));
  EXPECT_DOUBLE_EQ(b.at(0, 0), 0.75);
  EXPECT_DOUBLE_EQ(b.at(1, 0), 0.25);
  b = bias_of(table_with(0, 5));
  EXPECT_DOUBLE_EQ(b.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(b.at(1, 0), 1.0);
}

TEST(Bias, AllZeroColumnIsExcluded) {
  const auto b = bias_of(table_with(0, 0));
  EXPECT_FALSE(b.defined(0));
  EXPECT_EQ(b.excluded(), std::vector<std::string>{"l"});
  EXPECT_THROW(ba(b, b), ValidationError);
}

TEST(Ba, IdentityIsZero) {
  const auto b = bias_of(table_with(7, 3));
  EXPECT_EQ(ba(b, b).value, 0.0);
}

TEST(Ba, SingleCellHandComputation) {
  // b_f = 0.75, b_hat_f = 0.85.
  const auto r = ba(bias_of(table_with(85, 15)), bias_of(table_with(75, 25)));
  EXPECT_NEAR(r.value, 0.10, 1e-12);
  EXPECT_NEAR(kReportScale * r.value, 10.0, 1e-10);
}

TEST(Ba, GateBlocksCellsAtOrBelowHalf) {
  // b_f = 0.4 does not count; only the male cell (0.6) does.
  const auto r = ba(bias_of(table_with(9, 1)), bias_of(table_with(4, 6)));
  EXPECT_NEAR(r.value, 0.1 - 0.6, 1e-12);
  const auto gate = ba(bias_of(table_with(9, 1)), bias_of(table_with(5, 5)));
  EXPECT_EQ(gate.value, 0.0);
}

TEST(Ba, BiasColumnsSumToOne) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto b = bias_of(
        table_with(1 + rng.uniform_index(50), rng.uniform_index(50)));
    EXPECT_NEAR(b.at(0, 0) + b.at(1, 0), 1.0, 1e-12);
  }
}

// Independent oracle: plain string sets, no library types.
double brute_force_ba(const std::vector<std::string>& gt,
                      const std::vector<std::string>& gen,
                      const std::vector<std::string>& labels) {
  const std::set<std::string> female = {"woman", "women", "girl", "she", "her"};
  const std::set<std::string> male = {"man", "men", "boy", "he", "his"};
  const auto counts = [&](const std::vector<std::string>& captions) {
    std::map<std::string, std::array<double, 2>> n;
    for (const auto& l : labels) n[l] = {0.0, 0.0};
    for (const auto& c : captions) {
      const auto toks = testing::words(c);
      const std::set<std::string> s(toks.begin(), toks.end());
      bool f = false, m = false;
      for (const auto& t : s) {
        f |= female.count(t) > 0;
        m |= male.count(t) > 0;
      }
      if (f == m) continue;
      for (const auto& l : labels) {
        if (s.count(l)) n[l][f ? 0 : 1] += 1.0;
      }
    }
    return n;
  };
  const auto n = counts(gt);
  const auto n_hat = counts(gen);
  double sum = 0.0;
  int used = 0;
  for (const auto& l : labels) {
    const double tot = n.at(l)[0] + n.at(l)[1];
    const double tot_hat = n_hat.at(l)[0] + n_hat.at(l)[1];
    if (tot == 0.0 || tot_hat == 0.0) continue;
    ++used;
    for (int a = 0; a < 2; ++a) {
      const double b = n.at(l)[a] / tot;
      if (b > 0.5) sum += n_hat.at(l)[a] / tot_hat - b;
    }
  }
  return sum / used;
}

TEST(Ba, MatchesBruteForceOnSmallCorpora) {
  const auto pool = testing::words(
      "woman women girl she her man men boy he his cat dog ball kite tree");
  const std::vector<std::string> labels = {"cat", "dog", "ball", "kite",
                                           "tree"};
  Rng rng(99);
  int compared = 0;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> gt, gen;
    for (auto* side : {&gt, &gen}) {
      const auto n = 5 + rng.uniform_index(16);
      for (std::size_t i = 0; i < n; ++i) {
        std::string c;
        for (int k = 0; k < 4; ++k) c += pool[rng.uniform_index(pool.size())] + " ";
        side->push_back(c);
      }
    }
    std::vector<Row> gt_rows, gen_rows;
    for (const auto& c : gt) gt_rows.push_back({c, std::nullopt, ""});
    for (const auto& c : gen) gen_rows.push_back({c, std::nullopt, ""});
    const auto words = user_words(labels);
    const auto b = bias_of(count_cooccurrence(
        make_corpus(gt_rows), words, AttributeMode::kCaptionWords));
    const auto b_hat = bias_of(count_cooccurrence(
        make_corpus(gen_rows), words, AttributeMode::kCaptionWords));
    bool any = false;
    for (std::size_t l = 0; l < labels.size(); ++l) {
      any |= b.defined(l) && b_hat.defined(l);
    }
    if (!any) continue;
    ++compared;
    EXPECT_NEAR(ba(b_hat, b).value, brute_force_ba(gt, gen, labels), 1e-12);
  }
  EXPECT_GT(compared, 200);
}

TEST(Ba, InvariantUnderCaptionPermutation) {
  std::vector<Row> rows = {{"woman cat", std::nullopt, ""},
                           {"man cat dog", std::nullopt, ""},
                           {"she dog", std::nullopt, ""},
                           {"his cat", std::nullopt, ""}};
  const auto words = user_words({"cat", "dog"});
  const auto gt = bias_of(table_with(3, 1));
  const auto gen = count_cooccurrence(make_corpus(rows), words,
                                      AttributeMode::kCaptionWords);
  std::reverse(rows.begin(), rows.end());
  const auto gen_rev = count_cooccurrence(make_corpus(rows), words,
                                          AttributeMode::kCaptionWords);
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t l = 0; l < 2; ++l) {
      EXPECT_EQ(gen.count(a, l), gen_rev.count(a, l));
    }
  }
}

JointDistribution two_by_two() {
  // p(a) = (0.5, 0.5), p(l) = (0.4, 0.6); cell (0, 0) positively correlated.
  return JointDistribution({"l0", "l1"}, 2, {0.3, 0.2, 0.1, 0.4}, {0.5, 0.5},
                           {0.4, 0.6});
}

TEST(Dba, IdentityIsExactlyZero) {
  const auto d = two_by_two();
  EXPECT_EQ(dba(d, d, DbaDirection::kAttributeGivenLabel).value, 0.0);
  EXPECT_EQ(dba(d, d, DbaDirection::kLabelGivenAttribute).value, 0.0);
}

TEST(Dba, InjectedShiftOnPositiveCell) {
  const auto gt = two_by_two();
  ASSERT_GT(gt.joint(0, 0), gt.p_attribute(0) * gt.p_label(0));
  // p_hat(0 | l0) = p(0 | l0) + 0.2, every other conditional unchanged.
  const JointDistribution gen({"l0", "l1"}, 2,
                              {0.3 + 0.2 * 0.4, 0.2, 0.1, 0.4}, {0.5, 0.5},
                              {0.4, 0.6});
  const auto r = dba(gt, gen, DbaDirection::kAttributeGivenLabel);
  EXPECT_NEAR(r.value, 0.2 / (2 * 2), 1e-12);
  EXPECT_EQ(r.cells_used, 4u);
}

TEST(Dba, NegativeCellFlipsSign) {
  const auto gt = two_by_two();
  ASSERT_LT(gt.joint(1, 0), gt.p_attribute(1) * gt.p_label(0));
  const JointDistribution gen({"l0", "l1"}, 2,
                              {0.3, 0.2, 0.1 + 0.1 * 0.4, 0.4}, {0.5, 0.5},
                              {0.4, 0.6});
  EXPECT_NEAR(dba(gt, gen, DbaDirection::kAttributeGivenLabel).value,
              -0.1 / 4, 1e-12);
}

TEST(Dba, LabelGivenAttributeDirection) {
  const auto gt = two_by_two();
  const JointDistribution gen({"l0", "l1"}, 2,
                              {0.3 + 0.2 * 0.5, 0.2, 0.1, 0.4}, {0.5, 0.5},
                              {0.4, 0.6});
  EXPECT_NEAR(dba(gt, gen, DbaDirection::kLabelGivenAttribute).value,
              0.2 / 4, 1e-12);
}

TEST(Dba, UndefinedConditionalsAreSkipped) {
  const JointDistribution gt({"l0", "l1"}, 2, {0.3, 0.0, 0.1, 0.0}, {0.5, 0.5},
                             {0.4, 0.0});
  const auto r = dba(gt, gt, DbaDirection::kAttributeGivenLabel);
  EXPECT_EQ(r.cells_used, 2u);
  EXPECT_EQ(r.cells_skipped, 2u);
}

TEST(Dba, AntisymmetricUnderFixedIndicator) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto random_dist = [&] {
      std::vector<double> joint(6);
      double total = 0.0;
      for (auto& p : joint) total += (p = 0.05 + rng.uniform01());
      for (auto& p : joint) p /= total;
      std::vector<double> pa(2, 0.0), pl(3, 0.0);
      for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t l = 0; l < 3; ++l) {
          pa[a] += joint[a * 3 + l];
          pl[l] += joint[a * 3 + l];
        }
      }
      return JointDistribution({"x", "y", "z"}, 2, joint, pa, pl);
    };
    const auto p = random_dist();
    const auto q = random_dist();
    const auto y = positive_correlation(p);
    for (auto dir : {DbaDirection::kAttributeGivenLabel,
                     DbaDirection::kLabelGivenAttribute}) {
      EXPECT_NEAR(dba_given_indicator(y, p, q, dir).value,
                  -dba_given_indicator(y, q, p, dir).value, 1e-12);
    }
  }
}

TEST(Dba, FromTableMatchesCounts) {
  const auto d = JointDistribution::from_table(table_with(3, 1));
  EXPECT_DOUBLE_EQ(d.joint(0, 0), 0.75);
  EXPECT_DOUBLE_EQ(d.p_attribute(1), 0.25);
  EXPECT_DOUBLE_EQ(d.p_label(0), 1.0);
}

Corpus captions(std::size_t male, std::size_t female, std::size_t mixed = 0) {
  std::vector<Row> rows;
  for (std::size_t i = 0; i < male; ++i) rows.push_back({"a man", 1, ""});
  for (std::size_t i = 0; i < female; ++i) rows.push_back({"a woman", 0, ""});
  for (std::size_t i = 0; i < mixed; ++i) {
    rows.push_back({"a man and a woman", 0, ""});
  }
  return make_corpus(rows, AttributeSpec::gender(), CaptionSource::kModel);
}

TEST(Ratio, Examples) {
  EXPECT_DOUBLE_EQ(ratio(captions(10, 5)), 2.0);
  EXPECT_DOUBLE_EQ(ratio(captions(4, 4, 3)), 1.0);
  EXPECT_THROW(ratio(captions(3, 0)), ValidationError);
  EXPECT_THROW(ratio(captions(1, 1), "male", "robot"), ValidationError);
}

TEST(Error, Examples) {
  EXPECT_EQ(error_rate(captions(3, 3)), 0.0);
  const auto c = make_corpus({{"a man", 1, ""},
                              {"a man", 1, ""},
                              {"a woman", 0, ""},
                              {"a man", 0, ""},
                              {"a man and a woman", 1, ""},
                              {"a dog", 1, ""}},
                             AttributeSpec::gender(), CaptionSource::kModel);
  EXPECT_DOUBLE_EQ(error_rate(c), 0.25);
  EXPECT_DOUBLE_EQ(error_rate(c, {.count_mixed_as_error = true}), 2.0 / 5.0);
}

TEST(Error, RaceHasNoWordLists) {
  const auto c = make_corpus({{"a person", 0, ""}}, AttributeSpec::race());
  EXPECT_THROW(error_rate(c), ValidationError);
}

}  // namespace
}  // namespace capbias
