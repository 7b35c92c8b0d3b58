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

#ifndef CAPBIAS_LIC_HPP_
#define CAPBIAS_LIC_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "capbias/classifier.hpp"
#include "capbias/corpus.hpp"
#include "capbias/error.hpp"
#include "capbias/hash.hpp"
#include "capbias/masking.hpp"
#include "capbias/vocab.hpp"

namespace capbias {

inline constexpr double kReportScale = 100.0;

struct LabeledCaption {
  std::vector<std::string> tokens;
  std::size_t label = 0;
};

// Anything that maps a token sequence to per-class confidences.
template <typename M>
concept ConfidenceModel =
    requires(const M& m, std::span<const std::string> tokens) {
      { m.confidences(tokens) } -> std::convertible_to<std::vector<double>>;
    };

inline std::vector<LabeledCaption> labeled_captions(const Corpus& corpus) {
  std::vector<LabeledCaption> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus.records()) {
    if (!r.attribute) {
      throw ValidationError("caption '" + r.caption_id +
                            "' has no attribute annotation");
    }
    out.push_back({r.tokens, *r.attribute});
  }
  return out;
}

namespace internal {

template <ConfidenceModel M>
std::vector<double> checked_confidences(const M& model,
                                        const LabeledCaption& c) {
  std::vector<double> s = model.confidences(c.tokens);
  if (c.label >= s.size()) {
    throw ValidationError("classifier has fewer classes than the caption "
                          "labels require");
  }
  return s;
}

}  // namespace internal

// SC = 1/|H| sum 1[f(y) = a]. Unscaled, in [0, 1].
template <ConfidenceModel M>
double sc_accuracy(const M& model, std::span<const LabeledCaption> set) {
  if (set.empty()) throw ValidationError("SC needs a non-empty caption set");
  std::size_t correct = 0;
  for (const auto& c : set) {
    const auto s = internal::checked_confidences(model, c);
    if (argmax(s) == c.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

// Accuracy lambda of a classifier on an evaluation set.
template <ConfidenceModel M>
double lambda_of(const M& model, std::span<const LabeledCaption> set) {
  return sc_accuracy(model, set);
}

// LIC component: mean over captions of the true-class confidence when the
// prediction is correct, 0 otherwise; scaled by 100.
template <ConfidenceModel M>
double lic_component(const M& model, std::span<const LabeledCaption> set) {
  if (set.empty()) {
    throw ValidationError("LIC needs a non-empty caption set");
  }
  double sum = 0.0;
  for (const auto& c : set) {
    const auto s = internal::checked_confidences(model, c);
    if (argmax(s) == c.label) sum += s[c.label];
  }
  return kReportScale * sum / static_cast<double>(set.size());
}

inline double leakage(double lambda_m, double lambda_d) {
  return lambda_m - lambda_d;
}

// An accuracy together with the identity of the images it was measured on.
struct AccuracyScore {
  double value = 0.0;
  std::string evaluation_set;
};

inline double leakage(const AccuracyScore& lambda_m,
                      const AccuracyScore& lambda_d) {
  if (lambda_m.evaluation_set != lambda_d.evaluation_set) {
    throw ValidationError("leakage components were measured on different "
                          "evaluation images");
  }
  return leakage(lambda_m.value, lambda_d.value);
}

inline double lic(double lic_m, double lic_d) { return lic_m - lic_d; }

// A LIC component together with the hash of the configuration that
// produced it.
struct ComponentScore {
  double value = 0.0;
  std::string config_hash;
};

inline double lic(const ComponentScore& lic_m, const ComponentScore& lic_d) {
  if (lic_m.config_hash != lic_d.config_hash) {
    throw ValidationError("LIC components come from different configurations");
  }
  return lic(lic_m.value, lic_d.value);
}

struct Provenance {
  std::string config_hash;
  std::map<std::string, std::string> corpus_hashes;
  std::vector<std::string> vocab_hashes;
};

// One metric over seeds: per-seed values (already scaled), their mean and
// sample standard deviation (undefined for a single seed).
class MetricReport {
 public:
  MetricReport(std::string name, std::vector<double> per_seed,
               std::string scale, Provenance provenance = {})
      : name_(std::move(name)),
        per_seed_(std::move(per_seed)),
        scale_(std::move(scale)),
        provenance_(std::move(provenance)) {
    if (per_seed_.empty()) {
      throw ValidationError("metric '" + name_ + "' has no values");
    }
  }

  const std::string& name() const { return name_; }
  const std::vector<double>& per_seed() const { return per_seed_; }
  const std::string& scale() const { return scale_; }
  const Provenance& provenance() const { return provenance_; }
  std::vector<std::string>& notes() { return notes_; }
  const std::vector<std::string>& notes() const { return notes_; }

  double mean() const {
    return std::accumulate(per_seed_.begin(), per_seed_.end(), 0.0) /
           static_cast<double>(per_seed_.size());
  }

  std::optional<double> stddev() const {
    if (per_seed_.size() < 2) return std::nullopt;
    const double mu = mean();
    double ss = 0.0;
    for (double v : per_seed_) ss += (v - mu) * (v - mu);
    return std::sqrt(ss / static_cast<double>(per_seed_.size() - 1));
  }

  Json to_json() const {
    Json j = {{"name", name_},
              {"per_seed", per_seed_},
              {"mean", mean()},
              {"scale", scale_},
              {"config_hash", provenance_.config_hash},
              {"corpus_hashes", provenance_.corpus_hashes}};
    const auto sd = stddev();
    j["std"] = sd ? Json(*sd) : Json(nullptr);
    j["std_defined"] = sd.has_value();
    if (!provenance_.vocab_hashes.empty()) {
      j["vocab_hashes"] = provenance_.vocab_hashes;
    }
    if (!notes_.empty()) j["notes"] = notes_;
    return j;
  }

 private:
  std::string name_;
  std::vector<double> per_seed_;
  std::string scale_;
  Provenance provenance_;
  std::vector<std::string> notes_;
};

struct ProtocolConfig {
  std::size_t n_seeds = 10;
  ClassifierConfig classifier;
  double test_fraction = 0.1;
  std::uint64_t master_seed = 0;
  // Minimum token count for the classifiers' vocabularies.
  std::size_t min_count = 1;
  // Worker threads for seeds; 0 picks the hardware concurrency. Capped by
  // CAPBIAS_THREADS either way.
  std::size_t threads = 0;
  // Keep the seed-0 classifiers in the result (for checkpoints).
  bool keep_first_models = false;

  void validate() const {
    if (n_seeds == 0) throw ValidationError("n_seeds must be at least 1");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
      throw ValidationError("test_fraction must lie in (0, 1)");
    }
    if (min_count == 0) throw ValidationError("min_count must be positive");
    classifier.validate();
  }

  // Everything that influences the metric values.
  Json to_json() const {
    Json c = classifier.to_json();
    c.erase("seed");
    return {{"n_seeds", n_seeds},
            {"classifier", c},
            {"test_fraction", test_fraction},
            {"master_seed", master_seed},
            {"min_count", min_count}};
  }

  std::string hash(const AttributeSpec& spec) const {
    return sha256_hex(to_json().dump() + "\n" + spec.canonical());
  }
};

// Worker count honoring the CAPBIAS_THREADS cap.
inline std::size_t worker_count(std::size_t requested, std::size_t jobs) {
  std::size_t n = requested;
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CAPBIAS_THREADS")) {
    char* end = nullptr;
    const unsigned long cap = std::strtoul(env, &end, 10);
    if (end != env && cap > 0) n = std::min<std::size_t>(n, cap);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

// Runs fn(i) for i in [0, jobs) on up to `workers` threads. If any job
// throws, the exception of the lowest failing index is rethrown after all
// workers finish.
template <typename Fn>
void parallel_for(std::size_t jobs, std::size_t workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(jobs);
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < jobs; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct SeedOutcome {
  std::uint64_t split_seed = 0;
  std::uint64_t init_seed = 0;
  std::uint64_t shuffle_seed = 0;
  double lic_d = 0.0;     // x100
  double lic_m = 0.0;     // x100
  double lambda_d = 0.0;  // unscaled
  double lambda_m = 0.0;  // unscaled
  double sc = 0.0;        // unscaled
  std::size_t train_images = 0;
  std::size_t test_images = 0;
  std::string v_pre_hash;
  std::size_t v_pre_size = 0;
  TrainingLog f_star_log;
  TrainingLog f_hat_log;
};

struct ProtocolResult {
  std::vector<SeedOutcome> seeds;
  std::vector<MetricReport> reports;
  Provenance provenance;
  std::optional<AttributeClassifier> f_star;
  std::optional<AttributeClassifier> f_hat;

  const MetricReport& report(std::string_view name) const {
    for (const auto& r : reports) {
      if (r.name() == name) return r;
    }
    throw ValidationError("no metric named '" + std::string(name) + "'");
  }
};

namespace internal {

inline std::vector<LabeledSequence> encode_for(
    const AttributeClassifier& clf, const std::vector<LabeledCaption>& set) {
  std::vector<LabeledSequence> out;
  out.reserve(set.size());
  for (const auto& c : set) {
    out.push_back({clf.vocabulary().encode(c.tokens), c.label});
  }
  return out;
}

inline AttributeClassifier fit_classifier(
    const ProtocolConfig& config, const Corpus& train_set,
    std::uint64_t init_seed, std::uint64_t shuffle_seed) {
  auto cfg = config.classifier;
  cfg.seed = init_seed;
  auto vocab = build_vocab(train_set, config.min_count);
  auto clf = AttributeClassifier::init(cfg, std::move(vocab),
                                       train_set.attribute_spec().values());
  const auto data = encode_for(clf, labeled_captions(train_set));
  return train(std::move(clf), data, shuffle_seed);
}

// Generated captions carry the attribute of their image as annotated on the
// human side; images without a human annotation are dropped.
inline Corpus attach_human_attributes(const Corpus& human,
                                      const Corpus& generated) {
  const auto attrs = human.image_attributes();
  std::vector<CaptionRecord> records;
  for (auto r : generated.records()) {
    const auto it = attrs.find(r.image_id);
    if (it == attrs.end()) continue;
    if (r.attribute && *r.attribute != it->second) {
      throw ValidationError("generated caption '" + r.caption_id +
                            "' disagrees with the human annotation of image '" +
                            r.image_id + "'");
    }
    r.attribute = it->second;
    records.push_back(std::move(r));
  }
  return generated.with_records(std::move(records));
}

}  // namespace internal

// The full LIC pipeline over config.n_seeds seeds. Per seed: balanced image
// split, prediction vocabulary from the generated training captions, y* by
// aligning the masked human captions to it, f* trained on y* and f_hat on
// the masked generated captions (same initialization and shuffle seeds),
// all components evaluated on the held-out test images. Any seed failure
// aborts the run.
inline ProtocolResult run_protocol(const Corpus& human,
                                   const Corpus& generated,
                                   const ProtocolConfig& config) {
  config.validate();
  const auto& spec = human.attribute_spec();
  if (spec.canonical() != generated.attribute_spec().canonical()) {
    throw ValidationError("human and generated corpora use different "
                          "attribute specs");
  }
  const Corpus human_masked = mask_corpus(human).corpus;
  const Corpus generated_masked =
      mask_corpus(internal::attach_human_attributes(human, generated)).corpus;
  std::set<std::string> generated_images;
  for (const auto& r : generated_masked.records()) {
    generated_images.insert(r.image_id);
  }

  ProtocolResult result;
  result.provenance.config_hash = config.hash(spec);
  result.provenance.corpus_hashes = {{"human", human.content_hash()},
                                     {"generated", generated.content_hash()}};
  result.seeds.resize(config.n_seeds);
  std::mutex keep_mutex;

  parallel_for(
      config.n_seeds, worker_count(config.threads, config.n_seeds),
      [&](std::size_t s) {
        SeedOutcome out;
        out.split_seed = derive_seed(config.master_seed, s, SeedPurpose::kSplit);
        out.init_seed = derive_seed(config.master_seed, s, SeedPurpose::kInit);
        out.shuffle_seed =
            derive_seed(config.master_seed, s, SeedPurpose::kShuffle);
        const auto split =
            split_images(human_masked, config.test_fraction, out.split_seed);
        for (const auto* images : {&split.train, &split.test}) {
          for (const auto& image : *images) {
            if (!generated_images.count(image)) {
              throw ValidationError("generated corpus has no caption for "
                                    "image '" + image + "'");
            }
          }
        }
        out.train_images = split.train.size();
        out.test_images = split.test.size();
        const auto human_split = apply_split(human_masked, split);
        const auto gen_split = apply_split(generated_masked, split);

        const auto v_pre = build_vocab(gen_split.train, 1);
        out.v_pre_hash = v_pre.hash();
        out.v_pre_size = v_pre.size();
        const auto human_train_star = align_corpus(human_split.train, v_pre);
        const auto human_test_star = align_corpus(human_split.test, v_pre);

        auto f_star = internal::fit_classifier(config, human_train_star,
                                               out.init_seed, out.shuffle_seed);
        auto f_hat = internal::fit_classifier(config, gen_split.train,
                                              out.init_seed, out.shuffle_seed);
        const auto human_test = labeled_captions(human_test_star);
        const auto gen_test = labeled_captions(gen_split.test);
        out.lic_d = lic_component(f_star, human_test);
        out.lic_m = lic_component(f_hat, gen_test);
        out.lambda_d = lambda_of(f_star, human_test);
        out.lambda_m = lambda_of(f_hat, gen_test);
        out.sc = sc_accuracy(f_star, gen_test);
        out.f_star_log = f_star.training_log();
        out.f_hat_log = f_hat.training_log();
        if (s == 0 && config.keep_first_models) {
          std::lock_guard lock(keep_mutex);
          result.f_star = std::move(f_star);
          result.f_hat = std::move(f_hat);
        }
        result.seeds[s] = std::move(out);
      });

  std::vector<double> lic_m, lic_d, lic_v, lam_m, lam_d, leak, sc;
  for (const auto& s : result.seeds) {
    lic_m.push_back(s.lic_m);
    lic_d.push_back(s.lic_d);
    lic_v.push_back(lic(s.lic_m, s.lic_d));
    lam_m.push_back(kReportScale * s.lambda_m);
    lam_d.push_back(kReportScale * s.lambda_d);
    leak.push_back(kReportScale * leakage(s.lambda_m, s.lambda_d));
    sc.push_back(kReportScale * s.sc);
    result.provenance.vocab_hashes.push_back(s.v_pre_hash);
  }
  const auto add = [&](const char* name, std::vector<double> values) {
    result.reports.emplace_back(name, std::move(values), "x100",
                                result.provenance);
    if (config.n_seeds == 1) {
      result.reports.back().notes().push_back(
          "single seed: standard deviation undefined");
    }
  };
  add("lic", lic_v);
  add("lic_m", lic_m);
  add("lic_d", lic_d);
  add("sc", sc);
  add("leakage", leak);
  add("lambda_m", lam_m);
  add("lambda_d", lam_d);
  return result;
}

}  // namespace capbias

#endif  // CAPBIAS_LIC_HPP_
