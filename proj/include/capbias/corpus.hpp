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

#ifndef CAPBIAS_CORPUS_HPP_
#define CAPBIAS_CORPUS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "capbias/attribute.hpp"
#include "capbias/error.hpp"
#include "capbias/hash.hpp"
#include "capbias/json_lines.hpp"
#include "capbias/rng.hpp"
#include "capbias/tokenize.hpp"

namespace capbias {

enum class CaptionSource { kHuman, kModel };

inline std::string_view to_string(CaptionSource source) {
  return source == CaptionSource::kHuman ? "human" : "model";
}

struct CaptionRecord {
  std::string caption_id;
  std::string image_id;
  std::vector<std::string> tokens;
  CaptionSource source = CaptionSource::kHuman;
  // Index into AttributeSpec::values().
  std::optional<std::size_t> attribute;
};

using ObjectAnnotations = std::map<std::string, std::vector<std::string>>;

// An immutable set of captions sharing one attribute spec. Construction
// validates unique caption ids, non-empty tokens, attribute indices in range
// and one attribute value per image.
class Corpus {
 public:
  explicit Corpus(AttributeSpec spec, std::vector<CaptionRecord> records = {},
                  std::optional<ObjectAnnotations> objects = std::nullopt)
      : spec_(std::move(spec)),
        records_(std::move(records)),
        objects_(std::move(objects)) {
    std::unordered_set<std::string> ids;
    std::unordered_map<std::string, std::optional<std::size_t>> image_attr;
    for (const auto& r : records_) {
      if (!ids.insert(r.caption_id).second) {
        throw ValidationError("duplicate caption_id '" + r.caption_id + "'");
      }
      if (r.tokens.empty()) {
        throw ValidationError("caption '" + r.caption_id + "' has no tokens");
      }
      if (r.attribute && *r.attribute >= spec_.value_count()) {
        throw ValidationError("caption '" + r.caption_id +
                              "' has an attribute outside the value set");
      }
      const auto [it, inserted] = image_attr.emplace(r.image_id, r.attribute);
      if (!inserted && it->second != r.attribute) {
        throw ValidationError("image '" + r.image_id +
                              "' carries conflicting attribute values");
      }
    }
  }

  const AttributeSpec& attribute_spec() const { return spec_; }
  const std::vector<CaptionRecord>& records() const { return records_; }
  const std::optional<ObjectAnnotations>& object_annotations() const {
    return objects_;
  }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  // image_id -> attribute index for every annotated image.
  std::map<std::string, std::size_t> image_attributes() const {
    std::map<std::string, std::size_t> out;
    for (const auto& r : records_) {
      if (r.attribute) out.emplace(r.image_id, *r.attribute);
    }
    return out;
  }

  template <typename Pred>
  Corpus filter(Pred&& keep) const {
    std::vector<CaptionRecord> kept;
    for (const auto& r : records_) {
      if (keep(r)) kept.push_back(r);
    }
    return Corpus(spec_, std::move(kept), objects_);
  }

  Corpus with_records(std::vector<CaptionRecord> records) const {
    return Corpus(spec_, std::move(records), objects_);
  }

  // SHA-256 over the attribute spec and every record in order.
  std::string content_hash() const {
    Sha256 h;
    h.update(spec_.canonical());
    for (const auto& r : records_) {
      h.update(r.caption_id).update("\t").update(r.image_id).update("\t");
      h.update(to_string(r.source)).update("\t");
      h.update(r.attribute ? spec_.values()[*r.attribute] : std::string("-"));
      h.update("\t").update(join_tokens(r.tokens)).update("\n");
    }
    if (objects_) {
      for (const auto& [image, objs] : *objects_) {
        h.update("obj\t").update(image);
        for (const auto& o : objs) h.update("\t").update(o);
        h.update("\n");
      }
    }
    return h.hex_digest();
  }

 private:
  AttributeSpec spec_;
  std::vector<CaptionRecord> records_;
  std::optional<ObjectAnnotations> objects_;
};

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t rejected = 0;
  std::vector<std::string> diagnostics;
};

struct LoadedCorpus {
  Corpus corpus;
  LoadReport report;
};

struct RawCaption {
  CaptionRecord record;
  std::size_t line = 0;
};

// Reads the captions JSON Lines format. A record may carry a pre-tokenized
// "tokens" array instead of "caption" (as written by the mask command).
// Captions that are empty after tokenization are rejected with a diagnostic
// in `report`; every other defect raises ValidationError.
inline std::vector<RawCaption> parse_captions(std::istream& in,
                                              std::string_view source,
                                              LoadReport& report) {
  std::vector<RawCaption> out;
  std::unordered_map<std::string, std::size_t> seen;
  for_each_json_line(in, source, [&](const Json& obj, std::size_t line) {
    RawCaption raw;
    raw.line = line;
    auto& r = raw.record;
    r.caption_id = required_field<std::string>(obj, "caption_id", source, line);
    r.image_id = required_field<std::string>(obj, "image_id", source, line);
    const auto src = required_field<std::string>(obj, "source", source, line);
    if (src == "human") {
      r.source = CaptionSource::kHuman;
    } else if (src == "model") {
      r.source = CaptionSource::kModel;
    } else {
      throw ValidationError(located(
          source, line, "source must be \"human\" or \"model\", got \"" + src +
                            "\""));
    }
    if (obj.contains("tokens")) {
      r.tokens =
          required_field<std::vector<std::string>>(obj, "tokens", source, line);
      std::erase_if(r.tokens, [](const std::string& t) { return t.empty(); });
    } else {
      r.tokens =
          tokenize(required_field<std::string>(obj, "caption", source, line));
    }
    if (const auto [it, inserted] = seen.emplace(r.caption_id, line);
        !inserted) {
      throw ValidationError(located(
          source, line,
          "duplicate caption_id '" + r.caption_id + "' (first seen on line " +
              std::to_string(it->second) + ")"));
    }
    if (r.tokens.empty()) {
      ++report.rejected;
      report.diagnostics.push_back(located(
          source, line,
          "caption '" + r.caption_id + "' is empty after tokenization"));
      return;
    }
    ++report.loaded;
    out.push_back(std::move(raw));
  });
  return out;
}

// image_id -> attribute index. Unknown values and repeated images are errors.
inline std::map<std::string, std::size_t> parse_annotations(
    std::istream& in, std::string_view source, const AttributeSpec& spec) {
  std::map<std::string, std::size_t> out;
  std::map<std::string, std::size_t> lines;
  for_each_json_line(in, source, [&](const Json& obj, std::size_t line) {
    const auto image = required_field<std::string>(obj, "image_id", source, line);
    const auto value = required_field<std::string>(obj, "attribute", source, line);
    const auto idx = spec.index_of(value);
    if (!idx) {
      std::string expected;
      for (const auto& v : spec.values()) {
        expected += (expected.empty() ? "" : ", ") + v;
      }
      throw ValidationError(located(
          source, line,
          "unknown attribute value '" + value + "' (expected one of " +
              expected + ")"));
    }
    if (const auto [it, inserted] = lines.emplace(image, line); !inserted) {
      throw ValidationError(located(
          source, line,
          "image '" + image + "' annotated twice (first on line " +
              std::to_string(it->second) + ")"));
    }
    out.emplace(image, *idx);
  });
  return out;
}

inline ObjectAnnotations parse_objects(std::istream& in,
                                       std::string_view source) {
  ObjectAnnotations out;
  for_each_json_line(in, source, [&](const Json& obj, std::size_t line) {
    const auto image = required_field<std::string>(obj, "image_id", source, line);
    auto objects =
        required_field<std::vector<std::string>>(obj, "objects", source, line);
    std::sort(objects.begin(), objects.end());
    objects.erase(std::unique(objects.begin(), objects.end()), objects.end());
    if (!out.emplace(image, std::move(objects)).second) {
      throw ValidationError(
          located(source, line, "image '" + image + "' listed twice"));
    }
  });
  return out;
}

inline LoadedCorpus assemble_corpus(
    std::vector<RawCaption> captions, LoadReport report,
    const std::optional<std::map<std::string, std::size_t>>& annotations,
    std::string_view annotations_source, AttributeSpec spec,
    std::optional<ObjectAnnotations> objects) {
  if (annotations) {
    std::set<std::string> images;
    for (const auto& c : captions) images.insert(c.record.image_id);
    for (const auto& [image, _] : *annotations) {
      if (!images.count(image)) {
        throw ValidationError(std::string(annotations_source) +
                              ": annotation references missing image '" +
                              image + "'");
      }
    }
    for (auto& c : captions) {
      if (const auto it = annotations->find(c.record.image_id);
          it != annotations->end()) {
        c.record.attribute = it->second;
      }
    }
  }
  std::vector<CaptionRecord> records;
  records.reserve(captions.size());
  for (auto& c : captions) records.push_back(std::move(c.record));
  return {Corpus(std::move(spec), std::move(records), std::move(objects)),
          std::move(report)};
}

// Loads captions, optional attribute annotations and optional object
// annotations into a validated Corpus.
inline LoadedCorpus load_corpus(
    const std::filesystem::path& captions_path,
    const std::optional<std::filesystem::path>& annotations_path,
    const AttributeSpec& spec,
    const std::optional<std::filesystem::path>& objects_path = std::nullopt) {
  LoadReport report;
  auto captions_in = open_input(captions_path);
  auto captions = parse_captions(captions_in, captions_path.string(), report);
  std::optional<std::map<std::string, std::size_t>> annotations;
  if (annotations_path) {
    auto in = open_input(*annotations_path);
    annotations = parse_annotations(in, annotations_path->string(), spec);
  }
  std::optional<ObjectAnnotations> objects;
  if (objects_path) {
    auto in = open_input(*objects_path);
    objects = parse_objects(in, objects_path->string());
  }
  return assemble_corpus(
      std::move(captions), std::move(report), annotations,
      annotations_path ? annotations_path->string() : std::string(), spec,
      std::move(objects));
}

inline void write_captions(const Corpus& corpus, std::ostream& out) {
  for (const auto& r : corpus.records()) {
    Json obj = {{"caption_id", r.caption_id},
                {"image_id", r.image_id},
                {"caption", join_tokens(r.tokens)},
                {"source", std::string(to_string(r.source))}};
    out << obj.dump() << '\n';
  }
}

inline void write_annotations(const Corpus& corpus, std::ostream& out) {
  const auto& values = corpus.attribute_spec().values();
  for (const auto& [image, attr] : corpus.image_attributes()) {
    out << Json{{"image_id", image}, {"attribute", values[attr]}}.dump()
        << '\n';
  }
}

// Partition of annotated images into train/test, balanced per value.
struct ImageSplit {
  std::set<std::string> train;
  std::set<std::string> test;
  std::uint64_t seed = 0;
};

struct SplitPair {
  Corpus train;
  Corpus test;
  std::uint64_t seed = 0;
};

// Balanced image split. Images of each value are sorted, shuffled with
// `seed`, and the first n_min of each kept, where n_min is the image count
// of the rarest value; the excess of larger values is dropped from both
// sides. Of the kept n_min, round(n_min * test_fraction) go to test (at least
// one, at most n_min - 1) and the rest to train.
inline ImageSplit split_images(const Corpus& corpus, double test_fraction,
                               std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("test_fraction must lie in (0, 1)");
  }
  const auto& spec = corpus.attribute_spec();
  std::vector<std::vector<std::string>> per_value(spec.value_count());
  for (const auto& [image, attr] : corpus.image_attributes()) {
    per_value[attr].push_back(image);
  }
  std::size_t n_min = SIZE_MAX;
  for (std::size_t v = 0; v < per_value.size(); ++v) {
    if (per_value[v].empty()) {
      throw ValidationError("attribute value '" + spec.values()[v] +
                            "' has no annotated records");
    }
    if (per_value[v].size() < 2) {
      throw ValidationError("attribute value '" + spec.values()[v] +
                            "' needs at least 2 images for a split");
    }
    n_min = std::min(n_min, per_value[v].size());
  }
  const auto rounded = static_cast<std::size_t>(
      std::llround(static_cast<double>(n_min) * test_fraction));
  const std::size_t n_test = std::clamp<std::size_t>(rounded, 1, n_min - 1);
  Rng rng(seed);
  ImageSplit split;
  split.seed = seed;
  for (auto& images : per_value) {
    // map iteration already sorted them
    rng.shuffle(images);
    for (std::size_t i = 0; i < n_min; ++i) {
      (i < n_test ? split.test : split.train).insert(images[i]);
    }
  }
  return split;
}

inline SplitPair apply_split(const Corpus& corpus, const ImageSplit& split) {
  return {corpus.filter([&](const CaptionRecord& r) {
            return split.train.count(r.image_id) > 0;
          }),
          corpus.filter([&](const CaptionRecord& r) {
            return split.test.count(r.image_id) > 0;
          }),
          split.seed};
}

inline SplitPair balanced_split(const Corpus& corpus, double test_fraction,
                                std::uint64_t seed) {
  return apply_split(corpus, split_images(corpus, test_fraction, seed));
}

}  // namespace capbias

#endif  // CAPBIAS_CORPUS_HPP_
