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

#ifndef CAPBIAS_CLASSIFIER_HPP_
#define CAPBIAS_CLASSIFIER_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "capbias/error.hpp"
#include "capbias/hash.hpp"
#include "capbias/json_lines.hpp"
#include "capbias/rng.hpp"
#include "capbias/vocab.hpp"

namespace capbias {

enum class EncoderKind { kBagMean, kBiRecurrent };

inline std::string_view to_string(EncoderKind kind) {
  return kind == EncoderKind::kBagMean ? "bag_mean" : "bi_recurrent";
}

inline EncoderKind parse_encoder_kind(std::string_view name) {
  if (name == "bag_mean") return EncoderKind::kBagMean;
  if (name == "bi_recurrent") return EncoderKind::kBiRecurrent;
  throw ValidationError("unknown encoder '" + std::string(name) +
                        "' (expected bag_mean or bi_recurrent)");
}

// Hyperparameters of the attribute classifier. Epochs and learning rate
// default to 20 and 5e-5; widths and batch size are our own defaults.
struct ClassifierConfig {
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  EncoderKind encoder = EncoderKind::kBagMean;
  // Stacked bidirectional layers, BiRecurrent only.
  std::size_t recurrent_layers = 2;
  std::size_t epochs = 20;
  double learning_rate = 5e-5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (embed_dim == 0 || hidden_dim == 0) {
      throw ValidationError("classifier dimensions must be positive");
    }
    if (encoder == EncoderKind::kBiRecurrent && recurrent_layers == 0) {
      throw ValidationError("recurrent_layers must be positive");
    }
    if (epochs == 0 || batch_size == 0) {
      throw ValidationError("epochs and batch_size must be positive");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ValidationError("learning_rate must be positive");
    }
  }

  Json to_json() const {
    return {{"embed_dim", embed_dim},
            {"hidden_dim", hidden_dim},
            {"encoder", std::string(to_string(encoder))},
            {"recurrent_layers", recurrent_layers},
            {"epochs", epochs},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"seed", seed}};
  }

  static ClassifierConfig from_json(const Json& j) {
    ClassifierConfig c;
    try {
      c.embed_dim = j.value("embed_dim", c.embed_dim);
      c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
      c.encoder = parse_encoder_kind(
          j.value("encoder", std::string(to_string(c.encoder))));
      c.recurrent_layers = j.value("recurrent_layers", c.recurrent_layers);
      c.epochs = j.value("epochs", c.epochs);
      c.learning_rate = j.value("learning_rate", c.learning_rate);
      c.batch_size = j.value("batch_size", c.batch_size);
      c.seed = j.value("seed", c.seed);
    } catch (const Json::exception& e) {
      throw ValidationError(std::string("invalid classifier config: ") +
                            e.what());
    }
    c.validate();
    return c;
  }
};

struct LabeledSequence {
  std::vector<std::size_t> ids;
  std::size_t label = 0;
};

struct TrainingLog {
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;

  bool loss_decreased() const {
    return !epoch_losses.empty() && epoch_losses.back() <= initial_loss;
  }
};

namespace internal {

inline constexpr double kLeakySlope = 0.01;

struct Block {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

struct LstmBlocks {
  Block wx;  // 4H x in, gate order i, f, g, o
  Block wh;  // 4H x H
  Block b;   // 4H
  std::size_t in_dim = 0;
  std::size_t hidden = 0;
};

struct Layout {
  Block embedding;
  std::vector<LstmBlocks> lstm;  // index 2 * layer + direction
  Block w1, b1, w2, b2;
  std::size_t encoding_dim = 0;
  std::size_t total = 0;
};

inline Layout make_layout(const ClassifierConfig& c, std::size_t vocab_size,
                          std::size_t n_classes) {
  Layout layout;
  std::size_t offset = 0;
  const auto take = [&](std::size_t rows, std::size_t cols) {
    Block b{offset, rows, cols};
    offset += rows * cols;
    return b;
  };
  layout.embedding = take(vocab_size, c.embed_dim);
  if (c.encoder == EncoderKind::kBiRecurrent) {
    const std::size_t h = c.hidden_dim;
    for (std::size_t layer = 0; layer < c.recurrent_layers; ++layer) {
      const std::size_t in = layer == 0 ? c.embed_dim : 2 * h;
      for (int dir = 0; dir < 2; ++dir) {
        LstmBlocks blk;
        blk.wx = take(4 * h, in);
        blk.wh = take(4 * h, h);
        blk.b = take(4 * h, 1);
        blk.in_dim = in;
        blk.hidden = h;
        layout.lstm.push_back(blk);
      }
    }
    layout.encoding_dim = 2 * h;
  } else {
    layout.encoding_dim = c.embed_dim;
  }
  layout.w1 = take(c.hidden_dim, layout.encoding_dim);
  layout.b1 = take(c.hidden_dim, 1);
  layout.w2 = take(n_classes, c.hidden_dim);
  layout.b2 = take(n_classes, 1);
  layout.total = offset;
  return layout;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// out += W x, W is rows x cols row-major.
inline void gemv_add(const double* w, std::size_t rows, std::size_t cols,
                     const double* x, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
    out[r] += s;
  }
}

// out += W^T d.
inline void gemv_t_add(const double* w, std::size_t rows, std::size_t cols,
                       const double* d, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double dr = d[r];
    if (dr == 0.0) continue;
    const double* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += dr * row[c];
  }
}

// G += d x^T.
inline void outer_add(double* g, std::size_t rows, std::size_t cols,
                      const double* d, const double* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double dr = d[r];
    if (dr == 0.0) continue;
    double* row = g + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += dr * x[c];
  }
}

// Per-direction LSTM activations, indexed by processing step.
struct LstmTrace {
  std::size_t steps = 0;
  std::vector<double> input;  // steps x in
  std::vector<double> gates;  // steps x 4H, activated
  std::vector<double> cell;   // steps x H
  std::vector<double> hidden; // steps x H
};

inline void lstm_forward(const double* p, const LstmBlocks& blk,
                         const std::vector<double>& seq, std::size_t steps,
                         bool reverse, LstmTrace& tr) {
  const std::size_t in = blk.in_dim;
  const std::size_t h = blk.hidden;
  tr.steps = steps;
  tr.input.assign(steps * in, 0.0);
  tr.gates.assign(steps * 4 * h, 0.0);
  tr.cell.assign(steps * h, 0.0);
  tr.hidden.assign(steps * h, 0.0);
  std::vector<double> a(4 * h);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t pos = reverse ? steps - 1 - k : k;
    double* x = &tr.input[k * in];
    std::copy_n(&seq[pos * in], in, x);
    std::copy_n(p + blk.b.offset, 4 * h, a.begin());
    gemv_add(p + blk.wx.offset, 4 * h, in, x, a.data());
    if (k > 0) gemv_add(p + blk.wh.offset, 4 * h, h, &tr.hidden[(k - 1) * h],
                        a.data());
    double* g = &tr.gates[k * 4 * h];
    for (std::size_t j = 0; j < h; ++j) {
      g[j] = sigmoid(a[j]);
      g[h + j] = sigmoid(a[h + j]);
      g[2 * h + j] = std::tanh(a[2 * h + j]);
      g[3 * h + j] = sigmoid(a[3 * h + j]);
      const double c_prev = k > 0 ? tr.cell[(k - 1) * h + j] : 0.0;
      const double c = g[h + j] * c_prev + g[j] * g[2 * h + j];
      tr.cell[k * h + j] = c;
      tr.hidden[k * h + j] = g[3 * h + j] * std::tanh(c);
    }
  }
}

// Backpropagates dh (gradient w.r.t. the hidden state at each sequence
// position, steps x H) through one direction. Accumulates parameter
// gradients into g and input gradients into dx (steps x in, by position).
inline void lstm_backward(const double* p, const LstmBlocks& blk,
                          const LstmTrace& tr, bool reverse,
                          const std::vector<double>& dh_seq, double* g,
                          std::vector<double>& dx_seq) {
  const std::size_t in = blk.in_dim;
  const std::size_t h = blk.hidden;
  const std::size_t steps = tr.steps;
  std::vector<double> dh_next(h, 0.0), dc_next(h, 0.0), da(4 * h);
  const std::vector<double> zeros(h, 0.0);
  for (std::size_t kk = steps; kk-- > 0;) {
    const std::size_t pos = reverse ? steps - 1 - kk : kk;
    const double* gates = &tr.gates[kk * 4 * h];
    const double* c_prev = kk > 0 ? &tr.cell[(kk - 1) * h] : zeros.data();
    const double* h_prev = kk > 0 ? &tr.hidden[(kk - 1) * h] : zeros.data();
    for (std::size_t j = 0; j < h; ++j) {
      const double i = gates[j], f = gates[h + j], gg = gates[2 * h + j],
                   o = gates[3 * h + j];
      const double tc = std::tanh(tr.cell[kk * h + j]);
      const double dh = dh_seq[pos * h + j] + dh_next[j];
      const double d_o = dh * tc;
      const double dc = dc_next[j] + dh * o * (1.0 - tc * tc);
      da[j] = dc * gg * i * (1.0 - i);
      da[h + j] = dc * c_prev[j] * f * (1.0 - f);
      da[2 * h + j] = dc * i * (1.0 - gg * gg);
      da[3 * h + j] = d_o * o * (1.0 - o);
      dc_next[j] = dc * f;
    }
    outer_add(g + blk.wx.offset, 4 * h, in, da.data(), &tr.input[kk * in]);
    outer_add(g + blk.wh.offset, 4 * h, h, da.data(), h_prev);
    for (std::size_t j = 0; j < 4 * h; ++j) g[blk.b.offset + j] += da[j];
    gemv_t_add(p + blk.wx.offset, 4 * h, in, da.data(), &dx_seq[pos * in]);
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    gemv_t_add(p + blk.wh.offset, 4 * h, h, da.data(), dh_next.data());
  }
}

struct ForwardTrace {
  std::vector<double> encoding;
  std::vector<double> z1;
  std::vector<double> h1;
  std::vector<double> logits;
  std::vector<LstmTrace> lstm;  // same indexing as Layout::lstm
};

inline std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

inline double log_sum_exp(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

}  // namespace internal

// Index of the largest entry; ties go to the lowest index, i.e. the
// attribute value listed first.
inline std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

// Embedding table, sequence encoder and a two-layer leaky-ReLU head mapping
// a masked caption to |A| logits. All parameters live in one flat vector.
class AttributeClassifier {
 public:
  static AttributeClassifier init(const ClassifierConfig& config,
                                  Vocabulary vocabulary,
                                  std::vector<std::string> classes) {
    AttributeClassifier clf(config, std::move(vocabulary), std::move(classes));
    Rng rng(config.seed);
    // Uniform in +-1/sqrt(fan_in); the embedding table has fan-in 1.
    const auto fill = [&](const internal::Block& b, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < b.size(); ++i) {
        clf.params_[b.offset + i] = rng.uniform(-bound, bound);
      }
    };
    const auto& L = clf.layout_;
    fill(L.embedding, 1);
    for (const auto& blk : L.lstm) {
      fill(blk.wx, blk.hidden);
      fill(blk.wh, blk.hidden);
      fill(blk.b, blk.hidden);
    }
    fill(L.w1, L.encoding_dim);
    fill(L.b1, L.encoding_dim);
    fill(L.w2, config.hidden_dim);
    fill(L.b2, config.hidden_dim);
    return clf;
  }

  static AttributeClassifier from_parameters(const ClassifierConfig& config,
                                             Vocabulary vocabulary,
                                             std::vector<std::string> classes,
                                             std::vector<double> parameters) {
    AttributeClassifier clf(config, std::move(vocabulary), std::move(classes));
    if (parameters.size() != clf.params_.size()) {
      throw ValidationError("expected " + std::to_string(clf.params_.size()) +
                            " parameters, got " +
                            std::to_string(parameters.size()));
    }
    for (double v : parameters) {
      if (!std::isfinite(v)) throw ValidationError("non-finite parameter");
    }
    clf.params_ = std::move(parameters);
    return clf;
  }

  const ClassifierConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocabulary_; }
  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t n_classes() const { return classes_.size(); }
  std::span<const double> parameters() const { return params_; }
  std::span<double> mutable_parameters() { return params_; }
  const TrainingLog& training_log() const { return log_; }

  std::vector<double> logits(std::span<const std::size_t> ids) const {
    internal::ForwardTrace tr;
    forward(ids, tr);
    return tr.logits;
  }

  std::vector<double> confidences(std::span<const std::size_t> ids) const {
    return internal::softmax(logits(ids));
  }

  std::vector<double> confidences(std::span<const std::string> tokens) const {
    return confidences(vocabulary_.encode(tokens));
  }

  std::size_t predict(std::span<const std::string> tokens) const {
    return argmax(logits(vocabulary_.encode(tokens)));
  }

  // Cross-entropy of one example.
  double loss(std::span<const std::size_t> ids, std::size_t label) const {
    check_label(label);
    internal::ForwardTrace tr;
    forward(ids, tr);
    return internal::log_sum_exp(tr.logits) - tr.logits[label];
  }

  // Adds scale * dloss/dparams to grad and returns the loss.
  double accumulate_gradient(std::span<const std::size_t> ids,
                             std::size_t label, std::span<double> grad,
                             double scale = 1.0) const {
    check_label(label);
    if (grad.size() != params_.size()) {
      throw ValidationError("gradient buffer has the wrong size");
    }
    internal::ForwardTrace tr;
    forward(ids, tr);
    const double loss = internal::log_sum_exp(tr.logits) - tr.logits[label];
    auto dlogits = internal::softmax(tr.logits);
    dlogits[label] -= 1.0;
    for (double& v : dlogits) v *= scale;
    backward(ids, tr, dlogits, grad.data());
    return loss;
  }

  // Parameters a forward pass on `ids` reads: everything except the
  // embedding rows of tokens absent from `ids`.
  std::vector<std::size_t> touched_parameters(
      std::span<const std::size_t> ids) const {
    std::vector<std::size_t> rows(ids.begin(), ids.end());
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    std::vector<std::size_t> out;
    const auto d = config_.embed_dim;
    for (std::size_t r : rows) {
      for (std::size_t j = 0; j < d; ++j) {
        out.push_back(layout_.embedding.offset + r * d + j);
      }
    }
    for (std::size_t i = layout_.embedding.size(); i < params_.size(); ++i) {
      out.push_back(i);
    }
    return out;
  }

  Json to_checkpoint() const {
    return {{"format", "capbias-classifier"},
            {"version", 1},
            {"config", config_.to_json()},
            {"classes", classes_},
            {"vocabulary", vocabulary_.to_json()},
            {"vocab_hash", vocabulary_.hash()},
            {"parameters", params_},
            {"training_log",
             {{"initial_loss", log_.initial_loss},
              {"epoch_losses", log_.epoch_losses}}}};
  }

  // Rebuilds a classifier from to_checkpoint() output. The stored vocabulary
  // must hash to the stored vocab_hash, and to `expected_vocab_hash` when
  // one is given.
  static AttributeClassifier from_checkpoint(
      const Json& j, const std::optional<std::string>& expected_vocab_hash =
                         std::nullopt) {
    try {
      if (j.at("format") != "capbias-classifier" || j.at("version") != 1) {
        throw ValidationError("not a version-1 capbias classifier checkpoint");
      }
      auto vocab = Vocabulary::from_json(j.at("vocabulary"));
      const auto stored = j.at("vocab_hash").get<std::string>();
      if (vocab.hash() != stored) {
        throw ValidationError("checkpoint vocabulary does not match its hash");
      }
      if (expected_vocab_hash && *expected_vocab_hash != stored) {
        throw ValidationError("vocabulary hash mismatch: checkpoint has " +
                              stored + ", pipeline expects " +
                              *expected_vocab_hash);
      }
      auto clf = from_parameters(
          ClassifierConfig::from_json(j.at("config")), std::move(vocab),
          j.at("classes").get<std::vector<std::string>>(),
          j.at("parameters").get<std::vector<double>>());
      if (j.contains("training_log")) {
        clf.log_.initial_loss = j["training_log"].value("initial_loss", 0.0);
        clf.log_.epoch_losses = j["training_log"].value(
            "epoch_losses", std::vector<double>{});
      }
      return clf;
    } catch (const Json::exception& e) {
      throw ValidationError(std::string("malformed checkpoint: ") + e.what());
    }
  }

 private:
  friend AttributeClassifier train(AttributeClassifier,
                                   std::span<const LabeledSequence>,
                                   std::optional<std::uint64_t>);

  AttributeClassifier(const ClassifierConfig& config, Vocabulary vocabulary,
                      std::vector<std::string> classes)
      : config_(config),
        vocabulary_(std::move(vocabulary)),
        classes_(std::move(classes)) {
    config_.validate();
    if (classes_.size() < 2) {
      throw ValidationError("a classifier needs at least two classes");
    }
    layout_ = internal::make_layout(config_, vocabulary_.size(),
                                    classes_.size());
    params_.assign(layout_.total, 0.0);
  }

  void check_label(std::size_t label) const {
    if (label >= classes_.size()) {
      throw ValidationError("label " + std::to_string(label) +
                            " outside the classifier's classes");
    }
  }

  void check_ids(std::span<const std::size_t> ids) const {
    if (ids.empty()) {
      throw ValidationError("cannot classify an empty token sequence");
    }
    for (std::size_t id : ids) {
      if (id >= vocabulary_.size()) {
        throw ValidationError("token index outside the vocabulary");
      }
    }
  }

  void forward(std::span<const std::size_t> ids,
               internal::ForwardTrace& tr) const {
    check_ids(ids);
    const double* p = params_.data();
    const std::size_t d = config_.embed_dim;
    const std::size_t steps = ids.size();
    if (config_.encoder == EncoderKind::kBagMean) {
      tr.encoding.assign(d, 0.0);
      for (std::size_t id : ids) {
        const double* row = p + layout_.embedding.offset + id * d;
        for (std::size_t j = 0; j < d; ++j) tr.encoding[j] += row[j];
      }
      for (double& v : tr.encoding) v /= static_cast<double>(steps);
    } else {
      std::vector<double> seq(steps * d);
      for (std::size_t t = 0; t < steps; ++t) {
        std::copy_n(p + layout_.embedding.offset + ids[t] * d, d, &seq[t * d]);
      }
      tr.lstm.resize(layout_.lstm.size());
      const std::size_t h = config_.hidden_dim;
      for (std::size_t layer = 0; layer < config_.recurrent_layers; ++layer) {
        auto& fwd = tr.lstm[2 * layer];
        auto& bwd = tr.lstm[2 * layer + 1];
        internal::lstm_forward(p, layout_.lstm[2 * layer], seq, steps, false,
                               fwd);
        internal::lstm_forward(p, layout_.lstm[2 * layer + 1], seq, steps,
                               true, bwd);
        seq.assign(steps * 2 * h, 0.0);
        for (std::size_t pos = 0; pos < steps; ++pos) {
          std::copy_n(&fwd.hidden[pos * h], h, &seq[pos * 2 * h]);
          std::copy_n(&bwd.hidden[(steps - 1 - pos) * h], h,
                      &seq[pos * 2 * h + h]);
        }
      }
      const auto& fwd = tr.lstm[tr.lstm.size() - 2];
      const auto& bwd = tr.lstm.back();
      tr.encoding.assign(2 * h, 0.0);
      std::copy_n(&fwd.hidden[(steps - 1) * h], h, tr.encoding.begin());
      std::copy_n(&bwd.hidden[(steps - 1) * h], h, tr.encoding.begin() + h);
    }
    const std::size_t hd = config_.hidden_dim;
    tr.z1.assign(p + layout_.b1.offset, p + layout_.b1.offset + hd);
    internal::gemv_add(p + layout_.w1.offset, hd, layout_.encoding_dim,
                       tr.encoding.data(), tr.z1.data());
    tr.h1.resize(hd);
    for (std::size_t j = 0; j < hd; ++j) {
      tr.h1[j] = tr.z1[j] > 0.0 ? tr.z1[j] : internal::kLeakySlope * tr.z1[j];
    }
    const std::size_t c = classes_.size();
    tr.logits.assign(p + layout_.b2.offset, p + layout_.b2.offset + c);
    internal::gemv_add(p + layout_.w2.offset, c, hd, tr.h1.data(),
                       tr.logits.data());
  }

  void backward(std::span<const std::size_t> ids,
                const internal::ForwardTrace& tr,
                const std::vector<double>& dlogits, double* g) const {
    const double* p = params_.data();
    const std::size_t hd = config_.hidden_dim;
    const std::size_t c = classes_.size();
    const std::size_t enc = layout_.encoding_dim;
    internal::outer_add(g + layout_.w2.offset, c, hd, dlogits.data(),
                        tr.h1.data());
    for (std::size_t k = 0; k < c; ++k) g[layout_.b2.offset + k] += dlogits[k];
    std::vector<double> dz1(hd, 0.0);
    internal::gemv_t_add(p + layout_.w2.offset, c, hd, dlogits.data(),
                         dz1.data());
    for (std::size_t j = 0; j < hd; ++j) {
      if (tr.z1[j] <= 0.0) dz1[j] *= internal::kLeakySlope;
    }
    internal::outer_add(g + layout_.w1.offset, hd, enc, dz1.data(),
                        tr.encoding.data());
    for (std::size_t j = 0; j < hd; ++j) g[layout_.b1.offset + j] += dz1[j];
    std::vector<double> denc(enc, 0.0);
    internal::gemv_t_add(p + layout_.w1.offset, hd, enc, dz1.data(),
                         denc.data());

    const std::size_t d = config_.embed_dim;
    const std::size_t steps = ids.size();
    if (config_.encoder == EncoderKind::kBagMean) {
      const double inv = 1.0 / static_cast<double>(steps);
      for (std::size_t id : ids) {
        double* row = g + layout_.embedding.offset + id * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += denc[j] * inv;
      }
      return;
    }
    const std::size_t h = config_.hidden_dim;
    std::vector<double> dh_f(steps * h, 0.0), dh_b(steps * h, 0.0);
    std::copy_n(denc.begin(), h, &dh_f[(steps - 1) * h]);
    std::copy_n(denc.begin() + h, h, &dh_b[0]);
    for (std::size_t layer = config_.recurrent_layers; layer-- > 0;) {
      const auto& blk_f = layout_.lstm[2 * layer];
      const auto& blk_b = layout_.lstm[2 * layer + 1];
      std::vector<double> dx(steps * blk_f.in_dim, 0.0);
      internal::lstm_backward(p, blk_f, tr.lstm[2 * layer], false, dh_f, g, dx);
      internal::lstm_backward(p, blk_b, tr.lstm[2 * layer + 1], true, dh_b, g,
                              dx);
      if (layer > 0) {
        for (std::size_t pos = 0; pos < steps; ++pos) {
          std::copy_n(&dx[pos * 2 * h], h, &dh_f[pos * h]);
          std::copy_n(&dx[pos * 2 * h + h], h, &dh_b[pos * h]);
        }
      } else {
        for (std::size_t pos = 0; pos < steps; ++pos) {
          double* row = g + layout_.embedding.offset + ids[pos] * d;
          for (std::size_t j = 0; j < d; ++j) row[j] += dx[pos * d + j];
        }
      }
    }
  }

  ClassifierConfig config_;
  Vocabulary vocabulary_;
  std::vector<std::string> classes_;
  internal::Layout layout_;
  std::vector<double> params_;
  TrainingLog log_;
};

namespace internal {

inline double mean_loss(const AttributeClassifier& clf,
                        std::span<const LabeledSequence> data) {
  double sum = 0.0;
  for (const auto& ex : data) sum += clf.loss(ex.ids, ex.label);
  return sum / static_cast<double>(data.size());
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace internal

// Mini-batch Adam (beta1 0.9, beta2 0.999, epsilon 1e-8) on mean
// cross-entropy for config().epochs epochs. Examples are reshuffled every
// epoch from `shuffle_seed` (derived from the config seed when absent).
// Throws NumericalError with a state summary if the loss or the gradient
// stops being finite.
inline AttributeClassifier train(
    AttributeClassifier clf, std::span<const LabeledSequence> data,
    std::optional<std::uint64_t> shuffle_seed = std::nullopt) {
  if (data.empty()) throw ValidationError("cannot train on an empty set");
  for (const auto& ex : data) {
    if (ex.label >= clf.n_classes()) {
      throw ValidationError("training label outside the classifier's classes");
    }
  }
  const auto& cfg = clf.config();
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEpsilon = 1e-8;
  const std::size_t n_params = clf.params_.size();
  std::vector<double> grad(n_params), m(n_params, 0.0), v(n_params, 0.0);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(shuffle_seed.value_or(
      derive_seed(cfg.seed, 0, SeedPurpose::kShuffle)));

  clf.log_ = TrainingLog{};
  clf.log_.initial_loss = internal::mean_loss(clf, data);
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = data[order[k]];
        batch_loss += clf.accumulate_gradient(ex.ids, ex.label, grad, scale);
      }
      const double grad_norm = internal::l2_norm(grad);
      if (!std::isfinite(batch_loss) || !std::isfinite(grad_norm)) {
        throw NumericalError(
            "non-finite training state: epoch " + std::to_string(epoch) +
            ", batch starting at " + std::to_string(start) + ", batch loss " +
            std::to_string(batch_loss) + ", gradient norm " +
            std::to_string(grad_norm) + ", parameter norm " +
            std::to_string(internal::l2_norm(clf.params_)) + ", step " +
            std::to_string(step));
      }
      epoch_loss += batch_loss;
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      const double lr = cfg.learning_rate;
      for (std::size_t i = 0; i < n_params; ++i) {
        const double gi = grad[i];
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
        clf.params_[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEpsilon);
      }
    }
    clf.log_.epoch_losses.push_back(epoch_loss /
                                    static_cast<double>(data.size()));
  }
  return clf;
}

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Parameters whose analytic and numeric gradients are both below the
  // magnitude floor.
  std::size_t skipped = 0;
};

// Compares the analytic gradient of one example's loss with central finite
// differences on `n_params` parameters drawn without replacement from those
// the example touches. The relative error divides by at least
// `denominator_floor`, which absorbs the roundoff of the finite difference
// on gradients far below the loss scale.
inline GradientCheckResult gradient_check(const AttributeClassifier& clf,
                                          const LabeledSequence& example,
                                          double epsilon = 1e-5,
                                          std::size_t n_params = 100,
                                          std::uint64_t seed = 0,
                                          double floor = 1e-10,
                                          double denominator_floor = 1e-6) {
  std::vector<double> grad(clf.parameters().size(), 0.0);
  clf.accumulate_gradient(example.ids, example.label, grad);
  auto candidates = clf.touched_parameters(example.ids);
  Rng rng(seed);
  rng.shuffle(candidates);
  if (candidates.size() > n_params) candidates.resize(n_params);

  AttributeClassifier probe = clf;
  auto params = probe.mutable_parameters();
  GradientCheckResult result;
  for (std::size_t idx : candidates) {
    const double saved = params[idx];
    params[idx] = saved + epsilon;
    const double up = probe.loss(example.ids, example.label);
    params[idx] = saved - epsilon;
    const double down = probe.loss(example.ids, example.label);
    params[idx] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double analytic = grad[idx];
    const double scale = std::max(std::abs(numeric), std::abs(analytic));
    if (scale < floor) {
      ++result.skipped;
      continue;
    }
    ++result.checked;
    result.max_relative_error =
        std::max(result.max_relative_error,
                 std::abs(numeric - analytic) /
                     std::max(scale, denominator_floor));
  }
  return result;
}

}  // namespace capbias

#endif  // CAPBIAS_CLASSIFIER_HPP_
