// Copyright 2026 The bcsd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Siamese training over the shuffled pair stream.
//
// Each batch is a consecutive slice of the stream. Every distinct function in
// the batch is embedded once on a shared tape by the single parameter set, the
// batch-mean cosine-margin loss is backpropagated, and Adam takes one step.

#ifndef BCSD_TRAINING_HPP
#define BCSD_TRAINING_HPP

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "bcsd/adam.hpp"
#include "bcsd/autograd.hpp"
#include "bcsd/backbones.hpp"
#include "bcsd/corpus.hpp"
#include "bcsd/errors.hpp"
#include "bcsd/kernels.hpp"
#include "bcsd/loss.hpp"
#include "bcsd/tokenizer.hpp"

namespace bcsd {

inline constexpr std::size_t kDefaultBatchSize = 384;
inline constexpr std::size_t kDefaultNegatives = 30;
inline constexpr std::size_t kDefaultCheckpointEvery = 10000;

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = kDefaultBatchSize;
  std::size_t epochs = 1;
  std::optional<std::uint64_t> seed;
  std::size_t negatives = kDefaultNegatives;  // R
  LossConfig loss;
  BackboneConfig backbone;
  std::size_t checkpoint_every = kDefaultCheckpointEvery;
  // Hash the parameters before every batch (costly; for audits and tests).
  bool record_fingerprints = false;

  void validate() const {
    if (!seed) throw Error("a training seed is required");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw Error("learning rate must be positive");
    }
    if (batch_size == 0) throw Error("batch size must be positive");
    if (negatives == 0) throw Error("R (negatives per function) must be positive");
    if (checkpoint_every == 0) throw Error("checkpoint interval must be positive");
    loss.validate();
  }

  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> m;
    std::ostringstream lr;
    lr.precision(17);
    lr << learning_rate;
    m["learning_rate"] = lr.str();
    m["batch_size"] = std::to_string(batch_size);
    m["epochs"] = std::to_string(epochs);
    if (seed) m["seed"] = std::to_string(*seed);
    m["negatives"] = std::to_string(negatives);
    std::ostringstream margin;
    margin.precision(17);
    margin << loss.margin;
    m["margin"] = margin.str();
    m["checkpoint_every"] = std::to_string(checkpoint_every);
    m["backbone"] = to_string(backbone.kind);
    return m;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

inline double parse_real(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ParseError("invalid number for " + what + ": '" + s + "'");
  return v;
}

}  // namespace detail

// Reads `key = value` lines; `#` starts a comment. Unknown keys are errors.
inline std::map<std::string, std::string> read_key_values(std::istream& in,
                                                          const std::string& source) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected key = value");
    }
    kv[detail::trim(t.substr(0, eq))] = detail::trim(t.substr(eq + 1));
  }
  return kv;
}

// Applies recognised keys to `cfg`, leaving absent keys untouched.
inline void apply_train_settings(TrainConfig& cfg,
                                 const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "learning_rate") {
      cfg.learning_rate = detail::parse_real(value, key);
    } else if (key == "batch_size") {
      cfg.batch_size = detail::parse_u64(value, key);
    } else if (key == "epochs") {
      cfg.epochs = detail::parse_u64(value, key);
    } else if (key == "seed") {
      cfg.seed = detail::parse_u64(value, key);
    } else if (key == "negatives") {
      cfg.negatives = detail::parse_u64(value, key);
    } else if (key == "margin") {
      cfg.loss.margin = detail::parse_real(value, key);
    } else if (key == "checkpoint_every") {
      cfg.checkpoint_every = detail::parse_u64(value, key);
    } else if (key == "backbone") {
      cfg.backbone.kind = parse_backbone_kind(value);
    } else if (key == "tokens_per_instruction") {
      cfg.backbone.tokens_per_instruction = detail::parse_u64(value, key);
    } else if (key == "max_positions") {
      cfg.backbone.max_positions = detail::parse_u64(value, key);
    } else if (key == "token_dim") {
      cfg.backbone.token_dim = detail::parse_u64(value, key);
    } else if (key == "embedding_dim") {
      cfg.backbone.embedding_dim = detail::parse_u64(value, key);
    } else if (key == "lstm_hidden") {
      cfg.backbone.lstm_hidden = detail::parse_u64(value, key);
    } else if (key == "mixer_layers") {
      cfg.backbone.mixer_layers = detail::parse_u64(value, key);
    } else if (key == "mixer_token_hidden") {
      cfg.backbone.mixer_token_hidden = detail::parse_u64(value, key);
    } else if (key == "mixer_channel_hidden") {
      cfg.backbone.mixer_channel_hidden = detail::parse_u64(value, key);
    } else if (key == "mixer_sequence_length") {
      cfg.backbone.mixer_sequence_length = detail::parse_u64(value, key);
    } else if (key == "mixer_dropout") {
      cfg.backbone.mixer_dropout = detail::parse_real(value, key);
    } else {
      throw ParseError("unknown training setting '" + key + "'");
    }
  }
}

inline TrainConfig load_train_config(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config '" + path + "'");
  apply_train_settings(base, read_key_values(in, path));
  return base;
}

template <typename T>
struct TrainResult {
  Backbone<T> model;
  std::vector<double> losses;                    // batch-mean loss per batch
  std::vector<std::uint64_t> batch_fingerprints; // parameters entering each batch
  std::vector<std::string> warnings;
  std::size_t batches = 0;
  std::size_t pairs_seen = 0;
};

template <typename T>
struct TrainHooks {
  std::function<void(std::size_t batch, double loss)> on_batch;
  // Called after the last batch of every epoch and every `checkpoint_every`
  // batches; `batch` counts completed batches across epochs.
  std::function<void(const Backbone<T>&, std::size_t epoch, std::size_t batch)> on_checkpoint;
};

// Builds a model sized for `vocab` and initialised from the training seed.
template <typename T>
Backbone<T> initial_model(const Vocabulary& vocab, const TrainConfig& cfg) {
  cfg.validate();
  BackboneConfig bc = cfg.backbone;
  bc.vocab_size = vocab.size();
  Backbone<T> model(bc);
  model.initialize(*cfg.seed);
  return model;
}

template <typename T = float>
TrainResult<T> train(const CorpusIndex& corpus, const Vocabulary& vocab, const TrainConfig& cfg,
                     const TrainHooks<T>& hooks = {}) {
  TrainResult<T> result{initial_model<T>(vocab, cfg)};
  Backbone<T>& model = result.model;
  const BackboneConfig& bc = model.config();

  std::vector<EncodedFunction> encoded;
  encoded.reserve(corpus.size());
  for (const FunctionRecord& r : corpus.records()) {
    encoded.push_back(encode_function(vocab, r, bc.tokens_per_instruction, bc.max_positions));
  }

  AdamOptions adam_options;
  adam_options.learning_rate = cfg.learning_rate;
  AdamState<T> adam(model.params(), adam_options);
  Rng dropout_rng(derive_seed(*cfg.seed, 0xd0d0));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    PairStream stream(corpus, cfg.negatives, derive_seed(*cfg.seed, 0xe0000 + epoch));
    if (epoch == 0) {
      result.warnings.insert(result.warnings.end(), stream.warnings().begin(),
                             stream.warnings().end());
    }
    if (stream.size() == 0) throw DataError("pair stream is empty; nothing to train on");

    for (std::size_t begin = 0; begin < stream.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(stream.size(), begin + cfg.batch_size);
      const std::size_t batch_index = result.batches;
      if (cfg.record_fingerprints) result.batch_fingerprints.push_back(model.fingerprint());

      // Distinct functions in first-appearance order, embedded together.
      std::vector<PairSample> pairs;
      std::unordered_map<std::size_t, std::size_t> slot;
      std::vector<const EncodedFunction*> functions;
      for (std::size_t i = begin; i < end; ++i) {
        pairs.push_back(stream.at(i));
        for (std::size_t idx : {pairs.back().anchor, pairs.back().other}) {
          if (slot.emplace(idx, functions.size()).second) functions.push_back(&encoded[idx]);
        }
      }
      Tape<T> tape;
      std::vector<Var<T>> embedded = model.embed_batch(
          tape, std::span<const EncodedFunction* const>(functions), Mode::kTraining,
          &dropout_rng);
      std::vector<Var<T>> losses;
      losses.reserve(pairs.size());
      for (const PairSample& pair : pairs) {
        losses.push_back(cosine_pair_loss(embedded[slot.at(pair.anchor)],
                                          embedded[slot.at(pair.other)], pair.label,
                                          cfg.loss.margin));
      }
      Var<T> mean = scale(sum(concat(std::span<const Var<T>>(losses), 0)),
                          T(1.0 / static_cast<double>(losses.size())));
      const double loss = static_cast<double>(mean.value()[0]);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss at batch " + std::to_string(batch_index));
      }

      tape.backward(mean);
      model.params().zero_grad();
      tape.accumulate_param_grads();
      adam_update(model.params(), adam);

      result.losses.push_back(loss);
      result.pairs_seen += end - begin;
      ++result.batches;
      if (hooks.on_batch) hooks.on_batch(batch_index, loss);
      const bool epoch_done = end == stream.size();
      if (hooks.on_checkpoint && (epoch_done || result.batches % cfg.checkpoint_every == 0)) {
        hooks.on_checkpoint(model, epoch, result.batches);
      }
    }
  }
  return result;
}

// `batch_index,loss` lines with a header; values printed round-trip exact.
inline void write_loss_csv(std::ostream& out, const std::vector<double>& losses) {
  out << "batch_index,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, losses[i]);
    out << buf;
  }
}

}  // namespace bcsd

#endif  // BCSD_TRAINING_HPP
