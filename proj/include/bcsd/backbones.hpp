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

// Function embedding networks.
//
// Every backbone starts from the instruction grid: for each instruction the K
// token embeddings and one position embedding are concatenated, giving an
// S x d(K+1) matrix. The grid is then reduced to a fixed-width vector by one
// of three networks:
//
//   TextCNN  parallel valid convolutions over time, ReLU, global max-pool,
//            concatenation and a fully-connected projection;
//   LSTM     a single-layer recurrence whose last hidden state is the output;
//   Mixer    token-mixing / channel-mixing MLP blocks on a grid resized to a
//            fixed number of instructions, then layer-norm, mean-pool and a
//            fully-connected projection.

#ifndef BCSD_BACKBONES_HPP
#define BCSD_BACKBONES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bcsd/autograd.hpp"
#include "bcsd/errors.hpp"
#include "bcsd/kernels.hpp"
#include "bcsd/random.hpp"
#include "bcsd/tokenizer.hpp"

namespace bcsd {

enum class BackboneKind { kTextCnn, kLstm, kMixer };

inline std::string to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::kTextCnn: return "textcnn";
    case BackboneKind::kLstm: return "lstm";
    case BackboneKind::kMixer: return "mixer";
  }
  return "?";
}

inline BackboneKind parse_backbone_kind(const std::string& name) {
  if (name == "textcnn") return BackboneKind::kTextCnn;
  if (name == "lstm") return BackboneKind::kLstm;
  if (name == "mixer") return BackboneKind::kMixer;
  throw Error("unknown backbone '" + name + "' (expected textcnn, lstm or mixer)");
}

struct ConvSpec {
  std::size_t width = 5;
  std::size_t out_channels = 192;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

inline std::vector<ConvSpec> default_conv_layout() {
  return {{5, 192}, {5, 192}, {5, 192}, {5, 192}, {3, 192}, {3, 192}};
}

struct BackboneConfig {
  BackboneKind kind = BackboneKind::kTextCnn;
  std::size_t vocab_size = 2;  // including PAD and UNK
  std::size_t token_dim = 192;
  std::size_t tokens_per_instruction = kDefaultTokensPerInstruction;
  std::size_t max_positions = kDefaultMaxPositions;
  std::size_t embedding_dim = 192;

  std::vector<ConvSpec> conv_layout = default_conv_layout();

  std::size_t lstm_hidden = 192;

  std::size_t mixer_layers = 2;
  std::size_t mixer_token_hidden = 256;
  std::size_t mixer_channel_hidden = 1152;
  std::size_t mixer_sequence_length = 256;
  double mixer_dropout = 0.1;

  // d * (K + 1)
  std::size_t instruction_width() const {
    return token_dim * (tokens_per_instruction + 1);
  }

  // The LSTM emits its last hidden state, so its width is the hidden size.
  std::size_t output_dim() const {
    return kind == BackboneKind::kLstm ? lstm_hidden : embedding_dim;
  }

  std::size_t max_kernel_width() const {
    std::size_t w = 1;
    for (const auto& c : conv_layout) w = std::max(w, c.width);
    return w;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* what) {
      if (v == 0) throw Error(std::string(what) + " must be positive");
    };
    if (vocab_size < 2) throw Error("vocab_size must include PAD and UNK");
    positive(token_dim, "token_dim");
    positive(tokens_per_instruction, "tokens_per_instruction");
    positive(max_positions, "max_positions");
    positive(embedding_dim, "embedding_dim");
    if (kind == BackboneKind::kTextCnn) {
      if (conv_layout.empty()) throw Error("conv_layout must not be empty");
      for (const auto& c : conv_layout) {
        positive(c.width, "conv width");
        positive(c.out_channels, "conv out_channels");
      }
    }
    if (kind == BackboneKind::kLstm) positive(lstm_hidden, "lstm_hidden");
    if (kind == BackboneKind::kMixer) {
      positive(mixer_layers, "mixer_layers");
      positive(mixer_token_hidden, "mixer_token_hidden");
      positive(mixer_channel_hidden, "mixer_channel_hidden");
      positive(mixer_sequence_length, "mixer_sequence_length");
      if (mixer_dropout < 0.0 || mixer_dropout >= 1.0) {
        throw Error("mixer_dropout must be in [0, 1)");
      }
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json conv = nlohmann::json::array();
    for (const auto& c : conv_layout) {
      conv.push_back({{"out_channels", c.out_channels}, {"width", c.width}});
    }
    return {{"kind", to_string(kind)},
            {"vocab_size", vocab_size},
            {"token_dim", token_dim},
            {"tokens_per_instruction", tokens_per_instruction},
            {"max_positions", max_positions},
            {"embedding_dim", embedding_dim},
            {"conv_layout", conv},
            {"lstm_hidden", lstm_hidden},
            {"mixer_layers", mixer_layers},
            {"mixer_token_hidden", mixer_token_hidden},
            {"mixer_channel_hidden", mixer_channel_hidden},
            {"mixer_sequence_length", mixer_sequence_length},
            {"mixer_dropout", mixer_dropout}};
  }

  static BackboneConfig from_json(const nlohmann::json& j) {
    BackboneConfig c;
    try {
      c.kind = parse_backbone_kind(j.at("kind").get<std::string>());
      c.vocab_size = j.at("vocab_size").get<std::size_t>();
      c.token_dim = j.at("token_dim").get<std::size_t>();
      c.tokens_per_instruction = j.at("tokens_per_instruction").get<std::size_t>();
      c.max_positions = j.at("max_positions").get<std::size_t>();
      c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
      c.conv_layout.clear();
      for (const auto& conv : j.at("conv_layout")) {
        c.conv_layout.push_back(
            {conv.at("width").get<std::size_t>(), conv.at("out_channels").get<std::size_t>()});
      }
      c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
      c.mixer_layers = j.at("mixer_layers").get<std::size_t>();
      c.mixer_token_hidden = j.at("mixer_token_hidden").get<std::size_t>();
      c.mixer_channel_hidden = j.at("mixer_channel_hidden").get<std::size_t>();
      c.mixer_sequence_length = j.at("mixer_sequence_length").get<std::size_t>();
      c.mixer_dropout = j.at("mixer_dropout").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad backbone config: ") + e.what());
    }
    c.validate();
    return c;
  }

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

// Scalar count of trainable values for a configuration, from the shapes
// alone (the PAD row is not trainable).
inline std::size_t expected_param_count(const BackboneConfig& c) {
  const std::size_t h = c.instruction_width();
  std::size_t n = (c.vocab_size - 1) * c.token_dim + c.max_positions * c.token_dim;
  switch (c.kind) {
    case BackboneKind::kTextCnn: {
      std::size_t pooled = 0;
      for (const auto& conv : c.conv_layout) {
        n += conv.out_channels * h * conv.width + conv.out_channels;
        pooled += conv.out_channels;
      }
      n += pooled * c.embedding_dim + c.embedding_dim;
      break;
    }
    case BackboneKind::kLstm:
      n += 4 * ((c.lstm_hidden + h) * c.lstm_hidden + c.lstm_hidden);
      break;
    case BackboneKind::kMixer: {
      const std::size_t s = c.mixer_sequence_length;
      const std::size_t per_layer =
          2 * h + (s * c.mixer_token_hidden + c.mixer_token_hidden) +
          (c.mixer_token_hidden * s + s) + 2 * h +
          (h * c.mixer_channel_hidden + c.mixer_channel_hidden) +
          (c.mixer_channel_hidden * h + h);
      n += c.mixer_layers * per_layer + 2 * h + h * c.embedding_dim + c.embedding_dim;
      break;
    }
  }
  return n;
}

enum class Mode { kInference, kTraining };

template <typename T>
class Backbone {
 public:
  // Parameters are allocated zeroed; call initialize() for a trainable start.
  explicit Backbone(BackboneConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t d = config_.token_dim;
    const std::size_t h = config_.instruction_width();
    auto& tok = params_.add("embedding.token", Tensor<T>(Shape{config_.vocab_size, d}));
    tok.frozen_row = static_cast<std::size_t>(Vocabulary::kPad);
    params_.add("embedding.position", Tensor<T>(Shape{config_.max_positions, d}));

    switch (config_.kind) {
      case BackboneKind::kTextCnn: {
        std::size_t pooled = 0;
        for (std::size_t i = 0; i < config_.conv_layout.size(); ++i) {
          const ConvSpec& c = config_.conv_layout[i];
          const std::string prefix = "textcnn.conv" + std::to_string(i);
          params_.add(prefix + ".weight", Tensor<T>(Shape{c.out_channels, h, c.width}));
          params_.add(prefix + ".bias", Tensor<T>(Shape{c.out_channels}));
          pooled += c.out_channels;
        }
        params_.add("textcnn.fc.weight", Tensor<T>(Shape{pooled, config_.embedding_dim}));
        params_.add("textcnn.fc.bias", Tensor<T>(Shape{config_.embedding_dim}));
        break;
      }
      case BackboneKind::kLstm: {
        const std::size_t hid = config_.lstm_hidden;
        for (const char* gate : {"i", "f", "c", "o"}) {
          params_.add(std::string("lstm.W_") + gate, Tensor<T>(Shape{hid + h, hid}));
          params_.add(std::string("lstm.b_") + gate, Tensor<T>(Shape{hid}));
        }
        break;
      }
      case BackboneKind::kMixer: {
        const std::size_t s = config_.mixer_sequence_length;
        const std::size_t th = config_.mixer_token_hidden;
        const std::size_t ch = config_.mixer_channel_hidden;
        for (std::size_t l = 0; l < config_.mixer_layers; ++l) {
          const std::string p = "mixer." + std::to_string(l);
          params_.add(p + ".norm1.gamma", Tensor<T>(Shape{h}));
          params_.add(p + ".norm1.beta", Tensor<T>(Shape{h}));
          params_.add(p + ".token.fc1.weight", Tensor<T>(Shape{s, th}));
          params_.add(p + ".token.fc1.bias", Tensor<T>(Shape{th}));
          params_.add(p + ".token.fc2.weight", Tensor<T>(Shape{th, s}));
          params_.add(p + ".token.fc2.bias", Tensor<T>(Shape{s}));
          params_.add(p + ".norm2.gamma", Tensor<T>(Shape{h}));
          params_.add(p + ".norm2.beta", Tensor<T>(Shape{h}));
          params_.add(p + ".channel.fc1.weight", Tensor<T>(Shape{h, ch}));
          params_.add(p + ".channel.fc1.bias", Tensor<T>(Shape{ch}));
          params_.add(p + ".channel.fc2.weight", Tensor<T>(Shape{ch, h}));
          params_.add(p + ".channel.fc2.bias", Tensor<T>(Shape{h}));
        }
        params_.add("mixer.norm.gamma", Tensor<T>(Shape{h}));
        params_.add("mixer.norm.beta", Tensor<T>(Shape{h}));
        params_.add("mixer.fc.weight", Tensor<T>(Shape{h, config_.embedding_dim}));
        params_.add("mixer.fc.bias", Tensor<T>(Shape{config_.embedding_dim}));
        break;
      }
    }
  }

  // Embedding tables ~ N(0, 0.02); weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in));
  // biases zero; layer-norm gains one. The PAD row stays zero.
  void initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x1417));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter<T>& p = params_[i];
      const std::string& name = p.name;
      auto values = p.value.data();
      auto ends_with = [&name](std::string_view suffix) {
        return name.size() >= suffix.size() &&
               name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
      };
      if (name.rfind("embedding.", 0) == 0) {
        for (T& v : values) v = T(0.02 * standard_normal(rng));
      } else if (ends_with(".gamma")) {
        std::fill(values.begin(), values.end(), T{1});
      } else if (ends_with(".beta") || ends_with(".bias") || name.rfind("lstm.b_", 0) == 0) {
        std::fill(values.begin(), values.end(), T{0});
      } else {
        // Conv kernels [out x in x width]: fan-in = in * width.
        // Dense weights [in x out]: fan-in = in.
        const Shape& s = p.value.shape();
        const std::size_t fan_in = s.size() == 3 ? s[1] * s[2] : s[0];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (T& v : values) v = T(uniform_real(rng, -bound, bound));
      }
      if (p.frozen_row) zero_frozen_row(p);
    }
  }

  const BackboneConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  std::size_t param_count() const { return params_.trainable_count(); }
  std::uint64_t fingerprint() const { return params_.fingerprint(); }

  // S x d(K+1) instruction grid.
  Var<T> lookup_grid(Tape<T>& tape, const EncodedFunction& enc) const {
    if (enc.instructions == 0) throw DataError("encoded function has no instructions");
    if (enc.tokens_per_instruction != config_.tokens_per_instruction) {
      throw DataError("function encoded with K=" + std::to_string(enc.tokens_per_instruction) +
                      " but the model expects K=" +
                      std::to_string(config_.tokens_per_instruction));
    }
    const std::size_t s = enc.instructions;
    const std::size_t d = config_.token_dim;
    Var<T> tokens = embedding_lookup(param(tape, "embedding.token"),
                                     std::span<const std::int32_t>(enc.token_ids),
                                     std::optional<std::int32_t>(Vocabulary::kPad));
    tokens = reshape(tokens, Shape{s, config_.tokens_per_instruction * d});
    Var<T> positions = embedding_lookup(param(tape, "embedding.position"),
                                        std::span<const std::int32_t>(enc.position_ids));
    return concat<T>({tokens, positions}, 1);
  }

  Var<T> embed(Tape<T>& tape, const EncodedFunction& enc, Mode mode = Mode::kInference,
               Rng* rng = nullptr) const {
    Var<T> grid = lookup_grid(tape, enc);
    switch (config_.kind) {
      case BackboneKind::kTextCnn: return textcnn_embed(tape, grid);
      case BackboneKind::kLstm: return lstm_embed(tape, grid);
      case BackboneKind::kMixer: return mixer_embed(tape, grid, mode, rng);
    }
    throw Error("unreachable");
  }

  // Embeds several functions on one tape. The TextCNN path stacks them along
  // time so each convolution runs as one GEMM; results equal embed() per
  // function. Other backbones embed one function at a time.
  std::vector<Var<T>> embed_batch(Tape<T>& tape, std::span<const EncodedFunction* const> fns,
                                  Mode mode = Mode::kInference, Rng* rng = nullptr) const {
    std::vector<Var<T>> out;
    if (config_.kind != BackboneKind::kTextCnn) {
      for (const EncodedFunction* f : fns) out.push_back(embed(tape, *f, mode, rng));
      return out;
    }
    if (fns.empty()) return out;
    std::vector<Var<T>> grids;
    std::vector<std::size_t> lengths;
    for (const EncodedFunction* f : fns) {
      Var<T> g = lookup_grid(tape, *f);
      if (g.dim(0) < config_.max_kernel_width()) g = resize_rows(g, config_.max_kernel_width());
      lengths.push_back(g.dim(0));
      grids.push_back(g);
    }
    Var<T> stacked = grids.size() == 1 ? grids[0] : concat(std::span<const Var<T>>(grids), 0);
    std::vector<Var<T>> pooled;
    std::vector<std::size_t> out_lengths(lengths.size());
    for (std::size_t i = 0; i < config_.conv_layout.size(); ++i) {
      const std::string prefix = "textcnn.conv" + std::to_string(i);
      const std::size_t w = config_.conv_layout[i].width;
      for (std::size_t s = 0; s < lengths.size(); ++s) out_lengths[s] = lengths[s] - w + 1;
      Var<T> c = conv1d_segments(stacked, std::span<const std::size_t>(lengths),
                                 param(tape, prefix + ".weight"), param(tape, prefix + ".bias"));
      pooled.push_back(max_pool_segments(relu(c), std::span<const std::size_t>(out_lengths)));
    }
    Var<T> features = concat(std::span<const Var<T>>(pooled), 1);
    Var<T> e = affine(features, param(tape, "textcnn.fc.weight"), param(tape, "textcnn.fc.bias"));
    for (std::size_t b = 0; b < fns.size(); ++b) {
      out.push_back(reshape(slice_rows(e, b, 1), Shape{config_.embedding_dim}));
    }
    return out;
  }

  // Inference-mode embedding as a plain vector.
  std::vector<T> embed(const EncodedFunction& enc) const {
    Tape<T> tape;
    Var<T> out = embed(tape, enc);
    return out.value().to_vector();
  }

  Var<T> textcnn_embed(Tape<T>& tape, Var<T> grid) const {
    // Valid convolution needs at least the widest kernel along time.
    grid = resize_rows(grid, std::max(grid.dim(0), config_.max_kernel_width()));
    Var<T> channels_first = transpose(grid);
    std::vector<Var<T>> pooled;
    for (std::size_t i = 0; i < config_.conv_layout.size(); ++i) {
      const std::string prefix = "textcnn.conv" + std::to_string(i);
      Var<T> c = conv1d(channels_first, param(tape, prefix + ".weight"),
                        param(tape, prefix + ".bias"));
      pooled.push_back(max_pool_time(relu(c)));
    }
    Var<T> features = concat(std::span<const Var<T>>(pooled), 0);
    return affine(features, param(tape, "textcnn.fc.weight"), param(tape, "textcnn.fc.bias"));
  }

  Var<T> lstm_embed(Tape<T>& tape, Var<T> grid) const {
    const std::size_t hid = config_.lstm_hidden;
    Var<T> h = tape.constant(Tensor<T>(Shape{1, hid}));
    Var<T> c = tape.constant(Tensor<T>(Shape{1, hid}));
    Var<T> w_i = param(tape, "lstm.W_i"), b_i = param(tape, "lstm.b_i");
    Var<T> w_f = param(tape, "lstm.W_f"), b_f = param(tape, "lstm.b_f");
    Var<T> w_c = param(tape, "lstm.W_c"), b_c = param(tape, "lstm.b_c");
    Var<T> w_o = param(tape, "lstm.W_o"), b_o = param(tape, "lstm.b_o");
    for (std::size_t t = 0; t < grid.dim(0); ++t) {
      Var<T> hx = concat<T>({h, slice_rows(grid, t, 1)}, 1);  // [h_{t-1}, x_t]
      Var<T> input_gate = sigmoid(affine(hx, w_i, b_i));
      Var<T> forget_gate = sigmoid(affine(hx, w_f, b_f));
      Var<T> candidate = tanh(affine(hx, w_c, b_c));
      Var<T> output_gate = sigmoid(affine(hx, w_o, b_o));
      c = add(mul(forget_gate, c), mul(input_gate, candidate));
      h = mul(output_gate, tanh(c));
    }
    return reshape(h, Shape{hid});
  }

  Var<T> mixer_embed(Tape<T>& tape, Var<T> grid, Mode mode, Rng* rng) const {
    const bool training = mode == Mode::kTraining && config_.mixer_dropout > 0.0;
    if (training && rng == nullptr) throw Error("training-mode mixer needs an RNG");
    Rng unused(0);
    Rng& r = rng ? *rng : unused;
    const double p = config_.mixer_dropout;

    Var<T> x = resize_rows(grid, config_.mixer_sequence_length);
    for (std::size_t l = 0; l < config_.mixer_layers; ++l) {
      const std::string pre = "mixer." + std::to_string(l);
      // Token mixing: MLP across the instruction axis.
      Var<T> y = layer_norm(x, param(tape, pre + ".norm1.gamma"), param(tape, pre + ".norm1.beta"));
      y = transpose(y);
      y = affine(y, param(tape, pre + ".token.fc1.weight"), param(tape, pre + ".token.fc1.bias"));
      y = dropout(gelu(y), p, r, training);
      y = affine(y, param(tape, pre + ".token.fc2.weight"), param(tape, pre + ".token.fc2.bias"));
      y = dropout(y, p, r, training);
      x = add(x, transpose(y));
      // Channel mixing: MLP across the feature axis.
      y = layer_norm(x, param(tape, pre + ".norm2.gamma"), param(tape, pre + ".norm2.beta"));
      y = affine(y, param(tape, pre + ".channel.fc1.weight"),
                 param(tape, pre + ".channel.fc1.bias"));
      y = dropout(gelu(y), p, r, training);
      y = affine(y, param(tape, pre + ".channel.fc2.weight"),
                 param(tape, pre + ".channel.fc2.bias"));
      y = dropout(y, p, r, training);
      x = add(x, y);
    }
    x = layer_norm(x, param(tape, "mixer.norm.gamma"), param(tape, "mixer.norm.beta"));
    return affine(mean_rows(x), param(tape, "mixer.fc.weight"), param(tape, "mixer.fc.bias"));
  }

  // Re-pins the PAD row to zero (after loading or external edits).
  void enforce_frozen_rows() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].frozen_row) zero_frozen_row(params_[i]);
    }
  }

 private:
  Var<T> param(Tape<T>& tape, const std::string& name) const {
    // The tape only reads parameter values; gradients are collected on the
    // tape and written back through accumulate_param_grads().
    return tape.param(const_cast<Parameter<T>&>(params_.at(name)));
  }

  static void zero_frozen_row(Parameter<T>& p) {
    const std::size_t row = p.value.size() / p.value.dim(0);
    auto v = p.value.data();
    std::fill_n(v.begin() + *p.frozen_row * row, row, T{0});
  }

  BackboneConfig config_;
  ParameterSet<T> params_;
};

}  // namespace bcsd

#endif  // BCSD_BACKBONES_HPP
