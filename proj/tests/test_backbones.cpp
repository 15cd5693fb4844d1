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

#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "bcsd/backbones.hpp"
#include "bcsd/gradcheck.hpp"
#include "bcsd/loss.hpp"
#include "test_util.hpp"

namespace bcsd {

void PrintTo(BackboneKind kind, std::ostream* os) { *os << to_string(kind); }

namespace {

using testing::random_projection;

EncodedFunction random_encoding(Rng& rng, const BackboneConfig& c, std::size_t s) {
  EncodedFunction enc;
  enc.instructions = s;
  enc.tokens_per_instruction = c.tokens_per_instruction;
  for (std::size_t i = 0; i < s * c.tokens_per_instruction; ++i) {
    enc.token_ids.push_back(static_cast<std::int32_t>(uniform_index(rng, c.vocab_size)));
  }
  for (std::size_t i = 0; i < s; ++i) {
    enc.position_ids.push_back(static_cast<std::int32_t>(std::min(i, c.max_positions - 1)));
  }
  return enc;
}

BackboneConfig small_config(Rng& rng, BackboneKind kind) {
  BackboneConfig c;
  c.kind = kind;
  c.vocab_size = 4 + uniform_index(rng, 5);
  c.token_dim = 2 + uniform_index(rng, 2);
  c.tokens_per_instruction = 1 + uniform_index(rng, 3);
  c.max_positions = 3 + uniform_index(rng, 4);
  c.embedding_dim = 2 + uniform_index(rng, 3);
  c.conv_layout.clear();
  const std::size_t convs = 1 + uniform_index(rng, 3);
  for (std::size_t i = 0; i < convs; ++i) {
    c.conv_layout.push_back({1 + uniform_index(rng, 3), 2 + uniform_index(rng, 3)});
  }
  c.lstm_hidden = 2 + uniform_index(rng, 3);
  c.mixer_layers = 1 + uniform_index(rng, 2);
  c.mixer_sequence_length = 3 + uniform_index(rng, 3);
  c.mixer_token_hidden = 2 + uniform_index(rng, 3);
  c.mixer_channel_hidden = 3 + uniform_index(rng, 3);
  c.mixer_dropout = 0.25;
  return c;
}

// Gradients of every parameter of a backbone against central differences in
// double precision, on random small configurations and random inputs
// (including sequences shorter than the widest kernel and longer than the
// mixer window).
class BackboneGradient : public ::testing::TestWithParam<std::tuple<BackboneKind, int>> {};

TEST_P(BackboneGradient, MatchesCentralDifferences) {
  const auto [kind, trial] = GetParam();
  Rng rng(1000 + 17 * trial + static_cast<int>(kind));
  BackboneConfig c = small_config(rng, kind);
  Backbone<double> model(c);
  model.initialize(trial);
  // Spread the weights so activations sit away from the ReLU kink.
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    auto& p = model.params()[i];
    for (double& v : p.value.data()) v += 0.3 * uniform_real(rng, -1.0, 1.0);
  }
  model.enforce_frozen_rows();
  const std::size_t s = 1 + uniform_index(rng, 7);
  EncodedFunction enc = random_encoding(rng, c, s);
  const Mode mode = trial % 2 ? Mode::kTraining : Mode::kInference;
  const std::uint64_t dropout_seed = 77 + trial;

  auto objective = [&](Tape<double>& tape) {
    Rng dropout(dropout_seed);  // same mask on every evaluation
    return random_projection(model.embed(tape, enc, mode, &dropout));
  };
  GradCheckReport report = finite_diff_check<double>(objective, model.params());
  for (const auto& p : report.params) {
    EXPECT_TRUE(p.passed) << to_string(kind) << " trial " << trial << " S=" << s << " "
                          << p.name << " rel " << p.max_rel_error;
  }
  EXPECT_LE(report.max_rel_error(), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(
    SmallConfigs, BackboneGradient,
    ::testing::Combine(::testing::Values(BackboneKind::kTextCnn, BackboneKind::kLstm,
                                         BackboneKind::kMixer),
                       ::testing::Range(0, 6)),
    [](const auto& info) {
      return to_string(std::get<0>(info.param)) + "_" + std::to_string(std::get<1>(info.param));
    });

// Loss gradient through two embeddings sharing one parameter set, for both
// labels, with inputs arranged so the negative pair is above the margin.
TEST(LossGradient, SiamesePairMatchesCentralDifferences) {
  for (int trial = 0; trial < 6; ++trial) {
    Rng rng(500 + trial);
    BackboneConfig c = small_config(rng, BackboneKind::kTextCnn);
    Backbone<double> model(c);
    model.initialize(trial);
    EncodedFunction a = random_encoding(rng, c, 2 + uniform_index(rng, 4));
    EncodedFunction b = random_encoding(rng, c, 2 + uniform_index(rng, 4));
    // A margin below the current cosine keeps the negative branch active.
    const double cos = cosine(model.embed(a), model.embed(b)).value;
    for (int label : {1, -1}) {
      const double margin = label == 1 ? 0.9 : std::max(0.0, cos - 0.2);
      auto objective = [&](Tape<double>& tape) {
        return cosine_pair_loss(model.embed(tape, a), model.embed(tape, b), label, margin);
      };
      GradCheckReport report = finite_diff_check<double>(objective, model.params());
      EXPECT_TRUE(report.passed()) << "trial " << trial << " label " << label << " rel "
                                   << report.max_rel_error();
    }
  }
}

TEST(Config, DefaultsAndWidths) {
  BackboneConfig c;
  EXPECT_EQ(c.token_dim, 192u);
  EXPECT_EQ(c.tokens_per_instruction, 5u);
  EXPECT_EQ(c.instruction_width(), 1152u);
  EXPECT_EQ(c.embedding_dim, 192u);
  ASSERT_EQ(c.conv_layout.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(c.conv_layout[i].width, i < 4 ? 5u : 3u);
    EXPECT_EQ(c.conv_layout[i].out_channels, 192u);
  }
  EXPECT_EQ(BackboneConfig::from_json(c.to_json()), c);
}

// Independent closed form: PAD row excluded, everything else counted.
TEST(ParamCount, TextCnnDefaultsClosedForm) {
  BackboneConfig c;
  c.vocab_size = 40001;  // 40,000 trainable rows plus the frozen PAD row
  const std::size_t h = 192 * 6;
  const std::size_t oracle = 40000 * 192 + 512 * 192 + 4 * (5 * h * 192 + 192) +
                             2 * (3 * h * 192 + 192) + (h * 192 + 192);
  EXPECT_EQ(oracle, 13751616u);
  EXPECT_EQ(expected_param_count(c), oracle);
  Backbone<float> model(c);
  EXPECT_EQ(model.param_count(), oracle);
  EXPECT_LE(std::abs(static_cast<double>(oracle) - 13.44e6) / 13.44e6, 0.05);
}

TEST(ParamCount, MixerAndLstmDefaults) {
  BackboneConfig c;
  c.vocab_size = 40001;
  c.kind = BackboneKind::kMixer;
  const std::size_t mixer = Backbone<float>(c).param_count();
  EXPECT_EQ(mixer, expected_param_count(c));
  EXPECT_LE(std::abs(static_cast<double>(mixer) - 13.04e6) / 13.04e6, 0.10);
  c.kind = BackboneKind::kLstm;
  const std::size_t lstm = Backbone<float>(c).param_count();
  EXPECT_EQ(lstm, expected_param_count(c));
  // 4 gates of [(192 + 1152) x 192] + 192.
  EXPECT_EQ(lstm, 40000u * 192 + 512 * 192 + 4 * ((192 + 1152) * 192 + 192));
}

TEST(ParamCount, EmptyVocabularyAndStability) {
  BackboneConfig c;
  c.vocab_size = 2;  // PAD + UNK
  Backbone<float> a(c), b(c);
  const std::size_t body = expected_param_count(c) - (1 * 192 + 512 * 192);
  c.vocab_size = 40001;
  EXPECT_EQ(expected_param_count(c) - (40000 * 192 + 512 * 192), body);
  EXPECT_EQ(a.param_count(), b.param_count());
}

TEST(Grid, PadRowIsZeroAndPositionsConcatenated) {
  Rng rng(3);
  BackboneConfig c = small_config(rng, BackboneKind::kTextCnn);
  Backbone<double> model(c);
  model.initialize(1);
  EncodedFunction enc;
  enc.instructions = 2;
  enc.tokens_per_instruction = c.tokens_per_instruction;
  enc.token_ids.assign(2 * c.tokens_per_instruction, Vocabulary::kPad);
  for (std::size_t k = 0; k < c.tokens_per_instruction; ++k) enc.token_ids[k] = 2;
  for (std::size_t k = 0; k < c.tokens_per_instruction; ++k) enc.token_ids[c.tokens_per_instruction + k] = 2;
  enc.position_ids = {0, 1};
  Tape<double> tape;
  Var<double> grid = model.lookup_grid(tape, enc);
  const std::size_t d = c.token_dim, h = c.instruction_width();
  ASSERT_EQ(grid.shape(), (Shape{2, h}));
  const auto& pos = model.params().at("embedding.position").value;
  for (std::size_t j = 0; j < d; ++j) {
    EXPECT_EQ(grid.value()(0, d * c.tokens_per_instruction + j), pos(0, j));
    EXPECT_EQ(grid.value()(1, d * c.tokens_per_instruction + j), pos(1, j));
  }
  for (std::size_t j = 0; j < d * c.tokens_per_instruction; ++j) {
    EXPECT_EQ(grid.value()(0, j), grid.value()(1, j));  // same tokens, rows differ in position only
  }
  enc.token_ids.assign(2 * c.tokens_per_instruction, Vocabulary::kPad);
  Tape<double> tape2;
  Var<double> pads = model.lookup_grid(tape2, enc);
  for (std::size_t j = 0; j < d * c.tokens_per_instruction; ++j) EXPECT_EQ(pads.value()(0, j), 0.0);
}

TEST(Grid, OutOfRangeIdAndWrongKAreErrors) {
  Rng rng(4);
  BackboneConfig c = small_config(rng, BackboneKind::kLstm);
  Backbone<double> model(c);
  EncodedFunction enc = random_encoding(rng, c, 2);
  enc.token_ids[0] = static_cast<std::int32_t>(c.vocab_size);
  Tape<double> tape;
  EXPECT_THROW(model.lookup_grid(tape, enc), DataError);
  enc = random_encoding(rng, c, 2);
  enc.tokens_per_instruction += 1;
  EXPECT_THROW(model.lookup_grid(tape, enc), DataError);
}

TEST(TextCnn, OutputShapeForShortAndLongInputs) {
  BackboneConfig c;
  c.vocab_size = 50;
  Backbone<float> model(c);
  model.initialize(3);
  Rng rng(8);
  for (std::size_t s : {1u, 2u, 10u}) {
    std::vector<float> e = model.embed(random_encoding(rng, c, s));
    ASSERT_EQ(e.size(), 192u);
    for (float v : e) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(TextCnn, BatchedEmbeddingMatchesSingle) {
  Rng rng(21);
  BackboneConfig c = small_config(rng, BackboneKind::kTextCnn);
  Backbone<double> model(c);
  model.initialize(5);
  std::vector<EncodedFunction> fns;
  for (std::size_t s : {1u, 3u, 7u, 2u}) fns.push_back(random_encoding(rng, c, s));
  std::vector<const EncodedFunction*> ptrs;
  for (const auto& f : fns) ptrs.push_back(&f);

  // Values.
  Tape<double> tape;
  auto batched = model.embed_batch(tape, std::span<const EncodedFunction* const>(ptrs));
  for (std::size_t i = 0; i < fns.size(); ++i) {
    std::vector<double> single = model.embed(fns[i]);
    for (std::size_t j = 0; j < single.size(); ++j) {
      EXPECT_NEAR(batched[i].value()[j], single[j], 1e-12);
    }
  }
  // Gradients of the same objective through both paths.
  auto grads = [&](bool batch) {
    Backbone<double> m = model;
    m.params().zero_grad();
    Tape<double> t;
    std::vector<Var<double>> embs;
    if (batch) {
      embs = m.embed_batch(t, std::span<const EncodedFunction* const>(ptrs));
    } else {
      for (const auto& f : fns) embs.push_back(m.embed(t, f));
    }
    Var<double> total = random_projection(concat(std::span<const Var<double>>(embs), 0));
    t.backward(total);
    t.accumulate_param_grads();
    std::vector<double> flat;
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      flat.insert(flat.end(), m.params()[i].grad.begin(), m.params()[i].grad.end());
    }
    return flat;
  };
  std::vector<double> g1 = grads(true), g2 = grads(false);
  ASSERT_EQ(g1.size(), g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g1[i], g2[i], 1e-12);
}

TEST(Lstm, ZeroWeightsGiveZeroState) {
  BackboneConfig c;
  c.kind = BackboneKind::kLstm;
  c.vocab_size = 10;
  c.token_dim = 4;
  c.lstm_hidden = 3;
  Backbone<double> model(c);  // allocated zeroed
  Rng rng(2);
  for (double& v : model.params().at("embedding.token").value.data()) v = uniform_real(rng, -1, 1);
  model.enforce_frozen_rows();
  std::vector<double> h = model.embed(random_encoding(rng, c, 6));
  ASSERT_EQ(h.size(), 3u);
  for (double v : h) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, SingleStepHandEvaluation) {
  BackboneConfig c;
  c.kind = BackboneKind::kLstm;
  c.vocab_size = 3;
  c.token_dim = 1;
  c.tokens_per_instruction = 1;
  c.max_positions = 1;
  c.lstm_hidden = 1;
  Backbone<double> model(c);
  auto& p = model.params();
  p.at("embedding.token").value(2, 0) = 1.0;
  p.at("embedding.position").value(0, 0) = 0.5;
  // x = [1, 0.5]; each gate weight column is [w_h, w_x1, w_x2].
  auto set = [&](const char* g, double wx1, double wx2, double b) {
    auto& w = p.at(std::string("lstm.W_") + g).value;
    w(0, 0) = 0.7;  // h_0 = 0, so this weight is inert
    w(1, 0) = wx1;
    w(2, 0) = wx2;
    p.at(std::string("lstm.b_") + g).value[0] = b;
  };
  set("i", 0.2, -0.4, 0.1);
  set("f", 1.0, 1.0, 1.0);
  set("c", 0.5, 0.6, -0.2);
  set("o", -0.3, 0.8, 0.05);
  EncodedFunction enc;
  enc.instructions = 1;
  enc.tokens_per_instruction = 1;
  enc.token_ids = {2};
  enc.position_ids = {0};
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  const double i = sig(0.2 - 0.2 + 0.1);
  const double cand = std::tanh(0.5 + 0.3 - 0.2);
  const double o = sig(-0.3 + 0.4 + 0.05);
  const double expected = o * std::tanh(i * cand);  // C_0 = 0, so f is irrelevant
  EXPECT_NEAR(model.embed(enc)[0], expected, 1e-15);
}

TEST(Mixer, ZeroedMlpsPassInputThroughSkips) {
  Rng rng(6);
  BackboneConfig c = small_config(rng, BackboneKind::kMixer);
  c.mixer_dropout = 0.0;
  Backbone<double> model(c);
  model.initialize(2);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    auto& p = model.params()[i];
    if (p.name.find(".token.") != std::string::npos || p.name.find(".channel.") != std::string::npos) {
      p.value.fill(0.0);
    }
  }
  EncodedFunction enc = random_encoding(rng, c, c.mixer_sequence_length);
  Tape<double> tape;
  Var<double> grid = model.lookup_grid(tape, enc);
  // Expected: FC(mean over rows of layer-norm(grid)).
  const std::size_t s = grid.dim(0), h = grid.dim(1);
  const auto& gamma = model.params().at("mixer.norm.gamma").value;
  const auto& beta = model.params().at("mixer.norm.beta").value;
  std::vector<double> pooled(h, 0.0);
  for (std::size_t r = 0; r < s; ++r) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < h; ++j) mean += grid.value()(r, j) / h;
    for (std::size_t j = 0; j < h; ++j) var += std::pow(grid.value()(r, j) - mean, 2) / h;
    for (std::size_t j = 0; j < h; ++j) {
      pooled[j] += ((grid.value()(r, j) - mean) / std::sqrt(var + 1e-5) * gamma[j] + beta[j]) / s;
    }
  }
  const auto& w = model.params().at("mixer.fc.weight").value;
  const auto& b = model.params().at("mixer.fc.bias").value;
  std::vector<double> out = model.embed(enc);
  for (std::size_t e = 0; e < c.embedding_dim; ++e) {
    double expected = b[e];
    for (std::size_t j = 0; j < h; ++j) expected += pooled[j] * w(j, e);
    EXPECT_NEAR(out[e], expected, 1e-12);
  }
}

TEST(Mixer, InstructionsBeyondWindowAreIgnored) {
  Rng rng(9);
  BackboneConfig c = small_config(rng, BackboneKind::kMixer);
  c.max_positions = 32;
  Backbone<double> model(c);
  model.initialize(4);
  EncodedFunction enc = random_encoding(rng, c, c.mixer_sequence_length + 4);
  std::vector<double> base = model.embed(enc);
  // Reverse the tail beyond the window, position ids included.
  const std::size_t k = c.tokens_per_instruction;
  const std::size_t first = c.mixer_sequence_length;
  for (std::size_t a = first, b = enc.instructions - 1; a < b; ++a, --b) {
    for (std::size_t j = 0; j < k; ++j) std::swap(enc.token_ids[a * k + j], enc.token_ids[b * k + j]);
    std::swap(enc.position_ids[a], enc.position_ids[b]);
  }
  EXPECT_EQ(model.embed(enc), base);
}

TEST(Mixer, InferenceIsDeterministicAndTrainingNeedsRng) {
  Rng rng(10);
  BackboneConfig c = small_config(rng, BackboneKind::kMixer);
  Backbone<double> model(c);
  model.initialize(4);
  EncodedFunction enc = random_encoding(rng, c, 4);
  EXPECT_EQ(model.embed(enc), model.embed(enc));
  Tape<double> tape;
  EXPECT_THROW(model.embed(tape, enc, Mode::kTraining, nullptr), Error);
}

// Functions far beyond any 512-token limit embed without truncation.
TEST(LongInput, TwoThousandInstructionsEmbedFinite) {
  BackboneConfig c;
  c.vocab_size = 100;
  Rng rng(11);
  for (BackboneKind kind : {BackboneKind::kTextCnn, BackboneKind::kLstm}) {
    c.kind = kind;
    Backbone<float> model(c);
    model.initialize(1);
    EncodedFunction enc = random_encoding(rng, c, 2048);
    std::vector<float> e = model.embed(enc);
    ASSERT_EQ(e.size(), c.output_dim());
    for (float v : e) ASSERT_TRUE(std::isfinite(v)) << to_string(kind);
  }
}

TEST(Initialization, DeterministicAndPadRowZero) {
  BackboneConfig c;
  c.vocab_size = 30;
  Backbone<float> a(c), b(c);
  a.initialize(9);
  b.initialize(9);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  b.initialize(10);
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  const auto& tok = a.params().at("embedding.token").value;
  for (std::size_t j = 0; j < c.token_dim; ++j) EXPECT_EQ(tok(0, j), 0.0f);
  const auto& bias = a.params().at("textcnn.fc.bias").value;
  for (float v : bias.data()) EXPECT_EQ(v, 0.0f);
  const auto& w = a.params().at("textcnn.fc.weight").value;
  const float bound = 1.0f / std::sqrt(1152.0f);
  for (float v : w.data()) EXPECT_LE(std::abs(v), bound);
}

}  // namespace
}  // namespace bcsd
