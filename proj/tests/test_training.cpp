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
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "bcsd/checkpoint.hpp"
#include "bcsd/manifest.hpp"
#include "bcsd/synthetic.hpp"
#include "bcsd/training.hpp"
#include "test_util.hpp"

namespace bcsd {
namespace {

using testing::temp_path;

struct Fixture {
  CorpusIndex corpus;
  Vocabulary vocab;
  TrainConfig cfg;

  explicit Fixture(std::size_t families = 12, BackboneKind kind = BackboneKind::kTextCnn) {
    SyntheticOptions o;
    o.families = families;
    o.seed = 21;
    corpus = CorpusIndex(generate_synthetic_corpus(o));
    vocab = build_vocab(corpus, 2);
    cfg.seed = 5;
    cfg.batch_size = 16;
    cfg.negatives = 3;
    cfg.backbone.kind = kind;
    cfg.backbone.token_dim = 6;
    cfg.backbone.embedding_dim = 8;
    cfg.backbone.conv_layout = {{3, 8}, {2, 8}};
    cfg.backbone.lstm_hidden = 8;
    cfg.backbone.mixer_layers = 1;
    cfg.backbone.mixer_sequence_length = 8;
    cfg.backbone.mixer_token_hidden = 4;
    cfg.backbone.mixer_channel_hidden = 8;
  }
};

std::vector<float> flatten(const Backbone<float>& m) {
  std::vector<float> out;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto& v = m.params()[i].value.storage();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

TEST(Train, ZeroEpochsKeepsSeededInitialization) {
  Fixture f;
  f.cfg.epochs = 0;
  TrainResult<float> r = train(f.corpus, f.vocab, f.cfg);
  EXPECT_TRUE(r.losses.empty());
  EXPECT_EQ(r.batches, 0u);
  EXPECT_EQ(flatten(r.model), flatten(initial_model<float>(f.vocab, f.cfg)));
  EXPECT_EQ(r.model.config().vocab_size, f.vocab.size());
}

TEST(Train, BatchCountsFollowStreamSize) {
  Fixture f;
  f.cfg.epochs = 2;
  TrainResult<float> r = train(f.corpus, f.vocab, f.cfg);
  const std::size_t stream = PairStream(f.corpus, f.cfg.negatives, 1).size();
  EXPECT_EQ(r.pairs_seen, 2 * stream);
  EXPECT_EQ(r.batches, 2 * ((stream + 15) / 16));
  EXPECT_EQ(r.losses.size(), r.batches);
}

TEST(Train, SameSeedIsBitwiseIdentical) {
  for (BackboneKind kind : {BackboneKind::kTextCnn, BackboneKind::kLstm, BackboneKind::kMixer}) {
    Fixture f(8, kind);
    f.cfg.record_fingerprints = true;
    TrainResult<float> a = train(f.corpus, f.vocab, f.cfg);
    TrainResult<float> b = train(f.corpus, f.vocab, f.cfg);
    EXPECT_EQ(a.losses, b.losses) << to_string(kind);
    EXPECT_EQ(a.batch_fingerprints, b.batch_fingerprints) << to_string(kind);
    EXPECT_EQ(flatten(a.model), flatten(b.model)) << to_string(kind);
    f.cfg.seed = 6;
    TrainResult<float> c = train(f.corpus, f.vocab, f.cfg);
    EXPECT_NE(a.losses, c.losses) << to_string(kind);
  }
}

TEST(Train, FingerprintsTrackEveryUpdate) {
  Fixture f;
  f.cfg.record_fingerprints = true;
  TrainResult<float> r = train(f.corpus, f.vocab, f.cfg);
  ASSERT_EQ(r.batch_fingerprints.size(), r.batches);
  EXPECT_EQ(r.batch_fingerprints[0], initial_model<float>(f.vocab, f.cfg).fingerprint());
  for (std::size_t i = 1; i < r.batch_fingerprints.size(); ++i) {
    EXPECT_NE(r.batch_fingerprints[i], r.batch_fingerprints[i - 1]);
  }
  EXPECT_NE(r.model.fingerprint(), r.batch_fingerprints.back());
}

TEST(Train, PadRowStaysZero) {
  Fixture f;
  TrainResult<float> r = train(f.corpus, f.vocab, f.cfg);
  const auto& tok = r.model.params().at("embedding.token").value;
  for (std::size_t j = 0; j < tok.dim(1); ++j) EXPECT_EQ(tok(0, j), 0.0f);
}

TEST(Train, LossDecreasesOnSmallCorpus) {
  Fixture f(16);
  f.cfg.epochs = 6;
  f.cfg.learning_rate = 0.003;
  TrainResult<float> r = train(f.corpus, f.vocab, f.cfg);
  const std::size_t q = r.losses.size() / 5;
  ASSERT_GT(q, 0u);
  const double head = std::accumulate(r.losses.begin(), r.losses.begin() + q, 0.0) / q;
  const double tail = std::accumulate(r.losses.end() - q, r.losses.end(), 0.0) / q;
  EXPECT_LT(tail, head);
  for (double l : r.losses) EXPECT_TRUE(std::isfinite(l));
}

TEST(Train, NonFiniteLossAborts) {
  Fixture f;
  f.cfg.learning_rate = 1e38;
  f.cfg.epochs = 3;
  try {
    train(f.corpus, f.vocab, f.cfg);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss at batch"), std::string::npos);
  }
}

TEST(Train, CheckpointHookCadence) {
  Fixture f;
  f.cfg.epochs = 2;
  f.cfg.checkpoint_every = 4;
  std::vector<std::pair<std::size_t, std::size_t>> calls;
  std::size_t batches_seen = 0;
  TrainHooks<float> hooks;
  hooks.on_batch = [&](std::size_t b, double) { EXPECT_EQ(b, batches_seen++); };
  hooks.on_checkpoint = [&](const Backbone<float>&, std::size_t epoch, std::size_t batch) {
    calls.emplace_back(epoch, batch);
  };
  TrainResult<float> r = train(f.corpus, f.vocab, f.cfg, hooks);
  const std::size_t per_epoch = r.batches / 2;
  std::vector<std::pair<std::size_t, std::size_t>> expected;
  for (std::size_t b = 1; b <= r.batches; ++b) {
    if (b % 4 == 0 || b % per_epoch == 0) expected.emplace_back((b - 1) / per_epoch, b);
  }
  EXPECT_EQ(calls, expected);
}

TEST(Train, RejectsMissingSeedAndEmptyStream) {
  Fixture f;
  f.cfg.seed.reset();
  EXPECT_THROW(train(f.corpus, f.vocab, f.cfg), Error);
  CorpusIndex lone({testing::make_record("a", OptLevel::O0, {"retn"})});
  Fixture g;
  EXPECT_THROW(train(lone, g.vocab, g.cfg), DataError);
}

TEST(LossCsv, RoundTripExactValues) {
  std::ostringstream out;
  const std::vector<double> losses = {0.1, 1.0 / 3.0, 2.5e-9};
  write_loss_csv(out, losses);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "batch_index,loss");
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::getline(in, line);
    const auto comma = line.find(',');
    EXPECT_EQ(line.substr(0, comma), std::to_string(i));
    EXPECT_EQ(std::stod(line.substr(comma + 1)), losses[i]);
  }
}

TEST(Config, KeyValueFileOverridesDefaults) {
  std::istringstream in(
      "# training\n"
      "learning_rate = 0.0005\n"
      "batch_size=64   # inline comment\n"
      "\n"
      "seed = 9\n"
      "backbone = lstm\n"
      "margin = 0.8\n");
  TrainConfig cfg;
  apply_train_settings(cfg, read_key_values(in, "cfg.ini"));
  EXPECT_EQ(cfg.learning_rate, 0.0005);
  EXPECT_EQ(cfg.batch_size, 64u);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.backbone.kind, BackboneKind::kLstm);
  EXPECT_EQ(cfg.loss.margin, 0.8);
  EXPECT_EQ(cfg.negatives, kDefaultNegatives);
}

TEST(Config, MalformedInputsAreErrors) {
  TrainConfig cfg;
  std::istringstream no_eq("seed 3\n");
  EXPECT_THROW(read_key_values(no_eq, "c"), ParseError);
  EXPECT_THROW(apply_train_settings(cfg, {{"sed", "3"}}), ParseError);
  EXPECT_THROW(apply_train_settings(cfg, {{"learning_rate", "fast"}}), ParseError);
  EXPECT_THROW(apply_train_settings(cfg, {{"batch_size", "-1"}}), Error);
  EXPECT_THROW(load_train_config("/nonexistent/train.cfg"), DataError);
  cfg.seed = 1;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

// ---------------------------------------------------------------- checkpoint

TEST(Checkpoint, RoundTripIsExact) {
  Fixture f;
  TrainResult<float> r = train(f.corpus, f.vocab, f.cfg);
  const nlohmann::json meta = {{"epochs", 1}, {"seed", 5}};
  const std::string bytes = serialize_checkpoint(r.model, f.vocab, meta);
  Checkpoint c = parse_checkpoint(bytes);
  EXPECT_EQ(flatten(c.model), flatten(r.model));
  EXPECT_EQ(c.model.config(), r.model.config());
  EXPECT_EQ(c.vocab.serialize(), f.vocab.serialize());
  EXPECT_EQ(c.metadata, meta);
  EXPECT_EQ(serialize_checkpoint(c.model, c.vocab, c.metadata), bytes);

  const std::string path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, r.model, f.vocab, meta);
  EXPECT_EQ(flatten(load_checkpoint(path).model), flatten(r.model));
  EXPECT_EQ(sha256_file(path), sha256_hex(bytes));
}

TEST(Checkpoint, CorruptionIsDetected) {
  Fixture f;
  Backbone<float> m = initial_model<float>(f.vocab, f.cfg);
  const std::string bytes = serialize_checkpoint(m, f.vocab);
  for (std::size_t pos : {std::size_t{0}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
    std::string bad = bytes;
    bad[pos] ^= 0x20;
    EXPECT_THROW(parse_checkpoint(bad), DataError) << pos;
  }
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 5)), DataError);
  EXPECT_THROW(parse_checkpoint("short"), DataError);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.ckpt"), DataError);
}

TEST(Checkpoint, VocabularyMustMatchModel) {
  Fixture f;
  Backbone<float> m = initial_model<float>(f.vocab, f.cfg);
  Vocabulary other = build_vocab(f.corpus, 1000);
  EXPECT_THROW(serialize_checkpoint(m, other), Error);
}

// ---------------------------------------------------------------- manifest

TEST(Manifest, JsonRoundTripAndSidecar) {
  const std::string artifact = temp_path("artifact.bin");
  {
    std::ofstream out(artifact, std::ios::binary);
    out << "abc";
  }
  RunManifest m;
  m.command = "bcsd train";
  m.config = {{"seed", "3"}};
  m.seed = 3;
  m.add_output("checkpoint", artifact);
  m.started_at = utc_timestamp();
  m.finished_at = m.started_at;
  EXPECT_EQ(m.outputs.at("checkpoint").sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  write_manifest(artifact, m);
  auto back = read_manifest(artifact);
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(back->to_json(), m.to_json());
  EXPECT_EQ(back->tool_version, "1.0.0");
  EXPECT_FALSE(read_manifest(temp_path("no_such_artifact")).has_value());
}

}  // namespace
}  // namespace bcsd
