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

// Command-line front end. run_cli() parses arguments, runs one subcommand and
// maps failures to exit codes:
//   0 success, 1 usage error, 2 data error, 3 numeric failure.

#ifndef BCSD_CLI_HPP
#define BCSD_CLI_HPP

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bcsd/backbones.hpp"
#include "bcsd/checkpoint.hpp"
#include "bcsd/corpus.hpp"
#include "bcsd/errors.hpp"
#include "bcsd/evaluation.hpp"
#include "bcsd/manifest.hpp"
#include "bcsd/sha256.hpp"
#include "bcsd/synthetic.hpp"
#include "bcsd/tokenizer.hpp"
#include "bcsd/training.hpp"

namespace bcsd {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

namespace cli_detail {

struct Streams {
  std::ostream& out;
  std::ostream& err;

  void warn(const std::string& message) const { err << "warning: " << message << "\n"; }
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path + "'");
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

// A query file is either one JSON-lines record or plain text with one
// instruction per line.
inline FunctionRecord read_query(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open query '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) throw DataError("query '" + path + "' is empty");
  if (text[first] == '{') {
    std::istringstream lines(text);
    std::vector<FunctionRecord> records = read_records(lines, path);
    if (records.size() != 1) {
      throw DataError("query '" + path + "' must hold exactly one function, found " +
                      std::to_string(records.size()));
    }
    return records.front();
  }
  FunctionRecord r;
  r.project = "query";
  r.binary = path;
  r.function_name = "query";
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) r.instructions.push_back(line);
  }
  return r;
}

inline std::string describe(const FunctionRecord& r) {
  return r.project + "/" + r.binary + "/" + r.function_name + "@" + std::string(to_string(r.opt_level));
}

// The checkpoint's embedded vocabulary, or `vocab_path` if it matches.
inline Vocabulary resolve_vocab(const Checkpoint& ckpt, const std::string& vocab_path) {
  if (vocab_path.empty()) return ckpt.vocab;
  Vocabulary v = Vocabulary::load(vocab_path);
  if (!(v == ckpt.vocab)) {
    throw DataError("vocabulary '" + vocab_path + "' differs from the one stored in the checkpoint");
  }
  return v;
}

struct SynthArgs {
  std::size_t families = 200;
  std::size_t variants = 3;
  std::size_t min_ops = SyntheticOptions{}.min_ops;
  std::size_t max_ops = SyntheticOptions{}.max_ops;
  std::uint64_t seed = 1;
  std::string prefix = "fn";
  std::string project = "synth";
  std::string out;
};

inline int cmd_synth(const SynthArgs& a, const Streams& io) {
  RunManifest m;
  m.command = "synth";
  m.started_at = utc_timestamp();
  SyntheticOptions o;
  o.families = a.families;
  o.variants_per_family = a.variants;
  o.min_ops = a.min_ops;
  o.max_ops = a.max_ops;
  o.seed = a.seed;
  o.project = a.project;
  o.function_prefix = a.prefix;
  std::ostringstream text;
  write_records(text, generate_synthetic_corpus(o));
  write_text(a.out, text.str());
  m.seed = a.seed;
  m.config = {{"families", a.families}, {"variants", a.variants}, {"min_ops", a.min_ops},
              {"max_ops", a.max_ops}, {"prefix", a.prefix}, {"project", a.project}};
  m.add_output("dataset", a.out);
  m.finished_at = utc_timestamp();
  write_manifest(a.out, m);
  io.out << "wrote " << a.families * a.variants << " functions to " << a.out << "\n";
  return kExitOk;
}

struct VocabArgs {
  std::string dataset;
  std::size_t threshold = kDefaultFrequencyThreshold;
  std::string delimiters = std::string(kDefaultDelimiters);
  std::string out;
};

inline int cmd_vocab(const VocabArgs& a, const Streams& io) {
  RunManifest m;
  m.command = "vocab";
  m.started_at = utc_timestamp();
  CorpusIndex corpus = load_dataset(a.dataset);
  std::vector<std::string> warnings;
  Vocabulary vocab = build_vocab(corpus, a.threshold, a.delimiters, &warnings);
  for (const auto& w : warnings) io.warn(w);
  vocab.save(a.out);
  m.config = {{"threshold", a.threshold}, {"delimiters", a.delimiters}};
  m.add_input("dataset", a.dataset);
  m.add_output("vocabulary", a.out);
  m.finished_at = utc_timestamp();
  write_manifest(a.out, m);
  io.out << "vocabulary of " << vocab.size() << " tokens (F=" << a.threshold << ") written to "
         << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string dataset;
  std::string vocab;
  std::string config;
  std::string out;
  std::string loss_csv;
  std::optional<std::string> backbone;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> negatives;
  std::optional<double> learning_rate;
  std::optional<double> margin;
  std::optional<std::size_t> checkpoint_every;
  bool quiet = false;
};

inline int cmd_train(const TrainArgs& a, const Streams& io) {
  RunManifest m;
  m.command = "train";
  m.started_at = utc_timestamp();

  TrainConfig cfg;
  if (!a.config.empty()) cfg = load_train_config(a.config);
  // Flags override the config file.
  if (a.backbone) cfg.backbone.kind = parse_backbone_kind(*a.backbone);
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.negatives) cfg.negatives = *a.negatives;
  if (a.learning_rate) cfg.learning_rate = *a.learning_rate;
  if (a.margin) cfg.loss.margin = *a.margin;
  if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
  cfg.validate();

  CorpusIndex corpus = load_dataset(a.dataset);
  Vocabulary vocab = Vocabulary::load(a.vocab);
  const std::string dataset_sha = sha256_file(a.dataset);
  if (auto vm = read_manifest(a.vocab)) {
    auto it = vm->inputs.find("dataset");
    if (it != vm->inputs.end() && it->second.sha256 != dataset_sha) {
      io.warn("vocabulary '" + a.vocab + "' was built from a different dataset (manifest sha256 " +
              it->second.sha256 + ", training dataset sha256 " + dataset_sha + ")");
    }
  }
  if (auto dm = read_manifest(a.dataset)) {
    auto it = dm->outputs.find("dataset");
    if (it != dm->outputs.end() && it->second.sha256 != dataset_sha) {
      io.warn("dataset '" + a.dataset + "' no longer matches its manifest hash");
    }
  }

  const nlohmann::json train_json(cfg.to_map());
  const std::string loss_path = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  TrainHooks<float> hooks;
  hooks.on_batch = [&](std::size_t batch, double loss) {
    if (!a.quiet && batch % 10 == 0) io.err << "batch " << batch << " loss " << loss << "\n";
  };
  hooks.on_checkpoint = [&](const Backbone<float>& model, std::size_t epoch, std::size_t batch) {
    const bool last_epoch = epoch + 1 == cfg.epochs;
    if (last_epoch && batch % cfg.checkpoint_every != 0) return;  // final file written below
    const std::string path = a.out + ".batch" + std::to_string(batch);
    save_checkpoint(path, model, vocab, {{"train", train_json}, {"batches", batch}});
  };
  TrainResult<float> result = train(corpus, vocab, cfg, hooks);
  for (const auto& w : result.warnings) io.warn(w);

  save_checkpoint(a.out, result.model, vocab, {{"train", train_json}, {"batches", result.batches}});
  std::ostringstream csv;
  write_loss_csv(csv, result.losses);
  write_text(loss_path, csv.str());

  m.seed = cfg.seed;
  m.config = train_json;
  m.config["backbone_config"] = result.model.config().to_json();
  m.add_input("dataset", a.dataset);
  m.add_input("vocabulary", a.vocab);
  if (!a.config.empty()) m.add_input("config", a.config);
  m.add_output("checkpoint", a.out);
  m.add_output("loss_csv", loss_path);
  m.finished_at = utc_timestamp();
  write_manifest(a.out, m);
  write_manifest(loss_path, m);
  io.out << "trained " << to_string(cfg.backbone.kind) << " for " << result.batches
         << " batches (" << result.pairs_seen << " pairs); checkpoint " << a.out << ", loss "
         << loss_path << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string dataset;
  std::string checkpoint;
  std::size_t pool_size = 32;
  std::string pairs;
  std::string ks = "1";
  std::optional<std::uint64_t> seed;
  std::string out;  // prefix for .json / .txt
};

inline int cmd_eval(const EvalArgs& a, const Streams& io) {
  RunManifest m;
  m.command = "eval";
  m.started_at = utc_timestamp();
  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  CorpusIndex corpus = load_dataset(a.dataset);
  EvalOptions o;
  o.pool_size = a.pool_size;
  o.seed = *a.seed;
  if (!a.pairs.empty()) {
    o.opt_pairs.clear();
    for (const auto& p : split_list(a.pairs)) o.opt_pairs.push_back(parse_opt_pair(p));
  }
  o.ks.clear();
  for (const auto& k : split_list(a.ks)) o.ks.push_back(detail::parse_u64(k, "k"));
  if (o.ks.empty()) throw Error("at least one k is required");
  o.checkpoint_sha256 = sha256_file(a.checkpoint);
  o.dataset_sha256 = sha256_file(a.dataset);

  EvalReport report = evaluate(ckpt.model, ckpt.vocab, corpus, o);
  const std::string table = format_table(report);
  io.out << table;
  if (!a.out.empty()) {
    write_text(a.out + ".json", to_json(report).dump(2) + "\n");
    write_text(a.out + ".txt", table);
    m.seed = o.seed;
    m.config = {{"pool_size", o.pool_size}, {"pairs", a.pairs}, {"ks", o.ks}};
    m.add_input("dataset", a.dataset);
    m.add_input("checkpoint", a.checkpoint);
    m.add_output("report_json", a.out + ".json");
    m.add_output("report_table", a.out + ".txt");
    m.finished_at = utc_timestamp();
    write_manifest(a.out + ".json", m);
  }
  return kExitOk;
}

struct EmbedArgs {
  std::string checkpoint;
  std::string vocab;
  std::string dataset;
  std::string out;
};

inline int cmd_embed(const EmbedArgs& a, const Streams& io) {
  RunManifest m;
  m.command = "embed";
  m.started_at = utc_timestamp();
  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  Vocabulary vocab = resolve_vocab(ckpt, a.vocab);
  CorpusIndex corpus = load_dataset(a.dataset);
  EmbeddingCache<float> cache(ckpt.model, vocab, corpus);
  std::ostringstream text;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    nlohmann::json j = record_to_json(corpus.records()[i]);
    j.erase("instructions");
    j["embedding"] = cache.get(i);
    text << j.dump() << "\n";
  }
  write_text(a.out, text.str());
  m.add_input("checkpoint", a.checkpoint);
  m.add_input("dataset", a.dataset);
  m.add_output("embeddings", a.out);
  m.finished_at = utc_timestamp();
  write_manifest(a.out, m);
  io.out << "embedded " << corpus.size() << " functions into " << a.out << "\n";
  return kExitOk;
}

struct SearchArgs {
  std::string checkpoint;
  std::string vocab;
  std::string query;
  std::string index;
  std::size_t top_k = 10;
};

inline int cmd_search(const SearchArgs& a, const Streams& io) {
  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  Vocabulary vocab = resolve_vocab(ckpt, a.vocab);
  const FunctionRecord query = read_query(a.query);
  CorpusIndex index = load_dataset(a.index);
  if (index.empty()) {
    io.warn("index '" + a.index + "' is empty; no results");
    return kExitOk;
  }
  const BackboneConfig& c = ckpt.model.config();
  const std::vector<float> q = ckpt.model.embed(
      encode_function(vocab, query, c.tokens_per_instruction, c.max_positions));
  EmbeddingCache<float> cache(ckpt.model, vocab, index);
  std::vector<std::vector<float>> pool;
  for (std::size_t i = 0; i < index.size(); ++i) pool.push_back(cache.get(i));
  Ranking ranking = rank_target_pool(std::span<const float>(q), pool);
  const std::size_t k = std::min(a.top_k, ranking.order.size());
  char score[32];
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t i = ranking.order[r];
    std::snprintf(score, sizeof score, "%.6f", ranking.scores[i]);
    io.out << r + 1 << "\t" << score << "\t" << describe(index.records()[i]) << "\n";
  }
  return kExitOk;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  using namespace cli_detail;
  const Streams io{out, err};
  CLI::App app{"Binary code similarity: vocabulary, training, evaluation and search", "bcsd"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic multi-level corpus (JSON lines)");
  s->add_option("--families", synth.families, "Number of function families")->capture_default_str();
  s->add_option("--variants", synth.variants, "Optimization levels per family (1-5)")
      ->capture_default_str();
  s->add_option("--min-ops", synth.min_ops, "Minimum abstract ops per family")->capture_default_str();
  s->add_option("--max-ops", synth.max_ops, "Maximum abstract ops per family")->capture_default_str();
  s->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  s->add_option("--prefix", synth.prefix, "Function name prefix")->capture_default_str();
  s->add_option("--project", synth.project, "Project name")->capture_default_str();
  s->add_option("--out", synth.out, "Output dataset path")->required();

  VocabArgs vocab;
  auto* v = app.add_subcommand("vocab", "Build a token vocabulary from a dataset");
  v->add_option("--dataset", vocab.dataset, "Training dataset (JSON lines)")->required();
  v->add_option("-F,--threshold", vocab.threshold, "Minimum token frequency")->capture_default_str();
  v->add_option("--delimiters", vocab.delimiters, "Token delimiter characters");
  v->add_option("--out", vocab.out, "Output vocabulary path")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a backbone with the siamese cosine loss");
  t->add_option("--dataset", tr.dataset, "Training dataset (JSON lines)")->required();
  t->add_option("--vocab", tr.vocab, "Vocabulary file")->required();
  t->add_option("--config", tr.config, "key = value training config");
  t->add_option("--out", tr.out, "Output checkpoint path")->required();
  t->add_option("--loss-csv", tr.loss_csv, "Loss trace path (default: <out>.loss.csv)");
  t->add_option("--backbone", tr.backbone, "textcnn, lstm or mixer");
  t->add_option("--seed", tr.seed, "Seed for initialization, shuffling and sampling")->required();
  t->add_option("--epochs", tr.epochs, "Epochs");
  t->add_option("--batch-size", tr.batch_size, "Pairs per batch");
  t->add_option("-R,--negatives", tr.negatives, "Negatives per function");
  t->add_option("--lr", tr.learning_rate, "Adam learning rate");
  t->add_option("--margin", tr.margin, "Cosine margin for negative pairs");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Batches between checkpoints");
  t->add_flag("-q,--quiet", tr.quiet, "No per-batch progress");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Pool-based retrieval evaluation");
  e->add_option("--dataset", ev.dataset, "Test dataset (JSON lines)")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required();
  e->add_option("--pool-size", ev.pool_size, "Pool size n")->capture_default_str();
  e->add_option("--pairs", ev.pairs, "Comma-separated level pairs, e.g. O0-O3,O1-Os");
  e->add_option("--k", ev.ks, "Comma-separated Recall@k cut-offs")->capture_default_str();
  e->add_option("--seed", ev.seed, "Pool sampling seed")->required();
  e->add_option("--out", ev.out, "Report prefix; writes <out>.json and <out>.txt");

  EmbedArgs em;
  auto* b = app.add_subcommand("embed", "Embed every function of a dataset");
  b->add_option("--checkpoint", em.checkpoint, "Checkpoint")->required();
  b->add_option("--vocab", em.vocab, "Vocabulary (must match the checkpoint)");
  b->add_option("--dataset", em.dataset, "Dataset (JSON lines)")->required();
  b->add_option("--out", em.out, "Output JSON lines path")->required();

  SearchArgs se;
  auto* q = app.add_subcommand("search", "Rank indexed functions by similarity to a query");
  q->add_option("--checkpoint", se.checkpoint, "Checkpoint")->required();
  q->add_option("--vocab", se.vocab, "Vocabulary (must match the checkpoint)");
  q->add_option("--query", se.query, "Query function (JSON record or one instruction per line)")
      ->required();
  q->add_option("--index", se.index, "Dataset to search")->required();
  q->add_option("--top-k", se.top_k, "Results to print")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s) return cmd_synth(synth, io);
    if (*v) return cmd_vocab(vocab, io);
    if (*t) return cmd_train(tr, io);
    if (*e) return cmd_eval(ev, io);
    if (*b) return cmd_embed(em, io);
    if (*q) return cmd_search(se, io);
  } catch (const NumericError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitData;
  } catch (const ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitData;
  } catch (const ShapeError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitData;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace bcsd

#endif  // BCSD_CLI_HPP
