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

// Pool-based retrieval evaluation.
//
// For an optimization-level pair (a, b), n families are sampled; f_i is the
// family's function at level a and g_i the one at level b. Each f_i ranks the
// whole target pool G by cosine similarity and the 1-based position of g_i is
// its rank. MRR and Recall@k summarise the ranks.

#ifndef BCSD_EVALUATION_HPP
#define BCSD_EVALUATION_HPP

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bcsd/backbones.hpp"
#include "bcsd/corpus.hpp"
#include "bcsd/errors.hpp"
#include "bcsd/kernels.hpp"
#include "bcsd/random.hpp"
#include "bcsd/tokenizer.hpp"

namespace bcsd {

using OptPair = std::pair<OptLevel, OptLevel>;

inline const std::vector<OptPair>& default_opt_pairs() {
  static const std::vector<OptPair> pairs = {
      {OptLevel::O0, OptLevel::O3}, {OptLevel::O1, OptLevel::O3}, {OptLevel::O2, OptLevel::O3},
      {OptLevel::O0, OptLevel::Os}, {OptLevel::O1, OptLevel::Os}, {OptLevel::O2, OptLevel::Os}};
  return pairs;
}

inline std::string to_string(const OptPair& p) {
  return std::string(to_string(p.first)) + "-" + std::string(to_string(p.second));
}

// Parses "O0-O3" (also accepts ',' or ':' as the separator).
inline OptPair parse_opt_pair(const std::string& text) {
  const auto sep = text.find_first_of("-,:");
  if (sep != std::string::npos) {
    auto a = parse_opt_level(text.substr(0, sep));
    auto b = parse_opt_level(text.substr(sep + 1));
    if (a && b && *a != *b) return {*a, *b};
  }
  throw ParseError("invalid optimization-level pair '" + text + "' (expected e.g. O0-O3)");
}

struct FunctionPoolPair {
  OptPair levels;
  std::uint64_t seed = 0;
  std::vector<std::size_t> source;  // record indices, f_i
  std::vector<std::size_t> target;  // record indices, g_i

  std::size_t size() const { return source.size(); }
};

// Families holding both levels with differing normalized text, in family order.
inline std::vector<std::size_t> eligible_families(const CorpusIndex& corpus, const OptPair& levels) {
  std::vector<std::size_t> out;
  const auto& families = corpus.families();
  for (std::size_t f = 0; f < families.size(); ++f) {
    const auto& m = families[f].members;
    auto a = m.find(levels.first);
    auto b = m.find(levels.second);
    if (a == m.end() || b == m.end()) continue;
    if (normalized_text(corpus.records()[a->second]) ==
        normalized_text(corpus.records()[b->second])) {
      continue;
    }
    out.push_back(f);
  }
  return out;
}

inline FunctionPoolPair build_pools(const CorpusIndex& corpus, const OptPair& levels,
                                    std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error("pool size must be >= 1");
  if (levels.first == levels.second) throw Error("pool levels must differ");
  std::vector<std::size_t> eligible = eligible_families(corpus, levels);
  if (eligible.size() < n) {
    throw DataError("pool size " + std::to_string(n) + " is infeasible for " + to_string(levels) +
                    ": only " + std::to_string(eligible.size()) +
                    " eligible families (maximum feasible n is " +
                    std::to_string(eligible.size()) + ")");
  }
  // Partial Fisher-Yates: the first n slots are a uniform sample.
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(eligible[i], eligible[i + uniform_index(rng, eligible.size() - i)]);
  }
  FunctionPoolPair pools;
  pools.levels = levels;
  pools.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = corpus.families()[eligible[i]].members;
    pools.source.push_back(m.at(levels.first));
    pools.target.push_back(m.at(levels.second));
  }
  return pools;
}

struct Ranking {
  std::vector<std::size_t> order;  // pool indices, most similar first
  std::vector<double> scores;      // cosine per pool index

  // 1-based position of pool index `i`.
  std::size_t rank_of(std::size_t i) const {
    auto it = std::find(order.begin(), order.end(), i);
    if (it == order.end()) throw Error("index not in ranking");
    return static_cast<std::size_t>(it - order.begin()) + 1;
  }
};

// Sorts the pool by descending cosine to the query; ties keep pool order.
template <typename T>
Ranking rank_target_pool(std::span<const T> query, const std::vector<std::vector<T>>& pool) {
  Ranking r;
  r.scores.reserve(pool.size());
  for (const auto& g : pool) {
    if (g.size() != query.size()) throw ShapeError("pool embedding size differs from query");
    r.scores.push_back(cosine(query, std::span<const T>(g)).value);
  }
  r.order.resize(pool.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t a, std::size_t b) { return r.scores[a] > r.scores[b]; });
  return r;
}

inline double mrr(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw Error("mrr needs at least one rank");
  double total = 0.0;
  for (std::size_t r : ranks) {
    if (r == 0) throw Error("ranks are 1-based");
    total += 1.0 / static_cast<double>(r);
  }
  return total / static_cast<double>(ranks.size());
}

// Fraction of ranks with rank - k <= 0.
inline double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (k == 0) throw Error("k must be >= 1");
  if (ranks.empty()) throw Error("recall_at_k needs at least one rank");
  std::size_t hits = 0;
  for (std::size_t r : ranks) hits += r <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

struct EvalOptions {
  std::size_t pool_size = 32;
  std::vector<OptPair> opt_pairs = default_opt_pairs();
  std::vector<std::size_t> ks = {1};
  std::uint64_t seed = 0;
  std::string checkpoint_sha256;
  std::string dataset_sha256;
};

struct PairResult {
  OptPair levels;
  std::size_t pool_size = 0;
  std::uint64_t seed = 0;
  double mrr = 0.0;
  std::map<std::size_t, double> recall;
  std::vector<std::size_t> ranks;
};

struct EvalReport {
  std::string model;
  EvalOptions options;
  std::vector<PairResult> pairs;
  double average_mrr = 0.0;
  std::map<std::size_t, double> average_recall;
};

// Embeds every record on demand, once.
template <typename T>
class EmbeddingCache {
 public:
  EmbeddingCache(const Backbone<T>& model, const Vocabulary& vocab, const CorpusIndex& corpus)
      : model_(&model), vocab_(&vocab), corpus_(&corpus) {}

  const std::vector<T>& get(std::size_t record) {
    if (auto it = cache_.find(record); it != cache_.end()) return it->second;
    const BackboneConfig& c = model_->config();
    EncodedFunction enc = encode_function(*vocab_, corpus_->records()[record],
                                          c.tokens_per_instruction, c.max_positions);
    return cache_.emplace(record, model_->embed(enc)).first->second;
  }

 private:
  const Backbone<T>* model_;
  const Vocabulary* vocab_;
  const CorpusIndex* corpus_;
  std::unordered_map<std::size_t, std::vector<T>> cache_;
};

// Pool seed for one level pair; independent of the order pairs are requested.
inline std::uint64_t pool_seed(std::uint64_t seed, const OptPair& levels) {
  return derive_seed(seed, 0x9000 + 8 * static_cast<std::uint64_t>(levels.first) +
                               static_cast<std::uint64_t>(levels.second));
}

template <typename T>
PairResult evaluate_pools(EmbeddingCache<T>& cache, const FunctionPoolPair& pools,
                          const std::vector<std::size_t>& ks) {
  PairResult res;
  res.levels = pools.levels;
  res.pool_size = pools.size();
  res.seed = pools.seed;
  std::vector<std::vector<T>> targets;
  targets.reserve(pools.size());
  for (std::size_t idx : pools.target) targets.push_back(cache.get(idx));
  for (std::size_t i = 0; i < pools.size(); ++i) {
    const std::vector<T>& q = cache.get(pools.source[i]);
    res.ranks.push_back(rank_target_pool(std::span<const T>(q), targets).rank_of(i));
  }
  res.mrr = mrr(res.ranks);
  for (std::size_t k : ks) res.recall[k] = recall_at_k(res.ranks, k);
  return res;
}

template <typename T>
EvalReport evaluate(const Backbone<T>& model, const Vocabulary& vocab, const CorpusIndex& corpus,
                    const EvalOptions& options) {
  if (options.opt_pairs.empty()) throw Error("no optimization-level pairs requested");
  EvalReport report;
  report.model = to_string(model.config().kind);
  report.options = options;
  EmbeddingCache<T> cache(model, vocab, corpus);
  for (const OptPair& levels : options.opt_pairs) {
    FunctionPoolPair pools =
        build_pools(corpus, levels, options.pool_size, pool_seed(options.seed, levels));
    report.pairs.push_back(evaluate_pools(cache, pools, options.ks));
  }
  const double n = static_cast<double>(report.pairs.size());
  for (const PairResult& p : report.pairs) {
    report.average_mrr += p.mrr;
    for (const auto& [k, v] : p.recall) report.average_recall[k] += v;
  }
  report.average_mrr /= n;
  for (auto& [k, v] : report.average_recall) v /= n;
  return report;
}

// Rows are metrics, columns are level pairs plus the average.
inline std::string format_table(const EvalReport& report) {
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-12s", report.model.c_str());
  out += buf;
  for (const PairResult& p : report.pairs) {
    std::snprintf(buf, sizeof buf, "%8s", to_string(p.levels).c_str());
    out += buf;
  }
  out += "   average\n";
  auto row = [&](const std::string& name, auto value_of, double average) {
    std::snprintf(buf, sizeof buf, "%-12s", name.c_str());
    out += buf;
    for (const PairResult& p : report.pairs) {
      std::snprintf(buf, sizeof buf, "%8.3f", value_of(p));
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "%10.3f\n", average);
    out += buf;
  };
  row("MRR", [](const PairResult& p) { return p.mrr; }, report.average_mrr);
  for (const auto& [k, avg] : report.average_recall) {
    row("Recall@" + std::to_string(k), [k = k](const PairResult& p) { return p.recall.at(k); },
        avg);
  }
  std::snprintf(buf, sizeof buf, "pool size %zu, seed %llu\n", report.options.pool_size,
                static_cast<unsigned long long>(report.options.seed));
  out += buf;
  return out;
}

inline nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["model"] = report.model;
  j["pool_size"] = report.options.pool_size;
  j["seed"] = report.options.seed;
  j["ks"] = report.options.ks;
  j["checkpoint_sha256"] = report.options.checkpoint_sha256;
  j["dataset_sha256"] = report.options.dataset_sha256;
  nlohmann::json rows = nlohmann::json::array();
  for (const PairResult& p : report.pairs) {
    nlohmann::json r;
    r["pair"] = to_string(p.levels);
    r["pool_size"] = p.pool_size;
    r["pool_seed"] = p.seed;
    r["mrr"] = p.mrr;
    nlohmann::json recall = nlohmann::json::object();
    for (const auto& [k, v] : p.recall) recall[std::to_string(k)] = v;
    r["recall"] = recall;
    r["ranks"] = p.ranks;
    rows.push_back(r);
  }
  j["pairs"] = rows;
  j["average_mrr"] = report.average_mrr;
  nlohmann::json avg = nlohmann::json::object();
  for (const auto& [k, v] : report.average_recall) avg[std::to_string(k)] = v;
  j["average_recall"] = avg;
  return j;
}

}  // namespace bcsd

#endif  // BCSD_EVALUATION_HPP
