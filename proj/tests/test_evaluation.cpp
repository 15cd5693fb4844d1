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

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "bcsd/evaluation.hpp"
#include "bcsd/loss.hpp"
#include "bcsd/synthetic.hpp"
#include "test_util.hpp"

namespace bcsd {
namespace {

using testing::make_record;

// ---------------------------------------------------------------- loss

std::vector<double> at_cosine(double c) { return {c, std::sqrt(1.0 - c * c)}; }

TEST(Loss, PositiveIdenticalIsZero) {
  std::vector<double> e = {0.3, -1.2, 2.0};
  EXPECT_NEAR(cosine_pair_loss<double>(e, e, 1), 0.0, 1e-15);
}

TEST(Loss, NegativeBelowMarginIsZero) {
  const std::vector<double> u = {1.0, 0.0};
  for (double c : {-1.0, -0.3, 0.0, 0.5, 0.89, 0.9}) {
    EXPECT_EQ(cosine_pair_loss<double>(u, at_cosine(c), -1), 0.0) << c;
  }
}

TEST(Loss, NegativeAboveMarginIsExcess) {
  const std::vector<double> u = {1.0, 0.0};
  EXPECT_NEAR(cosine_pair_loss<double>(u, at_cosine(0.95), -1), 0.05, 1e-7);
  const std::vector<float> uf = {1.0f, 0.0f};
  const std::vector<float> vf = {0.95f, static_cast<float>(std::sqrt(1.0 - 0.95 * 0.95))};
  EXPECT_NEAR(cosine_pair_loss<float>(uf, vf, -1), 0.05, 1e-7);
}

TEST(Loss, HandExamples) {
  EXPECT_DOUBLE_EQ(cosine_margin_loss(0.25, 1), 0.75);
  EXPECT_DOUBLE_EQ(cosine_margin_loss(-1.0, 1), 2.0);
  EXPECT_DOUBLE_EQ(cosine_margin_loss(1.0, -1), 1.0 - 0.9);
  EXPECT_DOUBLE_EQ(cosine_margin_loss(0.5, -1, 0.2), 0.3);
  EXPECT_THROW(cosine_margin_loss(0.5, 0), Error);
  EXPECT_THROW(LossConfig{1.5}.validate(), Error);
}

TEST(Loss, RangeAndScaleInvariance) {
  Rng rng(31);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> u(6), v(6);
    for (auto& x : u) x = uniform_real(rng, -1, 1);
    for (auto& x : v) x = uniform_real(rng, -1, 1);
    const double pos = cosine_pair_loss<double>(u, v, 1);
    const double neg = cosine_pair_loss<double>(u, v, -1);
    EXPECT_GE(pos, 0.0);
    EXPECT_LE(pos, 2.0 + 1e-12);
    EXPECT_GE(neg, 0.0);
    EXPECT_LE(neg, 0.1 + 1e-12);
    std::vector<double> scaled = v;
    const double a = uniform_real(rng, 0.1, 10.0);
    for (auto& x : scaled) x *= a;
    EXPECT_NEAR(cosine_pair_loss<double>(u, scaled, 1), pos, 1e-12);
    EXPECT_NEAR(cosine_pair_loss<double>(u, scaled, -1), neg, 1e-12);
  }
}

double cos_gradient(double c, int label, double margin) {
  Tape<double> tape;
  Var<double> cos = tape.input(Tensor<double>(Shape{1}, {c}));
  tape.backward(cosine_margin_loss(cos, label, margin));
  return tape.grad(cos)[0];
}

TEST(Loss, SubgradientAtMarginIsZero) {
  EXPECT_EQ(cos_gradient(0.9, -1, 0.9), 0.0);
  EXPECT_EQ(cos_gradient(0.95, -1, 0.9), 1.0);
  EXPECT_EQ(cos_gradient(0.5, -1, 0.9), 0.0);
  EXPECT_EQ(cos_gradient(0.5, 1, 0.9), -1.0);
}

// ---------------------------------------------------------------- metrics

TEST(Metrics, HandExamples) {
  const std::vector<std::size_t> a = {4, 2, 1, 5};
  EXPECT_DOUBLE_EQ(mrr(a), (0.25 + 0.5 + 1.0 + 0.2) / 4.0);
  EXPECT_DOUBLE_EQ(mrr(a), 0.4875);
  const std::vector<std::size_t> b = {1, 2};
  EXPECT_DOUBLE_EQ(mrr(b), 0.75);
  EXPECT_DOUBLE_EQ(recall_at_k(a, 1), 0.25);
  EXPECT_DOUBLE_EQ(recall_at_k(a, 2), 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k(a, 4), 0.75);
  EXPECT_DOUBLE_EQ(recall_at_k(a, 5), 1.0);
}

TEST(Metrics, InvalidInputs) {
  EXPECT_THROW(mrr(std::vector<std::size_t>{}), Error);
  EXPECT_THROW(mrr(std::vector<std::size_t>{1, 0}), Error);
  EXPECT_THROW(recall_at_k(std::vector<std::size_t>{1}, 0), Error);
}

// Brute force on 1000 random rank lists: exact equality.
TEST(Metrics, MatchBruteForceOnRandomRankLists) {
  Rng rng(2024);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 64);
    const std::size_t pool = 1 + uniform_index(rng, 100);
    std::vector<std::size_t> ranks(n);
    for (auto& r : ranks) r = 1 + uniform_index(rng, pool);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += 1.0 / static_cast<double>(ranks[i]);
    ASSERT_EQ(mrr(ranks), sum / static_cast<double>(n));
    for (std::size_t k : {1u, 2u, 5u, 10u, 50u}) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (ranks[i] <= k) ++hits;
      }
      ASSERT_EQ(recall_at_k(ranks, k), static_cast<double>(hits) / static_cast<double>(n));
    }
    EXPECT_LE(recall_at_k(ranks, 1), mrr(ranks));
  }
}

// ---------------------------------------------------------------- ranking

// Quadratic oracle: 1 + #strictly better + #equal with a smaller index.
std::size_t oracle_rank(const std::vector<double>& scores, std::size_t i) {
  std::size_t r = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > scores[i] || (scores[j] == scores[i] && j < i)) ++r;
  }
  return r;
}

TEST(Ranking, MatchesBruteForceUpToHundred) {
  Rng rng(77);
  for (std::size_t n = 1; n <= 100; ++n) {
    const std::size_t dim = 1 + uniform_index(rng, 6);
    std::vector<double> q(dim);
    for (auto& x : q) x = uniform_real(rng, -1, 1);
    std::vector<std::vector<double>> pool(n, std::vector<double>(dim));
    for (auto& g : pool) {
      for (auto& x : g) x = uniform_real(rng, -1, 1);
    }
    // Duplicates and scaled copies create exact ties.
    for (std::size_t j = 1; j < n; j += 7) pool[j] = pool[j - 1];
    Ranking r = rank_target_pool<double>(q, pool);
    std::vector<double> scores;
    for (const auto& g : pool) scores.push_back(cosine(q, g).value);
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_EQ(r.rank_of(i), oracle_rank(scores, i)) << "n=" << n << " i=" << i;
    }
    std::set<std::size_t> perm(r.order.begin(), r.order.end());
    EXPECT_EQ(perm.size(), n);
  }
}

TEST(Ranking, TiesKeepPoolOrderAndScaleIsIrrelevant) {
  const std::vector<double> q = {1.0, 0.0};
  std::vector<std::vector<double>> pool = {{0.0, 1.0}, {2.0, 0.0}, {1.0, 0.0}, {-1.0, 0.0}};
  Ranking r = rank_target_pool<double>(q, pool);
  EXPECT_EQ(r.order, (std::vector<std::size_t>{1, 2, 0, 3}));
  EXPECT_EQ(r.rank_of(2), 2u);
  EXPECT_THROW(r.rank_of(9), Error);
  pool.push_back({1.0});
  EXPECT_THROW(rank_target_pool<double>(q, pool), ShapeError);
}

// ---------------------------------------------------------------- pools

CorpusIndex synthetic_index(std::size_t families, std::uint64_t seed = 5) {
  SyntheticOptions o;
  o.families = families;
  o.variants_per_family = 5;
  o.seed = seed;
  return CorpusIndex(generate_synthetic_corpus(o));
}

TEST(Pools, SourcesAndTargetsAreAlignedAndDistinct) {
  CorpusIndex c = synthetic_index(40);
  FunctionPoolPair p = build_pools(c, {OptLevel::O0, OptLevel::O3}, 16, 8);
  ASSERT_EQ(p.size(), 16u);
  std::set<std::size_t> families;
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(c.family_of(p.source[i]), c.family_of(p.target[i]));
    EXPECT_EQ(c.records()[p.source[i]].opt_level, OptLevel::O0);
    EXPECT_EQ(c.records()[p.target[i]].opt_level, OptLevel::O3);
    families.insert(c.family_of(p.source[i]));
  }
  EXPECT_EQ(families.size(), 16u);
  FunctionPoolPair again = build_pools(c, {OptLevel::O0, OptLevel::O3}, 16, 8);
  EXPECT_EQ(again.source, p.source);
}

TEST(Pools, InfeasibleSizeReportsMaximum) {
  CorpusIndex c = synthetic_index(10);
  const std::size_t eligible = eligible_families(c, {OptLevel::O1, OptLevel::Os}).size();
  try {
    build_pools(c, {OptLevel::O1, OptLevel::Os}, eligible + 1, 1);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("maximum feasible n is " + std::to_string(eligible)),
              std::string::npos)
        << e.what();
  }
  EXPECT_NO_THROW(build_pools(c, {OptLevel::O1, OptLevel::Os}, eligible, 1));
  EXPECT_THROW(build_pools(c, {OptLevel::O1, OptLevel::O1}, 1, 1), Error);
}

TEST(Pools, IdenticalTextFamiliesAreIneligible) {
  CorpusIndex c({make_record("a", OptLevel::O0, {"push rbp", "retn"}),
                 make_record("a", OptLevel::O3, {"retn"}),
                 make_record("b", OptLevel::O0, {"retn"}),
                 make_record("b", OptLevel::O3, {"retn"}),
                 make_record("c", OptLevel::O3, {"nop"})});
  EXPECT_EQ(eligible_families(c, {OptLevel::O0, OptLevel::O3}), (std::vector<std::size_t>{0}));
}

TEST(OptPairs, ParseAndPrint) {
  EXPECT_EQ(default_opt_pairs().size(), 6u);
  EXPECT_EQ(to_string(default_opt_pairs()[3]), "O0-Os");
  EXPECT_EQ(parse_opt_pair("O2-O3"), (OptPair{OptLevel::O2, OptLevel::O3}));
  EXPECT_THROW(parse_opt_pair("O2"), Error);
}

// ---------------------------------------------------------------- evaluate

struct TinyModel {
  CorpusIndex corpus = synthetic_index(40, 9);
  Vocabulary vocab = build_vocab(corpus, 2);
  Backbone<float> model = [this] {
    BackboneConfig c;
    c.vocab_size = vocab.size();
    c.token_dim = 8;
    c.embedding_dim = 8;
    c.conv_layout = {{3, 8}, {2, 8}};
    Backbone<float> m(c);
    m.initialize(4);
    return m;
  }();
};

TEST(Evaluate, PoolOfOneHasPerfectScores) {
  TinyModel t;
  EvalOptions o;
  o.pool_size = 1;
  o.ks = {1, 5};
  EvalReport r = evaluate(t.model, t.vocab, t.corpus, o);
  ASSERT_EQ(r.pairs.size(), 6u);
  for (const auto& p : r.pairs) {
    EXPECT_EQ(p.mrr, 1.0);
    EXPECT_EQ(p.recall.at(1), 1.0);
  }
  EXPECT_EQ(r.average_mrr, 1.0);
}

TEST(Evaluate, DeterministicAndOrderIndependent) {
  TinyModel t;
  EvalOptions o;
  o.pool_size = 8;
  o.seed = 11;
  o.ks = {1, 3};
  EvalReport a = evaluate(t.model, t.vocab, t.corpus, o);
  EvalReport b = evaluate(t.model, t.vocab, t.corpus, o);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(format_table(a), format_table(b));
  // Requesting a single pair reproduces its row from the full run.
  EvalOptions single = o;
  single.opt_pairs = {default_opt_pairs()[4]};
  EvalReport s = evaluate(t.model, t.vocab, t.corpus, single);
  EXPECT_EQ(s.pairs[0].ranks, a.pairs[4].ranks);
  for (const auto& p : a.pairs) {
    EXPECT_LE(p.recall.at(1), p.mrr);
    EXPECT_LE(p.recall.at(1), p.recall.at(3));
    for (std::size_t rank : p.ranks) {
      EXPECT_GE(rank, 1u);
      EXPECT_LE(rank, 8u);
    }
  }
  o.seed = 12;
  EvalReport c = evaluate(t.model, t.vocab, t.corpus, o);
  EXPECT_NE(to_json(a)["pairs"][0]["pool_seed"], to_json(c)["pairs"][0]["pool_seed"]);
}

TEST(Evaluate, TableLayout) {
  TinyModel t;
  EvalOptions o;
  o.pool_size = 4;
  o.ks = {1, 5};
  std::string table = format_table(evaluate(t.model, t.vocab, t.corpus, o));
  EXPECT_EQ(table.rfind("textcnn", 0), 0u);
  EXPECT_NE(table.find("O0-O3"), std::string::npos);
  EXPECT_NE(table.find("average"), std::string::npos);
  EXPECT_NE(table.find("\nMRR"), std::string::npos);
  EXPECT_NE(table.find("\nRecall@5"), std::string::npos);
}

}  // namespace
}  // namespace bcsd
