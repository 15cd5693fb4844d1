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

// Library walk-through: generate a synthetic corpus, train a small TextCNN,
// evaluate it, and look up the nearest neighbours of one function.

#include <cstdio>
#include <span>
#include <vector>

#include "bcsd/evaluation.hpp"
#include "bcsd/synthetic.hpp"
#include "bcsd/training.hpp"

int main() {
  bcsd::SyntheticOptions train_opts;
  train_opts.families = 60;
  train_opts.function_prefix = "train";
  bcsd::CorpusIndex train_set(bcsd::generate_synthetic_corpus(train_opts));

  bcsd::SyntheticOptions test_opts = train_opts;
  test_opts.seed = 2;
  test_opts.variants_per_family = 5;
  test_opts.function_prefix = "test";
  bcsd::CorpusIndex test_set(bcsd::generate_synthetic_corpus(test_opts));

  bcsd::Vocabulary vocab = bcsd::build_vocab(train_set, 8);
  std::printf("%zu training functions, vocabulary of %zu tokens\n", train_set.size(),
              vocab.size());

  bcsd::TrainConfig cfg;
  cfg.seed = 1;
  cfg.epochs = 3;
  cfg.batch_size = 128;
  cfg.backbone.token_dim = 32;
  cfg.backbone.embedding_dim = 64;
  for (auto& conv : cfg.backbone.conv_layout) conv.out_channels = 64;

  bcsd::TrainHooks<float> hooks;
  hooks.on_checkpoint = [](const bcsd::Backbone<float>&, std::size_t epoch, std::size_t batch) {
    std::printf("epoch %zu done after %zu batches\n", epoch + 1, batch);
  };
  bcsd::TrainResult<float> result = bcsd::train(train_set, vocab, cfg, hooks);
  std::printf("final batch loss %.4f\n", result.losses.back());

  bcsd::EvalOptions eval;
  eval.pool_size = 16;
  eval.ks = {1, 5};
  eval.seed = 3;
  std::printf("\n%s\n", bcsd::format_table(bcsd::evaluate(result.model, vocab, test_set, eval)).c_str());

  // Nearest neighbours of the first O0 function among all O3 functions.
  bcsd::EmbeddingCache<float> cache(result.model, vocab, test_set);
  std::vector<std::size_t> targets;
  std::size_t query = test_set.size();
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const auto level = test_set.records()[i].opt_level;
    if (level == bcsd::OptLevel::O3) targets.push_back(i);
    if (level == bcsd::OptLevel::O0 && query == test_set.size()) query = i;
  }
  std::vector<std::vector<float>> pool;
  for (std::size_t i : targets) pool.push_back(cache.get(i));
  const std::vector<float>& q = cache.get(query);
  bcsd::Ranking ranking = bcsd::rank_target_pool(std::span<const float>(q), pool);
  std::printf("query %s@O0, closest O3 functions:\n",
              test_set.records()[query].function_name.c_str());
  for (std::size_t r = 0; r < 3 && r < ranking.order.size(); ++r) {
    const std::size_t j = ranking.order[r];
    std::printf("  %zu. %-12s cos %.3f\n", r + 1,
                test_set.records()[targets[j]].function_name.c_str(), ranking.scores[j]);
  }
  return 0;
}
