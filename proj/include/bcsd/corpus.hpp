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

// Function corpora: JSON-Lines ingestion, grouping into cross-optimization
// families, and the labelled pair stream used for siamese training.

#ifndef BCSD_CORPUS_HPP
#define BCSD_CORPUS_HPP

#include <algorithm>
#include <array>
#include <bit>
#include <compare>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bcsd/errors.hpp"
#include "bcsd/random.hpp"

namespace bcsd {

enum class OptLevel : std::uint8_t { O0, O1, O2, O3, Os };

inline constexpr std::array<OptLevel, 5> kAllOptLevels = {
    OptLevel::O0, OptLevel::O1, OptLevel::O2, OptLevel::O3, OptLevel::Os};

inline std::string_view to_string(OptLevel level) {
  switch (level) {
    case OptLevel::O0: return "O0";
    case OptLevel::O1: return "O1";
    case OptLevel::O2: return "O2";
    case OptLevel::O3: return "O3";
    case OptLevel::Os: return "Os";
  }
  return "?";
}

inline std::optional<OptLevel> parse_opt_level(std::string_view text) {
  for (OptLevel level : kAllOptLevels) {
    if (to_string(level) == text) return level;
  }
  return std::nullopt;
}

struct FunctionRecord {
  std::string project;
  std::string binary;
  std::string function_name;
  OptLevel opt_level = OptLevel::O0;
  std::vector<std::string> instructions;
};

struct FamilyKey {
  std::string project;
  std::string binary;
  std::string function_name;

  auto operator<=>(const FamilyKey&) const = default;
};

inline std::string to_string(const FamilyKey& key) {
  return key.project + "/" + key.binary + "/" + key.function_name;
}

inline FamilyKey family_key(const FunctionRecord& r) {
  return {r.project, r.binary, r.function_name};
}

// One source function and its compiled variants, at most one per level.
struct FunctionFamily {
  FamilyKey key;
  std::map<OptLevel, std::size_t> members;  // level -> record index
};

// Instruction text with whitespace runs collapsed to single spaces, trimmed,
// one instruction per line. Two variants with equal normalized text are
// treated as the same assembly.
inline std::string normalized_text(const FunctionRecord& record) {
  std::string out;
  for (std::size_t i = 0; i < record.instructions.size(); ++i) {
    if (i) out += '\n';
    bool pending_space = false;
    bool any = false;
    for (char c : record.instructions[i]) {
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f') {
        pending_space = any;
        continue;
      }
      if (pending_space) out += ' ';
      pending_space = false;
      any = true;
      out += c;
    }
  }
  return out;
}

// Immutable after construction.
class CorpusIndex {
 public:
  CorpusIndex() = default;

  explicit CorpusIndex(std::vector<FunctionRecord> records)
      : records_(std::move(records)) {
    std::map<FamilyKey, std::size_t> family_ids;
    family_of_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const FunctionRecord& r = records_[i];
      if (r.instructions.empty()) {
        throw DataError("function " + to_string(family_key(r)) + " at " +
                        std::string(to_string(r.opt_level)) + " has no instructions");
      }
      FamilyKey key = family_key(r);
      auto [it, inserted] = family_ids.try_emplace(key, families_.size());
      if (inserted) families_.push_back(FunctionFamily{key, {}});
      FunctionFamily& family = families_[it->second];
      if (!family.members.emplace(r.opt_level, i).second) {
        throw DataError("duplicate function key " + to_string(key) + " @ " +
                        std::string(to_string(r.opt_level)));
      }
      family_of_.push_back(it->second);
    }
  }

  const std::vector<FunctionRecord>& records() const { return records_; }
  const std::vector<FunctionFamily>& families() const { return families_; }
  std::size_t family_of(std::size_t record) const { return family_of_[record]; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

 private:
  std::vector<FunctionRecord> records_;
  std::vector<FunctionFamily> families_;
  std::vector<std::size_t> family_of_;
};

inline FunctionRecord parse_record(const nlohmann::json& j) {
  auto str = [&j](const char* field) -> std::string {
    if (!j.contains(field)) throw ParseError(std::string("missing field '") + field + "'");
    if (!j.at(field).is_string()) {
      throw ParseError(std::string("field '") + field + "' must be a string");
    }
    return j.at(field).get<std::string>();
  };
  if (!j.is_object()) throw ParseError("expected a JSON object");
  FunctionRecord r;
  r.project = str("project");
  r.binary = str("binary");
  r.function_name = str("function");
  const std::string level = str("opt_level");
  auto parsed = parse_opt_level(level);
  if (!parsed) throw ParseError("unknown opt_level '" + level + "'");
  r.opt_level = *parsed;
  if (!j.contains("instructions") || !j.at("instructions").is_array()) {
    throw ParseError("field 'instructions' must be an array of strings");
  }
  for (const auto& ins : j.at("instructions")) {
    if (!ins.is_string()) throw ParseError("field 'instructions' must be an array of strings");
    r.instructions.push_back(ins.get<std::string>());
  }
  if (r.instructions.empty()) throw ParseError("field 'instructions' is empty");
  return r;
}

inline nlohmann::json record_to_json(const FunctionRecord& r) {
  return nlohmann::json{{"project", r.project},
                        {"binary", r.binary},
                        {"function", r.function_name},
                        {"opt_level", std::string(to_string(r.opt_level))},
                        {"instructions", r.instructions}};
}

// Parses JSON-Lines records; blank lines are skipped. `source` names the
// input in error messages.
inline std::vector<FunctionRecord> read_records(std::istream& in,
                                                const std::string& source) {
  std::vector<FunctionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(parse_record(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

inline CorpusIndex load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  return CorpusIndex(read_records(in, path));
}

inline void write_records(std::ostream& out, const std::vector<FunctionRecord>& records) {
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Pair sampling

struct PairSample {
  std::size_t anchor = 0;  // record index
  std::size_t other = 0;   // record index
  int label = 1;           // +1 same family, -1 different families

  friend bool operator==(const PairSample&, const PairSample&) = default;
};

namespace detail {

// Keyed pseudo-random permutation of [0, n): a balanced Feistel network on
// the enclosing power-of-two domain with cycle walking.
class IndexPermutation {
 public:
  IndexPermutation() = default;
  IndexPermutation(std::uint64_t n, std::uint64_t seed) : n_(n) {
    unsigned bits = 2;
    while ((std::uint64_t{1} << bits) < n) bits += 2;
    half_bits_ = bits / 2;
    mask_ = (std::uint64_t{1} << half_bits_) - 1;
    for (std::size_t r = 0; r < keys_.size(); ++r) keys_[r] = derive_seed(seed, 0xfe15 + r);
  }

  std::uint64_t operator()(std::uint64_t i) const {
    std::uint64_t x = i;
    do {
      x = round_trip(x);
    } while (x >= n_);
    return x;
  }

 private:
  std::uint64_t round_trip(std::uint64_t x) const {
    std::uint64_t left = x >> half_bits_, right = x & mask_;
    for (std::uint64_t key : keys_) {
      const std::uint64_t next = left ^ (splitmix64(right ^ key) & mask_);
      left = right;
      right = next;
    }
    return (left << half_bits_) | right;
  }

  std::uint64_t n_ = 0;
  unsigned half_bits_ = 1;
  std::uint64_t mask_ = 1;
  std::array<std::uint64_t, 4> keys_{};
};

}  // namespace detail

// Lazily evaluated, seeded shuffle of all training pairs:
//   positives: every unordered pair of variants inside a family whose
//              normalized texts differ;
//   negatives: for every function, R partners drawn uniformly from other
//              families (without replacement when at least R exist).
// Element i is computed on demand, so the stream never has to be resident.
class PairStream {
 public:
  PairStream(const CorpusIndex& corpus, std::size_t negatives_per_function,
             std::uint64_t seed)
      : corpus_(&corpus), negatives_per_function_(negatives_per_function), seed_(seed) {
    if (negatives_per_function == 0) throw Error("R (negatives per function) must be >= 1");
    for (const FunctionFamily& family : corpus.families()) {
      std::vector<std::pair<std::size_t, std::string>> texts;
      for (const auto& [level, idx] : family.members) {
        texts.emplace_back(idx, normalized_text(corpus.records()[idx]));
      }
      for (std::size_t a = 0; a < texts.size(); ++a) {
        for (std::size_t b = a + 1; b < texts.size(); ++b) {
          if (texts[a].second != texts[b].second) {
            positives_.push_back({texts[a].first, texts[b].first, +1});
          }
        }
      }
    }
    if (corpus.families().size() >= 2) {
      negative_count_ = corpus.size() * negatives_per_function;
    } else {
      warnings_.push_back("corpus has fewer than two families; no negative pairs");
    }
    permutation_ = detail::IndexPermutation(size(), derive_seed(seed, 0x5eed));
  }

  std::size_t size() const { return positives_.size() + negative_count_; }
  std::size_t positive_count() const { return positives_.size(); }
  std::size_t negative_count() const { return negative_count_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  PairSample at(std::size_t i) const {
    if (i >= size()) throw Error("pair index out of range");
    const std::uint64_t p = permutation_(i);
    if (p < positives_.size()) return positives_[p];
    const std::uint64_t q = p - positives_.size();
    const std::size_t anchor = q / negatives_per_function_;
    const std::size_t draw = q % negatives_per_function_;
    return {anchor, negative_partners(anchor)[draw], -1};
  }

  // Partners of one anchor, in draw order.
  const std::vector<std::size_t>& negative_partners(std::size_t anchor) const {
    if (cached_anchor_ == anchor) return cached_partners_;
    const CorpusIndex& c = *corpus_;
    const FunctionFamily& own = c.families()[c.family_of(anchor)];
    std::vector<std::size_t> excluded;
    for (const auto& [level, idx] : own.members) excluded.push_back(idx);
    std::sort(excluded.begin(), excluded.end());
    const std::uint64_t pool = c.size() - excluded.size();
    const std::uint64_t r = negatives_per_function_;

    Rng rng(derive_seed(seed_, 0xa000000000ULL + anchor));
    std::vector<std::uint64_t> picks;
    if (pool >= r) {
      // Floyd's algorithm: r distinct values from [0, pool).
      std::unordered_set<std::uint64_t> chosen;
      for (std::uint64_t j = pool - r; j < pool; ++j) {
        std::uint64_t t = uniform_index(rng, j + 1);
        if (!chosen.insert(t).second) {
          chosen.insert(j);
          t = j;
        }
        picks.push_back(t);
      }
    } else {
      for (std::uint64_t j = 0; j < r; ++j) picks.push_back(uniform_index(rng, pool));
    }
    cached_partners_.clear();
    for (std::uint64_t pick : picks) {
      std::size_t idx = pick;
      for (std::size_t e : excluded) {
        if (e <= idx) ++idx;
      }
      cached_partners_.push_back(idx);
    }
    cached_anchor_ = anchor;
    return cached_partners_;
  }

 private:
  const CorpusIndex* corpus_;
  std::size_t negatives_per_function_;
  std::uint64_t seed_;
  std::vector<PairSample> positives_;
  std::size_t negative_count_ = 0;
  detail::IndexPermutation permutation_;
  std::vector<std::string> warnings_;
  mutable std::size_t cached_anchor_ = static_cast<std::size_t>(-1);
  mutable std::vector<std::size_t> cached_partners_;
};

inline PairStream make_pairs(const CorpusIndex& corpus, std::size_t negatives_per_function,
                             std::uint64_t seed) {
  return PairStream(corpus, negatives_per_function, seed);
}

}  // namespace bcsd

#endif  // BCSD_CORPUS_HPP
