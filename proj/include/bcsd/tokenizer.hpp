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

// Assembly tokenization, frequency-filtered vocabularies and the instruction
// grid encoding (K token ids plus one position id per instruction).

#ifndef BCSD_TOKENIZER_HPP
#define BCSD_TOKENIZER_HPP

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bcsd/corpus.hpp"
#include "bcsd/errors.hpp"
#include "bcsd/sha256.hpp"

namespace bcsd {

inline constexpr std::string_view kDefaultDelimiters = " \t+-*:,;[]()";
inline constexpr std::size_t kDefaultFrequencyThreshold = 32;
inline constexpr std::size_t kDefaultTokensPerInstruction = 5;
inline constexpr std::size_t kDefaultMaxPositions = 512;

// Splits one instruction into tokens. The opcode (first whitespace-separated
// word) is token 0; the remaining text is split on any delimiter character,
// delimiters and empty fragments are dropped, and order is preserved.
inline std::vector<std::string> split_instruction(std::string_view text,
                                                  std::string_view delimiters = kDefaultDelimiters) {
  std::vector<std::string> tokens;
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f';
  };
  std::size_t pos = 0;
  while (pos < text.size() && is_space(text[pos])) ++pos;
  if (pos == text.size()) return tokens;
  std::size_t end = pos;
  while (end < text.size() && !is_space(text[end])) ++end;
  tokens.emplace_back(text.substr(pos, end - pos));

  std::string current;
  for (std::size_t i = end; i < text.size(); ++i) {
    if (delimiters.find(text[i]) != std::string_view::npos) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current += text[i];
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

namespace detail {

inline std::string escape_field(std::string_view s, bool escape_space) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case ' ':
        if (escape_space) {
          out += "\\s";
          break;
        }
        [[fallthrough]];
      default: out += c;
    }
  }
  return out;
}

inline std::string unescape_field(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (++i == s.size()) throw ParseError("dangling escape in '" + std::string(s) + "'");
    switch (s[i]) {
      case '\\': out += '\\'; break;
      case 't': out += '\t'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case 's': out += ' '; break;
      default: throw ParseError("unknown escape '\\" + std::string(1, s[i]) + "'");
    }
  }
  return out;
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

inline std::uint64_t parse_u64(std::string_view s, const std::string& what) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ParseError("bad " + what + " '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace detail

// Token <-> id map. Ids are dense; 0 is PAD, 1 is UNK, then retained tokens
// by descending training frequency with ties broken lexicographically.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::string_view kPadToken = "[PAD]";
  static constexpr std::string_view kUnkToken = "[UNK]";

  Vocabulary() : Vocabulary(1, std::string(kDefaultDelimiters)) {}

  Vocabulary(std::size_t threshold, std::string delimiters)
      : threshold_(threshold), delimiters_(std::move(delimiters)) {
    tokens_ = {std::string(kPadToken), std::string(kUnkToken)};
    frequencies_ = {0, 0};
    reindex();
  }

  // Builds from (token, count) entries, dropping those below the threshold.
  static Vocabulary from_counts(const std::unordered_map<std::string, std::uint64_t>& counts,
                                std::size_t threshold, std::string delimiters) {
    Vocabulary v(threshold, std::move(delimiters));
    std::vector<std::pair<std::string, std::uint64_t>> kept;
    for (const auto& [token, count] : counts) {
      if (count >= threshold && token != kPadToken && token != kUnkToken) {
        kept.emplace_back(token, count);
      }
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    for (auto& [token, count] : kept) {
      v.tokens_.push_back(std::move(token));
      v.frequencies_.push_back(count);
    }
    v.reindex();
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t threshold() const { return threshold_; }
  const std::string& delimiters() const { return delimiters_; }

  std::int32_t id_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(std::string_view token) const {
    return index_.count(std::string(token)) != 0;
  }
  const std::string& token(std::int32_t id) const { return tokens_.at(id); }
  std::uint64_t frequency(std::int32_t id) const { return frequencies_.at(id); }

  std::string body() const {
    std::string out;
    for (std::size_t id = 2; id < tokens_.size(); ++id) {
      out += detail::escape_field(tokens_[id], false);
      out += '\t';
      out += std::to_string(frequencies_[id]);
      out += '\n';
    }
    return out;
  }

  std::string body_sha256() const { return sha256_hex(body()); }

  std::string serialize() const {
    std::string text = "#bcsd-vocab\tversion=1\tpad=" + std::string(kPadToken) +
                       "\tunk=" + std::string(kUnkToken) + "\n";
    text += "#threshold=" + std::to_string(threshold_) + "\tsize=" + std::to_string(size()) +
            "\tdelimiters=" + detail::escape_field(delimiters_, true) +
            "\tsha256=" + body_sha256() + "\n";
    text += body();
    return text;
  }

  static Vocabulary parse(std::string_view text, const std::string& source = "vocabulary") {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t nl = text.find('\n', start);
      if (nl == std::string_view::npos) {
        lines.push_back(text.substr(start));
        break;
      }
      lines.push_back(text.substr(start, nl - start));
      start = nl + 1;
    }
    if (lines.size() < 2) throw ParseError(source + ": missing header");
    auto h1 = detail::split_tabs(lines[0]);
    if (h1.size() != 4 || h1[0] != "#bcsd-vocab" || h1[1] != "version=1" ||
        h1[2] != "pad=" + std::string(kPadToken) || h1[3] != "unk=" + std::string(kUnkToken)) {
      throw ParseError(source + ":1: unrecognised vocabulary header");
    }
    std::map<std::string, std::string> fields;
    auto h2 = detail::split_tabs(lines[1]);
    if (h2.empty() || h2[0].empty() || h2[0][0] != '#') {
      throw ParseError(source + ":2: malformed header");
    }
    h2[0].remove_prefix(1);
    for (auto f : h2) {
      auto eq = f.find('=');
      if (eq == std::string_view::npos) throw ParseError(source + ":2: malformed header field");
      fields[std::string(f.substr(0, eq))] = std::string(f.substr(eq + 1));
    }
    for (const char* key : {"threshold", "size", "delimiters", "sha256"}) {
      if (!fields.count(key)) throw ParseError(source + ":2: header lacks '" + key + "'");
    }
    Vocabulary v(detail::parse_u64(fields["threshold"], "threshold"),
                 detail::unescape_field(fields["delimiters"]));
    for (std::size_t i = 2; i < lines.size(); ++i) {
      auto cols = detail::split_tabs(lines[i]);
      if (cols.size() != 2) {
        throw ParseError(source + ":" + std::to_string(i + 1) + ": expected token<TAB>frequency");
      }
      v.tokens_.push_back(detail::unescape_field(cols[0]));
      v.frequencies_.push_back(detail::parse_u64(cols[1], "frequency"));
    }
    v.reindex();
    if (v.size() != detail::parse_u64(fields["size"], "size")) {
      throw ParseError(source + ": header size does not match the body");
    }
    if (v.body_sha256() != fields["sha256"]) {
      throw ParseError(source + ": SHA-256 mismatch, file is corrupt");
    }
    if (v.index_.size() != v.tokens_.size()) {
      throw ParseError(source + ": duplicate token");
    }
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary '" + path + "'");
    out << serialize();
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.frequencies_ == b.frequencies_ &&
           a.threshold_ == b.threshold_ && a.delimiters_ == b.delimiters_;
  }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      index_.emplace(tokens_[i], static_cast<std::int32_t>(i));
    }
  }

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> frequencies_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::size_t threshold_;
  std::string delimiters_;
};

// Counts one occurrence per token per instruction over the whole corpus and
// keeps tokens seen at least `threshold` times.
inline Vocabulary build_vocab(const CorpusIndex& corpus,
                              std::size_t threshold = kDefaultFrequencyThreshold,
                              std::string_view delimiters = kDefaultDelimiters,
                              std::vector<std::string>* warnings = nullptr) {
  if (threshold == 0) throw Error("frequency threshold must be >= 1");
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const FunctionRecord& r : corpus.records()) {
    for (const std::string& ins : r.instructions) {
      for (std::string& tok : split_instruction(ins, delimiters)) ++counts[std::move(tok)];
    }
  }
  if (corpus.empty() && warnings) {
    warnings->push_back("empty corpus: vocabulary holds only PAD and UNK");
  }
  return Vocabulary::from_counts(counts, threshold, std::string(delimiters));
}

// S x K token ids (row-major) plus one clamped position id per instruction.
struct EncodedFunction {
  std::size_t instructions = 0;
  std::size_t tokens_per_instruction = 0;
  std::vector<std::int32_t> token_ids;
  std::vector<std::int32_t> position_ids;

  std::int32_t token(std::size_t row, std::size_t slot) const {
    return token_ids[row * tokens_per_instruction + slot];
  }

  friend bool operator==(const EncodedFunction&, const EncodedFunction&) = default;
};

inline EncodedFunction encode_instructions(const Vocabulary& vocab,
                                           const std::vector<std::string>& instructions,
                                           std::size_t tokens_per_instruction = kDefaultTokensPerInstruction,
                                           std::size_t max_positions = kDefaultMaxPositions) {
  if (tokens_per_instruction == 0) throw Error("K must be >= 1");
  if (max_positions == 0) throw Error("P_max must be >= 1");
  if (instructions.empty()) throw DataError("cannot encode a function with no instructions");
  EncodedFunction enc;
  enc.instructions = instructions.size();
  enc.tokens_per_instruction = tokens_per_instruction;
  enc.token_ids.assign(instructions.size() * tokens_per_instruction, Vocabulary::kPad);
  enc.position_ids.resize(instructions.size());
  for (std::size_t i = 0; i < instructions.size(); ++i) {
    auto tokens = split_instruction(instructions[i], vocab.delimiters());
    const std::size_t keep = std::min(tokens.size(), tokens_per_instruction);
    for (std::size_t k = 0; k < keep; ++k) {
      enc.token_ids[i * tokens_per_instruction + k] = vocab.id_of(tokens[k]);
    }
    enc.position_ids[i] = static_cast<std::int32_t>(std::min(i, max_positions - 1));
  }
  return enc;
}

inline EncodedFunction encode_function(const Vocabulary& vocab, const FunctionRecord& record,
                                       std::size_t tokens_per_instruction = kDefaultTokensPerInstruction,
                                       std::size_t max_positions = kDefaultMaxPositions) {
  return encode_instructions(vocab, record.instructions, tokens_per_instruction, max_positions);
}

}  // namespace bcsd

#endif  // BCSD_TOKENIZER_HPP
