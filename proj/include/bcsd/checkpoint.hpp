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

// Binary checkpoint format, all integers little-endian:
//
//   "BCSDCKPT"                      8-byte magic
//   u32 version                     currently 1
//   u64 n, n bytes                  header JSON (sorted keys): backbone
//                                   config, vocabulary file text, metadata
//   u32 parameter count
//   per parameter:
//     u32 n, n bytes                name
//     u32 rank, rank x u64          shape
//     product(shape) x f32          values
//   32 bytes                        SHA-256 of everything above

#ifndef BCSD_CHECKPOINT_HPP
#define BCSD_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "bcsd/backbones.hpp"
#include "bcsd/errors.hpp"
#include "bcsd/sha256.hpp"
#include "bcsd/tokenizer.hpp"

namespace bcsd {

inline constexpr std::string_view kCheckpointMagic = "BCSDCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Backbone<float> model;
  Vocabulary vocab;
  nlohmann::json metadata = nlohmann::json::object();
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw DataError(source_ + ": truncated checkpoint");
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t uint(int width) {
    std::string_view s = take(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    }
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Backbone<float>& model, const Vocabulary& vocab,
                                        const nlohmann::json& metadata = nlohmann::json::object()) {
  if (model.config().vocab_size != vocab.size()) {
    throw Error("model vocabulary size " + std::to_string(model.config().vocab_size) +
                " does not match vocabulary of " + std::to_string(vocab.size()));
  }
  nlohmann::json header;
  header["backbone"] = model.config().to_json();
  header["vocabulary"] = vocab.serialize();
  header["metadata"] = metadata;
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, header_text.size());
  out += header_text;
  const ParameterSet<float>& params = model.params();
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<float>& p = params[i];
    detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t extent : p.value.shape()) detail::put_u64(out, extent);
    for (float v : p.value.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  const Digest digest = Sha256().update(out).finish();
  out.append(reinterpret_cast<const char*>(digest.data()), digest.size());
  return out;
}

inline Checkpoint parse_checkpoint(std::string_view bytes, const std::string& source = "checkpoint") {
  if (bytes.size() < kCheckpointMagic.size() + 32 ||
      bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw DataError(source + ": not a checkpoint file");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 32);
  const Digest digest = Sha256().update(body).finish();
  if (std::memcmp(digest.data(), bytes.data() + body.size(), digest.size()) != 0) {
    throw DataError(source + ": checksum mismatch");
  }
  detail::ByteReader r(body, source);
  r.take(kCheckpointMagic.size());
  const std::uint64_t version = r.uint(4);
  if (version != kCheckpointVersion) {
    throw DataError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.take(r.uint(8)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source + ": bad header: " + e.what());
  }
  BackboneConfig config = BackboneConfig::from_json(header.at("backbone"));
  Checkpoint ckpt{Backbone<float>(config),
                  Vocabulary::parse(header.at("vocabulary").get<std::string>(), source),
                  header.value("metadata", nlohmann::json::object())};
  if (ckpt.vocab.size() != config.vocab_size) {
    throw DataError(source + ": vocabulary size does not match the model");
  }

  ParameterSet<float>& params = ckpt.model.params();
  const std::uint64_t count = r.uint(4);
  if (count != params.size()) {
    throw DataError(source + ": expected " + std::to_string(params.size()) +
                    " parameters, found " + std::to_string(count));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<float>& p = params[i];
    const std::string name(r.take(r.uint(4)));
    if (name != p.name) {
      throw DataError(source + ": expected parameter '" + p.name + "', found '" + name + "'");
    }
    Shape shape(r.uint(4));
    for (std::size_t& extent : shape) extent = r.uint(8);
    if (shape != p.value.shape()) {
      throw DataError(source + ": parameter '" + name + "' has shape " + to_string(shape) +
                      ", model expects " + to_string(p.value.shape()));
    }
    for (float& v : p.value.data()) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));
  }
  if (r.remaining() != 0) throw DataError(source + ": trailing bytes after parameters");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Backbone<float>& model,
                            const Vocabulary& vocab,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  const std::string bytes = serialize_checkpoint(model, vocab, metadata);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path);
}

}  // namespace bcsd

#endif  // BCSD_CHECKPOINT_HPP
