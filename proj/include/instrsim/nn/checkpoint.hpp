#pragma once

// Checkpoint layout: 8-byte magic "ISCKPT01", u64 LE header length, JSON
// header {config, seed, step, meta, tensors:[{name, kind, shape, offset, size}]},
// then all tensors as float32 little-endian in header order.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "instrsim/nn/encoder.hpp"

namespace instrsim::nn {

inline constexpr char kCheckpointMagic[8] = {'I', 'S', 'C', 'K', 'P', 'T', '0', '1'};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  long step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

namespace detail {
inline void put_f32(std::string& out, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}
inline float get_f32(const unsigned char* p) {
  std::uint32_t u = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}
}  // namespace detail

inline std::string serialize_checkpoint(const Encoder<float>& enc, const CheckpointMeta& meta) {
  nlohmann::json h;
  h["config"] = enc.config();
  h["seed"] = meta.seed;
  h["step"] = meta.step;
  h["meta"] = meta.extra;
  h["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  auto list = [&](const ParameterSet<float>& set, const char* kind) {
    for (const auto& t : set.tensors) {
      h["tensors"].push_back({{"name", t.name}, {"kind", kind}, {"shape", t.shape},
                              {"offset", offset}, {"size", t.size}});
      offset += t.size;
    }
  };
  list(enc.params(), "param");
  list(enc.buffers(), "buffer");
  const std::string header = h.dump();
  std::string out(kCheckpointMagic, 8);
  std::uint64_t len = header.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
  out += header;
  for (float v : enc.params().values) detail::put_f32(out, v);
  for (float v : enc.buffers().values) detail::put_f32(out, v);
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const Encoder<float>& enc,
                            const CheckpointMeta& meta) {
  const std::string bytes = serialize_checkpoint(enc, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Encoder<float> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw FormatError("'" + path.string() + "' is not a checkpoint");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + static_cast<std::size_t>(i)])) << (8 * i);
  if (16 + len > bytes.size()) throw FormatError("truncated checkpoint header");
  auto h = nlohmann::json::parse(bytes.substr(16, len));
  Encoder<float> enc(h.at("config").get<EncoderConfig>());
  const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data()) + 16 + len;
  const std::size_t available = (bytes.size() - 16 - len) / 4;
  for (const auto& t : h.at("tensors")) {
    auto& set = t.at("kind") == "param" ? enc.params() : enc.buffers();
    const auto& info = set.info(t.at("name").get<std::string>());
    const std::size_t off = t.at("offset"), size = t.at("size");
    if (size != info.size || off + size > available)
      throw FormatError("tensor '" + info.name + "' does not match the configured shape");
    for (std::size_t i = 0; i < size; ++i) set.values[info.offset + i] = detail::get_f32(payload + 4 * (off + i));
  }
  if (meta) {
    meta->seed = h.value("seed", std::uint64_t{0});
    meta->step = h.value("step", 0L);
    meta->extra = h.value("meta", nlohmann::json::object());
  }
  return enc;
}

}  // namespace instrsim::nn
