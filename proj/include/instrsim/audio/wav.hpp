#pragma once

// Minimal RIFF/WAVE reader and writer. Reads PCM 8/16/24/32-bit and IEEE
// float32/64, any channel count (downmixed to mono by averaging). Writes mono
// PCM16 or float32.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "instrsim/common.hpp"

namespace instrsim::audio {

enum class WavEncoding { pcm16, float32 };

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

}  // namespace detail

inline Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) -> IngestionError {
    return IngestionError("'" + path.string() + "': " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    std::uint32_t size = detail::read_u32(chunk + 4);
    std::size_t body = pos + 8;
    if (body + size > bytes.size()) size = static_cast<std::uint32_t>(bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw fail("truncated fmt chunk");
      const unsigned char* f = bytes.data() + body;
      format = detail::read_u16(f);
      channels = detail::read_u16(f + 2);
      rate = detail::read_u32(f + 4);
      bits = detail::read_u16(f + 14);
      if (format == 0xFFFE && size >= 26) format = detail::read_u16(f + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1u);
  }
  if (channels == 0 || rate == 0) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  const bool is_float = format == 3;
  if (!is_float && format != 1) throw fail("unsupported format tag " + std::to_string(format));
  if (is_float && bits != 32 && bits != 64) throw fail("unsupported float width");
  if (!is_float && bits != 8 && bits != 16 && bits != 24 && bits != 32)
    throw fail("unsupported PCM width");

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frame = bytes_per_sample * channels;
  const std::size_t n = data_size / frame;
  Waveform w;
  w.sample_rate_hz = static_cast<int>(rate);
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const unsigned char* s = data + i * frame + ch * bytes_per_sample;
      double v = 0.0;
      if (is_float && bits == 32) {
        float f;
        std::uint32_t u = detail::read_u32(s);
        std::memcpy(&f, &u, 4);
        v = f;
      } else if (is_float) {
        std::uint64_t u = static_cast<std::uint64_t>(detail::read_u32(s)) |
                          (static_cast<std::uint64_t>(detail::read_u32(s + 4)) << 32);
        double d;
        std::memcpy(&d, &u, 8);
        v = d;
      } else if (bits == 8) {
        v = (static_cast<int>(s[0]) - 128) / 128.0;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(detail::read_u16(s)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t x = static_cast<std::int32_t>(s[0] | (s[1] << 8) | (s[2] << 16));
        if (x & 0x800000) x |= ~0xFFFFFF;
        v = x / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(detail::read_u32(s)) / 2147483648.0;
      }
      acc += v;
    }
    w.samples[i] = static_cast<float>(acc / channels);
  }
  return w;
}

inline void write_wav(const std::filesystem::path& path, const Waveform& w,
                      WavEncoding encoding = WavEncoding::float32) {
  const bool f32 = encoding == WavEncoding::float32;
  const std::uint16_t bits = f32 ? 32 : 16;
  const std::uint32_t data_size = static_cast<std::uint32_t>(w.samples.size() * (bits / 8));
  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  detail::put_u32(out, 36 + data_size);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, f32 ? 3 : 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz) * (bits / 8));
  detail::put_u16(out, bits / 8);
  detail::put_u16(out, bits);
  out += "data";
  detail::put_u32(out, data_size);
  for (float s : w.samples) {
    if (f32) {
      std::uint32_t u;
      std::memcpy(&u, &s, 4);
      detail::put_u32(out, u);
    } else {
      double c = std::clamp(static_cast<double>(s), -1.0, 1.0);
      auto q = static_cast<std::int16_t>(std::lround(c * 32767.0));
      detail::put_u16(out, static_cast<std::uint16_t>(q));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace instrsim::audio
