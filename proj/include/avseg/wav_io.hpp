// Minimal RIFF/WAVE support: 16-bit PCM read/write, mono. Stereo input is
// averaged to mono on load.
#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "avseg/image_io.hpp"  // detail::open_file
#include "avseg/tensor.hpp"

namespace avseg {

struct WavData {
  long sample_rate = 0;
  std::vector<double> samples;  // mono, in [-1, 1]
};

namespace detail {

inline void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
  b.push_back((v >> 16) & 0xff);
  b.push_back((v >> 24) & 0xff);
}
inline void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}
inline uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t get_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

inline void write_wav(const std::string& path, const std::vector<double>& samples,
                      long sample_rate) {
  std::vector<uint8_t> out;
  uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<uint32_t>(sample_rate));
  detail::put_u32(out, static_cast<uint32_t>(sample_rate * 2));
  detail::put_u16(out, 2);   // block align
  detail::put_u16(out, 16);  // bits per sample
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(out, data_bytes);
  for (double s : samples) {
    double v = std::min(1.0, std::max(-1.0, s));
    auto q = static_cast<int16_t>(std::lround(v * 32767.0));
    detail::put_u16(out, static_cast<uint16_t>(q));
  }
  auto f = detail::open_file(path, "wb");
  if (std::fwrite(out.data(), 1, out.size(), f.get()) != out.size())
    throw Error("short write: " + path);
}

inline WavData read_wav(const std::string& path) {
  auto f = detail::open_file(path, "rb");
  std::fseek(f.get(), 0, SEEK_END);
  long len = std::ftell(f.get());
  std::fseek(f.get(), 0, SEEK_SET);
  std::vector<uint8_t> buf(static_cast<size_t>(len));
  if (std::fread(buf.data(), 1, buf.size(), f.get()) != buf.size())
    throw Error("short read: " + path);
  if (len < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw Error("not a RIFF/WAVE file: " + path);

  long pos = 12;
  int channels = 0, bits = 0;
  long sample_rate = 0;
  const uint8_t* data = nullptr;
  uint32_t data_len = 0;
  while (pos + 8 <= len) {
    const uint8_t* hdr = buf.data() + pos;
    uint32_t chunk_len = detail::get_u32(hdr + 4);
    const uint8_t* body = hdr + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0 && chunk_len >= 16) {
      if (detail::get_u16(body) != 1) throw Error("only PCM wav supported: " + path);
      channels = detail::get_u16(body + 2);
      sample_rate = detail::get_u32(body + 4);
      bits = detail::get_u16(body + 14);
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  if (!data || channels < 1 || bits != 16)
    throw Error("unsupported or truncated wav: " + path);

  WavData out;
  out.sample_rate = sample_rate;
  long frames = data_len / (2 * channels);
  out.samples.resize(frames);
  for (long i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      auto raw = static_cast<int16_t>(detail::get_u16(data + (i * channels + c) * 2));
      acc += static_cast<double>(raw) / 32767.0;
    }
    out.samples[i] = acc / channels;
  }
  return out;
}

}  // namespace avseg
