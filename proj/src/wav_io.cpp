// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/wav_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "avse/common.hpp"

namespace avse {

namespace {

void put_u32(std::ofstream& f, uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  f.write(b, 4);
}
void put_u16(std::ofstream& f, uint16_t v) {
  char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  f.write(b, 2);
}
uint32_t get_u32(const unsigned char* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}
uint16_t get_u16(const unsigned char* p) {
  return uint16_t(p[0] | p[1] << 8);
}

}  // namespace

void write_wav(const std::string& path, const std::vector<double>& samples,
               int sample_rate) {
  check_config(sample_rate > 0, "write_wav: sample_rate must be positive");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_wav: cannot open " + path);

  const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
  f.write("RIFF", 4);
  put_u32(f, 36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put_u32(f, 16);
  put_u16(f, 1);  // PCM
  put_u16(f, 1);  // mono
  put_u32(f, static_cast<uint32_t>(sample_rate));
  put_u32(f, static_cast<uint32_t>(sample_rate * 2));
  put_u16(f, 2);   // block align
  put_u16(f, 16);  // bits
  f.write("data", 4);
  put_u32(f, data_bytes);
  for (double s : samples) {
    double c = std::clamp(s, -1.0, 1.0);
    // 32767 keeps +1.0 and -1.0 representable and round-trip symmetric.
    int16_t q = static_cast<int16_t>(std::lround(c * 32767.0));
    put_u16(f, static_cast<uint16_t>(q));
  }
  if (!f) throw IoError("write_wav: short write to " + path);
}

std::vector<double> read_wav(const std::string& path, int* sample_rate) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_wav: cannot open " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 44 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
    throw IoError("read_wav: not a RIFF/WAVE file: " + path);

  size_t pos = 12;
  int channels = 0, bits = 0, rate = 0;
  std::vector<double> samples;
  bool got_fmt = false, got_data = false;
  while (pos + 8 <= raw.size()) {
    const char* id = reinterpret_cast<const char*>(raw.data() + pos);
    uint32_t size = get_u32(raw.data() + pos + 4);
    size_t body = pos + 8;
    if (body + size > raw.size()) throw IoError("read_wav: truncated chunk in " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw IoError("read_wav: bad fmt chunk in " + path);
      uint16_t format = get_u16(raw.data() + body);
      channels = get_u16(raw.data() + body + 2);
      rate = static_cast<int>(get_u32(raw.data() + body + 4));
      bits = get_u16(raw.data() + body + 14);
      if (format != 1) throw IoError("read_wav: only PCM supported: " + path);
      got_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!got_fmt) throw IoError("read_wav: data before fmt in " + path);
      if (channels != 1 || bits != 16)
        throw IoError("read_wav: only mono 16-bit supported: " + path);
      size_t n = size / 2;
      samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        int16_t q = static_cast<int16_t>(get_u16(raw.data() + body + 2 * i));
        samples[i] = static_cast<double>(q) / 32767.0;
      }
      got_data = true;
    }
    pos = body + size + (size & 1);
  }
  if (!got_data) throw IoError("read_wav: no data chunk in " + path);
  if (sample_rate) *sample_rate = rate;
  return samples;
}

}  // namespace avse
