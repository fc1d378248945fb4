// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/imgio.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "avse/common.hpp"

namespace avse {

namespace {
constexpr char kMagic[8] = {'A', 'V', 'I', 'M', 'G', '0', '1', '\n'};
}

void write_image_stack(const std::string& path, const nn::Tensor& stack) {
  check_dims(stack.rank() == 3, "write_image_stack: stack must be [frames, h, w]");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_image_stack: cannot open " + path);
  f.write(kMagic, 8);
  uint32_t dims[3] = {static_cast<uint32_t>(stack.dim(0)),
                      static_cast<uint32_t>(stack.dim(1)),
                      static_cast<uint32_t>(stack.dim(2))};
  f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  std::vector<float> buf(static_cast<size_t>(stack.numel()));
  for (int64_t i = 0; i < stack.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(stack[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw IoError("write_image_stack: short write to " + path);
}

nn::Tensor read_image_stack(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_image_stack: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("read_image_stack: bad magic in " + path);
  uint32_t dims[3];
  f.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!f) throw IoError("read_image_stack: truncated header in " + path);
  nn::Tensor out({static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                  static_cast<int>(dims[2])});
  std::vector<float> buf(static_cast<size_t>(out.numel()));
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw IoError("read_image_stack: truncated data in " + path);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
  return out;
}

}  // namespace avse
