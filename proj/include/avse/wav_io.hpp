// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <string>
#include <vector>

namespace avse {

// Mono 16-bit PCM WAV. Samples are doubles in [-1, 1]; values outside are
// clipped on write. Anything but mono PCM16 on read is an IoError.
void write_wav(const std::string& path, const std::vector<double>& samples,
               int sample_rate);
std::vector<double> read_wav(const std::string& path, int* sample_rate);

}  // namespace avse
