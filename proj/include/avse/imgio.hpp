// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <string>

#include "avse/tensor.hpp"

namespace avse {

// Image stream container: one file per utterance per modality, holding a
// [frames, height, width] stack. Values are stored as little-endian float32
// (pixels live in [0,1], so float32 is lossless enough and halves disk use).
void write_image_stack(const std::string& path, const nn::Tensor& stack);
nn::Tensor read_image_stack(const std::string& path);

}  // namespace avse
