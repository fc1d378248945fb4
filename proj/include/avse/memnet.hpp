// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>

#include "avse/senet.hpp"
#include "avse/tape.hpp"
#include "avse/tensor.hpp"

namespace avse::memnet {

// Paired lip-key / tongue-value memories bolted onto the two-articulation
// model right after the articulation stems. Lip features address the key
// memory; the value rows recalled through that address replace the tongue
// stream, so inference needs no tongue images at all.
struct MemoryConfig {
  int slots = 512;
  double gamma = 1.0;   // similarity sharpness inside the softmax
  double beta1 = 0.01;  // saving-loss weight
  double beta2 = 0.001; // alignment-loss weight
  uint64_t init_seed = 7;
};

struct MemoryBank {
  nn::Tensor lip_keys;       // [N, D']
  nn::Tensor tongue_values;  // [N, D']
  double gamma = 1.0;

  int slot_count() const { return lip_keys.dim(0); }
  int feat_dim() const { return lip_keys.dim(1); }
};

// Zero-mean entries scaled by 1/sqrt(feat_dim), seeded.
MemoryBank init_memory(int slots, int feat_dim, double gamma, uint64_t seed);

// The bank rides inside the model checkpoint under reserved names.
inline constexpr const char* kLipKeysName = "memory.lip_keys";
inline constexpr const char* kTongueValuesName = "memory.tongue_values";

void attach_memory(senet::ParamStore& params, const MemoryBank& bank);
bool has_memory(const senet::ParamStore& params);
MemoryBank read_memory(const senet::ParamStore& params, double gamma);
// Frozen memories receive no gradient updates; everything else still trains.
void set_frozen(senet::ParamStore& params, bool frozen);

// query [Q, D'], keys [N, D'] -> [Q, N]: softmax over slots of gamma times
// the cosine similarity. Zero-norm frames or slots are degenerate (DataError).
int address(nn::Tape& t, int query, int keys, double gamma);

// values [N, D'], addressing [Q, N] -> [Q, D']: per-frame weighted slot sum.
int recall(nn::Tape& t, int values, int addressing);

// Mean over frames of the squared distance between real and recalled rows.
int save_loss(nn::Tape& t, int real_frames, int recalled);

// Mean over frames of KL(tongue_addr || lip_addr); probabilities are clamped
// at 1e-9 below before the log ratio.
int align_loss(nn::Tape& t, int tongue_addr, int lip_addr);

// L_SE + beta1 * L_Save + beta2 * L_Align.
int mem_total(nn::Tape& t, int se, int save, int align, double beta1,
              double beta2);

struct MemoryForward {
  senet::ModelOutput out;
  int lip_addr = -1;     // [B*S, N]
  int recalled = -1;     // [B, C, S, D], lip-recalled tongue features
  int tongue_addr = -1;  // the rest only in training mode
  int save = -1;
  int align = -1;
};

// Runs the model with the tongue stream fed by lip-recalled features in both
// modes. Training mode additionally pushes the real tongue images through
// the tongue stem to form the tongue addressing and the save/align losses;
// inference is a pure function of (audio, lip, parameters).
MemoryForward forward_with_memory(nn::Tape& t, senet::Model& model,
                                  const MemoryConfig& mc,
                                  const nn::Tensor& noisy_spec,
                                  const nn::Tensor* lip3,
                                  const nn::Tensor* tongue3, bool training);

}  // namespace avse::memnet
