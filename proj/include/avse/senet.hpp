// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "avse/tape.hpp"
#include "avse/tensor.hpp"

namespace avse::senet {

enum class Modality { kAudio, kAudioLip, kAudioTongue, kAudioLipTongue };

inline bool uses_lip(Modality m) {
  return m == Modality::kAudioLip || m == Modality::kAudioLipTongue;
}
inline bool uses_tongue(Modality m) {
  return m == Modality::kAudioTongue || m == Modality::kAudioLipTongue;
}
std::string modality_name(Modality m);
Modality modality_from_name(const std::string& name);

// The enhancer is a U-shaped masking network over complex spectrograms.
// Audio is squeezed along frequency by a strided stem, articulation streams
// by a strided 3-D stem; both sides then run a ladder of conv blocks that
// halve the feature axis. Per depth the streams are concatenated (and, with
// two articulation streams, linearly fused), an LSTM bridges the bottleneck,
// and a decoder with skip connections expands back to a complex ratio mask.
struct ModelConfig {
  Modality modality = Modality::kAudioLipTongue;
  int freq_bins = 257;
  int channels = 8;     // conv width everywhere
  int lstm_hidden = 32;
  int image_h = 16;
  int image_w = 32;
  int image_channels = 3;
  int blocks = 7;       // feature blocks per stream
  double leaky_slope = 0.2;
  uint64_t init_seed = 42;

  static ModelConfig toy(Modality m);
  static ModelConfig full(Modality m);
  void validate() const;

  // audio_widths()[k] is the audio feature width entering depth k taps
  // (k = 0 is the stem output); likewise for the articulation stream after
  // its stem is flattened to one feature axis.
  std::vector<int> audio_widths() const;
  std::vector<int> artic_widths() const;
  int artic_flat_width() const;  // articulation stem output H'*W'
  int audio_stem_mid() const;
  // Width of the concatenated audio+articulation representation per depth.
  std::vector<int> merged_widths() const;
  int lstm_input_size() const;
  bool has_fusion() const { return modality == Modality::kAudioLipTongue; }
};

struct ParamEntry {
  nn::Tensor value;
  bool trainable = true;
};

// Named parameter table. Batch-norm running statistics live here too (as
// non-trainable entries suffixed .running_mean / .running_var), so one
// serialization path covers everything.
class ParamStore {
 public:
  nn::Tensor& create(const std::string& name, std::vector<int> shape,
                     bool trainable);
  bool has(const std::string& name) const;
  nn::Tensor& get(const std::string& name);
  const nn::Tensor& get(const std::string& name) const;
  std::map<std::string, ParamEntry>& entries() { return entries_; }
  const std::map<std::string, ParamEntry>& entries() const { return entries_; }
  int64_t trainable_elements() const;
  // FNV-1a over names, shapes and raw values; used to prove a frozen model
  // was not touched by a training step.
  uint64_t content_hash() const;

  static bool is_running_stat(const std::string& name);

 private:
  std::map<std::string, ParamEntry> entries_;
};

struct AudioEncoding {
  std::vector<int> levels;  // size blocks+1, levels[0] = stem output
};

struct ArtEncoding {
  int early = -1;          // [B, C, S, D_v0], the memory query/value features
  std::vector<int> deep;   // size blocks, outputs of the feature blocks
};

struct ModelOutput {
  int mask = -1;      // [B, 2, F, S], tanh-bounded complex ratio mask
  int enhanced = -1;  // [B, 2, F, S], mask applied to the noisy input
  // Distillation taps: merged features per depth (blocks+1), the LSTM
  // bridge output, then each decoder stage top-down.
  std::vector<int> taps;
  int early_lip = -1;
  int early_tongue = -1;
  std::map<std::string, int> param_nodes;
};

// Per-forward context: the tape, the leafed parameter nodes, and the mode.
struct ForwardCtx {
  nn::Tape* tape = nullptr;
  std::map<std::string, int> pn;
  bool training = false;
};

// Existing tape nodes substituted for a stream's stem output; the memory
// module feeds recalled tongue features (and its already-computed lip stem)
// through these so every parameter is leafed exactly once.
struct Overrides {
  int lip_early = -1;
  int tongue_early = -1;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // A frozen model leafs its parameters without gradient tracking and never
  // writes batch-norm running statistics, so its weights cannot drift. It may
  // still run training-mode passes; the flag then only selects batch
  // statistics for normalization (a teacher sharing the student's view).
  void set_frozen(bool frozen) { frozen_ = frozen; }
  bool frozen() const { return frozen_; }

  ForwardCtx begin_forward(nn::Tape& t, bool training);

  AudioEncoding encode_audio(ForwardCtx& ctx, const nn::Tensor& noisy_spec);
  // stream is "lip" or "tongue"; images are [B, 3, S, H, W].
  int articulation_stem(ForwardCtx& ctx, const nn::Tensor& images,
                        const std::string& stream);
  ArtEncoding articulation_blocks(ForwardCtx& ctx, int early,
                                  const std::string& stream);
  ArtEncoding encode_articulation(ForwardCtx& ctx, const nn::Tensor& images,
                                  const std::string& stream);
  // Combine per-depth articulation features (either node may be -1 when the
  // stream is absent; with both present a learned linear map fuses them).
  int fuse_articulation(ForwardCtx& ctx, int lip_k, int tongue_k, int depth);

  // Full pass. Image pointers may be null when the modality does not use
  // them or an override supplies the stream.
  ModelOutput forward(nn::Tape& t, const nn::Tensor& noisy_spec,
                      const nn::Tensor* lip3, const nn::Tensor* tongue3,
                      bool training, int tongue_early_override = -1);
  // Same pass on a caller-created context, so extra graph (memory addressing,
  // auxiliary losses) can share the parameter leaves.
  ModelOutput forward_in(ForwardCtx& ctx, const nn::Tensor& noisy_spec,
                         const nn::Tensor* lip3, const nn::Tensor* tongue3,
                         const Overrides& ov = Overrides());

 private:
  int bn_apply(ForwardCtx& ctx, int x, const std::string& prefix);
  int conv_block(ForwardCtx& ctx, int x, const std::string& prefix,
                 const nn::ConvSpec& spec);

  ModelConfig cfg_;
  ParamStore params_;
  bool frozen_ = false;
};

// Element-wise tanh-compressed complex ratio mask target for [B,2,F,S]
// spectrogram pairs; matches the single-spectrogram dsp routine.
nn::Tensor make_mask_target(const nn::Tensor& clean_spec,
                            const nn::Tensor& noisy_spec, double eps = 1e-8);

// Mask regression MSE plus alpha times enhanced-spectrogram MSE.
int loss_se(nn::Tape& t, const ModelOutput& out,
            const nn::Tensor& mask_target, const nn::Tensor& clean_spec,
            double alpha);

// Checkpoints: magic line, JSON header (config, meta, entry table), raw
// little-endian doubles. Strict load requires identical config and entries.
void save_checkpoint(const Model& model, const std::string& path,
                     const std::map<std::string, std::string>& meta = {});
std::map<std::string, std::string> load_checkpoint(Model& model,
                                                   const std::string& path);
ModelConfig peek_checkpoint_config(const std::string& path);
std::map<std::string, std::string> peek_checkpoint_meta(const std::string& path);

struct PartialLoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing_in_checkpoint;
  std::vector<std::string> shape_mismatch;
};
// Copy every same-name same-shape entry from the checkpoint; leave the rest
// at their current values. Used to seed a student from a teacher.
PartialLoadReport load_partial_weights(Model& model, const std::string& path);

}  // namespace avse::senet
