// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avse/dsp.hpp"
#include "avse/rng.hpp"
#include "avse/tensor.hpp"

namespace avse::synth {

// Everything the generator needs; a pure function of (this, seed) produces
// the corpus. Video frames are emitted exactly at the STFT frame rate, so
// the video/spectrogram alignment invariant holds by construction.
struct GenConfig {
  dsp::StftConfig stft;
  int sample_rate = 16000;
  int image_h = 16;
  int image_w = 32;
  int pseudo_phonemes = 8;  // P
  double min_duration_s = 1.8;
  double max_duration_s = 2.2;
  int min_segment_frames = 5;
  int max_segment_frames = 20;
  double easing = 0.35;  // per-frame pull toward segment targets
  int speakers_train = 10;
  int speakers_unseen = 2;
  int utterances = 200;
  double train_frac = 0.8;
  double valid_frac = 0.1;
  uint64_t seed = 1234;

  double frame_rate() const {
    return static_cast<double>(sample_rate) / stft.hop;
  }
  void validate() const;
};

struct SpeakerParams {
  double f0_hz;
  double f1_offset_hz;
  double f2_offset_hz;
};

struct LatentTrajectory {
  std::vector<double> aperture;  // [S], lip opening in [0,1]
  std::vector<double> tongue;    // [S], tongue height in [0,1]
  std::vector<int> labels;       // [S], pseudo-phoneme ids
  double frame_rate = 0.0;
};

struct ImageSequence {
  nn::Tensor frames;  // [S, H, W] in [0,1]
  std::string modality;
};

// Per-label articulation targets. Aperture rises with label id; tongue
// follows a fixed scrambled order blended with a small aperture term, so
// tongue content is a deterministic function of (label, aperture) yet not
// readable from a single lip frame.
double aperture_target(int label, int P);
double tongue_target(int label, int P);

// forced_label >= 0 pins every segment to that label (test hook).
LatentTrajectory sample_trajectory(const GenConfig& cfg, Rng& rng,
                                   int forced_label = -1);

SpeakerParams speaker_params(const GenConfig& cfg, int speaker_id);

// Resonance centers as affine maps of the latent states; exposed so tests
// can peak-pick against the same prediction the renderer used.
double f1_center_hz(double aperture, const SpeakerParams& spk);
double f2_center_hz(double tongue, const SpeakerParams& spk);

dsp::Waveform render_audio(const LatentTrajectory& traj,
                           const SpeakerParams& spk, const GenConfig& cfg);
ImageSequence render_lip(const LatentTrajectory& traj, const GenConfig& cfg);
ImageSequence render_tongue(const LatentTrajectory& traj, const GenConfig& cfg,
                            Rng& rng);

// Full deflection of the tongue arc between tongue_state 0 and 1, in pixels.
double tongue_deflection_px(const GenConfig& cfg);

struct UttRecord {
  std::string id;
  int speaker_id = 0;
  bool unseen_speaker = false;
  std::string split;  // train / valid / test
  int frames = 0;
  int64_t samples = 0;
  double duration_s = 0.0;
  std::string audio_path, lip_path, tongue_path, labels_path;  // manifest-relative
};

struct NoiseRecord {
  std::string name;
  std::string path;
  std::string split;  // seen / unseen
};

struct CorpusManifest {
  std::string root;
  uint64_t seed = 0;
  std::string config_hash;
  dsp::StftConfig stft;
  int sample_rate = 16000;
  int image_h = 0, image_w = 0;
  int pseudo_phonemes = 0;
  int speakers_train = 0, speakers_unseen = 0;
  std::vector<UttRecord> utterances;
  std::vector<NoiseRecord> noises;

  std::vector<int> split_indices(const std::string& split) const;
  std::vector<const NoiseRecord*> noises_in(const std::string& split) const;
  std::string resolve(const std::string& rel) const;
};

CorpusManifest generate_corpus(const GenConfig& cfg, const std::string& out_dir);
CorpusManifest load_manifest(const std::string& manifest_path);

// Per-frame labels as stored next to each utterance.
struct LabelFile {
  int speaker_id = 0;
  std::vector<int> labels;
  std::vector<double> aperture, tongue;
};
LabelFile read_labels(const std::string& path);

// channel 0 = raw frames, 1 = per-utterance pixel mean (repeated),
// 2 = per-utterance pixel population std (repeated). [S,H,W] -> [3,S,H,W].
nn::Tensor append_stats_channels(const nn::Tensor& seq);

struct MixSpec {
  std::vector<double> snr_choices = {0.0, -5.0, -10.0};
  std::string noise_split = "seen";
};

struct Batch {
  nn::Tensor noisy_spec, clean_spec;  // [b, 2, F, S]
  nn::Tensor lip3, tongue3;           // [b, 3, S, H, W]
  std::vector<std::vector<int>> labels;
  std::vector<int> speaker_ids;
  std::vector<double> snr_db;
  int frames() const { return noisy_spec.dim(3); }
  int items() const { return noisy_spec.dim(0); }
};

Batch load_batch(const CorpusManifest& manifest, const std::vector<std::string>& ids,
                 const dsp::StftConfig& stft_cfg, const MixSpec& mix, Rng& rng);

}  // namespace avse::synth
