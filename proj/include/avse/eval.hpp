// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "avse/dsp.hpp"
#include "avse/memnet.hpp"
#include "avse/senet.hpp"
#include "avse/synthdata.hpp"
#include "avse/tensor.hpp"

namespace avse::eval {

struct SegSnrConfig {
  double segment_ms = 30.0;
  double clamp_min_db = -10.0;
  double clamp_max_db = 35.0;
  void validate() const;
};

// Mean over full non-overlapping segments of the clamped per-segment ratio
// 10 log10(sum ref^2 / sum (ref-est)^2); segments with a silent reference
// are skipped. The reference supplies the numerator, so the measure is
// directional.
double segsnr_db(const dsp::Waveform& ref, const dsp::Waveform& est,
                 const SegSnrConfig& cfg = SegSnrConfig());

// Rational-factor resampler: zero-stuff by up, windowed-sinc lowpass at the
// tighter of the two Nyquist limits, keep every down-th sample. Exposed for
// the intelligibility tests.
std::vector<double> resample_poly(const std::vector<double>& x, int up,
                                  int down);

// Short-time objective intelligibility: resample both signals to 10 kHz,
// drop frames 40 dB below the loudest reference frame, analyze 256/128 Hann
// frames padded to a 512 FFT, 15 one-third-octave bands from 150 Hz,
// 30-frame envelope segments with -15 dB clipping, mean correlation.
double stoi(const dsp::Waveform& ref, const dsp::Waveform& est);

struct EvalCell {
  int count = 0;
  double mean_segsnr = 0.0;
  double mean_stoi = 0.0;
};

// One SNR row over the 2x2 speaker/noise seen-unseen grid.
struct EvalRow {
  double snr_db = 0.0;
  EvalCell cells[2][2];  // [speaker unseen][noise unseen]

  int total() const {
    int n = 0;
    for (const auto& r : cells)
      for (const auto& c : r) n += c.count;
    return n;
  }

  // Count-weighted means over the whole grid, i.e. plain per-utterance means.
  EvalCell combined() const {
    EvalCell out;
    double ss = 0.0, st = 0.0;
    for (const auto& r : cells) {
      for (const auto& c : r) {
        out.count += c.count;
        ss += c.mean_segsnr * c.count;
        st += c.mean_stoi * c.count;
      }
    }
    if (out.count > 0) {
      out.mean_segsnr = ss / out.count;
      out.mean_stoi = st / out.count;
    }
    return out;
  }
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string table() const;  // aligned, human-readable
  std::string jsonl() const;  // one record per (snr, condition)
};

// The enhancement under test: noisy waveform in, aligned estimate out. The
// record lets model-backed enhancers fetch the utterance's image streams.
using EnhanceFn = std::function<dsp::Waveform(const synth::UttRecord&,
                                              const dsp::Waveform&)>;

// For every test utterance and SNR: pick a noise from noise_split with a
// per-utterance seed, mix, enhance, score against the clean reference.
EvalReport evaluate_corpus(const EnhanceFn& enhance,
                           const synth::CorpusManifest& man,
                           const std::vector<double>& snrs,
                           const std::string& noise_split, uint64_t seed,
                           const SegSnrConfig& scfg = SegSnrConfig());

// One eval-mode enhancement pass of an in-memory model. Image stacks are
// raw [S,H,W]; stats channels are appended here. Memory-backed models
// recall the tongue stream from the lip stream, so tongue may stay null.
dsp::Waveform enhance_waveform(senet::Model& model, const dsp::Waveform& noisy,
                               const nn::Tensor* lip, const nn::Tensor* tongue,
                               const dsp::StftConfig& grid, bool memory_backed,
                               double memory_gamma);

// Checkpoint-backed enhancement shared by the evaluate and enhance verbs.
// Eval-mode forwards only; handles plain and memory checkpoints.
class Enhancer {
 public:
  explicit Enhancer(const std::string& ckpt_path);

  const senet::ModelConfig& config() const { return model_.config(); }
  senet::Model& model() { return model_; }
  bool memory_backed() const { return memory_; }
  double memory_gamma() const { return mc_.gamma; }
  const std::map<std::string, std::string>& meta() const { return meta_; }

  // Image stacks are raw [S,H,W] as stored in the corpus; stats channels are
  // appended here. A pointer may be null when the model does not need it.
  // The grid must produce the frequency-bin count the model was built for.
  dsp::Waveform enhance(const dsp::Waveform& noisy, const nn::Tensor* lip,
                        const nn::Tensor* tongue,
                        const dsp::StftConfig& grid = dsp::StftConfig());

  // Adapter that resolves and loads each utterance's image streams.
  EnhanceFn corpus_fn(const synth::CorpusManifest& man);

 private:
  senet::Model model_;
  std::map<std::string, std::string> meta_;
  bool memory_ = false;
  memnet::MemoryConfig mc_;
};

struct ProbeConfig {
  int hidden1 = 64;
  int hidden2 = 32;
  int epochs = 150;
  double lr = 1e-2;
  double train_frac = 0.8;
  int min_per_class = 20;
  void validate() const;
};

// Held-out accuracy of a 3-layer perceptron trained full-batch on the
// train side of a seeded split. Features are standardized with train-side
// statistics.
double probe(const nn::Tensor& features, const std::vector<int>& labels,
             const ProbeConfig& cfg, uint64_t seed);

enum class ProbeSource {
  kRawTongueImages,
  kRealTongueFeatures,
  kMemoryRecalled,
};
enum class ProbeTarget { kPseudoPhoneme, kSpeaker };

std::string probe_source_name(ProbeSource s);
ProbeSource probe_source_from_name(const std::string& name);
std::string probe_target_name(ProbeTarget t);
ProbeTarget probe_target_from_name(const std::string& name);

struct FeatureSet {
  nn::Tensor features;      // [N, D], one row per video frame
  std::vector<int> labels;  // [N]
  int classes = 0;
};

// Per-frame probe features from up to max_utts utterances of the split, in
// manifest order (max_utts <= 0 takes the whole split). model may be null
// only for the raw-image source; the memory source uses memory_gamma for
// addressing.
FeatureSet collect_probe_features(senet::Model* model,
                                  const synth::CorpusManifest& man,
                                  const std::string& split, ProbeSource source,
                                  ProbeTarget target, int max_utts,
                                  double memory_gamma = 1.0);

}  // namespace avse::eval
