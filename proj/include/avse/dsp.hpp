// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avse/tensor.hpp"

namespace avse::dsp {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;
};

struct StftConfig {
  int window_length = 512;
  int hop = 196;
  int fft_size = 512;
  std::string window = "hann";  // "hann" or "rect"

  void validate() const;
  int freq_bins() const { return fft_size / 2 + 1; }
  // Frames produced for a signal of the given length.
  int num_frames(int64_t length) const {
    return static_cast<int>((length - window_length) / hop) + 1;
  }
  int64_t covered_length(int frames) const {
    return static_cast<int64_t>(frames - 1) * hop + window_length;
  }
};

// Real/imag stored as [F, S] (frequency rows, time columns).
struct ComplexSpectrogram {
  nn::Tensor real;
  nn::Tensor imag;
  double frame_rate = 0.0;

  int freq_bins() const { return real.dim(0); }
  int frames() const { return real.dim(1); }
};

using ComplexMask = ComplexSpectrogram;

// In-place radix-2 complex FFT; n must be a power of two.
void fft_complex(std::vector<double>& re, std::vector<double>& im, bool inverse);

std::vector<double> make_window(const StftConfig& cfg);

ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg);

// Weighted overlap-add synthesis with squared-window normalization. The
// output is truncated or zero-padded to target_length. Samples whose
// normalization denominator is below 1e-8 are set to zero; this only happens
// within a window of the edges for valid configs (interior violations raise
// ConfigError).
Waveform istft(const ComplexSpectrogram& spec, const StftConfig& cfg,
               int64_t target_length, int sample_rate);

ComplexSpectrogram apply_complex_mask(const ComplexSpectrogram& spec,
                                      const ComplexMask& mask);

// Bounded complex ratio mask: clean/noisy by complex division (denominator
// |noisy|^2 + eps), then tanh on each of the real and imaginary parts. This
// is the regression target for the mask loss.
ComplexMask mask_target(const ComplexSpectrogram& clean,
                        const ComplexSpectrogram& noisy, double eps = 1e-8);

// Loop/crop noise to clean's length with a seeded start offset, scale it so
// the clean-to-scaled-noise power ratio equals snr_db, and add.
Waveform mix_at_snr(const Waveform& clean, const Waveform& noise,
                    double snr_db, uint64_t rng_seed);

}  // namespace avse::dsp
