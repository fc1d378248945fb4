// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/dsp.hpp"

#include <cmath>

#include "avse/common.hpp"
#include "avse/rng.hpp"

namespace avse::dsp {

void StftConfig::validate() const {
  check_config(hop > 0 && hop < window_length && window_length <= fft_size,
               "stft config requires 0 < hop < window_length <= fft_size");
  check_config(fft_size > 0 && (fft_size & (fft_size - 1)) == 0,
               "stft config requires power-of-two fft_size");
  check_config(window == "hann" || window == "rect",
               "stft config: unknown window '" + window + "'");
}

std::vector<double> make_window(const StftConfig& cfg) {
  std::vector<double> w(static_cast<size_t>(cfg.window_length), 1.0);
  if (cfg.window == "hann") {
    // Periodic Hann, consistent with hop-shifted squared-window synthesis.
    for (int n = 0; n < cfg.window_length; ++n)
      w[static_cast<size_t>(n)] =
          0.5 * (1.0 - std::cos(2.0 * M_PI * n / cfg.window_length));
  }
  return w;
}

ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg) {
  cfg.validate();
  const int64_t len = static_cast<int64_t>(wave.samples.size());
  check_dims(len >= cfg.window_length,
             "stft: signal shorter than one analysis window");
  for (double v : wave.samples)
    check_data(std::isfinite(v), "stft: non-finite sample in input");

  const int S = cfg.num_frames(len);
  const int F = cfg.freq_bins();
  const std::vector<double> win = make_window(cfg);

  ComplexSpectrogram out;
  out.real = nn::Tensor({F, S});
  out.imag = nn::Tensor({F, S});
  out.frame_rate = static_cast<double>(wave.sample_rate) / cfg.hop;

  std::vector<double> re(static_cast<size_t>(cfg.fft_size));
  std::vector<double> im(static_cast<size_t>(cfg.fft_size));
  for (int s = 0; s < S; ++s) {
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    const int64_t base = static_cast<int64_t>(s) * cfg.hop;
    for (int n = 0; n < cfg.window_length; ++n)
      re[static_cast<size_t>(n)] =
          wave.samples[static_cast<size_t>(base + n)] * win[static_cast<size_t>(n)];
    fft_complex(re, im, false);
    for (int f = 0; f < F; ++f) {
      out.real.at({f, s}) = re[static_cast<size_t>(f)];
      out.imag.at({f, s}) = im[static_cast<size_t>(f)];
    }
  }
  return out;
}

Waveform istft(const ComplexSpectrogram& spec, const StftConfig& cfg,
               int64_t target_length, int sample_rate) {
  cfg.validate();
  const int F = cfg.freq_bins();
  check_dims(spec.real.same_shape(spec.imag), "istft: real/imag shape mismatch");
  check_dims(spec.freq_bins() == F, "istft: spectrogram bins do not match config");
  const int S = spec.frames();
  const std::vector<double> win = make_window(cfg);
  const int64_t covered = cfg.covered_length(S);

  std::vector<double> acc(static_cast<size_t>(covered), 0.0);
  std::vector<double> den(static_cast<size_t>(covered), 0.0);
  std::vector<double> re(static_cast<size_t>(cfg.fft_size));
  std::vector<double> im(static_cast<size_t>(cfg.fft_size));
  for (int s = 0; s < S; ++s) {
    // Rebuild the full conjugate-symmetric spectrum from the half kept.
    for (int f = 0; f < F; ++f) {
      re[static_cast<size_t>(f)] = spec.real.at({f, s});
      im[static_cast<size_t>(f)] = spec.imag.at({f, s});
    }
    for (int f = F; f < cfg.fft_size; ++f) {
      re[static_cast<size_t>(f)] = spec.real.at({cfg.fft_size - f, s});
      im[static_cast<size_t>(f)] = -spec.imag.at({cfg.fft_size - f, s});
    }
    fft_complex(re, im, true);
    const int64_t base = static_cast<int64_t>(s) * cfg.hop;
    for (int n = 0; n < cfg.window_length; ++n) {
      const double w = win[static_cast<size_t>(n)];
      acc[static_cast<size_t>(base + n)] += w * re[static_cast<size_t>(n)];
      den[static_cast<size_t>(base + n)] += w * w;
    }
  }

  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.assign(static_cast<size_t>(target_length), 0.0);
  const int64_t n_copy = std::min(covered, target_length);
  for (int64_t n = 0; n < n_copy; ++n) {
    const double d = den[static_cast<size_t>(n)];
    if (d < 1e-8) {
      // Tolerated only in the edge regions that round-trip claims exclude.
      check_config(n < cfg.window_length || n >= covered - cfg.window_length,
                   "istft: synthesis denominator vanishes at an interior sample");
      out.samples[static_cast<size_t>(n)] = 0.0;
    } else {
      out.samples[static_cast<size_t>(n)] = acc[static_cast<size_t>(n)] / d;
    }
  }
  return out;
}

ComplexSpectrogram apply_complex_mask(const ComplexSpectrogram& spec,
                                      const ComplexMask& mask) {
  check_dims(spec.real.same_shape(mask.real) && spec.imag.same_shape(mask.imag) &&
                 spec.real.same_shape(spec.imag),
             "apply_complex_mask: shape mismatch");
  ComplexSpectrogram out;
  out.real = nn::Tensor(spec.real.shape());
  out.imag = nn::Tensor(spec.imag.shape());
  out.frame_rate = spec.frame_rate;
  const int64_t n = spec.real.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double sr = spec.real[i], si = spec.imag[i];
    const double mr = mask.real[i], mi = mask.imag[i];
    out.real[i] = sr * mr - si * mi;
    out.imag[i] = sr * mi + si * mr;
  }
  return out;
}

ComplexMask mask_target(const ComplexSpectrogram& clean,
                        const ComplexSpectrogram& noisy, double eps) {
  check_dims(clean.real.same_shape(noisy.real), "mask_target: shape mismatch");
  ComplexMask out;
  out.real = nn::Tensor(clean.real.shape());
  out.imag = nn::Tensor(clean.imag.shape());
  out.frame_rate = clean.frame_rate;
  const int64_t n = clean.real.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double cr = clean.real[i], ci = clean.imag[i];
    const double nr = noisy.real[i], ni = noisy.imag[i];
    const double den = nr * nr + ni * ni + eps;
    out.real[i] = std::tanh((cr * nr + ci * ni) / den);
    out.imag[i] = std::tanh((ci * nr - cr * ni) / den);
  }
  return out;
}

Waveform mix_at_snr(const Waveform& clean, const Waveform& noise,
                    double snr_db, uint64_t rng_seed) {
  check_dims(clean.sample_rate == noise.sample_rate,
             "mix_at_snr: sample rates differ");
  const int64_t len = static_cast<int64_t>(clean.samples.size());
  const int64_t nlen = static_cast<int64_t>(noise.samples.size());
  check_data(len > 0 && nlen > 0, "mix_at_snr: empty input");

  // Seeded wrap-around crop of the noise to the clean length.
  Rng rng(rng_seed);
  const int64_t offset = rng.integer(0, nlen - 1);
  std::vector<double> cut(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; ++i)
    cut[static_cast<size_t>(i)] = noise.samples[static_cast<size_t>((offset + i) % nlen)];

  double p_clean = 0.0, p_noise = 0.0;
  for (int64_t i = 0; i < len; ++i) {
    p_clean += clean.samples[static_cast<size_t>(i)] * clean.samples[static_cast<size_t>(i)];
    p_noise += cut[static_cast<size_t>(i)] * cut[static_cast<size_t>(i)];
  }
  check_data(p_clean > 1e-30 && p_noise > 1e-30,
             "mix_at_snr: zero-power clean or noise");

  const double scale = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
  Waveform out;
  out.sample_rate = clean.sample_rate;
  out.samples.resize(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; ++i)
    out.samples[static_cast<size_t>(i)] =
        clean.samples[static_cast<size_t>(i)] + scale * cut[static_cast<size_t>(i)];
  return out;
}

}  // namespace avse::dsp
