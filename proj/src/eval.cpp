// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "avse/common.hpp"
#include "avse/imgio.hpp"
#include "avse/optim.hpp"
#include "avse/rng.hpp"
#include "avse/wav_io.hpp"
#include "json.hpp"

namespace avse::eval {

using nlohmann::json;

void SegSnrConfig::validate() const {
  check_config(segment_ms > 0.0, "segsnr: segment length must be positive");
  check_config(clamp_min_db < clamp_max_db,
               "segsnr: clamp range must be ordered");
}

double segsnr_db(const dsp::Waveform& ref, const dsp::Waveform& est,
                 const SegSnrConfig& cfg) {
  cfg.validate();
  check_dims(ref.samples.size() == est.samples.size(),
             "segsnr: length mismatch");
  check_dims(ref.sample_rate == est.sample_rate,
             "segsnr: sample-rate mismatch");
  const int64_t seg =
      std::llround(cfg.segment_ms * 1e-3 * ref.sample_rate);
  check_config(seg > 0, "segsnr: segment shorter than one sample");
  const int64_t n_seg = static_cast<int64_t>(ref.samples.size()) / seg;
  check_dims(n_seg >= 1, "segsnr: input shorter than one segment");

  double sum = 0.0;
  int64_t used = 0;
  for (int64_t s = 0; s < n_seg; ++s) {
    double num = 0.0, den = 0.0;
    for (int64_t n = s * seg; n < (s + 1) * seg; ++n) {
      const double r = ref.samples[static_cast<size_t>(n)];
      const double d = r - est.samples[static_cast<size_t>(n)];
      num += r * r;
      den += d * d;
    }
    if (num <= 0.0) continue;  // silent reference carries no information
    double snr = den <= 0.0 ? cfg.clamp_max_db : 10.0 * std::log10(num / den);
    snr = std::clamp(snr, cfg.clamp_min_db, cfg.clamp_max_db);
    sum += snr;
    ++used;
  }
  check_data(used > 0, "segsnr: reference is silent everywhere");
  return sum / static_cast<double>(used);
}

std::vector<double> resample_poly(const std::vector<double>& x, int up,
                                  int down) {
  check_config(up > 0 && down > 0, "resample: factors must be positive");
  const int g = std::gcd(up, down);
  up /= g;
  down /= g;
  if (up == 1 && down == 1) return x;

  // Blackman-windowed sinc at the tighter Nyquist limit, DC gain = up so
  // amplitudes survive the zero-stuffing.
  const int maxf = std::max(up, down);
  const int half = 10 * maxf;
  const int taps = 2 * half + 1;
  const double fc = 0.5 / maxf;
  std::vector<double> h(static_cast<size_t>(taps));
  double dc = 0.0;
  for (int i = 0; i < taps; ++i) {
    const int m = i - half;
    const double t = 2.0 * fc * m;
    const double sinc = m == 0 ? 1.0 : std::sin(M_PI * t) / (M_PI * t);
    const double w = 0.42 - 0.5 * std::cos(2.0 * M_PI * i / (taps - 1)) +
                     0.08 * std::cos(4.0 * M_PI * i / (taps - 1));
    h[static_cast<size_t>(i)] = 2.0 * fc * sinc * w;
    dc += h[static_cast<size_t>(i)];
  }
  for (double& v : h) v *= up / dc;

  const int64_t n = static_cast<int64_t>(x.size());
  const int64_t out_len = (n * up + down - 1) / down;
  std::vector<double> y(static_cast<size_t>(out_len), 0.0);
  for (int64_t m = 0; m < out_len; ++m) {
    const int64_t j_hi = m * down + half;
    int64_t j = std::max<int64_t>(m * down - half, 0);
    j = (j + up - 1) / up * up;  // first stuffed index holding a sample
    double acc = 0.0;
    for (; j <= j_hi; j += up) {
      const int64_t k = j / up;
      if (k >= n) break;
      acc += x[static_cast<size_t>(k)] * h[static_cast<size_t>(j_hi - j)];
    }
    y[static_cast<size_t>(m)] = acc;
  }
  return y;
}

namespace {

constexpr int kStoiRate = 10000;
constexpr int kStoiFrame = 256;
constexpr int kStoiHop = 128;
constexpr int kStoiFft = 512;
constexpr int kStoiBands = 15;
constexpr double kStoiLowestHz = 150.0;
constexpr int kStoiSegment = 30;  // frames per short-time envelope
constexpr double kStoiSilenceDb = 40.0;
constexpr double kStoiBetaDb = -15.0;  // lower SDR bound for clipping

// Drop frames whose reference energy sits more than 40 dB under the loudest
// frame, stitching the kept windowed frames back together by overlap-add.
void drop_silent_frames(std::vector<double>& x, std::vector<double>& y) {
  check_dims(static_cast<int>(x.size()) >= kStoiFrame,
             "stoi: input shorter than one analysis frame");
  const int frames =
      1 + static_cast<int>((x.size() - kStoiFrame) / kStoiHop);
  std::vector<double> w(kStoiFrame);
  for (int n = 0; n < kStoiFrame; ++n)
    w[static_cast<size_t>(n)] =
        0.5 * (1.0 - std::cos(2.0 * M_PI * n / kStoiFrame));

  std::vector<double> energy_db(static_cast<size_t>(frames));
  double peak = -1e300;
  for (int s = 0; s < frames; ++s) {
    double e = 0.0;
    for (int n = 0; n < kStoiFrame; ++n) {
      const double v =
          w[static_cast<size_t>(n)] * x[static_cast<size_t>(s * kStoiHop + n)];
      e += v * v;
    }
    energy_db[static_cast<size_t>(s)] = 10.0 * std::log10(std::max(e, 1e-300));
    peak = std::max(peak, energy_db[static_cast<size_t>(s)]);
  }

  std::vector<int> kept;
  for (int s = 0; s < frames; ++s)
    if (energy_db[static_cast<size_t>(s)] > peak - kStoiSilenceDb)
      kept.push_back(s);
  check_data(!kept.empty(), "stoi: reference is silent everywhere");

  const size_t out_len =
      static_cast<size_t>(kept.size() - 1) * kStoiHop + kStoiFrame;
  std::vector<double> xs(out_len, 0.0), ys(out_len, 0.0);
  for (size_t jj = 0; jj < kept.size(); ++jj) {
    const size_t src = static_cast<size_t>(kept[jj]) * kStoiHop;
    const size_t dst = jj * kStoiHop;
    for (int n = 0; n < kStoiFrame; ++n) {
      xs[dst + n] += w[static_cast<size_t>(n)] * x[src + n];
      ys[dst + n] += w[static_cast<size_t>(n)] * y[src + n];
    }
  }
  x = std::move(xs);
  y = std::move(ys);
}

// [bands][frames] one-third-octave magnitudes of a 10 kHz signal.
std::vector<std::vector<double>> band_envelopes(const std::vector<double>& x) {
  dsp::StftConfig cfg;
  cfg.window_length = kStoiFrame;
  cfg.hop = kStoiHop;
  cfg.fft_size = kStoiFft;
  dsp::Waveform wave{x, kStoiRate};
  dsp::ComplexSpectrogram spec = dsp::stft(wave, cfg);

  const int S = spec.frames();
  std::vector<std::vector<double>> env(
      kStoiBands, std::vector<double>(static_cast<size_t>(S), 0.0));
  const double edge = std::pow(2.0, 1.0 / 6.0);
  for (int j = 0; j < kStoiBands; ++j) {
    const double cf = kStoiLowestHz * std::pow(2.0, j / 3.0);
    const double lo = cf / edge, hi = cf * edge;
    for (int k = 0; k < spec.freq_bins(); ++k) {
      const double f = static_cast<double>(k) * kStoiRate / kStoiFft;
      if (f < lo || f >= hi) continue;
      for (int s = 0; s < S; ++s) {
        const double re = spec.real.at({k, s}), im = spec.imag.at({k, s});
        env[static_cast<size_t>(j)][static_cast<size_t>(s)] += re * re + im * im;
      }
    }
    for (int s = 0; s < S; ++s)
      env[static_cast<size_t>(j)][static_cast<size_t>(s)] =
          std::sqrt(env[static_cast<size_t>(j)][static_cast<size_t>(s)]);
  }
  return env;
}

}  // namespace

double stoi(const dsp::Waveform& ref, const dsp::Waveform& est) {
  check_dims(ref.samples.size() == est.samples.size(), "stoi: length mismatch");
  check_dims(ref.sample_rate == est.sample_rate, "stoi: sample-rate mismatch");
  check_config(ref.sample_rate > 0, "stoi: sample rate must be positive");

  std::vector<double> x = ref.samples, y = est.samples;
  if (ref.sample_rate != kStoiRate) {
    const int g = std::gcd(kStoiRate, ref.sample_rate);
    x = resample_poly(x, kStoiRate / g, ref.sample_rate / g);
    y = resample_poly(y, kStoiRate / g, ref.sample_rate / g);
  }
  drop_silent_frames(x, y);

  auto ex = band_envelopes(x);
  auto ey = band_envelopes(y);
  const int S = static_cast<int>(ex[0].size());
  check_dims(S >= kStoiSegment,
             "stoi: fewer than 30 analysis frames after silence removal");

  const double clip = 1.0 + std::pow(10.0, -kStoiBetaDb / 20.0);
  double sum = 0.0;
  int64_t cnt = 0;
  std::vector<double> xs(kStoiSegment), yc(kStoiSegment);
  for (int m = kStoiSegment; m <= S; ++m) {
    for (int j = 0; j < kStoiBands; ++j) {
      double nx = 0.0, ny = 0.0;
      for (int i = 0; i < kStoiSegment; ++i) {
        xs[static_cast<size_t>(i)] =
            ex[static_cast<size_t>(j)][static_cast<size_t>(m - kStoiSegment + i)];
        yc[static_cast<size_t>(i)] =
            ey[static_cast<size_t>(j)][static_cast<size_t>(m - kStoiSegment + i)];
        nx += xs[static_cast<size_t>(i)] * xs[static_cast<size_t>(i)];
        ny += yc[static_cast<size_t>(i)] * yc[static_cast<size_t>(i)];
      }
      const double alpha = std::sqrt(nx) / std::max(std::sqrt(ny), 1e-20);
      double mx = 0.0, my = 0.0;
      for (int i = 0; i < kStoiSegment; ++i) {
        yc[static_cast<size_t>(i)] = std::min(alpha * yc[static_cast<size_t>(i)],
                                              clip * xs[static_cast<size_t>(i)]);
        mx += xs[static_cast<size_t>(i)];
        my += yc[static_cast<size_t>(i)];
      }
      mx /= kStoiSegment;
      my /= kStoiSegment;
      double sxy = 0.0, sxx = 0.0, syy = 0.0;
      for (int i = 0; i < kStoiSegment; ++i) {
        const double a = xs[static_cast<size_t>(i)] - mx;
        const double b = yc[static_cast<size_t>(i)] - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
      }
      ++cnt;
      if (sxx <= 0.0 || syy <= 0.0) continue;  // flat envelope carries nothing
      sum += sxy / std::sqrt(sxx * syy);
    }
  }
  return sum / static_cast<double>(cnt);
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << std::setw(8) << "snr_db" << std::setw(10) << "speakers"
     << std::setw(8) << "noise" << std::setw(7) << "count" << std::setw(10)
     << "segsnr" << std::setw(9) << "stoi" << "\n";
  for (const auto& row : rows) {
    for (int sp = 0; sp < 2; ++sp) {
      for (int nz = 0; nz < 2; ++nz) {
        const EvalCell& c = row.cells[sp][nz];
        os << std::setw(8) << std::fixed << std::setprecision(1) << row.snr_db
           << std::setw(10) << (sp ? "unseen" : "seen") << std::setw(8)
           << (nz ? "unseen" : "seen") << std::setw(7) << c.count;
        if (c.count > 0) {
          os << std::setw(10) << std::setprecision(3) << c.mean_segsnr
             << std::setw(9) << std::setprecision(4) << c.mean_stoi;
        } else {
          os << std::setw(10) << "-" << std::setw(9) << "-";
        }
        os << "\n";
      }
    }
  }
  return os.str();
}

std::string EvalReport::jsonl() const {
  std::ostringstream os;
  for (const auto& row : rows) {
    for (int sp = 0; sp < 2; ++sp) {
      for (int nz = 0; nz < 2; ++nz) {
        const EvalCell& c = row.cells[sp][nz];
        json j = {{"snr_db", row.snr_db},
                  {"speakers", sp ? "unseen" : "seen"},
                  {"noise", nz ? "unseen" : "seen"},
                  {"count", c.count}};
        if (c.count > 0) {
          j["segsnr"] = c.mean_segsnr;
          j["stoi"] = c.mean_stoi;
        }
        os << j.dump() << "\n";
      }
    }
  }
  return os.str();
}

EvalReport evaluate_corpus(const EnhanceFn& enhance,
                           const synth::CorpusManifest& man,
                           const std::vector<double>& snrs,
                           const std::string& noise_split, uint64_t seed,
                           const SegSnrConfig& scfg) {
  scfg.validate();
  check_config(static_cast<bool>(enhance), "evaluate: no enhancer given");
  const std::vector<int> test_idx = man.split_indices("test");
  check_data(!test_idx.empty(), "evaluate: manifest has no test utterances");
  auto pool = man.noises_in(noise_split);
  check_config(!pool.empty(), "evaluate: no noises in split " + noise_split);

  std::map<std::string, dsp::Waveform> noise_cache;
  EvalReport rep;
  for (double snr : snrs) {
    EvalRow row;
    row.snr_db = snr;
    for (int i : test_idx) {
      const synth::UttRecord& rec = man.utterances[static_cast<size_t>(i)];
      dsp::Waveform clean;
      clean.samples = read_wav(man.resolve(rec.audio_path), &clean.sample_rate);

      const uint64_t us =
          derive_seed(seed, rec.id + "@" + std::to_string(snr));
      Rng rng(us);
      const synth::NoiseRecord* nrec =
          pool[static_cast<size_t>(rng.integer(0, static_cast<int64_t>(pool.size()) - 1))];
      auto it = noise_cache.find(nrec->path);
      if (it == noise_cache.end()) {
        dsp::Waveform nw;
        nw.samples = read_wav(man.resolve(nrec->path), &nw.sample_rate);
        it = noise_cache.emplace(nrec->path, std::move(nw)).first;
      }
      dsp::Waveform noisy =
          dsp::mix_at_snr(clean, it->second, snr, derive_seed(us, "cut"));

      dsp::Waveform est = enhance(rec, noisy);
      check_dims(est.samples.size() == clean.samples.size(),
                 "evaluate: enhancer changed the length of " + rec.id);

      EvalCell& cell =
          row.cells[rec.unseen_speaker ? 1 : 0][nrec->split == "unseen" ? 1 : 0];
      ++cell.count;
      cell.mean_segsnr += segsnr_db(clean, est, scfg);
      cell.mean_stoi += stoi(clean, est);
    }
    for (auto& r : row.cells) {
      for (auto& c : r) {
        if (c.count > 0) {
          c.mean_segsnr /= c.count;
          c.mean_stoi /= c.count;
        }
      }
    }
    rep.rows.push_back(row);
  }
  return rep;
}

namespace {

double meta_number(const std::map<std::string, std::string>& meta,
                   const std::string& key, double fallback) {
  auto it = meta.find(key);
  if (it == meta.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ConfigError("checkpoint meta field '" + key + "' is not a number");
  }
}

}  // namespace

Enhancer::Enhancer(const std::string& ckpt_path)
    : model_(senet::peek_checkpoint_config(ckpt_path)) {
  const auto head = senet::peek_checkpoint_meta(ckpt_path);
  auto kind = head.find("kind");
  if (kind != head.end() && kind->second == "memory") {
    const senet::ModelConfig& cfg = model_.config();
    const int feat = cfg.channels * cfg.artic_flat_width();
    const int slots =
        static_cast<int>(meta_number(head, "slots", 0.0));
    check_config(slots > 0, "memory checkpoint is missing a slot count");
    memnet::attach_memory(model_.params(),
                          memnet::init_memory(slots, feat, 1.0, 0));
  }
  meta_ = senet::load_checkpoint(model_, ckpt_path);
  memory_ = memnet::has_memory(model_.params());
  if (memory_) {
    mc_.slots = memnet::read_memory(model_.params(), 1.0).slot_count();
    mc_.gamma = meta_number(meta_, "gamma", 1.0);
  }
  model_.set_frozen(true);
}

dsp::Waveform enhance_waveform(senet::Model& model, const dsp::Waveform& noisy,
                               const nn::Tensor* lip, const nn::Tensor* tongue,
                               const dsp::StftConfig& grid, bool memory_backed,
                               double memory_gamma) {
  const senet::ModelConfig& mcfg = model.config();
  check_dims(mcfg.freq_bins == grid.freq_bins(),
             "model frequency bins do not match the stft grid");
  dsp::ComplexSpectrogram spec = dsp::stft(noisy, grid);
  const int F = spec.freq_bins(), S = spec.frames();

  nn::Tensor in({1, 2, F, S});
  for (int f = 0; f < F; ++f) {
    for (int s = 0; s < S; ++s) {
      in.at({0, 0, f, s}) = spec.real.at({f, s});
      in.at({0, 1, f, s}) = spec.imag.at({f, s});
    }
  }

  auto images5 = [&](const nn::Tensor* raw) {
    check_config(raw != nullptr, "modality needs an image stream");
    check_dims(raw->rank() == 3 && raw->dim(0) == S,
               "image stream does not cover the spectrogram frames");
    nn::Tensor st = synth::append_stats_channels(*raw);
    const auto& sh = st.shape();
    return st.reshaped({1, sh[0], sh[1], sh[2], sh[3]});
  };

  nn::Tape t;
  int enhanced = -1;
  if (memory_backed) {
    memnet::MemoryConfig mc;
    mc.gamma = memory_gamma;
    nn::Tensor lip5 = images5(lip);
    memnet::MemoryForward mf =
        memnet::forward_with_memory(t, model, mc, in, &lip5, nullptr, false);
    enhanced = mf.out.enhanced;
  } else {
    nn::Tensor lip5, tongue5;
    const nn::Tensor* lp = nullptr;
    const nn::Tensor* tp = nullptr;
    if (senet::uses_lip(mcfg.modality)) {
      lip5 = images5(lip);
      lp = &lip5;
    }
    if (senet::uses_tongue(mcfg.modality)) {
      tongue5 = images5(tongue);
      tp = &tongue5;
    }
    enhanced = model.forward(t, in, lp, tp, false).enhanced;
  }

  dsp::ComplexSpectrogram out;
  out.real = nn::Tensor({F, S});
  out.imag = nn::Tensor({F, S});
  out.frame_rate = spec.frame_rate;
  const nn::Tensor& e = t.val(enhanced);
  for (int f = 0; f < F; ++f) {
    for (int s = 0; s < S; ++s) {
      out.real.at({f, s}) = e.at({0, 0, f, s});
      out.imag.at({f, s}) = e.at({0, 1, f, s});
    }
  }
  return dsp::istft(out, grid, static_cast<int64_t>(noisy.samples.size()),
                    noisy.sample_rate);
}

dsp::Waveform Enhancer::enhance(const dsp::Waveform& noisy,
                                const nn::Tensor* lip,
                                const nn::Tensor* tongue,
                                const dsp::StftConfig& grid) {
  return enhance_waveform(model_, noisy, lip, tongue, grid, memory_,
                          mc_.gamma);
}

EnhanceFn Enhancer::corpus_fn(const synth::CorpusManifest& man) {
  Enhancer* self = this;
  const synth::CorpusManifest* m = &man;
  return [self, m](const synth::UttRecord& rec, const dsp::Waveform& noisy) {
    const senet::ModelConfig& cfg = self->config();
    nn::Tensor lip, tongue;
    const nn::Tensor* lp = nullptr;
    const nn::Tensor* tp = nullptr;
    if (senet::uses_lip(cfg.modality)) {
      lip = read_image_stack(m->resolve(rec.lip_path));
      lp = &lip;
    }
    if (senet::uses_tongue(cfg.modality) && !self->memory_backed()) {
      tongue = read_image_stack(m->resolve(rec.tongue_path));
      tp = &tongue;
    }
    return self->enhance(noisy, lp, tp, m->stft);
  };
}

void ProbeConfig::validate() const {
  check_config(hidden1 > 0 && hidden2 > 0, "probe: hidden sizes must be positive");
  check_config(epochs > 0, "probe: epochs must be positive");
  check_config(lr > 0.0, "probe: learning rate must be positive");
  check_config(train_frac > 0.0 && train_frac < 1.0,
               "probe: train fraction must lie in (0, 1)");
  check_config(min_per_class >= 1, "probe: min_per_class must be positive");
}

double probe(const nn::Tensor& features, const std::vector<int>& labels,
             const ProbeConfig& cfg, uint64_t seed) {
  cfg.validate();
  check_dims(features.rank() == 2, "probe: features must be [N, D]");
  const int n = features.dim(0), D = features.dim(1);
  check_dims(static_cast<int>(labels.size()) == n,
             "probe: labels do not match the feature rows");
  check_data(n >= 2 && D >= 1, "probe: not enough data");

  int K = 0;
  for (int l : labels) {
    check_data(l >= 0, "probe: negative label");
    K = std::max(K, l + 1);
  }
  std::vector<int> class_n(static_cast<size_t>(K), 0);
  for (int l : labels) ++class_n[static_cast<size_t>(l)];
  int present = 0;
  for (int c : class_n) present += c > 0 ? 1 : 0;
  check_data(present >= 2, "probe: needs at least two classes");

  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng split_rng(derive_seed(seed, "probe:split"));
  for (int i = n - 1; i > 0; --i)
    std::swap(idx[static_cast<size_t>(i)],
              idx[static_cast<size_t>(split_rng.integer(0, i))]);
  const int n_train = static_cast<int>(n * cfg.train_frac);
  check_data(n_train >= 1 && n_train < n, "probe: split leaves an empty side");
  const int n_test = n - n_train;

  std::vector<int> train_count(static_cast<size_t>(K), 0);
  for (int i = 0; i < n_train; ++i)
    ++train_count[static_cast<size_t>(labels[static_cast<size_t>(idx[static_cast<size_t>(i)])])];
  for (int k = 0; k < K; ++k) {
    if (class_n[static_cast<size_t>(k)] == 0) continue;
    check_data(train_count[static_cast<size_t>(k)] >= cfg.min_per_class,
               "probe: class " + std::to_string(k) + " has only " +
                   std::to_string(train_count[static_cast<size_t>(k)]) +
                   " training samples");
  }

  // Standardize with train-side statistics.
  std::vector<double> mean(static_cast<size_t>(D), 0.0),
      sd(static_cast<size_t>(D), 0.0);
  for (int i = 0; i < n_train; ++i) {
    const int r = idx[static_cast<size_t>(i)];
    for (int d = 0; d < D; ++d) mean[static_cast<size_t>(d)] += features.at({r, d});
  }
  for (double& v : mean) v /= n_train;
  for (int i = 0; i < n_train; ++i) {
    const int r = idx[static_cast<size_t>(i)];
    for (int d = 0; d < D; ++d) {
      const double c = features.at({r, d}) - mean[static_cast<size_t>(d)];
      sd[static_cast<size_t>(d)] += c * c;
    }
  }
  for (double& v : sd) v = std::sqrt(v / n_train + 1e-12);

  auto gather = [&](int offset, int count) {
    nn::Tensor out({count, D});
    for (int i = 0; i < count; ++i) {
      const int r = idx[static_cast<size_t>(offset + i)];
      for (int d = 0; d < D; ++d)
        out.at({i, d}) =
            (features.at({r, d}) - mean[static_cast<size_t>(d)]) /
            sd[static_cast<size_t>(d)];
    }
    return out;
  };
  const nn::Tensor train_x = gather(0, n_train);
  const nn::Tensor test_x = gather(n_train, n_test);
  nn::Tensor onehot({n_train, K});
  for (int i = 0; i < n_train; ++i)
    onehot.at({i, labels[static_cast<size_t>(idx[static_cast<size_t>(i)])]}) = 1.0;

  senet::ParamStore store;
  Rng wr(derive_seed(seed, "probe:init"));
  auto init = [&](const std::string& name, std::vector<int> shape, int fan_in) {
    nn::Tensor& v = store.create(name, std::move(shape), true);
    const double s = std::sqrt(2.0 / fan_in);
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = wr.normal(0.0, s);
  };
  init("w1", {cfg.hidden1, D}, D);
  store.create("b1", {cfg.hidden1}, true);
  init("w2", {cfg.hidden2, cfg.hidden1}, cfg.hidden1);
  store.create("b2", {cfg.hidden2}, true);
  init("w3", {K, cfg.hidden2}, cfg.hidden2);
  store.create("b3", {K}, true);

  auto logits_of = [&](nn::Tape& t, std::map<std::string, int>& pn,
                       const nn::Tensor& X) {
    pn.clear();
    for (auto& [name, e] : store.entries()) pn[name] = t.leaf(e.value, true);
    int h = nn::leaky_relu(
        t, nn::linear(t, t.constant(X), pn.at("w1"), pn.at("b1")), 0.2);
    h = nn::leaky_relu(t, nn::linear(t, h, pn.at("w2"), pn.at("b2")), 0.2);
    return nn::linear(t, h, pn.at("w3"), pn.at("b3"));
  };

  optim::Adam adam(optim::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  for (int e = 0; e < cfg.epochs; ++e) {
    nn::Tape t;
    std::map<std::string, int> pn;
    int p = nn::softmax_rows(t, logits_of(t, pn, train_x), 1.0);
    int picked = nn::mul(t, t.constant(onehot),
                         nn::log_op(t, nn::clamp_min(t, p, 1e-12)));
    int ce = nn::scale(t, nn::sum_all(t, picked), -1.0 / n_train);
    t.backward(ce);
    adam.step(store, t, pn);
  }

  nn::Tape t;
  std::map<std::string, int> pn;
  const nn::Tensor& logits = t.val(logits_of(t, pn, test_x));
  int hits = 0;
  for (int i = 0; i < n_test; ++i) {
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (logits.at({i, k}) > logits.at({i, best})) best = k;
    if (best == labels[static_cast<size_t>(idx[static_cast<size_t>(n_train + i)])])
      ++hits;
  }
  return static_cast<double>(hits) / n_test;
}

std::string probe_source_name(ProbeSource s) {
  switch (s) {
    case ProbeSource::kRawTongueImages: return "raw-tongue-images";
    case ProbeSource::kRealTongueFeatures: return "real-tongue-features";
    case ProbeSource::kMemoryRecalled: return "memory-recalled-features";
  }
  throw ConfigError("unknown probe source");
}

ProbeSource probe_source_from_name(const std::string& name) {
  if (name == "raw-tongue-images") return ProbeSource::kRawTongueImages;
  if (name == "real-tongue-features") return ProbeSource::kRealTongueFeatures;
  if (name == "memory-recalled-features") return ProbeSource::kMemoryRecalled;
  throw ConfigError("unknown probe source: " + name);
}

std::string probe_target_name(ProbeTarget t) {
  return t == ProbeTarget::kPseudoPhoneme ? "pseudo-phoneme" : "speaker";
}

ProbeTarget probe_target_from_name(const std::string& name) {
  if (name == "pseudo-phoneme") return ProbeTarget::kPseudoPhoneme;
  if (name == "speaker") return ProbeTarget::kSpeaker;
  throw ConfigError("unknown probe target: " + name);
}

FeatureSet collect_probe_features(senet::Model* model,
                                  const synth::CorpusManifest& man,
                                  const std::string& split, ProbeSource source,
                                  ProbeTarget target, int max_utts,
                                  double memory_gamma) {
  std::vector<int> idx = man.split_indices(split);
  check_data(!idx.empty(), "probe: no utterances in split " + split);
  if (max_utts > 0 && static_cast<int>(idx.size()) > max_utts)
    idx.resize(static_cast<size_t>(max_utts));

  if (source != ProbeSource::kRawTongueImages) {
    check_config(model != nullptr, "probe source needs a model checkpoint");
    if (source == ProbeSource::kRealTongueFeatures) {
      check_config(senet::uses_tongue(model->config().modality),
                   "model has no tongue stream to probe");
    } else {
      check_config(senet::uses_lip(model->config().modality) &&
                       memnet::has_memory(model->params()),
                   "memory-recalled probe needs a memory checkpoint");
    }
  }

  std::vector<double> flat;
  std::vector<int> labels;
  int D = -1;
  for (int i : idx) {
    const synth::UttRecord& rec = man.utterances[static_cast<size_t>(i)];
    synth::LabelFile lf = synth::read_labels(man.resolve(rec.labels_path));
    check_data(static_cast<int>(lf.labels.size()) == rec.frames,
               "probe: label count mismatch for " + rec.id);
    const int S = rec.frames;

    if (source == ProbeSource::kRawTongueImages) {
      nn::Tensor img = read_image_stack(man.resolve(rec.tongue_path));
      check_dims(img.rank() == 3 && img.dim(0) == S,
                 "probe: image frames mismatch for " + rec.id);
      D = img.dim(1) * img.dim(2);
      flat.insert(flat.end(), img.data(), img.data() + img.numel());
    } else {
      const bool from_tongue = source == ProbeSource::kRealTongueFeatures;
      nn::Tensor img = read_image_stack(
          man.resolve(from_tongue ? rec.tongue_path : rec.lip_path));
      check_dims(img.rank() == 3 && img.dim(0) == S,
                 "probe: image frames mismatch for " + rec.id);
      nn::Tensor st = synth::append_stats_channels(img);
      const auto& sh = st.shape();
      nn::Tensor img5 = st.reshaped({1, sh[0], sh[1], sh[2], sh[3]});

      nn::Tape t;
      senet::ForwardCtx ctx = model->begin_forward(t, false);
      int early =
          model->articulation_stem(ctx, img5, from_tongue ? "tongue" : "lip");
      const auto es = t.val(early).shape();  // [1, C, S, D0]
      int rows = nn::reshape(t, nn::permute(t, early, {0, 2, 1, 3}),
                             {S, es[1] * es[3]});
      if (source == ProbeSource::kMemoryRecalled) {
        int a = memnet::address(t, rows, ctx.pn.at(memnet::kLipKeysName),
                                memory_gamma);
        rows = memnet::recall(t, ctx.pn.at(memnet::kTongueValuesName), a);
      }
      const nn::Tensor& v = t.val(rows);
      D = v.dim(1);
      flat.insert(flat.end(), v.data(), v.data() + v.numel());
    }

    for (int s = 0; s < S; ++s) {
      labels.push_back(target == ProbeTarget::kPseudoPhoneme
                           ? lf.labels[static_cast<size_t>(s)]
                           : rec.speaker_id);
    }
  }

  FeatureSet fs;
  fs.features =
      nn::Tensor({static_cast<int>(labels.size()), D}, std::move(flat));
  fs.labels = std::move(labels);
  fs.classes = target == ProbeTarget::kPseudoPhoneme
                   ? man.pseudo_phonemes
                   : man.speakers_train + man.speakers_unseen;
  return fs;
}

}  // namespace avse::eval
