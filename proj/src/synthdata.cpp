// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "avse/common.hpp"
#include "avse/imgio.hpp"
#include "avse/wav_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace avse::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Fixed scramble of tongue order relative to aperture order, so the two
// latents are decorrelated across labels. Chosen so the blended tongue
// targets stay pairwise distinct for any P <= 8.
constexpr int kTonguePerm[8] = {5, 0, 6, 2, 7, 4, 1, 3};

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace

void GenConfig::validate() const {
  stft.validate();
  check_config(sample_rate > 0, "sample_rate must be positive");
  check_config(image_h >= 8 && image_w >= 8,
               "image size must be at least 8x8");
  check_config(pseudo_phonemes >= 2, "need at least two pseudo-phonemes");
  check_config(pseudo_phonemes <= 8, "pseudo-phoneme targets defined up to 8");
  check_config(min_duration_s > 0 && max_duration_s >= min_duration_s,
               "bad duration range");
  check_config(min_segment_frames >= 1 &&
                   max_segment_frames >= min_segment_frames,
               "bad segment frame range");
  check_config(easing > 0.0 && easing <= 1.0, "easing must be in (0, 1]");
  check_config(speakers_train >= 1 && speakers_unseen >= 1,
               "need train and unseen speakers");
  check_config(train_frac > 0 && valid_frac > 0 &&
                   train_frac + valid_frac < 1.0,
               "split fractions must leave room for a test split");
  int n_train = static_cast<int>(std::lround(train_frac * utterances));
  int n_valid = static_cast<int>(std::lround(valid_frac * utterances));
  check_config(n_train >= 1 && n_valid >= 1 &&
                   utterances - n_train - n_valid >= 2,
               "too few utterances for non-empty splits");
  check_config(min_duration_s * frame_rate() >= 1.0,
               "duration too short for a single frame");
  // Babble talkers are strided every 8/12 s; a shorter utterance could fall
  // entirely inside a silent gap of the babble track and be unmixable.
  check_config(min_duration_s >= 8.0 / 24.0,
               "min_duration_s must be at least 1/3 s");
}

double aperture_target(int label, int P) {
  check_config(P >= 2 && label >= 0 && label < P, "label out of range");
  return 0.15 + 0.8 * static_cast<double>(label) / (P - 1);
}

double tongue_target(int label, int P) {
  check_config(P >= 2 && P <= 8 && label >= 0 && label < P,
               "label out of range");
  double base = 0.15 + 0.8 * static_cast<double>(kTonguePerm[label]) / 7.0;
  return 0.8 * base + 0.2 * aperture_target(label, P);
}

LatentTrajectory sample_trajectory(const GenConfig& cfg, Rng& rng,
                                   int forced_label) {
  cfg.validate();
  const int P = cfg.pseudo_phonemes;
  if (forced_label >= 0) {
    check_config(forced_label < P, "forced label out of range");
  }
  double dur = rng.uniform(cfg.min_duration_s, cfg.max_duration_s);
  int S = static_cast<int>(std::floor(dur * cfg.frame_rate()));
  check_data(S >= 1, "trajectory would be empty");

  LatentTrajectory traj;
  traj.frame_rate = cfg.frame_rate();
  traj.aperture.reserve(S);
  traj.tongue.reserve(S);
  traj.labels.reserve(S);

  double a = 0.5, t = 0.5;
  int prev = -1;
  int filled = 0;
  while (filled < S) {
    int len = static_cast<int>(
        rng.integer(cfg.min_segment_frames, cfg.max_segment_frames));
    int label;
    if (forced_label >= 0) {
      label = forced_label;
    } else {
      label = static_cast<int>(rng.integer(0, P - 1));
      if (label == prev) label = (label + 1) % P;  // avoid static stretches
    }
    prev = label;
    double at = aperture_target(label, P);
    double tt = tongue_target(label, P);
    for (int i = 0; i < len && filled < S; ++i, ++filled) {
      a += cfg.easing * (at - a);
      t += cfg.easing * (tt - t);
      traj.aperture.push_back(a);
      traj.tongue.push_back(t);
      traj.labels.push_back(label);
    }
  }
  return traj;
}

SpeakerParams speaker_params(const GenConfig& cfg, int speaker_id) {
  check_config(speaker_id >= 0 &&
                   speaker_id < cfg.speakers_train + cfg.speakers_unseen,
               "speaker id out of range");
  Rng rng(derive_seed(cfg.seed, "speaker:" + std::to_string(speaker_id)));
  SpeakerParams p;
  p.f0_hz = 110.0 + 7.5 * speaker_id + rng.uniform(-2.0, 2.0);
  p.f1_offset_hz = rng.uniform(-30.0, 30.0);
  p.f2_offset_hz = rng.uniform(-60.0, 60.0);
  return p;
}

double f1_center_hz(double aperture, const SpeakerParams& spk) {
  return 250.0 + 600.0 * aperture + spk.f1_offset_hz;
}

double f2_center_hz(double tongue, const SpeakerParams& spk) {
  return 800.0 + 1600.0 * tongue + spk.f2_offset_hz;
}

namespace {

// Linear interpolation of a per-frame track at an audio sample index. Frame s
// is anchored at its analysis window center s*hop + window/2.
double track_at(const std::vector<double>& track, int64_t n,
                const dsp::StftConfig& stft) {
  double pos = (static_cast<double>(n) - 0.5 * stft.window_length) / stft.hop;
  if (pos <= 0.0) return track.front();
  double last = static_cast<double>(track.size()) - 1.0;
  if (pos >= last) return track.back();
  int i = static_cast<int>(pos);
  double f = pos - i;
  return (1.0 - f) * track[i] + f * track[i + 1];
}

// One time-varying two-pole resonance, applied in place.
void resonate(std::vector<double>& x, const std::vector<double>& center_hz,
              int sample_rate, double r) {
  double y1 = 0.0, y2 = 0.0;
  double g = 1.0 - r;
  for (size_t n = 0; n < x.size(); ++n) {
    double theta = 2.0 * kPi * center_hz[n] / sample_rate;
    double y = g * x[n] + 2.0 * r * std::cos(theta) * y1 - r * r * y2;
    y2 = y1;
    y1 = y;
    x[n] = y;
  }
}

void normalize_peak(std::vector<double>& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m < 1e-12) return;
  double s = peak / m;
  for (double& v : x) v *= s;
}

}  // namespace

dsp::Waveform render_audio(const LatentTrajectory& traj,
                           const SpeakerParams& spk, const GenConfig& cfg) {
  check_dims(!traj.aperture.empty() &&
                 traj.aperture.size() == traj.tongue.size(),
             "trajectory tracks empty or mismatched");
  check_data(spk.f0_hz > 40.0 && spk.f0_hz < 400.0, "implausible f0");
  const int S = static_cast<int>(traj.aperture.size());
  const int64_t len = cfg.stft.covered_length(S);
  const int sr = cfg.sample_rate;
  const int harmonics =
      std::max(1, static_cast<int>(std::floor(4000.0 / spk.f0_hz)));

  std::vector<double> x(len, 0.0), f1(len), f2(len);
  for (int64_t n = 0; n < len; ++n) {
    double ap = track_at(traj.aperture, n, cfg.stft);
    double tg = track_at(traj.tongue, n, cfg.stft);
    f1[n] = f1_center_hz(ap, spk);
    f2[n] = f2_center_hz(tg, spk);
    double gate = std::pow(std::max(0.0, ap), 1.2);
    if (gate <= 0.0) continue;
    double src = 0.0;
    double base = 2.0 * kPi * spk.f0_hz * n / sr;
    for (int h = 1; h <= harmonics; ++h) {
      // Quadratic phase spread keeps the source from being an impulse train.
      src += std::sin(base * h + 0.7 * h * (h - 1)) / h;
    }
    x[n] = gate * src;
  }
  resonate(x, f1, sr, 0.96);
  resonate(x, f2, sr, 0.96);
  // Pre-emphasis tilts energy toward the resonances and away from the
  // fundamental, like the lip radiation stage of source-filter models. 0.97
  // keeps the first resonance dominant over the pitch harmonics at r = 0.96.
  for (int64_t n = len - 1; n >= 1; --n) x[n] -= 0.97 * x[n - 1];
  normalize_peak(x, 0.9);
  return {std::move(x), sr};
}

ImageSequence render_lip(const LatentTrajectory& traj, const GenConfig& cfg) {
  cfg.validate();
  const int S = static_cast<int>(traj.aperture.size());
  check_dims(S >= 1, "empty trajectory");
  const int H = cfg.image_h, W = cfg.image_w;
  nn::Tensor frames({S, H, W});
  // Integer center row so the closed-lip line lands on exactly one row.
  const double cy = static_cast<double>(H / 2);
  const double cx = 0.5 * (W - 1);
  const double ax = 0.40 * W;
  for (int s = 0; s < S; ++s) {
    double ap = std::clamp(traj.aperture[s], 0.0, 1.0);
    double bv = (0.08 + 0.72 * ap) * (0.5 * H);
    for (int y = 0; y < H; ++y) {
      for (int xpx = 0; xpx < W; ++xpx) {
        double qx = (xpx - cx) / ax;
        double qy = (y - cy) / bv;
        double q = qx * qx + qy * qy;
        double d = q - 1.0;
        double v = std::exp(-d * d / (2.0 * 0.18 * 0.18));
        frames[(static_cast<size_t>(s) * H + y) * W + xpx] =
            std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return {std::move(frames), "lip"};
}

double tongue_deflection_px(const GenConfig& cfg) { return 0.5 * cfg.image_h; }

ImageSequence render_tongue(const LatentTrajectory& traj, const GenConfig& cfg,
                            Rng& rng) {
  cfg.validate();
  const int S = static_cast<int>(traj.tongue.size());
  check_dims(S >= 1, "empty trajectory");
  const int H = cfg.image_h, W = cfg.image_w;
  nn::Tensor frames({S, H, W});
  const double cx = 0.5 * (W - 1);
  const double y0 = 0.75 * H;
  const double defl = tongue_deflection_px(cfg);
  const double bow = 0.12 * H;
  const double sigma = 0.9;
  for (int s = 0; s < S; ++s) {
    double tg = std::clamp(traj.tongue[s], 0.0, 1.0);
    double ap = std::clamp(traj.aperture[s], 0.0, 1.0);
    for (int y = 0; y < H; ++y) {
      for (int xpx = 0; xpx < W; ++xpx) {
        double u = (xpx - cx) / (0.5 * W);
        double yarc = y0 - defl * tg - bow * ap * (1.0 - u * u);
        double d = (y - yarc) / sigma;
        double taper = 0.35 + 0.65 * (1.0 - std::pow(std::abs(u), 3.0));
        double v = 0.85 * taper * std::exp(-0.5 * d * d);
        // Multiplicative speckle; drawn for every pixel in scan order so the
        // field depends only on the rng stream, not on the arc position.
        double sp = std::exp(0.5 * (rng.uniform(0.0, 1.0) - 0.5));
        frames[(static_cast<size_t>(s) * H + y) * W + xpx] =
            std::clamp(v * sp, 0.0, 1.0);
      }
    }
  }
  return {std::move(frames), "tongue"};
}

namespace {

std::vector<double> gen_white(int64_t len, Rng& rng) {
  std::vector<double> x(len);
  for (auto& v : x) v = rng.normal();
  return x;
}

// Paul Kellet's pink noise filter (the "refined" coefficient set).
std::vector<double> gen_pink(int64_t len, Rng& rng) {
  std::vector<double> x(len);
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  for (auto& v : x) {
    double w = rng.normal();
    b0 = 0.99886 * b0 + w * 0.0555179;
    b1 = 0.99332 * b1 + w * 0.0750759;
    b2 = 0.96900 * b2 + w * 0.1538520;
    b3 = 0.86650 * b3 + w * 0.3104856;
    b4 = 0.55000 * b4 + w * 0.5329522;
    b5 = -0.7616 * b5 - w * 0.0168980;
    v = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
    b6 = w * 0.115926;
  }
  return x;
}

std::vector<double> gen_brown(int64_t len, Rng& rng) {
  std::vector<double> x(len);
  double acc = 0.0;
  for (auto& v : x) {
    acc = 0.998 * acc + rng.normal();
    v = acc;
  }
  return x;
}

std::vector<double> gen_hum(int64_t len, int sr, Rng& rng) {
  std::vector<double> x(len);
  double phase[6];
  for (auto& p : phase) p = rng.uniform(0.0, 2.0 * kPi);
  for (int64_t n = 0; n < len; ++n) {
    double v = 0.0;
    for (int k = 1; k <= 6; ++k) {
      v += std::sin(2.0 * kPi * 50.0 * k * n / sr + phase[k - 1]) / k;
    }
    double am = 1.0 + 0.25 * std::sin(2.0 * kPi * 2.3 * n / sr);
    x[n] = v * am + 0.02 * rng.normal();
  }
  return x;
}

// Babble: a dozen independently sampled utterances laid out with evenly
// strided onsets (wrapping at the end). Random onsets can leave silent gaps
// longer than a whole utterance when utterances are short relative to the
// noise, and a silent noise window cannot be mixed at a finite SNR; the
// stride keeps every window inside some talker.
std::vector<double> gen_babble(int64_t len, const GenConfig& cfg) {
  const int kTalkers = 12;
  std::vector<double> x(len, 0.0);
  for (int i = 0; i < kTalkers; ++i) {
    Rng rng(derive_seed(cfg.seed, "babble:" + std::to_string(i)));
    int spk = static_cast<int>(rng.integer(0, cfg.speakers_train - 1));
    LatentTrajectory traj = sample_trajectory(cfg, rng);
    dsp::Waveform w = render_audio(traj, speaker_params(cfg, spk), cfg);
    int64_t off = i * len / kTalkers;
    for (size_t n = 0; n < w.samples.size(); ++n) {
      x[(off + static_cast<int64_t>(n)) % len] += w.samples[n];
    }
  }
  return x;
}

std::string canonical_config_json(const GenConfig& cfg) {
  json j;
  j["sample_rate"] = cfg.sample_rate;
  j["window_length"] = cfg.stft.window_length;
  j["hop"] = cfg.stft.hop;
  j["fft_size"] = cfg.stft.fft_size;
  j["window"] = cfg.stft.window;
  j["image_h"] = cfg.image_h;
  j["image_w"] = cfg.image_w;
  j["pseudo_phonemes"] = cfg.pseudo_phonemes;
  j["min_duration_s"] = cfg.min_duration_s;
  j["max_duration_s"] = cfg.max_duration_s;
  j["min_segment_frames"] = cfg.min_segment_frames;
  j["max_segment_frames"] = cfg.max_segment_frames;
  j["easing"] = cfg.easing;
  j["speakers_train"] = cfg.speakers_train;
  j["speakers_unseen"] = cfg.speakers_unseen;
  j["utterances"] = cfg.utterances;
  j["train_frac"] = cfg.train_frac;
  j["valid_frac"] = cfg.valid_frac;
  j["seed"] = cfg.seed;
  return j.dump();  // nlohmann::json orders keys, so the dump is canonical
}

void write_labels(const std::string& path, int speaker_id,
                  const LatentTrajectory& traj) {
  std::ofstream out(path);
  check_io(out.good(), "cannot write " + path);
  out << "speaker " << speaker_id << "\n";
  char line[96];
  for (size_t i = 0; i < traj.labels.size(); ++i) {
    std::snprintf(line, sizeof(line), "%d %.10g %.10g\n", traj.labels[i],
                  traj.aperture[i], traj.tongue[i]);
    out << line;
  }
  check_io(out.good(), "write failed: " + path);
}

}  // namespace

LabelFile read_labels(const std::string& path) {
  std::ifstream in(path);
  check_io(in.good(), "cannot read " + path);
  LabelFile lf;
  std::string word;
  in >> word >> lf.speaker_id;
  check_io(word == "speaker", "bad label file header: " + path);
  int label;
  double a, t;
  while (in >> label >> a >> t) {
    lf.labels.push_back(label);
    lf.aperture.push_back(a);
    lf.tongue.push_back(t);
  }
  check_io(!lf.labels.empty(), "label file has no frames: " + path);
  return lf;
}

std::vector<int> CorpusManifest::split_indices(const std::string& split) const {
  std::vector<int> out;
  for (size_t i = 0; i < utterances.size(); ++i) {
    if (utterances[i].split == split) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<const NoiseRecord*> CorpusManifest::noises_in(
    const std::string& split) const {
  std::vector<const NoiseRecord*> out;
  for (const auto& n : noises) {
    if (split == "all" || n.split == split) out.push_back(&n);
  }
  return out;
}

std::string CorpusManifest::resolve(const std::string& rel) const {
  return (fs::path(root) / rel).string();
}

CorpusManifest generate_corpus(const GenConfig& cfg,
                               const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(fs::path(out_dir) / "noises");
  fs::create_directories(fs::path(out_dir) / "utt");

  CorpusManifest man;
  man.root = out_dir;
  man.seed = cfg.seed;
  man.config_hash = hex64(fnv1a(canonical_config_json(cfg)));
  man.stft = cfg.stft;
  man.sample_rate = cfg.sample_rate;
  man.image_h = cfg.image_h;
  man.image_w = cfg.image_w;
  man.pseudo_phonemes = cfg.pseudo_phonemes;
  man.speakers_train = cfg.speakers_train;
  man.speakers_unseen = cfg.speakers_unseen;

  // Noise library. Babble is speech shaped (built from synthetic talkers),
  // white and pink cover flat and tilted spectra; brown and hum are held out
  // as unseen noise types.
  const int64_t noise_len = 8 * cfg.sample_rate;
  struct NoiseGen {
    const char* name;
    const char* split;
  };
  const NoiseGen kinds[] = {{"white", "seen"},
                            {"pink", "seen"},
                            {"babble", "seen"},
                            {"brown", "unseen"},
                            {"hum", "unseen"}};
  for (const auto& k : kinds) {
    Rng rng(derive_seed(cfg.seed, std::string("noise:") + k.name));
    std::vector<double> x;
    std::string name = k.name;
    if (name == "white") x = gen_white(noise_len, rng);
    else if (name == "pink") x = gen_pink(noise_len, rng);
    else if (name == "brown") x = gen_brown(noise_len, rng);
    else if (name == "hum") x = gen_hum(noise_len, cfg.sample_rate, rng);
    else x = gen_babble(noise_len, cfg);
    normalize_peak(x, 0.9);
    std::string rel = "noises/" + name + ".wav";
    write_wav((fs::path(out_dir) / rel).string(), x, cfg.sample_rate);
    man.noises.push_back({name, rel, k.split});
  }

  // Split sizes. Unseen speakers appear only in the test split, on the odd
  // test positions, so the evaluation grid has both speaker conditions.
  const int N = cfg.utterances;
  const int n_train = static_cast<int>(std::lround(cfg.train_frac * N));
  const int n_valid = static_cast<int>(std::lround(cfg.valid_frac * N));

  for (int u = 0; u < N; ++u) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "u%04d", u);
    std::string id = idbuf;
    Rng rng(derive_seed(cfg.seed, "utt:" + id));

    std::string split = u < n_train ? "train"
                        : u < n_train + n_valid ? "valid"
                                                : "test";
    int test_pos = u - n_train - n_valid;
    bool unseen_spk = split == "test" && (test_pos % 2 == 1);
    int speaker =
        unseen_spk
            ? cfg.speakers_train +
                  static_cast<int>(rng.integer(0, cfg.speakers_unseen - 1))
            : static_cast<int>(rng.integer(0, cfg.speakers_train - 1));

    LatentTrajectory traj = sample_trajectory(cfg, rng);
    dsp::Waveform wave = render_audio(traj, speaker_params(cfg, speaker), cfg);
    ImageSequence lip = render_lip(traj, cfg);
    ImageSequence tongue = render_tongue(traj, cfg, rng);

    int S = static_cast<int>(traj.labels.size());
    check_dims(cfg.stft.num_frames(static_cast<int64_t>(wave.samples.size())) ==
                   S,
               "audio length does not produce one STFT frame per video frame");

    fs::path dir = fs::path(out_dir) / "utt" / id;
    fs::create_directories(dir);
    UttRecord rec;
    rec.id = id;
    rec.speaker_id = speaker;
    rec.unseen_speaker = unseen_spk;
    rec.split = split;
    rec.frames = S;
    rec.samples = static_cast<int64_t>(wave.samples.size());
    rec.duration_s = static_cast<double>(rec.samples) / cfg.sample_rate;
    rec.audio_path = "utt/" + id + "/clean.wav";
    rec.lip_path = "utt/" + id + "/lip.img";
    rec.tongue_path = "utt/" + id + "/tongue.img";
    rec.labels_path = "utt/" + id + "/labels.txt";
    write_wav((dir / "clean.wav").string(), wave.samples, cfg.sample_rate);
    write_image_stack((dir / "lip.img").string(), lip.frames);
    write_image_stack((dir / "tongue.img").string(), tongue.frames);
    write_labels((dir / "labels.txt").string(), speaker, traj);
    man.utterances.push_back(std::move(rec));
  }

  // manifest.jsonl: one meta line, then noise lines, then utterance lines.
  std::ofstream out(fs::path(out_dir) / "manifest.jsonl");
  check_io(out.good(), "cannot write manifest");
  {
    json j;
    j["kind"] = "meta";
    j["seed"] = man.seed;
    j["config_hash"] = man.config_hash;
    j["sample_rate"] = man.sample_rate;
    j["window_length"] = man.stft.window_length;
    j["hop"] = man.stft.hop;
    j["fft_size"] = man.stft.fft_size;
    j["window"] = man.stft.window;
    j["image_h"] = man.image_h;
    j["image_w"] = man.image_w;
    j["pseudo_phonemes"] = man.pseudo_phonemes;
    j["speakers_train"] = man.speakers_train;
    j["speakers_unseen"] = man.speakers_unseen;
    out << j.dump() << "\n";
  }
  for (const auto& n : man.noises) {
    json j;
    j["kind"] = "noise";
    j["name"] = n.name;
    j["path"] = n.path;
    j["split"] = n.split;
    out << j.dump() << "\n";
  }
  for (const auto& r : man.utterances) {
    json j;
    j["kind"] = "utterance";
    j["id"] = r.id;
    j["speaker_id"] = r.speaker_id;
    j["unseen_speaker"] = r.unseen_speaker;
    j["split"] = r.split;
    j["frames"] = r.frames;
    j["samples"] = r.samples;
    j["duration_s"] = r.duration_s;
    j["audio"] = r.audio_path;
    j["lip"] = r.lip_path;
    j["tongue"] = r.tongue_path;
    j["labels"] = r.labels_path;
    out << j.dump() << "\n";
  }
  check_io(out.good(), "manifest write failed");
  return man;
}

CorpusManifest load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  check_io(in.good(), "cannot read " + manifest_path);
  CorpusManifest man;
  man.root = fs::path(manifest_path).parent_path().string();
  std::string line;
  bool saw_meta = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    check_io(!j.is_discarded(), "bad manifest line: " + line);
    std::string kind = j.value("kind", "");
    if (kind == "meta") {
      saw_meta = true;
      man.seed = j.at("seed").get<uint64_t>();
      man.config_hash = j.at("config_hash").get<std::string>();
      man.sample_rate = j.at("sample_rate").get<int>();
      man.stft.window_length = j.at("window_length").get<int>();
      man.stft.hop = j.at("hop").get<int>();
      man.stft.fft_size = j.at("fft_size").get<int>();
      man.stft.window = j.at("window").get<std::string>();
      man.image_h = j.at("image_h").get<int>();
      man.image_w = j.at("image_w").get<int>();
      man.pseudo_phonemes = j.at("pseudo_phonemes").get<int>();
      man.speakers_train = j.at("speakers_train").get<int>();
      man.speakers_unseen = j.at("speakers_unseen").get<int>();
    } else if (kind == "noise") {
      man.noises.push_back({j.at("name").get<std::string>(),
                            j.at("path").get<std::string>(),
                            j.at("split").get<std::string>()});
    } else if (kind == "utterance") {
      UttRecord r;
      r.id = j.at("id").get<std::string>();
      r.speaker_id = j.at("speaker_id").get<int>();
      r.unseen_speaker = j.at("unseen_speaker").get<bool>();
      r.split = j.at("split").get<std::string>();
      r.frames = j.at("frames").get<int>();
      r.samples = j.at("samples").get<int64_t>();
      r.duration_s = j.at("duration_s").get<double>();
      r.audio_path = j.at("audio").get<std::string>();
      r.lip_path = j.at("lip").get<std::string>();
      r.tongue_path = j.at("tongue").get<std::string>();
      r.labels_path = j.at("labels").get<std::string>();
      man.utterances.push_back(std::move(r));
    } else {
      throw IoError("unknown manifest record kind: " + kind);
    }
  }
  check_io(saw_meta, "manifest has no meta record");
  check_io(!man.utterances.empty(), "manifest has no utterances");
  return man;
}

nn::Tensor append_stats_channels(const nn::Tensor& seq) {
  check_dims(seq.rank() == 3, "expected [S,H,W]");
  const int S = seq.dim(0), H = seq.dim(1), W = seq.dim(2);
  nn::Tensor out({3, S, H, W});
  const size_t plane = static_cast<size_t>(H) * W;
  std::vector<double> mean(plane, 0.0), var(plane, 0.0);
  for (int s = 0; s < S; ++s) {
    for (size_t p = 0; p < plane; ++p) mean[p] += seq[s * plane + p];
  }
  for (size_t p = 0; p < plane; ++p) mean[p] /= S;
  for (int s = 0; s < S; ++s) {
    for (size_t p = 0; p < plane; ++p) {
      double d = seq[s * plane + p] - mean[p];
      var[p] += d * d;
    }
  }
  for (size_t p = 0; p < plane; ++p) var[p] /= S;  // population variance
  for (int s = 0; s < S; ++s) {
    for (size_t p = 0; p < plane; ++p) {
      out[(0 * S + s) * plane + p] = seq[s * plane + p];
      out[(1 * S + s) * plane + p] = mean[p];
      out[(2 * S + s) * plane + p] = std::sqrt(var[p]);
    }
  }
  return out;
}

Batch load_batch(const CorpusManifest& manifest,
                 const std::vector<std::string>& ids,
                 const dsp::StftConfig& stft_cfg, const MixSpec& mix,
                 Rng& rng) {
  check_dims(!ids.empty(), "empty batch");
  stft_cfg.validate();
  check_config(stft_cfg.window_length == manifest.stft.window_length &&
                   stft_cfg.hop == manifest.stft.hop &&
                   stft_cfg.fft_size == manifest.stft.fft_size,
               "stft config does not match the corpus frame grid");
  check_config(!mix.snr_choices.empty(), "no SNR choices");
  auto pool = manifest.noises_in(mix.noise_split);
  check_config(!pool.empty(), "no noises in split " + mix.noise_split);

  std::map<std::string, const UttRecord*> by_id;
  for (const auto& r : manifest.utterances) by_id[r.id] = &r;

  struct Item {
    dsp::ComplexSpectrogram clean, noisy;
    nn::Tensor lip, tongue;  // [S,H,W]
    LabelFile labels;
    double snr = 0.0;
    int speaker = 0;
    int frames = 0;
  };
  std::vector<Item> items;
  items.reserve(ids.size());
  std::map<std::string, dsp::Waveform> noise_cache;

  int s_min = 1 << 30;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    check_data(it != by_id.end(), "unknown utterance id: " + id);
    const UttRecord& rec = *it->second;

    int sr = 0;
    auto samples = read_wav(manifest.resolve(rec.audio_path), &sr);
    check_data(sr == manifest.sample_rate, "sample rate mismatch: " + id);
    dsp::Waveform clean{std::move(samples), sr};

    const NoiseRecord* nr = pool[rng.integer(0, pool.size() - 1)];
    double snr = mix.snr_choices[rng.integer(0, mix.snr_choices.size() - 1)];
    uint64_t mix_seed = rng.engine()();
    auto nc = noise_cache.find(nr->name);
    if (nc == noise_cache.end()) {
      int nsr = 0;
      auto ns = read_wav(manifest.resolve(nr->path), &nsr);
      nc = noise_cache.emplace(nr->name, dsp::Waveform{std::move(ns), nsr})
               .first;
    }
    dsp::Waveform noisy = dsp::mix_at_snr(clean, nc->second, snr, mix_seed);

    Item item;
    item.clean = dsp::stft(clean, stft_cfg);
    item.noisy = dsp::stft(noisy, stft_cfg);
    item.lip = read_image_stack(manifest.resolve(rec.lip_path));
    item.tongue = read_image_stack(manifest.resolve(rec.tongue_path));
    item.labels = read_labels(manifest.resolve(rec.labels_path));
    item.snr = snr;
    item.speaker = rec.speaker_id;
    item.frames = item.clean.frames();
    check_dims(item.frames == rec.frames && item.lip.dim(0) == rec.frames &&
                   item.tongue.dim(0) == rec.frames &&
                   static_cast<int>(item.labels.labels.size()) == rec.frames,
               "frame count mismatch for " + id);
    s_min = std::min(s_min, item.frames);
    items.push_back(std::move(item));
  }

  const int b = static_cast<int>(items.size());
  const int F = items[0].clean.freq_bins();
  const int H = items[0].lip.dim(1), W = items[0].lip.dim(2);

  Batch batch;
  batch.noisy_spec = nn::Tensor({b, 2, F, s_min});
  batch.clean_spec = nn::Tensor({b, 2, F, s_min});
  batch.lip3 = nn::Tensor({b, 3, s_min, H, W});
  batch.tongue3 = nn::Tensor({b, 3, s_min, H, W});
  batch.labels.resize(b);
  batch.speaker_ids.resize(b);
  batch.snr_db.resize(b);

  for (int i = 0; i < b; ++i) {
    Item& item = items[i];
    int off = item.frames == s_min
                  ? 0
                  : static_cast<int>(rng.integer(0, item.frames - s_min));
    const int S_u = item.frames;
    auto copy_spec = [&](const dsp::ComplexSpectrogram& sp, nn::Tensor& dst) {
      for (int f = 0; f < F; ++f) {
        for (int s = 0; s < s_min; ++s) {
          size_t base = ((static_cast<size_t>(i) * 2) * F + f) * s_min + s;
          dst[base] = sp.real[static_cast<size_t>(f) * S_u + off + s];
          dst[base + static_cast<size_t>(F) * s_min] =
              sp.imag[static_cast<size_t>(f) * S_u + off + s];
        }
      }
    };
    copy_spec(item.noisy, batch.noisy_spec);
    copy_spec(item.clean, batch.clean_spec);

    auto copy_images = [&](const nn::Tensor& src, nn::Tensor& dst) {
      const size_t plane = static_cast<size_t>(H) * W;
      nn::Tensor cropped({s_min, H, W});
      for (int s = 0; s < s_min; ++s) {
        for (size_t p = 0; p < plane; ++p) {
          cropped[s * plane + p] = src[(off + s) * plane + p];
        }
      }
      nn::Tensor st = append_stats_channels(cropped);
      size_t n = st.numel();
      size_t base = static_cast<size_t>(i) * n;
      for (size_t k = 0; k < n; ++k) dst[base + k] = st[k];
    };
    copy_images(item.lip, batch.lip3);
    copy_images(item.tongue, batch.tongue3);

    batch.labels[i].assign(item.labels.labels.begin() + off,
                           item.labels.labels.begin() + off + s_min);
    batch.speaker_ids[i] = item.speaker;
    batch.snr_db[i] = item.snr;
  }
  return batch;
}

}  // namespace avse::synth
