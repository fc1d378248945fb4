// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/eval.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avse/common.hpp"
#include "avse/dsp.hpp"
#include "avse/imgio.hpp"
#include "avse/memnet.hpp"
#include "avse/rng.hpp"
#include "avse/senet.hpp"
#include "avse/synthdata.hpp"
#include "avse/wav_io.hpp"
#include "doctest.h"

using namespace avse;
namespace fs = std::filesystem;

namespace {

dsp::Waveform random_wave(int64_t n, uint64_t seed, int rate = 16000) {
  dsp::Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<size_t>(n));
  Rng rng(seed);
  for (auto& v : w.samples) v = rng.uniform(-0.5, 0.5);
  return w;
}

// Utterances a bit over a second so the intelligibility measure has enough
// analysis frames after silence removal; built once per process.
const synth::CorpusManifest& eval_corpus() {
  static synth::CorpusManifest man = [] {
    synth::GenConfig cfg;
    cfg.image_h = 8;
    cfg.image_w = 16;
    cfg.utterances = 12;
    cfg.min_duration_s = 1.0;
    cfg.max_duration_s = 1.2;
    cfg.speakers_train = 2;
    cfg.speakers_unseen = 1;
    cfg.train_frac = 0.5;
    cfg.valid_frac = 0.25;
    cfg.seed = 20240815;
    fs::path dir = fs::temp_directory_path() / "avse_eval_corpus";
    fs::remove_all(dir);
    return synth::generate_corpus(cfg, dir.string());
  }();
  return man;
}

dsp::Waveform clean_of(const synth::CorpusManifest& man,
                       const synth::UttRecord& rec) {
  dsp::Waveform w;
  w.samples = read_wav(man.resolve(rec.audio_path), &w.sample_rate);
  return w;
}

senet::ModelConfig micro_model(senet::Modality m, uint64_t seed) {
  senet::ModelConfig cfg;
  cfg.modality = m;
  cfg.freq_bins = 257;
  cfg.channels = 3;
  cfg.lstm_hidden = 8;
  cfg.image_h = 8;
  cfg.image_w = 16;
  cfg.init_seed = seed;
  return cfg;
}

std::string fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("avse_eval_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("segsnr: perfect estimate hits the upper clamp") {
  dsp::Waveform w = random_wave(16000, 1);
  CHECK(eval::segsnr_db(w, w) == doctest::Approx(35.0).epsilon(1e-12));

  eval::SegSnrConfig cfg;
  cfg.clamp_max_db = 20.0;
  CHECK(eval::segsnr_db(w, w, cfg) == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("segsnr: error power equal to signal power scores zero") {
  dsp::Waveform ref = random_wave(4800, 2);
  dsp::Waveform est = ref;
  for (auto& v : est.samples) v = 0.0;  // error == reference
  CHECK(eval::segsnr_db(ref, est) == doctest::Approx(0.0).epsilon(1e-9));

  for (size_t i = 0; i < est.samples.size(); ++i)
    est.samples[i] = 2.0 * ref.samples[i];  // error == reference again
  CHECK(eval::segsnr_db(ref, est) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("segsnr: matches a segment-loop oracle and ignores the tail") {
  const int64_t n = 16123;  // 33 full 480-sample segments plus a remainder
  dsp::Waveform ref = random_wave(n, 3);
  dsp::Waveform est = ref;
  Rng rng(4);
  for (auto& v : est.samples) v += rng.uniform(-0.15, 0.15);

  const int64_t seg = 480;
  const int64_t n_seg = n / seg;
  double sum = 0.0;
  int64_t used = 0;
  for (int64_t s = 0; s < n_seg; ++s) {
    double num = 0.0, den = 0.0;
    for (int64_t i = s * seg; i < (s + 1) * seg; ++i) {
      const double r = ref.samples[static_cast<size_t>(i)];
      const double d = r - est.samples[static_cast<size_t>(i)];
      num += r * r;
      den += d * d;
    }
    if (num <= 0.0) continue;
    double snr = den <= 0.0 ? 35.0 : 10.0 * std::log10(num / den);
    sum += std::clamp(snr, -10.0, 35.0);
    ++used;
  }
  const double want = sum / static_cast<double>(used);
  CHECK(eval::segsnr_db(ref, est) == doctest::Approx(want).epsilon(1e-9));

  // Samples past the last full segment do not contribute.
  dsp::Waveform tail = est;
  for (int64_t i = n_seg * seg; i < n; ++i)
    tail.samples[static_cast<size_t>(i)] += 100.0;
  CHECK(eval::segsnr_db(ref, tail) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("segsnr: clamps extreme ratios on both sides") {
  dsp::Waveform ref = random_wave(4800, 5);
  dsp::Waveform tiny = ref, huge = ref;
  Rng rng(6);
  for (size_t i = 0; i < ref.samples.size(); ++i) {
    const double e = rng.uniform(0.5, 1.0);
    tiny.samples[i] += 1e-9 * e;
    huge.samples[i] += 1e5 * e;
  }
  CHECK(eval::segsnr_db(ref, tiny) == doctest::Approx(35.0).epsilon(1e-12));
  CHECK(eval::segsnr_db(ref, huge) == doctest::Approx(-10.0).epsilon(1e-12));
}

TEST_CASE("segsnr: the reference side defines the measure") {
  dsp::Waveform ref = random_wave(4800, 7);
  dsp::Waveform est = ref;
  for (auto& v : est.samples) v *= 2.0;
  const double fwd = eval::segsnr_db(ref, est);  // error power = ref power
  const double rev = eval::segsnr_db(est, ref);  // ratio 4 instead
  CHECK(fwd == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(rev == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-9));
}

TEST_CASE("segsnr: silent reference segments are skipped") {
  dsp::Waveform ref = random_wave(1440, 8);
  for (int i = 0; i < 480; ++i) ref.samples[static_cast<size_t>(i)] = 0.0;
  dsp::Waveform est = ref;
  Rng rng(9);
  for (int i = 0; i < 480; ++i)
    est.samples[static_cast<size_t>(i)] = rng.uniform(-1.0, 1.0);
  CHECK(eval::segsnr_db(ref, est) == doctest::Approx(35.0).epsilon(1e-12));

  dsp::Waveform zero = ref;
  for (auto& v : zero.samples) v = 0.0;
  CHECK_THROWS_AS(eval::segsnr_db(zero, est), DataError);
}

TEST_CASE("segsnr: rejects malformed input") {
  dsp::Waveform a = random_wave(4800, 10);
  dsp::Waveform b = random_wave(4320, 11);
  CHECK_THROWS_AS(eval::segsnr_db(a, b), DimensionError);

  dsp::Waveform c = random_wave(4800, 12, 8000);
  CHECK_THROWS_AS(eval::segsnr_db(a, c), DimensionError);

  dsp::Waveform s = random_wave(100, 13);
  CHECK_THROWS_AS(eval::segsnr_db(s, s), DimensionError);

  eval::SegSnrConfig bad;
  bad.segment_ms = 0.0;
  CHECK_THROWS_AS(eval::segsnr_db(a, a, bad), ConfigError);
  bad = eval::SegSnrConfig();
  bad.clamp_min_db = bad.clamp_max_db;
  CHECK_THROWS_AS(eval::segsnr_db(a, a, bad), ConfigError);
}

TEST_CASE("resample: length rule, identity, and factor reduction") {
  std::vector<double> x(1000);
  Rng rng(14);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);

  CHECK(eval::resample_poly(x, 5, 8).size() == 625);  // ceil(1000*5/8)
  CHECK(eval::resample_poly(x, 3, 7).size() == 429);  // ceil(3000/7)
  CHECK(eval::resample_poly(x, 4, 4) == x);
  CHECK(eval::resample_poly(x, 10, 16) == eval::resample_poly(x, 5, 8));
  CHECK_THROWS_AS(eval::resample_poly(x, 0, 2), ConfigError);
  CHECK_THROWS_AS(eval::resample_poly(x, 2, -1), ConfigError);
}

TEST_CASE("resample: preserves dc and tracks a low tone") {
  // Each polyphase branch carries its own tiny dc ripple, so the tolerance
  // is looser than the overall filter normalization.
  std::vector<double> dc(4000, 1.0);
  std::vector<double> ydc = eval::resample_poly(dc, 5, 8);
  for (size_t m = 100; m < ydc.size() - 100; ++m)
    CHECK(ydc[m] == doctest::Approx(1.0).epsilon(1e-5));

  std::vector<double> tone(16000);
  for (size_t n = 0; n < tone.size(); ++n)
    tone[n] = std::sin(2.0 * M_PI * 100.0 * static_cast<double>(n) / 16000.0);
  std::vector<double> y = eval::resample_poly(tone, 5, 8);
  REQUIRE(y.size() == 10000);
  for (size_t m = 200; m < y.size() - 200; ++m) {
    const double want =
        std::sin(2.0 * M_PI * 100.0 * static_cast<double>(m) / 10000.0);
    CHECK(std::abs(y[m] - want) < 1e-3);
  }
}

TEST_CASE("stoi: clean and rescaled estimates score near one") {
  const synth::CorpusManifest& man = eval_corpus();
  dsp::Waveform x = clean_of(man, man.utterances[0]);
  const double self = eval::stoi(x, x);
  CHECK(self >= 0.99);
  CHECK(self <= 1.0 + 1e-9);

  dsp::Waveform scaled = x;
  for (auto& v : scaled.samples) v *= 2.0;
  CHECK(eval::stoi(x, scaled) >= 0.99);
}

TEST_CASE("stoi: degrades monotonically with additive noise") {
  const synth::CorpusManifest& man = eval_corpus();
  dsp::Waveform x = clean_of(man, man.utterances[0]);
  dsp::Waveform noise = random_wave(static_cast<int64_t>(x.samples.size()), 15);

  const double s10 = eval::stoi(x, dsp::mix_at_snr(x, noise, 10.0, 99));
  const double s0 = eval::stoi(x, dsp::mix_at_snr(x, noise, 0.0, 99));
  const double sm10 = eval::stoi(x, dsp::mix_at_snr(x, noise, -10.0, 99));
  CHECK(s10 > s0);
  CHECK(s0 > sm10);
  for (double s : {s10, s0, sm10}) {
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }

  // An unrelated estimate carries next to no envelope correlation.
  CHECK(eval::stoi(x, noise) <= 0.5);

  // A silent reference has flat envelopes everywhere.
  dsp::Waveform zero = x;
  for (auto& v : zero.samples) v = 0.0;
  CHECK(eval::stoi(zero, x) == 0.0);
}

TEST_CASE("stoi: rejects malformed input") {
  dsp::Waveform a = random_wave(16000, 16);
  dsp::Waveform b = random_wave(8000, 17);
  CHECK_THROWS_AS(eval::stoi(a, b), DimensionError);

  dsp::Waveform c = random_wave(16000, 18, 8000);
  CHECK_THROWS_AS(eval::stoi(a, c), DimensionError);

  // Too short for one analysis frame, and too short for one segment.
  dsp::Waveform tiny = random_wave(100, 19);
  CHECK_THROWS_AS(eval::stoi(tiny, tiny), DimensionError);
  dsp::Waveform brief = random_wave(3200, 20);
  CHECK_THROWS_AS(eval::stoi(brief, brief), DimensionError);
}

TEST_CASE("evaluate: identity enhancer reproduces the noisy scores") {
  const synth::CorpusManifest& man = eval_corpus();
  const std::vector<double> snrs = {4.0};
  const uint64_t seed = 2211;

  eval::EnhanceFn identity = [](const synth::UttRecord&,
                                const dsp::Waveform& noisy) { return noisy; };
  eval::EvalReport rep = eval::evaluate_corpus(identity, man, snrs, "all", seed);
  REQUIRE(rep.rows.size() == 1);

  // Replay the protocol by hand: same per-utterance seed, same noise draw,
  // same mix, scored without any enhancement.
  auto pool = man.noises_in("all");
  eval::EvalRow want;
  for (int i : man.split_indices("test")) {
    const synth::UttRecord& rec = man.utterances[static_cast<size_t>(i)];
    dsp::Waveform clean = clean_of(man, rec);
    const uint64_t us = derive_seed(seed, rec.id + "@" + std::to_string(4.0));
    Rng rng(us);
    const synth::NoiseRecord* nr = pool[static_cast<size_t>(
        rng.integer(0, static_cast<int64_t>(pool.size()) - 1))];
    dsp::Waveform nw;
    nw.samples = read_wav(man.resolve(nr->path), &nw.sample_rate);
    dsp::Waveform noisy =
        dsp::mix_at_snr(clean, nw, 4.0, derive_seed(us, "cut"));
    eval::EvalCell& cell =
        want.cells[rec.unseen_speaker ? 1 : 0][nr->split == "unseen" ? 1 : 0];
    ++cell.count;
    cell.mean_segsnr += eval::segsnr_db(clean, noisy);
    cell.mean_stoi += eval::stoi(clean, noisy);
  }
  const int test_size = static_cast<int>(man.split_indices("test").size());
  REQUIRE(test_size >= 2);
  CHECK(rep.rows[0].total() == test_size);
  for (int sp = 0; sp < 2; ++sp) {
    for (int nz = 0; nz < 2; ++nz) {
      const eval::EvalCell& got = rep.rows[0].cells[sp][nz];
      const eval::EvalCell& exp = want.cells[sp][nz];
      CHECK(got.count == exp.count);
      if (exp.count == 0) continue;
      CHECK(got.mean_segsnr ==
            doctest::Approx(exp.mean_segsnr / exp.count).epsilon(1e-12));
      CHECK(got.mean_stoi ==
            doctest::Approx(exp.mean_stoi / exp.count).epsilon(1e-12));
    }
  }
}

TEST_CASE("evaluate: seeded repeats and noise-split restriction") {
  const synth::CorpusManifest& man = eval_corpus();
  eval::EnhanceFn identity = [](const synth::UttRecord&,
                                const dsp::Waveform& noisy) { return noisy; };

  eval::EvalReport a = eval::evaluate_corpus(identity, man, {5.0, 0.0}, "all", 7);
  eval::EvalReport b = eval::evaluate_corpus(identity, man, {5.0, 0.0}, "all", 7);
  CHECK(a.jsonl() == b.jsonl());
  REQUIRE(a.rows.size() == 2);
  const int test_size = static_cast<int>(man.split_indices("test").size());
  for (const auto& row : a.rows) CHECK(row.total() == test_size);

  eval::EvalReport seen = eval::evaluate_corpus(identity, man, {5.0}, "seen", 7);
  for (const auto& row : seen.rows) {
    CHECK(row.total() == test_size);
    CHECK(row.cells[0][1].count == 0);
    CHECK(row.cells[1][1].count == 0);
  }

  eval::EvalReport empty = eval::evaluate_corpus(identity, man, {}, "all", 7);
  CHECK(empty.rows.empty());
  CHECK(empty.jsonl().empty());

  // One jsonl record per (snr, grid cell) pair: 2 snrs x 4 cells.
  const std::string lines = a.jsonl();
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 8);
}

TEST_CASE("evaluate: rejects bad setups") {
  const synth::CorpusManifest& man = eval_corpus();
  CHECK_THROWS_AS(
      eval::evaluate_corpus(eval::EnhanceFn(), man, {0.0}, "all", 1),
      ConfigError);

  eval::EnhanceFn identity = [](const synth::UttRecord&,
                                const dsp::Waveform& noisy) { return noisy; };
  CHECK_THROWS_AS(eval::evaluate_corpus(identity, man, {0.0}, "mystery", 1),
                  ConfigError);

  eval::EnhanceFn chopped = [](const synth::UttRecord&,
                               const dsp::Waveform& noisy) {
    dsp::Waveform out = noisy;
    out.samples.pop_back();
    return out;
  };
  CHECK_THROWS_AS(eval::evaluate_corpus(chopped, man, {0.0}, "all", 1),
                  DimensionError);
}

TEST_CASE("enhancer: plain checkpoint round trip keeps the input length") {
  const synth::CorpusManifest& man = eval_corpus();
  const std::string dir = fresh_dir("plain");
  senet::Model model(micro_model(senet::Modality::kAudioLipTongue, 21));
  senet::save_checkpoint(model, dir + "/model.ckpt");

  eval::Enhancer enh(dir + "/model.ckpt");
  CHECK(!enh.memory_backed());
  CHECK(enh.config().modality == senet::Modality::kAudioLipTongue);

  const synth::UttRecord& rec =
      man.utterances[static_cast<size_t>(man.split_indices("test")[0])];
  dsp::Waveform clean = clean_of(man, rec);
  dsp::Waveform noise =
      random_wave(static_cast<int64_t>(clean.samples.size()), 22);
  dsp::Waveform noisy = dsp::mix_at_snr(clean, noise, 0.0, 23);
  nn::Tensor lip = read_image_stack(man.resolve(rec.lip_path));
  nn::Tensor tongue = read_image_stack(man.resolve(rec.tongue_path));

  dsp::Waveform est = enh.enhance(noisy, &lip, &tongue, man.stft);
  CHECK(est.samples.size() == noisy.samples.size());
  CHECK(est.sample_rate == noisy.sample_rate);
  for (double v : est.samples) REQUIRE(std::isfinite(v));

  // Same call twice is bit-identical: eval-mode forwards only.
  dsp::Waveform again = enh.enhance(noisy, &lip, &tongue, man.stft);
  CHECK(again.samples == est.samples);

  dsp::StftConfig small;
  small.window_length = 256;
  small.hop = 128;
  small.fft_size = 256;
  CHECK_THROWS_AS(enh.enhance(noisy, &lip, &tongue, small), DimensionError);
  CHECK_THROWS_AS(enh.enhance(noisy, nullptr, &tongue, man.stft), ConfigError);
}

TEST_CASE("enhancer: memory checkpoint runs from lip input alone") {
  const synth::CorpusManifest& man = eval_corpus();
  const std::string dir = fresh_dir("memory");
  senet::Model model(micro_model(senet::Modality::kAudioLipTongue, 24));
  const int feat =
      model.config().channels * model.config().artic_flat_width();
  memnet::attach_memory(model.params(), memnet::init_memory(6, feat, 1.0, 25));
  senet::save_checkpoint(
      model, dir + "/mem.ckpt",
      {{"kind", "memory"}, {"slots", "6"}, {"gamma", "2.5"}});

  eval::Enhancer enh(dir + "/mem.ckpt");
  CHECK(enh.memory_backed());
  CHECK(enh.meta().at("gamma") == "2.5");

  eval::EvalReport rep =
      eval::evaluate_corpus(enh.corpus_fn(man), man, {3.0}, "seen", 31);
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.rows[0].total() ==
        static_cast<int>(man.split_indices("test").size()));

  // A memory checkpoint without a slot count cannot be sized for loading.
  senet::save_checkpoint(model, dir + "/bad.ckpt", {{"kind", "memory"}});
  CHECK_THROWS_AS(eval::Enhancer(dir + "/bad.ckpt"), ConfigError);

  senet::save_checkpoint(
      model, dir + "/nan.ckpt",
      {{"kind", "memory"}, {"slots", "6"}, {"gamma", "warm"}});
  CHECK_THROWS_AS(eval::Enhancer(dir + "/nan.ckpt"), ConfigError);
}

TEST_CASE("probe: separable classes are learned almost perfectly") {
  const int n = 100;
  Rng rng(26);
  nn::Tensor x({n, 2});
  std::vector<int> labels(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int c = i % 2;
    labels[static_cast<size_t>(i)] = c;
    x.at({i, 0}) = (c ? 1.5 : -1.5) + rng.normal(0.0, 0.05);
    x.at({i, 1}) = rng.normal(0.0, 1.0);
  }
  const double acc = eval::probe(x, labels, eval::ProbeConfig(), 27);
  CHECK(acc >= 0.95);
}

TEST_CASE("probe: shuffled labels sit at chance") {
  const int n = 400, k = 4;
  Rng rng(28);
  nn::Tensor x({n, 6});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal(0.0, 1.0);
  std::vector<int> labels(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = i % k;
  for (int i = n - 1; i > 0; --i)
    std::swap(labels[static_cast<size_t>(i)],
              labels[static_cast<size_t>(rng.integer(0, i))]);

  const double acc = eval::probe(x, labels, eval::ProbeConfig(), 29);
  const double chance = 1.0 / k;
  const double sigma = std::sqrt(chance * (1.0 - chance) / (0.2 * n));
  CHECK(acc > chance - 3.0 * sigma);
  CHECK(acc < chance + 3.0 * sigma);
}

TEST_CASE("probe: determinism and input checks") {
  const int n = 60;
  Rng rng(30);
  nn::Tensor x({n, 3});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal(0.0, 1.0);
  std::vector<int> labels(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = i % 2;

  const double a = eval::probe(x, labels, eval::ProbeConfig(), 33);
  const double b = eval::probe(x, labels, eval::ProbeConfig(), 33);
  CHECK(a == b);

  std::vector<int> short_labels(labels.begin(), labels.end() - 1);
  CHECK_THROWS_AS(eval::probe(x, short_labels, eval::ProbeConfig(), 1),
                  DimensionError);

  std::vector<int> ones(static_cast<size_t>(n), 0);
  CHECK_THROWS_AS(eval::probe(x, ones, eval::ProbeConfig(), 1), DataError);

  // 10 samples of class 1 cannot reach the per-class training minimum.
  std::vector<int> rare(static_cast<size_t>(n), 0);
  for (int i = 0; i < 10; ++i) rare[static_cast<size_t>(i)] = 1;
  CHECK_THROWS_AS(eval::probe(x, rare, eval::ProbeConfig(), 1), DataError);

  eval::ProbeConfig bad;
  bad.train_frac = 1.2;
  CHECK_THROWS_AS(eval::probe(x, labels, bad, 1), ConfigError);
  bad = eval::ProbeConfig();
  bad.epochs = 0;
  CHECK_THROWS_AS(eval::probe(x, labels, bad, 1), ConfigError);
}

TEST_CASE("collect: raw tongue pixels align with the frame labels") {
  const synth::CorpusManifest& man = eval_corpus();
  eval::FeatureSet fs = collect_probe_features(
      nullptr, man, "test", eval::ProbeSource::kRawTongueImages,
      eval::ProbeTarget::kPseudoPhoneme, 0);

  int want_n = 0;
  std::vector<int> want_labels;
  for (int i : man.split_indices("test")) {
    const synth::UttRecord& rec = man.utterances[static_cast<size_t>(i)];
    want_n += rec.frames;
    synth::LabelFile lf = synth::read_labels(man.resolve(rec.labels_path));
    want_labels.insert(want_labels.end(), lf.labels.begin(), lf.labels.end());
  }
  REQUIRE(fs.features.rank() == 2);
  CHECK(fs.features.dim(0) == want_n);
  CHECK(fs.features.dim(1) == man.image_h * man.image_w);
  CHECK(fs.labels == want_labels);
  CHECK(fs.classes == man.pseudo_phonemes);

  // First row is the first tongue frame, flattened.
  const synth::UttRecord& first =
      man.utterances[static_cast<size_t>(man.split_indices("test")[0])];
  nn::Tensor img = read_image_stack(man.resolve(first.tongue_path));
  for (int h = 0; h < man.image_h; ++h)
    for (int w = 0; w < man.image_w; ++w)
      REQUIRE(fs.features.at({0, h * man.image_w + w}) ==
              img.at({0, h, w}));

  eval::FeatureSet one = collect_probe_features(
      nullptr, man, "test", eval::ProbeSource::kRawTongueImages,
      eval::ProbeTarget::kPseudoPhoneme, 1);
  CHECK(one.features.dim(0) == first.frames);
}

TEST_CASE("collect: stem features and speaker targets") {
  const synth::CorpusManifest& man = eval_corpus();
  senet::Model model(micro_model(senet::Modality::kAudioLipTongue, 34));
  eval::FeatureSet fs = collect_probe_features(
      &model, man, "test", eval::ProbeSource::kRealTongueFeatures,
      eval::ProbeTarget::kSpeaker, 0);

  const int d =
      model.config().channels * model.config().artic_flat_width();
  CHECK(fs.features.dim(1) == d);
  CHECK(fs.classes == man.speakers_train + man.speakers_unseen);

  // Speaker labels are constant within each utterance.
  size_t at = 0;
  for (int i : man.split_indices("test")) {
    const synth::UttRecord& rec = man.utterances[static_cast<size_t>(i)];
    for (int s = 0; s < rec.frames; ++s)
      REQUIRE(fs.labels[at++] == rec.speaker_id);
  }
  CHECK(at == fs.labels.size());

  eval::FeatureSet again = collect_probe_features(
      &model, man, "test", eval::ProbeSource::kRealTongueFeatures,
      eval::ProbeTarget::kSpeaker, 0);
  CHECK(again.features.shape() == fs.features.shape());
  for (int64_t i = 0; i < fs.features.numel(); ++i)
    REQUIRE(again.features[i] == fs.features[i]);
}

TEST_CASE("collect: memory recall honors the addressing sharpness") {
  const synth::CorpusManifest& man = eval_corpus();
  senet::Model model(micro_model(senet::Modality::kAudioLipTongue, 35));
  const int feat =
      model.config().channels * model.config().artic_flat_width();
  memnet::MemoryBank bank = memnet::init_memory(5, feat, 1.0, 36);
  memnet::attach_memory(model.params(), bank);

  // Sharpness zero addresses every slot uniformly, so every recalled row is
  // the column mean of the value bank regardless of the lip input.
  eval::FeatureSet fs = collect_probe_features(
      &model, man, "test", eval::ProbeSource::kMemoryRecalled,
      eval::ProbeTarget::kPseudoPhoneme, 1, 0.0);
  CHECK(fs.features.dim(1) == feat);
  for (int d = 0; d < feat; ++d) {
    double mean = 0.0;
    for (int s = 0; s < 5; ++s) mean += bank.tongue_values.at({s, d});
    mean /= 5.0;
    for (int r = 0; r < fs.features.dim(0); ++r)
      REQUIRE(fs.features.at({r, d}) == doctest::Approx(mean).epsilon(1e-12));
  }

  // Sharp addressing produces rows that actually vary with the input.
  eval::FeatureSet sharp = collect_probe_features(
      &model, man, "test", eval::ProbeSource::kMemoryRecalled,
      eval::ProbeTarget::kPseudoPhoneme, 1, 25.0);
  double spread = 0.0;
  for (int r = 1; r < sharp.features.dim(0); ++r)
    spread += std::abs(sharp.features.at({r, 0}) - sharp.features.at({0, 0}));
  CHECK(spread > 0.0);
}

TEST_CASE("collect: rejects wrong sources and splits") {
  const synth::CorpusManifest& man = eval_corpus();
  CHECK_THROWS_AS(
      collect_probe_features(nullptr, man, "test",
                             eval::ProbeSource::kRealTongueFeatures,
                             eval::ProbeTarget::kPseudoPhoneme, 0),
      ConfigError);

  senet::Model plain(micro_model(senet::Modality::kAudioLipTongue, 37));
  CHECK_THROWS_AS(
      collect_probe_features(&plain, man, "test",
                             eval::ProbeSource::kMemoryRecalled,
                             eval::ProbeTarget::kPseudoPhoneme, 0),
      ConfigError);

  senet::Model lipless(micro_model(senet::Modality::kAudio, 38));
  CHECK_THROWS_AS(
      collect_probe_features(&lipless, man, "test",
                             eval::ProbeSource::kRealTongueFeatures,
                             eval::ProbeTarget::kPseudoPhoneme, 0),
      ConfigError);

  CHECK_THROWS_AS(
      collect_probe_features(nullptr, man, "nowhere",
                             eval::ProbeSource::kRawTongueImages,
                             eval::ProbeTarget::kPseudoPhoneme, 0),
      DataError);
}

TEST_CASE("probe source and target names round-trip") {
  for (auto s : {eval::ProbeSource::kRawTongueImages,
                 eval::ProbeSource::kRealTongueFeatures,
                 eval::ProbeSource::kMemoryRecalled})
    CHECK(eval::probe_source_from_name(eval::probe_source_name(s)) == s);
  for (auto t : {eval::ProbeTarget::kPseudoPhoneme, eval::ProbeTarget::kSpeaker})
    CHECK(eval::probe_target_from_name(eval::probe_target_name(t)) == t);
  CHECK_THROWS_AS(eval::probe_source_from_name("spectrogram"), ConfigError);
  CHECK_THROWS_AS(eval::probe_target_from_name("noise"), ConfigError);
}
