// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/senet.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "avse/common.hpp"
#include "avse/dsp.hpp"
#include "avse/optim.hpp"
#include "avse/rng.hpp"
#include "doctest.h"

using namespace avse;
namespace fs = std::filesystem;

namespace {

nn::Tensor random_tensor(std::vector<int> shape, uint64_t seed,
                         double scale = 1.0) {
  nn::Tensor t(std::move(shape));
  Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Tiny geometry for gradient checks: short stems, one-wide bottleneck.
senet::ModelConfig micro_cfg(senet::Modality m) {
  senet::ModelConfig cfg = senet::ModelConfig::toy(m);
  cfg.freq_bins = 17;
  cfg.image_h = 8;
  cfg.image_w = 8;
  cfg.channels = 3;
  cfg.lstm_hidden = 4;
  return cfg;
}

struct MicroInputs {
  nn::Tensor noisy, clean, lip, tongue, mask_target;
};

MicroInputs micro_inputs(const senet::ModelConfig& cfg, int B, int S,
                         uint64_t seed) {
  MicroInputs in;
  in.noisy = random_tensor({B, 2, cfg.freq_bins, S}, seed);
  in.clean = random_tensor({B, 2, cfg.freq_bins, S}, seed + 1, 0.5);
  in.lip = random_tensor({B, cfg.image_channels, S, cfg.image_h, cfg.image_w},
                         seed + 2, 0.3);
  in.tongue =
      random_tensor({B, cfg.image_channels, S, cfg.image_h, cfg.image_w},
                    seed + 3, 0.3);
  in.mask_target = senet::make_mask_target(in.clean, in.noisy);
  return in;
}

double loss_value(senet::Model& model, const MicroInputs& in, double alpha) {
  nn::Tape t;
  auto out = model.forward(t, in.noisy, &in.lip, &in.tongue, false);
  int loss = senet::loss_se(t, out, in.mask_target, in.clean, alpha);
  return t.val(loss)[0];
}

}  // namespace

TEST_CASE("config: feature widths across the ladder") {
  auto cfg = senet::ModelConfig::toy(senet::Modality::kAudioLipTongue);
  CHECK(cfg.audio_stem_mid() == 65);
  CHECK(cfg.audio_widths() == std::vector<int>{17, 9, 5, 3, 2, 1, 1, 1});
  CHECK(cfg.artic_flat_width() == 8);
  CHECK(cfg.artic_widths() == std::vector<int>{8, 4, 2, 1, 1, 1, 1, 1});
  CHECK(cfg.merged_widths() == std::vector<int>{25, 13, 7, 4, 3, 2, 2, 2});
  CHECK(cfg.lstm_input_size() == cfg.channels * 2);

  auto audio_only = senet::ModelConfig::toy(senet::Modality::kAudio);
  CHECK(audio_only.merged_widths() == audio_only.audio_widths());

  auto full = senet::ModelConfig::full(senet::Modality::kAudioLipTongue);
  CHECK(full.channels == 32);
  CHECK(full.artic_flat_width() == 8 * 16);
  CHECK(full.audio_widths()[0] == 17);

  auto bad = cfg;
  bad.freq_bins = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("init: seeded, modality-dependent parameter sets") {
  auto cfg = senet::ModelConfig::toy(senet::Modality::kAudioLipTongue);
  senet::Model a(cfg), b(cfg);
  CHECK(a.params().content_hash() == b.params().content_hash());

  auto cfg2 = cfg;
  cfg2.init_seed = cfg.init_seed + 1;
  senet::Model c(cfg2);
  CHECK(a.params().content_hash() != c.params().content_hash());

  CHECK(a.params().has("fuse.0.w"));
  CHECK(a.params().has("lip_stem.0.w"));
  CHECK(a.params().has("tongue_block.7.bn.running_var"));
  CHECK(a.params().has("lstm.1.w_hh"));
  CHECK(a.params().has("head.1.w"));

  senet::Model al(senet::ModelConfig::toy(senet::Modality::kAudioLip));
  CHECK(al.params().has("lip_stem.0.w"));
  CHECK(!al.params().has("tongue_stem.0.w"));
  CHECK(!al.params().has("fuse.0.w"));

  senet::Model ao(senet::ModelConfig::toy(senet::Modality::kAudio));
  CHECK(!ao.params().has("lip_stem.0.w"));
  CHECK(ao.params().trainable_elements() < al.params().trainable_elements());

  // Forget-gate bias block starts positive.
  const nn::Tensor& lb = a.params().get("lstm.0.b");
  int H = cfg.lstm_hidden;
  for (int i = H; i < 2 * H; ++i) CHECK(lb[i] > 0.5);
}

TEST_CASE("forward: shapes, tap count, mask bounds, enhance wiring") {
  auto cfg = senet::ModelConfig::toy(senet::Modality::kAudioLipTongue);
  senet::Model model(cfg);
  const int B = 2, S = 11, F = cfg.freq_bins;
  nn::Tensor noisy = random_tensor({B, 2, F, S}, 100);
  nn::Tensor lip = random_tensor({B, 3, S, cfg.image_h, cfg.image_w}, 101, 0.3);
  nn::Tensor tongue =
      random_tensor({B, 3, S, cfg.image_h, cfg.image_w}, 102, 0.3);

  nn::Tape t;
  auto out = model.forward(t, noisy, &lip, &tongue, false);

  CHECK(t.val(out.mask).shape() == std::vector<int>{B, 2, F, S});
  CHECK(t.val(out.enhanced).shape() == std::vector<int>{B, 2, F, S});
  CHECK(out.taps.size() == static_cast<size_t>(2 * cfg.blocks + 2));

  auto mw = cfg.merged_widths();
  for (int k = 0; k <= cfg.blocks; ++k) {
    CHECK(t.val(out.taps[static_cast<size_t>(k)]).shape() ==
          std::vector<int>{B, cfg.channels, S, mw[static_cast<size_t>(k)]});
  }
  // Bridge keeps the bottleneck geometry; decoder stages widen back up.
  CHECK(t.val(out.taps[static_cast<size_t>(cfg.blocks + 1)]).shape() ==
        std::vector<int>{B, cfg.channels, S, mw.back()});
  CHECK(t.val(out.taps.back()).shape() ==
        std::vector<int>{B, cfg.channels, S, cfg.audio_widths()[0]});

  CHECK(t.val(out.early_lip).shape() ==
        std::vector<int>{B, cfg.channels, S, cfg.artic_flat_width()});

  const nn::Tensor& mask = t.val(out.mask);
  for (int64_t i = 0; i < mask.numel(); ++i) {
    CHECK(mask[i] > -1.0);
    CHECK(mask[i] < 1.0);
  }

  const nn::Tensor& enh = t.val(out.enhanced);
  for (int b = 0; b < B; ++b) {
    for (int f = 0; f < F; f += 37) {
      for (int s = 0; s < S; s += 3) {
        double mre = mask.at({b, 0, f, s}), mim = mask.at({b, 1, f, s});
        double nre = noisy.at({b, 0, f, s}), nim = noisy.at({b, 1, f, s});
        CHECK(enh.at({b, 0, f, s}) ==
              doctest::Approx(mre * nre - mim * nim).epsilon(1e-12));
        CHECK(enh.at({b, 1, f, s}) ==
              doctest::Approx(mre * nim + mim * nre).epsilon(1e-12));
      }
    }
  }

  // The articulation path is live: a different lip stream changes the mask.
  nn::Tensor lip2 = random_tensor({B, 3, S, cfg.image_h, cfg.image_w}, 999, 0.3);
  nn::Tape t2;
  auto out2 = model.forward(t2, noisy, &lip2, &tongue, false);
  bool differs = false;
  for (int64_t i = 0; i < mask.numel(); ++i) {
    differs = differs || mask[i] != t2.val(out2.mask)[i];
  }
  CHECK(differs);

  // Eval passes are pure: same inputs reproduce the same mask bit for bit.
  nn::Tape t3;
  auto out3 = model.forward(t3, noisy, &lip, &tongue, false);
  bool same = true;
  for (int64_t i = 0; i < mask.numel(); ++i) {
    same = same && mask[i] == t3.val(out3.mask)[i];
  }
  CHECK(same);
}

TEST_CASE("forward: modality input requirements") {
  auto cfg = senet::ModelConfig::toy(senet::Modality::kAudioLip);
  senet::Model model(cfg);
  nn::Tensor noisy = random_tensor({1, 2, cfg.freq_bins, 4}, 5);
  nn::Tape t;
  CHECK_THROWS_AS(model.forward(t, noisy, nullptr, nullptr, false),
                  ConfigError);

  senet::Model ao(senet::ModelConfig::toy(senet::Modality::kAudio));
  nn::Tape t2;
  auto out = ao.forward(t2, noisy, nullptr, nullptr, false);
  CHECK(t2.val(out.mask).dim(2) == cfg.freq_bins);
  CHECK(out.early_lip == -1);
  CHECK(out.early_tongue == -1);
  nn::Tape t3;
  CHECK_THROWS_AS(ao.forward(t3, noisy, nullptr, nullptr, false, 7),
                  ConfigError);
}

TEST_CASE("mask target: batch version matches the dsp reference") {
  dsp::StftConfig scfg;
  scfg.window_length = 64;
  scfg.hop = 23;
  scfg.fft_size = 64;
  Rng rng(4242);
  dsp::Waveform clean{{}, 16000}, noise{{}, 16000};
  for (int i = 0; i < 400; ++i) {
    clean.samples.push_back(rng.normal());
    noise.samples.push_back(rng.normal());
  }
  dsp::Waveform noisy = clean;
  for (size_t i = 0; i < noisy.samples.size(); ++i) {
    noisy.samples[i] += 0.7 * noise.samples[i];
  }
  auto cs = dsp::stft(clean, scfg);
  auto ns = dsp::stft(noisy, scfg);
  auto ref = dsp::mask_target(cs, ns);

  const int F = cs.freq_bins(), S = cs.frames();
  nn::Tensor cb({1, 2, F, S}), nb({1, 2, F, S});
  for (int64_t i = 0; i < cs.real.numel(); ++i) {
    cb[i] = cs.real[i];
    cb[cs.real.numel() + i] = cs.imag[i];
    nb[i] = ns.real[i];
    nb[ns.real.numel() + i] = ns.imag[i];
  }
  nn::Tensor got = senet::make_mask_target(cb, nb);
  for (int64_t i = 0; i < ref.real.numel(); ++i) {
    CHECK(got[i] == doctest::Approx(ref.real[i]).epsilon(1e-12));
    CHECK(got[ref.real.numel() + i] ==
          doctest::Approx(ref.imag[i]).epsilon(1e-12));
  }
}

TEST_CASE("loss_se: equals mask mse plus alpha times spectrum mse") {
  auto cfg = micro_cfg(senet::Modality::kAudioLipTongue);
  senet::Model model(cfg);
  auto in = micro_inputs(cfg, 2, 5, 50);

  nn::Tape t;
  auto out = model.forward(t, in.noisy, &in.lip, &in.tongue, false);
  const double alpha = 0.37;
  int loss = senet::loss_se(t, out, in.mask_target, in.clean, alpha);

  const nn::Tensor& mask = t.val(out.mask);
  const nn::Tensor& enh = t.val(out.enhanced);
  double l_mask = 0, l_stft = 0;
  for (int64_t i = 0; i < mask.numel(); ++i) {
    double dm = mask[i] - in.mask_target[i];
    double de = enh[i] - in.clean[i];
    l_mask += dm * dm;
    l_stft += de * de;
  }
  l_mask /= static_cast<double>(mask.numel());
  l_stft /= static_cast<double>(enh.numel());
  CHECK(t.val(loss)[0] ==
        doctest::Approx(l_mask + alpha * l_stft).epsilon(1e-12));
}

TEST_CASE("gradients: finite differences through the whole model") {
  auto cfg = micro_cfg(senet::Modality::kAudioLipTongue);
  senet::Model model(cfg);
  auto in = micro_inputs(cfg, 2, 4, 31);
  const double alpha = 0.5;

  nn::Tape t;
  auto out = model.forward(t, in.noisy, &in.lip, &in.tongue, false);
  int loss = senet::loss_se(t, out, in.mask_target, in.clean, alpha);
  t.backward(loss);

  // One coordinate from every corner of the network.
  const std::vector<std::string> names = {
      "audio_stem.0.w",  "audio_block.2.w",     "lip_stem.1.w",
      "tongue_block.4.w", "fuse.3.w",           "lstm.0.w_ih",
      "lstm.1.w_hh",      "lstm_proj.w",        "dec.6.w",
      "dec.1.b",          "head.0.w",           "head.1.w",
      "audio_stem.1.bn.gamma", "dec.3.bn.beta",
  };
  Rng pick(77);
  double max_rel = 0;
  for (const auto& name : names) {
    nn::Tensor& value = model.params().get(name);
    int64_t idx = pick.integer(0, value.numel() - 1);
    double analytic = t.grad(out.param_nodes.at(name))[idx];

    const double h = 1e-4;
    double orig = value[idx];
    value[idx] = orig + h;
    double up = loss_value(model, in, alpha);
    value[idx] = orig - h;
    double down = loss_value(model, in, alpha);
    value[idx] = orig;
    double fd = (up - down) / (2 * h);

    double rel = std::abs(fd - analytic) /
                 std::max({std::abs(fd), std::abs(analytic), 1e-6});
    max_rel = std::max(max_rel, rel);
    CAPTURE(name);
    CHECK(rel < 2e-3);
  }
  CHECK(max_rel < 2e-3);
}

TEST_CASE("frozen model: no gradients, no drift") {
  auto cfg = micro_cfg(senet::Modality::kAudioLipTongue);
  senet::Model model(cfg);
  auto in = micro_inputs(cfg, 1, 4, 8);
  uint64_t before = model.params().content_hash();

  model.set_frozen(true);
  // Training-mode pass on a frozen model: batch statistics are used but
  // nothing (weights or running stats) may change.
  nn::Tape t;
  auto tout = model.forward(t, in.noisy, &in.lip, &in.tongue, true);
  CHECK(!t.needs_grad(tout.mask));
  CHECK(model.params().content_hash() == before);

  nn::Tape t2;
  auto out = model.forward(t2, in.noisy, &in.lip, &in.tongue, false);
  CHECK(!t2.needs_grad(out.mask));
  int loss = senet::loss_se(t2, out, in.mask_target, in.clean, 0.5);
  CHECK_THROWS_AS(t2.backward(loss), ConfigError);
  CHECK(model.params().content_hash() == before);

  // Unfrozen, gradients flow again; a training step changes the weights.
  model.set_frozen(false);
  nn::Tape t3;
  auto out3 = model.forward(t3, in.noisy, &in.lip, &in.tongue, true);
  CHECK(t3.needs_grad(out3.mask));
  int loss3 = senet::loss_se(t3, out3, in.mask_target, in.clean, 0.5);
  t3.backward(loss3);
  optim::Adam opt;
  opt.step(model.params(), t3, out3.param_nodes);
  CHECK(model.params().content_hash() != before);
}

TEST_CASE("training-mode batch norm updates running statistics") {
  auto cfg = micro_cfg(senet::Modality::kAudioLip);
  senet::Model model(cfg);
  auto in = micro_inputs(cfg, 2, 4, 12);
  const nn::Tensor before = model.params().get("audio_stem.0.bn.running_mean");
  nn::Tape t;
  model.forward(t, in.noisy, &in.lip, nullptr, true);
  const nn::Tensor& after = model.params().get("audio_stem.0.bn.running_mean");
  bool moved = false;
  for (int64_t i = 0; i < after.numel(); ++i) {
    moved = moved || after[i] != before[i];
  }
  CHECK(moved);
}

TEST_CASE("checkpoints: strict round-trip and config guard") {
  auto cfg = micro_cfg(senet::Modality::kAudioLipTongue);
  senet::Model model(cfg);
  // Make the state distinctive before saving.
  auto in = micro_inputs(cfg, 1, 4, 71);
  nn::Tape t;
  auto out = model.forward(t, in.noisy, &in.lip, &in.tongue, true);
  int loss = senet::loss_se(t, out, in.mask_target, in.clean, 0.5);
  t.backward(loss);
  optim::Adam opt;
  opt.step(model.params(), t, out.param_nodes);

  auto path = (fs::temp_directory_path() / "avse_test_ckpt.bin").string();
  senet::save_checkpoint(model, path, {{"note", "unit"}});

  senet::Model fresh(cfg);
  CHECK(fresh.params().content_hash() != model.params().content_hash());
  auto meta = senet::load_checkpoint(fresh, path);
  CHECK(meta.at("note") == "unit");
  CHECK(fresh.params().content_hash() == model.params().content_hash());

  auto peeked = senet::peek_checkpoint_config(path);
  CHECK(peeked.freq_bins == cfg.freq_bins);
  CHECK(peeked.modality == cfg.modality);

  auto other = cfg;
  other.channels += 1;
  senet::Model wrong(other);
  CHECK_THROWS_AS(senet::load_checkpoint(wrong, path), ConfigError);
}

TEST_CASE("partial load: shared names copied, mismatches reported") {
  auto teacher_cfg = senet::ModelConfig::toy(senet::Modality::kAudioLipTongue);
  senet::Model teacher(teacher_cfg);
  auto path = (fs::temp_directory_path() / "avse_test_teacher.bin").string();
  senet::save_checkpoint(teacher, path);

  // Lip-only student: every one of its parameters exists in the teacher
  // with the same shape, because fusion keeps per-depth widths equal.
  auto al_cfg = senet::ModelConfig::toy(senet::Modality::kAudioLip);
  al_cfg.init_seed = 999;
  senet::Model student(al_cfg);
  auto report = senet::load_partial_weights(student, path);
  CHECK(report.missing_in_checkpoint.empty());
  CHECK(report.shape_mismatch.empty());
  CHECK(report.loaded.size() == student.params().entries().size());
  const nn::Tensor& tw = teacher.params().get("lip_stem.0.w");
  const nn::Tensor& sw = student.params().get("lip_stem.0.w");
  bool equal = true;
  for (int64_t i = 0; i < tw.numel(); ++i) equal = equal && tw[i] == sw[i];
  CHECK(equal);

  // Audio-only student: the bottleneck is narrower, so the bridge weights
  // cannot transfer and must be reported, not silently copied.
  auto ao_cfg = senet::ModelConfig::toy(senet::Modality::kAudio);
  senet::Model ao(ao_cfg);
  auto r2 = senet::load_partial_weights(ao, path);
  CHECK(std::find(r2.shape_mismatch.begin(), r2.shape_mismatch.end(),
                  "lstm.0.w_ih") != r2.shape_mismatch.end());
  CHECK(std::find(r2.shape_mismatch.begin(), r2.shape_mismatch.end(),
                  "lstm_proj.w") != r2.shape_mismatch.end());
  CHECK(std::find(r2.loaded.begin(), r2.loaded.end(), "audio_stem.0.w") !=
        r2.loaded.end());
  CHECK(std::find(r2.loaded.begin(), r2.loaded.end(), "lstm.1.w_hh") !=
        r2.loaded.end());
  CHECK(r2.missing_in_checkpoint.empty());
}

TEST_CASE("tongue override feeds the tongue ladder from an external node") {
  auto cfg = micro_cfg(senet::Modality::kAudioLipTongue);
  senet::Model model(cfg);
  auto in = micro_inputs(cfg, 1, 4, 21);

  nn::Tape t;
  auto base = model.forward(t, in.noisy, &in.lip, &in.tongue, false);

  nn::Tape t2;
  nn::Tensor recalled = random_tensor(
      {1, cfg.channels, 4, cfg.artic_flat_width()}, 404, 0.2);
  int override_node = t2.constant(recalled);
  auto out =
      model.forward(t2, in.noisy, &in.lip, nullptr, false, override_node);
  CHECK(out.early_tongue == override_node);

  bool differs = false;
  const nn::Tensor& m1 = t.val(base.mask);
  const nn::Tensor& m2 = t2.val(out.mask);
  for (int64_t i = 0; i < m1.numel(); ++i) differs = differs || m1[i] != m2[i];
  CHECK(differs);
}
