// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/senet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "avse/common.hpp"
#include "avse/rng.hpp"
#include "json.hpp"

using nlohmann::json;

namespace avse::senet {

namespace {

// Convolution output size along one axis.
int co(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }
int pool_ceil(int in) { return (in + 1) / 2; }

constexpr char kCkptMagic[] = "AVSECKPT1";

}  // namespace

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::kAudio: return "audio";
    case Modality::kAudioLip: return "audio_lip";
    case Modality::kAudioTongue: return "audio_tongue";
    case Modality::kAudioLipTongue: return "audio_lip_tongue";
  }
  throw ConfigError("bad modality");
}

Modality modality_from_name(const std::string& name) {
  if (name == "audio") return Modality::kAudio;
  if (name == "audio_lip") return Modality::kAudioLip;
  if (name == "audio_tongue") return Modality::kAudioTongue;
  if (name == "audio_lip_tongue") return Modality::kAudioLipTongue;
  throw ConfigError("unknown modality: " + name);
}

ModelConfig ModelConfig::toy(Modality m) {
  ModelConfig cfg;
  cfg.modality = m;
  return cfg;
}

ModelConfig ModelConfig::full(Modality m) {
  ModelConfig cfg;
  cfg.modality = m;
  cfg.channels = 32;
  cfg.lstm_hidden = 128;
  cfg.image_h = 64;
  cfg.image_w = 128;
  return cfg;
}

void ModelConfig::validate() const {
  check_config(freq_bins >= 17, "freq_bins too small for the audio stem");
  check_config(channels >= 1, "channels must be positive");
  check_config(lstm_hidden >= 1, "lstm_hidden must be positive");
  check_config(image_h >= 8 && image_w >= 8, "image size must be at least 8x8");
  check_config(image_channels >= 1, "image_channels must be positive");
  check_config(blocks >= 1, "need at least one feature block");
  check_config(leaky_slope > 0.0 && leaky_slope < 1.0, "bad leaky slope");
}

int ModelConfig::audio_stem_mid() const { return co(freq_bins, 5, 4, 2); }

std::vector<int> ModelConfig::audio_widths() const {
  std::vector<int> w;
  w.push_back(co(audio_stem_mid(), 5, 4, 2));
  for (int k = 1; k <= blocks; ++k) w.push_back(pool_ceil(w.back()));
  return w;
}

int ModelConfig::artic_flat_width() const {
  int h = image_h, w = image_w;
  for (int i = 0; i < 3; ++i) {
    h = co(h, 3, 2, 1);
    w = co(w, 3, 2, 1);
  }
  return h * w;
}

std::vector<int> ModelConfig::artic_widths() const {
  std::vector<int> w;
  w.push_back(artic_flat_width());
  for (int k = 1; k <= blocks; ++k) w.push_back(pool_ceil(w.back()));
  return w;
}

std::vector<int> ModelConfig::merged_widths() const {
  std::vector<int> a = audio_widths();
  if (modality == Modality::kAudio) return a;
  std::vector<int> v = artic_widths();
  for (size_t i = 0; i < a.size(); ++i) a[i] += v[i];
  return a;
}

int ModelConfig::lstm_input_size() const {
  return channels * merged_widths().back();
}

nn::Tensor& ParamStore::create(const std::string& name, std::vector<int> shape,
                               bool trainable) {
  check_config(entries_.find(name) == entries_.end(),
               "duplicate parameter: " + name);
  auto& e = entries_[name];
  e.value = nn::Tensor(std::move(shape));
  e.trainable = trainable;
  return e.value;
}

bool ParamStore::has(const std::string& name) const {
  return entries_.find(name) != entries_.end();
}

nn::Tensor& ParamStore::get(const std::string& name) {
  auto it = entries_.find(name);
  check_config(it != entries_.end(), "unknown parameter: " + name);
  return it->second.value;
}

const nn::Tensor& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  check_config(it != entries_.end(), "unknown parameter: " + name);
  return it->second.value;
}

int64_t ParamStore::trainable_elements() const {
  int64_t n = 0;
  for (const auto& [name, e] : entries_) {
    if (e.trainable) n += e.value.numel();
  }
  return n;
}

uint64_t ParamStore::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, e] : entries_) {
    mix(name.data(), name.size());
    for (int d : e.value.shape()) mix(&d, sizeof(d));
    mix(e.value.data(), static_cast<size_t>(e.value.numel()) * sizeof(double));
  }
  return h;
}

bool ParamStore::is_running_stat(const std::string& name) {
  auto ends_with = [&](const char* suf) {
    size_t n = std::strlen(suf);
    return name.size() >= n && name.compare(name.size() - n, n, suf) == 0;
  };
  return ends_with(".running_mean") || ends_with(".running_var");
}

namespace {

void fill_uniform(nn::Tensor& t, double bound, Rng& rng) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
}

struct Init {
  ParamStore& ps;
  uint64_t seed;

  Rng rng_for(const std::string& name) const {
    return Rng(derive_seed(seed, "init:" + name));
  }
  void conv(const std::string& name, int cout, int cin,
            std::vector<int> kernel) {
    int64_t fan_in = cin;
    for (int k : kernel) fan_in *= k;
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Rng rng = rng_for(name);
    std::vector<int> wshape = {cout, cin};
    wshape.insert(wshape.end(), kernel.begin(), kernel.end());
    fill_uniform(ps.create(name + ".w", std::move(wshape), true), bound, rng);
    fill_uniform(ps.create(name + ".b", {cout}, true), bound, rng);
  }
  // conv_transpose weights are [Cin, Cout, k...]
  void tconv(const std::string& name, int cin, int cout,
             std::vector<int> kernel) {
    int64_t fan_in = cin;
    for (int k : kernel) fan_in *= k;
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Rng rng = rng_for(name);
    std::vector<int> wshape = {cin, cout};
    wshape.insert(wshape.end(), kernel.begin(), kernel.end());
    fill_uniform(ps.create(name + ".w", std::move(wshape), true), bound, rng);
    fill_uniform(ps.create(name + ".b", {cout}, true), bound, rng);
  }
  void linear(const std::string& name, int out, int in) {
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Rng rng = rng_for(name);
    fill_uniform(ps.create(name + ".w", {out, in}, true), bound, rng);
    fill_uniform(ps.create(name + ".b", {out}, true), bound, rng);
  }
  void bn(const std::string& name, int c) {
    nn::Tensor& gamma = ps.create(name + ".gamma", {c}, true);
    for (int64_t i = 0; i < gamma.numel(); ++i) gamma[i] = 1.0;
    ps.create(name + ".beta", {c}, true);
    ps.create(name + ".running_mean", {c}, false);
    nn::Tensor& var = ps.create(name + ".running_var", {c}, false);
    for (int64_t i = 0; i < var.numel(); ++i) var[i] = 1.0;
  }
  void lstm(const std::string& name, int in, int hidden) {
    double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    Rng rng = rng_for(name);
    fill_uniform(ps.create(name + ".w_ih", {4 * hidden, in}, true), bound, rng);
    fill_uniform(ps.create(name + ".w_hh", {4 * hidden, hidden}, true), bound,
                 rng);
    nn::Tensor& b = ps.create(name + ".b", {4 * hidden}, true);
    fill_uniform(b, bound, rng);
    // Positive forget-gate bias so early training does not flush state.
    for (int i = hidden; i < 2 * hidden; ++i) b[i] += 1.0;
  }
};

}  // namespace

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Init init{params_, cfg_.init_seed};
  const int C = cfg_.channels;

  init.conv("audio_stem.0", C, 2, {3, 5});
  init.bn("audio_stem.0.bn", C);
  init.conv("audio_stem.1", C, C, {3, 5});
  init.bn("audio_stem.1.bn", C);
  for (int k = 1; k <= cfg_.blocks; ++k) {
    std::string name = "audio_block." + std::to_string(k);
    init.conv(name, C, C, {3, 3});
    init.bn(name + ".bn", C);
  }

  auto make_stream = [&](const std::string& stream) {
    for (int i = 0; i < 3; ++i) {
      std::string name = stream + "_stem." + std::to_string(i);
      init.conv(name, C, i == 0 ? cfg_.image_channels : C, {3, 3, 3});
      init.bn(name + ".bn", C);
    }
    for (int k = 1; k <= cfg_.blocks; ++k) {
      std::string name = stream + "_block." + std::to_string(k);
      init.conv(name, C, C, {3, 3});
      init.bn(name + ".bn", C);
    }
  };
  if (uses_lip(cfg_.modality)) make_stream("lip");
  if (uses_tongue(cfg_.modality)) make_stream("tongue");

  if (cfg_.has_fusion()) {
    std::vector<int> v = cfg_.artic_widths();
    for (int k = 0; k <= cfg_.blocks; ++k) {
      init.linear("fuse." + std::to_string(k), v[static_cast<size_t>(k)],
                  2 * v[static_cast<size_t>(k)]);
    }
  }

  const int I = cfg_.lstm_input_size();
  init.lstm("lstm.0", I, cfg_.lstm_hidden);
  init.lstm("lstm.1", cfg_.lstm_hidden, cfg_.lstm_hidden);
  init.linear("lstm_proj", I, cfg_.lstm_hidden);

  for (int k = cfg_.blocks; k >= 1; --k) {
    std::string name = "dec." + std::to_string(k);
    init.conv(name, C, 2 * C, {3, 3});
    init.bn(name + ".bn", C);
  }

  init.tconv("head.0", 2 * C, C, {3, 5});
  init.bn("head.0.bn", C);
  init.tconv("head.1", C, 2, {3, 5});
}

ForwardCtx Model::begin_forward(nn::Tape& t, bool training) {
  ForwardCtx ctx;
  ctx.tape = &t;
  ctx.training = training;
  for (auto& [name, e] : params_.entries()) {
    if (ParamStore::is_running_stat(name)) continue;  // handled by batch_norm
    ctx.pn[name] = t.leaf(e.value, e.trainable && !frozen_);
  }
  return ctx;
}

int Model::bn_apply(ForwardCtx& ctx, int x, const std::string& prefix) {
  nn::BatchNormState state;
  state.running_mean = params_.get(prefix + ".running_mean");
  state.running_var = params_.get(prefix + ".running_var");
  int y = nn::batch_norm(*ctx.tape, x, ctx.pn.at(prefix + ".gamma"),
                         ctx.pn.at(prefix + ".beta"), state, ctx.training);
  // A frozen model may normalize with batch statistics (a teacher sharing the
  // student's view of a batch) but must never drift.
  if (ctx.training && !frozen_) {
    params_.get(prefix + ".running_mean") = state.running_mean;
    params_.get(prefix + ".running_var") = state.running_var;
  }
  return y;
}

int Model::conv_block(ForwardCtx& ctx, int x, const std::string& prefix,
                      const nn::ConvSpec& spec) {
  int y = nn::conv(*ctx.tape, x, ctx.pn.at(prefix + ".w"),
                   ctx.pn.at(prefix + ".b"), spec);
  y = bn_apply(ctx, y, prefix + ".bn");
  return nn::leaky_relu(*ctx.tape, y, cfg_.leaky_slope);
}

AudioEncoding Model::encode_audio(ForwardCtx& ctx,
                                  const nn::Tensor& noisy_spec) {
  check_dims(noisy_spec.rank() == 4 && noisy_spec.dim(1) == 2 &&
                 noisy_spec.dim(2) == cfg_.freq_bins,
             "expected noisy spectrogram [B,2,F,S]");
  nn::Tape& t = *ctx.tape;
  int x = t.constant(noisy_spec);
  x = nn::permute(t, x, {0, 1, 3, 2});  // [B,2,S,F]: squeeze frequency last
  const nn::ConvSpec stem{{1, 4}, {1, 2}};
  x = conv_block(ctx, x, "audio_stem.0", stem);
  x = conv_block(ctx, x, "audio_stem.1", stem);

  AudioEncoding enc;
  enc.levels.push_back(x);
  const nn::ConvSpec same{{1, 1}, {1, 1}};
  for (int k = 1; k <= cfg_.blocks; ++k) {
    x = conv_block(ctx, x, "audio_block." + std::to_string(k), same);
    x = nn::avg_pool_last(t, x);
    enc.levels.push_back(x);
  }
  return enc;
}

int Model::articulation_stem(ForwardCtx& ctx, const nn::Tensor& images,
                             const std::string& stream) {
  check_config(stream == "lip" || stream == "tongue", "unknown stream");
  check_dims(images.rank() == 5 && images.dim(1) == cfg_.image_channels &&
                 images.dim(3) == cfg_.image_h && images.dim(4) == cfg_.image_w,
             "expected image stream [B,C,S,H,W]");
  nn::Tape& t = *ctx.tape;
  int x = t.constant(images);
  const nn::ConvSpec spec{{1, 2, 2}, {1, 1, 1}};
  for (int i = 0; i < 3; ++i) {
    x = conv_block(ctx, x, stream + "_stem." + std::to_string(i), spec);
  }
  // Collapse the spatial grid into one feature axis: [B,C,S,H',W'] ->
  // [B,C,S,H'*W'] (the two trailing axes are contiguous).
  const auto& s = t.val(x).shape();
  return nn::reshape(t, x, {s[0], s[1], s[2], s[3] * s[4]});
}

ArtEncoding Model::articulation_blocks(ForwardCtx& ctx, int early,
                                       const std::string& stream) {
  nn::Tape& t = *ctx.tape;
  check_dims(t.val(early).rank() == 4 &&
                 t.val(early).dim(3) == cfg_.artic_flat_width(),
             "articulation features have the wrong width");
  ArtEncoding enc;
  enc.early = early;
  const nn::ConvSpec same{{1, 1}, {1, 1}};
  int x = early;
  for (int k = 1; k <= cfg_.blocks; ++k) {
    x = conv_block(ctx, x, stream + "_block." + std::to_string(k), same);
    x = nn::avg_pool_last(t, x);
    enc.deep.push_back(x);
  }
  return enc;
}

ArtEncoding Model::encode_articulation(ForwardCtx& ctx,
                                       const nn::Tensor& images,
                                       const std::string& stream) {
  return articulation_blocks(ctx, articulation_stem(ctx, images, stream),
                             stream);
}

int Model::fuse_articulation(ForwardCtx& ctx, int lip_k, int tongue_k,
                             int depth) {
  if (lip_k < 0 && tongue_k < 0) return -1;
  if (lip_k < 0) return tongue_k;
  if (tongue_k < 0) return lip_k;
  check_config(cfg_.has_fusion(), "fusion weights exist only for two streams");
  nn::Tape& t = *ctx.tape;
  int cat = nn::concat(t, {lip_k, tongue_k}, 3);
  const auto& s = t.val(cat).shape();
  int flat = nn::reshape(t, cat, {s[0] * s[1] * s[2], s[3]});
  std::string name = "fuse." + std::to_string(depth);
  int y = nn::linear(t, flat, ctx.pn.at(name + ".w"), ctx.pn.at(name + ".b"));
  return nn::reshape(t, y, {s[0], s[1], s[2], s[3] / 2});
}

ModelOutput Model::forward(nn::Tape& t, const nn::Tensor& noisy_spec,
                           const nn::Tensor* lip3, const nn::Tensor* tongue3,
                           bool training, int tongue_early_override) {
  ForwardCtx ctx = begin_forward(t, training);
  Overrides ov;
  ov.tongue_early = tongue_early_override;
  return forward_in(ctx, noisy_spec, lip3, tongue3, ov);
}

ModelOutput Model::forward_in(ForwardCtx& ctx, const nn::Tensor& noisy_spec,
                              const nn::Tensor* lip3,
                              const nn::Tensor* tongue3, const Overrides& ov) {
  nn::Tape& t = *ctx.tape;
  ModelOutput out;
  out.param_nodes = ctx.pn;

  AudioEncoding audio = encode_audio(ctx, noisy_spec);
  const int B = noisy_spec.dim(0), S = noisy_spec.dim(3);

  auto check_images = [&](const nn::Tensor* img, const char* what) {
    check_config(img != nullptr,
                 std::string("modality needs ") + what + " images");
    check_dims(img->dim(0) == B && img->dim(2) == S,
               std::string(what) + " images disagree with the spectrogram");
  };

  ArtEncoding lip, tongue;
  if (uses_lip(cfg_.modality)) {
    int early;
    if (ov.lip_early >= 0) {
      early = ov.lip_early;
    } else {
      check_images(lip3, "lip");
      early = articulation_stem(ctx, *lip3, "lip");
    }
    lip = articulation_blocks(ctx, early, "lip");
    out.early_lip = lip.early;
  } else {
    check_config(ov.lip_early < 0,
                 "lip override on a model without a lip stream");
  }
  if (uses_tongue(cfg_.modality)) {
    int early;
    if (ov.tongue_early >= 0) {
      early = ov.tongue_early;
    } else {
      check_images(tongue3, "tongue");
      early = articulation_stem(ctx, *tongue3, "tongue");
    }
    tongue = articulation_blocks(ctx, early, "tongue");
    out.early_tongue = early;
  } else {
    check_config(ov.tongue_early < 0,
                 "tongue override on a model without a tongue stream");
  }

  // Per-depth merged representations (the distillation taps).
  std::vector<int> merged;
  for (int k = 0; k <= cfg_.blocks; ++k) {
    int lip_k = out.early_lip >= 0
                    ? (k == 0 ? lip.early : lip.deep[static_cast<size_t>(k - 1)])
                    : -1;
    int tongue_k =
        out.early_tongue >= 0
            ? (k == 0 ? tongue.early : tongue.deep[static_cast<size_t>(k - 1)])
            : -1;
    int fused = fuse_articulation(ctx, lip_k, tongue_k, k);
    int a_k = audio.levels[static_cast<size_t>(k)];
    merged.push_back(fused < 0 ? a_k : nn::concat(t, {a_k, fused}, 3));
  }
  out.taps = merged;

  // Temporal bridge over the bottleneck.
  {
    int x = merged.back();
    const auto& s = t.val(x).shape();  // [B,C,S,D]
    x = nn::permute(t, x, {0, 2, 1, 3});
    x = nn::reshape(t, x, {s[0], s[2], s[1] * s[3]});
    x = nn::lstm(t, x, ctx.pn.at("lstm.0.w_ih"), ctx.pn.at("lstm.0.w_hh"),
                 ctx.pn.at("lstm.0.b"), cfg_.lstm_hidden);
    x = nn::lstm(t, x, ctx.pn.at("lstm.1.w_ih"), ctx.pn.at("lstm.1.w_hh"),
                 ctx.pn.at("lstm.1.b"), cfg_.lstm_hidden);
    x = nn::reshape(t, x, {s[0] * s[2], cfg_.lstm_hidden});
    x = nn::linear(t, x, ctx.pn.at("lstm_proj.w"), ctx.pn.at("lstm_proj.b"));
    x = nn::reshape(t, x, {s[0], s[2], s[1], s[3]});
    x = nn::permute(t, x, {0, 2, 1, 3});
    out.taps.push_back(x);
  }

  // Decoder ladder with skip connections into each merged depth.
  std::vector<int> mw = cfg_.merged_widths();
  const nn::ConvSpec same{{1, 1}, {1, 1}};
  int prev = out.taps.back();
  for (int k = cfg_.blocks; k >= 1; --k) {
    int x = nn::concat(t, {prev, merged[static_cast<size_t>(k)]}, 1);
    int target = k > 1 ? mw[static_cast<size_t>(k - 1)] : cfg_.audio_widths()[0];
    x = nn::upsample_last_to(t, x, target);
    x = conv_block(ctx, x, "dec." + std::to_string(k), same);
    prev = x;
    out.taps.push_back(x);
  }

  // Mask head mirrors the audio stem back to full frequency resolution.
  {
    int x = nn::concat(t, {prev, audio.levels[0]}, 1);
    const nn::ConvSpec spec{{1, 4}, {1, 2}};
    x = nn::conv_transpose(t, x, ctx.pn.at("head.0.w"), ctx.pn.at("head.0.b"),
                           spec);
    x = bn_apply(ctx, x, "head.0.bn");
    x = nn::leaky_relu(t, x, cfg_.leaky_slope);
    x = nn::conv_transpose(t, x, ctx.pn.at("head.1.w"), ctx.pn.at("head.1.b"),
                           spec);
    x = nn::tanh_op(t, x);                  // [B,2,S,F], bounded
    out.mask = nn::permute(t, x, {0, 1, 3, 2});  // [B,2,F,S]
  }

  // enhanced = mask * noisy as complex numbers.
  {
    int noisy = t.constant(noisy_spec);
    int nre = nn::slice(t, noisy, 1, 0, 1);
    int nim = nn::slice(t, noisy, 1, 1, 1);
    int mre = nn::slice(t, out.mask, 1, 0, 1);
    int mim = nn::slice(t, out.mask, 1, 1, 1);
    int ere = nn::sub(t, nn::mul(t, mre, nre), nn::mul(t, mim, nim));
    int eim = nn::add(t, nn::mul(t, mre, nim), nn::mul(t, mim, nre));
    out.enhanced = nn::concat(t, {ere, eim}, 1);
  }
  return out;
}

nn::Tensor make_mask_target(const nn::Tensor& clean_spec,
                            const nn::Tensor& noisy_spec, double eps) {
  check_dims(clean_spec.same_shape(noisy_spec) && clean_spec.rank() == 4 &&
                 clean_spec.dim(1) == 2,
             "expected matching [B,2,F,S] spectrogram pairs");
  check_config(eps > 0, "eps must be positive");
  const int B = clean_spec.dim(0);
  const int64_t plane = clean_spec.numel() / (2 * B);
  nn::Tensor out(clean_spec.shape());
  for (int b = 0; b < B; ++b) {
    const int64_t re0 = (static_cast<int64_t>(b) * 2 + 0) * plane;
    const int64_t im0 = (static_cast<int64_t>(b) * 2 + 1) * plane;
    for (int64_t i = 0; i < plane; ++i) {
      double cr = clean_spec[re0 + i], ci = clean_spec[im0 + i];
      double nr = noisy_spec[re0 + i], ni = noisy_spec[im0 + i];
      double denom = nr * nr + ni * ni + eps;
      out[re0 + i] = std::tanh((cr * nr + ci * ni) / denom);
      out[im0 + i] = std::tanh((ci * nr - cr * ni) / denom);
    }
  }
  return out;
}

int loss_se(nn::Tape& t, const ModelOutput& out,
            const nn::Tensor& mask_target, const nn::Tensor& clean_spec,
            double alpha) {
  check_dims(t.val(out.mask).same_shape(mask_target) &&
                 t.val(out.enhanced).same_shape(clean_spec),
             "loss targets disagree with the model output");
  check_config(alpha >= 0, "alpha must be non-negative");
  int l_mask = nn::mse(t, out.mask, t.constant(mask_target));
  int l_stft = nn::mse(t, out.enhanced, t.constant(clean_spec));
  return nn::add(t, l_mask, nn::scale(t, l_stft, alpha));
}

namespace {

json config_to_json(const ModelConfig& cfg) {
  json j;
  j["modality"] = modality_name(cfg.modality);
  j["freq_bins"] = cfg.freq_bins;
  j["channels"] = cfg.channels;
  j["lstm_hidden"] = cfg.lstm_hidden;
  j["image_h"] = cfg.image_h;
  j["image_w"] = cfg.image_w;
  j["image_channels"] = cfg.image_channels;
  j["blocks"] = cfg.blocks;
  j["leaky_slope"] = cfg.leaky_slope;
  j["init_seed"] = cfg.init_seed;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.modality = modality_from_name(j.at("modality").get<std::string>());
  cfg.freq_bins = j.at("freq_bins").get<int>();
  cfg.channels = j.at("channels").get<int>();
  cfg.lstm_hidden = j.at("lstm_hidden").get<int>();
  cfg.image_h = j.at("image_h").get<int>();
  cfg.image_w = j.at("image_w").get<int>();
  cfg.image_channels = j.at("image_channels").get<int>();
  cfg.blocks = j.at("blocks").get<int>();
  cfg.leaky_slope = j.at("leaky_slope").get<double>();
  cfg.init_seed = j.at("init_seed").get<uint64_t>();
  return cfg;
}

struct CkptHeader {
  json j;
  std::streampos payload_start = 0;
};

CkptHeader read_header(std::ifstream& in, const std::string& path) {
  std::string magic, header;
  check_io(static_cast<bool>(std::getline(in, magic)), "cannot read " + path);
  check_io(magic == kCkptMagic, "not a checkpoint file: " + path);
  check_io(static_cast<bool>(std::getline(in, header)),
           "truncated checkpoint header: " + path);
  CkptHeader h;
  h.j = json::parse(header, nullptr, false);
  check_io(!h.j.is_discarded(), "bad checkpoint header: " + path);
  h.payload_start = in.tellg();
  return h;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path,
                     const std::map<std::string, std::string>& meta) {
  std::ofstream out(path, std::ios::binary);
  check_io(out.good(), "cannot write " + path);
  json j;
  j["config"] = config_to_json(model.config());
  j["meta"] = meta;
  json entries = json::array();
  for (const auto& [name, e] : model.params().entries()) {
    json je;
    je["name"] = name;
    je["shape"] = e.value.shape();
    je["trainable"] = e.trainable;
    entries.push_back(je);
  }
  j["entries"] = entries;
  out << kCkptMagic << "\n" << j.dump() << "\n";
  for (const auto& [name, e] : model.params().entries()) {
    out.write(reinterpret_cast<const char*>(e.value.data()),
              static_cast<std::streamsize>(e.value.numel() * sizeof(double)));
  }
  check_io(out.good(), "checkpoint write failed: " + path);
}

ModelConfig peek_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_io(in.good(), "cannot read " + path);
  return config_from_json(read_header(in, path).j.at("config"));
}

std::map<std::string, std::string> peek_checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_io(in.good(), "cannot read " + path);
  CkptHeader h = read_header(in, path);
  std::map<std::string, std::string> meta;
  if (h.j.contains("meta")) {
    meta = h.j.at("meta").get<std::map<std::string, std::string>>();
  }
  return meta;
}

std::map<std::string, std::string> load_checkpoint(Model& model,
                                                   const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_io(in.good(), "cannot read " + path);
  CkptHeader h = read_header(in, path);

  json want = config_to_json(model.config());
  check_config(h.j.at("config") == want,
               "checkpoint config does not match the model: " + path);

  const auto& entries = h.j.at("entries");
  auto& store = model.params().entries();
  check_dims(entries.size() == store.size(),
             "checkpoint entry count mismatch: " + path);
  auto it = store.begin();
  for (const auto& je : entries) {
    check_dims(it != store.end() && je.at("name") == it->first,
               "checkpoint entry order mismatch: " + path);
    std::vector<int> shape = je.at("shape").get<std::vector<int>>();
    check_dims(shape == it->second.value.shape(),
               "checkpoint shape mismatch for " + it->first);
    in.read(reinterpret_cast<char*>(it->second.value.data()),
            static_cast<std::streamsize>(it->second.value.numel() *
                                         sizeof(double)));
    check_io(in.good(), "truncated checkpoint payload: " + path);
    ++it;
  }
  std::map<std::string, std::string> meta;
  if (h.j.contains("meta")) {
    meta = h.j.at("meta").get<std::map<std::string, std::string>>();
  }
  return meta;
}

PartialLoadReport load_partial_weights(Model& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_io(in.good(), "cannot read " + path);
  CkptHeader h = read_header(in, path);

  struct Loc {
    std::vector<int> shape;
    std::streamoff offset;
  };
  std::map<std::string, Loc> index;
  std::streamoff off = 0;
  for (const auto& je : h.j.at("entries")) {
    Loc loc;
    loc.shape = je.at("shape").get<std::vector<int>>();
    loc.offset = off;
    off += static_cast<std::streamoff>(nn::Tensor::count(loc.shape) *
                                       sizeof(double));
    index[je.at("name").get<std::string>()] = std::move(loc);
  }

  PartialLoadReport report;
  for (auto& [name, e] : model.params().entries()) {
    auto it = index.find(name);
    if (it == index.end()) {
      report.missing_in_checkpoint.push_back(name);
      continue;
    }
    if (it->second.shape != e.value.shape()) {
      report.shape_mismatch.push_back(name);
      continue;
    }
    in.seekg(h.payload_start + it->second.offset);
    in.read(reinterpret_cast<char*>(e.value.data()),
            static_cast<std::streamsize>(e.value.numel() * sizeof(double)));
    check_io(in.good(), "truncated checkpoint payload: " + path);
    report.loaded.push_back(name);
  }
  return report;
}

}  // namespace avse::senet
