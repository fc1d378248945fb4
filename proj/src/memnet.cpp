// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/memnet.hpp"

#include <cmath>

#include "avse/common.hpp"
#include "avse/rng.hpp"

namespace avse::memnet {

MemoryBank init_memory(int slots, int feat_dim, double gamma, uint64_t seed) {
  check_config(slots > 0, "init_memory: slots must be positive");
  check_config(feat_dim > 0, "init_memory: feature width must be positive");
  check_config(gamma >= 0.0, "init_memory: gamma must be non-negative");
  MemoryBank bank;
  bank.gamma = gamma;
  bank.lip_keys = nn::Tensor({slots, feat_dim});
  bank.tongue_values = nn::Tensor({slots, feat_dim});
  Rng rng(derive_seed(seed, "memory"));
  const double sd = 1.0 / std::sqrt(static_cast<double>(feat_dim));
  for (int64_t i = 0; i < bank.lip_keys.numel(); ++i) {
    bank.lip_keys[i] = rng.normal(0.0, sd);
  }
  for (int64_t i = 0; i < bank.tongue_values.numel(); ++i) {
    bank.tongue_values[i] = rng.normal(0.0, sd);
  }
  return bank;
}

void attach_memory(senet::ParamStore& params, const MemoryBank& bank) {
  check_config(!has_memory(params), "memory already attached");
  check_dims(bank.lip_keys.rank() == 2 &&
                 bank.lip_keys.same_shape(bank.tongue_values),
             "attach_memory: key and value banks must be equal [N, D'] shapes");
  params.create(kLipKeysName, bank.lip_keys.shape(), true) = bank.lip_keys;
  params.create(kTongueValuesName, bank.tongue_values.shape(), true) =
      bank.tongue_values;
}

bool has_memory(const senet::ParamStore& params) {
  return params.has(kLipKeysName) && params.has(kTongueValuesName);
}

MemoryBank read_memory(const senet::ParamStore& params, double gamma) {
  check_config(has_memory(params), "model has no attached memory");
  MemoryBank bank;
  bank.lip_keys = params.get(kLipKeysName);
  bank.tongue_values = params.get(kTongueValuesName);
  bank.gamma = gamma;
  return bank;
}

void set_frozen(senet::ParamStore& params, bool frozen) {
  check_config(has_memory(params), "model has no attached memory");
  params.entries().at(kLipKeysName).trainable = !frozen;
  params.entries().at(kTongueValuesName).trainable = !frozen;
}

int address(nn::Tape& t, int query, int keys, double gamma) {
  const nn::Tensor& q = t.val(query);
  const nn::Tensor& k = t.val(keys);
  check_dims(q.rank() == 2 && k.rank() == 2,
             "address: query and keys must be rank-2");
  check_dims(q.dim(1) == k.dim(1), "address: feature width mismatch");
  check_config(gamma >= 0.0, "address: gamma must be non-negative");
  const int qn = nn::rows_l2_normalize(t, query, nn::ZeroRowPolicy::kError);
  const int kn = nn::rows_l2_normalize(t, keys, nn::ZeroRowPolicy::kError);
  const int cos = nn::matmul(t, qn, nn::transpose2d(t, kn));
  return nn::softmax_rows(t, cos, gamma);
}

int recall(nn::Tape& t, int values, int addressing) {
  const nn::Tensor& v = t.val(values);
  const nn::Tensor& a = t.val(addressing);
  check_dims(v.rank() == 2 && a.rank() == 2,
             "recall: values and addressing must be rank-2");
  check_dims(a.dim(1) == v.dim(0),
             "recall: addressing width must equal the slot count");
  return nn::matmul(t, addressing, values);
}

int save_loss(nn::Tape& t, int real_frames, int recalled) {
  const nn::Tensor& a = t.val(real_frames);
  const nn::Tensor& b = t.val(recalled);
  check_dims(a.rank() == 2 && a.same_shape(b),
             "save_loss: frame matrices must have equal [Q, D'] shapes");
  const int rows = a.dim(0);  // emitting ops may relocate the node values
  const int d = nn::sub(t, real_frames, recalled);
  const int s = nn::sum_all(t, nn::mul(t, d, d));
  return nn::scale(t, s, 1.0 / static_cast<double>(rows));
}

int align_loss(nn::Tape& t, int tongue_addr, int lip_addr) {
  const nn::Tensor& at = t.val(tongue_addr);
  const nn::Tensor& al = t.val(lip_addr);
  check_dims(at.rank() == 2 && at.same_shape(al),
             "align_loss: addressings must have equal [Q, N] shapes");
  const int rows = at.dim(0);  // emitting ops may relocate the node values
  const int lt = nn::log_op(t, nn::clamp_min(t, tongue_addr, 1e-9));
  const int ll = nn::log_op(t, nn::clamp_min(t, lip_addr, 1e-9));
  const int kl =
      nn::sum_all(t, nn::mul(t, tongue_addr, nn::sub(t, lt, ll)));
  return nn::scale(t, kl, 1.0 / static_cast<double>(rows));
}

int mem_total(nn::Tape& t, int se, int save, int align, double beta1,
              double beta2) {
  check_config(beta1 >= 0.0 && beta2 >= 0.0,
               "mem_total: loss weights must be non-negative");
  check_dims(t.val(se).numel() == 1 && t.val(save).numel() == 1 &&
                 t.val(align).numel() == 1,
             "mem_total: loss terms must be scalar");
  return nn::add(t, se,
                 nn::add(t, nn::scale(t, save, beta1),
                         nn::scale(t, align, beta2)));
}

MemoryForward forward_with_memory(nn::Tape& t, senet::Model& model,
                                  const MemoryConfig& mc,
                                  const nn::Tensor& noisy_spec,
                                  const nn::Tensor* lip3,
                                  const nn::Tensor* tongue3, bool training) {
  check_config(model.config().modality == senet::Modality::kAudioLipTongue,
               "memory needs the two-articulation model");
  check_config(has_memory(model.params()), "model has no attached memory");
  check_config(lip3 != nullptr, "memory forward needs lip images");
  check_config(!training || tongue3 != nullptr,
               "memory training needs tongue images");
  if (training) {
    check_dims(tongue3->same_shape(*lip3),
               "lip and tongue image stacks must have equal shapes");
  }

  senet::ForwardCtx ctx = model.begin_forward(t, training);
  const int keys = ctx.pn.at(kLipKeysName);
  const int values = ctx.pn.at(kTongueValuesName);

  MemoryForward mf;
  const int lip_early = model.articulation_stem(ctx, *lip3, "lip");
  const nn::Tensor& le = t.val(lip_early);
  const int B = le.dim(0), C = le.dim(1), S = le.dim(2), D0 = le.dim(3);
  check_dims(C * D0 == t.val(keys).dim(1),
             "memory feature width does not match the articulation stem");

  // [B, C, S, D0] -> one feature row per frame.
  auto frames_of = [&](int early) {
    return nn::reshape(t, nn::permute(t, early, {0, 2, 1, 3}),
                       {B * S, C * D0});
  };
  const int lq = frames_of(lip_early);
  mf.lip_addr = address(t, lq, keys, mc.gamma);
  const int rec = recall(t, values, mf.lip_addr);
  mf.recalled = nn::permute(t, nn::reshape(t, rec, {B, S, C, D0}),
                            {0, 2, 1, 3});

  if (training) {
    // Real tongue features drive only the save/align terms; the enhancement
    // path below sees the lip-recalled stand-in, like at inference.
    const int tq = frames_of(model.articulation_stem(ctx, *tongue3, "tongue"));
    mf.tongue_addr = address(t, tq, values, mc.gamma);
    mf.save = save_loss(t, tq, recall(t, values, mf.tongue_addr));
    mf.align = align_loss(t, mf.tongue_addr, mf.lip_addr);
  }

  senet::Overrides ov;
  ov.lip_early = lip_early;
  ov.tongue_early = mf.recalled;
  mf.out = model.forward_in(ctx, noisy_spec, nullptr, nullptr, ov);
  return mf;
}

}  // namespace avse::memnet
