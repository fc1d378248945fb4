// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/distill.hpp"

#include <string>

#include "avse/common.hpp"

namespace avse::distill {

namespace {

void check_pairing(nn::Tape& t, const std::vector<int>& tea,
                   const std::vector<int>& stu) {
  check_dims(!tea.empty() && tea.size() == stu.size(),
             "teacher and student tap lists differ in length");
  for (size_t k = 0; k < tea.size(); ++k) {
    check_dims(t.val(tea[k]).shape() == t.val(stu[k]).shape(),
               "tap shape mismatch at layer " + std::to_string(k));
  }
}

}  // namespace

int similarity_matrices(nn::Tape& t, int tap) {
  check_dims(t.val(tap).rank() == 4, "similarity tap must be [b,c,s,f]");
  return nn::frame_grams(t, tap);
}

int spkd_loss(nn::Tape& t, const std::vector<int>& taps_tea,
              const std::vector<int>& taps_stu) {
  check_pairing(t, taps_tea, taps_stu);
  const int b = t.val(taps_tea[0]).dim(0);
  int acc = -1;
  for (size_t k = 0; k < taps_tea.size(); ++k) {
    check_dims(t.val(taps_tea[k]).dim(0) == b, "taps disagree on batch size");
    int d = nn::sub(t, similarity_matrices(t, taps_tea[k]),
                    similarity_matrices(t, taps_stu[k]));
    int sq = nn::sum_all(t, nn::mul(t, d, d));
    acc = acc < 0 ? sq : nn::add(t, acc, sq);
  }
  return nn::scale(t, acc, 1.0 / (static_cast<double>(b) * b));
}

int mse_kd_loss(nn::Tape& t, const std::vector<int>& taps_tea,
                const std::vector<int>& taps_stu) {
  check_pairing(t, taps_tea, taps_stu);
  int acc = -1;
  for (size_t k = 0; k < taps_tea.size(); ++k) {
    int m = nn::mse(t, taps_tea[k], taps_stu[k]);
    acc = acc < 0 ? m : nn::add(t, acc, m);
  }
  return acc;
}

int kd_total(nn::Tape& t, int se, int mse_kd, int spkd, const KDConfig& cfg) {
  check_config(cfg.delta1 >= 0.0 && cfg.delta2 >= 0.0,
               "distillation weights must be non-negative");
  return nn::add(t, se,
                 nn::add(t, nn::scale(t, mse_kd, cfg.delta1),
                         nn::scale(t, spkd, cfg.delta2)));
}

namespace {

struct StreamInputs {
  const nn::Tensor* lip = nullptr;
  const nn::Tensor* tongue = nullptr;
};

StreamInputs streams_for(const senet::ModelConfig& cfg,
                         const synth::Batch& batch) {
  StreamInputs s;
  if (senet::uses_lip(cfg.modality)) s.lip = &batch.lip3;
  if (senet::uses_tongue(cfg.modality)) s.tongue = &batch.tongue3;
  return s;
}

// Cheap zero-input pass of both models to compare tap shapes layer by layer
// before committing to a training run.
void check_tap_compatibility(senet::Model& teacher, senet::Model& student) {
  const int B = 1, S = 2;
  auto zero_inputs = [&](const senet::ModelConfig& c) {
    return std::pair<nn::Tensor, nn::Tensor>(
        nn::Tensor({B, 2, c.freq_bins, S}),
        nn::Tensor({B, c.image_channels, S, c.image_h, c.image_w}));
  };
  nn::Tape t;
  auto [tspec, timg] = zero_inputs(teacher.config());
  auto [sspec, simg] = zero_inputs(student.config());
  auto tout = teacher.forward(t, tspec, &timg, &timg, false);
  auto sout = student.forward(t, sspec, &simg, &simg, false);
  check_config(tout.taps.size() == sout.taps.size(),
               "teacher and student produce different tap counts");
  for (size_t k = 0; k < tout.taps.size(); ++k) {
    check_config(t.val(tout.taps[k]).shape() == t.val(sout.taps[k]).shape(),
                 "teacher/student tap shapes differ at layer " +
                     std::to_string(k) +
                     "; distillation needs equal widths per depth");
  }
}

}  // namespace

StudentResult train_student(const std::string& teacher_ckpt,
                            const senet::ModelConfig& student_cfg,
                            const synth::CorpusManifest& corpus,
                            const train::TrainConfig& tcfg,
                            const KDConfig& kd,
                            const MetricsFactory& metrics_factory) {
  senet::Model teacher(senet::peek_checkpoint_config(teacher_ckpt));
  senet::load_checkpoint(teacher, teacher_ckpt);
  teacher.set_frozen(true);

  StudentResult res;
  res.teacher_hash_before = teacher.params().content_hash();

  senet::Model student(student_cfg);
  check_tap_compatibility(teacher, student);

  auto objective = [&](nn::Tape& t, const synth::Batch& batch,
                       bool training) -> train::StepGraph {
    auto ts = streams_for(teacher.config(), batch);
    auto ss = streams_for(student.config(), batch);
    // The frozen teacher sees the same batch statistics as the student.
    auto tout = teacher.forward(t, batch.noisy_spec, ts.lip, ts.tongue,
                                training);
    auto sout = student.forward(t, batch.noisy_spec, ss.lip, ss.tongue,
                                training);
    nn::Tensor target =
        senet::make_mask_target(batch.clean_spec, batch.noisy_spec);
    int se = senet::loss_se(t, sout, target, batch.clean_spec, tcfg.alpha);
    int lmse = mse_kd_loss(t, tout.taps, sout.taps);
    int lspkd = spkd_loss(t, tout.taps, sout.taps);
    int total = nn::add(
        t, nn::scale(t, se, kd.se_weight),
        nn::add(t, nn::scale(t, lmse, kd.delta1),
                nn::scale(t, lspkd, kd.delta2)));
    train::StepGraph sg;
    sg.loss = total;
    sg.param_nodes = sout.param_nodes;
    sg.components = {{"l_se", t.val(se)[0]},
                     {"l_mse_kd", t.val(lmse)[0]},
                     {"l_spkd", t.val(lspkd)[0]},
                     {"l_total", t.val(total)[0]}};
    return sg;
  };
  auto valid = [&](const synth::Batch& b) {
    return train::batch_se_loss(student, b, tcfg.alpha);
  };

  train::MetricsFn metrics =
      metrics_factory ? metrics_factory(student) : nullptr;
  res.training = run_training(student, corpus, tcfg, objective, valid,
                              {{"regime", "distill"}}, metrics);
  res.teacher_hash_after = teacher.params().content_hash();
  check_config(res.teacher_hash_after == res.teacher_hash_before,
               "teacher parameters drifted during distillation");
  return res;
}

}  // namespace avse::distill
