// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "avse/senet.hpp"
#include "avse/tape.hpp"
#include "avse/train.hpp"

namespace avse::distill {

// Weights for the combined distillation objective
//   L = L_SE + delta1 * L_MSE + delta2 * L_SPKD.
// The defaults were calibrated on the toy preset so each weighted term lands
// within an order of magnitude of L_SE at initialization; see README.
struct KDConfig {
  double delta1 = 0.2;
  double delta2 = 5e-4;
  // Diagnostic hook: weight on L_SE inside the training objective. 1.0 for
  // real runs; 0 isolates the distillation terms (a student initialized as a
  // copy of its teacher is then a fixpoint).
  double se_weight = 1.0;
  std::string teacher_ckpt;
};

// Per-frame batch-similarity matrices of one tap: [b,c,s,f] -> [s,b,b],
// each frame's b x f' flattening F giving rownorm(F F^T).
int similarity_matrices(nn::Tape& t, int tap);

// (1/b^2) * sum over layers and frames of ||G_tea - G_stu||_F^2.
int spkd_loss(nn::Tape& t, const std::vector<int>& taps_tea,
              const std::vector<int>& taps_stu);

// Sum over layers of the per-layer mean squared feature difference. The
// per-layer element-count normalization keeps delta1 portable across widths
// (multiply a layer's term by its element count to recover the raw sum).
int mse_kd_loss(nn::Tape& t, const std::vector<int>& taps_tea,
                const std::vector<int>& taps_stu);

// L_SE + delta1 * L_MSE + delta2 * L_SPKD.
int kd_total(nn::Tape& t, int se, int mse_kd, int spkd, const KDConfig& cfg);

struct StudentResult {
  train::TrainResult training;
  uint64_t teacher_hash_before = 0;
  uint64_t teacher_hash_after = 0;
};

// Builds the per-epoch metrics hook once the student model exists; may
// return nullptr to skip extra metrics.
using MetricsFactory = std::function<train::MetricsFn(senet::Model&)>;

// Loads and freezes the teacher, verifies tap-for-tap shape compatibility on
// a probe batch before any long work, then minimizes the combined objective
// with per-epoch validation on the student's L_SE alone.
StudentResult train_student(const std::string& teacher_ckpt,
                            const senet::ModelConfig& student_cfg,
                            const synth::CorpusManifest& corpus,
                            const train::TrainConfig& tcfg,
                            const KDConfig& kd,
                            const MetricsFactory& metrics_factory = nullptr);

}  // namespace avse::distill
