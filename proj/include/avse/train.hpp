// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "avse/senet.hpp"
#include "avse/synthdata.hpp"
#include "avse/tape.hpp"

namespace avse::train {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 8;
  double lr = 1e-3;
  double plateau_factor = 0.1;
  int patience = 10;
  double alpha = 1.0;  // enhanced-spectrogram term weight inside L_SE
  synth::MixSpec mix;
  uint64_t seed = 1;
  std::string run_dir;  // receives log.jsonl and checkpoints/{best,last}.ckpt
  int start_epoch = 0;  // resumed runs continue the epoch numbering
  int valid_cap = -1;   // limit validation items, -1 = whole split
};

// One optimization step's graph: the scalar loss to minimize, the trainable
// parameter leaves, and the component values worth logging.
struct StepGraph {
  int loss = -1;
  std::map<std::string, int> param_nodes;
  std::map<std::string, double> components;
};

// Builds the training graph for one batch on the given tape.
using Objective =
    std::function<StepGraph(nn::Tape&, const synth::Batch&, bool training)>;
// Scores one validation batch (lower is better); usually eval-mode L_SE.
using ValidFn = std::function<double(const synth::Batch&)>;
// Optional per-epoch extras (waveform metrics on a fixed subset, ...);
// results are merged into the epoch record and the log line.
using MetricsFn = std::function<std::map<std::string, double>()>;

struct EpochRecord {
  int epoch = 0;
  std::map<std::string, double> train;  // per-component means over batches
  double valid = 0.0;
  double lr = 0.0;
  bool best = false;
};

struct TrainResult {
  std::vector<EpochRecord> records;
  std::string best_ckpt, last_ckpt, log_path;
  double best_valid = 0.0;
  int best_epoch = 0;
};

// Generic loop shared by the plain, distilled and memory regimes: seeded
// shuffling, mixed-batch loading, Adam with plateau decay on the validation
// score, JSONL logging and best/last checkpointing. An epoch-0 record holds
// the pre-training validation score; epochs == 0 writes only the initial
// checkpoint and an empty log.
TrainResult run_training(senet::Model& model, const synth::CorpusManifest& man,
                         const TrainConfig& cfg, const Objective& objective,
                         const ValidFn& valid_fn,
                         const std::map<std::string, std::string>& ckpt_meta =
                             {},
                         const MetricsFn& epoch_metrics = nullptr);

// Mask-target L_SE of a model on one batch (fresh tape, eval mode); the
// default validation score and the building block of evaluate-time loss.
double batch_se_loss(senet::Model& model, const synth::Batch& batch,
                     double alpha);

}  // namespace avse::train
