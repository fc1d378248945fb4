// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "avse/eval.hpp"
#include "avse/senet.hpp"
#include "avse/synthdata.hpp"
#include "avse/train.hpp"
#include "json.hpp"

namespace avse::cli {

// Run configuration: one JSON file with sections stft, generator, model,
// loss, optimizer, mix, memory, seeds and paths. Every field is optional
// and falls back to the defaults below; unknown keys are rejected so typos
// fail fast. AVSE_SEED in the environment overrides seeds.train.
struct RunConfig {
  synth::GenConfig generator;  // the stft section writes generator.stft

  std::string model_preset = "toy";  // "toy" or "full"
  std::string modality = "audio_lip_tongue";

  double alpha = 1.0;    // enhanced-spectrogram weight inside L_SE
  double delta1 = 0.2;   // layer-MSE weight in the distillation objective
  double delta2 = 5e-4;  // similarity-matrix weight
  double beta1 = 0.01;   // save-loss weight in the memory objective
  double beta2 = 0.001;  // align-loss weight

  double lr = 1e-3;
  double plateau_factor = 0.1;
  int patience = 10;
  int batch_size = 8;
  int epochs = 10;
  int valid_cap = -1;   // validation items per epoch, -1 = whole split
  int metric_utts = 2;  // utterances for per-epoch waveform metrics, 0 = off
  int workers = 1;      // reserved; this build loads data on one worker

  synth::MixSpec mix;

  int memory_slots = 512;
  double memory_gamma = 1.0;

  uint64_t seed = 1;

  std::string data_dir = "data";
  std::string runs_dir = "runs";

  void validate() const;
};

RunConfig parse_run_config(const nlohmann::json& j);
// Empty path gives the defaults; both paths apply the AVSE_SEED override.
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_json(const RunConfig& cfg);  // fully resolved

// Model preset for one modality. Image geometry and the spectral grid follow
// the generator section; the initialization seed derives from seeds.train
// and the modality name.
senet::ModelConfig model_config_of(const RunConfig& cfg, senet::Modality m);

// runs/<name>; training commands fill it with config.json, log.jsonl,
// checkpoints/ and reports/.
std::string run_dir_of(const RunConfig& cfg, const std::string& name);

struct TrainOutcome {
  std::string run_dir;
  train::TrainResult result;
};

// Writes the corpus plus a resolved config copy; returns the manifest path.
std::string cmd_gen_data(const RunConfig& cfg, const std::string& out_dir);

// Plain mask-regression training of one modality. resume picks the run up
// from its last checkpoint and continues the epoch numbering.
TrainOutcome cmd_train(const RunConfig& cfg, const synth::CorpusManifest& man,
                       const std::string& name, senet::Modality modality,
                       bool resume = false);

TrainOutcome cmd_distill(const RunConfig& cfg,
                         const synth::CorpusManifest& man,
                         const std::string& name,
                         const std::string& teacher_ckpt,
                         senet::Modality student_modality);

// Seeds the model from the pretrained checkpoint's matching weights, attaches
// a fresh memory bank and trains the combined memory objective.
TrainOutcome cmd_train_memory(const RunConfig& cfg,
                              const synth::CorpusManifest& man,
                              const std::string& name,
                              const std::string& pretrained_ckpt);

// One memory run per slot count, named <name>_n<slots>. Each best checkpoint
// is scored on the test split at snr_db; the comparison lands in
// runs/<name>_sweep.txt and .jsonl.
std::vector<TrainOutcome> cmd_slot_sweep(const RunConfig& cfg,
                                         const synth::CorpusManifest& man,
                                         const std::string& name,
                                         const std::string& pretrained_ckpt,
                                         const std::vector<int>& slot_counts,
                                         double snr_db = 2.5);

// Continues training any checkpoint on a second corpus. freeze_memory pins
// the bank entries (trainability is not serialized, so the flag is applied
// after loading); lr_override > 0 replaces the configured learning rate.
TrainOutcome cmd_finetune(const RunConfig& cfg, const std::string& name,
                          const std::string& ckpt,
                          const std::string& target_manifest,
                          bool freeze_memory, double lr_override = -1.0);

struct EvalOutcome {
  eval::EvalReport report;
  std::string table_path, jsonl_path;
};

EvalOutcome cmd_evaluate(const RunConfig& cfg, const std::string& ckpt,
                         const std::string& manifest_path,
                         const std::vector<double>& snrs,
                         const std::string& noise_split,
                         const std::string& out_dir);

// Single-utterance inference; image stacks as written by the generator.
// identity_mask bypasses the model and round-trips the analysis grid, so no
// checkpoint is needed. Returns the output path.
std::string cmd_enhance(const RunConfig& cfg, const std::string& ckpt,
                        const std::string& noisy_wav,
                        const std::string& lip_stack,
                        const std::string& tongue_stack,
                        const std::string& out_wav, bool identity_mask);

struct ProbeOutcome {
  std::string source;
  double accuracy = 0.0;
  double chance = 0.0;  // 1 / classes
  int frames = 0;
  int classes = 0;
};

// Probes each requested source on the manifest's test split. Sources other
// than the raw images need the checkpoint; the probe seed derives from
// seeds.train and the source name.
std::vector<ProbeOutcome> cmd_probe(
    const RunConfig& cfg, const std::string& ckpt,
    const std::string& manifest_path,
    const std::vector<eval::ProbeSource>& sources, eval::ProbeTarget target,
    int max_utts);

std::string probe_table(const std::vector<ProbeOutcome>& rows);

}  // namespace avse::cli
