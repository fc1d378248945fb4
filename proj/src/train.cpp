// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/train.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "avse/common.hpp"
#include "avse/optim.hpp"
#include "avse/rng.hpp"
#include "json.hpp"

namespace avse::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split_ids(const synth::CorpusManifest& man,
                                   const std::string& split) {
  std::vector<std::string> ids;
  for (int i : man.split_indices(split)) {
    ids.push_back(man.utterances[static_cast<size_t>(i)].id);
  }
  return ids;
}

std::vector<std::vector<std::string>> chunk(const std::vector<std::string>& ids,
                                            int batch_size) {
  std::vector<std::vector<std::string>> out;
  for (size_t i = 0; i < ids.size(); i += static_cast<size_t>(batch_size)) {
    size_t hi = std::min(ids.size(), i + static_cast<size_t>(batch_size));
    out.emplace_back(ids.begin() + static_cast<long>(i),
                     ids.begin() + static_cast<long>(hi));
  }
  return out;
}

void append_log(const std::string& path, const json& line) {
  std::ofstream f(path, std::ios::app);
  check_io(f.good(), "cannot append to training log " + path);
  f << line.dump() << "\n";
}

}  // namespace

double batch_se_loss(senet::Model& model, const synth::Batch& batch,
                     double alpha) {
  nn::Tape t;
  const auto m = model.config().modality;
  const nn::Tensor* lip = senet::uses_lip(m) ? &batch.lip3 : nullptr;
  const nn::Tensor* tng = senet::uses_tongue(m) ? &batch.tongue3 : nullptr;
  auto out = model.forward(t, batch.noisy_spec, lip, tng, false);
  nn::Tensor target = senet::make_mask_target(batch.clean_spec, batch.noisy_spec);
  int loss = senet::loss_se(t, out, target, batch.clean_spec, alpha);
  return t.val(loss)[0];
}

TrainResult run_training(senet::Model& model, const synth::CorpusManifest& man,
                         const TrainConfig& cfg, const Objective& objective,
                         const ValidFn& valid_fn,
                         const std::map<std::string, std::string>& ckpt_meta,
                         const MetricsFn& epoch_metrics) {
  check_config(cfg.epochs >= 0 && cfg.batch_size >= 1, "bad train config");
  check_config(!cfg.run_dir.empty(), "run_dir is required");
  fs::create_directories(cfg.run_dir);

  TrainResult res;
  fs::create_directories(cfg.run_dir + "/checkpoints");
  res.log_path = cfg.run_dir + "/log.jsonl";
  res.last_ckpt = cfg.run_dir + "/checkpoints/last.ckpt";
  res.best_ckpt = cfg.run_dir + "/checkpoints/best.ckpt";
  res.best_valid = 1e300;
  res.best_epoch = -1;

  if (cfg.start_epoch == 0) {
    std::ofstream(res.log_path, std::ios::trunc);
  }

  std::vector<std::string> train_ids = split_ids(man, "train");
  std::vector<std::string> valid_ids = split_ids(man, "valid");
  check_data(!train_ids.empty(), "corpus has no training utterances");
  check_data(!valid_ids.empty(), "corpus has no validation utterances");
  if (cfg.valid_cap > 0 &&
      valid_ids.size() > static_cast<size_t>(cfg.valid_cap)) {
    valid_ids.resize(static_cast<size_t>(cfg.valid_cap));
  }
  auto valid_batches = chunk(valid_ids, cfg.batch_size);

  auto run_validation = [&]() {
    // Identical mixes every epoch: the rng restarts from a fixed stream.
    Rng vrng(derive_seed(cfg.seed, "valid"));
    double total = 0.0;
    int items = 0;
    for (const auto& ids : valid_batches) {
      synth::Batch b = synth::load_batch(man, ids, man.stft, cfg.mix, vrng);
      total += valid_fn(b) * b.items();
      items += b.items();
    }
    return total / std::max(1, items);
  };

  auto save_best = [&](int epoch, double valid) {
    auto meta = ckpt_meta;
    meta["epoch"] = std::to_string(epoch);
    meta["valid"] = std::to_string(valid);
    senet::save_checkpoint(model, res.best_ckpt, meta);
    res.best_valid = valid;
    res.best_epoch = epoch;
  };

  if (cfg.epochs == 0) {
    senet::save_checkpoint(model, res.last_ckpt, ckpt_meta);
    return res;
  }

  optim::Adam adam{{cfg.lr}};
  optim::PlateauScheduler sched(cfg.plateau_factor, cfg.patience);

  if (cfg.start_epoch == 0) {
    double v0 = run_validation();
    sched.observe(v0, adam);
    EpochRecord rec;
    rec.epoch = 0;
    rec.valid = v0;
    rec.lr = adam.lr();
    rec.best = true;
    save_best(0, v0);
    res.records.push_back(rec);
    append_log(res.log_path, json{{"epoch", 0},
                                  {"valid_se", v0},
                                  {"lr", adam.lr()},
                                  {"best", true}});
  }

  for (int e = cfg.start_epoch + 1; e <= cfg.start_epoch + cfg.epochs; ++e) {
    const std::string tag = std::to_string(e);
    std::vector<std::string> order = train_ids;
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle:" + tag));
    for (size_t i = order.size(); i > 1; --i) {  // Fisher-Yates, self-pinned
      size_t j = static_cast<size_t>(
          shuffle_rng.integer(0, static_cast<int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    Rng mix_rng(derive_seed(cfg.seed, "mix:" + tag));

    std::map<std::string, double> sums;
    int batches = 0;
    for (const auto& ids : chunk(order, cfg.batch_size)) {
      synth::Batch b = synth::load_batch(man, ids, man.stft, cfg.mix, mix_rng);
      nn::Tape t;
      StepGraph sg = objective(t, b, true);
      t.backward(sg.loss);
      adam.step(model.params(), t, sg.param_nodes);
      for (const auto& [k, v] : sg.components) sums[k] += v;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = e;
    for (const auto& [k, v] : sums) rec.train[k] = v / batches;
    rec.valid = run_validation();
    sched.observe(rec.valid, adam);
    rec.lr = adam.lr();
    rec.best = rec.valid < res.best_valid;
    if (rec.best) save_best(e, rec.valid);

    json line{{"epoch", e},
              {"valid_se", rec.valid},
              {"lr", rec.lr},
              {"best", rec.best}};
    for (const auto& [k, v] : rec.train) line[k] = v;
    if (epoch_metrics) {
      for (const auto& [k, v] : epoch_metrics()) {
        rec.train[k] = v;
        line[k] = v;
      }
    }
    res.records.push_back(rec);
    append_log(res.log_path, line);
  }

  senet::save_checkpoint(model, res.last_ckpt, ckpt_meta);
  return res;
}

}  // namespace avse::train
