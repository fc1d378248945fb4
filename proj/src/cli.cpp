// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "avse/common.hpp"
#include "avse/distill.hpp"
#include "avse/imgio.hpp"
#include "avse/memnet.hpp"
#include "avse/rng.hpp"
#include "avse/wav_io.hpp"

namespace avse::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// One config section; reads known keys, then rejects whatever is left so a
// typo fails before any long computation.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (root.contains(name_)) {
      check_config(root.at(name_).is_object(),
                   "config section '" + name_ + "' must be an object");
      obj_ = root.at(name_);
    }
  }

  template <typename T>
  void get(const std::string& key, T& into) {
    seen_.push_back(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      into = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config field '" + name_ + "." + key +
                        "' has the wrong type");
    }
  }

  void finish() const {
    for (const auto& [k, v] : obj_.items()) {
      (void)v;
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
        throw ConfigError("unknown config field '" + name_ + "." + k + "'");
    }
  }

 private:
  json obj_ = json::object();
  std::string name_;
  std::vector<std::string> seen_;
};

void apply_env_seed(RunConfig& cfg) {
  const char* env = std::getenv("AVSE_SEED");
  if (env == nullptr || *env == '\0') return;
  const std::string s(env);
  size_t pos = 0;
  uint64_t v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  check_config(pos == s.size(), "AVSE_SEED must be an unsigned integer");
  cfg.seed = v;
}

void check_model_fits(const senet::ModelConfig& mcfg,
                      const synth::CorpusManifest& man) {
  check_config(mcfg.freq_bins == man.stft.freq_bins(),
               "model frequency bins do not match the corpus grid");
  check_config(mcfg.image_h == man.image_h && mcfg.image_w == man.image_w,
               "model image size does not match the corpus");
}

train::TrainConfig train_config_of(const RunConfig& cfg,
                                   const std::string& run_dir) {
  train::TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.lr = cfg.lr;
  tc.plateau_factor = cfg.plateau_factor;
  tc.patience = cfg.patience;
  tc.alpha = cfg.alpha;
  tc.mix = cfg.mix;
  tc.seed = cfg.seed;
  tc.run_dir = run_dir;
  tc.valid_cap = cfg.valid_cap;
  return tc;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  check_io(f.good(), "cannot write " + path);
  f << text;
  check_io(f.good(), "failed while writing " + path);
}

// Resolved config plus command details next to the checkpoints, so every
// run can be reproduced from its directory alone.
void write_run_config(const RunConfig& cfg, const std::string& run_dir,
                      const json& run_info) {
  fs::create_directories(run_dir + "/reports");
  json j = run_config_json(cfg);
  j["run"] = run_info;
  write_text(run_dir + "/config.json", j.dump(2) + "\n");
}

int last_epoch_in_log(const std::string& path) {
  std::ifstream f(path);
  check_io(f.good(), "cannot read training log " + path);
  int last = 0;
  std::string line;
  try {
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      last = std::max(last, json::parse(line).value("epoch", 0));
    }
  } catch (const json::exception&) {
    throw IoError("training log is corrupt: " + path);
  }
  return last;
}

double meta_number(const std::map<std::string, std::string>& meta,
                   const std::string& key, double fallback) {
  auto it = meta.find(key);
  if (it == meta.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ConfigError("checkpoint meta field '" + key + "' is not a number");
  }
}

train::Objective se_objective(senet::Model& model, double alpha) {
  return [&model, alpha](nn::Tape& t, const synth::Batch& b,
                         bool training) -> train::StepGraph {
    const auto m = model.config().modality;
    auto out = model.forward(t, b.noisy_spec,
                             senet::uses_lip(m) ? &b.lip3 : nullptr,
                             senet::uses_tongue(m) ? &b.tongue3 : nullptr,
                             training);
    nn::Tensor target = senet::make_mask_target(b.clean_spec, b.noisy_spec);
    int se = senet::loss_se(t, out, target, b.clean_spec, alpha);
    train::StepGraph sg;
    sg.loss = se;
    sg.param_nodes = out.param_nodes;
    sg.components = {{"l_se", t.val(se)[0]}, {"l_total", t.val(se)[0]}};
    return sg;
  };
}

train::ValidFn se_valid(senet::Model& model, double alpha) {
  return [&model, alpha](const synth::Batch& b) {
    return train::batch_se_loss(model, b, alpha);
  };
}

train::Objective memory_objective(senet::Model& model,
                                  const memnet::MemoryConfig& mc,
                                  double alpha) {
  return [&model, mc, alpha](nn::Tape& t, const synth::Batch& b,
                             bool training) -> train::StepGraph {
    auto mf = memnet::forward_with_memory(t, model, mc, b.noisy_spec, &b.lip3,
                                          &b.tongue3, training);
    nn::Tensor target = senet::make_mask_target(b.clean_spec, b.noisy_spec);
    int se = senet::loss_se(t, mf.out, target, b.clean_spec, alpha);
    int total = memnet::mem_total(t, se, mf.save, mf.align, mc.beta1, mc.beta2);
    train::StepGraph sg;
    sg.loss = total;
    sg.param_nodes = mf.out.param_nodes;
    sg.components = {{"l_se", t.val(se)[0]},
                     {"l_save", t.val(mf.save)[0]},
                     {"l_align", t.val(mf.align)[0]},
                     {"l_total", t.val(total)[0]}};
    return sg;
  };
}

train::ValidFn memory_valid(senet::Model& model,
                            const memnet::MemoryConfig& mc, double alpha) {
  return [&model, mc, alpha](const synth::Batch& b) {
    nn::Tape t;
    auto mf = memnet::forward_with_memory(t, model, mc, b.noisy_spec, &b.lip3,
                                          nullptr, false);
    nn::Tensor target = senet::make_mask_target(b.clean_spec, b.noisy_spec);
    return t.val(senet::loss_se(t, mf.out, target, b.clean_spec, alpha))[0];
  };
}

// Waveform SegSNR/STOI on a fixed validation subset, recomputed with the
// same mixes at every epoch.
train::MetricsFn waveform_metrics(const RunConfig& cfg, senet::Model& model,
                                  const synth::CorpusManifest& man,
                                  bool memory_backed, double gamma) {
  if (cfg.metric_utts <= 0) return nullptr;
  std::vector<int> valid_idx = man.split_indices("valid");
  if (valid_idx.size() > static_cast<size_t>(cfg.metric_utts))
    valid_idx.resize(static_cast<size_t>(cfg.metric_utts));
  const uint64_t seed = cfg.seed;
  const synth::MixSpec mix = cfg.mix;
  return [&model, &man, valid_idx, seed, mix, memory_backed, gamma]() {
    Rng rng(derive_seed(seed, "metrics"));
    auto pool = man.noises_in(mix.noise_split);
    const auto modality = model.config().modality;
    double ss = 0.0, st = 0.0;
    for (int i : valid_idx) {
      const synth::UttRecord& rec = man.utterances[static_cast<size_t>(i)];
      dsp::Waveform clean;
      clean.samples = read_wav(man.resolve(rec.audio_path), &clean.sample_rate);
      const synth::NoiseRecord* nr = pool[static_cast<size_t>(
          rng.integer(0, static_cast<int64_t>(pool.size()) - 1))];
      dsp::Waveform nw;
      nw.samples = read_wav(man.resolve(nr->path), &nw.sample_rate);
      const double snr = mix.snr_choices[static_cast<size_t>(rng.integer(
          0, static_cast<int64_t>(mix.snr_choices.size()) - 1))];
      dsp::Waveform noisy =
          dsp::mix_at_snr(clean, nw, snr, derive_seed(seed, "metrics:" + rec.id));

      nn::Tensor lip, tongue;
      const nn::Tensor* lp = nullptr;
      const nn::Tensor* tp = nullptr;
      if (senet::uses_lip(modality)) {
        lip = read_image_stack(man.resolve(rec.lip_path));
        lp = &lip;
      }
      if (senet::uses_tongue(modality) && !memory_backed) {
        tongue = read_image_stack(man.resolve(rec.tongue_path));
        tp = &tongue;
      }
      dsp::Waveform est = eval::enhance_waveform(model, noisy, lp, tp,
                                                 man.stft, memory_backed,
                                                 gamma);
      ss += eval::segsnr_db(clean, est);
      st += eval::stoi(clean, est);
    }
    const double n = static_cast<double>(valid_idx.size());
    return std::map<std::string, double>{{"valid_segsnr", ss / n},
                                         {"valid_stoi", st / n}};
  };
}

}  // namespace

void RunConfig::validate() const {
  check_config(model_preset == "toy" || model_preset == "full",
               "model preset must be 'toy' or 'full'");
  senet::modality_from_name(modality);
  generator.validate();
  check_config(alpha >= 0.0 && delta1 >= 0.0 && delta2 >= 0.0 &&
                   beta1 >= 0.0 && beta2 >= 0.0,
               "loss weights must be non-negative");
  check_config(lr > 0.0, "learning rate must be positive");
  check_config(plateau_factor > 0.0 && plateau_factor <= 1.0,
               "plateau factor must lie in (0, 1]");
  check_config(patience >= 1, "patience must be at least one epoch");
  check_config(batch_size >= 1, "batch size must be positive");
  check_config(epochs >= 0, "epochs must be non-negative");
  check_config(valid_cap == -1 || valid_cap >= 1,
               "valid_cap must be -1 or positive");
  check_config(metric_utts >= 0, "metric_utts must be non-negative");
  check_config(workers == 1,
               "this build loads corpus data on a single worker; set "
               "optimizer.workers to 1");
  check_config(!mix.snr_choices.empty(), "mix.snr_choices must not be empty");
  check_config(mix.noise_split == "seen" || mix.noise_split == "unseen" ||
                   mix.noise_split == "all",
               "mix.noise_split must be seen, unseen or all");
  check_config(memory_slots >= 1, "memory.slots must be positive");
  check_config(memory_gamma >= 0.0, "memory.gamma must be non-negative");
  check_config(!data_dir.empty() && !runs_dir.empty(),
               "paths.data_dir and paths.runs_dir must not be empty");
}

RunConfig parse_run_config(const json& j) {
  check_config(j.is_object(), "run config must be a JSON object");
  static const std::vector<std::string> kSections = {
      "stft", "generator", "model", "loss", "optimizer",
      "mix",  "memory",    "seeds", "paths"};
  for (const auto& [k, v] : j.items()) {
    (void)v;
    check_config(std::find(kSections.begin(), kSections.end(), k) !=
                     kSections.end(),
                 "unknown config section '" + k + "'");
  }

  RunConfig cfg;

  Section stft(j, "stft");
  stft.get("window_length", cfg.generator.stft.window_length);
  stft.get("hop", cfg.generator.stft.hop);
  stft.get("fft_size", cfg.generator.stft.fft_size);
  stft.get("window", cfg.generator.stft.window);
  stft.finish();

  Section gen(j, "generator");
  gen.get("sample_rate", cfg.generator.sample_rate);
  gen.get("image_h", cfg.generator.image_h);
  gen.get("image_w", cfg.generator.image_w);
  gen.get("pseudo_phonemes", cfg.generator.pseudo_phonemes);
  gen.get("min_duration_s", cfg.generator.min_duration_s);
  gen.get("max_duration_s", cfg.generator.max_duration_s);
  gen.get("min_segment_frames", cfg.generator.min_segment_frames);
  gen.get("max_segment_frames", cfg.generator.max_segment_frames);
  gen.get("easing", cfg.generator.easing);
  gen.get("speakers_train", cfg.generator.speakers_train);
  gen.get("speakers_unseen", cfg.generator.speakers_unseen);
  gen.get("utterances", cfg.generator.utterances);
  gen.get("train_frac", cfg.generator.train_frac);
  gen.get("valid_frac", cfg.generator.valid_frac);
  gen.get("seed", cfg.generator.seed);
  gen.finish();

  Section model(j, "model");
  model.get("preset", cfg.model_preset);
  model.get("modality", cfg.modality);
  model.finish();

  Section loss(j, "loss");
  loss.get("alpha", cfg.alpha);
  loss.get("delta1", cfg.delta1);
  loss.get("delta2", cfg.delta2);
  loss.get("beta1", cfg.beta1);
  loss.get("beta2", cfg.beta2);
  loss.finish();

  Section opt(j, "optimizer");
  opt.get("lr", cfg.lr);
  opt.get("plateau_factor", cfg.plateau_factor);
  opt.get("patience", cfg.patience);
  opt.get("batch_size", cfg.batch_size);
  opt.get("epochs", cfg.epochs);
  opt.get("valid_cap", cfg.valid_cap);
  opt.get("metric_utts", cfg.metric_utts);
  opt.get("workers", cfg.workers);
  opt.finish();

  Section mix(j, "mix");
  mix.get("snr_choices", cfg.mix.snr_choices);
  mix.get("noise_split", cfg.mix.noise_split);
  mix.finish();

  Section mem(j, "memory");
  mem.get("slots", cfg.memory_slots);
  mem.get("gamma", cfg.memory_gamma);
  mem.finish();

  Section seeds(j, "seeds");
  seeds.get("train", cfg.seed);
  seeds.finish();

  Section paths(j, "paths");
  paths.get("data_dir", cfg.data_dir);
  paths.get("runs_dir", cfg.runs_dir);
  paths.finish();

  apply_env_seed(cfg);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return parse_run_config(json::object());
  std::ifstream f(path);
  check_io(f.good(), "cannot read config file " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " +
                      e.what());
  }
  return parse_run_config(j);
}

json run_config_json(const RunConfig& c) {
  const auto& g = c.generator;
  return json{
      {"stft",
       {{"window_length", g.stft.window_length},
        {"hop", g.stft.hop},
        {"fft_size", g.stft.fft_size},
        {"window", g.stft.window}}},
      {"generator",
       {{"sample_rate", g.sample_rate},
        {"image_h", g.image_h},
        {"image_w", g.image_w},
        {"pseudo_phonemes", g.pseudo_phonemes},
        {"min_duration_s", g.min_duration_s},
        {"max_duration_s", g.max_duration_s},
        {"min_segment_frames", g.min_segment_frames},
        {"max_segment_frames", g.max_segment_frames},
        {"easing", g.easing},
        {"speakers_train", g.speakers_train},
        {"speakers_unseen", g.speakers_unseen},
        {"utterances", g.utterances},
        {"train_frac", g.train_frac},
        {"valid_frac", g.valid_frac},
        {"seed", g.seed}}},
      {"model", {{"preset", c.model_preset}, {"modality", c.modality}}},
      {"loss",
       {{"alpha", c.alpha},
        {"delta1", c.delta1},
        {"delta2", c.delta2},
        {"beta1", c.beta1},
        {"beta2", c.beta2}}},
      {"optimizer",
       {{"lr", c.lr},
        {"plateau_factor", c.plateau_factor},
        {"patience", c.patience},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"valid_cap", c.valid_cap},
        {"metric_utts", c.metric_utts},
        {"workers", c.workers}}},
      {"mix",
       {{"snr_choices", c.mix.snr_choices},
        {"noise_split", c.mix.noise_split}}},
      {"memory", {{"slots", c.memory_slots}, {"gamma", c.memory_gamma}}},
      {"seeds", {{"train", c.seed}}},
      {"paths", {{"data_dir", c.data_dir}, {"runs_dir", c.runs_dir}}},
  };
}

senet::ModelConfig model_config_of(const RunConfig& cfg, senet::Modality m) {
  senet::ModelConfig mc = cfg.model_preset == "full"
                              ? senet::ModelConfig::full(m)
                              : senet::ModelConfig::toy(m);
  mc.freq_bins = cfg.generator.stft.freq_bins();
  mc.image_h = cfg.generator.image_h;
  mc.image_w = cfg.generator.image_w;
  mc.init_seed = derive_seed(cfg.seed, "model:" + senet::modality_name(m));
  mc.validate();
  return mc;
}

std::string run_dir_of(const RunConfig& cfg, const std::string& name) {
  check_config(!name.empty() && name.find('/') == std::string::npos,
               "run name must be a plain directory name");
  return cfg.runs_dir + "/" + name;
}

std::string cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  check_config(!out_dir.empty(), "gen-data needs an output directory");
  synth::CorpusManifest man = synth::generate_corpus(cfg.generator, out_dir);
  json j = run_config_json(cfg);
  j["run"] = {{"command", "gen-data"}, {"config_hash", man.config_hash}};
  write_text(out_dir + "/gen_config.json", j.dump(2) + "\n");
  return man.root + "/manifest.jsonl";
}

TrainOutcome cmd_train(const RunConfig& cfg, const synth::CorpusManifest& man,
                       const std::string& name, senet::Modality modality,
                       bool resume) {
  cfg.validate();
  senet::ModelConfig mcfg = model_config_of(cfg, modality);
  check_model_fits(mcfg, man);
  const std::string run_dir = run_dir_of(cfg, name);

  senet::Model model(mcfg);
  train::TrainConfig tc = train_config_of(cfg, run_dir);
  if (resume) {
    const std::string last = run_dir + "/checkpoints/last.ckpt";
    check_io(fs::exists(last), "nothing to resume: " + last + " is missing");
    senet::load_checkpoint(model, last);
    tc.start_epoch = last_epoch_in_log(run_dir + "/log.jsonl");
  }
  write_run_config(cfg, run_dir,
                   {{"command", "train"},
                    {"name", name},
                    {"modality", senet::modality_name(modality)},
                    {"resumed", resume}});

  auto objective = se_objective(model, cfg.alpha);
  auto valid = se_valid(model, cfg.alpha);
  auto metrics = waveform_metrics(cfg, model, man, false, 0.0);

  TrainOutcome out;
  out.run_dir = run_dir;
  out.result = train::run_training(
      model, man, tc, objective, valid,
      {{"regime", "train"}, {"modality", senet::modality_name(modality)}},
      metrics);
  return out;
}

TrainOutcome cmd_distill(const RunConfig& cfg,
                         const synth::CorpusManifest& man,
                         const std::string& name,
                         const std::string& teacher_ckpt,
                         senet::Modality student_modality) {
  cfg.validate();
  check_io(fs::exists(teacher_ckpt),
           "teacher checkpoint not found: " + teacher_ckpt);
  senet::ModelConfig scfg = model_config_of(cfg, student_modality);
  check_model_fits(scfg, man);
  check_model_fits(senet::peek_checkpoint_config(teacher_ckpt), man);
  const std::string run_dir = run_dir_of(cfg, name);

  write_run_config(cfg, run_dir,
                   {{"command", "distill"},
                    {"name", name},
                    {"teacher", teacher_ckpt},
                    {"modality", senet::modality_name(student_modality)}});

  train::TrainConfig tc = train_config_of(cfg, run_dir);
  distill::KDConfig kd;
  kd.delta1 = cfg.delta1;
  kd.delta2 = cfg.delta2;
  kd.teacher_ckpt = teacher_ckpt;

  auto metrics_factory = [&cfg, &man](senet::Model& student) {
    return waveform_metrics(cfg, student, man, false, 0.0);
  };
  distill::StudentResult sr =
      distill::train_student(teacher_ckpt, scfg, man, tc, kd, metrics_factory);

  TrainOutcome out;
  out.run_dir = run_dir;
  out.result = std::move(sr.training);
  return out;
}

TrainOutcome cmd_train_memory(const RunConfig& cfg,
                              const synth::CorpusManifest& man,
                              const std::string& name,
                              const std::string& pretrained_ckpt) {
  cfg.validate();
  check_io(fs::exists(pretrained_ckpt),
           "pretrained checkpoint not found: " + pretrained_ckpt);
  senet::ModelConfig mcfg =
      model_config_of(cfg, senet::Modality::kAudioLipTongue);
  check_model_fits(mcfg, man);
  const std::string run_dir = run_dir_of(cfg, name);

  senet::Model model(mcfg);
  senet::PartialLoadReport rep =
      senet::load_partial_weights(model, pretrained_ckpt);
  check_config(!rep.loaded.empty(),
               "pretrained checkpoint shares no weights with the memory model");

  const int feat = mcfg.channels * mcfg.artic_flat_width();
  memnet::attach_memory(
      model.params(),
      memnet::init_memory(cfg.memory_slots, feat, cfg.memory_gamma, cfg.seed));
  memnet::MemoryConfig mc;
  mc.slots = cfg.memory_slots;
  mc.gamma = cfg.memory_gamma;
  mc.beta1 = cfg.beta1;
  mc.beta2 = cfg.beta2;

  write_run_config(cfg, run_dir,
                   {{"command", "train-memory"},
                    {"name", name},
                    {"pretrained", pretrained_ckpt},
                    {"slots", cfg.memory_slots},
                    {"gamma", cfg.memory_gamma}});

  train::TrainConfig tc = train_config_of(cfg, run_dir);
  auto objective = memory_objective(model, mc, cfg.alpha);
  auto valid = memory_valid(model, mc, cfg.alpha);
  auto metrics = waveform_metrics(cfg, model, man, true, cfg.memory_gamma);

  TrainOutcome out;
  out.run_dir = run_dir;
  out.result = train::run_training(
      model, man, tc, objective, valid,
      {{"regime", "memory"},
       {"kind", "memory"},
       {"slots", std::to_string(cfg.memory_slots)},
       {"gamma", std::to_string(cfg.memory_gamma)}},
      metrics);
  return out;
}

std::vector<TrainOutcome> cmd_slot_sweep(const RunConfig& cfg,
                                         const synth::CorpusManifest& man,
                                         const std::string& name,
                                         const std::string& pretrained_ckpt,
                                         const std::vector<int>& slot_counts,
                                         double snr_db) {
  cfg.validate();
  check_config(!slot_counts.empty(), "slot sweep needs at least one size");

  std::ostringstream table;
  table << std::setw(7) << "slots" << std::setw(13) << "best_valid"
        << std::setw(13) << "test_segsnr" << std::setw(11) << "test_stoi"
        << "\n";
  std::ostringstream jsonl;

  std::vector<TrainOutcome> outs;
  for (int n : slot_counts) {
    check_config(n >= 1, "slot counts must be positive");
    RunConfig c2 = cfg;
    c2.memory_slots = n;
    TrainOutcome out = cmd_train_memory(c2, man, name + "_n" + std::to_string(n),
                                        pretrained_ckpt);

    eval::Enhancer enh(out.result.best_ckpt);
    eval::EvalReport rep = eval::evaluate_corpus(enh.corpus_fn(man), man,
                                                 {snr_db}, "all", cfg.seed);
    eval::EvalCell cell = rep.rows[0].combined();

    table << std::setw(7) << n << std::setw(13) << std::fixed
          << std::setprecision(5) << out.result.best_valid << std::setw(13)
          << std::setprecision(3) << cell.mean_segsnr << std::setw(11)
          << std::setprecision(4) << cell.mean_stoi << "\n";
    jsonl << json{{"slots", n},
                  {"best_valid", out.result.best_valid},
                  {"snr_db", snr_db},
                  {"test_segsnr", cell.mean_segsnr},
                  {"test_stoi", cell.mean_stoi}}
                 .dump()
          << "\n";
    outs.push_back(std::move(out));
  }

  fs::create_directories(cfg.runs_dir);
  write_text(cfg.runs_dir + "/" + name + "_sweep.txt", table.str());
  write_text(cfg.runs_dir + "/" + name + "_sweep.jsonl", jsonl.str());
  return outs;
}

TrainOutcome cmd_finetune(const RunConfig& cfg, const std::string& name,
                          const std::string& ckpt,
                          const std::string& target_manifest,
                          bool freeze_memory, double lr_override) {
  cfg.validate();
  check_io(fs::exists(ckpt), "checkpoint not found: " + ckpt);
  synth::CorpusManifest man = synth::load_manifest(target_manifest);

  senet::ModelConfig mcfg = senet::peek_checkpoint_config(ckpt);
  check_model_fits(mcfg, man);
  senet::Model model(mcfg);

  const auto head = senet::peek_checkpoint_meta(ckpt);
  auto kind = head.find("kind");
  const bool memory = kind != head.end() && kind->second == "memory";
  double gamma = cfg.memory_gamma;
  if (memory) {
    const int slots = static_cast<int>(meta_number(head, "slots", 0.0));
    check_config(slots > 0, "memory checkpoint is missing a slot count");
    const int feat = mcfg.channels * mcfg.artic_flat_width();
    memnet::attach_memory(model.params(),
                          memnet::init_memory(slots, feat, 1.0, 0));
    gamma = meta_number(head, "gamma", cfg.memory_gamma);
  }
  std::map<std::string, std::string> meta_in = senet::load_checkpoint(model, ckpt);

  check_config(memory || !freeze_memory,
               "freeze_memory needs a memory checkpoint");
  if (freeze_memory) memnet::set_frozen(model.params(), true);

  const std::string run_dir = run_dir_of(cfg, name);
  write_run_config(cfg, run_dir,
                   {{"command", "finetune"},
                    {"name", name},
                    {"checkpoint", ckpt},
                    {"target_manifest", target_manifest},
                    {"freeze_memory", freeze_memory},
                    {"lr_override", lr_override}});

  train::TrainConfig tc = train_config_of(cfg, run_dir);
  if (lr_override > 0.0) tc.lr = lr_override;

  memnet::MemoryConfig mc;
  mc.gamma = gamma;
  mc.beta1 = cfg.beta1;
  mc.beta2 = cfg.beta2;

  std::map<std::string, std::string> meta_out{
      {"regime", "finetune"}, {"frozen_memory", freeze_memory ? "1" : "0"}};
  if (memory) {
    meta_out["kind"] = "memory";
    meta_out["slots"] = meta_in.count("slots")
                            ? meta_in.at("slots")
                            : head.at("slots");
    meta_out["gamma"] = std::to_string(gamma);
  }

  auto objective = memory ? memory_objective(model, mc, cfg.alpha)
                          : se_objective(model, cfg.alpha);
  auto valid = memory ? memory_valid(model, mc, cfg.alpha)
                      : se_valid(model, cfg.alpha);
  auto metrics = waveform_metrics(cfg, model, man, memory, gamma);

  TrainOutcome out;
  out.run_dir = run_dir;
  out.result =
      train::run_training(model, man, tc, objective, valid, meta_out, metrics);
  return out;
}

EvalOutcome cmd_evaluate(const RunConfig& cfg, const std::string& ckpt,
                         const std::string& manifest_path,
                         const std::vector<double>& snrs,
                         const std::string& noise_split,
                         const std::string& out_dir) {
  cfg.validate();
  check_io(fs::exists(ckpt), "checkpoint not found: " + ckpt);
  check_config(!out_dir.empty(), "evaluate needs an output directory");
  synth::CorpusManifest man = synth::load_manifest(manifest_path);

  eval::Enhancer enh(ckpt);
  check_model_fits(enh.config(), man);
  EvalOutcome out;
  out.report =
      eval::evaluate_corpus(enh.corpus_fn(man), man, snrs, noise_split,
                            cfg.seed);
  fs::create_directories(out_dir);
  out.table_path = out_dir + "/report.txt";
  out.jsonl_path = out_dir + "/report.jsonl";
  write_text(out.table_path, out.report.table());
  write_text(out.jsonl_path, out.report.jsonl());
  return out;
}

std::string cmd_enhance(const RunConfig& cfg, const std::string& ckpt,
                        const std::string& noisy_wav,
                        const std::string& lip_stack,
                        const std::string& tongue_stack,
                        const std::string& out_wav, bool identity_mask) {
  cfg.validate();
  check_config(!out_wav.empty(), "enhance needs an output path");
  dsp::Waveform in;
  in.samples = read_wav(noisy_wav, &in.sample_rate);
  const dsp::StftConfig& grid = cfg.generator.stft;

  dsp::Waveform est;
  if (identity_mask) {
    est = dsp::istft(dsp::stft(in, grid), grid,
                     static_cast<int64_t>(in.samples.size()), in.sample_rate);
  } else {
    check_config(!ckpt.empty(),
                 "enhance needs a checkpoint unless --identity-mask is set");
    check_io(fs::exists(ckpt), "checkpoint not found: " + ckpt);
    eval::Enhancer enh(ckpt);
    nn::Tensor lip, tongue;
    const nn::Tensor* lp = nullptr;
    const nn::Tensor* tp = nullptr;
    if (!lip_stack.empty()) {
      lip = read_image_stack(lip_stack);
      lp = &lip;
    }
    if (!tongue_stack.empty() && !enh.memory_backed()) {
      tongue = read_image_stack(tongue_stack);
      tp = &tongue;
    }
    est = enh.enhance(in, lp, tp, grid);
  }
  write_wav(out_wav, est.samples, est.sample_rate);
  return out_wav;
}

std::vector<ProbeOutcome> cmd_probe(
    const RunConfig& cfg, const std::string& ckpt,
    const std::string& manifest_path,
    const std::vector<eval::ProbeSource>& sources, eval::ProbeTarget target,
    int max_utts) {
  cfg.validate();
  check_config(!sources.empty(), "probe needs at least one feature source");
  synth::CorpusManifest man = synth::load_manifest(manifest_path);

  std::optional<eval::Enhancer> enh;
  std::vector<ProbeOutcome> rows;
  for (eval::ProbeSource src : sources) {
    const std::string src_name = eval::probe_source_name(src);
    senet::Model* mp = nullptr;
    double gamma = cfg.memory_gamma;
    if (src != eval::ProbeSource::kRawTongueImages) {
      check_config(!ckpt.empty(),
                   "probe source '" + src_name + "' needs a checkpoint");
      if (!enh) {
        check_io(fs::exists(ckpt), "checkpoint not found: " + ckpt);
        enh.emplace(ckpt);
      }
      mp = &enh->model();
      if (enh->memory_backed()) gamma = enh->memory_gamma();
    }

    eval::FeatureSet fset = eval::collect_probe_features(
        mp, man, "test", src, target, max_utts, gamma);
    eval::ProbeConfig pc;
    const double acc =
        eval::probe(fset.features, fset.labels, pc,
                    derive_seed(cfg.seed, "probe:" + src_name));

    ProbeOutcome row;
    row.source = src_name;
    row.accuracy = acc;
    row.classes = fset.classes;
    row.chance = fset.classes > 0 ? 1.0 / fset.classes : 0.0;
    row.frames = static_cast<int>(fset.labels.size());
    rows.push_back(row);
  }
  return rows;
}

std::string probe_table(const std::vector<ProbeOutcome>& rows) {
  std::ostringstream os;
  os << std::setw(28) << "source" << std::setw(9) << "frames" << std::setw(9)
     << "classes" << std::setw(9) << "chance" << std::setw(10) << "accuracy"
     << "\n";
  for (const auto& r : rows) {
    os << std::setw(28) << r.source << std::setw(9) << r.frames << std::setw(9)
       << r.classes << std::setw(9) << std::fixed << std::setprecision(4)
       << r.chance << std::setw(10) << std::setprecision(4) << r.accuracy
       << "\n";
  }
  return os.str();
}

}  // namespace avse::cli
