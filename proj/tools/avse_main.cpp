// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "avse/cli.hpp"
#include "avse/common.hpp"
#include "json.hpp"

namespace {

using avse::cli::RunConfig;
using nlohmann::json;

// Config file plus any number of --set section.key=value overrides. Values
// parse as JSON when they can (numbers, arrays, booleans) and fall back to
// plain strings.
RunConfig config_of(const std::string& path,
                    const std::vector<std::string>& sets) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream f(path);
    avse::check_io(f.good(), "cannot read config file " + path);
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw avse::ConfigError("config file " + path + " is not valid JSON: " +
                              e.what());
    }
  }
  for (const std::string& s : sets) {
    const size_t eq = s.find('=');
    avse::check_config(eq != std::string::npos && eq > 0,
                       "--set needs section.key=value, got '" + s + "'");
    const std::string key = s.substr(0, eq);
    const std::string val = s.substr(eq + 1);
    const size_t dot = key.find('.');
    avse::check_config(dot != std::string::npos && dot > 0 &&
                           dot + 1 < key.size(),
                       "--set key must look like section.key, got '" + key +
                           "'");
    json v;
    try {
      v = json::parse(val);
    } catch (const json::exception&) {
      v = val;
    }
    j[key.substr(0, dot)][key.substr(dot + 1)] = v;
  }
  return avse::cli::parse_run_config(j);
}

void print_training(const avse::cli::TrainOutcome& out) {
  std::cout << "run dir:  " << out.run_dir << "\n"
            << "best:     " << out.result.best_ckpt << " (epoch "
            << out.result.best_epoch << ", valid " << out.result.best_valid
            << ")\n"
            << "last:     " << out.result.last_ckpt << "\n"
            << "log:      " << out.result.log_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"avse: audio-visual speech enhancement workbench"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "JSON run config file");
  app.add_option("--set", sets,
                 "Override a config field as section.key=value (repeatable)");

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic corpus");
  std::string gen_out;
  gen->add_option("--out", gen_out, "Corpus directory (default paths.data_dir)");

  auto* tr = app.add_subcommand("train", "Train one modality from scratch");
  std::string tr_manifest, tr_name, tr_modality = "audio_lip_tongue";
  bool tr_resume = false;
  tr->add_option("--manifest", tr_manifest, "Corpus manifest")->required();
  tr->add_option("--name", tr_name, "Run name under paths.runs_dir")
      ->required();
  tr->add_option("--modality", tr_modality,
                 "audio | audio_lip | audio_tongue | audio_lip_tongue");
  tr->add_flag("--resume", tr_resume, "Continue from the run's last.ckpt");

  auto* kd = app.add_subcommand("distill",
                                "Train a student under a frozen teacher");
  std::string kd_manifest, kd_name, kd_teacher, kd_modality = "audio_lip";
  kd->add_option("--manifest", kd_manifest, "Corpus manifest")->required();
  kd->add_option("--name", kd_name, "Run name")->required();
  kd->add_option("--teacher", kd_teacher, "Teacher checkpoint")->required();
  kd->add_option("--modality", kd_modality, "Student modality");

  auto* tm = app.add_subcommand(
      "train-memory", "Attach a key-value memory to a pretrained model");
  std::string tm_manifest, tm_name, tm_pretrained;
  tm->add_option("--manifest", tm_manifest, "Corpus manifest")->required();
  tm->add_option("--name", tm_name, "Run name")->required();
  tm->add_option("--pretrained", tm_pretrained,
                 "Checkpoint that seeds the backbone")
      ->required();

  auto* sw = app.add_subcommand("slot-sweep",
                                "Train memory models over several bank sizes");
  std::string sw_manifest, sw_name, sw_pretrained;
  std::vector<int> sw_slots{128, 256, 512};
  double sw_snr = 2.5;
  sw->add_option("--manifest", sw_manifest, "Corpus manifest")->required();
  sw->add_option("--name", sw_name, "Sweep name")->required();
  sw->add_option("--pretrained", sw_pretrained,
                 "Checkpoint that seeds each backbone")
      ->required();
  sw->add_option("--slots", sw_slots, "Bank sizes to try");
  sw->add_option("--snr", sw_snr, "Test SNR in dB for the comparison");

  auto* ft = app.add_subcommand("finetune",
                                "Continue a checkpoint on another corpus");
  std::string ft_name, ft_ckpt, ft_manifest;
  bool ft_freeze = false;
  double ft_lr = -1.0;
  ft->add_option("--name", ft_name, "Run name")->required();
  ft->add_option("--ckpt", ft_ckpt, "Checkpoint to continue")->required();
  ft->add_option("--manifest", ft_manifest, "Target corpus manifest")
      ->required();
  ft->add_flag("--freeze-memory", ft_freeze,
               "Pin the memory bank while the rest trains");
  ft->add_option("--lr", ft_lr, "Learning-rate override (>0)");

  auto* ev = app.add_subcommand("evaluate",
                                "Score a checkpoint on a corpus test split");
  std::string ev_ckpt, ev_manifest, ev_split = "all", ev_out;
  std::vector<double> ev_snrs;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--manifest", ev_manifest, "Corpus manifest")->required();
  ev->add_option("--snrs", ev_snrs, "Mixing SNRs in dB")->required();
  ev->add_option("--noise-split", ev_split, "seen | unseen | all");
  ev->add_option("--out", ev_out, "Report directory")->required();

  auto* en = app.add_subcommand("enhance", "Enhance one utterance");
  std::string en_ckpt, en_in, en_lip, en_tongue, en_out;
  bool en_identity = false;
  en->add_option("--ckpt", en_ckpt, "Checkpoint (optional with --identity-mask)");
  en->add_option("--in", en_in, "Noisy wav")->required();
  en->add_option("--lip", en_lip, "Lip image stack");
  en->add_option("--tongue", en_tongue, "Tongue image stack");
  en->add_option("--out", en_out, "Output wav")->required();
  en->add_flag("--identity-mask", en_identity,
               "Bypass the model; analysis-synthesis round trip only");

  auto* pr = app.add_subcommand("probe",
                                "Train linear-ish probes on frame features");
  std::string pr_ckpt, pr_manifest, pr_target = "pseudo-phoneme";
  std::vector<std::string> pr_sources;
  int pr_max_utts = -1;
  pr->add_option("--ckpt", pr_ckpt, "Checkpoint for model-derived sources");
  pr->add_option("--manifest", pr_manifest, "Corpus manifest")->required();
  pr->add_option("--sources", pr_sources,
                 "raw-tongue-images | real-tongue-features | "
                 "memory-recalled-features (default picked from the "
                 "checkpoint)");
  pr->add_option("--target", pr_target, "pseudo-phoneme | speaker");
  pr->add_option("--max-utts", pr_max_utts, "Cap on probed utterances");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = config_of(config_path, sets);

    if (gen->parsed()) {
      const std::string out = gen_out.empty() ? cfg.data_dir : gen_out;
      std::cout << "manifest: " << avse::cli::cmd_gen_data(cfg, out) << "\n";
    } else if (tr->parsed()) {
      auto man = avse::synth::load_manifest(tr_manifest);
      print_training(avse::cli::cmd_train(
          cfg, man, tr_name, avse::senet::modality_from_name(tr_modality),
          tr_resume));
    } else if (kd->parsed()) {
      auto man = avse::synth::load_manifest(kd_manifest);
      print_training(avse::cli::cmd_distill(
          cfg, man, kd_name, kd_teacher,
          avse::senet::modality_from_name(kd_modality)));
    } else if (tm->parsed()) {
      auto man = avse::synth::load_manifest(tm_manifest);
      print_training(
          avse::cli::cmd_train_memory(cfg, man, tm_name, tm_pretrained));
    } else if (sw->parsed()) {
      auto man = avse::synth::load_manifest(sw_manifest);
      auto outs = avse::cli::cmd_slot_sweep(cfg, man, sw_name, sw_pretrained,
                                            sw_slots, sw_snr);
      for (const auto& o : outs) print_training(o);
      std::cout << "sweep:    " << cfg.runs_dir << "/" << sw_name
                << "_sweep.txt\n";
    } else if (ft->parsed()) {
      print_training(avse::cli::cmd_finetune(cfg, ft_name, ft_ckpt,
                                             ft_manifest, ft_freeze, ft_lr));
    } else if (ev->parsed()) {
      auto out = avse::cli::cmd_evaluate(cfg, ev_ckpt, ev_manifest, ev_snrs,
                                         ev_split, ev_out);
      std::cout << out.report.table() << "report:   " << out.table_path
                << "\n";
    } else if (en->parsed()) {
      std::cout << "wrote:    "
                << avse::cli::cmd_enhance(cfg, en_ckpt, en_in, en_lip,
                                          en_tongue, en_out, en_identity)
                << "\n";
    } else if (pr->parsed()) {
      std::vector<avse::eval::ProbeSource> sources;
      if (pr_sources.empty()) {
        // No explicit sources: probe whatever the checkpoint can feed.
        sources.push_back(avse::eval::ProbeSource::kRawTongueImages);
        if (!pr_ckpt.empty()) {
          const auto meta = avse::senet::peek_checkpoint_meta(pr_ckpt);
          auto kind = meta.find("kind");
          if (kind != meta.end() && kind->second == "memory") {
            sources.push_back(avse::eval::ProbeSource::kRealTongueFeatures);
            sources.push_back(avse::eval::ProbeSource::kMemoryRecalled);
          } else if (avse::senet::uses_tongue(
                         avse::senet::peek_checkpoint_config(pr_ckpt)
                             .modality)) {
            sources.push_back(avse::eval::ProbeSource::kRealTongueFeatures);
          }
        }
      } else {
        for (const auto& s : pr_sources)
          sources.push_back(avse::eval::probe_source_from_name(s));
      }
      auto rows = avse::cli::cmd_probe(
          cfg, pr_ckpt, pr_manifest, sources,
          avse::eval::probe_target_from_name(pr_target), pr_max_utts);
      std::cout << avse::cli::probe_table(rows);
    }
  } catch (const avse::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const avse::DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << "\n";
    return 3;
  } catch (const avse::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 4;
  } catch (const avse::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
