// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/distill.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "avse/common.hpp"
#include "avse/rng.hpp"
#include "avse/senet.hpp"
#include "avse/synthdata.hpp"
#include "doctest.h"
#include "fd_check.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace avse;
namespace fs = std::filesystem;

namespace {

nn::Tensor random_tap(std::vector<int> shape, Rng& rng) {
  nn::Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

// Flatten one frame of a [b,c,s,f] tap into the b x (c*f) row matrix the
// similarity is defined over.
std::vector<double> frame_rows(const nn::Tensor& tap, int j) {
  const int b = tap.dim(0), c = tap.dim(1), s = tap.dim(2), f = tap.dim(3);
  (void)s;
  std::vector<double> rows(static_cast<size_t>(b) * c * f);
  for (int i = 0; i < b; ++i)
    for (int ci = 0; ci < c; ++ci)
      for (int fi = 0; fi < f; ++fi)
        rows[static_cast<size_t>((i * c + ci) * f + fi)] =
            tap.at({i, ci, j, fi});
  return rows;
}

nn::Tensor permute_features(const nn::Tensor& tap,
                            const std::vector<int>& perm) {
  nn::Tensor out(tap.shape());
  const int b = tap.dim(0), c = tap.dim(1), s = tap.dim(2), f = tap.dim(3);
  for (int i = 0; i < b; ++i)
    for (int ci = 0; ci < c; ++ci)
      for (int j = 0; j < s; ++j)
        for (int fi = 0; fi < f; ++fi)
          out.at({i, ci, j, fi}) =
              tap.at({i, ci, j, perm[static_cast<size_t>(fi)]});
  return out;
}

double scalar(nn::Tape& t, int node) { return t.val(node)[0]; }

// Small corpus shared by the training-path cases; built once per process.
const synth::CorpusManifest& micro_corpus() {
  static synth::CorpusManifest man = [] {
    synth::GenConfig cfg;
    cfg.image_h = 8;
    cfg.image_w = 16;
    cfg.utterances = 12;
    cfg.min_duration_s = 0.5;
    cfg.max_duration_s = 0.7;
    cfg.speakers_train = 2;
    cfg.speakers_unseen = 1;
    cfg.train_frac = 0.5;
    cfg.valid_frac = 0.25;
    cfg.seed = 20240601;
    fs::path dir = fs::temp_directory_path() / "avse_distill_corpus";
    fs::remove_all(dir);
    return synth::generate_corpus(cfg, dir.string());
  }();
  return man;
}

senet::ModelConfig micro_model(senet::Modality m, int channels,
                               uint64_t seed) {
  senet::ModelConfig cfg;
  cfg.modality = m;
  cfg.freq_bins = 257;
  cfg.channels = channels;
  cfg.lstm_hidden = 8;
  cfg.image_h = 8;
  cfg.image_w = 16;
  cfg.init_seed = seed;
  return cfg;
}

std::string fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("avse_distill_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("similarity matrices: single-item batch normalizes to one") {
  Rng rng(31);
  nn::Tape t;
  int tap = t.constant(random_tap({1, 2, 3, 4}, rng));
  int g = distill::similarity_matrices(t, tap);
  REQUIRE(t.val(g).shape() == std::vector<int>{3, 1, 1});
  for (int64_t i = 0; i < 3; ++i) CHECK(t.val(g)[i] == doctest::Approx(1.0));

  int tap2 = t.constant(random_tap({1, 2, 3, 4}, rng));
  CHECK(scalar(t, distill::spkd_loss(t, {tap}, {tap2})) == 0.0);
}

TEST_CASE("similarity matrices: duplicate items give equal rows") {
  Rng rng(32);
  nn::Tensor tap({2, 2, 2, 3});
  for (int ci = 0; ci < 2; ++ci)
    for (int j = 0; j < 2; ++j)
      for (int fi = 0; fi < 3; ++fi) {
        double v = rng.uniform(-1.0, 1.0);
        tap.at({0, ci, j, fi}) = v;
        tap.at({1, ci, j, fi}) = v;
      }
  nn::Tape t;
  int g = distill::similarity_matrices(t, t.constant(tap));
  const nn::Tensor& G = t.val(g);
  const double r = 1.0 / std::sqrt(2.0);
  for (int j = 0; j < 2; ++j)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        CHECK(G.at({j, a, b}) == doctest::Approx(r).epsilon(1e-12));
}

TEST_CASE("similarity matrices match the double-loop oracle") {
  Rng rng(33);
  nn::Tensor tap = random_tap({3, 2, 4, 5}, rng);
  nn::Tape t;
  int g = distill::similarity_matrices(t, t.constant(tap));
  const nn::Tensor& G = t.val(g);
  REQUIRE(G.shape() == std::vector<int>{4, 3, 3});
  for (int j = 0; j < 4; ++j) {
    auto rows = frame_rows(tap, j);
    auto want = oracle::gram_rownorm_naive(rows, 3, 2 * 5);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        CHECK(G.at({j, a, b}) ==
              doctest::Approx(want[static_cast<size_t>(a * 3 + b)])
                  .epsilon(1e-6));
  }
}

TEST_CASE("similarity matrices: all-zero items stay zero rows") {
  nn::Tensor tap({2, 1, 1, 2});
  tap.at({1, 0, 0, 0}) = 1.0;  // item 0 is silent everywhere
  nn::Tape t;
  int g = distill::similarity_matrices(t, t.constant(tap));
  const nn::Tensor& G = t.val(g);
  CHECK(G.at({0, 0, 0}) == 0.0);
  CHECK(G.at({0, 0, 1}) == 0.0);
  CHECK(G.at({0, 1, 0}) == 0.0);
  CHECK(G.at({0, 1, 1}) == 1.0);
}

TEST_CASE("spkd: equal taps vanish; hand-computed two-item case") {
  Rng rng(34);
  nn::Tape t;
  std::vector<int> tea, stu;
  for (int k = 0; k < 3; ++k) {
    nn::Tensor v = random_tap({2, 2, 3, 4}, rng);
    tea.push_back(t.constant(v));
    stu.push_back(t.constant(v));
  }
  CHECK(scalar(t, distill::spkd_loss(t, tea, stu)) == 0.0);

  // Teacher rows orthogonal -> identity; student rows identical -> all
  // entries 1/sqrt(2). One layer, one frame, batch of two.
  nn::Tensor ft({2, 1, 1, 2}, {1.0, 0.0, 0.0, 2.0});
  nn::Tensor st({2, 1, 1, 2}, {3.0, 4.0, 3.0, 4.0});
  nn::Tape t2;
  double loss = scalar(
      t2, distill::spkd_loss(t2, {t2.constant(ft)}, {t2.constant(st)}));
  const double want =
      (2.0 * std::pow(1.0 - 1.0 / std::sqrt(2.0), 2) + 2.0 * 0.5) / 4.0;
  CHECK(loss == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("spkd and mse_kd reject mismatched taps") {
  Rng rng(35);
  nn::Tape t;
  int a = t.constant(random_tap({2, 2, 3, 4}, rng));
  int b = t.constant(random_tap({2, 2, 3, 5}, rng));
  CHECK_THROWS_AS(distill::spkd_loss(t, {a}, {b}), DimensionError);
  CHECK_THROWS_AS(distill::mse_kd_loss(t, {a}, {b}), DimensionError);
  CHECK_THROWS_AS(distill::spkd_loss(t, {a, a}, {a}), DimensionError);
  CHECK_THROWS_AS(distill::spkd_loss(t, {}, {}), DimensionError);
}

TEST_CASE("mse_kd: zero on equal taps, per-layer normalized shift, oracle") {
  Rng rng(36);
  nn::Tape t;
  nn::Tensor a0 = random_tap({2, 2, 3, 4}, rng);
  nn::Tensor a1 = random_tap({2, 1, 3, 7}, rng);
  int ta0 = t.constant(a0), ta1 = t.constant(a1);
  CHECK(scalar(t, distill::mse_kd_loss(t, {ta0, ta1}, {ta0, ta1})) == 0.0);

  // Adding 1 to every element of one layer costs exactly 1 under the
  // per-layer mean reduction (the raw squared sum would be that layer's
  // element count).
  nn::Tensor shifted = a1;
  for (int64_t i = 0; i < shifted.numel(); ++i) shifted[i] += 1.0;
  double l = scalar(
      t, distill::mse_kd_loss(t, {ta0, ta1}, {ta0, t.constant(shifted)}));
  CHECK(l == doctest::Approx(1.0).epsilon(1e-12));

  nn::Tensor b0 = random_tap({2, 2, 3, 4}, rng);
  nn::Tensor b1 = random_tap({2, 1, 3, 7}, rng);
  double got = scalar(
      t, distill::mse_kd_loss(t, {ta0, ta1},
                              {t.constant(b0), t.constant(b1)}));
  double want = 0.0;
  for (int layer = 0; layer < 2; ++layer) {
    const nn::Tensor& x = layer == 0 ? a0 : a1;
    const nn::Tensor& y = layer == 0 ? b0 : b1;
    double s = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    want += s / static_cast<double>(x.numel());
  }
  CHECK(got == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("kd_total arithmetic") {
  nn::Tape t;
  auto c = [&](double v) { return t.constant(nn::Tensor({1}, {v})); };
  distill::KDConfig off;
  off.delta1 = 0.0;
  off.delta2 = 0.0;
  CHECK(scalar(t, distill::kd_total(t, c(0.37), c(9.0), c(9.0), off)) ==
        doctest::Approx(0.37));
  CHECK(scalar(t, distill::kd_total(t, c(0.0), c(0.0), c(0.0), off)) == 0.0);

  distill::KDConfig kd;
  kd.delta1 = 0.3;
  kd.delta2 = 0.02;
  CHECK(scalar(t, distill::kd_total(t, c(0.37), c(1.21), c(0.05), kd)) ==
        doctest::Approx(0.37 + 0.3 * 1.21 + 0.02 * 0.05).epsilon(1e-12));

  distill::KDConfig bad;
  bad.delta1 = -0.1;
  CHECK_THROWS_AS(distill::kd_total(t, c(1.0), c(1.0), c(1.0), bad),
                  ConfigError);
}

TEST_CASE("spkd is invariant to a shared feature permutation") {
  Rng rng(37);
  nn::Tensor tea = random_tap({2, 2, 3, 4}, rng);
  nn::Tensor stu = random_tap({2, 2, 3, 4}, rng);
  std::vector<int> perm = {2, 0, 3, 1};

  nn::Tape t;
  double base = scalar(
      t, distill::spkd_loss(t, {t.constant(tea)}, {t.constant(stu)}));
  double permuted = scalar(
      t, distill::spkd_loss(t, {t.constant(permute_features(tea, perm))},
                            {t.constant(permute_features(stu, perm))}));
  CHECK(base == doctest::Approx(permuted).epsilon(1e-12));
  CHECK(base > 0.0);
}

TEST_CASE("spkd and mse_kd gradients match finite differences") {
  Rng rng(38);
  std::vector<nn::Tensor> inputs = {
      random_tap({2, 2, 3, 3}, rng), random_tap({2, 1, 3, 5}, rng),
      random_tap({2, 2, 3, 3}, rng), random_tap({2, 1, 3, 5}, rng)};

  auto build_spkd = [](nn::Tape& t, const std::vector<nn::Tensor>& in) {
    int t0 = t.leaf(in[0], true), t1 = t.leaf(in[1], true);
    int s0 = t.leaf(in[2], true), s1 = t.leaf(in[3], true);
    return distill::spkd_loss(t, {t0, t1}, {s0, s1});
  };
  auto r1 = fdcheck::run(build_spkd, inputs, 91, 1e-4, 12);
  CHECK(r1.max_rel_err < 1e-4);

  auto build_mse = [](nn::Tape& t, const std::vector<nn::Tensor>& in) {
    int t0 = t.leaf(in[0], true), t1 = t.leaf(in[1], true);
    int s0 = t.leaf(in[2], true), s1 = t.leaf(in[3], true);
    return distill::mse_kd_loss(t, {t0, t1}, {s0, s1});
  };
  auto r2 = fdcheck::run(build_mse, inputs, 92, 1e-4, 12);
  CHECK(r2.max_rel_err < 1e-4);
}

TEST_CASE("train_student: zero epochs return the initialized student") {
  const auto& man = micro_corpus();
  auto teacher_cfg = micro_model(senet::Modality::kAudioLipTongue, 2, 5);
  senet::Model teacher(teacher_cfg);
  std::string tdir = fresh_dir("teacher0");
  senet::save_checkpoint(teacher, tdir + "/teacher.ckpt");

  train::TrainConfig tcfg;
  tcfg.epochs = 0;
  tcfg.batch_size = 3;
  tcfg.seed = 11;
  tcfg.run_dir = fresh_dir("student0");
  auto student_cfg = micro_model(senet::Modality::kAudioLip, 2, 6);

  auto res = distill::train_student(tdir + "/teacher.ckpt", student_cfg, man,
                                    tcfg, distill::KDConfig{});
  CHECK(res.teacher_hash_before == res.teacher_hash_after);
  CHECK(res.training.records.empty());
  CHECK(fs::file_size(res.training.log_path) == 0);

  senet::Model reloaded(student_cfg);
  senet::load_checkpoint(reloaded, res.training.last_ckpt);
  CHECK(reloaded.params().content_hash() ==
        senet::Model(student_cfg).params().content_hash());
}

TEST_CASE("train_student: copy-initialized student with distillation-only "
          "objective is a fixpoint") {
  const auto& man = micro_corpus();
  auto cfg = micro_model(senet::Modality::kAudioLipTongue, 2, 5);
  senet::Model teacher(cfg);
  std::string tdir = fresh_dir("teacher_fix");
  senet::save_checkpoint(teacher, tdir + "/teacher.ckpt");

  train::TrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.batch_size = 3;
  tcfg.seed = 12;
  tcfg.run_dir = fresh_dir("student_fix");

  distill::KDConfig kd;
  kd.se_weight = 0.0;
  kd.delta1 = 1.0;
  kd.delta2 = 1.0;

  auto res = distill::train_student(tdir + "/teacher.ckpt", cfg, man, tcfg, kd);
  CHECK(res.teacher_hash_before == res.teacher_hash_after);
  for (const auto& rec : res.training.records) {
    if (rec.epoch == 0) continue;
    CHECK(rec.train.at("l_total") <= 1e-10);
  }

  // Zero gradients leave every trainable parameter exactly at its
  // initialization (only batch-norm running stats may move).
  senet::Model trained(cfg);
  senet::load_checkpoint(trained, res.training.last_ckpt);
  senet::Model fresh(cfg);
  for (const auto& [name, e] : trained.params().entries()) {
    if (!e.trainable) continue;
    const nn::Tensor& init = fresh.params().get(name);
    for (int64_t i = 0; i < e.value.numel(); ++i) {
      REQUIRE(e.value[i] == init[i]);
    }
  }
}

TEST_CASE("train_student: incompatible taps fail before training") {
  const auto& man = micro_corpus();
  auto teacher_cfg = micro_model(senet::Modality::kAudioLipTongue, 2, 5);
  senet::Model teacher(teacher_cfg);
  std::string tdir = fresh_dir("teacher_bad");
  senet::save_checkpoint(teacher, tdir + "/teacher.ckpt");

  train::TrainConfig tcfg;
  tcfg.epochs = 1;
  tcfg.batch_size = 3;
  tcfg.run_dir = fresh_dir("student_bad");
  auto wide = micro_model(senet::Modality::kAudioLip, 3, 6);
  CHECK_THROWS_AS(distill::train_student(tdir + "/teacher.ckpt", wide, man,
                                         tcfg, distill::KDConfig{}),
                  ConfigError);
}

TEST_CASE("train_student: toy run logs components and improves validation") {
  const auto& man = micro_corpus();
  auto teacher_cfg = micro_model(senet::Modality::kAudioLipTongue, 2, 5);
  senet::Model teacher(teacher_cfg);
  std::string tdir = fresh_dir("teacher_run");
  senet::save_checkpoint(teacher, tdir + "/teacher.ckpt");

  train::TrainConfig tcfg;
  tcfg.epochs = 4;
  tcfg.batch_size = 3;
  tcfg.seed = 13;
  tcfg.run_dir = fresh_dir("student_run");

  distill::KDConfig kd;
  kd.delta1 = 0.05;
  kd.delta2 = 1e-4;
  auto res = distill::train_student(tdir + "/teacher.ckpt",
                                    micro_model(senet::Modality::kAudioLip, 2, 6),
                                    man, tcfg, kd);

  REQUIRE(res.training.records.size() == 5);  // epoch 0 + 4
  CHECK(res.training.best_epoch >= 1);
  CHECK(res.training.best_valid < res.training.records[0].valid);
  CHECK(fs::exists(res.training.best_ckpt));

  std::ifstream log(res.training.log_path);
  std::string line;
  int epochs_seen = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.contains("epoch"));
    CHECK(j.contains("valid_se"));
    CHECK(j.contains("lr"));
    if (j["epoch"].get<int>() >= 1) {
      CHECK(j.contains("l_se"));
      CHECK(j.contains("l_mse_kd"));
      CHECK(j.contains("l_spkd"));
    }
    CHECK(j["epoch"].get<int>() == epochs_seen);
    ++epochs_seen;
  }
  CHECK(epochs_seen == 5);
}
