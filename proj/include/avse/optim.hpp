// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <map>
#include <string>

#include "avse/senet.hpp"
#include "avse/tape.hpp"

namespace avse::optim {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a named parameter store. Moment buffers are keyed by parameter
// name, so one optimizer instance follows one model across steps.
class Adam {
 public:
  explicit Adam(const AdamConfig& cfg = {}) : cfg_(cfg) {}

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  int64_t steps() const { return steps_; }

  // Apply one update from the gradients accumulated on the tape. param_nodes
  // maps names to the leaf ids the forward pass created.
  void step(senet::ParamStore& params, nn::Tape& tape,
            const std::map<std::string, int>& param_nodes);

 private:
  AdamConfig cfg_;
  int64_t steps_ = 0;
  std::map<std::string, nn::Tensor> m_, v_;
};

// Halve-or-worse plateau schedule: multiply the rate by factor when the
// monitored value has not improved for patience epochs.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int patience, double min_lr = 1e-7)
      : factor_(factor), patience_(patience), min_lr_(min_lr) {}

  // Returns true when the rate was reduced this call.
  bool observe(double value, Adam& opt);
  double best() const { return best_; }

 private:
  double factor_;
  int patience_;
  double min_lr_;
  double best_ = 1e300;
  int stale_ = 0;
};

}  // namespace avse::optim
