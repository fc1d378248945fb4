// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/optim.hpp"

#include <cmath>

#include "avse/common.hpp"

namespace avse::optim {

void Adam::step(senet::ParamStore& params, nn::Tape& tape,
                const std::map<std::string, int>& param_nodes) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (auto& [name, e] : params.entries()) {
    if (!e.trainable || senet::ParamStore::is_running_stat(name)) continue;
    auto it = param_nodes.find(name);
    check_config(it != param_nodes.end(), "no tape node for " + name);
    const nn::Tensor& g = tape.grad(it->second);
    check_dims(g.same_shape(e.value), "gradient shape mismatch for " + name);

    auto mi = m_.find(name);
    if (mi == m_.end()) {
      m_.emplace(name, nn::Tensor(e.value.shape()));
      v_.emplace(name, nn::Tensor(e.value.shape()));
      mi = m_.find(name);
    }
    nn::Tensor& m = mi->second;
    nn::Tensor& v = v_.at(name);
    for (int64_t i = 0; i < e.value.numel(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      e.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

bool PlateauScheduler::observe(double value, Adam& opt) {
  if (value < best_ - 1e-12) {
    best_ = value;
    stale_ = 0;
    return false;
  }
  if (++stale_ <= patience_) return false;
  stale_ = 0;
  double lr = opt.lr() * factor_;
  if (lr < min_lr_) lr = min_lr_;
  bool reduced = lr < opt.lr();
  opt.set_lr(lr);
  return reduced;
}

}  // namespace avse::optim
