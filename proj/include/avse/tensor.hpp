// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "avse/common.hpp"

namespace avse::nn {

// Dense row-major double tensor. Deliberately minimal: shape + contiguous
// storage. All layout-aware math lives in the ops (tape.hpp / tape.cpp).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.0);
  }
  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims(static_cast<int64_t>(data_.size()) == count(shape_),
               "tensor data size does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Multi-index accessor for tests and glue code; hot paths index manually.
  double& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
  double at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

  Tensor reshaped(std::vector<int> new_shape) const {
    check_dims(count(new_shape) == numel(), "reshape changes element count");
    return Tensor(std::move(new_shape), data_);
  }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      check_dims(d >= 0, "negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  size_t offset(std::initializer_list<int> idx) const {
    check_dims(static_cast<int>(idx.size()) == rank(), "index rank mismatch");
    int64_t off = 0;
    int i = 0;
    for (int v : idx) {
      check_dims(v >= 0 && v < shape_[static_cast<size_t>(i)], "index out of range");
      off = off * shape_[static_cast<size_t>(i)] + v;
      ++i;
    }
    return static_cast<size_t>(off);
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace avse::nn
