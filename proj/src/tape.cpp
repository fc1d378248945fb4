// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avse/tape.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>

#include "avse/common.hpp"

namespace avse::nn {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

int64_t prod(const std::vector<int>& v, size_t from, size_t to) {
  int64_t p = 1;
  for (size_t i = from; i < to; ++i) p *= v[i];
  return p;
}

// Gather columns for convolution-style geometry: position = o*stride - pad + k
// over 2 or 3 spatial dims. col has K*channels rows and prod(out_sp) columns;
// row index = (c*K + k_flat), out-of-range taps read as zero.
void im2col(const double* x, int channels, const std::vector<int>& in_sp,
            const std::vector<int>& ksz, const ConvSpec& spec,
            const std::vector<int>& out_sp, double* col) {
  const int rank = static_cast<int>(in_sp.size());
  const int64_t p_total = prod(out_sp, 0, out_sp.size());
  if (rank == 2) {
    const int H = in_sp[0], W = in_sp[1], Ho = out_sp[0], Wo = out_sp[1];
    const int kh = ksz[0], kw = ksz[1];
    int64_t row = 0;
    for (int c = 0; c < channels; ++c) {
      const double* xc = x + static_cast<int64_t>(c) * H * W;
      for (int a = 0; a < kh; ++a)
        for (int bb = 0; bb < kw; ++bb, ++row) {
          double* dst = col + row * p_total;
          for (int oh = 0; oh < Ho; ++oh) {
            const int ih = oh * spec.stride[0] - spec.pad[0] + a;
            if (ih < 0 || ih >= H) {
              std::fill(dst, dst + Wo, 0.0);
              dst += Wo;
              continue;
            }
            const double* src = xc + static_cast<int64_t>(ih) * W;
            for (int ow = 0; ow < Wo; ++ow) {
              const int iw = ow * spec.stride[1] - spec.pad[1] + bb;
              *dst++ = (iw >= 0 && iw < W) ? src[iw] : 0.0;
            }
          }
        }
    }
  } else {
    const int D = in_sp[0], H = in_sp[1], W = in_sp[2];
    const int Do = out_sp[0], Ho = out_sp[1], Wo = out_sp[2];
    int64_t row = 0;
    for (int c = 0; c < channels; ++c) {
      const double* xc = x + static_cast<int64_t>(c) * D * H * W;
      for (int a = 0; a < ksz[0]; ++a)
        for (int bb = 0; bb < ksz[1]; ++bb)
          for (int cc = 0; cc < ksz[2]; ++cc, ++row) {
            double* dst = col + row * p_total;
            for (int od = 0; od < Do; ++od) {
              const int id = od * spec.stride[0] - spec.pad[0] + a;
              if (id < 0 || id >= D) {
                std::fill(dst, dst + static_cast<int64_t>(Ho) * Wo, 0.0);
                dst += static_cast<int64_t>(Ho) * Wo;
                continue;
              }
              for (int oh = 0; oh < Ho; ++oh) {
                const int ih = oh * spec.stride[1] - spec.pad[1] + bb;
                if (ih < 0 || ih >= H) {
                  std::fill(dst, dst + Wo, 0.0);
                  dst += Wo;
                  continue;
                }
                const double* src = xc + (static_cast<int64_t>(id) * H + ih) * W;
                for (int ow = 0; ow < Wo; ++ow) {
                  const int iw = ow * spec.stride[2] - spec.pad[2] + cc;
                  *dst++ = (iw >= 0 && iw < W) ? src[iw] : 0.0;
                }
              }
            }
          }
    }
  }
}

// Scatter-add transpose of im2col: dst[c][o*stride - pad + k] += col[c*K+k][o].
void col2im_add(const double* col, int channels, const std::vector<int>& dst_sp,
                const std::vector<int>& ksz, const ConvSpec& spec,
                const std::vector<int>& src_sp, double* dst) {
  const int rank = static_cast<int>(dst_sp.size());
  const int64_t p_total = prod(src_sp, 0, src_sp.size());
  if (rank == 2) {
    const int H = dst_sp[0], W = dst_sp[1], Ho = src_sp[0], Wo = src_sp[1];
    int64_t row = 0;
    for (int c = 0; c < channels; ++c) {
      double* xc = dst + static_cast<int64_t>(c) * H * W;
      for (int a = 0; a < ksz[0]; ++a)
        for (int bb = 0; bb < ksz[1]; ++bb, ++row) {
          const double* src = col + row * p_total;
          for (int oh = 0; oh < Ho; ++oh) {
            const int ih = oh * spec.stride[0] - spec.pad[0] + a;
            if (ih < 0 || ih >= H) {
              src += Wo;
              continue;
            }
            double* d = xc + static_cast<int64_t>(ih) * W;
            for (int ow = 0; ow < Wo; ++ow) {
              const int iw = ow * spec.stride[1] - spec.pad[1] + bb;
              if (iw >= 0 && iw < W) d[iw] += *src;
              ++src;
            }
          }
        }
    }
  } else {
    const int D = dst_sp[0], H = dst_sp[1], W = dst_sp[2];
    const int Do = src_sp[0], Ho = src_sp[1], Wo = src_sp[2];
    int64_t row = 0;
    for (int c = 0; c < channels; ++c) {
      double* xc = dst + static_cast<int64_t>(c) * D * H * W;
      for (int a = 0; a < ksz[0]; ++a)
        for (int bb = 0; bb < ksz[1]; ++bb)
          for (int cc = 0; cc < ksz[2]; ++cc, ++row) {
            const double* src = col + row * p_total;
            for (int od = 0; od < Do; ++od) {
              const int id = od * spec.stride[0] - spec.pad[0] + a;
              if (id < 0 || id >= D) {
                src += static_cast<int64_t>(Ho) * Wo;
                continue;
              }
              for (int oh = 0; oh < Ho; ++oh) {
                const int ih = oh * spec.stride[1] - spec.pad[1] + bb;
                if (ih < 0 || ih >= H) {
                  src += Wo;
                  continue;
                }
                double* d = xc + (static_cast<int64_t>(id) * H + ih) * W;
                for (int ow = 0; ow < Wo; ++ow) {
                  const int iw = ow * spec.stride[2] - spec.pad[2] + cc;
                  if (iw >= 0 && iw < W) d[iw] += *src;
                  ++src;
                }
              }
            }
          }
    }
  }
}

std::vector<int> conv_out_spatial(const std::vector<int>& in_sp,
                                  const std::vector<int>& ksz,
                                  const ConvSpec& spec) {
  std::vector<int> out(in_sp.size());
  for (size_t i = 0; i < in_sp.size(); ++i) {
    const int span = in_sp[i] + 2 * spec.pad[i] - ksz[i];
    check_dims(span >= 0, "conv: kernel larger than padded input");
    out[i] = span / spec.stride[i] + 1;
  }
  return out;
}

}  // namespace

int add(Tape& t, int a, int b) {
  check_dims(t.val(a).same_shape(t.val(b)), "add: shape mismatch");
  Tensor v(t.val(a).shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = t.val(a)[i] + t.val(b)[i];
  return t.emit(std::move(v), {a, b}, [a, b](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    if (tt.needs_grad(a)) {
      Tensor& ga = tt.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (tt.needs_grad(b)) {
      Tensor& gb = tt.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
    }
  });
}

int sub(Tape& t, int a, int b) {
  check_dims(t.val(a).same_shape(t.val(b)), "sub: shape mismatch");
  Tensor v(t.val(a).shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = t.val(a)[i] - t.val(b)[i];
  return t.emit(std::move(v), {a, b}, [a, b](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    if (tt.needs_grad(a)) {
      Tensor& ga = tt.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (tt.needs_grad(b)) {
      Tensor& gb = tt.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

int mul(Tape& t, int a, int b) {
  check_dims(t.val(a).same_shape(t.val(b)), "mul: shape mismatch");
  Tensor v(t.val(a).shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = t.val(a)[i] * t.val(b)[i];
  return t.emit(std::move(v), {a, b}, [a, b](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    if (tt.needs_grad(a)) {
      Tensor& ga = tt.grad(a);
      const Tensor& vb = tt.val(b);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
    }
    if (tt.needs_grad(b)) {
      Tensor& gb = tt.grad(b);
      const Tensor& va = tt.val(a);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

int scale(Tape& t, int a, double s) {
  Tensor v(t.val(a).shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = s * t.val(a)[i];
  return t.emit(std::move(v), {a}, [a, s](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    Tensor& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += s * g[i];
  });
}

int leaky_relu(Tape& t, int a, double slope) {
  Tensor v(t.val(a).shape());
  for (int64_t i = 0; i < v.numel(); ++i) {
    const double x = t.val(a)[i];
    v[i] = x >= 0.0 ? x : slope * x;
  }
  return t.emit(std::move(v), {a}, [a, slope](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    const Tensor& va = tt.val(a);
    Tensor& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i)
      ga[i] += g[i] * (va[i] >= 0.0 ? 1.0 : slope);
  });
}

int tanh_op(Tape& t, int a) {
  Tensor v(t.val(a).shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = std::tanh(t.val(a)[i]);
  return t.emit(std::move(v), {a}, [a](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    const Tensor& y = tt.val(self);
    Tensor& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

int log_op(Tape& t, int a) {
  Tensor v(t.val(a).shape());
  for (int64_t i = 0; i < v.numel(); ++i) {
    check_data(t.val(a)[i] > 0.0, "log: non-positive input");
    v[i] = std::log(t.val(a)[i]);
  }
  return t.emit(std::move(v), {a}, [a](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    const Tensor& va = tt.val(a);
    Tensor& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / va[i];
  });
}

int clamp_min(Tape& t, int a, double lo) {
  Tensor v(t.val(a).shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = std::max(t.val(a)[i], lo);
  return t.emit(std::move(v), {a}, [a, lo](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    const Tensor& va = tt.val(a);
    Tensor& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i)
      if (va[i] > lo) ga[i] += g[i];
  });
}

int reshape(Tape& t, int a, std::vector<int> shape) {
  Tensor v = t.val(a).reshaped(std::move(shape));
  return t.emit(std::move(v), {a}, [a](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    Tensor& ga = tt.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

namespace {

Tensor permute_copy(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  std::vector<int> out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
  Tensor out(out_shape);
  std::vector<int64_t> in_strides(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * x.dim(i + 1);
  // stride of output dim i in the input layout
  std::vector<int64_t> strides(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  std::vector<int> idx(static_cast<size_t>(r), 0);
  int64_t src = 0;
  for (int64_t o = 0; o < out.numel(); ++o) {
    out[o] = x[src];
    for (int d = r - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      src += strides[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
      src -= strides[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
  return out;
}

}  // namespace

int permute(Tape& t, int a, std::vector<int> perm) {
  check_dims(static_cast<int>(perm.size()) == t.val(a).rank(), "permute: rank mismatch");
  Tensor v = permute_copy(t.val(a), perm);
  return t.emit(std::move(v), {a}, [a, perm](Tape& tt, int self) {
    // inverse permutation routes the gradient back
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    Tensor gp = permute_copy(tt.grad(self), inv);
    Tensor& ga = tt.grad(a);
    for (int64_t i = 0; i < gp.numel(); ++i) ga[i] += gp[i];
  });
}

int concat(Tape& t, const std::vector<int>& parts, int axis) {
  check_dims(!parts.empty(), "concat: no inputs");
  const Tensor& first = t.val(parts[0]);
  const int r = first.rank();
  check_dims(axis >= 0 && axis < r, "concat: bad axis");
  int axis_total = 0;
  for (int p : parts) {
    const Tensor& v = t.val(p);
    check_dims(v.rank() == r, "concat: rank mismatch");
    for (int d = 0; d < r; ++d)
      if (d != axis)
        check_dims(v.dim(d) == first.dim(d), "concat: off-axis shape mismatch");
    axis_total += v.dim(axis);
  }
  std::vector<int> out_shape = first.shape();
  out_shape[static_cast<size_t>(axis)] = axis_total;
  Tensor out(out_shape);

  const int64_t outer = prod(first.shape(), 0, static_cast<size_t>(axis));
  const int64_t inner = prod(first.shape(), static_cast<size_t>(axis) + 1,
                             static_cast<size_t>(r));
  int64_t off = 0;
  std::vector<int64_t> offsets;
  for (int p : parts) {
    offsets.push_back(off);
    const Tensor& v = t.val(p);
    const int64_t blk = v.dim(axis) * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::copy(v.data() + o * blk, v.data() + (o + 1) * blk,
                out.data() + o * axis_total * inner + off * inner);
    off += v.dim(axis);
  }

  std::vector<int> parents = parts;
  return t.emit(std::move(out), parents,
                [parents, offsets, axis, inner, outer, axis_total](Tape& tt, int self) {
                  const Tensor& g = tt.grad(self);
                  for (size_t pi = 0; pi < parents.size(); ++pi) {
                    if (!tt.needs_grad(parents[pi])) continue;
                    Tensor& gp = tt.grad(parents[pi]);
                    const int64_t blk = tt.val(parents[pi]).dim(axis) * inner;
                    for (int64_t o = 0; o < outer; ++o) {
                      const double* src = g.data() + o * axis_total * inner + offsets[pi] * inner;
                      double* dst = gp.data() + o * blk;
                      for (int64_t i = 0; i < blk; ++i) dst[i] += src[i];
                    }
                  }
                });
}

int slice(Tape& t, int a, int axis, int start, int len) {
  const Tensor& x = t.val(a);
  const int r = x.rank();
  check_dims(axis >= 0 && axis < r, "slice: bad axis");
  check_dims(start >= 0 && len > 0 && start + len <= x.dim(axis), "slice: out of range");
  std::vector<int> out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  Tensor out(out_shape);
  const int64_t outer = prod(x.shape(), 0, static_cast<size_t>(axis));
  const int64_t inner = prod(x.shape(), static_cast<size_t>(axis) + 1, static_cast<size_t>(r));
  const int64_t in_axis = x.dim(axis);
  for (int64_t o = 0; o < outer; ++o)
    std::copy(x.data() + (o * in_axis + start) * inner,
              x.data() + (o * in_axis + start + len) * inner,
              out.data() + o * len * inner);
  return t.emit(std::move(out), {a},
                [a, axis, start, len, outer, inner](Tape& tt, int self) {
                  const Tensor& g = tt.grad(self);
                  Tensor& ga = tt.grad(a);
                  const int64_t in_axis = tt.val(a).dim(axis);
                  for (int64_t o = 0; o < outer; ++o) {
                    const double* src = g.data() + o * len * inner;
                    double* dst = ga.data() + (o * in_axis + start) * inner;
                    for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                  }
                });
}

int sum_all(Tape& t, int a) {
  double s = 0.0;
  for (int64_t i = 0; i < t.val(a).numel(); ++i) s += t.val(a)[i];
  return t.emit(Tensor::scalar(s), {a}, [a](Tape& tt, int self) {
    const double g = tt.grad(self)[0];
    Tensor& ga = tt.grad(a);
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

int mean_all(Tape& t, int a) {
  return scale(t, sum_all(t, a), 1.0 / static_cast<double>(t.val(a).numel()));
}

int matmul(Tape& t, int a, int b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  check_dims(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0),
             "matmul: incompatible shapes");
  const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor out({m, n});
  MapM(out.data(), m, n).noalias() = MapC(A.data(), m, k) * MapC(B.data(), k, n);
  return t.emit(std::move(out), {a, b}, [a, b, m, k, n](Tape& tt, int self) {
    MapC g(tt.grad(self).data(), m, n);
    if (tt.needs_grad(a)) {
      MapM ga(tt.grad(a).data(), m, k);
      ga.noalias() += g * MapC(tt.val(b).data(), k, n).transpose();
    }
    if (tt.needs_grad(b)) {
      MapM gb(tt.grad(b).data(), k, n);
      gb.noalias() += MapC(tt.val(a).data(), m, k).transpose() * g;
    }
  });
}

int transpose2d(Tape& t, int a) {
  const Tensor& A = t.val(a);
  check_dims(A.rank() == 2, "transpose2d: rank must be 2");
  const int m = A.dim(0), n = A.dim(1);
  Tensor out({n, m});
  MapM(out.data(), n, m).noalias() = MapC(A.data(), m, n).transpose();
  return t.emit(std::move(out), {a}, [a, m, n](Tape& tt, int self) {
    MapM ga(tt.grad(a).data(), m, n);
    ga.noalias() += MapC(tt.grad(self).data(), n, m).transpose();
  });
}

int linear(Tape& t, int x, int w, int b) {
  const Tensor& X = t.val(x);
  const Tensor& W = t.val(w);
  const Tensor& B = t.val(b);
  check_dims(X.rank() == 2 && W.rank() == 2 && B.rank() == 1 &&
                 X.dim(1) == W.dim(1) && W.dim(0) == B.dim(0),
             "linear: incompatible shapes");
  const int r = X.dim(0), i = X.dim(1), o = W.dim(0);
  Tensor out({r, o});
  MapM Y(out.data(), r, o);
  Y.noalias() = MapC(X.data(), r, i) * MapC(W.data(), o, i).transpose();
  for (int rr = 0; rr < r; ++rr)
    for (int oo = 0; oo < o; ++oo) out.data()[static_cast<int64_t>(rr) * o + oo] += B[oo];
  return t.emit(std::move(out), {x, w, b}, [x, w, b, r, i, o](Tape& tt, int self) {
    MapC g(tt.grad(self).data(), r, o);
    if (tt.needs_grad(x)) {
      MapM gx(tt.grad(x).data(), r, i);
      gx.noalias() += g * MapC(tt.val(w).data(), o, i);
    }
    if (tt.needs_grad(w)) {
      MapM gw(tt.grad(w).data(), o, i);
      gw.noalias() += g.transpose() * MapC(tt.val(x).data(), r, i);
    }
    if (tt.needs_grad(b)) {
      Tensor& gb = tt.grad(b);
      for (int rr = 0; rr < r; ++rr)
        for (int oo = 0; oo < o; ++oo) gb[oo] += g(rr, oo);
    }
  });
}

int rows_l2_normalize(Tape& t, int a, ZeroRowPolicy policy, double floor) {
  const Tensor& X = t.val(a);
  check_dims(X.rank() == 2, "rows_l2_normalize: rank must be 2");
  const int R = X.dim(0), C = X.dim(1);
  Tensor out({R, C});
  for (int r = 0; r < R; ++r) {
    double n2 = 0.0;
    for (int c = 0; c < C; ++c) {
      const double v = X[static_cast<int64_t>(r) * C + c];
      n2 += v * v;
    }
    const double n = std::sqrt(n2);
    if (n < floor) {
      if (policy == ZeroRowPolicy::kError)
        throw DataError("rows_l2_normalize: degenerate zero-norm row " + std::to_string(r));
      continue;  // row left as zeros
    }
    for (int c = 0; c < C; ++c)
      out[static_cast<int64_t>(r) * C + c] = X[static_cast<int64_t>(r) * C + c] / n;
  }
  return t.emit(std::move(out), {a}, [a, R, C, floor](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    const Tensor& X = tt.val(a);
    const Tensor& Y = tt.val(self);
    Tensor& ga = tt.grad(a);
    for (int r = 0; r < R; ++r) {
      double n2 = 0.0, dot = 0.0;
      for (int c = 0; c < C; ++c) {
        const int64_t i = static_cast<int64_t>(r) * C + c;
        n2 += X[i] * X[i];
        dot += g[i] * Y[i];
      }
      const double n = std::sqrt(n2);
      if (n < floor) continue;
      for (int c = 0; c < C; ++c) {
        const int64_t i = static_cast<int64_t>(r) * C + c;
        ga[i] += (g[i] - dot * Y[i]) / n;
      }
    }
  });
}

int softmax_rows(Tape& t, int a, double sc) {
  const Tensor& X = t.val(a);
  check_dims(X.rank() == 2, "softmax_rows: rank must be 2");
  const int R = X.dim(0), C = X.dim(1);
  Tensor out({R, C});
  for (int r = 0; r < R; ++r) {
    const int64_t base = static_cast<int64_t>(r) * C;
    double mx = -1e300;
    for (int c = 0; c < C; ++c) mx = std::max(mx, sc * X[base + c]);
    double z = 0.0;
    for (int c = 0; c < C; ++c) {
      out[base + c] = std::exp(sc * X[base + c] - mx);
      z += out[base + c];
    }
    for (int c = 0; c < C; ++c) out[base + c] /= z;
  }
  return t.emit(std::move(out), {a}, [a, R, C, sc](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    const Tensor& y = tt.val(self);
    Tensor& ga = tt.grad(a);
    for (int r = 0; r < R; ++r) {
      const int64_t base = static_cast<int64_t>(r) * C;
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += g[base + c] * y[base + c];
      for (int c = 0; c < C; ++c)
        ga[base + c] += sc * y[base + c] * (g[base + c] - dot);
    }
  });
}

int conv(Tape& t, int x, int w, int b, const ConvSpec& spec) {
  const Tensor& X = t.val(x);
  const Tensor& W = t.val(w);
  const Tensor& B = t.val(b);
  const int spatial = W.rank() - 2;
  check_dims(spatial == 2 || spatial == 3, "conv: weight must be rank 4 or 5");
  check_dims(X.rank() == spatial + 2, "conv: input rank mismatch");
  check_dims(X.dim(1) == W.dim(1), "conv: channel mismatch");
  check_dims(B.rank() == 1 && B.dim(0) == W.dim(0), "conv: bias shape mismatch");
  check_dims(static_cast<int>(spec.stride.size()) == spatial &&
                 static_cast<int>(spec.pad.size()) == spatial,
             "conv: spec rank mismatch");

  const int batch = X.dim(0), cin = X.dim(1), cout = W.dim(0);
  std::vector<int> in_sp, ksz;
  for (int i = 0; i < spatial; ++i) {
    in_sp.push_back(X.dim(2 + i));
    ksz.push_back(W.dim(2 + i));
  }
  const std::vector<int> out_sp = conv_out_spatial(in_sp, ksz, spec);
  const int64_t P = prod(out_sp, 0, out_sp.size());
  const int64_t K = cin * prod(ksz, 0, ksz.size());
  const int64_t in_item = cin * prod(in_sp, 0, in_sp.size());

  std::vector<int> out_shape = {batch, cout};
  for (int d : out_sp) out_shape.push_back(d);
  Tensor out(out_shape);

  std::vector<double> col(static_cast<size_t>(K * P));
  for (int bi = 0; bi < batch; ++bi) {
    im2col(X.data() + bi * in_item, cin, in_sp, ksz, spec, out_sp, col.data());
    MapM y(out.data() + static_cast<int64_t>(bi) * cout * P, cout, P);
    y.noalias() = MapC(W.data(), cout, K) * MapC(col.data(), K, P);
    for (int c = 0; c < cout; ++c) y.row(c).array() += B[c];
  }

  return t.emit(std::move(out), {x, w, b},
                [x, w, b, spec, in_sp, ksz, out_sp, batch, cin, cout, P, K,
                 in_item](Tape& tt, int self) {
                  const Tensor& g = tt.grad(self);
                  const Tensor& X = tt.val(x);
                  const Tensor& W = tt.val(w);
                  std::vector<double> col(static_cast<size_t>(K * P));
                  const bool need_x = tt.needs_grad(x);
                  const bool need_w = tt.needs_grad(w);
                  const bool need_b = tt.needs_grad(b);
                  for (int bi = 0; bi < batch; ++bi) {
                    MapC gy(g.data() + static_cast<int64_t>(bi) * cout * P, cout, P);
                    if (need_w || need_x)
                      im2col(X.data() + bi * in_item, cin, in_sp, ksz, spec, out_sp,
                             col.data());
                    if (need_w) {
                      MapM gw(tt.grad(w).data(), cout, K);
                      gw.noalias() += gy * MapC(col.data(), K, P).transpose();
                    }
                    if (need_x) {
                      std::vector<double> dcol(static_cast<size_t>(K * P));
                      MapM(dcol.data(), K, P).noalias() =
                          MapC(W.data(), cout, K).transpose() * gy;
                      col2im_add(dcol.data(), cin, in_sp, ksz, spec, out_sp,
                                 tt.grad(x).data() + bi * in_item);
                    }
                    if (need_b) {
                      Tensor& gb = tt.grad(b);
                      for (int c = 0; c < cout; ++c) gb[c] += gy.row(c).sum();
                    }
                  }
                });
}

int conv_transpose(Tape& t, int x, int w, int b, const ConvSpec& spec) {
  const Tensor& X = t.val(x);
  const Tensor& W = t.val(w);  // [Cin, Cout, k...]
  const Tensor& B = t.val(b);
  const int spatial = W.rank() - 2;
  check_dims(spatial == 2 || spatial == 3, "conv_transpose: weight rank");
  check_dims(X.rank() == spatial + 2 && X.dim(1) == W.dim(0),
             "conv_transpose: input shape mismatch");
  check_dims(B.rank() == 1 && B.dim(0) == W.dim(1), "conv_transpose: bias shape");

  const int batch = X.dim(0), cin = X.dim(0 + 1), cout = W.dim(1);
  std::vector<int> in_sp, ksz;
  for (int i = 0; i < spatial; ++i) {
    in_sp.push_back(X.dim(2 + i));
    ksz.push_back(W.dim(2 + i));
  }
  std::vector<int> out_sp(static_cast<size_t>(spatial));
  for (int i = 0; i < spatial; ++i) {
    out_sp[static_cast<size_t>(i)] =
        (in_sp[static_cast<size_t>(i)] - 1) * spec.stride[static_cast<size_t>(i)] -
        2 * spec.pad[static_cast<size_t>(i)] + ksz[static_cast<size_t>(i)];
    check_dims(out_sp[static_cast<size_t>(i)] > 0, "conv_transpose: non-positive output dim");
  }

  const int64_t Pin = prod(in_sp, 0, in_sp.size());
  const int64_t Pout = prod(out_sp, 0, out_sp.size());
  const int64_t Kk = prod(ksz, 0, ksz.size());
  const int64_t rows = cout * Kk;

  std::vector<int> out_shape = {batch, cout};
  for (int d : out_sp) out_shape.push_back(d);
  Tensor out(out_shape);

  std::vector<double> tmp(static_cast<size_t>(rows * Pin));
  for (int bi = 0; bi < batch; ++bi) {
    MapC xb(X.data() + static_cast<int64_t>(bi) * cin * Pin, cin, Pin);
    // w viewed as [Cin, Cout*K]
    MapM(tmp.data(), rows, Pin).noalias() =
        MapC(W.data(), cin, rows).transpose() * xb;
    double* yb = out.data() + static_cast<int64_t>(bi) * cout * Pout;
    col2im_add(tmp.data(), cout, out_sp, ksz, spec, in_sp, yb);
    MapM y(yb, cout, Pout);
    for (int c = 0; c < cout; ++c) y.row(c).array() += B[c];
  }

  return t.emit(std::move(out), {x, w, b},
                [x, w, b, spec, in_sp, ksz, out_sp, batch, cin, cout, Pin, Pout,
                 rows](Tape& tt, int self) {
                  const Tensor& g = tt.grad(self);
                  const Tensor& X = tt.val(x);
                  const Tensor& W = tt.val(w);
                  const bool need_x = tt.needs_grad(x);
                  const bool need_w = tt.needs_grad(w);
                  const bool need_b = tt.needs_grad(b);
                  std::vector<double> dtmp(static_cast<size_t>(rows * Pin));
                  for (int bi = 0; bi < batch; ++bi) {
                    const double* gy = g.data() + static_cast<int64_t>(bi) * cout * Pout;
                    if (need_x || need_w)
                      im2col(gy, cout, out_sp, ksz, spec, in_sp, dtmp.data());
                    if (need_x) {
                      MapM gx(tt.grad(x).data() + static_cast<int64_t>(bi) * cin * Pin,
                              cin, Pin);
                      gx.noalias() += MapC(W.data(), cin, rows) * MapC(dtmp.data(), rows, Pin);
                    }
                    if (need_w) {
                      MapM gw(tt.grad(w).data(), cin, rows);
                      MapC xb(X.data() + static_cast<int64_t>(bi) * cin * Pin, cin, Pin);
                      gw.noalias() += xb * MapC(dtmp.data(), rows, Pin).transpose();
                    }
                    if (need_b) {
                      Tensor& gb = tt.grad(b);
                      MapC gyb(gy, cout, Pout);
                      for (int c = 0; c < cout; ++c) gb[c] += gyb.row(c).sum();
                    }
                  }
                });
}

int avg_pool_last(Tape& t, int x) {
  const Tensor& X = t.val(x);
  const int r = X.rank();
  check_dims(r >= 1, "avg_pool_last: scalar input");
  const int W = X.dim(r - 1);
  const int Wo = (W + 1) / 2;  // ceil mode
  const int64_t rows = X.numel() / W;
  std::vector<int> out_shape = X.shape();
  out_shape[static_cast<size_t>(r - 1)] = Wo;
  Tensor out(out_shape);
  for (int64_t rr = 0; rr < rows; ++rr) {
    const double* src = X.data() + rr * W;
    double* dst = out.data() + rr * Wo;
    for (int i = 0; i < Wo; ++i) {
      if (2 * i + 1 < W)
        dst[i] = 0.5 * (src[2 * i] + src[2 * i + 1]);
      else
        dst[i] = src[2 * i];  // partial window averages its single element
    }
  }
  return t.emit(std::move(out), {x}, [x, W, Wo, rows](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    Tensor& gx = tt.grad(x);
    for (int64_t rr = 0; rr < rows; ++rr) {
      const double* gs = g.data() + rr * Wo;
      double* gd = gx.data() + rr * W;
      for (int i = 0; i < Wo; ++i) {
        if (2 * i + 1 < W) {
          gd[2 * i] += 0.5 * gs[i];
          gd[2 * i + 1] += 0.5 * gs[i];
        } else {
          gd[2 * i] += gs[i];
        }
      }
    }
  });
}

int upsample_last_to(Tape& t, int x, int target) {
  const Tensor& X = t.val(x);
  const int r = X.rank();
  const int W = X.dim(r - 1);
  check_dims(target >= W, "upsample_last_to: target below input width");
  const int64_t rows = X.numel() / W;
  std::vector<int> out_shape = X.shape();
  out_shape[static_cast<size_t>(r - 1)] = target;
  Tensor out(out_shape);
  for (int64_t rr = 0; rr < rows; ++rr) {
    const double* src = X.data() + rr * W;
    double* dst = out.data() + rr * static_cast<int64_t>(target);
    for (int i = 0; i < target; ++i)
      dst[i] = src[(static_cast<int64_t>(i) * W) / target];
  }
  return t.emit(std::move(out), {x}, [x, W, target, rows](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    Tensor& gx = tt.grad(x);
    for (int64_t rr = 0; rr < rows; ++rr) {
      const double* gs = g.data() + rr * static_cast<int64_t>(target);
      double* gd = gx.data() + rr * W;
      for (int i = 0; i < target; ++i)
        gd[(static_cast<int64_t>(i) * W) / target] += gs[i];
    }
  });
}

int batch_norm(Tape& t, int x, int gamma, int beta, BatchNormState& state,
               bool training) {
  const Tensor& X = t.val(x);
  check_dims(X.rank() >= 2, "batch_norm: rank must be >= 2");
  const int B = X.dim(0), C = X.dim(1);
  const int64_t inner = X.numel() / (static_cast<int64_t>(B) * C);
  check_dims(t.val(gamma).numel() == C && t.val(beta).numel() == C,
             "batch_norm: gamma/beta size mismatch");
  check_dims(state.running_mean.numel() == C && state.running_var.numel() == C,
             "batch_norm: running stats size mismatch");
  const double n = static_cast<double>(B) * static_cast<double>(inner);
  const double eps = state.eps;

  auto xat = [&](int bi, int c, int64_t i) {
    return X[(static_cast<int64_t>(bi) * C + c) * inner + i];
  };

  std::vector<double> mean(static_cast<size_t>(C)), inv_std(static_cast<size_t>(C));
  if (training) {
    for (int c = 0; c < C; ++c) {
      double m = 0.0;
      for (int bi = 0; bi < B; ++bi)
        for (int64_t i = 0; i < inner; ++i) m += xat(bi, c, i);
      m /= n;
      double v = 0.0;
      for (int bi = 0; bi < B; ++bi)
        for (int64_t i = 0; i < inner; ++i) {
          const double d = xat(bi, c, i) - m;
          v += d * d;
        }
      v /= n;
      mean[static_cast<size_t>(c)] = m;
      inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(v + eps);
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * v;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = state.running_mean[c];
      inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(state.running_var[c] + eps);
    }
  }

  // x_hat cached for the backward pass
  auto xhat = std::make_shared<Tensor>(X.shape());
  Tensor out(X.shape());
  const Tensor& G = t.val(gamma);
  const Tensor& Be = t.val(beta);
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      const int64_t base = (static_cast<int64_t>(bi) * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i) {
        const double xh = (X[base + i] - mean[static_cast<size_t>(c)]) * inv_std[static_cast<size_t>(c)];
        (*xhat)[base + i] = xh;
        out[base + i] = G[c] * xh + Be[c];
      }
    }

  return t.emit(std::move(out), {x, gamma, beta},
                [x, gamma, beta, B, C, inner, n, inv_std, xhat,
                 training](Tape& tt, int self) {
                  const Tensor& g = tt.grad(self);
                  const Tensor& G = tt.val(gamma);
                  const bool need_x = tt.needs_grad(x);
                  for (int c = 0; c < C; ++c) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (int bi = 0; bi < B; ++bi) {
                      const int64_t base = (static_cast<int64_t>(bi) * C + c) * inner;
                      for (int64_t i = 0; i < inner; ++i) {
                        sum_g += g[base + i];
                        sum_gx += g[base + i] * (*xhat)[base + i];
                      }
                    }
                    if (tt.needs_grad(beta)) tt.grad(beta)[c] += sum_g;
                    if (tt.needs_grad(gamma)) tt.grad(gamma)[c] += sum_gx;
                    if (!need_x) continue;
                    Tensor& gx = tt.grad(x);
                    const double k = G[c] * inv_std[static_cast<size_t>(c)];
                    for (int bi = 0; bi < B; ++bi) {
                      const int64_t base = (static_cast<int64_t>(bi) * C + c) * inner;
                      for (int64_t i = 0; i < inner; ++i) {
                        if (training)
                          gx[base + i] += k * (g[base + i] - sum_g / n -
                                               (*xhat)[base + i] * sum_gx / n);
                        else
                          gx[base + i] += k * g[base + i];
                      }
                    }
                  }
                });
}

int lstm(Tape& t, int x, int w_ih, int w_hh, int b, int hidden) {
  const Tensor& X = t.val(x);
  check_dims(X.rank() == 3, "lstm: input must be [B, S, I]");
  const int B = X.dim(0), S = X.dim(1), I = X.dim(2), H = hidden;
  check_dims(t.val(w_ih).rank() == 2 && t.val(w_ih).dim(0) == 4 * H &&
                 t.val(w_ih).dim(1) == I,
             "lstm: w_ih shape mismatch");
  check_dims(t.val(w_hh).rank() == 2 && t.val(w_hh).dim(0) == 4 * H &&
                 t.val(w_hh).dim(1) == H,
             "lstm: w_hh shape mismatch");
  check_dims(t.val(b).numel() == 4 * H, "lstm: bias shape mismatch");

  struct Cache {
    Tensor i, f, g, o, c, tc;  // each [B, S, H]
  };
  auto cache = std::make_shared<Cache>();
  cache->i = Tensor({B, S, H});
  cache->f = Tensor({B, S, H});
  cache->g = Tensor({B, S, H});
  cache->o = Tensor({B, S, H});
  cache->c = Tensor({B, S, H});
  cache->tc = Tensor({B, S, H});

  Tensor out({B, S, H});
  MatRM h_prev = MatRM::Zero(B, H);
  MatRM c_prev = MatRM::Zero(B, H);
  MatRM gates(B, 4 * H);
  const Tensor& Wih = t.val(w_ih);
  const Tensor& Whh = t.val(w_hh);
  const Tensor& Bias = t.val(b);

  for (int s = 0; s < S; ++s) {
    MatRM xt(B, I);
    for (int bi = 0; bi < B; ++bi)
      for (int ii = 0; ii < I; ++ii)
        xt(bi, ii) = X[(static_cast<int64_t>(bi) * S + s) * I + ii];
    gates.noalias() = xt * MapC(Wih.data(), 4 * H, I).transpose();
    gates.noalias() += h_prev * MapC(Whh.data(), 4 * H, H).transpose();
    for (int bi = 0; bi < B; ++bi)
      for (int k = 0; k < 4 * H; ++k) gates(bi, k) += Bias[k];
    for (int bi = 0; bi < B; ++bi) {
      const int64_t base = (static_cast<int64_t>(bi) * S + s) * H;
      for (int hh = 0; hh < H; ++hh) {
        const double gi = 1.0 / (1.0 + std::exp(-gates(bi, hh)));
        const double gf = 1.0 / (1.0 + std::exp(-gates(bi, H + hh)));
        const double gg = std::tanh(gates(bi, 2 * H + hh));
        const double go = 1.0 / (1.0 + std::exp(-gates(bi, 3 * H + hh)));
        const double cc = gf * c_prev(bi, hh) + gi * gg;
        const double tc = std::tanh(cc);
        cache->i[base + hh] = gi;
        cache->f[base + hh] = gf;
        cache->g[base + hh] = gg;
        cache->o[base + hh] = go;
        cache->c[base + hh] = cc;
        cache->tc[base + hh] = tc;
        out[base + hh] = go * tc;
        h_prev(bi, hh) = go * tc;
        c_prev(bi, hh) = cc;
      }
    }
  }

  return t.emit(std::move(out), {x, w_ih, w_hh, b},
                [x, w_ih, w_hh, b, B, S, I, H, cache](Tape& tt, int self) {
                  const Tensor& g = tt.grad(self);
                  const Tensor& X = tt.val(x);
                  const Tensor& Wih = tt.val(w_ih);
                  const Tensor& Whh = tt.val(w_hh);
                  MatRM dh_next = MatRM::Zero(B, H);
                  MatRM dc_next = MatRM::Zero(B, H);
                  MatRM dgates(B, 4 * H);
                  const bool nx = tt.needs_grad(x);
                  const bool nwi = tt.needs_grad(w_ih);
                  const bool nwh = tt.needs_grad(w_hh);
                  const bool nb = tt.needs_grad(b);
                  for (int s = S - 1; s >= 0; --s) {
                    for (int bi = 0; bi < B; ++bi) {
                      const int64_t base = (static_cast<int64_t>(bi) * S + s) * H;
                      for (int hh = 0; hh < H; ++hh) {
                        const double dh = g[base + hh] + dh_next(bi, hh);
                        const double o = cache->o[base + hh];
                        const double tc = cache->tc[base + hh];
                        const double dc = dc_next(bi, hh) + dh * o * (1.0 - tc * tc);
                        const double i = cache->i[base + hh];
                        const double f = cache->f[base + hh];
                        const double gg = cache->g[base + hh];
                        const double cp =
                            s > 0 ? cache->c[(static_cast<int64_t>(bi) * S + s - 1) * H + hh]
                                  : 0.0;
                        const double di = dc * gg;
                        const double df = dc * cp;
                        const double dgg = dc * i;
                        const double do_ = dh * tc;
                        dgates(bi, hh) = di * i * (1.0 - i);
                        dgates(bi, H + hh) = df * f * (1.0 - f);
                        dgates(bi, 2 * H + hh) = dgg * (1.0 - gg * gg);
                        dgates(bi, 3 * H + hh) = do_ * o * (1.0 - o);
                        dc_next(bi, hh) = dc * f;
                      }
                    }
                    MatRM xt(B, I);
                    MatRM hp = MatRM::Zero(B, H);
                    for (int bi = 0; bi < B; ++bi) {
                      for (int ii = 0; ii < I; ++ii)
                        xt(bi, ii) = X[(static_cast<int64_t>(bi) * S + s) * I + ii];
                      if (s > 0)
                        for (int hh = 0; hh < H; ++hh) {
                          const int64_t pb = (static_cast<int64_t>(bi) * S + s - 1) * H;
                          hp(bi, hh) = cache->o[pb + hh] * cache->tc[pb + hh];
                        }
                    }
                    if (nwi) {
                      MapM gwi(tt.grad(w_ih).data(), 4 * H, I);
                      gwi.noalias() += dgates.transpose() * xt;
                    }
                    if (nwh) {
                      MapM gwh(tt.grad(w_hh).data(), 4 * H, H);
                      gwh.noalias() += dgates.transpose() * hp;
                    }
                    if (nb) {
                      Tensor& gb = tt.grad(b);
                      for (int bi = 0; bi < B; ++bi)
                        for (int k = 0; k < 4 * H; ++k) gb[k] += dgates(bi, k);
                    }
                    if (nx) {
                      MatRM dx = dgates * MapC(Wih.data(), 4 * H, I);
                      Tensor& gx = tt.grad(x);
                      for (int bi = 0; bi < B; ++bi)
                        for (int ii = 0; ii < I; ++ii)
                          gx[(static_cast<int64_t>(bi) * S + s) * I + ii] += dx(bi, ii);
                    }
                    dh_next.noalias() = dgates * MapC(Whh.data(), 4 * H, H);
                  }
                });
}

namespace {

// Rebuild the per-frame flattened feature matrix F [b, c*f] for frame j.
void gather_frame(const Tensor& x, int j, MatRM& F) {
  const int b = x.dim(0), c = x.dim(1), s = x.dim(2), f = x.dim(3);
  for (int r = 0; r < b; ++r)
    for (int cc = 0; cc < c; ++cc) {
      const int64_t base = ((static_cast<int64_t>(r) * c + cc) * s + j) * f;
      for (int ff = 0; ff < f; ++ff) F(r, cc * f + ff) = x[base + ff];
    }
}

}  // namespace

int frame_grams(Tape& t, int x) {
  const Tensor& X = t.val(x);
  check_dims(X.rank() == 4, "frame_grams: input must be [b, c, s, f]");
  const int b = X.dim(0), c = X.dim(1), s = X.dim(2), f = X.dim(3);
  const int64_t fp = static_cast<int64_t>(c) * f;
  constexpr double kFloor = 1e-12;

  Tensor out({s, b, b});
  MatRM F(b, fp);
  MatRM T(b, b);
  for (int j = 0; j < s; ++j) {
    gather_frame(X, j, F);
    T.noalias() = F * F.transpose();
    for (int r = 0; r < b; ++r) {
      const double nrm = T.row(r).norm();
      double* dst = out.data() + (static_cast<int64_t>(j) * b + r) * b;
      if (nrm < kFloor) continue;  // zero row stays zero
      for (int cc = 0; cc < b; ++cc) dst[cc] = T(r, cc) / nrm;
    }
  }

  return t.emit(std::move(out), {x}, [x, b, c, s, f, fp](Tape& tt, int self) {
    const Tensor& g = tt.grad(self);
    const Tensor& X = tt.val(x);
    Tensor& gx = tt.grad(x);
    MatRM F(b, fp), T(b, b), dT(b, b), dF(b, fp);
    for (int j = 0; j < s; ++j) {
      gather_frame(X, j, F);
      T.noalias() = F * F.transpose();
      dT.setZero();
      for (int r = 0; r < b; ++r) {
        const double nrm = T.row(r).norm();
        if (nrm < 1e-12) continue;
        // y = T_r / ||T_r||: dT_r = (dy - (dy . y) y) / ||T_r||
        Eigen::RowVectorXd y = T.row(r) / nrm;
        Eigen::RowVectorXd dy(b);
        for (int cc = 0; cc < b; ++cc)
          dy(cc) = g[(static_cast<int64_t>(j) * b + r) * b + cc];
        const double dot = dy.dot(y);
        dT.row(r) = (dy - dot * y) / nrm;
      }
      dF.noalias() = (dT + dT.transpose()) * F;
      for (int r = 0; r < b; ++r)
        for (int cc = 0; cc < c; ++cc) {
          const int64_t base = ((static_cast<int64_t>(r) * c + cc) * s + j) * f;
          for (int ff = 0; ff < f; ++ff) gx[base + ff] += dF(r, cc * f + ff);
        }
    }
  });
}

int mse(Tape& t, int a, int b) {
  check_dims(t.val(a).same_shape(t.val(b)), "mse: shape mismatch");
  const int64_t n = t.val(a).numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = t.val(a)[i] - t.val(b)[i];
    s += d * d;
  }
  return t.emit(Tensor::scalar(s / static_cast<double>(n)), {a, b},
                [a, b, n](Tape& tt, int self) {
                  const double g = tt.grad(self)[0] * 2.0 / static_cast<double>(n);
                  const Tensor& va = tt.val(a);
                  const Tensor& vb = tt.val(b);
                  if (tt.needs_grad(a)) {
                    Tensor& ga = tt.grad(a);
                    for (int64_t i = 0; i < n; ++i) ga[i] += g * (va[i] - vb[i]);
                  }
                  if (tt.needs_grad(b)) {
                    Tensor& gb = tt.grad(b);
                    for (int64_t i = 0; i < n; ++i) gb[i] -= g * (va[i] - vb[i]);
                  }
                });
}

}  // namespace avse::nn
