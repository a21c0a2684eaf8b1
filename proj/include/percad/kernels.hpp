#pragma once

#include <cstring>
#include <thread>
#include <vector>

#include "percad/tensor.hpp"

// Low-level NCHW kernels behind the autodiff ops. Convolutions run one
// GEMM per sample on an (HoWo x C*kh*kw) patch matrix; outputs of distinct
// samples are disjoint, so the batch loop parallelizes without changing
// results for a fixed thread count.
namespace percad::kernels {

inline int& thread_count_ref() {
  static int n = 1;
  return n;
}
inline void set_threads(int n) { thread_count_ref() = n < 1 ? 1 : n; }
inline int threads() { return thread_count_ref(); }

// Runs fn(begin, end) over a deterministic contiguous partition of [0, n).
template <typename Fn>
void parallel_chunks(Index n, const Fn& fn) {
  const int t = threads();
  if (t <= 1 || n < 2) {
    fn(Index{0}, n, 0);
    return;
  }
  const int used = static_cast<int>(std::min<Index>(t, n));
  std::vector<std::thread> pool;
  pool.reserve(used);
  for (int k = 0; k < used; ++k) {
    Index b = n * k / used, e = n * (k + 1) / used;
    pool.emplace_back([&fn, b, e, k] { fn(b, e, k); });
  }
  for (auto& th : pool) th.join();
}

inline Index conv_out_dim(Index in, Index k, Index pad) {
  return in + 2 * pad - k + 1;  // stride 1 throughout
}

// Patch matrix for one sample, transposed layout: (Ho*Wo) x (C*kh*kw),
// column-major, so column r=(c*kh+u)*kw+v is contiguous over output
// positions and in-bounds stretches copy straight from the input row.
template <typename S>
void im2col_t(const S* x, Index C, Index H, Index W, Index kh, Index kw,
              Index pad, MatrixX<S>& cols_t) {
  const Index Ho = conv_out_dim(H, kh, pad), Wo = conv_out_dim(W, kw, pad);
  cols_t.resize(Ho * Wo, C * kh * kw);
  for (Index c = 0; c < C; ++c) {
    const S* xc = x + c * H * W;
    for (Index u = 0; u < kh; ++u) {
      for (Index v = 0; v < kw; ++v) {
        S* col = cols_t.data() + ((c * kh + u) * kw + v) * (Ho * Wo);
        for (Index ho = 0; ho < Ho; ++ho) {
          const Index ih = ho + u - pad;
          S* dst = col + ho * Wo;
          if (ih < 0 || ih >= H) {
            std::memset(dst, 0, sizeof(S) * Wo);
            continue;
          }
          const Index wo_lo = std::max<Index>(0, pad - v);
          const Index wo_hi = std::min<Index>(Wo, W + pad - v);
          if (wo_lo > 0) std::memset(dst, 0, sizeof(S) * wo_lo);
          if (wo_hi > wo_lo)
            std::memcpy(dst + wo_lo, xc + ih * W + (wo_lo + v - pad),
                        sizeof(S) * (wo_hi - wo_lo));
          if (wo_hi < Wo) std::memset(dst + wo_hi, 0, sizeof(S) * (Wo - wo_hi));
        }
      }
    }
  }
}

// Scatter-add of a patch matrix back onto an input-shaped block.
template <typename S>
void col2im_add(const MatrixX<S>& cols_t, Index C, Index H, Index W, Index kh,
                Index kw, Index pad, S* gx) {
  const Index Ho = conv_out_dim(H, kh, pad), Wo = conv_out_dim(W, kw, pad);
  for (Index c = 0; c < C; ++c) {
    S* gc = gx + c * H * W;
    for (Index u = 0; u < kh; ++u) {
      for (Index v = 0; v < kw; ++v) {
        const S* col = cols_t.data() + ((c * kh + u) * kw + v) * (Ho * Wo);
        for (Index ho = 0; ho < Ho; ++ho) {
          const Index ih = ho + u - pad;
          if (ih < 0 || ih >= H) continue;
          const Index wo_lo = std::max<Index>(0, pad - v);
          const Index wo_hi = std::min<Index>(Wo, W + pad - v);
          S* dst = gc + ih * W + (wo_lo + v - pad);
          const S* src = col + ho * Wo + wo_lo;
          for (Index i = 0; i < wo_hi - wo_lo; ++i) dst[i] += src[i];
        }
      }
    }
  }
}

// y = x (*) w, stride 1. w is (Co, Ci, kh, kw); y must be preshaped.
template <typename S>
void conv2d_forward(const Tensor<S>& x, const Tensor<S>& w, Index pad,
                    Tensor<S>& y) {
  const Index Ci = x.shape.c, H = x.shape.h, W = x.shape.w;
  const Index Co = w.shape.n, kh = w.shape.h, kw = w.shape.w;
  const Index Ho = y.shape.h, Wo = y.shape.w;
  Eigen::Map<const RowMatrixX<S>> wm(w.ptr(), Co, Ci * kh * kw);
  parallel_chunks(x.shape.n, [&](Index b, Index e, int) {
    MatrixX<S> cols_t;
    for (Index n = b; n < e; ++n) {
      im2col_t(x.sample_ptr(n), Ci, H, W, kh, kw, pad, cols_t);
      Eigen::Map<MatrixX<S>> ym(y.sample_ptr(n), Ho * Wo, Co);
      ym.noalias() = cols_t * wm.transpose();
    }
  });
}

template <typename S>
void conv2d_input_grad(const Tensor<S>& g, const Tensor<S>& w, Index pad,
                       Tensor<S>& gx) {
  const Index Ci = gx.shape.c, H = gx.shape.h, W = gx.shape.w;
  const Index Co = w.shape.n, kh = w.shape.h, kw = w.shape.w;
  const Index Ho = g.shape.h, Wo = g.shape.w;
  Eigen::Map<const RowMatrixX<S>> wm(w.ptr(), Co, Ci * kh * kw);
  gx.data.setZero();
  parallel_chunks(g.shape.n, [&](Index b, Index e, int) {
    MatrixX<S> gcols_t;
    for (Index n = b; n < e; ++n) {
      Eigen::Map<const MatrixX<S>> gm(g.sample_ptr(n), Ho * Wo, Co);
      gcols_t.noalias() = gm * wm;
      col2im_add(gcols_t, Ci, H, W, kh, kw, pad, gx.sample_ptr(n));
    }
  });
}

template <typename S>
void conv2d_weight_grad(const Tensor<S>& x, const Tensor<S>& g, Index pad,
                        Tensor<S>& gw) {
  const Index Ci = x.shape.c, H = x.shape.h, W = x.shape.w;
  const Index Co = gw.shape.n, kh = gw.shape.h, kw = gw.shape.w;
  const Index Ho = g.shape.h, Wo = g.shape.w;
  const int nt = static_cast<int>(std::min<Index>(threads(), x.shape.n));
  std::vector<RowMatrixX<S>> partial(static_cast<size_t>(std::max(nt, 1)));
  parallel_chunks(x.shape.n, [&](Index b, Index e, int tid) {
    RowMatrixX<S>& acc = partial[static_cast<size_t>(tid)];
    acc.setZero(Co, Ci * kh * kw);
    MatrixX<S> cols_t;
    for (Index n = b; n < e; ++n) {
      im2col_t(x.sample_ptr(n), Ci, H, W, kh, kw, pad, cols_t);
      Eigen::Map<const MatrixX<S>> gm(g.sample_ptr(n), Ho * Wo, Co);
      acc.noalias() += gm.transpose() * cols_t;
    }
  });
  Eigen::Map<RowMatrixX<S>> gwm(gw.ptr(), Co, Ci * kh * kw);
  gwm = partial[0];
  for (size_t t = 1; t < partial.size(); ++t)
    if (partial[t].size() > 0) gwm += partial[t];
}

// 2x2 stride-2 average pooling; H and W must be even.
template <typename S>
void avg_pool2(const Tensor<S>& x, Tensor<S>& y) {
  const Index C = x.shape.c, H = x.shape.h, W = x.shape.w;
  for (Index n = 0; n < x.shape.n; ++n) {
    const S* xs = x.sample_ptr(n);
    S* ys = y.sample_ptr(n);
    for (Index c = 0; c < C; ++c) {
      const S* xc = xs + c * H * W;
      S* yc = ys + c * (H / 2) * (W / 2);
      for (Index i = 0; i < H / 2; ++i)
        for (Index j = 0; j < W / 2; ++j) {
          const S* p = xc + 2 * i * W + 2 * j;
          yc[i * (W / 2) + j] =
              static_cast<S>(0.25) * (p[0] + p[1] + p[W] + p[W + 1]);
        }
    }
  }
}

// Nearest-neighbor 2x upsample.
template <typename S>
void nn_upsample2(const Tensor<S>& x, Tensor<S>& y) {
  const Index C = x.shape.c, H = x.shape.h, W = x.shape.w;
  for (Index n = 0; n < x.shape.n; ++n) {
    const S* xs = x.sample_ptr(n);
    S* ys = y.sample_ptr(n);
    for (Index c = 0; c < C; ++c) {
      const S* xc = xs + c * H * W;
      S* yc = ys + c * 4 * H * W;
      for (Index i = 0; i < H; ++i)
        for (Index j = 0; j < W; ++j) {
          const S v = xc[i * W + j];
          S* q = yc + 2 * i * (2 * W) + 2 * j;
          q[0] = v;
          q[1] = v;
          q[2 * W] = v;
          q[2 * W + 1] = v;
        }
    }
  }
}

// 2x2 stride-2 max pooling; records the flat input offset of each max.
template <typename S>
void max_pool2(const Tensor<S>& x, Tensor<S>& y, std::vector<int32_t>& idx) {
  const Index C = x.shape.c, H = x.shape.h, W = x.shape.w;
  idx.resize(static_cast<size_t>(y.size()));
  Index o = 0;
  for (Index n = 0; n < x.shape.n; ++n) {
    const Index base = n * x.shape.chw();
    for (Index c = 0; c < C; ++c) {
      const S* xc = x.ptr() + base + c * H * W;
      for (Index i = 0; i < H / 2; ++i)
        for (Index j = 0; j < W / 2; ++j) {
          Index best = 2 * i * W + 2 * j;
          const Index cand[3] = {best + 1, best + W, best + W + 1};
          for (Index k = 0; k < 3; ++k)
            if (xc[cand[k]] > xc[best]) best = cand[k];
          y.data[o] = xc[best];
          idx[static_cast<size_t>(o)] =
              static_cast<int32_t>(base + c * H * W + best);
          ++o;
        }
    }
  }
}

}  // namespace percad::kernels
