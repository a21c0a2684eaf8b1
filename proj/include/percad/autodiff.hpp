#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "percad/kernels.hpp"
#include "percad/tensor.hpp"

// Reverse-mode autodiff over NCHW tensors. Backward functions are written
// in terms of tape ops, so gradients are themselves differentiable graphs;
// gradient() can be applied to its own output (gradient penalties need the
// second order).
namespace percad::ad {

inline bool& tape_enabled() {
  thread_local bool on = true;
  return on;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(tape_enabled()) { tape_enabled() = false; }
  ~NoGradGuard() { tape_enabled() = prev; }
};

inline std::uint64_t next_order() {
  thread_local std::uint64_t k = 0;
  return ++k;
}

template <typename S>
class Var;

template <typename S>
struct Node {
  Tensor<S> value;
  std::vector<Var<S>> parents;
  // Fills out[i] for each parent with wants[i] set; others stay empty.
  std::function<void(const Var<S>&, const std::vector<char>&,
                     std::vector<Var<S>>&)>
      backward;
  bool tracked = false;
  std::uint64_t order = 0;
};

template <typename S>
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor<S> v, bool tracked) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(v);
    n->tracked = tracked && tape_enabled();
    n->order = next_order();
    return Var(std::move(n));
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor<S>& val() const { return n_->value; }
  Tensor<S>& mutable_val() { return n_->value; }
  const Shape& shape() const { return n_->value.shape; }
  bool tracked() const { return n_ && n_->tracked; }
  Node<S>* node() const { return n_.get(); }

  S item() const {
    PERCAD_CHECK(n_->value.size() == 1, "Var::item: tensor is not a scalar");
    return n_->value.data[0];
  }

  explicit Var(std::shared_ptr<Node<S>> n) : n_(std::move(n)) {}

 private:
  std::shared_ptr<Node<S>> n_;
};

template <typename S>
Var<S> constant(Tensor<S> v) {
  return Var<S>::leaf(std::move(v), false);
}

template <typename S, typename Bwd>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> parents, Bwd bwd) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->order = next_order();
  bool tracked = false;
  if (tape_enabled())
    for (const auto& p : parents)
      if (p.tracked()) tracked = true;
  if (tracked) {
    n->tracked = true;
    n->parents = std::move(parents);
    n->backward = std::move(bwd);
  }
  return Var<S>(std::move(n));
}

// ---------------------------------------------------------------------------
// elementwise

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a.val(), b.val(), "add");
  Tensor<S> out(a.shape());
  out.data = a.val().data + b.val().data;
  return make_op<S>(std::move(out), {a, b},
                    [](const Var<S>& g, const std::vector<char>& wants,
                       std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = g;
                      if (wants[1]) out[1] = g;
                    });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
  Tensor<S> out(a.shape());
  out.data = -a.val().data;
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const std::vector<char>& wants,
                       std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = neg(g);
                    });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a.val(), b.val(), "sub");
  Tensor<S> out(a.shape());
  out.data = a.val().data - b.val().data;
  return make_op<S>(std::move(out), {a, b},
                    [](const Var<S>& g, const std::vector<char>& wants,
                       std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = g;
                      if (wants[1]) out[1] = neg(g);
                    });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a.val(), b.val(), "mul");
  Tensor<S> out(a.shape());
  out.data = a.val().data * b.val().data;
  return make_op<S>(std::move(out), {a, b},
                    [a, b](const Var<S>& g, const std::vector<char>& wants,
                           std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = mul(g, b);
                      if (wants[1]) out[1] = mul(g, a);
                    });
}

template <typename S>
Var<S> scale(const Var<S>& a, S k) {
  Tensor<S> out(a.shape());
  out.data = a.val().data * k;
  return make_op<S>(std::move(out), {a},
                    [k](const Var<S>& g, const std::vector<char>& wants,
                        std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = scale(g, k);
                    });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S k) {
  Tensor<S> out(a.shape());
  out.data = a.val().data + k;
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const std::vector<char>& wants,
                       std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = g;
                    });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  Tensor<S> out(a.shape());
  out.data = a.val().data * a.val().data;
  return make_op<S>(std::move(out), {a},
                    [a](const Var<S>& g, const std::vector<char>& wants,
                        std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = scale(mul(g, a), S(2));
                    });
}

template <typename S>
Var<S> abs_v(const Var<S>& a) {
  Tensor<S> out(a.shape()), sgn(a.shape());
  out.data = a.val().data.abs();
  sgn.data = a.val().data.sign();
  auto sgn_c = constant(std::move(sgn));
  return make_op<S>(std::move(out), {a},
                    [sgn_c](const Var<S>& g, const std::vector<char>& wants,
                            std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = mul(g, sgn_c);
                    });
}

template <typename S>
Var<S> sqrt_v(const Var<S>& a) {
  Tensor<S> out(a.shape());
  out.data = a.val().data.sqrt();
  return make_op<S>(std::move(out), {a},
                    [a](const Var<S>& g, const std::vector<char>& wants,
                        std::vector<Var<S>>& out) {
                      if (wants[0])
                        out[0] = scale(mul(g, reciprocal(sqrt_v(a))), S(0.5));
                    });
}

template <typename S>
Var<S> reciprocal(const Var<S>& a) {
  Tensor<S> out(a.shape());
  out.data = a.val().data.inverse();
  return make_op<S>(std::move(out), {a},
                    [a](const Var<S>& g, const std::vector<char>& wants,
                        std::vector<Var<S>>& out) {
                      if (wants[0])
                        out[0] = neg(mul(g, reciprocal(square(a))));
                    });
}

template <typename S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
  Tensor<S> out(a.shape()), mask(a.shape());
  for (Index i = 0; i < a.val().size(); ++i) {
    const S x = a.val().data[i];
    mask.data[i] = x > S(0) ? S(1) : slope;
    out.data[i] = x > S(0) ? x : slope * x;
  }
  auto mask_c = constant(std::move(mask));
  return make_op<S>(std::move(out), {a},
                    [mask_c](const Var<S>& g, const std::vector<char>& wants,
                             std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = mul(g, mask_c);
                    });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  return leaky_relu(a, S(0));
}

// max(a, floor) elementwise; subgradient 1 on ties.
template <typename S>
Var<S> max_scalar(const Var<S>& a, S floor_v) {
  Tensor<S> out(a.shape()), mask(a.shape());
  for (Index i = 0; i < a.val().size(); ++i) {
    const S x = a.val().data[i];
    out.data[i] = x >= floor_v ? x : floor_v;
    mask.data[i] = x >= floor_v ? S(1) : S(0);
  }
  auto mask_c = constant(std::move(mask));
  return make_op<S>(std::move(out), {a},
                    [mask_c](const Var<S>& g, const std::vector<char>& wants,
                             std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = mul(g, mask_c);
                    });
}

// ---------------------------------------------------------------------------
// reductions and broadcasts (each pair is mutually adjoint)

template <typename S>
Var<S> broadcast_full(const Var<S>& a, Shape to);

template <typename S>
Var<S> sum_all(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::scalar(a.val().data.sum());
  Shape from = a.shape();
  return make_op<S>(std::move(out), {a},
                    [from](const Var<S>& g, const std::vector<char>& wants,
                           std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = broadcast_full(g, from);
                    });
}

template <typename S>
Var<S> broadcast_full(const Var<S>& a, Shape to) {
  PERCAD_CHECK(a.val().size() == 1, "broadcast_full: source must be scalar");
  Tensor<S> out = Tensor<S>::full(to, a.val().data[0]);
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const std::vector<char>& wants,
                       std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = sum_all(g);
                    });
}

template <typename S>
Var<S> mean_all(const Var<S>& a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.val().size()));
}

template <typename S>
Var<S> broadcast_samples(const Var<S>& a, Shape to);

// (N,C,H,W) -> (N,1,1,1), summing each sample's block.
template <typename S>
Var<S> sum_samples(const Var<S>& a) {
  const Shape s = a.shape();
  Tensor<S> out(Shape{s.n, 1, 1, 1});
  for (Index n = 0; n < s.n; ++n)
    out.data[n] =
        Eigen::Map<const ArrayX<S>>(a.val().sample_ptr(n), s.chw()).sum();
  return make_op<S>(std::move(out), {a},
                    [s](const Var<S>& g, const std::vector<char>& wants,
                        std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = broadcast_samples(g, s);
                    });
}

template <typename S>
Var<S> broadcast_samples(const Var<S>& a, Shape to) {
  PERCAD_CHECK(a.shape().n == to.n && a.shape().chw() == 1,
               "broadcast_samples: source must be (N,1,1,1)");
  Tensor<S> out(to);
  for (Index n = 0; n < to.n; ++n)
    Eigen::Map<ArrayX<S>>(out.sample_ptr(n), to.chw())
        .setConstant(a.val().data[n]);
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const std::vector<char>& wants,
                       std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = sum_samples(g);
                    });
}

template <typename S>
Var<S> mean_samples(const Var<S>& a) {
  return scale(sum_samples(a), S(1) / static_cast<S>(a.shape().chw()));
}

template <typename S>
Var<S> broadcast_batch(const Var<S>& a, Index n);

// (N,C,H,W) -> (1,C,H,W), summing over the batch.
template <typename S>
Var<S> sum_batch(const Var<S>& a) {
  const Shape s = a.shape();
  Tensor<S> out(Shape{1, s.c, s.h, s.w});
  out.data.setZero();
  Eigen::Map<ArrayX<S>> acc(out.ptr(), s.chw());
  for (Index n = 0; n < s.n; ++n)
    acc += Eigen::Map<const ArrayX<S>>(a.val().sample_ptr(n), s.chw());
  const Index batch = s.n;
  return make_op<S>(std::move(out), {a},
                    [batch](const Var<S>& g, const std::vector<char>& wants,
                            std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = broadcast_batch(g, batch);
                    });
}

template <typename S>
Var<S> broadcast_batch(const Var<S>& a, Index n) {
  PERCAD_CHECK(a.shape().n == 1, "broadcast_batch: source must have N=1");
  Shape to = a.shape();
  to.n = n;
  Tensor<S> out(to);
  for (Index i = 0; i < n; ++i)
    Eigen::Map<ArrayX<S>>(out.sample_ptr(i), to.chw()) =
        Eigen::Map<const ArrayX<S>>(a.val().ptr(), to.chw());
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const std::vector<char>& wants,
                       std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = sum_batch(g);
                    });
}

template <typename S>
Var<S> broadcast_channels(const Var<S>& a, Shape to);

// (N,C,H,W) -> (1,C,1,1), summing over batch and spatial positions.
template <typename S>
Var<S> sum_to_channels(const Var<S>& a) {
  const Shape s = a.shape();
  Tensor<S> out(Shape{1, s.c, 1, 1});
  out.data.setZero();
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      out.data[c] += Eigen::Map<const ArrayX<S>>(
                         a.val().ptr() + (n * s.c + c) * s.hw(), s.hw())
                         .sum();
  return make_op<S>(std::move(out), {a},
                    [s](const Var<S>& g, const std::vector<char>& wants,
                        std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = broadcast_channels(g, s);
                    });
}

template <typename S>
Var<S> broadcast_channels(const Var<S>& a, Shape to) {
  PERCAD_CHECK(a.shape().n == 1 && a.shape().c == to.c && a.shape().hw() == 1,
               "broadcast_channels: source must be (1,C,1,1)");
  Tensor<S> out(to);
  for (Index n = 0; n < to.n; ++n)
    for (Index c = 0; c < to.c; ++c)
      Eigen::Map<ArrayX<S>>(out.ptr() + (n * to.c + c) * to.hw(), to.hw())
          .setConstant(a.val().data[c]);
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const std::vector<char>& wants,
                       std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = sum_to_channels(g);
                    });
}

// x * scale[c] + shift[c] with constant per-channel coefficients.
template <typename S>
Var<S> channel_affine(const Var<S>& a, ArrayX<S> ch_scale, ArrayX<S> ch_shift) {
  const Shape s = a.shape();
  PERCAD_CHECK(ch_scale.size() == s.c && ch_shift.size() == s.c,
               "channel_affine: coefficient length mismatch");
  Tensor<S> out(s);
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c) {
      const Index off = (n * s.c + c) * s.hw();
      Eigen::Map<ArrayX<S>>(out.ptr() + off, s.hw()) =
          Eigen::Map<const ArrayX<S>>(a.val().ptr() + off, s.hw()) *
              ch_scale[c] +
          ch_shift[c];
    }
  return make_op<S>(
      std::move(out), {a},
      [ch_scale](const Var<S>& g, const std::vector<char>& wants,
                 std::vector<Var<S>>& out) {
        if (wants[0])
          out[0] = channel_affine(g, ch_scale,
                                  ArrayX<S>::Zero(ch_scale.size()).eval());
      });
}

// ---------------------------------------------------------------------------
// structure

template <typename S>
Var<S> reshape_v(const Var<S>& a, Shape to) {
  PERCAD_CHECK(a.val().size() == to.size(),
               "reshape: size mismatch " + a.shape().str() + " -> " + to.str());
  Tensor<S> out(to);
  out.data = a.val().data;
  Shape from = a.shape();
  return make_op<S>(std::move(out), {a},
                    [from](const Var<S>& g, const std::vector<char>& wants,
                           std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = reshape_v(g, from);
                    });
}

template <typename S>
Var<S> slice_c(const Var<S>& a, Index c0, Index cn);

template <typename S>
Var<S> zero_embed_c(const Var<S>& a, Index c0, Index c_total);

template <typename S>
Var<S> concat_c(const Var<S>& a, const Var<S>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  PERCAD_CHECK(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w,
               "concat_c: incompatible shapes");
  Shape to{sa.n, sa.c + sb.c, sa.h, sa.w};
  Tensor<S> out(to);
  for (Index n = 0; n < to.n; ++n) {
    std::memcpy(out.sample_ptr(n), a.val().sample_ptr(n),
                sizeof(S) * sa.chw());
    std::memcpy(out.sample_ptr(n) + sa.chw(), b.val().sample_ptr(n),
                sizeof(S) * sb.chw());
  }
  const Index ca = sa.c, cb = sb.c;
  return make_op<S>(std::move(out), {a, b},
                    [ca, cb](const Var<S>& g, const std::vector<char>& wants,
                             std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = slice_c(g, 0, ca);
                      if (wants[1]) out[1] = slice_c(g, ca, cb);
                    });
}

template <typename S>
Var<S> slice_c(const Var<S>& a, Index c0, Index cn) {
  const Shape s = a.shape();
  PERCAD_CHECK(c0 >= 0 && c0 + cn <= s.c, "slice_c: channel range");
  Tensor<S> out(Shape{s.n, cn, s.h, s.w});
  for (Index n = 0; n < s.n; ++n)
    std::memcpy(out.sample_ptr(n), a.val().sample_ptr(n) + c0 * s.hw(),
                sizeof(S) * cn * s.hw());
  const Index c_total = s.c;
  return make_op<S>(std::move(out), {a},
                    [c0, c_total](const Var<S>& g,
                                  const std::vector<char>& wants,
                                  std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = zero_embed_c(g, c0, c_total);
                    });
}

template <typename S>
Var<S> zero_embed_c(const Var<S>& a, Index c0, Index c_total) {
  const Shape s = a.shape();
  Tensor<S> out = Tensor<S>::zeros(Shape{s.n, c_total, s.h, s.w});
  for (Index n = 0; n < s.n; ++n)
    std::memcpy(out.sample_ptr(n) + c0 * s.hw(), a.val().sample_ptr(n),
                sizeof(S) * s.chw());
  const Index cn = s.c;
  return make_op<S>(std::move(out), {a},
                    [c0, cn](const Var<S>& g, const std::vector<char>& wants,
                             std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = slice_c(g, c0, cn);
                    });
}

// ---------------------------------------------------------------------------
// linear algebra: tensors viewed as row-major (n x c) matrices

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b, bool ta, bool tb) {
  const Shape sa = a.shape(), sb = b.shape();
  PERCAD_CHECK(sa.hw() == 1 && sb.hw() == 1, "matmul: operands must be 2-D");
  const Index m = ta ? sa.c : sa.n, ka = ta ? sa.n : sa.c;
  const Index kb = tb ? sb.c : sb.n, p = tb ? sb.n : sb.c;
  PERCAD_CHECK(ka == kb, "matmul: inner dimension mismatch");
  Tensor<S> out(Shape{m, p, 1, 1});
  Eigen::Map<RowMatrixX<S>> om(out.ptr(), m, p);
  Eigen::Map<const RowMatrixX<S>> am(a.val().ptr(), sa.n, sa.c);
  Eigen::Map<const RowMatrixX<S>> bm(b.val().ptr(), sb.n, sb.c);
  if (!ta && !tb)
    om.noalias() = am * bm;
  else if (!ta && tb)
    om.noalias() = am * bm.transpose();
  else if (ta && !tb)
    om.noalias() = am.transpose() * bm;
  else
    om.noalias() = am.transpose() * bm.transpose();
  return make_op<S>(std::move(out), {a, b},
                    [a, b, ta, tb](const Var<S>& g,
                                   const std::vector<char>& wants,
                                   std::vector<Var<S>>& out) {
                      if (wants[0])
                        out[0] = ta ? matmul(b, g, tb, true)
                                    : matmul(g, b, false, !tb);
                      if (wants[1])
                        out[1] = tb ? matmul(g, a, true, ta)
                                    : matmul(a, g, !ta, false);
                    });
}

// ---------------------------------------------------------------------------
// convolution family (stride 1; the three ops are closed under adjoints)

template <typename S>
Var<S> conv2d_igrad(const Var<S>& g, const Var<S>& w, Index pad, Shape x_shape);
template <typename S>
Var<S> conv2d_wgrad(const Var<S>& x, const Var<S>& g, Index pad, Shape w_shape);

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, Index pad) {
  const Shape sx = x.shape(), sw = w.shape();
  PERCAD_CHECK(sx.c == sw.c, "conv2d: channel mismatch " + sx.str() + " vs " +
                                 sw.str());
  Shape sy{sx.n, sw.n, kernels::conv_out_dim(sx.h, sw.h, pad),
           kernels::conv_out_dim(sx.w, sw.w, pad)};
  PERCAD_CHECK(sy.h >= 1 && sy.w >= 1, "conv2d: kernel larger than input");
  Tensor<S> out(sy);
  kernels::conv2d_forward(x.val(), w.val(), pad, out);
  return make_op<S>(std::move(out), {x, w},
                    [x, w, pad, sx, sw](const Var<S>& g,
                                        const std::vector<char>& wants,
                                        std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = conv2d_igrad(g, w, pad, sx);
                      if (wants[1]) out[1] = conv2d_wgrad(x, g, pad, sw);
                    });
}

template <typename S>
Var<S> conv2d_igrad(const Var<S>& g, const Var<S>& w, Index pad,
                    Shape x_shape) {
  Tensor<S> out(x_shape);
  kernels::conv2d_input_grad(g.val(), w.val(), pad, out);
  const Shape sw = w.shape();
  return make_op<S>(std::move(out), {g, w},
                    [g, w, pad, sw](const Var<S>& h,
                                    const std::vector<char>& wants,
                                    std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = conv2d(h, w, pad);
                      if (wants[1]) out[1] = conv2d_wgrad(h, g, pad, sw);
                    });
}

template <typename S>
Var<S> conv2d_wgrad(const Var<S>& x, const Var<S>& g, Index pad,
                    Shape w_shape) {
  Tensor<S> out(w_shape);
  kernels::conv2d_weight_grad(x.val(), g.val(), pad, out);
  const Shape sx = x.shape();
  return make_op<S>(std::move(out), {x, g},
                    [x, g, pad, sx](const Var<S>& q,
                                    const std::vector<char>& wants,
                                    std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = conv2d_igrad(g, q, pad, sx);
                      if (wants[1]) out[1] = conv2d(x, q, pad);
                    });
}

// ---------------------------------------------------------------------------
// resolution ops

template <typename S>
Var<S> nn_up2(const Var<S>& a);

template <typename S>
Var<S> avg_pool2(const Var<S>& a) {
  const Shape s = a.shape();
  PERCAD_CHECK(s.h % 2 == 0 && s.w % 2 == 0, "avg_pool2: odd spatial size");
  Tensor<S> out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  kernels::avg_pool2(a.val(), out);
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const std::vector<char>& wants,
                       std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = scale(nn_up2(g), S(0.25));
                    });
}

template <typename S>
Var<S> nn_up2(const Var<S>& a) {
  const Shape s = a.shape();
  Tensor<S> out(Shape{s.n, s.c, s.h * 2, s.w * 2});
  kernels::nn_upsample2(a.val(), out);
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const std::vector<char>& wants,
                       std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = scale(avg_pool2(g), S(4));
                    });
}

template <typename S>
Var<S> unpool_idx(const Var<S>& g, std::shared_ptr<std::vector<int32_t>> idx,
                  Shape x_shape);
template <typename S>
Var<S> gather_idx(const Var<S>& x, std::shared_ptr<std::vector<int32_t>> idx,
                  Shape y_shape);

template <typename S>
Var<S> max_pool2(const Var<S>& a) {
  const Shape s = a.shape();
  PERCAD_CHECK(s.h % 2 == 0 && s.w % 2 == 0, "max_pool2: odd spatial size");
  Tensor<S> out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  auto idx = std::make_shared<std::vector<int32_t>>();
  kernels::max_pool2(a.val(), out, *idx);
  return make_op<S>(std::move(out), {a},
                    [idx, s](const Var<S>& g, const std::vector<char>& wants,
                             std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = unpool_idx(g, idx, s);
                    });
}

template <typename S>
Var<S> unpool_idx(const Var<S>& g, std::shared_ptr<std::vector<int32_t>> idx,
                  Shape x_shape) {
  Tensor<S> out = Tensor<S>::zeros(x_shape);
  for (size_t i = 0; i < idx->size(); ++i)
    out.data[(*idx)[i]] = g.val().data[static_cast<Index>(i)];
  const Shape gs = g.shape();
  return make_op<S>(std::move(out), {g},
                    [idx, gs](const Var<S>& h, const std::vector<char>& wants,
                              std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = gather_idx(h, idx, gs);
                    });
}

template <typename S>
Var<S> gather_idx(const Var<S>& x, std::shared_ptr<std::vector<int32_t>> idx,
                  Shape y_shape) {
  Tensor<S> out(y_shape);
  for (size_t i = 0; i < idx->size(); ++i)
    out.data[static_cast<Index>(i)] = x.val().data[(*idx)[i]];
  const Shape xs = x.shape();
  return make_op<S>(std::move(out), {x},
                    [idx, xs](const Var<S>& h, const std::vector<char>& wants,
                              std::vector<Var<S>>& out) {
                      if (wants[0]) out[0] = unpool_idx(h, idx, xs);
                    });
}

// ---------------------------------------------------------------------------
// gradient

// Cotangents of `root` with respect to each entry of `wrt`. The returned
// Vars are graph-connected, so a second gradient() through them yields
// second-order derivatives. Zero-valued constants are returned for wrt
// entries the root does not depend on.
template <typename S>
std::vector<Var<S>> gradient(const Var<S>& root,
                             const std::vector<Var<S>>& wrt,
                             Var<S> seed = {}) {
  if (!seed.defined()) {
    PERCAD_CHECK(root.val().size() == 1,
                 "gradient: non-scalar root requires an explicit seed");
    seed = constant(Tensor<S>::scalar(S(1)));
  }
  std::vector<Var<S>> result(wrt.size());
  auto zero_of = [&](size_t i) {
    return constant(Tensor<S>::zeros(wrt[i].shape()));
  };

  std::unordered_map<const Node<S>*, char> needed;
  for (const auto& v : wrt) needed[v.node()] = 1;

  // needed(node): some wrt node is reachable through tracked parents.
  {
    std::vector<Node<S>*> stack{root.node()};
    std::unordered_map<const Node<S>*, char> state;  // 1=open, 2=done
    while (!stack.empty()) {
      Node<S>* n = stack.back();
      auto it = needed.find(n);
      if (it != needed.end() && state[n] == 2) {
        stack.pop_back();
        continue;
      }
      if (state[n] == 0) {
        state[n] = 1;
        for (auto& p : n->parents)
          if (p.tracked() && state[p.node()] == 0)
            stack.push_back(p.node());
        continue;
      }
      if (state[n] == 1) {
        state[n] = 2;
        if (needed.find(n) == needed.end()) {
          char any = 0;
          for (auto& p : n->parents)
            if (p.tracked() && needed.count(p.node())) any = 1;
          if (any) needed[n] = 1;
        }
      }
      stack.pop_back();
    }
  }

  if (!root.tracked() || !needed.count(root.node())) {
    for (size_t i = 0; i < wrt.size(); ++i) result[i] = zero_of(i);
    return result;
  }

  // Collect the needed subgraph and process in reverse creation order;
  // creation order is a topological order of the tape.
  std::vector<Node<S>*> order;
  {
    std::unordered_map<const Node<S>*, char> seen;
    std::vector<Node<S>*> stack{root.node()};
    seen[root.node()] = 1;
    while (!stack.empty()) {
      Node<S>* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (auto& p : n->parents) {
        Node<S>* pn = p.node();
        if (p.tracked() && needed.count(pn) && !seen.count(pn)) {
          seen[pn] = 1;
          stack.push_back(pn);
        }
      }
    }
    std::sort(order.begin(), order.end(),
              [](const Node<S>* a, const Node<S>* b) {
                return a->order > b->order;
              });
  }

  std::unordered_map<const Node<S>*, Var<S>> cot;
  cot[root.node()] = seed;
  std::vector<char> wants;
  std::vector<Var<S>> pgrads;
  for (Node<S>* n : order) {
    auto it = cot.find(n);
    if (it == cot.end()) continue;
    const Var<S> g = it->second;
    if (n->parents.empty() || !n->backward) continue;
    wants.assign(n->parents.size(), 0);
    bool any = false;
    for (size_t i = 0; i < n->parents.size(); ++i) {
      const auto& p = n->parents[i];
      if (p.tracked() && needed.count(p.node())) {
        wants[i] = 1;
        any = true;
      }
    }
    if (!any) continue;
    pgrads.assign(n->parents.size(), Var<S>{});
    n->backward(g, wants, pgrads);
    for (size_t i = 0; i < n->parents.size(); ++i) {
      if (!wants[i] || !pgrads[i].defined()) continue;
      const Node<S>* pn = n->parents[i].node();
      auto pit = cot.find(pn);
      if (pit == cot.end())
        cot.emplace(pn, pgrads[i]);
      else
        pit->second = add(pit->second, pgrads[i]);
    }
  }

  for (size_t i = 0; i < wrt.size(); ++i) {
    auto it = cot.find(wrt[i].node());
    result[i] = it == cot.end() ? zero_of(i) : it->second;
  }
  return result;
}

}  // namespace percad::ad
