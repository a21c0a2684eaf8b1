#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "percad/autodiff.hpp"
#include "percad/random.hpp"

namespace percad::nn {

using ad::Var;

template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
  Var<S> var;
  bool is_weight = false;  // conv/dense weight matrix, tracked by the policy

  void zero_grad() { grad.data.setZero(); }

  // Rebuilds the tape leaf from the current value; call once per step,
  // before any forward pass that should see updated parameters.
  void refresh() { var = Var<S>::leaf(value, true); }
};

template <typename S>
void he_init(Parameter<S>& p, Index fan_in, double slope, Rng& rng) {
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  rng.fill_normal(p.value, gain / std::sqrt(static_cast<double>(fan_in)));
}

// ---------------------------------------------------------------------------
// layers

template <typename S>
struct Conv {
  Parameter<S> w;  // (Co, Ci, k, k)
  Parameter<S> b;  // (1, Co, 1, 1)
  Index pad = 1;

  static Conv make(const std::string& name, Index ci, Index co, Index k,
                   Index pad, double init_slope, Rng& rng) {
    Conv c;
    c.pad = pad;
    c.w = Parameter<S>{name + ".w", Tensor<S>(Shape{co, ci, k, k}),
                       Tensor<S>::zeros(Shape{co, ci, k, k}), {}, true};
    c.b = Parameter<S>{name + ".b", Tensor<S>::zeros(Shape{1, co, 1, 1}),
                       Tensor<S>::zeros(Shape{1, co, 1, 1}), {}, false};
    he_init(c.w, ci * k * k, init_slope, rng);
    return c;
  }

  void refresh() {
    w.refresh();
    b.refresh();
  }

  Var<S> operator()(const Var<S>& x) const {
    PERCAD_CHECK(w.var.defined(), w.name + ": parameter leaves not refreshed");
    auto y = ad::conv2d(x, w.var, pad);
    return ad::add(y, ad::broadcast_channels(b.var, y.shape()));
  }
};

template <typename S>
struct Dense {
  Parameter<S> w;  // (in, out)
  Parameter<S> b;  // (1, out)

  static Dense make(const std::string& name, Index in, Index out,
                    double init_slope, Rng& rng) {
    Dense d;
    d.w = Parameter<S>{name + ".w", Tensor<S>(Shape{in, out, 1, 1}),
                       Tensor<S>::zeros(Shape{in, out, 1, 1}), {}, true};
    d.b = Parameter<S>{name + ".b", Tensor<S>::zeros(Shape{1, out, 1, 1}),
                       Tensor<S>::zeros(Shape{1, out, 1, 1}), {}, false};
    he_init(d.w, in, init_slope, rng);
    return d;
  }

  void refresh() {
    w.refresh();
    b.refresh();
  }

  Var<S> operator()(const Var<S>& x) const {
    PERCAD_CHECK(w.var.defined(), w.name + ": parameter leaves not refreshed");
    auto y = ad::matmul(x, w.var, false, false);
    return ad::add(y, ad::broadcast_channels(b.var, y.shape()));
  }
};

// Pre-activation residual block: LReLU -> Conv -> LReLU -> Conv, identity
// (or 1x1-projected) skip. lead_act=false gives the conv-act-conv variant.
template <typename S>
struct PreactBlock {
  Conv<S> c1, c2;
  std::optional<Conv<S>> skip;
  S slope = S(0.2);
  bool lead_act = true;

  static PreactBlock make(const std::string& name, Index ci, Index co,
                          double slope, bool lead_act, Rng& rng) {
    PreactBlock blk;
    blk.slope = static_cast<S>(slope);
    blk.lead_act = lead_act;
    blk.c1 = Conv<S>::make(name + ".c1", ci, co, 3, 1, slope, rng);
    blk.c2 = Conv<S>::make(name + ".c2", co, co, 3, 1, slope, rng);
    if (ci != co)
      blk.skip = Conv<S>::make(name + ".skip", ci, co, 1, 0, slope, rng);
    return blk;
  }

  void refresh() {
    c1.refresh();
    c2.refresh();
    if (skip) skip->refresh();
  }

  Var<S> operator()(const Var<S>& x) const {
    Var<S> h = lead_act ? ad::leaky_relu(x, slope) : x;
    h = c2(ad::leaky_relu(c1(h), slope));
    Var<S> s = skip ? (*skip)(x) : x;
    return ad::add(h, s);
  }
};

// Residual block doubling resolution: LReLU -> Upsample -> Conv -> LReLU ->
// Conv; skip is Upsample (+ 1x1 conv when channels change).
template <typename S>
struct BlockUp {
  Conv<S> c1, c2;
  std::optional<Conv<S>> skip;
  S slope = S(0.2);

  static BlockUp make(const std::string& name, Index ci, Index co,
                      double slope, Rng& rng) {
    BlockUp blk;
    blk.slope = static_cast<S>(slope);
    blk.c1 = Conv<S>::make(name + ".c1", ci, co, 3, 1, slope, rng);
    blk.c2 = Conv<S>::make(name + ".c2", co, co, 3, 1, slope, rng);
    if (ci != co)
      blk.skip = Conv<S>::make(name + ".skip", ci, co, 1, 0, slope, rng);
    return blk;
  }

  void refresh() {
    c1.refresh();
    c2.refresh();
    if (skip) skip->refresh();
  }

  Var<S> operator()(const Var<S>& x) const {
    Var<S> h = ad::nn_up2(ad::leaky_relu(x, slope));
    h = c2(ad::leaky_relu(c1(h), slope));
    Var<S> s = ad::nn_up2(x);
    if (skip) s = (*skip)(s);
    return ad::add(h, s);
  }
};

// Residual block halving resolution: LReLU -> Conv -> LReLU -> Conv ->
// AvgPool; skip is AvgPool (+ 1x1 conv when channels change).
template <typename S>
struct BlockDown {
  Conv<S> c1, c2;
  std::optional<Conv<S>> skip;
  S slope = S(0.2);

  static BlockDown make(const std::string& name, Index ci, Index co,
                        double slope, Rng& rng) {
    BlockDown blk;
    blk.slope = static_cast<S>(slope);
    blk.c1 = Conv<S>::make(name + ".c1", ci, co, 3, 1, slope, rng);
    blk.c2 = Conv<S>::make(name + ".c2", co, co, 3, 1, slope, rng);
    if (ci != co)
      blk.skip = Conv<S>::make(name + ".skip", ci, co, 1, 0, slope, rng);
    return blk;
  }

  void refresh() {
    c1.refresh();
    c2.refresh();
    if (skip) skip->refresh();
  }

  Var<S> operator()(const Var<S>& x) const {
    Var<S> h = c2(ad::leaky_relu(c1(ad::leaky_relu(x, slope)), slope));
    h = ad::avg_pool2(h);
    Var<S> s = ad::avg_pool2(x);
    if (skip) s = (*skip)(s);
    return ad::add(h, s);
  }
};

// Appends one channel holding the batch-wide mean (over channels and
// positions) of the per-position standard deviation across the batch,
// population convention, broadcast to every sample and position.
template <typename S>
Var<S> minibatch_stddev(const Var<S>& x, S eps = S(1e-8)) {
  const Shape s = x.shape();
  PERCAD_CHECK(s.n >= 1, "minibatch_stddev: empty batch");
  const S inv_n = S(1) / static_cast<S>(s.n);
  auto mu = ad::scale(ad::sum_batch(x), inv_n);
  auto d = ad::sub(x, ad::broadcast_batch(mu, s.n));
  auto var = ad::scale(ad::sum_batch(ad::square(d)), inv_n);
  auto sd = ad::sqrt_v(ad::add_scalar(var, eps));
  auto m = ad::mean_all(sd);
  return ad::concat_c(x, ad::broadcast_full(m, Shape{s.n, 1, s.h, s.w}));
}

// ---------------------------------------------------------------------------
// network = named sequence of layers

template <typename S>
struct LeakyLayer {
  S slope;
};
struct FlattenLayer {};
struct MbStdLayer {};

template <typename S>
using Layer = std::variant<Conv<S>, Dense<S>, PreactBlock<S>, BlockUp<S>,
                           BlockDown<S>, LeakyLayer<S>, FlattenLayer,
                           MbStdLayer>;

template <typename S>
struct Network {
  std::string name;
  std::vector<Layer<S>> layers;
  Shape input_shape;   // single-sample (1,c,h,w)
  Shape output_shape;  // single-sample

  Var<S> forward(const Var<S>& x) const {
    PERCAD_CHECK(x.shape().c == input_shape.c &&
                     x.shape().h == input_shape.h &&
                     x.shape().w == input_shape.w,
                 name + ": input shape " + x.shape().str() +
                     " does not match declared " + input_shape.str());
    Var<S> h = x;
    for (const auto& layer : layers) {
      std::visit(
          [&](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, LeakyLayer<S>>)
              h = ad::leaky_relu(h, l.slope);
            else if constexpr (std::is_same_v<L, FlattenLayer>)
              h = ad::reshape_v(h, Shape{h.shape().n, h.shape().chw(), 1, 1});
            else if constexpr (std::is_same_v<L, MbStdLayer>)
              h = minibatch_stddev(h);
            else
              h = l(h);
          },
          layer);
    }
    return h;
  }

  Tensor<S> forward_nograd(const Tensor<S>& x) const {
    ad::NoGradGuard ng;
    return forward(ad::constant(x)).val();
  }

  std::vector<Parameter<S>*> params() {
    std::vector<Parameter<S>*> out;
    for (auto& layer : layers) {
      std::visit(
          [&](auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, Conv<S>> ||
                          std::is_same_v<L, Dense<S>>) {
              out.push_back(&l.w);
              out.push_back(&l.b);
            } else if constexpr (std::is_same_v<L, PreactBlock<S>> ||
                                 std::is_same_v<L, BlockUp<S>> ||
                                 std::is_same_v<L, BlockDown<S>>) {
              out.push_back(&l.c1.w);
              out.push_back(&l.c1.b);
              out.push_back(&l.c2.w);
              out.push_back(&l.c2.b);
              if (l.skip) {
                out.push_back(&l.skip->w);
                out.push_back(&l.skip->b);
              }
            }
          },
          layer);
    }
    return out;
  }

  void refresh_leaves() {
    for (auto* p : params()) p->refresh();
  }

  void zero_grads() {
    for (auto* p : params()) p->zero_grad();
  }

  Index param_count() {
    Index n = 0;
    for (auto* p : params()) n += p->value.size();
    return n;
  }
};

// Sums cotangent values of `loss` into the grad buffers of `params`,
// mirroring backpropagate-and-accumulate semantics.
template <typename S>
void backward_into(const Var<S>& loss, std::vector<Parameter<S>*> params) {
  std::vector<Var<S>> wrt;
  wrt.reserve(params.size());
  for (auto* p : params) wrt.push_back(p->var);
  auto grads = ad::gradient(loss, wrt);
  for (size_t i = 0; i < params.size(); ++i)
    params[i]->grad.data += grads[i].val().data;
}

}  // namespace percad::nn
