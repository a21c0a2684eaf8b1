#pragma once

#include <vector>

#include "percad/backbone.hpp"

// Similarity metrics between images / feature maps. rel_perc_l1 is
// asymmetric: the FIRST argument is the real/reference image, whose
// standardized feature magnitude forms the denominator. Swapping the
// arguments silently changes the value.
namespace percad::metrics {

using ad::Var;
using backbone::FilterStats;

enum class MetricKind { mse, pixel_l1, perceptual, perc_l1, rel_perc_l1 };

inline const char* to_string(MetricKind k) {
  switch (k) {
    case MetricKind::mse: return "mse";
    case MetricKind::pixel_l1: return "pixel_l1";
    case MetricKind::perceptual: return "perceptual";
    case MetricKind::perc_l1: return "perc_l1";
    case MetricKind::rel_perc_l1: return "rel_perc_l1";
  }
  return "?";
}

inline MetricKind metric_from_string(const std::string& s) {
  for (MetricKind k : {MetricKind::mse, MetricKind::pixel_l1,
                       MetricKind::perceptual, MetricKind::perc_l1,
                       MetricKind::rel_perc_l1})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown metric '" + s +
                    "' (mse, pixel_l1, perceptual, perc_l1, rel_perc_l1)");
}

inline bool needs_stats(MetricKind k) {
  return k == MetricKind::perc_l1 || k == MetricKind::rel_perc_l1;
}
inline bool needs_backbone(MetricKind k) {
  return needs_stats(k) || k == MetricKind::perceptual;
}

template <typename S>
struct MetricValue {
  S value = S(0);
  MetricKind kind = MetricKind::mse;
  bool differentiable = false;
  bool eps_guarded = false;  // rel_perc_l1 denominator hit the floor
};

// Denominator floor for rel_perc_l1 on a C*H*W feature map.
inline double rel_perc_eps(Index chw) { return 1e-8 * static_cast<double>(chw); }

// ---------------------------------------------------------------------------
// batched differentiable cores; inputs are feature maps (N,C,H,W), outputs
// per-sample values (N,1,1,1)

template <typename S>
Var<S> perceptual_batch(const Var<S>& fx, const Var<S>& fy) {
  check_same_shape(fx.val(), fy.val(), "perceptual_loss");
  const S inv = S(1) / static_cast<S>(fx.shape().chw());
  return ad::scale(ad::sum_samples(ad::square(ad::sub(fx, fy))), inv);
}

template <typename S>
Var<S> standardize(const Var<S>& f, const FilterStats& st) {
  PERCAD_CHECK(f.shape().c == st.channels(),
               "FilterStats channel count does not match features");
  ArrayX<S> cs(st.channels()), ct(st.channels());
  for (Index c = 0; c < st.channels(); ++c) {
    cs[c] = static_cast<S>(1.0 / st.sigma[c]);
    ct[c] = static_cast<S>(-st.mu[c] / st.sigma[c]);
  }
  return ad::channel_affine(f, cs, ct);
}

template <typename S>
Var<S> perc_l1_batch(const Var<S>& fx, const Var<S>& fy,
                     const FilterStats& st) {
  check_same_shape(fx.val(), fy.val(), "perc_l1");
  auto nx = standardize(fx, st), ny = standardize(fy, st);
  const S inv = S(1) / static_cast<S>(fx.shape().chw());
  return ad::scale(ad::sum_samples(ad::abs_v(ad::sub(nx, ny))), inv);
}

// ||nx - ny||_1 / max(||nx||_1, eps) per sample; fx is the reference.
template <typename S>
Var<S> rel_perc_l1_batch(const Var<S>& fx, const Var<S>& fy,
                         const FilterStats& st,
                         bool* eps_guarded = nullptr) {
  check_same_shape(fx.val(), fy.val(), "rel_perc_l1");
  auto nx = standardize(fx, st), ny = standardize(fy, st);
  auto num = ad::sum_samples(ad::abs_v(ad::sub(nx, ny)));
  auto den = ad::sum_samples(ad::abs_v(nx));
  const S eps = static_cast<S>(rel_perc_eps(fx.shape().chw()));
  if (eps_guarded) {
    *eps_guarded = false;
    for (Index n = 0; n < den.shape().n; ++n)
      if (den.val().data[n] < eps) *eps_guarded = true;
  }
  return ad::mul(num, ad::reciprocal(ad::max_scalar(den, eps)));
}

template <typename S>
Var<S> pixel_mse_batch(const Var<S>& x, const Var<S>& y) {
  check_same_shape(x.val(), y.val(), "pixel mse");
  const S inv = S(1) / static_cast<S>(x.shape().chw());
  return ad::scale(ad::sum_samples(ad::square(ad::sub(x, y))), inv);
}

template <typename S>
Var<S> pixel_l1_batch(const Var<S>& x, const Var<S>& y) {
  check_same_shape(x.val(), y.val(), "pixel l1");
  const S inv = S(1) / static_cast<S>(x.shape().chw());
  return ad::scale(ad::sum_samples(ad::abs_v(ad::sub(x, y))), inv);
}

// ---------------------------------------------------------------------------
// single-pair convenience API on plain tensors

template <typename S>
void check_finite_pair(const Tensor<S>& a, const Tensor<S>& b,
                       const char* where) {
  if (!a.all_finite() || !b.all_finite())
    throw NumericsError(std::string(where) + ": non-finite input");
}

template <typename S>
MetricValue<S> perceptual_loss(const Tensor<S>& fx, const Tensor<S>& fy) {
  check_finite_pair(fx, fy, "perceptual_loss");
  ad::NoGradGuard ng;
  auto v = ad::mean_all(
      perceptual_batch(ad::constant(fx), ad::constant(fy)));
  return {v.item(), MetricKind::perceptual, false, false};
}

template <typename S>
MetricValue<S> rel_perc_l1(const Tensor<S>& fx, const Tensor<S>& fy,
                           const FilterStats& st) {
  check_finite_pair(fx, fy, "rel_perc_l1");
  ad::NoGradGuard ng;
  bool guarded = false;
  auto v = ad::mean_all(rel_perc_l1_batch(ad::constant(fx), ad::constant(fy),
                                          st, &guarded));
  return {v.item(), MetricKind::rel_perc_l1, false, guarded};
}

template <typename S>
MetricValue<S> perc_l1(const Tensor<S>& fx, const Tensor<S>& fy,
                       const FilterStats& st) {
  check_finite_pair(fx, fy, "perc_l1");
  ad::NoGradGuard ng;
  auto v =
      ad::mean_all(perc_l1_batch(ad::constant(fx), ad::constant(fy), st));
  return {v.item(), MetricKind::perc_l1, false, false};
}

template <typename S>
MetricValue<S> pixel_metric(const Tensor<S>& x, const Tensor<S>& y,
                            MetricKind kind) {
  PERCAD_CHECK(kind == MetricKind::mse || kind == MetricKind::pixel_l1,
               "pixel_metric: kind must be mse or pixel_l1");
  check_finite_pair(x, y, "pixel_metric");
  check_same_shape(x, y, "pixel_metric");
  ad::NoGradGuard ng;
  auto xv = ad::constant(x), yv = ad::constant(y);
  auto v = kind == MetricKind::mse
               ? ad::mean_all(pixel_mse_batch(xv, yv))
               : ad::mean_all(pixel_l1_batch(xv, yv));
  return {v.item(), kind, false, false};
}

// Dispatch on kind for one x/y image pair (not features). Feature-based
// kinds run the backbone themselves.
template <typename S>
MetricValue<S> image_metric(const Tensor<S>& x, const Tensor<S>& y,
                            MetricKind kind,
                            const backbone::Backbone<S>* bb,
                            const FilterStats* st) {
  if (kind == MetricKind::mse || kind == MetricKind::pixel_l1)
    return pixel_metric(x, y, kind);
  PERCAD_CHECK(bb != nullptr, "metric requires a backbone");
  const auto fx = bb->features_nograd(x);
  const auto fy = bb->features_nograd(y);
  if (kind == MetricKind::perceptual) return perceptual_loss(fx, fy);
  PERCAD_CHECK(st != nullptr, "metric requires filter stats");
  return kind == MetricKind::perc_l1 ? perc_l1(fx, fy, *st)
                                     : rel_perc_l1(fx, fy, *st);
}

// ---------------------------------------------------------------------------
// contrast sweep

// x_t = (1-t)*x: t=0 is the original, t=1 uniform mid-grey (pixel 0 in
// [-1,1] space), linear in between.
template <typename S>
Tensor<S> reduce_contrast(const Tensor<S>& x, double t) {
  PERCAD_CHECK_ARG(t >= 0.0 && t <= 1.0,
                   "contrast level t must lie in [0,1], got " +
                       std::to_string(t));
  Tensor<S> out(x.shape);
  out.data = x.data * static_cast<S>(1.0 - t);
  return out;
}

struct ContrastRow {
  double t;
  MetricKind kind;
  double value;
};

struct ContrastReport {
  std::vector<ContrastRow> rows;
  std::vector<double> levels;
  // mean |f(x_t)| of the reference image per level: raw features carry the
  // contrast dependence; the standardized variant is reported alongside
  std::vector<double> mean_abs_feature;
  std::vector<double> mean_abs_feature_std;
};

template <typename S>
ContrastReport contrast_sweep(const Tensor<S>& x, const Tensor<S>& y,
                              const std::vector<double>& levels,
                              const std::vector<MetricKind>& kinds,
                              const backbone::Backbone<S>& bb,
                              const FilterStats& st) {
  check_same_shape(x, y, "contrast_sweep");
  ContrastReport rep;
  rep.levels = levels;
  for (double t : levels) {
    const auto xt = reduce_contrast(x, t);
    const auto yt = reduce_contrast(y, t);
    const auto fx = bb.features_nograd(xt);
    const auto fy = bb.features_nograd(yt);
    for (MetricKind k : kinds) {
      MetricValue<S> v;
      switch (k) {
        case MetricKind::mse:
        case MetricKind::pixel_l1:
          v = pixel_metric(xt, yt, k);
          break;
        case MetricKind::perceptual:
          v = perceptual_loss(fx, fy);
          break;
        case MetricKind::perc_l1:
          v = perc_l1(fx, fy, st);
          break;
        case MetricKind::rel_perc_l1:
          v = rel_perc_l1(fx, fy, st);
          break;
      }
      rep.rows.push_back({t, k, static_cast<double>(v.value)});
    }
    ad::NoGradGuard ng;
    auto fxv = ad::constant(fx);
    rep.mean_abs_feature.push_back(
        static_cast<double>(ad::mean_all(ad::abs_v(fxv)).item()));
    auto nx = standardize(fxv, st);
    rep.mean_abs_feature_std.push_back(
        static_cast<double>(ad::mean_all(ad::abs_v(nx)).item()));
  }
  return rep;
}

}  // namespace percad::metrics
