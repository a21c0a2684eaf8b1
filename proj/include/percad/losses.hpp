#pragma once

#include <functional>

#include "percad/metrics.hpp"
#include "percad/models.hpp"

namespace percad::losses {

using ad::Var;

template <typename S>
struct LossBreakdown {
  S l_disc_x = 0, l_disc_z = 0;
  S l_adv_g = 0, l_adv_e = 0, l_rec = 0;
  S gp_x = 0, gp_z = 0;
  S drift_x = 0, drift_z = 0;

  void check_finite() const {
    const struct {
      const char* name;
      S v;
    } parts[] = {{"l_disc_x", l_disc_x}, {"l_disc_z", l_disc_z},
                 {"l_adv_g", l_adv_g},   {"l_adv_e", l_adv_e},
                 {"l_rec", l_rec},       {"gp_x", gp_x},
                 {"gp_z", gp_z},         {"drift_x", drift_x},
                 {"drift_z", drift_z}};
    for (const auto& p : parts)
      if (!std::isfinite(static_cast<double>(p.v)))
        throw NumericsError(std::string("non-finite loss component ") +
                            p.name);
  }
};

// Any scalar-per-sample critic; tests plug in closed-form critics.
template <typename S>
using CriticFn = std::function<Var<S>(const Var<S>&)>;

template <typename S>
struct CriticLossParts {
  Var<S> total;  // base + lambda*gp + drift_w*drift
  S base = 0, gp = 0, drift = 0;
};

// E[D(fake)] - E[D(real)] + lambda*(||grad D(xhat)|| - 1)^2 + drift_w*E[D(real)^2],
// xhat = u*real + (1-u)*fake with one uniform coefficient per sample.
template <typename S>
CriticLossParts<S> critic_loss(const CriticFn<S>& critic,
                               const Tensor<S>& real, const Tensor<S>& fake,
                               S gp_lambda, S drift_w,
                               const Tensor<S>& u_coeffs) {
  check_same_shape(real, fake, "critic_loss");
  const Index n = real.shape.n;
  PERCAD_CHECK(n >= 1, "critic_loss: empty batch");
  PERCAD_CHECK(u_coeffs.shape.n == n && u_coeffs.shape.chw() == 1,
               "critic_loss: interpolation coefficients must be (N,1,1,1)");
  const S inv_n = S(1) / static_cast<S>(n);

  auto d_real = critic(ad::constant(real));
  auto d_fake = critic(ad::constant(fake));
  PERCAD_CHECK(d_real.val().all_finite() && d_fake.val().all_finite(),
               "critic_loss: non-finite critic outputs");
  auto base =
      ad::scale(ad::sub(ad::sum_all(d_fake), ad::sum_all(d_real)), inv_n);

  Tensor<S> mix(real.shape);
  for (Index i = 0; i < n; ++i) {
    const S u = u_coeffs.data[i];
    Eigen::Map<ArrayX<S>>(mix.sample_ptr(i), real.shape.chw()) =
        u * Eigen::Map<const ArrayX<S>>(real.sample_ptr(i), real.shape.chw()) +
        (S(1) - u) *
            Eigen::Map<const ArrayX<S>>(fake.sample_ptr(i), fake.shape.chw());
  }
  auto x_hat = Var<S>::leaf(std::move(mix), true);
  auto d_hat = critic(x_hat);
  auto grad_in = ad::gradient(ad::sum_all(d_hat), {x_hat})[0];
  auto norms = ad::sqrt_v(ad::sum_samples(ad::square(grad_in)));
  auto gp =
      ad::scale(ad::sum_all(ad::square(ad::add_scalar(norms, S(-1)))), inv_n);
  auto drift = ad::scale(ad::sum_all(ad::square(d_real)), inv_n);

  CriticLossParts<S> out;
  out.base = base.item();
  out.gp = gp.item();
  out.drift = drift.item();
  out.total = ad::add(base, ad::add(ad::scale(gp, gp_lambda),
                                    ad::scale(drift, drift_w)));
  return out;
}

template <typename S>
CriticLossParts<S> critic_loss(const CriticFn<S>& critic,
                               const Tensor<S>& real, const Tensor<S>& fake,
                               S gp_lambda, S drift_w, Rng& rng) {
  Tensor<S> u(Shape{real.shape.n, 1, 1, 1});
  rng.fill_uniform(u, 0.0, 1.0);
  return critic_loss(critic, real, fake, gp_lambda, drift_w, u);
}

// E[D(real)] - E[D(fake)]; `fake` stays a graph node so the loss
// backpropagates into whatever produced it (G or E).
template <typename S>
Var<S> adversarial_loss(const CriticFn<S>& critic, const Tensor<S>& real,
                        const Var<S>& fake) {
  const S inv_n = S(1) / static_cast<S>(real.shape.n);
  auto d_real = critic(ad::constant(real));
  auto d_fake = critic(fake);
  return ad::scale(ad::sub(ad::sum_all(d_real), ad::sum_all(d_fake)), inv_n);
}

// Mean over the batch of rel_perc_l1(x, G(E(x))); the reference side f(x)
// is constant, gradients flow through the reconstruction only.
template <typename S>
Var<S> reconstruction_loss(const nn::Network<S>& generator,
                           const nn::Network<S>& encoder,
                           const Tensor<S>& batch,
                           const backbone::Backbone<S>& bb,
                           const backbone::FilterStats& stats) {
  auto x = ad::constant(batch);
  auto recon = generator.forward(encoder.forward(x));
  auto fx = [&] {
    ad::NoGradGuard ng;
    return ad::constant(bb.features_nograd(batch));
  }();
  auto fy = bb.features(recon);
  auto per_sample = metrics::rel_perc_l1_batch(fx, fy, stats);
  return ad::scale(ad::sum_all(per_sample),
                   S(1) / static_cast<S>(batch.shape.n));
}

template <typename S>
CriticFn<S> critic_of(const nn::Network<S>& net) {
  return [&net](const Var<S>& x) { return net.forward(x); };
}

}  // namespace percad::losses
