#pragma once

#include "percad/nn.hpp"

namespace percad::models {

using nn::Network;

// Declarative description of one dataset profile's four networks. The
// base widths reproduce the reference layouts at width_multiplier = 1;
// the multiplier shrinks every hidden width uniformly for desk-scale CPU
// runs (latent and image shapes stay fixed unless overridden).
struct ArchitectureSpec {
  std::string profile;       // mnist32 | cifar32 | lsun64 | celeba64
  Index image_channels = 1;  // {1,3}
  Index image_size = 32;
  Shape latent{1, 32, 1, 1};  // single-sample latent shape
  double width_multiplier = 1.0;
  double leaky_slope = 0.2;

  static ArchitectureSpec for_profile(const std::string& profile,
                                      Index image_channels = 0,
                                      double width_multiplier = 1.0);

  Index scaled(Index base) const {
    return std::max<Index>(2, static_cast<Index>(
                                  std::lround(base * width_multiplier)));
  }

  std::string str() const {
    return profile + " c" + std::to_string(image_channels) + " s" +
           std::to_string(image_size) + " z" + std::to_string(latent.c) + "x" +
           std::to_string(latent.h) + "x" + std::to_string(latent.w) + " w" +
           std::to_string(width_multiplier);
  }
};

template <typename S>
struct ModelBundle {
  ArchitectureSpec spec;
  Network<S> generator;  // z -> image
  Network<S> encoder;    // image -> z
  Network<S> critic_x;   // image -> scalar
  Network<S> critic_z;   // z -> scalar
  std::uint64_t init_seed = 0;

  std::vector<Network<S>*> all() {
    return {&generator, &encoder, &critic_x, &critic_z};
  }
  void refresh_leaves() {
    for (auto* n : all()) n->refresh_leaves();
  }
};

inline ArchitectureSpec ArchitectureSpec::for_profile(
    const std::string& profile, Index image_channels,
    double width_multiplier) {
  ArchitectureSpec s;
  s.profile = profile;
  s.width_multiplier = width_multiplier;
  if (profile == "mnist32") {
    s.image_channels = image_channels ? image_channels : 1;
    s.image_size = 32;
    s.latent = Shape{1, 32, 1, 1};
  } else if (profile == "cifar32") {
    s.image_channels = image_channels ? image_channels : 3;
    s.image_size = 32;
    s.latent = Shape{1, 256, 1, 1};
  } else if (profile == "lsun64") {
    s.image_channels = image_channels ? image_channels : 3;
    s.image_size = 64;
    s.latent = Shape{1, 32, 4, 4};
  } else if (profile == "celeba64") {
    s.image_channels = image_channels ? image_channels : 3;
    s.image_size = 64;
    s.latent = Shape{1, 64, 1, 1};
  } else {
    throw ConfigError("unknown architecture profile '" + profile +
                      "' (mnist32, cifar32, lsun64, celeba64)");
  }
  PERCAD_CHECK_ARG(s.image_channels == 1 || s.image_channels == 3,
                   "image_channels must be 1 or 3");
  return s;
}

// ---------------------------------------------------------------------------
// builders

namespace detail {

template <typename S>
void conv(Network<S>& net, const std::string& n, Index ci, Index co, Index k,
          Index pad, double slope, Rng& rng) {
  net.layers.push_back(nn::Conv<S>::make(net.name + "." + n, ci, co, k, pad,
                                         slope, rng));
}
template <typename S>
void dense(Network<S>& net, const std::string& n, Index in, Index out,
           double slope, Rng& rng) {
  net.layers.push_back(nn::Dense<S>::make(net.name + "." + n, in, out, slope,
                                          rng));
}
template <typename S>
void leaky(Network<S>& net, double slope) {
  net.layers.push_back(nn::LeakyLayer<S>{static_cast<S>(slope)});
}

}  // namespace detail

template <typename S>
Network<S> build_generator(const ArchitectureSpec& a, Rng& rng) {
  using namespace detail;
  Network<S> g;
  g.name = "g";
  g.input_shape = a.latent;
  g.output_shape = Shape{1, a.image_channels, a.image_size, a.image_size};
  const double sl = a.leaky_slope;

  if (a.profile == "lsun64") {
    const Index f = a.scaled(64);
    g.layers.push_back(nn::PreactBlock<S>::make(g.name + ".blk0", a.latent.c,
                                                f, sl, false, rng));
    for (int i = 1; i <= 4; ++i)
      g.layers.push_back(
          nn::BlockUp<S>::make(g.name + ".up" + std::to_string(i), f, f, sl,
                               rng));
    g.layers.push_back(nn::PreactBlock<S>::make(g.name + ".blk5", f, f, sl,
                                                true, rng));
    leaky(g, sl);
    conv(g, "out", f, a.image_channels, 1, 0, sl, rng);
    return g;
  }

  Index widths[3];
  Index f0;
  if (a.profile == "mnist32") {
    f0 = a.scaled(32);
    widths[0] = widths[1] = widths[2] = f0;
  } else if (a.profile == "cifar32") {
    f0 = a.scaled(256);
    widths[0] = a.scaled(256);
    widths[1] = a.scaled(128);
    widths[2] = a.scaled(64);
  } else {  // celeba64
    f0 = a.scaled(64);
    widths[0] = widths[1] = widths[2] = f0;
  }
  conv(g, "in", a.latent.c, f0, 4, 3, sl, rng);  // 1x1 -> 4x4
  Index prev = f0;
  int ups = a.image_size == 64 ? 4 : 3;
  for (int i = 0; i < ups; ++i) {
    const Index w = widths[std::min(i, 2)];
    g.layers.push_back(nn::BlockUp<S>::make(
        g.name + ".up" + std::to_string(i + 1), prev, w, sl, rng));
    prev = w;
  }
  g.layers.push_back(
      nn::PreactBlock<S>::make(g.name + ".blk", prev, prev, sl, true, rng));
  leaky(g, sl);
  conv(g, "out", prev, a.image_channels, 1, 0, sl, rng);
  return g;
}

template <typename S>
Network<S> build_encoder(const ArchitectureSpec& a, Rng& rng) {
  using namespace detail;
  Network<S> e;
  e.name = "e";
  e.input_shape = Shape{1, a.image_channels, a.image_size, a.image_size};
  e.output_shape = a.latent;
  const double sl = a.leaky_slope;

  if (a.profile == "lsun64") {
    const Index f = a.scaled(64);
    conv(e, "in", a.image_channels, f, 3, 1, sl, rng);
    for (int i = 1; i <= 4; ++i)
      e.layers.push_back(nn::BlockDown<S>::make(
          e.name + ".down" + std::to_string(i), f, f, sl, rng));
    e.layers.push_back(
        nn::PreactBlock<S>::make(e.name + ".blk", f, f, sl, true, rng));
    leaky(e, sl);
    conv(e, "out", f, a.latent.c, 1, 0, sl, rng);  // 4x4 spatial latent
    return e;
  }

  Index widths[4];
  if (a.profile == "mnist32") {
    const Index f = a.scaled(32);
    widths[0] = widths[1] = widths[2] = widths[3] = f;
  } else if (a.profile == "cifar32") {
    widths[0] = a.scaled(64);
    widths[1] = a.scaled(64);
    widths[2] = a.scaled(128);
    widths[3] = a.scaled(256);
  } else {  // celeba64
    const Index f = a.scaled(64);
    widths[0] = widths[1] = widths[2] = widths[3] = f;
  }
  conv(e, "in", a.image_channels, widths[0], 3, 1, sl, rng);
  const int downs = a.image_size == 64 ? 4 : 3;
  Index prev = widths[0];
  for (int i = 0; i < downs; ++i) {
    const Index w = widths[std::min(i + 1, 3)];
    e.layers.push_back(nn::BlockDown<S>::make(
        e.name + ".down" + std::to_string(i + 1), prev, w, sl, rng));
    prev = w;
  }
  leaky(e, sl);
  conv(e, "mid", prev, prev, 4, 0, sl, rng);  // 4x4 -> 1x1
  leaky(e, sl);
  conv(e, "out", prev, a.latent.c, 1, 0, sl, rng);
  return e;
}

template <typename S>
Network<S> build_critic_x(const ArchitectureSpec& a, Rng& rng) {
  using namespace detail;
  Network<S> d;
  d.name = "dx";
  d.input_shape = Shape{1, a.image_channels, a.image_size, a.image_size};
  d.output_shape = Shape{1, 1, 1, 1};
  const double sl = a.leaky_slope;

  Index widths[4];
  if (a.profile == "mnist32") {
    const Index f = a.scaled(32);
    widths[0] = widths[1] = widths[2] = widths[3] = f;
  } else if (a.profile == "cifar32") {
    widths[0] = a.scaled(32);
    widths[1] = a.scaled(32);
    widths[2] = a.scaled(64);
    widths[3] = a.scaled(128);
  } else {
    const Index f = a.scaled(64);
    widths[0] = widths[1] = widths[2] = widths[3] = f;
  }
  conv(d, "in", a.image_channels, widths[0], 3, 1, sl, rng);
  const int downs = a.image_size == 64 ? 4 : 3;
  Index prev = widths[0];
  for (int i = 0; i < downs; ++i) {
    const Index w = widths[std::min(i + 1, 3)];
    d.layers.push_back(nn::BlockDown<S>::make(
        d.name + ".down" + std::to_string(i + 1), prev, w, sl, rng));
    prev = w;
  }
  d.layers.push_back(nn::MbStdLayer{});
  leaky(d, sl);
  conv(d, "mid", prev + 1, prev, 4, 0, sl, rng);
  leaky(d, sl);
  conv(d, "out", prev, 1, 1, 0, sl, rng);
  d.layers.push_back(nn::FlattenLayer{});
  return d;
}

template <typename S>
Network<S> build_critic_z(const ArchitectureSpec& a, Rng& rng) {
  using namespace detail;
  Network<S> d;
  d.name = "dz";
  d.input_shape = a.latent;
  d.output_shape = Shape{1, 1, 1, 1};
  const double sl = a.leaky_slope;
  Index hidden;
  if (a.profile == "mnist32")
    hidden = a.scaled(128);
  else if (a.profile == "cifar32")
    hidden = a.scaled(1024);
  else if (a.profile == "lsun64")
    hidden = a.scaled(2048);
  else
    hidden = a.scaled(256);
  const Index zdim = a.latent.chw();
  d.layers.push_back(nn::FlattenLayer{});
  dense(d, "fc1", zdim, hidden, sl, rng);
  leaky(d, sl);
  dense(d, "fc2", hidden, hidden, sl, rng);
  leaky(d, sl);
  dense(d, "fc3", hidden, 1, sl, rng);
  return d;
}

// Same seed, same spec -> parameter-wise identical bundles.
template <typename S>
ModelBundle<S> build_models(const ArchitectureSpec& spec, std::uint64_t seed) {
  ModelBundle<S> b;
  b.spec = spec;
  b.init_seed = seed;
  Rng rg(Rng::derive(seed, 1)), re(Rng::derive(seed, 2)),
      rx(Rng::derive(seed, 3)), rz(Rng::derive(seed, 4));
  b.generator = build_generator<S>(spec, rg);
  b.encoder = build_encoder<S>(spec, re);
  b.critic_x = build_critic_x<S>(spec, rx);
  b.critic_z = build_critic_z<S>(spec, rz);
  b.refresh_leaves();
  return b;
}

// Standard normal latent prior, drawn coordinate-wise.
template <typename S>
Tensor<S> sample_latent(const ArchitectureSpec& spec, Index batch, Rng& rng) {
  Tensor<S> z(Shape{batch, spec.latent.c, spec.latent.h, spec.latent.w});
  rng.fill_normal(z);
  return z;
}

inline std::string latent_prior_descriptor(const ArchitectureSpec& spec) {
  return "normal(0,1) iid " + std::to_string(spec.latent.c) + "x" +
         std::to_string(spec.latent.h) + "x" + std::to_string(spec.latent.w);
}

}  // namespace percad::models
