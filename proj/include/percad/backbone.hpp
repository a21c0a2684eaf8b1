#pragma once

#include <cstdio>
#include <functional>
#include <optional>
#include <sstream>

#include "percad/autodiff.hpp"
#include "percad/random.hpp"
#include "percad/serialize.hpp"

// Fixed pretrained classifier used as a feature extractor: a VGG-style
// conv stack loaded from a self-describing weights file, tapped at one
// named layer. Weights are immutable after load; extraction is a pure
// function of (weights, input).
namespace percad::backbone {

using ad::Var;

inline constexpr const char* kWeightsMagic = "PCVGGW1";
inline constexpr const char* kDefaultLayer = "conv4_2";

template <typename S>
struct Backbone {
  struct ConvLayer {
    std::string name;
    Tensor<S> w, b;
    bool pool_before = false;
  };

  std::string layer_id;       // tap layer
  Index input_size = 224;     // nominal training resolution
  Index channel_count = 0;    // filters of the tap layer
  std::string fingerprint;    // checksum of the weights file
  std::vector<ConvLayer> convs;
  ArrayX<S> in_mean, in_std;  // per-channel normalization in [0,1] space

  // Tap activations for a batch of images in [-1,1]. Grayscale inputs are
  // channel-replicated to 3. The result is differentiable w.r.t. `images`
  // whenever `images` is tracked; pass a constant for inference.
  Var<S> features(const Var<S>& images) const {
    const Shape s = images.shape();
    PERCAD_CHECK(s.c == 1 || s.c == 3,
                 "extract_features: expected 1 or 3 channels, got " +
                     std::to_string(s.c));
    PERCAD_CHECK(images.val().all_finite(),
                 "extract_features: non-finite pixel values");
    Var<S> x = images;
    if (s.c == 1) x = ad::concat_c(ad::concat_c(x, x), x);
    // ((p+1)/2 - mean) / std as one per-channel affine map.
    ArrayX<S> cs(3), ct(3);
    for (Index c = 0; c < 3; ++c) {
      cs[c] = S(0.5) / in_std[c];
      ct[c] = (S(0.5) - in_mean[c]) / in_std[c];
    }
    x = ad::channel_affine(x, cs, ct);
    for (const auto& conv : convs) {
      if (conv.pool_before) {
        PERCAD_CHECK(x.shape().h % 2 == 0 && x.shape().w % 2 == 0,
                     "extract_features: spatial size " + x.shape().str() +
                         " not divisible by pooling stack");
        x = ad::max_pool2(x);
      }
      x = ad::relu(ad::add(ad::conv2d(x, ad::constant(conv.w), 1),
                           ad::broadcast_channels(ad::constant(conv.b),
                                                  Shape{x.shape().n, conv.w.shape.n,
                                                        x.shape().h, x.shape().w})));
    }
    return x;
  }

  Tensor<S> features_nograd(const Tensor<S>& images) const {
    ad::NoGradGuard ng;
    return features(ad::constant(images)).val();
  }
};

// ---------------------------------------------------------------------------
// weights file

template <typename S>
io::BinWriter serialize_backbone(const Backbone<S>& bb) {
  io::BinWriter w;
  w.str(kWeightsMagic);
  w.u32(static_cast<std::uint32_t>(bb.input_size));
  for (Index c = 0; c < 3; ++c) w.f64(static_cast<double>(bb.in_mean[c]));
  for (Index c = 0; c < 3; ++c) w.f64(static_cast<double>(bb.in_std[c]));
  w.u32(static_cast<std::uint32_t>(bb.convs.size()));
  for (const auto& conv : bb.convs) {
    w.str(conv.name);
    w.u8(conv.pool_before ? 1 : 0);
    w.tensor(conv.w);
    w.tensor(conv.b);
  }
  return w;
}

template <typename S>
std::string backbone_fingerprint(const Backbone<S>& bb) {
  return io::hex64(serialize_backbone(bb).digest());
}

template <typename S>
void write_backbone_file(const Backbone<S>& bb, const std::string& path) {
  io::BinWriter w = serialize_backbone(bb);
  w.u64(w.digest());
  w.write_file(path);
}

// Loads the stack up to and including `layer_id`. The checksum covers the
// entire file, so partial/corrupt files are rejected before truncation.
template <typename S>
Backbone<S> load_backbone(const std::string& path,
                          const std::string& layer_id = kDefaultLayer) {
  io::BinReader r = io::BinReader::from_file(path);
  const std::uint64_t digest =
      r.verify_trailing_digest("backbone weights " + path);
  Backbone<S> bb;
  PERCAD_CHECK(r.str() == kWeightsMagic,
               "not a backbone weights file: " + path);
  bb.input_size = r.u32();
  bb.in_mean.resize(3);
  bb.in_std.resize(3);
  for (Index c = 0; c < 3; ++c) bb.in_mean[c] = static_cast<S>(r.f64());
  for (Index c = 0; c < 3; ++c) bb.in_std[c] = static_cast<S>(r.f64());
  const auto n_convs = r.u32();
  for (std::uint32_t i = 0; i < n_convs; ++i) {
    typename Backbone<S>::ConvLayer conv;
    conv.name = r.str();
    conv.pool_before = r.u8() != 0;
    conv.w = r.template tensor<S>();
    conv.b = r.template tensor<S>();
    bb.convs.push_back(std::move(conv));
  }
  bb.fingerprint = io::hex64(digest);

  std::size_t tap = bb.convs.size();
  for (std::size_t i = 0; i < bb.convs.size(); ++i)
    if (bb.convs[i].name == layer_id) tap = i;
  if (tap == bb.convs.size()) {
    std::string known;
    for (const auto& c : bb.convs) known += c.name + " ";
    throw ConfigError("unknown backbone layer '" + layer_id +
                      "'; available: " + known);
  }
  bb.convs.resize(tap + 1);
  bb.layer_id = layer_id;
  bb.channel_count = bb.convs.back().w.shape.n;
  return bb;
}

// VGG-19 conv plan through the 2nd conv of the 4th block, scaled by a
// width multiplier (1.0 reproduces the 512-filter tap).
inline std::vector<std::pair<std::string, Index>> vgg19_plan(
    double width_multiplier = 1.0) {
  auto scaled = [&](Index base) {
    return std::max<Index>(2, static_cast<Index>(std::lround(
                                  base * width_multiplier)));
  };
  std::vector<std::pair<std::string, Index>> plan;
  const Index widths[4] = {scaled(64), scaled(128), scaled(256), scaled(512)};
  const int block_convs[4] = {2, 2, 4, 2};  // block 4 truncated at conv4_2
  for (int b = 0; b < 4; ++b)
    for (int k = 0; k < block_convs[b]; ++k)
      plan.emplace_back(
          "conv" + std::to_string(b + 1) + "_" + std::to_string(k + 1),
          widths[b]);
  return plan;
}

// Seeded random-weight backbone with the VGG-19 layout. Stands in for
// pretrained weights where none are available; the same file format loads
// converted pretrained weights.
template <typename S>
Backbone<S> make_random_backbone(double width_multiplier, std::uint64_t seed) {
  Backbone<S> bb;
  bb.input_size = 224;
  bb.in_mean.resize(3);
  bb.in_std.resize(3);
  bb.in_mean << S(0.485), S(0.456), S(0.406);
  bb.in_std << S(0.229), S(0.224), S(0.225);
  Rng rng(seed);
  Index prev = 3;
  for (const auto& [name, width] : vgg19_plan(width_multiplier)) {
    typename Backbone<S>::ConvLayer conv;
    conv.name = name;
    // pooling sits between blocks: before convB_1 for every block B >= 2
    conv.pool_before = name.ends_with("_1") && name[4] != '1';
    conv.w = Tensor<S>(Shape{width, prev, 3, 3});
    conv.b = Tensor<S>(Shape{1, width, 1, 1});
    rng.fill_normal(conv.w, std::sqrt(2.0 / (prev * 9.0)));
    rng.fill_normal(conv.b, 0.05);
    prev = width;
    bb.convs.push_back(std::move(conv));
  }
  bb.layer_id = bb.convs.back().name;
  bb.channel_count = prev;
  bb.fingerprint = backbone_fingerprint(bb);
  return bb;
}

// Two-conv stub with no pooling; small enough for finite-difference work.
template <typename S>
Backbone<S> make_stub_backbone(Index c1, Index c2, std::uint64_t seed) {
  Backbone<S> bb;
  bb.input_size = 8;
  bb.in_mean = ArrayX<S>::Constant(3, S(0.5));
  bb.in_std = ArrayX<S>::Constant(3, S(0.5));
  Rng rng(seed);
  Index prev = 3;
  int i = 1;
  for (Index width : {c1, c2}) {
    typename Backbone<S>::ConvLayer conv;
    conv.name = "stub" + std::to_string(i++);
    conv.pool_before = false;
    conv.w = Tensor<S>(Shape{width, prev, 3, 3});
    conv.b = Tensor<S>(Shape{1, width, 1, 1});
    rng.fill_normal(conv.w, std::sqrt(2.0 / (prev * 9.0)));
    rng.fill_normal(conv.b, 0.05);
    prev = width;
    bb.convs.push_back(std::move(conv));
  }
  bb.layer_id = bb.convs.back().name;
  bb.channel_count = prev;
  bb.fingerprint = backbone_fingerprint(bb);
  return bb;
}

// ---------------------------------------------------------------------------
// per-filter response statistics

struct FilterStats {
  ArrayX<double> mu, sigma;
  std::string layer_id;
  std::string weights_fingerprint;
  std::string source_corpus;
  std::int64_t sample_count = 0;
  std::string tool_version;        // provenance, "-" when unset
  std::string config_fingerprint;

  Index channels() const { return mu.size(); }
};

inline constexpr double kSigmaFloor = 1e-6;

// Streaming per-filter mean/std (population) pooled over all spatial
// positions and samples. Welford accumulators keep the A-then-B vs merged
// corpus results equal to fp accuracy.
class StatsAccumulator {
 public:
  explicit StatsAccumulator(Index channels)
      : count_(channels), mean_(channels), m2_(channels) {
    count_.setZero();
    mean_.setZero();
    m2_.setZero();
  }

  template <typename S>
  void add(const Tensor<S>& features) {
    const Shape s = features.shape;
    PERCAD_CHECK(s.c == mean_.size(), "stats accumulator channel mismatch");
    for (Index n = 0; n < s.n; ++n)
      for (Index c = 0; c < s.c; ++c) {
        const S* p = features.ptr() + (n * s.c + c) * s.hw();
        double cnt = count_[c], mean = mean_[c], m2 = m2_[c];
        for (Index i = 0; i < s.hw(); ++i) {
          const double x = static_cast<double>(p[i]);
          cnt += 1.0;
          const double d = x - mean;
          mean += d / cnt;
          m2 += d * (x - mean);
        }
        count_[c] = cnt;
        mean_[c] = mean;
        m2_[c] = m2;
      }
    samples_ += s.n;
  }

  FilterStats finish() const {
    PERCAD_CHECK(samples_ > 0, "stats accumulator saw no samples");
    FilterStats st;
    st.mu = mean_;
    st.sigma = (m2_ / count_.max(1.0)).sqrt().max(kSigmaFloor);
    st.sample_count = samples_;
    return st;
  }

  std::int64_t samples() const { return samples_; }

 private:
  ArrayX<double> count_, mean_, m2_;
  std::int64_t samples_ = 0;
};

// `next` yields preprocessed [-1,1] images one at a time (empty when
// exhausted); consumes at most max_samples of them.
template <typename S>
FilterStats calibrate_stats(
    const Backbone<S>& bb,
    const std::function<std::optional<Tensor<S>>()>& next, Index max_samples,
    const std::string& corpus_id, Index min_samples = 1) {
  StatsAccumulator acc(bb.channel_count);
  Index used = 0;
  while (used < max_samples) {
    auto img = next();
    if (!img) break;
    Tensor<S> batch = *img;
    if (batch.shape.n != 1) batch.shape = Shape{1, batch.shape.c, batch.shape.h, batch.shape.w};
    acc.add(bb.features_nograd(batch));
    ++used;
  }
  if (used == 0) throw ConfigError("empty corpus");
  PERCAD_CHECK(used >= min_samples,
               "calibration corpus has " + std::to_string(used) +
                   " images, need at least " + std::to_string(min_samples));
  FilterStats st = acc.finish();
  st.layer_id = bb.layer_id;
  st.weights_fingerprint = bb.fingerprint;
  st.source_corpus = corpus_id;
  return st;
}

// ---------------------------------------------------------------------------
// stats file (textual)

inline void write_stats_file(const FilterStats& st, const std::string& path) {
  std::ostringstream os;
  os << "percad-stats 1\n";
  os << "tool " << (st.tool_version.empty() ? "-" : st.tool_version) << "\n";
  os << "config "
     << (st.config_fingerprint.empty() ? "-" : st.config_fingerprint)
     << "\n";
  os << "layer " << st.layer_id << "\n";
  os << "fingerprint " << st.weights_fingerprint << "\n";
  os << "corpus " << st.source_corpus << "\n";
  os << "samples " << st.sample_count << "\n";
  os << "channels " << st.mu.size() << "\n";
  char buf[40];
  os << "mu";
  for (Index i = 0; i < st.mu.size(); ++i) {
    std::snprintf(buf, sizeof buf, " %.17g", st.mu[i]);
    os << buf;
  }
  os << "\nsigma";
  for (Index i = 0; i < st.sigma.size(); ++i) {
    std::snprintf(buf, sizeof buf, " %.17g", st.sigma[i]);
    os << buf;
  }
  os << "\n";
  std::ofstream f(path, std::ios::trunc);
  PERCAD_CHECK(f.good(), "cannot open for writing: " + path);
  f << os.str();
  PERCAD_CHECK(f.good(), "write failed: " + path);
}

inline FilterStats load_stats_file(const std::string& path) {
  std::ifstream f(path);
  PERCAD_CHECK(f.good(), "cannot open stats file: " + path);
  std::string magic, key;
  int version = 0;
  f >> magic >> version;
  PERCAD_CHECK(magic == "percad-stats" && version == 1,
               "not a stats file: " + path);
  FilterStats st;
  Index channels = 0;
  f >> key >> st.tool_version;
  PERCAD_CHECK(key == "tool", "malformed stats file");
  f >> key >> st.config_fingerprint;
  PERCAD_CHECK(key == "config", "malformed stats file");
  f >> key >> st.layer_id;
  PERCAD_CHECK(key == "layer", "malformed stats file");
  f >> key >> st.weights_fingerprint;
  PERCAD_CHECK(key == "fingerprint", "malformed stats file");
  f >> key >> st.source_corpus;
  PERCAD_CHECK(key == "corpus", "malformed stats file");
  f >> key >> st.sample_count;
  PERCAD_CHECK(key == "samples", "malformed stats file");
  f >> key >> channels;
  PERCAD_CHECK(key == "channels" && channels > 0, "malformed stats file");
  st.mu.resize(channels);
  st.sigma.resize(channels);
  f >> key;
  PERCAD_CHECK(key == "mu", "malformed stats file");
  for (Index i = 0; i < channels; ++i) f >> st.mu[i];
  f >> key;
  PERCAD_CHECK(key == "sigma", "malformed stats file");
  for (Index i = 0; i < channels; ++i) f >> st.sigma[i];
  PERCAD_CHECK(!f.fail(), "malformed stats file: " + path);
  for (Index i = 0; i < channels; ++i)
    PERCAD_CHECK(st.sigma[i] > 0, "stats file has non-positive sigma");
  return st;
}

// Stats are only valid against the backbone they were calibrated on.
template <typename S>
void validate_stats(const FilterStats& st, const Backbone<S>& bb) {
  PERCAD_CHECK(st.weights_fingerprint == bb.fingerprint,
               "stats file fingerprint " + st.weights_fingerprint +
                   " does not match backbone " + bb.fingerprint);
  PERCAD_CHECK(st.layer_id == bb.layer_id,
               "stats file layer " + st.layer_id +
                   " does not match backbone tap " + bb.layer_id);
  PERCAD_CHECK(st.channels() == bb.channel_count,
               "stats channel count mismatch");
}

}  // namespace percad::backbone
