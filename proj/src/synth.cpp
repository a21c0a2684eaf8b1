#include "percad/synth.hpp"

#include <cmath>
#include <filesystem>

namespace percad::synth {

namespace {

struct P {
  double x, y;
};

// Each digit is a set of polylines in the unit square (y grows downward).
// Arcs are pre-sampled into short segments.
std::vector<std::vector<P>> digit_strokes(int digit) {
  auto arc = [](double cx, double cy, double rx, double ry, double a0,
                double a1, int n = 24) {
    std::vector<P> pts;
    for (int i = 0; i <= n; ++i) {
      const double a = a0 + (a1 - a0) * i / n;
      pts.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
    return pts;
  };
  const double pi = 3.14159265358979323846;
  switch (digit) {
    case 0:
      return {arc(.5, .5, .27, .37, 0, 2 * pi, 40)};
    case 1:
      return {{{.40, .28}, {.56, .14}}, {{.56, .14}, {.56, .86}}};
    case 2:
      return {arc(.5, .32, .24, .20, -pi, 0.15 * pi),
              {{.70, .42}, {.30, .84}},
              {{.30, .84}, {.72, .84}}};
    case 3:
      return {arc(.48, .32, .22, .18, -0.75 * pi, 0.5 * pi),
              arc(.48, .66, .24, .20, -0.5 * pi, 0.75 * pi)};
    case 4:
      return {{{.60, .14}, {.28, .60}}, {{.28, .60}, {.76, .60}},
              {{.62, .38}, {.62, .88}}};
    case 5:
      return {{{.68, .16}, {.34, .16}},
              {{.34, .16}, {.32, .46}},
              arc(.50, .64, .22, .22, -0.55 * pi, 0.75 * pi)};
    case 6:
      return {arc(.52, .30, .22, .26, -0.9 * pi, -0.25 * pi),
              arc(.50, .64, .20, .22, 0, 2 * pi, 32)};
    case 7:
      return {{{.28, .16}, {.74, .16}}, {{.74, .16}, {.42, .86}}};
    case 8:
      return {arc(.5, .32, .19, .18, 0, 2 * pi, 32),
              arc(.5, .68, .23, .20, 0, 2 * pi, 32)};
    case 9:
      return {arc(.5, .34, .20, .20, 0, 2 * pi, 32),
              arc(.48, .40, .26, .38, -0.1 * pi, 0.45 * pi)};
    default:
      throw Error("digit out of range");
  }
}

double seg_distance(P p, P a, P b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

data::RawImage render_digit(int digit, Rng& rng, Index size) {
  auto strokes = digit_strokes(digit);

  const double angle = rng.uniform(-0.20, 0.20);
  const double sc = rng.uniform(0.85, 1.1);
  const double shx = rng.uniform(-0.06, 0.06);
  const double tx = rng.uniform(-0.05, 0.05), ty = rng.uniform(-0.05, 0.05);
  const double ca = std::cos(angle), sa = std::sin(angle);
  auto warp = [&](P p) {
    double x = p.x - 0.5, y = p.y - 0.5;
    x += shx * y;
    const double xr = sc * (ca * x - sa * y), yr = sc * (sa * x + ca * y);
    return P{xr + 0.5 + tx, yr + 0.5 + ty};
  };
  for (auto& s : strokes)
    for (auto& p : s) p = warp(p);

  const double thick = rng.uniform(0.035, 0.065);
  const double peak = rng.uniform(0.78, 1.0);
  const double soft = 0.55 * thick;

  data::RawImage img;
  img.c = 1;
  img.h = img.w = size;
  img.pix.assign(static_cast<size_t>(size * size), 0);
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const P p{(x + 0.5) / size, (y + 0.5) / size};
      double d = 1e9;
      for (const auto& s : strokes)
        for (size_t i = 0; i + 1 < s.size(); ++i)
          d = std::min(d, seg_distance(p, s[i], s[i + 1]));
      double v = 0.0;
      if (d < thick)
        v = peak;
      else if (d < thick + soft)
        v = peak * (1.0 - (d - thick) / soft);
      v += rng.uniform(-0.02, 0.02);
      img.pix[static_cast<size_t>(y * size + x)] =
          static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    }
  return img;
}

void make_digit_dataset(const std::string& dir, Index per_class_train,
                        Index per_class_test, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  std::vector<data::RawImage> train_imgs, test_imgs;
  std::vector<int> train_lbls, test_lbls;
  for (int d = 0; d < 10; ++d)
    for (Index i = 0; i < per_class_train; ++i) {
      train_imgs.push_back(render_digit(d, rng));
      train_lbls.push_back(d);
    }
  for (int d = 0; d < 10; ++d)
    for (Index i = 0; i < per_class_test; ++i) {
      test_imgs.push_back(render_digit(d, rng));
      test_lbls.push_back(d);
    }
  data::write_idx_images(train_imgs, dir + "/train-images-idx3-ubyte");
  data::write_idx_labels(train_lbls, dir + "/train-labels-idx1-ubyte");
  data::write_idx_images(test_imgs, dir + "/t10k-images-idx3-ubyte");
  data::write_idx_labels(test_lbls, dir + "/t10k-labels-idx1-ubyte");
}

data::RawImage make_texture(Rng& rng, Index size, Index channels) {
  PERCAD_CHECK(channels == 1 || channels == 3, "texture channels must be 1/3");
  const int waves = 6;
  std::vector<double> luma(static_cast<size_t>(size * size), 0.0);
  for (int k = 0; k < waves; ++k) {
    const double fx = rng.uniform(0.5, 4.0) * 2 * 3.14159265;
    const double fy = rng.uniform(0.5, 4.0) * 2 * 3.14159265;
    const double ph = rng.uniform(0, 6.28318);
    const double amp = rng.uniform(0.2, 1.0) / (1 + k);
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x)
        luma[static_cast<size_t>(y * size + x)] +=
            amp * std::sin(fx * x / size + fy * y / size + ph);
  }
  // a few soft elliptical blobs give the images object-like structure
  const int blobs = 3 + static_cast<int>(rng.below(3));
  for (int k = 0; k < blobs; ++k) {
    const double cx = rng.uniform(0.15, 0.85) * size;
    const double cy = rng.uniform(0.15, 0.85) * size;
    const double rx = rng.uniform(0.08, 0.3) * size;
    const double ry = rng.uniform(0.08, 0.3) * size;
    const double amp = rng.uniform(-1.2, 1.2);
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x) {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        const double r2 = dx * dx + dy * dy;
        if (r2 < 1.0)
          luma[static_cast<size_t>(y * size + x)] +=
              amp * (1.0 - r2) * (1.0 - r2);
      }
  }
  double lo = 1e9, hi = -1e9;
  for (double v : luma) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo < 1e-9 ? 1.0 : hi - lo;

  data::RawImage img;
  img.c = channels;
  img.h = img.w = size;
  img.pix.resize(static_cast<size_t>(channels * size * size));
  const double tint[3] = {rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2),
                          rng.uniform(0.8, 1.2)};
  for (Index c = 0; c < channels; ++c)
    for (Index i = 0; i < size * size; ++i) {
      double v = (luma[static_cast<size_t>(i)] - lo) / span;
      v = std::clamp(v * (channels == 3 ? tint[c] : 1.0), 0.0, 1.0);
      img.pix[static_cast<size_t>(c * size * size + i)] =
          static_cast<std::uint8_t>(v * 255.0 + 0.5);
    }
  return img;
}

void make_texture_folder(const std::string& dir, Index count, Index size,
                         Index channels, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  char name[64];
  for (Index i = 0; i < count; ++i) {
    auto img = make_texture(rng, size, channels);
    std::snprintf(name, sizeof name, "%s/tex%04d.%s", dir.c_str(),
                  static_cast<int>(i), channels == 1 ? "pgm" : "ppm");
    data::write_pnm(img, name);
  }
}

data::RawImage shift_image(const data::RawImage& img, Index dx, Index dy) {
  data::RawImage out = img;
  for (Index c = 0; c < img.c; ++c)
    for (Index y = 0; y < img.h; ++y)
      for (Index x = 0; x < img.w; ++x) {
        const Index sy = std::clamp<Index>(y - dy, 0, img.h - 1);
        const Index sx = std::clamp<Index>(x - dx, 0, img.w - 1);
        out.pix[static_cast<size_t>((c * img.h + y) * img.w + x)] =
            img.at(c, sy, sx);
      }
  return out;
}

}  // namespace percad::synth
