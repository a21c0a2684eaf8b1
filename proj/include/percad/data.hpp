#pragma once

#include <optional>
#include <string>
#include <vector>

#include "percad/random.hpp"
#include "percad/serialize.hpp"
#include "percad/tensor.hpp"

namespace percad::data {

// Decoded 8-bit image, planar CHW, c in {1,3}.
struct RawImage {
  Index c = 1, h = 0, w = 0;
  std::vector<std::uint8_t> pix;
  std::string id;

  std::uint8_t at(Index ch, Index y, Index x) const {
    return pix[static_cast<size_t>((ch * h + y) * w + x)];
  }
};

struct Dataset {
  std::string name;
  std::vector<RawImage> images;
  std::vector<int> labels;              // all zero when unlabeled
  std::vector<std::uint8_t> in_test;    // official split flag; empty if none
  std::vector<std::string> attr_names;  // attribute datasets only
  std::vector<std::vector<std::uint8_t>> attrs;  // [sample][attr]

  Index size() const { return static_cast<Index>(images.size()); }
  bool has_official_split() const { return !in_test.empty(); }
  int attr_index(const std::string& name) const {
    for (size_t i = 0; i < attr_names.size(); ++i)
      if (attr_names[i] == name) return static_cast<int>(i);
    return -1;
  }
};

// PNM (P5/P6 binary) codecs; decode failures name the file.
RawImage read_pnm(const std::string& path);
void write_pnm(const RawImage& img, const std::string& path);

// MNIST-layout IDX files.
void write_idx_images(const std::vector<RawImage>& images,
                      const std::string& path, Index h = 28, Index w = 28);
void write_idx_labels(const std::vector<int>& labels,
                      const std::string& path);
Dataset load_mnist_idx(const std::string& dir);
Dataset load_cifar10_bin(const std::string& dir);
Dataset load_image_folder(const std::string& dir);

struct DatasetDescriptor {
  enum class Kind { idx, cifar_bin, folder };
  std::string profile;
  std::string path;
  Kind kind = Kind::folder;
  Index channels = 3;   // 0 = take from the first decoded image
  Index size = 32;      // square target resolution
  Index center_crop = 0;
  std::string resize_policy = "mix-down/bilinear-up";

  std::string str() const {
    return profile + ":" + path + ":" + std::to_string(channels) + "x" +
           std::to_string(size) + (center_crop ? ":crop" + std::to_string(center_crop)
                                               : "");
  }
};

// Known dataset profiles and their preprocessing (target size, crop).
DatasetDescriptor descriptor_for(const std::string& profile,
                                 const std::string& path);
Dataset load_dataset(const DatasetDescriptor& desc);

// ---------------------------------------------------------------------------
// preprocessing

// Area-coverage resample (exact box average for integer downscales).
std::vector<float> resize_mix(const std::vector<float>& src, Index sh,
                              Index sw, Index dh, Index dw);
// Half-pixel-center bilinear, used for upscales.
std::vector<float> resize_bilinear(const std::vector<float>& src, Index sh,
                                   Index sw, Index dh, Index dw);

// Crop + resize + channel adaptation + [-1,1] range mapping.
template <typename S>
Tensor<S> preprocess(const RawImage& img, const DatasetDescriptor& desc) {
  PERCAD_CHECK(img.h >= 1 && img.w >= 1,
               "degenerate image dimensions in " + img.id);
  Index x0 = 0, y0 = 0, ch = img.h, cw = img.w;
  if (desc.center_crop > 0) {
    PERCAD_CHECK(img.h >= desc.center_crop && img.w >= desc.center_crop,
                 "image " + img.id + " smaller than center crop");
    ch = cw = desc.center_crop;
    y0 = (img.h - ch) / 2;
    x0 = (img.w - cw) / 2;
  }
  const Index out_c = desc.channels == 0 ? img.c : desc.channels;
  const Index s = desc.size;
  Tensor<S> out(Shape{1, out_c, s, s});

  std::vector<float> plane(static_cast<size_t>(ch * cw));
  std::vector<std::vector<float>> resized(static_cast<size_t>(img.c));
  for (Index c = 0; c < img.c; ++c) {
    for (Index y = 0; y < ch; ++y)
      for (Index x = 0; x < cw; ++x)
        plane[static_cast<size_t>(y * cw + x)] =
            static_cast<float>(img.at(c, y0 + y, x0 + x));
    resized[static_cast<size_t>(c)] =
        (s >= ch && s >= cw) ? resize_bilinear(plane, ch, cw, s, s)
                             : resize_mix(plane, ch, cw, s, s);
  }
  for (Index c = 0; c < out_c; ++c) {
    const float* src = nullptr;
    std::vector<float> mixed;
    if (img.c == out_c) {
      src = resized[static_cast<size_t>(c)].data();
    } else if (img.c == 1) {
      src = resized[0].data();  // replicate
    } else {
      mixed.resize(static_cast<size_t>(s * s));
      for (Index i = 0; i < s * s; ++i)
        mixed[static_cast<size_t>(i)] =
            (resized[0][static_cast<size_t>(i)] +
             resized[1][static_cast<size_t>(i)] +
             resized[2][static_cast<size_t>(i)]) /
            3.0f;
      src = mixed.data();
    }
    for (Index i = 0; i < s * s; ++i)
      out.data[c * s * s + i] =
          static_cast<S>(src[static_cast<size_t>(i)] / 127.5f - 1.0f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// batching

// Deterministic batch stream over a fixed index subset of a dataset.
// Training mode reshuffles every epoch (seeded) and drops the final
// partial batch; eval mode walks the subset in order exactly once per
// epoch, keeping the partial batch.
template <typename S>
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, const DatasetDescriptor& desc,
                std::vector<Index> indices, Index batch_size,
                std::uint64_t seed, bool train_mode, bool cache = true)
      : ds_(&ds),
        desc_(desc),
        indices_(std::move(indices)),
        batch_(batch_size),
        rng_(seed),
        train_(train_mode) {
    PERCAD_CHECK(batch_ >= 1, "batch_size must be >= 1");
    PERCAD_CHECK(!indices_.empty(), "empty collection");
    if (cache) cache_.resize(static_cast<size_t>(ds.size()));
    perm_ = indices_;
    if (train_) rng_.shuffle(perm_.begin(), perm_.end());
  }

  Index batches_per_epoch() const {
    const Index n = static_cast<Index>(indices_.size());
    return train_ ? n / batch_ : (n + batch_ - 1) / batch_;
  }

  // One batch; in train mode rolls over epochs transparently. In eval
  // mode returns false once the epoch is exhausted (then resets).
  bool next(Tensor<S>& out, std::vector<Index>* ids = nullptr) {
    const Index n = static_cast<Index>(perm_.size());
    if (train_ && pos_ + batch_ > n) start_epoch();
    if (!train_ && pos_ >= n) {
      pos_ = 0;
      return false;
    }
    const Index take = train_ ? batch_ : std::min(batch_, n - pos_);
    const Shape first = sample(perm_[pos_]).shape;
    out = Tensor<S>(Shape{take, first.c, first.h, first.w});
    if (ids) ids->clear();
    for (Index i = 0; i < take; ++i) {
      const Index src = perm_[pos_ + i];
      const Tensor<S>& t = sample(src);
      std::memcpy(out.sample_ptr(i), t.ptr(), sizeof(S) * t.size());
      if (ids) ids->push_back(src);
    }
    pos_ += take;
    return true;
  }

  void save(io::BinWriter& w) const {
    w.str(rng_.save());
    w.i64(pos_);
    w.i64(epoch_);
    w.u32(static_cast<std::uint32_t>(perm_.size()));
    for (Index i : perm_) w.i64(i);
  }

  void load(io::BinReader& r) {
    rng_.load(r.str());
    pos_ = r.i64();
    epoch_ = r.i64();
    const auto n = r.u32();
    PERCAD_CHECK(n == perm_.size(), "checkpoint batch state size mismatch");
    for (auto& i : perm_) i = r.i64();
  }

  Index epoch() const { return epoch_; }

 private:
  void start_epoch() {
    ++epoch_;
    rng_.shuffle(perm_.begin(), perm_.end());
    pos_ = 0;
  }

  const Tensor<S>& sample(Index idx) {
    if (!cache_.empty()) {
      auto& slot = cache_[static_cast<size_t>(idx)];
      if (!slot)
        slot = preprocess<S>(ds_->images[static_cast<size_t>(idx)], desc_);
      return *slot;
    }
    scratch_ = preprocess<S>(ds_->images[static_cast<size_t>(idx)], desc_);
    return scratch_;
  }

  const Dataset* ds_;
  DatasetDescriptor desc_;
  std::vector<Index> indices_, perm_;
  Index batch_ = 1, pos_ = 0, epoch_ = 0;
  Rng rng_;
  bool train_ = true;
  std::vector<std::optional<Tensor<S>>> cache_;
  Tensor<S> scratch_;
};

}  // namespace percad::data
