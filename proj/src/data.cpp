#include "percad/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace fs = std::filesystem;

namespace percad::data {

namespace {

[[noreturn]] void decode_error(const std::string& path,
                               const std::string& why) {
  throw DataError("cannot decode " + path + ": " + why);
}

int pnm_token(std::istream& is, const std::string& path) {
  // skips whitespace and '#' comments
  while (true) {
    int c = is.peek();
    if (c == EOF) decode_error(path, "unexpected end of header");
    if (c == '#') {
      std::string line;
      std::getline(is, line);
      continue;
    }
    if (std::isspace(c)) {
      is.get();
      continue;
    }
    break;
  }
  int v = 0;
  is >> v;
  if (is.fail()) decode_error(path, "malformed header");
  return v;
}

}  // namespace

RawImage read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) throw DataError("cannot open " + path);
  char p = 0, kind = 0;
  is.get(p);
  is.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6'))
    decode_error(path, "not a binary PGM/PPM (P5/P6)");
  RawImage img;
  img.c = kind == '5' ? 1 : 3;
  img.w = pnm_token(is, path);
  img.h = pnm_token(is, path);
  const int maxval = pnm_token(is, path);
  if (img.w <= 0 || img.h <= 0) decode_error(path, "degenerate dimensions");
  if (maxval != 255) decode_error(path, "unsupported maxval");
  is.get();  // single whitespace after header
  std::vector<std::uint8_t> inter(
      static_cast<size_t>(img.c * img.h * img.w));
  is.read(reinterpret_cast<char*>(inter.data()),
          static_cast<std::streamsize>(inter.size()));
  if (is.gcount() != static_cast<std::streamsize>(inter.size()))
    decode_error(path, "truncated pixel data");
  // interleaved -> planar
  img.pix.resize(inter.size());
  for (Index y = 0; y < img.h; ++y)
    for (Index x = 0; x < img.w; ++x)
      for (Index c = 0; c < img.c; ++c)
        img.pix[static_cast<size_t>((c * img.h + y) * img.w + x)] =
            inter[static_cast<size_t>((y * img.w + x) * img.c + c)];
  img.id = fs::path(path).filename().string();
  return img;
}

void write_pnm(const RawImage& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  PERCAD_CHECK(os.good(), "cannot open for writing: " + path);
  os << (img.c == 1 ? "P5" : "P6") << "\n"
     << img.w << " " << img.h << "\n255\n";
  std::vector<std::uint8_t> inter(
      static_cast<size_t>(img.c * img.h * img.w));
  for (Index y = 0; y < img.h; ++y)
    for (Index x = 0; x < img.w; ++x)
      for (Index c = 0; c < img.c; ++c)
        inter[static_cast<size_t>((y * img.w + x) * img.c + c)] =
            img.at(c, y, x);
  os.write(reinterpret_cast<const char*>(inter.data()),
           static_cast<std::streamsize>(inter.size()));
  PERCAD_CHECK(os.good(), "write failed: " + path);
}

// ---------------------------------------------------------------------------
// IDX

namespace {

void put_u32_be(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t get_u32_be(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) decode_error(path, "truncated IDX header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

void write_idx_images(const std::vector<RawImage>& images,
                      const std::string& path, Index h, Index w) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  PERCAD_CHECK(os.good(), "cannot open for writing: " + path);
  if (!images.empty()) {
    h = images[0].h;
    w = images[0].w;
  }
  put_u32_be(os, 0x00000803);
  put_u32_be(os, static_cast<std::uint32_t>(images.size()));
  put_u32_be(os, static_cast<std::uint32_t>(h));
  put_u32_be(os, static_cast<std::uint32_t>(w));
  for (const auto& img : images) {
    PERCAD_CHECK(img.c == 1 && img.h == h && img.w == w,
                 "write_idx_images: inconsistent image " + img.id);
    os.write(reinterpret_cast<const char*>(img.pix.data()),
             static_cast<std::streamsize>(img.pix.size()));
  }
  PERCAD_CHECK(os.good(), "write failed: " + path);
}

void write_idx_labels(const std::vector<int>& labels,
                      const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  PERCAD_CHECK(os.good(), "cannot open for writing: " + path);
  put_u32_be(os, 0x00000801);
  put_u32_be(os, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    auto b = static_cast<unsigned char>(l);
    os.write(reinterpret_cast<char*>(&b), 1);
  }
  PERCAD_CHECK(os.good(), "write failed: " + path);
}

namespace {

void read_idx_pair(const std::string& img_path, const std::string& lbl_path,
                   bool test_flag, Dataset& ds) {
  std::ifstream is(img_path, std::ios::binary);
  if (!is.good()) throw DataError("missing dataset file: " + img_path);
  if (get_u32_be(is, img_path) != 0x00000803)
    decode_error(img_path, "bad IDX image magic");
  const auto n = get_u32_be(is, img_path);
  const auto h = get_u32_be(is, img_path);
  const auto w = get_u32_be(is, img_path);

  std::ifstream ls(lbl_path, std::ios::binary);
  if (!ls.good()) throw DataError("missing dataset file: " + lbl_path);
  if (get_u32_be(ls, lbl_path) != 0x00000801)
    decode_error(lbl_path, "bad IDX label magic");
  const auto nl = get_u32_be(ls, lbl_path);
  if (nl != n)
    throw DataError("label/image count mismatch: " + img_path + " has " +
                    std::to_string(n) + ", " + lbl_path + " has " +
                    std::to_string(nl));

  const std::string stem = fs::path(img_path).filename().string();
  for (std::uint32_t i = 0; i < n; ++i) {
    RawImage img;
    img.c = 1;
    img.h = h;
    img.w = w;
    img.pix.resize(static_cast<size_t>(h) * w);
    is.read(reinterpret_cast<char*>(img.pix.data()),
            static_cast<std::streamsize>(img.pix.size()));
    if (is.gcount() != static_cast<std::streamsize>(img.pix.size()))
      decode_error(img_path, "truncated image data");
    img.id = stem + "#" + std::to_string(i);
    char lb = 0;
    ls.read(&lb, 1);
    if (ls.gcount() != 1) decode_error(lbl_path, "truncated label data");
    ds.images.push_back(std::move(img));
    ds.labels.push_back(static_cast<unsigned char>(lb));
    ds.in_test.push_back(test_flag ? 1 : 0);
  }
}

}  // namespace

Dataset load_mnist_idx(const std::string& dir) {
  Dataset ds;
  ds.name = "idx:" + dir;
  read_idx_pair(dir + "/train-images-idx3-ubyte",
                dir + "/train-labels-idx1-ubyte", false, ds);
  read_idx_pair(dir + "/t10k-images-idx3-ubyte",
                dir + "/t10k-labels-idx1-ubyte", true, ds);
  return ds;
}

Dataset load_cifar10_bin(const std::string& dir) {
  Dataset ds;
  ds.name = "cifar10:" + dir;
  auto read_batch = [&](const std::string& path, bool test_flag) {
    std::ifstream is(path, std::ios::binary);
    if (!is.good()) throw DataError("missing dataset file: " + path);
    const std::string stem = fs::path(path).filename().string();
    int i = 0;
    while (true) {
      char lb = 0;
      is.read(&lb, 1);
      if (is.gcount() == 0) break;
      RawImage img;
      img.c = 3;
      img.h = 32;
      img.w = 32;
      img.pix.resize(3 * 32 * 32);
      is.read(reinterpret_cast<char*>(img.pix.data()), 3072);
      if (is.gcount() != 3072) decode_error(path, "truncated record");
      img.id = stem + "#" + std::to_string(i++);
      ds.images.push_back(std::move(img));
      ds.labels.push_back(static_cast<unsigned char>(lb));
      ds.in_test.push_back(test_flag ? 1 : 0);
    }
  };
  for (int b = 1; b <= 5; ++b)
    read_batch(dir + "/data_batch_" + std::to_string(b) + ".bin", false);
  read_batch(dir + "/test_batch.bin", true);
  return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Dataset load_image_folder(const std::string& dir) {
  Dataset ds;
  ds.name = "folder:" + dir;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);

  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());

  std::unordered_map<std::string, int> label_by_name;
  {
    std::ifstream ls(dir + "/labels.csv");
    if (ls.good()) {
      std::string line;
      while (std::getline(ls, line)) {
        if (line.empty()) continue;
        auto parts = split_csv_line(line);
        if (parts.size() != 2)
          throw DataError("malformed labels.csv line: " + line);
        label_by_name[parts[0]] = std::stoi(parts[1]);
      }
    }
  }

  std::unordered_map<std::string, std::vector<std::uint8_t>> attrs_by_name;
  {
    std::ifstream as(dir + "/attributes.csv");
    if (as.good()) {
      std::string line;
      PERCAD_CHECK(static_cast<bool>(std::getline(as, line)),
                   "attributes.csv is empty");
      auto header = split_csv_line(line);
      PERCAD_CHECK(header.size() >= 2 && header[0] == "name",
                   "attributes.csv header must start with 'name'");
      ds.attr_names.assign(header.begin() + 1, header.end());
      while (std::getline(as, line)) {
        if (line.empty()) continue;
        auto parts = split_csv_line(line);
        if (parts.size() != header.size())
          throw DataError("malformed attributes.csv line: " + line);
        std::vector<std::uint8_t> bits;
        for (size_t i = 1; i < parts.size(); ++i)
          bits.push_back(parts[i] == "1" ? 1 : 0);
        attrs_by_name[parts[0]] = std::move(bits);
      }
    }
  }

  for (const auto& path : files) {
    RawImage img = read_pnm(path);
    const std::string name = fs::path(path).filename().string();
    int label = 0;
    if (!label_by_name.empty()) {
      auto it = label_by_name.find(name);
      if (it == label_by_name.end())
        throw DataError("labels.csv has no entry for " + name);
      label = it->second;
    }
    if (!attrs_by_name.empty()) {
      auto it = attrs_by_name.find(name);
      if (it == attrs_by_name.end())
        throw DataError("attributes.csv has no entry for " + name);
      ds.attrs.push_back(it->second);
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  if (ds.images.empty()) throw ConfigError("empty corpus");
  return ds;
}

DatasetDescriptor descriptor_for(const std::string& profile,
                                 const std::string& path) {
  DatasetDescriptor d;
  d.profile = profile;
  d.path = path;
  using K = DatasetDescriptor::Kind;
  if (profile == "mnist32" || profile == "fmnist32") {
    d.kind = K::idx;
    d.channels = 1;
    d.size = 32;
  } else if (profile == "coil100") {
    d.kind = K::folder;
    d.channels = 3;
    d.size = 32;
  } else if (profile == "cifar32") {
    d.kind = K::cifar_bin;
    d.channels = 3;
    d.size = 32;
  } else if (profile == "lsun64") {
    d.kind = K::folder;
    d.channels = 3;
    d.size = 64;
  } else if (profile == "celeba64") {
    d.kind = K::folder;
    d.channels = 3;
    d.size = 64;
    d.center_crop = 140;
  } else if (profile == "folder32" || profile == "folder64") {
    d.kind = K::folder;
    d.channels = 0;  // keep source channel count
    d.size = profile == "folder32" ? 32 : 64;
  } else {
    throw ConfigError(
        "unknown dataset profile '" + profile +
        "' (mnist32, fmnist32, coil100, cifar32, lsun64, celeba64, "
        "folder32, folder64)");
  }
  return d;
}

Dataset load_dataset(const DatasetDescriptor& desc) {
  switch (desc.kind) {
    case DatasetDescriptor::Kind::idx:
      return load_mnist_idx(desc.path);
    case DatasetDescriptor::Kind::cifar_bin:
      return load_cifar10_bin(desc.path);
    case DatasetDescriptor::Kind::folder:
      return load_image_folder(desc.path);
  }
  throw Error("unreachable dataset kind");
}

// ---------------------------------------------------------------------------
// resampling

std::vector<float> resize_mix(const std::vector<float>& src, Index sh,
                              Index sw, Index dh, Index dw) {
  std::vector<float> dst(static_cast<size_t>(dh * dw), 0.f);
  const double ry = static_cast<double>(sh) / dh;
  const double rx = static_cast<double>(sw) / dw;
  for (Index y = 0; y < dh; ++y) {
    const double y0 = y * ry, y1 = (y + 1) * ry;
    for (Index x = 0; x < dw; ++x) {
      const double x0 = x * rx, x1 = (x + 1) * rx;
      double acc = 0.0, area = 0.0;
      for (Index iy = static_cast<Index>(y0); iy < sh && iy < y1; ++iy) {
        const double cy =
            std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
        for (Index ix = static_cast<Index>(x0); ix < sw && ix < x1; ++ix) {
          const double cx =
              std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
          acc += cy * cx * src[static_cast<size_t>(iy * sw + ix)];
          area += cy * cx;
        }
      }
      dst[static_cast<size_t>(y * dw + x)] =
          static_cast<float>(area > 0 ? acc / area : 0.0);
    }
  }
  return dst;
}

std::vector<float> resize_bilinear(const std::vector<float>& src, Index sh,
                                   Index sw, Index dh, Index dw) {
  std::vector<float> dst(static_cast<size_t>(dh * dw));
  const double ry = static_cast<double>(sh) / dh;
  const double rx = static_cast<double>(sw) / dw;
  for (Index y = 0; y < dh; ++y) {
    double fy = (y + 0.5) * ry - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(sh - 1));
    const Index y0 = static_cast<Index>(fy);
    const Index y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (Index x = 0; x < dw; ++x) {
      double fx = (x + 0.5) * rx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(sw - 1));
      const Index x0 = static_cast<Index>(fx);
      const Index x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      const double v =
          (1 - wy) * ((1 - wx) * src[static_cast<size_t>(y0 * sw + x0)] +
                      wx * src[static_cast<size_t>(y0 * sw + x1)]) +
          wy * ((1 - wx) * src[static_cast<size_t>(y1 * sw + x0)] +
                wx * src[static_cast<size_t>(y1 * sw + x1)]);
      dst[static_cast<size_t>(y * dw + x)] = static_cast<float>(v);
    }
  }
  return dst;
}

}  // namespace percad::data
