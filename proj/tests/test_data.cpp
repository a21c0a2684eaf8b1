#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "percad/data.hpp"
#include "percad/synth.hpp"
#include "testutil.hpp"

using namespace percad;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("synthetic digit dataset round trips through the IDX loader") {
  const std::string dir = fresh_dir("percad_idx");
  synth::make_digit_dataset(dir, 3, 2, 42);
  auto ds = data::load_mnist_idx(dir);
  CHECK(ds.size() == 50);  // 10*(3+2)
  CHECK(ds.has_official_split());
  Index train = 0, test = 0;
  std::set<int> classes;
  for (Index i = 0; i < ds.size(); ++i) {
    (ds.in_test[static_cast<size_t>(i)] ? test : train) += 1;
    classes.insert(ds.labels[static_cast<size_t>(i)]);
    CHECK(ds.images[static_cast<size_t>(i)].h == 28);
    CHECK(ds.images[static_cast<size_t>(i)].c == 1);
  }
  CHECK(train == 30);
  CHECK(test == 20);
  CHECK(classes.size() == 10);
}

TEST_CASE("IDX loader rejects count mismatches and truncation") {
  const std::string dir = fresh_dir("percad_idx_bad");
  synth::make_digit_dataset(dir, 2, 1, 7);
  // truncate the training images file
  {
    const std::string path = dir + "/train-images-idx3-ubyte";
    std::ifstream in(path, std::ios::binary);
    std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
    buf.resize(buf.size() - 100);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  CHECK_THROWS_WITH_AS((void)data::load_mnist_idx(dir),
                       doctest::Contains("truncated"), DataError);
}

TEST_CASE("preprocess") {
  SUBCASE("28x28 digit becomes 1x32x32 in [-1,1]") {
    Rng rng(1);
    auto img = synth::render_digit(8, rng);
    auto desc = data::descriptor_for("mnist32", "");
    auto t = data::preprocess<float>(img, desc);
    CHECK(t.shape == Shape{1, 1, 32, 32});
    CHECK(t.data.minCoeff() >= -1.0f);
    CHECK(t.data.maxCoeff() <= 1.0f);
  }
  SUBCASE("uniform white maps to exactly all ones") {
    data::RawImage white;
    white.c = 1;
    white.h = white.w = 28;
    white.pix.assign(28 * 28, 255);
    white.id = "white";
    auto t = data::preprocess<float>(white,
                                     data::descriptor_for("mnist32", ""));
    CHECK(t.data.minCoeff() == 1.0f);
    CHECK(t.data.maxCoeff() == 1.0f);
    white.pix.assign(28 * 28, 0);
    auto z = data::preprocess<float>(white,
                                     data::descriptor_for("mnist32", ""));
    CHECK(z.data.minCoeff() == -1.0f);
    CHECK(z.data.maxCoeff() == -1.0f);
  }
  SUBCASE("celeba-style crop: 178x218 -> 140 center crop -> 3x64x64") {
    data::RawImage img;
    img.c = 3;
    img.h = 218;
    img.w = 178;
    img.pix.assign(static_cast<size_t>(3 * 218 * 178), 0);
    // white square exactly covering the central 140x140 window
    for (Index c = 0; c < 3; ++c)
      for (Index y = 39; y < 179; ++y)
        for (Index x = 19; x < 159; ++x)
          img.pix[static_cast<size_t>((c * 218 + y) * 178 + x)] = 255;
    img.id = "synthetic";
    auto t = data::preprocess<float>(img,
                                     data::descriptor_for("celeba64", ""));
    CHECK(t.shape == Shape{1, 3, 64, 64});
    CHECK(t.data.minCoeff() == 1.0f);  // crop saw only the white window
  }
  SUBCASE("degenerate dimensions are rejected") {
    data::RawImage bad;
    bad.c = 1;
    bad.h = 0;
    bad.w = 5;
    bad.id = "bad";
    CHECK_THROWS_AS(
        (void)data::preprocess<float>(bad, data::descriptor_for("mnist32", "")),
        Error);
  }
  SUBCASE("grayscale source fills a 3-channel target by replication") {
    Rng rng(2);
    auto img = synth::make_texture(rng, 32, 1);
    auto t = data::preprocess<float>(img, data::descriptor_for("lsun64", ""));
    CHECK(t.shape == Shape{1, 3, 64, 64});
    for (Index i = 0; i < 64 * 64; ++i)
      CHECK(t.data[i] == t.data[64 * 64 + i]);
  }
}

TEST_CASE("batch iterator") {
  const std::string dir = fresh_dir("percad_iter");
  synth::make_digit_dataset(dir, 10, 0, 21);  // 100 train images
  auto ds = data::load_mnist_idx(dir);
  auto desc = data::descriptor_for("mnist32", dir);
  std::vector<Index> idx;
  for (Index i = 0; i < ds.size(); ++i) idx.push_back(i);
  REQUIRE(idx.size() == 100);

  SUBCASE("training mode drops the final partial batch") {
    data::BatchIterator<float> it(ds, desc, idx, 32, 5, true);
    CHECK(it.batches_per_epoch() == 3);
    Tensor<float> b;
    for (int k = 0; k < 3; ++k) {
      it.next(b);
      CHECK(b.shape.n == 32);
    }
    CHECK(it.epoch() == 0);
    it.next(b);  // rolls into a reshuffled epoch
    CHECK(it.epoch() == 1);
  }
  SUBCASE("evaluation mode covers every sample exactly once") {
    data::BatchIterator<float> it(ds, desc, idx, 32, 5, false);
    CHECK(it.batches_per_epoch() == 4);
    Tensor<float> b;
    std::vector<Index> ids, seen;
    int batches = 0;
    while (it.next(b, &ids)) {
      ++batches;
      seen.insert(seen.end(), ids.begin(), ids.end());
    }
    CHECK(batches == 4);
    CHECK(seen.size() == 100);
    std::set<Index> uniq(seen.begin(), seen.end());
    CHECK(uniq.size() == 100);
  }
  SUBCASE("same seed reproduces the batch order") {
    data::BatchIterator<float> a(ds, desc, idx, 16, 9, true);
    data::BatchIterator<float> b(ds, desc, idx, 16, 9, true);
    data::BatchIterator<float> c(ds, desc, idx, 16, 10, true);
    Tensor<float> ta, tb, tc;
    std::vector<Index> ia, ib, ic;
    bool any_diff = false;
    for (int k = 0; k < 5; ++k) {
      a.next(ta, &ia);
      b.next(tb, &ib);
      c.next(tc, &ic);
      CHECK(ia == ib);
      if (ia != ic) any_diff = true;
    }
    CHECK(any_diff);
  }
  SUBCASE("iterator state serializes and resumes") {
    data::BatchIterator<float> a(ds, desc, idx, 16, 9, true);
    Tensor<float> t;
    for (int k = 0; k < 7; ++k) a.next(t);
    io::BinWriter w;
    a.save(w);
    w.write_file(dir + "/iter_state.bin");
    data::BatchIterator<float> b(ds, desc, idx, 16, 1, true);
    auto r = io::BinReader::from_file(dir + "/iter_state.bin");
    b.load(r);
    std::vector<Index> ia, ib;
    for (int k = 0; k < 5; ++k) {
      a.next(t, &ia);
      b.next(t, &ib);
      CHECK(ia == ib);
    }
  }
  SUBCASE("empty selection is rejected") {
    CHECK_THROWS_WITH_AS(
        (data::BatchIterator<float>(ds, desc, {}, 8, 1, true)),
        doctest::Contains("empty collection"), Error);
  }
}

TEST_CASE("image folder datasets") {
  const std::string dir = fresh_dir("percad_folder");
  synth::make_texture_folder(dir, 6, 16, 3, 3);

  SUBCASE("unlabeled folder loads with all-normal labels") {
    auto ds = data::load_image_folder(dir);
    CHECK(ds.size() == 6);
    for (Index i = 0; i < ds.size(); ++i)
      CHECK(ds.labels[static_cast<size_t>(i)] == 0);
    CHECK_FALSE(ds.has_official_split());
  }
  SUBCASE("labels.csv assigns classes and missing entries fail") {
    {
      std::ofstream os(dir + "/labels.csv");
      for (int i = 0; i < 6; ++i)
        os << "tex000" << i << ".ppm," << (i % 2) << "\n";
    }
    auto ds = data::load_image_folder(dir);
    CHECK(ds.labels[1] == 1);
    CHECK(ds.labels[4] == 0);
    {
      std::ofstream os(dir + "/labels.csv");
      os << "tex0000.ppm,1\n";  // others missing
    }
    CHECK_THROWS_WITH_AS((void)data::load_image_folder(dir),
                         doctest::Contains("no entry"), DataError);
    fs::remove(dir + "/labels.csv");
  }
  SUBCASE("attributes.csv populates attribute columns") {
    {
      std::ofstream os(dir + "/attributes.csv");
      os << "name,glasses,hat\n";
      for (int i = 0; i < 6; ++i)
        os << "tex000" << i << ".ppm," << (i < 3 ? 1 : 0) << ",0\n";
    }
    auto ds = data::load_image_folder(dir);
    REQUIRE(ds.attr_names.size() == 2);
    CHECK(ds.attr_index("glasses") == 0);
    CHECK(ds.attrs[0][0] == 1);
    CHECK(ds.attrs[5][0] == 0);
    fs::remove(dir + "/attributes.csv");
  }
  SUBCASE("corrupt image names the offending file") {
    {
      std::ofstream os(dir + "/zzz_broken.ppm", std::ios::binary);
      os << "P6\n16 16\n255\nshort";
    }
    CHECK_THROWS_WITH_AS((void)data::load_image_folder(dir),
                         doctest::Contains("zzz_broken.ppm"), DataError);
    fs::remove(dir + "/zzz_broken.ppm");
  }
  SUBCASE("empty folder errors") {
    const std::string empty = fresh_dir("percad_folder_empty");
    CHECK_THROWS_WITH_AS((void)data::load_image_folder(empty),
                         doctest::Contains("empty corpus"), ConfigError);
  }
}

TEST_CASE("pnm codec round trip") {
  Rng rng(4);
  const std::string dir = fresh_dir("percad_pnm");
  for (Index c : {Index(1), Index(3)}) {
    auto img = synth::make_texture(rng, 9, c);
    const std::string path =
        dir + "/t" + std::to_string(c) + (c == 1 ? ".pgm" : ".ppm");
    data::write_pnm(img, path);
    auto back = data::read_pnm(path);
    CHECK(back.c == img.c);
    CHECK(back.h == img.h);
    CHECK(back.w == img.w);
    CHECK(back.pix == img.pix);
  }
}

TEST_CASE("dataset descriptors") {
  auto d = data::descriptor_for("celeba64", "/x");
  CHECK(d.center_crop == 140);
  CHECK(d.size == 64);
  CHECK(data::descriptor_for("cifar32", "/x").kind ==
        data::DatasetDescriptor::Kind::cifar_bin);
  CHECK_THROWS_AS((void)data::descriptor_for("imagenet", "/x"), ConfigError);
}

TEST_CASE("cifar binary loader") {
  const std::string dir = fresh_dir("percad_cifar");
  // two tiny batches in the 3073-byte record format
  auto write_batch = [&](const std::string& name, int n, int label_base) {
    std::ofstream os(dir + "/" + name, std::ios::binary);
    Rng rng(5);
    for (int i = 0; i < n; ++i) {
      char label = static_cast<char>((label_base + i) % 10);
      os.write(&label, 1);
      std::vector<char> pix(3072);
      for (auto& p : pix) p = static_cast<char>(rng.below(256));
      os.write(pix.data(), 3072);
    }
  };
  for (int b = 1; b <= 5; ++b)
    write_batch("data_batch_" + std::to_string(b) + ".bin", 4, b);
  write_batch("test_batch.bin", 6, 0);
  auto ds = data::load_cifar10_bin(dir);
  CHECK(ds.size() == 26);
  Index test = 0;
  for (Index i = 0; i < ds.size(); ++i)
    test += ds.in_test[static_cast<size_t>(i)];
  CHECK(test == 6);
  CHECK(ds.images[0].c == 3);
  CHECK(ds.images[0].h == 32);
}

TEST_CASE("shift_image clamps at the borders") {
  Rng rng(6);
  auto img = synth::make_texture(rng, 8, 1);
  auto moved = synth::shift_image(img, 2, 0);
  CHECK(moved.at(0, 3, 5) == img.at(0, 3, 3));
  CHECK(moved.at(0, 3, 0) == img.at(0, 3, 0));  // clamped edge
}
