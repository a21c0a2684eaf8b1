#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "percad/eval.hpp"
#include "percad/scoring.hpp"
#include "percad/synth.hpp"
#include "testutil.hpp"

using namespace percad;
using eval::Protocol;
using eval::ScoreRecord;

namespace {

// Independent O(n^2) oracle with explicit tie credit.
double pairwise_auc(const std::vector<ScoreRecord>& records) {
  double credit = 0;
  Index n_pos = 0, n_neg = 0;
  for (const auto& a : records) {
    if (a.label == 1) {
      ++n_pos;
      for (const auto& b : records) {
        if (b.label != 0) continue;
        if (a.score > b.score)
          credit += 1.0;
        else if (a.score == b.score)
          credit += 0.5;
      }
    } else {
      ++n_neg;
    }
  }
  return credit / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<ScoreRecord> records_from(std::initializer_list<double> normal,
                                      std::initializer_list<double> anomaly) {
  std::vector<ScoreRecord> out;
  int i = 0;
  for (double s : normal) out.push_back({"n" + std::to_string(i++), s, 0});
  for (double s : anomaly) out.push_back({"a" + std::to_string(i++), s, 1});
  return out;
}

data::Dataset toy_dataset(Index n_per_class, int classes, bool with_split) {
  data::Dataset ds;
  ds.name = "toy";
  Rng rng(7);
  for (int c = 0; c < classes; ++c)
    for (Index i = 0; i < n_per_class; ++i) {
      data::RawImage img;
      img.c = 1;
      img.h = img.w = 4;
      img.pix.assign(16, static_cast<std::uint8_t>(rng.below(256)));
      img.id = "c" + std::to_string(c) + "_" + std::to_string(i);
      ds.images.push_back(std::move(img));
      ds.labels.push_back(c);
      if (with_split) ds.in_test.push_back(i % 5 == 4 ? 1 : 0);
    }
  return ds;
}

}  // namespace

TEST_CASE("roc auc hand cases") {
  CHECK(eval::roc_auc(records_from({0.1, 0.4}, {0.35, 0.8})) ==
        doctest::Approx(0.75));
  CHECK(eval::roc_auc(records_from({0.1, 0.2, 0.3}, {0.5, 0.6})) == 1.0);
  CHECK(eval::roc_auc(records_from({0.5}, {0.5})) == 0.5);  // pure tie
  CHECK_THROWS_AS((void)eval::roc_auc(records_from({0.1, 0.2}, {})), Error);
}

TEST_CASE("estimator matches the exhaustive pairwise oracle exactly") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 10 + static_cast<Index>(rng.below(190));
    std::vector<ScoreRecord> recs;
    Index n_pos = 0;
    for (Index i = 0; i < n; ++i) {
      ScoreRecord r;
      r.sample_id = std::to_string(i);
      // coarse grid forces plenty of ties
      r.score = static_cast<double>(rng.below(12)) / 4.0;
      r.label = rng.uniform() < 0.4 ? 1 : 0;
      n_pos += r.label;
      recs.push_back(std::move(r));
    }
    if (n_pos == 0 || n_pos == n) continue;
    CHECK(eval::roc_auc(recs) == pairwise_auc(recs));  // exact, ties included
  }
}

TEST_CASE("monotone transform invariance and label complement") {
  Rng rng(12);
  std::vector<ScoreRecord> recs;
  for (int i = 0; i < 60; ++i)
    recs.push_back({std::to_string(i), rng.normal(), i % 3 == 0 ? 1 : 0});
  const double base = eval::roc_auc(recs);

  auto transformed = recs;
  for (size_t i = 0; i < recs.size(); ++i)
    transformed[i].score = std::exp(recs[i].score);  // strictly increasing
  CHECK(eval::roc_auc(transformed) == doctest::Approx(base).epsilon(1e-12));

  auto flipped = recs;
  for (auto& r : flipped) r.label = 1 - r.label;
  CHECK(eval::roc_auc(flipped) == doctest::Approx(1.0 - base).epsilon(1e-12));
}

TEST_CASE("random labels give AUC near one half") {
  Rng rng(13);
  std::vector<ScoreRecord> recs;
  Index n_pos = 0, n_neg = 0;
  for (int i = 0; i < 400; ++i) {
    ScoreRecord r{std::to_string(i), rng.normal(), rng.uniform() < 0.5 ? 1 : 0};
    n_pos += r.label;
    n_neg += 1 - r.label;
    recs.push_back(std::move(r));
  }
  const double sigma = std::sqrt((n_pos + n_neg + 1.0) /
                                 (12.0 * n_pos * n_neg));
  CHECK(std::abs(eval::roc_auc(recs) - 0.5) < 3.0 * sigma);
}

TEST_CASE("one_vs_all split") {
  auto ds = toy_dataset(20, 3, true);
  eval::SplitSpec spec;
  spec.protocol = Protocol::one_vs_all;
  spec.normal_class = 1;
  auto split = eval::make_protocol_split(ds, spec);

  for (Index i : split.train) {
    CHECK(ds.labels[static_cast<size_t>(i)] == 1);
    CHECK(ds.in_test[static_cast<size_t>(i)] == 0);
  }
  CHECK(split.train.size() == 16);  // 20 per class, every 5th held out
  CHECK(split.test.size() == 12);   // all official test images
  for (size_t k = 0; k < split.test.size(); ++k) {
    const Index i = split.test[k];
    CHECK(split.test_labels[k] ==
          (ds.labels[static_cast<size_t>(i)] == 1 ? 0 : 1));
  }
  spec.normal_class = 9;
  CHECK_THROWS_WITH_AS((void)eval::make_protocol_split(ds, spec),
                       doctest::Contains("unknown normal class"), Error);
}

TEST_CASE("80/20 split counts and determinism") {
  auto ds = toy_dataset(100, 1, false);
  // add 500 anomaly instances of class 1
  {
    auto extra = toy_dataset(500, 1, false);
    for (auto& img : extra.images) ds.images.push_back(img);
    for (Index i = 0; i < 500; ++i) ds.labels.push_back(1);
  }
  eval::SplitSpec spec;
  spec.protocol = Protocol::split_80_20;
  spec.normal_class = 0;
  spec.seed = 3;
  auto s1 = eval::make_protocol_split(ds, spec);
  CHECK(s1.train.size() == 80);
  CHECK(s1.test.size() == 40);  // 20 normal + 20 anomaly
  Index n_norm = 0, n_anom = 0;
  for (int l : s1.test_labels) (l == 0 ? n_norm : n_anom) += 1;
  CHECK(n_norm == 20);
  CHECK(n_anom == 20);
  for (Index i : s1.train) CHECK(ds.labels[static_cast<size_t>(i)] == 0);

  auto s2 = eval::make_protocol_split(ds, spec);
  CHECK(s1.train == s2.train);
  CHECK(s1.test == s2.test);
  spec.seed = 4;
  auto s3 = eval::make_protocol_split(ds, spec);
  CHECK(s1.train != s3.train);
}

TEST_CASE("80/20 split requires enough anomalies") {
  auto ds = toy_dataset(100, 1, false);
  for (Index i = 0; i < 5; ++i) {
    ds.images.push_back(ds.images[static_cast<size_t>(i)]);
    ds.labels.push_back(1);
  }
  eval::SplitSpec spec;
  spec.protocol = Protocol::split_80_20;
  spec.normal_class = 0;
  CHECK_THROWS_WITH_AS((void)eval::make_protocol_split(ds, spec),
                       doctest::Contains("insufficient anomaly"), Error);
}

TEST_CASE("attribute split") {
  auto ds = toy_dataset(60, 1, false);
  ds.attr_names = {"marker", "other"};
  Rng rng(5);
  for (Index i = 0; i < ds.size(); ++i)
    ds.attrs.push_back({static_cast<std::uint8_t>(i % 3 == 0 ? 1 : 0), 0});
  eval::SplitSpec spec;
  spec.protocol = Protocol::attribute_split;
  spec.attribute = "marker";
  spec.seed = 6;
  auto split = eval::make_protocol_split(ds, spec);
  for (Index i : split.train)
    CHECK(ds.attrs[static_cast<size_t>(i)][0] == 0);
  Index n_norm = 0, n_anom = 0;
  for (size_t k = 0; k < split.test.size(); ++k) {
    if (split.test_labels[k] == 0) {
      CHECK(ds.attrs[static_cast<size_t>(split.test[k])][0] == 0);
      ++n_norm;
    } else {
      CHECK(ds.attrs[static_cast<size_t>(split.test[k])][0] == 1);
      ++n_anom;
    }
  }
  CHECK(n_norm == n_anom);
  spec.attribute = "missing";
  CHECK_THROWS_WITH_AS((void)eval::make_protocol_split(ds, spec),
                       doctest::Contains("unknown attribute"), Error);
}

TEST_CASE("report and score csv round trips") {
  const std::string dir =
      (std::filesystem::temp_directory_path() / "percad_eval").string();
  std::filesystem::create_directories(dir);
  eval::EvalReport rep;
  rep.protocol = "one_vs_all";
  rep.normal_class = "1";
  rep.scorer = "rel_perc_l1";
  rep.roc_auc = 0.973251;
  rep.n_normal = 200;
  rep.n_anomaly = 1800;
  rep.seed = 42;
  rep.config_fingerprint = "cafe0123cafe0123";
  rep.tool_version = kToolVersion;
  rep.checkpoint_ref = "ckpt_00005000.bin";
  rep.checkpoint_iteration = 5000;
  eval::write_report(rep, dir + "/report.txt");
  auto back = eval::read_report(dir + "/report.txt");
  CHECK(back.protocol == rep.protocol);
  CHECK(back.roc_auc == doctest::Approx(rep.roc_auc));
  CHECK(back.n_anomaly == rep.n_anomaly);
  CHECK(back.config_fingerprint == rep.config_fingerprint);
  CHECK(back.checkpoint_iteration == 5000);

  eval::write_scores_csv(records_from({0.25}, {0.5}), dir + "/scores.csv");
  std::ifstream is(dir + "/scores.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line == "sample_id,score,label");
  std::getline(is, line);
  CHECK(line == "n0,0.25,0");
}

TEST_CASE("anomaly scoring") {
  auto bb = backbone::make_stub_backbone<float>(3, 4, 91);
  Rng rng(9);
  data::DatasetDescriptor d;
  d.channels = 1;
  d.size = 8;
  backbone::StatsAccumulator acc(bb.channel_count);
  for (int i = 0; i < 5; ++i)
    acc.add(bb.features_nograd(
        data::preprocess<float>(synth::make_texture(rng, 8, 1), d)));
  auto st = acc.finish();
  st.layer_id = bb.layer_id;
  st.weights_fingerprint = bb.fingerprint;

  // identity bundle: empty G/E pass images through untouched
  models::ModelBundle<float> bundle;
  bundle.spec = models::ArchitectureSpec::for_profile("mnist32", 1);
  const Shape img{1, 1, 8, 8};
  bundle.generator.name = "g";
  bundle.generator.input_shape = img;
  bundle.generator.output_shape = img;
  bundle.encoder.name = "e";
  bundle.encoder.input_shape = img;
  bundle.encoder.output_shape = img;

  auto x = data::preprocess<float>(synth::make_texture(rng, 8, 1), d);

  SUBCASE("perfect reconstruction scores zero; scoring is deterministic") {
    const double s1 = scoring::anomaly_score(bundle, bb, st, x);
    CHECK(s1 == doctest::Approx(0.0).epsilon(1e-12));
    for (metrics::MetricKind k :
         {metrics::MetricKind::mse, metrics::MetricKind::pixel_l1,
          metrics::MetricKind::perceptual, metrics::MetricKind::perc_l1}) {
      CHECK(scoring::anomaly_score(bundle, bb, st, x, k) ==
            doctest::Approx(0.0).epsilon(1e-12));
    }
    CHECK(scoring::anomaly_score(bundle, bb, st, x) ==
          scoring::anomaly_score(bundle, bb, st, x));
  }

  SUBCASE("batch composition does not change scores") {
    Tensor<float> three(Shape{3, 1, 8, 8});
    std::vector<Tensor<float>> singles;
    for (Index i = 0; i < 3; ++i) {
      singles.push_back(
          data::preprocess<float>(synth::make_texture(rng, 8, 1), d));
      std::memcpy(three.sample_ptr(i), singles.back().ptr(),
                  sizeof(float) * 64);
    }
    // non-trivial reconstruction: scale images by 0.9 through a 1x1 conv
    Rng wr(1);
    auto conv = nn::Conv<float>::make("g.s", 1, 1, 1, 0, 0.2, wr);
    conv.w.value.data.setConstant(0.9f);
    conv.b.value.data.setZero();
    bundle.generator.layers.push_back(std::move(conv));
    bundle.generator.refresh_leaves();

    const auto batched =
        scoring::score_batch(bundle, bb, st, three,
                             metrics::MetricKind::rel_perc_l1);
    for (Index i = 0; i < 3; ++i) {
      const double solo = scoring::anomaly_score(bundle, bb, st, singles[i]);
      CHECK(solo == batched[static_cast<size_t>(i)]);
    }
  }

  SUBCASE("score_split covers every index in order") {
    data::Dataset ds;
    ds.name = "toy";
    for (int i = 0; i < 5; ++i) {
      ds.images.push_back(synth::make_texture(rng, 8, 1));
      ds.images.back().id = "img" + std::to_string(i);
      ds.labels.push_back(0);
    }
    std::vector<Index> idx{0, 2, 4};
    std::vector<int> labels{0, 1, 0};
    auto recs = scoring::score_split(bundle, bb, st, ds, d, idx, labels,
                                     metrics::MetricKind::rel_perc_l1, 2);
    REQUIRE(recs.size() == 3);
    CHECK(recs[0].sample_id == "img0");
    CHECK(recs[1].sample_id == "img2");
    CHECK(recs[1].label == 1);
    CHECK(recs[2].sample_id == "img4");
  }
}
