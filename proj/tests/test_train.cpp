#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "percad/scoring.hpp"
#include "percad/synth.hpp"
#include "percad/train.hpp"
#include "testutil.hpp"

using namespace percad;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  std::string dir;
  data::Dataset ds;
  data::DatasetDescriptor desc;
  backbone::Backbone<float> bb;
  backbone::FilterStats stats;

  Fixture() {
    dir = (fs::temp_directory_path() / "percad_train_fix").string();
    if (!fs::exists(dir + "/train-images-idx3-ubyte"))
      synth::make_digit_dataset(dir, 6, 2, 1234);
    ds = data::load_mnist_idx(dir);
    desc = data::descriptor_for("mnist32", dir);
    bb = backbone::make_random_backbone<float>(1.0 / 16.0, 77);
    backbone::StatsAccumulator acc(bb.channel_count);
    for (Index i = 0; i < 12; ++i)
      acc.add(bb.features_nograd(
          data::preprocess<float>(ds.images[static_cast<size_t>(i)], desc)));
    stats = acc.finish();
    stats.layer_id = bb.layer_id;
    stats.weights_fingerprint = bb.fingerprint;
    stats.source_corpus = "fixture";
  }

  std::vector<Index> all_indices() const {
    std::vector<Index> idx(static_cast<size_t>(ds.size()));
    for (Index i = 0; i < ds.size(); ++i) idx[static_cast<size_t>(i)] = i;
    return idx;
  }

  train::TrainConfig config(std::int64_t iters) const {
    train::TrainConfig cfg;
    cfg.total_iters = iters;
    cfg.n_dis = 2;
    cfg.batch_size = 8;
    cfg.policy.n_weight = 3;
    cfg.seed = 5;
    cfg.checkpoint_period = 3;
    cfg.config_fingerprint = "fixturecfg";
    return cfg;
  }

  models::ModelBundle<float> bundle(std::uint64_t seed = 9) const {
    auto spec = models::ArchitectureSpec::for_profile("mnist32", 1, 0.125);
    return models::build_models<float>(spec, seed);
  }
};

std::vector<Tensor<float>> snapshot(nn::Network<float>& net) {
  std::vector<Tensor<float>> out;
  for (auto* p : net.params()) out.push_back(p->value);
  return out;
}

bool identical(const std::vector<Tensor<float>>& a,
               const std::vector<Tensor<float>>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if ((a[i].data - b[i].data).abs().maxCoeff() != 0.0f) return false;
  return true;
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("profile defaults") {
  CHECK(train::default_n_dis(32) == 2);
  CHECK(train::default_n_dis(64) == 3);
  train::TrainConfig cfg;
  CHECK(cfg.batch_size == 32);
  CHECK(cfg.lr_disc == doctest::Approx(0.0005));
  CHECK(cfg.lr_gen == doctest::Approx(0.0002));
  CHECK(cfg.adam_beta1 == doctest::Approx(0.5));
  CHECK(cfg.adam_beta2 == doctest::Approx(0.99));
  CHECK(cfg.gp_lambda == doctest::Approx(10.0));
  CHECK(cfg.drift_w == doctest::Approx(0.001));
  CHECK(cfg.policy.n_weight == 100);
}

TEST_CASE("schedule accounting") {
  Fixture fx;
  auto b = fx.bundle();
  data::BatchIterator<float> it(fx.ds, fx.desc, fx.all_indices(), 8, 5, true);

  SUBCASE("one iteration: n_dis critic rounds, one joint, policy at iter 0") {
    train::Trainer<float> tr(b, fx.bb, fx.stats, it, fx.config(1));
    int policy_fires = 0;
    tr.run([&](const train::StepRecord<float>& rec) {
      if (rec.policy_updated) ++policy_fires;
    });
    CHECK(tr.critic_x_updates() == 2);
    CHECK(tr.critic_z_updates() == 2);
    CHECK(tr.joint_updates() == 1);
    CHECK(policy_fires == 1);
    CHECK(tr.history().length("adv_g") == 1);
  }

  SUBCASE("N=7, n_weight=3: policy fires ceil(7/3) times, counts add up") {
    train::Trainer<float> tr(b, fx.bb, fx.stats, it, fx.config(7));
    int policy_fires = 0;
    std::int64_t steps_seen = 0;
    tr.run([&](const train::StepRecord<float>& rec) {
      if (rec.policy_updated) ++policy_fires;
      ++steps_seen;
      CHECK(std::isfinite(static_cast<double>(rec.loss.l_rec)));
    });
    CHECK(steps_seen == 7);
    CHECK(policy_fires == 3);  // iterations 0, 3, 6
    CHECK(tr.critic_x_updates() == 14);
    CHECK(tr.joint_updates() == 7);
  }
}

TEST_CASE("update isolation between critic and joint steps") {
  Fixture fx;
  auto b = fx.bundle();
  data::BatchIterator<float> it(fx.ds, fx.desc, fx.all_indices(), 8, 5, true);
  train::Trainer<float> tr(b, fx.bb, fx.stats, it, fx.config(4));

  Tensor<float> x;
  it.next(x);
  Rng zrng(3);
  auto z = models::sample_latent<float>(b.spec, x.shape.n, zrng);

  auto g0 = snapshot(b.generator), e0 = snapshot(b.encoder);
  (void)tr.step_critics(x, z);
  CHECK(identical(g0, snapshot(b.generator)));
  CHECK(identical(e0, snapshot(b.encoder)));

  auto dx0 = snapshot(b.critic_x), dz0 = snapshot(b.critic_z);
  (void)tr.step_joint(x, z);
  CHECK(identical(dx0, snapshot(b.critic_x)));
  CHECK(identical(dz0, snapshot(b.critic_z)));
  CHECK_FALSE(identical(g0, snapshot(b.generator)));
  CHECK_FALSE(identical(e0, snapshot(b.encoder)));
}

TEST_CASE("gradient accumulation equals the analytic weighted sum") {
  // d/dw [l_adv + gamma * l_rec] built in one backward pass must match the
  // accumulate-then-scale ordering the engine uses.
  Fixture fx;
  auto b = fx.bundle();
  const double gamma = 3.7;

  Tensor<float> x(Shape{4, 1, 32, 32});
  for (Index i = 0; i < 4; ++i) {
    auto t = data::preprocess<float>(fx.ds.images[static_cast<size_t>(i)],
                                     fx.desc);
    std::memcpy(x.sample_ptr(i), t.ptr(), sizeof(float) * t.size());
  }
  Rng zrng(8);
  auto z = models::sample_latent<float>(b.spec, 4, zrng);

  auto build_losses = [&] {
    auto fake = b.generator.forward(ad::Var<float>::leaf(z, false));
    auto l_adv = losses::adversarial_loss<float>(
        losses::critic_of(b.critic_x), x, fake);
    auto l_rec =
        losses::reconstruction_loss(b.generator, b.encoder, x, fx.bb,
                                    fx.stats);
    return std::pair{l_adv, l_rec};
  };

  const auto g_params = b.generator.params();

  b.generator.zero_grads();
  b.encoder.zero_grads();
  {
    auto [l_adv, l_rec] = build_losses();
    auto combined = ad::add(l_adv, ad::scale(l_rec, static_cast<float>(gamma)));
    nn::backward_into(combined, g_params);
  }
  std::vector<Tensor<float>> single_pass;
  for (auto* p : g_params) single_pass.push_back(p->grad);

  b.generator.zero_grads();
  b.encoder.zero_grads();
  {
    auto [l_adv, l_rec] = build_losses();
    nn::backward_into(l_rec, g_params);
    policy::apply_weight(g_params, gamma);
    nn::backward_into(l_adv, g_params);
  }
  for (size_t i = 0; i < g_params.size(); ++i) {
    const auto& a = single_pass[i].data;
    const auto& c = g_params[i]->grad.data;
    const double denom = std::max(1e-12f, a.abs().maxCoeff());
    CHECK((a - c).abs().maxCoeff() / denom < 1e-5);
  }
}

TEST_CASE("same seed reproduces the run bitwise") {
  Fixture fx;
  auto run_once = [&](std::uint64_t seed) {
    auto b = fx.bundle(seed);
    data::BatchIterator<float> it(fx.ds, fx.desc, fx.all_indices(), 8, seed,
                                  true);
    auto cfg = fx.config(3);
    cfg.seed = seed;
    train::Trainer<float> tr(b, fx.bb, fx.stats, it, cfg);
    tr.run();
    std::vector<Tensor<float>> all;
    for (auto* net : b.all())
      for (auto& t : snapshot(*net)) all.push_back(t);
    return all;
  };
  auto a = run_once(21), b2 = run_once(21), c = run_once(22);
  CHECK(identical(a, b2));
  CHECK_FALSE(identical(a, c));
}

TEST_CASE("checkpoint resume reproduces the uninterrupted trajectory") {
  Fixture fx;
  const std::string dir =
      (fs::temp_directory_path() / "percad_ckpt_test").string();
  fs::remove_all(dir);
  fs::create_directories(dir);

  // uninterrupted 6-iteration run
  const std::string dir_a = dir + "/a";
  fs::create_directories(dir_a);
  {
    auto b = fx.bundle();
    data::BatchIterator<float> it(fx.ds, fx.desc, fx.all_indices(), 8, 5,
                                  true);
    train::Trainer<float> tr(b, fx.bb, fx.stats, it, fx.config(6));
    tr.run({}, dir_a);
  }
  // run to 3, then resume from the saved state in fresh objects
  const std::string dir_b = dir + "/b";
  fs::create_directories(dir_b);
  {
    auto b = fx.bundle();
    data::BatchIterator<float> it(fx.ds, fx.desc, fx.all_indices(), 8, 5,
                                  true);
    train::Trainer<float> tr(b, fx.bb, fx.stats, it, fx.config(3));
    tr.run({}, dir_b);
  }
  {
    auto b = fx.bundle(777);  // different init; checkpoint must override
    data::BatchIterator<float> it(fx.ds, fx.desc, fx.all_indices(), 8, 999,
                                  true);
    train::Trainer<float> tr(b, fx.bb, fx.stats, it, fx.config(6));
    tr.load_checkpoint(dir_b + "/ckpt_00000003.bin");
    CHECK(tr.iteration() == 3);
    tr.run({}, dir_b);
  }
  const auto a6 = file_bytes(dir_a + "/ckpt_00000006.bin");
  const auto b6 = file_bytes(dir_b + "/ckpt_00000006.bin");
  REQUIRE(!a6.empty());
  CHECK(a6 == b6);
}

TEST_CASE("checkpoint header reads back and guards mismatches") {
  Fixture fx;
  const std::string dir =
      (fs::temp_directory_path() / "percad_ckpt_hdr").string();
  fs::create_directories(dir);
  auto b = fx.bundle();
  data::BatchIterator<float> it(fx.ds, fx.desc, fx.all_indices(), 8, 5, true);
  train::Trainer<float> tr(b, fx.bb, fx.stats, it, fx.config(1));
  tr.run({}, dir);

  const std::string path = dir + "/ckpt_00000001.bin";
  auto info = train::read_checkpoint_info(path);
  CHECK(info.iteration == 1);
  CHECK(info.profile == "mnist32");
  CHECK(info.config_fingerprint == "fixturecfg");
  CHECK(info.prior == "normal(0,1) iid 32x1x1");
  CHECK(info.width_multiplier == doctest::Approx(0.125));

  auto b2 = fx.bundle();
  data::BatchIterator<float> it2(fx.ds, fx.desc, fx.all_indices(), 8, 5,
                                 true);
  auto cfg2 = fx.config(2);
  cfg2.config_fingerprint = "differentcfg";
  train::Trainer<float> tr2(b2, fx.bb, fx.stats, it2, cfg2);
  CHECK_THROWS_WITH_AS(tr2.load_checkpoint(path),
                       doctest::Contains("fingerprint"), ConfigError);
}

TEST_CASE("non-finite network outputs abort with diagnostics") {
  Fixture fx;
  auto b = fx.bundle();
  data::BatchIterator<float> it(fx.ds, fx.desc, fx.all_indices(), 8, 5, true);
  train::Trainer<float> tr(b, fx.bb, fx.stats, it, fx.config(1));
  b.generator.params()[0]->value.data[0] =
      std::numeric_limits<float>::quiet_NaN();
  b.generator.refresh_leaves();
  Tensor<float> x;
  it.next(x);
  Rng zrng(2);
  auto z = models::sample_latent<float>(b.spec, x.shape.n, zrng);
  CHECK_THROWS_WITH_AS((void)tr.step_critics(x, z),
                       doctest::Contains("non-finite"), Error);
}

TEST_CASE("stats/backbone mismatch is rejected at construction") {
  Fixture fx;
  auto b = fx.bundle();
  data::BatchIterator<float> it(fx.ds, fx.desc, fx.all_indices(), 8, 5, true);
  auto wrong = fx.stats;
  wrong.weights_fingerprint = "0000000000000000";
  CHECK_THROWS_WITH_AS(
      (train::Trainer<float>(b, fx.bb, wrong, it, fx.config(1))),
      doctest::Contains("fingerprint"), Error);
}
