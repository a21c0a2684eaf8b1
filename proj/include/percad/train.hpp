#pragma once

#include <chrono>
#include <filesystem>
#include <functional>

#include "percad/data.hpp"
#include "percad/losses.hpp"
#include "percad/optim.hpp"
#include "percad/weight_policy.hpp"

// Alternating training: n_dis critic iterations (D_X on images, D_Z on
// latents), then one joint generator/encoder update with reconstruction
// gradients scaled by the policy weights. Every n_weight-th iteration the
// per-loss gradient histories are refreshed and the weights reselected
// before the joint update.
namespace percad::train {

inline constexpr const char* kCheckpointMagic = "PCCKPT1";

// Critic rounds per joint update: 2 at 32 px, 3 at 64 px.
inline int default_n_dis(Index image_size) { return image_size >= 64 ? 3 : 2; }

struct TrainConfig {
  std::int64_t total_iters = 5000;
  int n_dis = 2;  // see default_n_dis for the per-profile default
  Index batch_size = 32;
  double lr_disc = 0.0005;
  double lr_gen = 0.0002;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.99;
  double gp_lambda = 10.0;
  double drift_w = 0.001;
  policy::PolicyConfig policy;
  std::uint64_t seed = 1;
  std::int64_t checkpoint_period = 1000;
  std::string config_fingerprint;

  void validate() const {
    PERCAD_CHECK_ARG(total_iters >= 1 && n_dis >= 1 && batch_size >= 1,
                     "iterations, n_dis and batch_size must be >= 1");
    PERCAD_CHECK_ARG(lr_disc > 0 && lr_gen > 0, "learning rates must be > 0");
    PERCAD_CHECK_ARG(gp_lambda >= 0 && drift_w >= 0,
                     "regularizer weights must be >= 0");
  }
};

// Checkpoint header: everything needed to rebuild the bundle a
// checkpoint describes, plus the RNG stream states.
struct CheckpointInfo {
  std::string tool_version;
  std::string config_fingerprint;
  std::int64_t iteration = 0;
  double gamma_g = 1.0, gamma_e = 1.0;
  std::string profile;
  Index image_channels = 0, image_size = 0;
  Shape latent;
  double width_multiplier = 1.0;
  std::uint64_t init_seed = 0;
  std::string prior;
  std::string rng_latent_state, rng_gp_state;
};

inline CheckpointInfo read_checkpoint_header(io::BinReader& r,
                                             const std::string& path) {
  PERCAD_CHECK(r.str() == kCheckpointMagic, "not a checkpoint: " + path);
  CheckpointInfo info;
  info.tool_version = r.str();
  info.config_fingerprint = r.str();
  info.iteration = r.i64();
  info.gamma_g = r.f64();
  info.gamma_e = r.f64();
  info.profile = r.str();
  info.image_channels = r.i64();
  info.image_size = r.i64();
  info.latent = Shape{1, r.i64(), r.i64(), r.i64()};
  info.width_multiplier = r.f64();
  info.init_seed = r.u64();
  info.prior = r.str();
  info.rng_latent_state = r.str();
  info.rng_gp_state = r.str();
  return info;
}

inline CheckpointInfo read_checkpoint_info(const std::string& path) {
  io::BinReader r = io::BinReader::from_file(path);
  return read_checkpoint_header(r, path);
}

template <typename S>
struct StepRecord {
  std::int64_t iter = 0;
  losses::LossBreakdown<S> loss;
  double gamma_g = 1.0, gamma_e = 1.0;
  bool policy_updated = false;
  double wall_ms = 0.0;
};

template <typename S>
class Trainer {
 public:
  Trainer(models::ModelBundle<S>& bundle, const backbone::Backbone<S>& bb,
          const backbone::FilterStats& stats, data::BatchIterator<S>& batches,
          TrainConfig cfg)
      : bundle_(&bundle),
        bb_(&bb),
        stats_(&stats),
        data_(&batches),
        cfg_(std::move(cfg)),
        rng_latent_(Rng::derive(cfg_.seed, 101)),
        rng_gp_(Rng::derive(cfg_.seed, 102)) {
    cfg_.validate();
    backbone::validate_stats(stats, bb);
    adam_dx_ = optim::Adam<S>(cfg_.lr_disc, cfg_.adam_beta1, cfg_.adam_beta2);
    adam_dz_ = optim::Adam<S>(cfg_.lr_disc, cfg_.adam_beta1, cfg_.adam_beta2);
    adam_g_ = optim::Adam<S>(cfg_.lr_gen, cfg_.adam_beta1, cfg_.adam_beta2);
    adam_e_ = optim::Adam<S>(cfg_.lr_gen, cfg_.adam_beta1, cfg_.adam_beta2);
    adam_dx_.attach(bundle.critic_x.params());
    adam_dz_.attach(bundle.critic_z.params());
    adam_g_.attach(bundle.generator.params());
    adam_e_.attach(bundle.encoder.params());
    bundle.refresh_leaves();
  }

  std::int64_t iteration() const { return iteration_; }
  double gamma_g() const { return gamma_g_; }
  double gamma_e() const { return gamma_e_; }
  policy::GradHistory& history() { return history_; }
  std::int64_t critic_x_updates() const { return adam_dx_.steps(); }
  std::int64_t critic_z_updates() const { return adam_dz_.steps(); }
  std::int64_t joint_updates() const { return adam_g_.steps(); }

  // One critic round: update D_X on (x, G(z)) and D_Z on (z, E(x)).
  losses::LossBreakdown<S> step_critics(const Tensor<S>& x,
                                        const Tensor<S>& z) {
    losses::LossBreakdown<S> out;
    auto& b = *bundle_;

    const Tensor<S> fake_x = [&] {
      ad::NoGradGuard ng;
      return b.generator.forward(ad::constant(z)).val();
    }();
    Tensor<S> ux(Shape{x.shape.n, 1, 1, 1});
    rng_gp_.fill_uniform(ux, 0.0, 1.0);
    auto cx = losses::critic_loss<S>(losses::critic_of(b.critic_x), x, fake_x,
                                     static_cast<S>(cfg_.gp_lambda),
                                     static_cast<S>(cfg_.drift_w), ux);
    b.critic_x.zero_grads();
    nn::backward_into(cx.total, b.critic_x.params());
    adam_dx_.step();
    b.critic_x.refresh_leaves();

    const Tensor<S> fake_z = [&] {
      ad::NoGradGuard ng;
      return b.encoder.forward(ad::constant(x)).val();
    }();
    Tensor<S> uz(Shape{z.shape.n, 1, 1, 1});
    rng_gp_.fill_uniform(uz, 0.0, 1.0);
    auto cz = losses::critic_loss<S>(losses::critic_of(b.critic_z), z, fake_z,
                                     static_cast<S>(cfg_.gp_lambda),
                                     static_cast<S>(cfg_.drift_w), uz);
    b.critic_z.zero_grads();
    nn::backward_into(cz.total, b.critic_z.params());
    adam_dz_.step();
    b.critic_z.refresh_leaves();

    out.l_disc_x = cx.total.item();
    out.gp_x = cx.gp;
    out.drift_x = cx.drift;
    out.l_disc_z = cz.total.item();
    out.gp_z = cz.gp;
    out.drift_z = cz.drift;
    return out;
  }

  // One joint G/E update; reconstruction gradients first (scaled), then
  // adversarial gradients, then a single optimizer step per network.
  losses::LossBreakdown<S> step_joint(const Tensor<S>& x, const Tensor<S>& z,
                                      bool* policy_updated = nullptr) {
    auto& b = *bundle_;
    losses::LossBreakdown<S> out;

    auto fake_img = b.generator.forward(ad::Var<S>::leaf(z, false));
    auto l_adv_g =
        losses::adversarial_loss<S>(losses::critic_of(b.critic_x), x, fake_img);
    auto enc = b.encoder.forward(ad::constant(x));
    auto l_adv_e =
        losses::adversarial_loss<S>(losses::critic_of(b.critic_z), z, enc);
    auto l_rec = losses::reconstruction_loss(b.generator, b.encoder, x, *bb_,
                                             *stats_);

    const auto g_params = b.generator.params();
    const auto e_params = b.encoder.params();
    auto ge_params = g_params;
    ge_params.insert(ge_params.end(), e_params.begin(), e_params.end());

    if (policy_updated) *policy_updated = false;
    if (iteration_ % cfg_.policy.n_weight == 0) {
      zero_ge();
      nn::backward_into(l_adv_g, g_params);
      history_.record("adv_g", g_params, cfg_.policy.norm_kind);
      zero_ge();
      nn::backward_into(l_adv_e, e_params);
      history_.record("adv_e", e_params, cfg_.policy.norm_kind);
      zero_ge();
      nn::backward_into(l_rec, ge_params);
      history_.record("rec_g", g_params, cfg_.policy.norm_kind);
      history_.record("rec_e", e_params, cfg_.policy.norm_kind);
      gamma_g_ = policy::select_weight(history_.of("adv_g"),
                                       history_.of("rec_g"), cfg_.policy);
      gamma_e_ = policy::select_weight(history_.of("adv_e"),
                                       history_.of("rec_e"), cfg_.policy);
      if (policy_updated) *policy_updated = true;
    }

    zero_ge();
    nn::backward_into(l_rec, ge_params);
    policy::apply_weight(g_params, gamma_g_);
    policy::apply_weight(e_params, gamma_e_);
    nn::backward_into(l_adv_g, g_params);
    nn::backward_into(l_adv_e, e_params);
    adam_g_.step();
    adam_e_.step();
    b.generator.refresh_leaves();
    b.encoder.refresh_leaves();

    out.l_adv_g = l_adv_g.item();
    out.l_adv_e = l_adv_e.item();
    out.l_rec = l_rec.item();
    return out;
  }

  // Runs until cfg.total_iters, checkpointing periodically when a
  // directory is given.
  void run(const std::function<void(const StepRecord<S>&)>& on_step = {},
           const std::string& checkpoint_dir = "") {
    while (iteration_ < cfg_.total_iters) {
      const auto t0 = std::chrono::steady_clock::now();
      StepRecord<S> rec;
      rec.iter = iteration_;
      Tensor<S> x, z;
      for (int t = 0; t < cfg_.n_dis; ++t) {
        data_->next(x);
        z = models::sample_latent<S>(bundle_->spec, x.shape.n, rng_latent_);
        const auto cl = step_critics(x, z);
        rec.loss.l_disc_x = cl.l_disc_x;
        rec.loss.l_disc_z = cl.l_disc_z;
        rec.loss.gp_x = cl.gp_x;
        rec.loss.gp_z = cl.gp_z;
        rec.loss.drift_x = cl.drift_x;
        rec.loss.drift_z = cl.drift_z;
      }
      data_->next(x);
      z = models::sample_latent<S>(bundle_->spec, x.shape.n, rng_latent_);
      const auto jl = step_joint(x, z, &rec.policy_updated);
      rec.loss.l_adv_g = jl.l_adv_g;
      rec.loss.l_adv_e = jl.l_adv_e;
      rec.loss.l_rec = jl.l_rec;
      rec.loss.check_finite();
      rec.gamma_g = gamma_g_;
      rec.gamma_e = gamma_e_;
      ++iteration_;
      rec.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      if (on_step) on_step(rec);
      if (!checkpoint_dir.empty() &&
          (iteration_ % cfg_.checkpoint_period == 0 ||
           iteration_ == cfg_.total_iters))
        save_checkpoint(checkpoint_path(checkpoint_dir, iteration_));
    }
  }

  static std::string checkpoint_path(const std::string& dir,
                                     std::int64_t iter) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt_%08lld.bin",
                  static_cast<long long>(iter));
    return dir + "/" + buf;
  }

  void save_checkpoint(const std::string& path) const {
    io::BinWriter w;
    w.str(kCheckpointMagic);
    w.str(kToolVersion);
    w.str(cfg_.config_fingerprint);
    w.i64(iteration_);
    w.f64(gamma_g_);
    w.f64(gamma_e_);
    const auto& spec = bundle_->spec;
    w.str(spec.profile);
    w.i64(spec.image_channels);
    w.i64(spec.image_size);
    w.i64(spec.latent.c);
    w.i64(spec.latent.h);
    w.i64(spec.latent.w);
    w.f64(spec.width_multiplier);
    w.u64(bundle_->init_seed);
    w.str(models::latent_prior_descriptor(spec));
    w.str(rng_latent_.save());
    w.str(rng_gp_.save());
    for (auto* net : const_cast<models::ModelBundle<S>*>(bundle_)->all()) {
      auto params = net->params();
      w.u32(static_cast<std::uint32_t>(params.size()));
      for (auto* p : params) {
        w.str(p->name);
        w.tensor(p->value);
      }
    }
    adam_dx_.save(w);
    adam_dz_.save(w);
    adam_g_.save(w);
    adam_e_.save(w);
    history_.save(w);
    data_->save(w);
    w.write_file(path);
  }

  void load_checkpoint(const std::string& path) {
    io::BinReader r = io::BinReader::from_file(path);
    const CheckpointInfo info = read_checkpoint_header(r, path);
    if (!cfg_.config_fingerprint.empty() && !info.config_fingerprint.empty() &&
        info.config_fingerprint != cfg_.config_fingerprint)
      throw ConfigError("checkpoint config fingerprint " +
                        info.config_fingerprint +
                        " does not match current config " +
                        cfg_.config_fingerprint);
    PERCAD_CHECK(info.profile == bundle_->spec.profile,
                 "checkpoint profile " + info.profile +
                     " does not match bundle");
    PERCAD_CHECK(info.latent.chw() == bundle_->spec.latent.chw(),
                 "checkpoint latent shape mismatch");
    iteration_ = info.iteration;
    gamma_g_ = info.gamma_g;
    gamma_e_ = info.gamma_e;
    bundle_->init_seed = info.init_seed;
    rng_latent_.load(info.rng_latent_state);
    rng_gp_.load(info.rng_gp_state);
    for (auto* net : bundle_->all()) {
      auto params = net->params();
      const auto n = r.u32();
      PERCAD_CHECK(n == params.size(),
                   "checkpoint parameter count mismatch in " + net->name);
      for (auto* p : params) {
        const std::string name = r.str();
        PERCAD_CHECK(name == p->name, "checkpoint parameter order mismatch: " +
                                          name + " vs " + p->name);
        auto t = r.template tensor<S>();
        PERCAD_CHECK(t.shape == p->value.shape,
                     "checkpoint parameter shape mismatch: " + name);
        p->value = std::move(t);
      }
    }
    adam_dx_.load(r);
    adam_dz_.load(r);
    adam_g_.load(r);
    adam_e_.load(r);
    history_.load(r);
    data_->load(r);
    bundle_->refresh_leaves();
  }

 private:
  void zero_ge() {
    bundle_->generator.zero_grads();
    bundle_->encoder.zero_grads();
  }

  models::ModelBundle<S>* bundle_;
  const backbone::Backbone<S>* bb_;
  const backbone::FilterStats* stats_;
  data::BatchIterator<S>* data_;
  TrainConfig cfg_;
  Rng rng_latent_, rng_gp_;
  optim::Adam<S> adam_dx_, adam_dz_, adam_g_, adam_e_;
  policy::GradHistory history_;
  double gamma_g_ = 1.0, gamma_e_ = 1.0;
  std::int64_t iteration_ = 0;
};

// Restores network parameters only (enough for scoring/evaluation).
template <typename S>
void load_params_for_eval(models::ModelBundle<S>& bundle,
                          const std::string& path) {
  io::BinReader r = io::BinReader::from_file(path);
  (void)read_checkpoint_header(r, path);
  for (auto* net : bundle.all()) {
    auto params = net->params();
    const auto n = r.u32();
    PERCAD_CHECK(n == params.size(),
                 "checkpoint parameter count mismatch in " + net->name);
    for (auto* p : params) {
      const std::string name = r.str();
      PERCAD_CHECK(name == p->name,
                   "checkpoint parameter order mismatch: " + name);
      auto t = r.template tensor<S>();
      PERCAD_CHECK(t.shape == p->value.shape,
                   "checkpoint parameter shape mismatch: " + name);
      p->value = std::move(t);
    }
  }
  bundle.refresh_leaves();
}

}  // namespace percad::train
