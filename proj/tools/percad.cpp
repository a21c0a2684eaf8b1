// Command-line surface: calibration, training, scoring, evaluation,
// ablations and contrast reports, driven by one INI config file.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "percad/config.hpp"
#include "percad/scoring.hpp"
#include "percad/synth.hpp"
#include "percad/train.hpp"

namespace fs = std::filesystem;
using namespace percad;

namespace {

using Scalar = float;

struct CliArgs {
  std::string config_path;
  std::string checkpoint;
  std::string out_override;
  std::int64_t seed_override = -1;
  bool deterministic = false;
};

config::ExperimentConfig load_config(const CliArgs& args) {
  auto cfg = config::ExperimentConfig::load(args.config_path);
  if (args.seed_override >= 0)
    cfg.seed = static_cast<std::uint64_t>(args.seed_override);
  if (!args.out_override.empty()) cfg.output_dir = args.out_override;
  if (args.deterministic) cfg.deterministic = true;
  kernels::set_threads(cfg.deterministic ? 1 : cfg.threads);
  Eigen::setNbThreads(1);
  fs::create_directories(cfg.output_dir);
  return cfg;
}

std::string provenance_of(const config::ExperimentConfig& cfg) {
  return std::string("percad ") + kToolVersion + " config " + cfg.fingerprint;
}

std::string stats_path_of(const config::ExperimentConfig& cfg) {
  return cfg.stats_path.empty() ? cfg.output_dir + "/backbone.stats"
                                : cfg.stats_path;
}

backbone::Backbone<Scalar> load_bb(const config::ExperimentConfig& cfg) {
  PERCAD_CHECK_ARG(!cfg.backbone_weights.empty(),
                   "backbone.weights is required for this command");
  PERCAD_CHECK_ARG(fs::exists(cfg.backbone_weights),
                   "missing backbone weights file: " + cfg.backbone_weights);
  return backbone::load_backbone<Scalar>(cfg.backbone_weights,
                                         cfg.backbone_layer);
}

backbone::FilterStats load_stats(const config::ExperimentConfig& cfg,
                                 const backbone::Backbone<Scalar>& bb) {
  const std::string path = stats_path_of(cfg);
  PERCAD_CHECK_ARG(fs::exists(path),
                   "missing stats file " + path + " (run the stats command)");
  auto st = backbone::load_stats_file(path);
  backbone::validate_stats(st, bb);
  return st;
}

eval::SplitSpec split_spec(const config::ExperimentConfig& cfg) {
  eval::SplitSpec spec;
  spec.protocol = eval::protocol_from_string(cfg.protocol);
  spec.normal_class = cfg.normal_class;
  spec.attribute = cfg.attribute;
  spec.seed = cfg.seed;
  return spec;
}

models::ArchitectureSpec model_spec(const config::ExperimentConfig& cfg) {
  auto spec = models::ArchitectureSpec::for_profile(
      cfg.model_profile, cfg.image_channels, cfg.width_multiplier);
  if (!cfg.latent_override.empty()) {
    Index c = 0, h = 1, w = 1;
    if (std::sscanf(cfg.latent_override.c_str(), "%ldx%ldx%ld", &c, &h, &w) <
        1)
      throw ConfigError("model.latent must look like CxHxW");
    spec.latent = Shape{1, c, h, w};
  }
  return spec;
}

train::TrainConfig train_config(const config::ExperimentConfig& cfg,
                                const models::ArchitectureSpec& spec) {
  train::TrainConfig tc;
  tc.total_iters = cfg.iters;
  tc.n_dis = cfg.n_dis > 0 ? cfg.n_dis
                         : train::default_n_dis(spec.image_size);
  tc.batch_size = cfg.batch_size;
  tc.lr_disc = cfg.lr_disc;
  tc.lr_gen = cfg.lr_gen;
  tc.adam_beta1 = cfg.adam_beta1;
  tc.adam_beta2 = cfg.adam_beta2;
  tc.gp_lambda = cfg.gp_lambda;
  tc.drift_w = cfg.drift_weight;
  tc.policy.n_weight = cfg.n_weight;
  tc.policy.history_window = cfg.history_window;
  tc.policy.smoothing = cfg.smoothing;
  tc.policy.norm_kind = policy::norm_kind_from_string(cfg.norm_kind);
  tc.seed = cfg.seed;
  tc.checkpoint_period = cfg.checkpoint_period;
  tc.config_fingerprint = cfg.fingerprint;
  return tc;
}

std::string resolve_checkpoint(const config::ExperimentConfig& cfg,
                               const std::string& flag) {
  if (!flag.empty()) {
    PERCAD_CHECK_ARG(fs::exists(flag), "missing checkpoint: " + flag);
    return flag;
  }
  const std::string marker = cfg.output_dir + "/latest";
  std::ifstream is(marker);
  std::string name;
  if (is.good()) std::getline(is, name);
  PERCAD_CHECK_ARG(!name.empty(),
                   "no --checkpoint given and no latest marker in " +
                       cfg.output_dir);
  const std::string path = cfg.output_dir + "/" + name;
  PERCAD_CHECK_ARG(fs::exists(path), "missing checkpoint: " + path);
  return path;
}

// Rebuilds the trained bundle a checkpoint describes and loads its
// parameters; refuses silently-wrong evaluations.
models::ModelBundle<Scalar> bundle_from_checkpoint(
    const config::ExperimentConfig& cfg, const std::string& path,
    train::CheckpointInfo* info_out = nullptr) {
  auto info = train::read_checkpoint_info(path);
  if (info.config_fingerprint != cfg.fingerprint) {
    // different config file: insist that the parts that matter agree
    auto here = models::ArchitectureSpec::for_profile(
        cfg.model_profile, cfg.image_channels, cfg.width_multiplier);
    if (here.profile != info.profile ||
        here.image_size != info.image_size ||
        here.image_channels != info.image_channels)
      throw ConfigError(
          "checkpoint " + path + " was trained with profile " + info.profile +
          " (" + std::to_string(info.image_channels) + "ch@" +
          std::to_string(info.image_size) +
          "px) and does not match this config");
  }
  auto spec = models::ArchitectureSpec::for_profile(
      info.profile, info.image_channels, info.width_multiplier);
  spec.latent = info.latent;
  auto bundle = models::build_models<Scalar>(spec, info.init_seed);
  train::load_params_for_eval(bundle, path);
  if (info_out) *info_out = info;
  return bundle;
}

data::DatasetDescriptor descriptor(const config::ExperimentConfig& cfg) {
  PERCAD_CHECK_ARG(!cfg.dataset_path.empty(), "dataset.path is required");
  return data::descriptor_for(cfg.dataset_profile, cfg.dataset_path);
}

// ---------------------------------------------------------------------------

int cmd_stats(const CliArgs& args) {
  auto cfg = load_config(args);
  auto bb = load_bb(cfg);

  data::Dataset corpus;
  std::string corpus_id;
  data::DatasetDescriptor desc;
  if (!cfg.calib_corpus.empty()) {
    corpus = data::load_image_folder(cfg.calib_corpus);
    desc = descriptor(cfg);
    desc.channels = 0;  // keep the corpus channels; extraction replicates
    corpus_id = "folder:" + cfg.calib_corpus;
  } else {
    desc = descriptor(cfg);
    corpus = data::load_dataset(desc);
    corpus_id = corpus.name;
  }

  Index next_idx = 0;
  auto st = backbone::calibrate_stats<Scalar>(
      bb,
      [&]() -> std::optional<Tensor<Scalar>> {
        while (next_idx < corpus.size()) {
          const Index i = next_idx++;
          if (!corpus.in_test.empty() &&
              corpus.in_test[static_cast<size_t>(i)])
            continue;  // calibrate on the training portion only
          return data::preprocess<Scalar>(
              corpus.images[static_cast<size_t>(i)], desc);
        }
        return std::nullopt;
      },
      cfg.calib_max_samples, corpus_id, cfg.calib_min_samples);

  st.tool_version = kToolVersion;
  st.config_fingerprint = cfg.fingerprint;
  const std::string out = stats_path_of(cfg);
  backbone::write_stats_file(st, out);

  ArrayX<double> sorted = st.sigma;
  std::sort(sorted.data(), sorted.data() + sorted.size());
  std::printf("calibrated %lld filters over %lld samples from %s\n",
              static_cast<long long>(st.channels()),
              static_cast<long long>(st.sample_count), corpus_id.c_str());
  std::printf("filter std: min %.5g  median %.5g  max %.5g\n",
              sorted[0], sorted[sorted.size() / 2],
              sorted[sorted.size() - 1]);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_train(const CliArgs& args) {
  auto cfg = load_config(args);
  auto spec = model_spec(cfg);  // profile errors surface before any IO
  auto bb = load_bb(cfg);
  auto st = load_stats(cfg, bb);
  auto desc = descriptor(cfg);
  auto ds = data::load_dataset(desc);
  auto split = eval::make_protocol_split(ds, split_spec(cfg));
  PERCAD_CHECK(!split.train.empty(), "protocol produced an empty train set");

  auto bundle = models::build_models<Scalar>(spec, cfg.seed);
  std::printf("profile %s | params G=%lld E=%lld Dx=%lld Dz=%lld\n",
              spec.str().c_str(),
              static_cast<long long>(bundle.generator.param_count()),
              static_cast<long long>(bundle.encoder.param_count()),
              static_cast<long long>(bundle.critic_x.param_count()),
              static_cast<long long>(bundle.critic_z.param_count()));

  data::BatchIterator<Scalar> it(ds, desc, split.train,
                                 cfg.batch_size, cfg.seed, true);
  train::Trainer<Scalar> tr(bundle, bb, st, it, train_config(cfg, spec));
  if (!args.checkpoint.empty()) {
    tr.load_checkpoint(args.checkpoint);
    std::printf("resumed from %s at iteration %lld\n",
                args.checkpoint.c_str(),
                static_cast<long long>(tr.iteration()));
  }

  const std::string log_path = cfg.output_dir + "/train_log.csv";
  std::ofstream log(log_path,
                    tr.iteration() > 0 ? std::ios::app : std::ios::trunc);
  PERCAD_CHECK(log.good(), "cannot open " + log_path);
  if (tr.iteration() == 0)
    log << "# " << provenance_of(cfg) << "\n"
        << "iter,l_disc_x,l_disc_z,l_adv_g,l_adv_e,l_rec,gp_x,gp_z,"
           "drift_x,drift_z,gamma_g,gamma_e,wall_ms\n";

  tr.run(
      [&](const train::StepRecord<Scalar>& rec) {
        const auto& l = rec.loss;
        char line[320];
        std::snprintf(line, sizeof line,
                      "%lld,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,"
                      "%.6g,%.6g,%.1f\n",
                      static_cast<long long>(rec.iter),
                      static_cast<double>(l.l_disc_x),
                      static_cast<double>(l.l_disc_z),
                      static_cast<double>(l.l_adv_g),
                      static_cast<double>(l.l_adv_e),
                      static_cast<double>(l.l_rec),
                      static_cast<double>(l.gp_x),
                      static_cast<double>(l.gp_z),
                      static_cast<double>(l.drift_x),
                      static_cast<double>(l.drift_z), rec.gamma_g,
                      rec.gamma_e, rec.wall_ms);
        log << line;
        if ((rec.iter + 1) % 100 == 0) {
          std::printf("iter %lld  rec %.4f  adv_g %.4f  gamma_g %.3g\n",
                      static_cast<long long>(rec.iter + 1),
                      static_cast<double>(l.l_rec),
                      static_cast<double>(l.l_adv_g), rec.gamma_g);
          std::fflush(stdout);
          log.flush();
        }
      },
      cfg.output_dir);

  const std::string last =
      fs::path(train::Trainer<Scalar>::checkpoint_path(cfg.output_dir,
                                                       tr.iteration()))
          .filename()
          .string();
  std::ofstream marker(cfg.output_dir + "/latest", std::ios::trunc);
  marker << last << "\n";
  std::printf("trained to iteration %lld; latest -> %s\n",
              static_cast<long long>(tr.iteration()), last.c_str());
  return 0;
}

eval::EvalReport evaluate_with_scorer(const config::ExperimentConfig& cfg,
                                      const models::ModelBundle<Scalar>& bundle,
                                      const train::CheckpointInfo& info,
                                      const backbone::Backbone<Scalar>& bb,
                                      const backbone::FilterStats& st,
                                      const data::Dataset& ds,
                                      const data::DatasetDescriptor& desc,
                                      const eval::Split& split,
                                      metrics::MetricKind scorer,
                                      const std::string& checkpoint_path) {
  auto records =
      scoring::score_split(bundle, bb, st, ds, desc, split.test,
                           split.test_labels, scorer, cfg.batch_size);
  eval::EvalReport rep;
  rep.protocol = cfg.protocol;
  rep.normal_class = cfg.protocol == "attribute_split"
                         ? cfg.attribute
                         : std::to_string(cfg.normal_class);
  rep.scorer = metrics::to_string(scorer);
  rep.roc_auc = eval::roc_auc(records);
  for (int l : split.test_labels) (l == 0 ? rep.n_normal : rep.n_anomaly) += 1;
  rep.seed = cfg.seed;
  rep.config_fingerprint = cfg.fingerprint;
  rep.tool_version = kToolVersion;
  rep.checkpoint_ref = fs::path(checkpoint_path).filename().string();
  rep.checkpoint_iteration = info.iteration;
  if (cfg.write_scores)
    eval::write_scores_csv(records,
                           cfg.output_dir + "/scores_" + rep.scorer + ".csv",
                           provenance_of(cfg));
  return rep;
}

int cmd_eval(const CliArgs& args) {
  auto cfg = load_config(args);
  const std::string ckpt = resolve_checkpoint(cfg, args.checkpoint);
  auto bb = load_bb(cfg);
  auto st = load_stats(cfg, bb);
  auto desc = descriptor(cfg);
  auto ds = data::load_dataset(desc);
  auto split = eval::make_protocol_split(ds, split_spec(cfg));
  train::CheckpointInfo info;
  auto bundle = bundle_from_checkpoint(cfg, ckpt, &info);

  auto rep = evaluate_with_scorer(cfg, bundle, info, bb, st, ds, desc, split,
                                  metrics::metric_from_string(cfg.scorer),
                                  ckpt);
  eval::write_report(rep, cfg.output_dir + "/eval_report.txt");
  std::printf("protocol %s normal=%s scorer=%s n=%lld+%lld ROC_AUC=%.4f\n",
              rep.protocol.c_str(), rep.normal_class.c_str(),
              rep.scorer.c_str(), static_cast<long long>(rep.n_normal),
              static_cast<long long>(rep.n_anomaly), rep.roc_auc);
  return 0;
}

int cmd_ablate(const CliArgs& args) {
  auto cfg = load_config(args);
  const std::string ckpt = resolve_checkpoint(cfg, args.checkpoint);
  auto bb = load_bb(cfg);
  auto st = load_stats(cfg, bb);
  auto desc = descriptor(cfg);
  auto ds = data::load_dataset(desc);
  auto split = eval::make_protocol_split(ds, split_spec(cfg));
  train::CheckpointInfo info;
  auto bundle = bundle_from_checkpoint(cfg, ckpt, &info);

  const std::string out = cfg.output_dir + "/ablate_report.txt";
  std::ofstream os(out, std::ios::trunc);
  os << "percad-ablate 1\n"
     << "tool_version " << kToolVersion << "\n"
     << "checkpoint " << fs::path(ckpt).filename().string() << "\n"
     << "config_fingerprint " << cfg.fingerprint << "\n";
  for (metrics::MetricKind k :
       {metrics::MetricKind::mse, metrics::MetricKind::pixel_l1,
        metrics::MetricKind::perceptual, metrics::MetricKind::perc_l1,
        metrics::MetricKind::rel_perc_l1}) {
    auto rep =
        evaluate_with_scorer(cfg, bundle, info, bb, st, ds, desc, split, k,
                             ckpt);
    eval::write_report(rep, cfg.output_dir + "/eval_report_" +
                                metrics::to_string(k) + ".txt");
    char line[64];
    std::snprintf(line, sizeof line, "%s %.6f", metrics::to_string(k),
                  rep.roc_auc);
    os << line << "\n";
    std::printf("scorer %-12s ROC_AUC %.4f\n", metrics::to_string(k),
                rep.roc_auc);
  }
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_score(const CliArgs& args) {
  auto cfg = load_config(args);
  const std::string ckpt = resolve_checkpoint(cfg, args.checkpoint);
  auto bb = load_bb(cfg);
  auto st = load_stats(cfg, bb);
  auto desc = descriptor(cfg);
  auto ds = data::load_dataset(desc);
  auto bundle = bundle_from_checkpoint(cfg, ckpt);

  std::vector<Index> idx(static_cast<size_t>(ds.size()));
  for (Index i = 0; i < ds.size(); ++i) idx[static_cast<size_t>(i)] = i;
  auto records = scoring::score_split(
      bundle, bb, st, ds, desc, idx, {},
      metrics::metric_from_string(cfg.scorer), cfg.batch_size);
  const std::string out = cfg.output_dir + "/scores.csv";
  eval::write_scores_csv(records, out, provenance_of(cfg));
  std::printf("scored %lld samples with %s -> %s\n",
              static_cast<long long>(ds.size()), cfg.scorer.c_str(),
              out.c_str());
  return 0;
}

void write_svg_plot(const std::string& path, const std::string& title,
                    const std::vector<double>& xs,
                    const std::vector<std::pair<std::string,
                                                std::vector<double>>>& lines) {
  const int W = 480, H = 320, M = 46;
  double ymax = 1e-12;
  for (const auto& [name, ys] : lines)
    for (double y : ys) ymax = std::max(ymax, y);
  std::ofstream os(path, std::ios::trunc);
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W
     << "' height='" << H << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << W / 2 << "' y='18' text-anchor='middle'>" << title
     << "</text>\n";
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  int ci = 0;
  for (const auto& [name, ys] : lines) {
    os << "<polyline fill='none' stroke='" << colors[ci % 4]
       << "' stroke-width='2' points='";
    for (size_t i = 0; i < xs.size(); ++i) {
      const double px = M + xs[i] * (W - 2 * M);
      const double py = H - M - ys[i] / ymax * (H - 2 * M);
      os << px << "," << py << " ";
    }
    os << "'/>\n";
    os << "<text x='" << W - M + 4 << "' y='" << 40 + 16 * ci
       << "' fill='" << colors[ci % 4] << "' font-size='11'>" << name
       << "</text>\n";
    ++ci;
  }
  os << "<line x1='" << M << "' y1='" << H - M << "' x2='" << W - M
     << "' y2='" << H - M << "' stroke='black'/>\n";
  os << "<line x1='" << M << "' y1='" << M << "' x2='" << M << "' y2='"
     << H - M << "' stroke='black'/>\n";
  os << "</svg>\n";
}

int cmd_contrast_report(const CliArgs& args) {
  auto cfg = load_config(args);
  auto bb = load_bb(cfg);
  auto st = load_stats(cfg, bb);
  PERCAD_CHECK_ARG(!cfg.dataset_path.empty(),
                   "dataset.path must point at an image folder");
  auto ds = data::load_image_folder(cfg.dataset_path);
  auto desc = descriptor(cfg);

  std::vector<double> levels;
  for (int i = 0; i <= 10; ++i) levels.push_back(i / 10.0);
  const std::vector<metrics::MetricKind> kinds{
      metrics::MetricKind::perceptual, metrics::MetricKind::rel_perc_l1};

  const std::string csv_path = cfg.output_dir + "/contrast_report.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << "# " << provenance_of(cfg) << "\n";
  csv << "pair_id,t,metric,value\n";

  std::map<std::string, std::vector<double>> mean_curves;
  std::vector<double> mean_abs(levels.size(), 0.0);
  for (Index i = 0; i < ds.size(); ++i) {
    const auto& img = ds.images[static_cast<size_t>(i)];
    const auto shifted = synth::shift_image(img, 5, 0);
    const auto x = data::preprocess<Scalar>(img, desc);
    const auto y = data::preprocess<Scalar>(shifted, desc);
    auto rep = metrics::contrast_sweep(x, y, levels, kinds, bb, st);
    char buf[64];
    for (const auto& row : rep.rows) {
      std::snprintf(buf, sizeof buf, "%s,%.2f,%s,%.9g", img.id.c_str(),
                    row.t, metrics::to_string(row.kind), row.value);
      csv << buf << "\n";
      mean_curves[metrics::to_string(row.kind)].push_back(row.value);
    }
    for (size_t k = 0; k < levels.size(); ++k) {
      mean_abs[k] += rep.mean_abs_feature[k] / static_cast<double>(ds.size());
      std::snprintf(buf, sizeof buf, "%s,%.2f,%s,%.9g", img.id.c_str(),
                    levels[k], "mean_abs_feature", rep.mean_abs_feature[k]);
      csv << buf << "\n";
      std::snprintf(buf, sizeof buf, "%s,%.2f,%s,%.9g", img.id.c_str(),
                    levels[k], "mean_abs_feature_std",
                    rep.mean_abs_feature_std[k]);
      csv << buf << "\n";
    }
  }

  // per-metric means across pairs, one curve per metric
  std::vector<std::pair<std::string, std::vector<double>>> plot_lines;
  for (const auto& [name, vals] : mean_curves) {
    std::vector<double> curve(levels.size(), 0.0);
    const size_t pairs = vals.size() / levels.size();
    for (size_t p = 0; p < pairs; ++p)
      for (size_t k = 0; k < levels.size(); ++k)
        curve[k] += vals[p * levels.size() + k] / static_cast<double>(pairs);
    // normalize to the t=0 value so both metrics share one scale
    const double v0 = curve[0] > 0 ? curve[0] : 1.0;
    for (double& v : curve) v /= v0;
    plot_lines.emplace_back(name, std::move(curve));
  }
  write_svg_plot(cfg.output_dir + "/contrast_metrics.svg",
                 "metric value vs contrast level (relative to t=0)", levels,
                 plot_lines);
  write_svg_plot(cfg.output_dir + "/contrast_feature_magnitude.svg",
                 "mean |standardized feature| vs contrast level", levels,
                 {{"mean_abs_feature", mean_abs}});
  std::printf("contrast report over %lld pairs -> %s\n",
              static_cast<long long>(ds.size()), csv_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"perceptual image anomaly detection toolkit"};
  app.require_subcommand(1);

  CliArgs args;
  for (auto* sub :
       {app.add_subcommand("stats", "calibrate per-filter feature statistics"),
        app.add_subcommand("train", "train the generator/encoder pair"),
        app.add_subcommand("eval", "evaluate a checkpoint under a protocol"),
        app.add_subcommand("score", "write per-sample anomaly scores"),
        app.add_subcommand("contrast-report",
                           "metric-vs-contrast study over image pairs"),
        app.add_subcommand("ablate",
                           "evaluate one checkpoint across all scorers")}) {
    sub->add_option("--config", args.config_path, "experiment config file")
        ->required();
    sub->add_option("--checkpoint", args.checkpoint, "checkpoint file");
    sub->add_option("--out", args.out_override, "output directory override");
    sub->add_option("--seed", args.seed_override, "seed override");
    sub->add_flag("--deterministic", args.deterministic,
                  "force single-threaded deterministic execution");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("stats")) return cmd_stats(args);
    if (app.got_subcommand("train")) return cmd_train(args);
    if (app.got_subcommand("eval")) return cmd_eval(args);
    if (app.got_subcommand("score")) return cmd_score(args);
    if (app.got_subcommand("contrast-report")) return cmd_contrast_report(args);
    if (app.got_subcommand("ablate")) return cmd_ablate(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
