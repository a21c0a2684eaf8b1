#pragma once

#include <map>
#include <string>

#include "percad/common.hpp"

namespace percad::config {

// Flat view of an INI-style config file: section.key -> value. Typed
// accessors consume keys; anything left unconsumed is a hard error, so
// misspelled hyperparameters cannot pass silently.
class KeyValues {
 public:
  static KeyValues parse_file(const std::string& path);
  static KeyValues parse_text(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& def);
  std::string require_str(const std::string& key);
  double get_num(const std::string& key, double def);
  std::int64_t get_int(const std::string& key, std::int64_t def);
  bool get_bool(const std::string& key, bool def);

  void finish() const;  // throws ConfigError listing unconsumed keys

  // canonical "section.key=value" lines, sorted; fingerprint input
  std::string canonical() const;
  std::string fingerprint() const;

 private:
  std::map<std::string, std::string> kv_;
  std::map<std::string, bool> used_;
};

struct ExperimentConfig {
  // dataset
  std::string dataset_profile = "mnist32";
  std::string dataset_path;
  std::string protocol = "one_vs_all";
  int normal_class = 0;
  std::string attribute;

  // backbone
  std::string backbone_weights;
  std::string backbone_layer = "conv4_2";
  std::string stats_path;
  std::string calib_corpus;  // dataset | folder path
  std::int64_t calib_max_samples = 512;
  std::int64_t calib_min_samples = 1;

  // model
  std::string model_profile = "mnist32";
  double width_multiplier = 1.0;
  int image_channels = 0;  // 0 = profile default
  std::string latent_override;  // "CxHxW", empty = profile default

  // train
  std::int64_t iters = 5000;
  int n_dis = 0;  // 0 = profile default (2 at 32 px, 3 at 64 px)
  int batch_size = 32;
  double lr_disc = 0.0005;
  double lr_gen = 0.0002;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.99;
  double gp_lambda = 10.0;
  double drift_weight = 0.001;
  std::int64_t checkpoint_period = 1000;
  int threads = 1;

  // policy
  int n_weight = 100;
  int history_window = 20;
  double smoothing = 0.1;
  std::string norm_kind = "std";

  // eval
  std::string scorer = "rel_perc_l1";
  bool write_scores = true;

  // run
  std::uint64_t seed = 1;
  bool deterministic = true;
  std::string output_dir = "out";

  std::string fingerprint;  // of the parsed file, stable across reruns

  static ExperimentConfig load(const std::string& path);
  void validate() const;
};

}  // namespace percad::config
