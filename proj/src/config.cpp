#include "percad/config.hpp"

#include <fstream>
#include <sstream>

#include "percad/serialize.hpp"

namespace percad::config {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValues KeyValues::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is.good()) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_text(ss.str());
}

KeyValues KeyValues::parse_text(const std::string& text) {
  KeyValues out;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.kv_.count(full))
      throw ConfigError("duplicate config key '" + full + "'");
    out.kv_[full] = val;
    out.used_[full] = false;
  }
  return out;
}

std::string KeyValues::get_str(const std::string& key,
                               const std::string& def) {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  used_[key] = true;
  return it->second;
}

std::string KeyValues::require_str(const std::string& key) {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("missing required config key '" + key + "'");
  used_[key] = true;
  return it->second;
}

double KeyValues::get_num(const std::string& key, double def) {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  used_[key] = true;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "' is not a number: " +
                      it->second);
  }
}

std::int64_t KeyValues::get_int(const std::string& key, std::int64_t def) {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  used_[key] = true;
  try {
    size_t pos = 0;
    long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "' is not an integer: " +
                      it->second);
  }
}

bool KeyValues::get_bool(const std::string& key, bool def) {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  used_[key] = true;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config key '" + key + "' is not a bool: " + it->second);
}

void KeyValues::finish() const {
  std::string unknown;
  for (const auto& [key, used] : used_)
    if (!used) unknown += (unknown.empty() ? "" : ", ") + key;
  if (!unknown.empty())
    throw ConfigError("unknown config key(s): " + unknown);
}

std::string KeyValues::canonical() const {
  std::string out;
  for (const auto& [key, val] : kv_) out += key + "=" + val + "\n";
  return out;
}

std::string KeyValues::fingerprint() const {
  const std::string c = canonical();
  return io::hex64(io::fnv1a(c.data(), c.size()));
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  KeyValues kv = KeyValues::parse_file(path);
  ExperimentConfig c;

  c.dataset_profile = kv.get_str("dataset.profile", c.dataset_profile);
  c.dataset_path = kv.get_str("dataset.path", "");
  c.protocol = kv.get_str("dataset.protocol", c.protocol);
  c.normal_class = static_cast<int>(kv.get_int("dataset.normal_class", 0));
  c.attribute = kv.get_str("dataset.attribute", "");

  c.backbone_weights = kv.get_str("backbone.weights", "");
  c.backbone_layer = kv.get_str("backbone.layer", c.backbone_layer);
  c.stats_path = kv.get_str("backbone.stats", "");
  c.calib_corpus = kv.get_str("backbone.calib_corpus", "");
  c.calib_max_samples =
      kv.get_int("backbone.calib_max_samples", c.calib_max_samples);
  c.calib_min_samples =
      kv.get_int("backbone.calib_min_samples", c.calib_min_samples);

  c.model_profile = kv.get_str("model.profile", c.dataset_profile);
  c.width_multiplier = kv.get_num("model.width_multiplier", 1.0);
  c.image_channels = static_cast<int>(kv.get_int("model.image_channels", 0));
  c.latent_override = kv.get_str("model.latent", "");

  c.iters = kv.get_int("train.iters", c.iters);
  c.n_dis = static_cast<int>(kv.get_int("train.n_dis", 0));
  c.batch_size = static_cast<int>(kv.get_int("train.batch_size", 32));
  c.lr_disc = kv.get_num("train.lr_disc", c.lr_disc);
  c.lr_gen = kv.get_num("train.lr_gen", c.lr_gen);
  c.adam_beta1 = kv.get_num("train.adam_beta1", c.adam_beta1);
  c.adam_beta2 = kv.get_num("train.adam_beta2", c.adam_beta2);
  c.gp_lambda = kv.get_num("train.gp_lambda", c.gp_lambda);
  c.drift_weight = kv.get_num("train.drift_weight", c.drift_weight);
  c.checkpoint_period =
      kv.get_int("train.checkpoint_period", c.checkpoint_period);
  c.threads = static_cast<int>(kv.get_int("train.threads", 1));

  c.n_weight = static_cast<int>(kv.get_int("policy.n_weight", c.n_weight));
  c.history_window =
      static_cast<int>(kv.get_int("policy.history_window", c.history_window));
  c.smoothing = kv.get_num("policy.smoothing", c.smoothing);
  c.norm_kind = kv.get_str("policy.norm_kind", c.norm_kind);

  c.scorer = kv.get_str("eval.scorer", c.scorer);
  c.write_scores = kv.get_bool("eval.write_scores", c.write_scores);

  c.seed = static_cast<std::uint64_t>(kv.get_int("run.seed", 1));
  c.deterministic = kv.get_bool("run.deterministic", true);
  c.output_dir = kv.get_str("output.dir", c.output_dir);

  kv.finish();
  c.fingerprint = kv.fingerprint();
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  PERCAD_CHECK_ARG(iters >= 1, "train.iters must be >= 1");
  PERCAD_CHECK_ARG(batch_size >= 1, "train.batch_size must be >= 1");
  PERCAD_CHECK_ARG(lr_disc > 0 && lr_gen > 0, "learning rates must be > 0");
  PERCAD_CHECK_ARG(gp_lambda >= 0, "train.gp_lambda must be >= 0");
  PERCAD_CHECK_ARG(drift_weight >= 0, "train.drift_weight must be >= 0");
  PERCAD_CHECK_ARG(n_weight >= 1, "policy.n_weight must be >= 1");
  PERCAD_CHECK_ARG(history_window >= 1, "policy.history_window must be >= 1");
  PERCAD_CHECK_ARG(smoothing > 0 && smoothing <= 1,
                   "policy.smoothing must lie in (0,1]");
  PERCAD_CHECK_ARG(norm_kind == "std" || norm_kind == "l2",
                   "policy.norm_kind must be std or l2");
  PERCAD_CHECK_ARG(width_multiplier > 0, "model.width_multiplier must be > 0");
  PERCAD_CHECK_ARG(threads >= 1, "train.threads must be >= 1");
}

}  // namespace percad::config
