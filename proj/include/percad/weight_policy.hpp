#pragma once

#include <map>
#include <string>
#include <vector>

#include "percad/nn.hpp"
#include "percad/serialize.hpp"

// Gradient-normalizing weight selection for the two-loss objectives: keep
// per-layer gradient-norm time series for each loss, exponentially smooth
// them, and pick the weight as the mean smoothed-norm ratio so both losses
// pull each layer with comparable strength.
namespace percad::policy {

enum class NormKind { l2, std_dev };

inline NormKind norm_kind_from_string(const std::string& s) {
  if (s == "l2") return NormKind::l2;
  if (s == "std") return NormKind::std_dev;
  throw ConfigError("unknown norm_kind '" + s + "' (l2, std)");
}

inline const char* to_string(NormKind k) {
  return k == NormKind::l2 ? "l2" : "std";
}

struct PolicyConfig {
  int n_weight = 100;       // recording / update period in iterations
  int history_window = 20;  // smoothed points averaged per layer
  double smoothing = 0.1;   // EMA weight of the newest point
  NormKind norm_kind = NormKind::std_dev;
};

template <typename S>
double grad_norm(const Tensor<S>& g, NormKind kind) {
  if (!g.all_finite()) throw NumericsError("non-finite gradient in history");
  if (kind == NormKind::l2)
    return std::sqrt(static_cast<double>(
        (g.data.template cast<double>() * g.data.template cast<double>())
            .sum()));
  const auto d = g.data.template cast<double>();
  const double mean = d.mean();
  return std::sqrt(((d - mean) * (d - mean)).sum() /
                   static_cast<double>(d.size()));  // population
}

// Per (loss, layer) append-only series of gradient norms. All layers of
// one loss advance together, so series lengths stay equal.
class GradHistory {
 public:
  using LayerSeries = std::map<std::string, std::vector<double>>;

  template <typename S>
  void record(const std::string& loss_id,
              const std::vector<nn::Parameter<S>*>& params, NormKind kind) {
    LayerSeries& series = series_[loss_id];
    std::vector<std::string> seen;
    for (const auto* p : params) {
      if (!p->is_weight) continue;  // weight matrices only, biases excluded
      series[p->name].push_back(grad_norm(p->grad, kind));
      seen.push_back(p->name);
    }
    PERCAD_CHECK(!seen.empty(), "record_gradients: no tracked layers");
    if (series.size() != seen.size())
      throw Error("record_gradients: layer set changed for loss " + loss_id);
    size_t len = series.begin()->second.size();
    for (const auto& [name, s] : series)
      if (s.size() != len)
        throw Error("record_gradients: layer set changed for loss " +
                    loss_id + " (" + name + ")");
  }

  const LayerSeries& of(const std::string& loss_id) const {
    auto it = series_.find(loss_id);
    PERCAD_CHECK(it != series_.end(), "no gradient history for " + loss_id);
    return it->second;
  }

  bool has(const std::string& loss_id) const {
    return series_.count(loss_id) > 0;
  }

  size_t length(const std::string& loss_id) const {
    auto it = series_.find(loss_id);
    if (it == series_.end() || it->second.empty()) return 0;
    return it->second.begin()->second.size();
  }

  void save(io::BinWriter& w) const {
    w.u32(static_cast<std::uint32_t>(series_.size()));
    for (const auto& [loss, layers] : series_) {
      w.str(loss);
      w.u32(static_cast<std::uint32_t>(layers.size()));
      for (const auto& [name, s] : layers) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(s.size()));
        for (double v : s) w.f64(v);
      }
    }
  }

  void load(io::BinReader& r) {
    series_.clear();
    const auto n_loss = r.u32();
    for (std::uint32_t i = 0; i < n_loss; ++i) {
      const std::string loss = r.str();
      const auto n_layers = r.u32();
      for (std::uint32_t j = 0; j < n_layers; ++j) {
        const std::string name = r.str();
        const auto len = r.u32();
        auto& s = series_[loss][name];
        s.resize(len);
        for (auto& v : s) v = r.f64();
      }
    }
  }

  bool operator==(const GradHistory& o) const { return series_ == o.series_; }

 private:
  std::map<std::string, LayerSeries> series_;
};

inline std::vector<double> exp_smooth(const std::vector<double>& xs,
                                      double alpha) {
  std::vector<double> out(xs.size());
  double acc = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    acc = i == 0 ? xs[0] : (1.0 - alpha) * acc + alpha * xs[i];
    out[i] = acc;
  }
  return out;
}

// weight = mean over layers of mean(last-N smoothed series1 / series2).
inline double select_weight(const GradHistory::LayerSeries& history_1,
                            const GradHistory::LayerSeries& history_2,
                            const PolicyConfig& cfg) {
  PERCAD_CHECK(!history_1.empty() && !history_2.empty(),
               "select_weight: empty history");
  PERCAD_CHECK(history_1.size() == history_2.size(),
               "select_weight: layer sets differ");
  double layer_sum = 0.0;
  Index layer_count = 0;
  for (const auto& [name, series1] : history_1) {
    auto it2 = history_2.find(name);
    PERCAD_CHECK(it2 != history_2.end(),
                 "select_weight: layer " + name + " missing in history_2");
    const auto& series2 = it2->second;
    PERCAD_CHECK(!series1.empty() && series1.size() == series2.size(),
                 "select_weight: series length mismatch for " + name);
    const auto s1 = exp_smooth(series1, cfg.smoothing);
    const auto s2 = exp_smooth(series2, cfg.smoothing);
    const size_t take =
        std::min<size_t>(static_cast<size_t>(cfg.history_window), s1.size());
    double acc = 0.0;
    for (size_t k = s1.size() - take; k < s1.size(); ++k) {
      if (s2[k] == 0.0)
        throw Error("select_weight: zero smoothed denominator in layer " +
                    name);
      acc += s1[k] / s2[k];
    }
    layer_sum += acc / static_cast<double>(take);
    ++layer_count;
  }
  return layer_sum / static_cast<double>(layer_count);
}

// Scales accumulated reconstruction gradients in place before the
// adversarial backward pass adds to them.
template <typename S>
void apply_weight(std::vector<nn::Parameter<S>*> params, double gamma) {
  if (!(gamma > 0) || !std::isfinite(gamma))
    throw NumericsError("weighting parameter must be positive and finite, "
                        "got " + std::to_string(gamma));
  for (auto* p : params) p->grad.data *= static_cast<S>(gamma);
}

}  // namespace percad::policy
