#pragma once

#include "percad/eval.hpp"
#include "percad/losses.hpp"

namespace percad::scoring {

using metrics::MetricKind;

// A(x) = scorer(x, G(E(x))). Scores are computed with the networks in
// inference mode; G and E have no batch-coupled layers, so batch
// composition cannot affect the per-sample values.
template <typename S>
Tensor<S> reconstruct(const models::ModelBundle<S>& bundle,
                      const Tensor<S>& batch) {
  ad::NoGradGuard ng;
  auto z = bundle.encoder.forward(ad::constant(batch));
  return bundle.generator.forward(z).val();
}

template <typename S>
std::vector<double> score_batch(const models::ModelBundle<S>& bundle,
                                const backbone::Backbone<S>& bb,
                                const backbone::FilterStats& stats,
                                const Tensor<S>& batch, MetricKind scorer) {
  ad::NoGradGuard ng;
  const Tensor<S> recon = reconstruct(bundle, batch);
  auto xv = ad::constant(batch), yv = ad::constant(recon);
  ad::Var<S> per_sample;
  switch (scorer) {
    case MetricKind::mse:
      per_sample = metrics::pixel_mse_batch(xv, yv);
      break;
    case MetricKind::pixel_l1:
      per_sample = metrics::pixel_l1_batch(xv, yv);
      break;
    case MetricKind::perceptual:
      per_sample = metrics::perceptual_batch(bb.features(xv), bb.features(yv));
      break;
    case MetricKind::perc_l1:
      per_sample =
          metrics::perc_l1_batch(bb.features(xv), bb.features(yv), stats);
      break;
    case MetricKind::rel_perc_l1:
      per_sample =
          metrics::rel_perc_l1_batch(bb.features(xv), bb.features(yv), stats);
      break;
  }
  std::vector<double> out(static_cast<size_t>(batch.shape.n));
  for (Index i = 0; i < batch.shape.n; ++i) {
    const double v = static_cast<double>(per_sample.val().data[i]);
    PERCAD_CHECK(std::isfinite(v), "non-finite anomaly score");
    out[static_cast<size_t>(i)] = v;
  }
  return out;
}

template <typename S>
double anomaly_score(const models::ModelBundle<S>& bundle,
                     const backbone::Backbone<S>& bb,
                     const backbone::FilterStats& stats, const Tensor<S>& x,
                     MetricKind scorer = MetricKind::rel_perc_l1) {
  Tensor<S> one = x;
  if (one.shape.n != 1)
    one.shape = Shape{1, x.shape.c, x.shape.h, x.shape.w};
  return score_batch(bundle, bb, stats, one, scorer)[0];
}

// Scores a labeled index subset of a dataset in batches.
template <typename S>
std::vector<eval::ScoreRecord> score_split(
    const models::ModelBundle<S>& bundle, const backbone::Backbone<S>& bb,
    const backbone::FilterStats& stats, const data::Dataset& ds,
    const data::DatasetDescriptor& desc, const std::vector<Index>& indices,
    const std::vector<int>& labels, MetricKind scorer, Index batch_size) {
  PERCAD_CHECK(indices.size() == labels.size() || labels.empty(),
               "score_split: label count mismatch");
  std::vector<eval::ScoreRecord> records;
  records.reserve(indices.size());
  data::BatchIterator<S> it(ds, desc, indices, batch_size, 0,
                            /*train_mode=*/false, /*cache=*/false);
  Tensor<S> batch;
  std::vector<Index> ids;
  size_t pos = 0;
  while (it.next(batch, &ids)) {
    const auto scores = score_batch(bundle, bb, stats, batch, scorer);
    for (size_t k = 0; k < scores.size(); ++k, ++pos) {
      eval::ScoreRecord rec;
      rec.sample_id = ds.images[static_cast<size_t>(ids[k])].id;
      rec.score = scores[k];
      rec.label = labels.empty() ? 0 : labels[pos];
      records.push_back(std::move(rec));
    }
  }
  PERCAD_CHECK(pos == indices.size(), "score_split: coverage mismatch");
  return records;
}

}  // namespace percad::scoring
