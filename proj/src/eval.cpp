#include "percad/eval.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace percad::eval {

double roc_auc(const std::vector<ScoreRecord>& records) {
  Index n_pos = 0, n_neg = 0;
  for (const auto& r : records) {
    PERCAD_CHECK(r.label == 0 || r.label == 1, "roc_auc: label must be 0/1");
    (r.label == 1 ? n_pos : n_neg) += 1;
  }
  if (n_pos == 0 || n_neg == 0)
    throw Error("roc_auc: need at least one record of each label");

  std::vector<Index> idx(records.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](Index a, Index b) {
    return records[static_cast<size_t>(a)].score <
           records[static_cast<size_t>(b)].score;
  });

  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j < idx.size() &&
           records[static_cast<size_t>(idx[j])].score ==
               records[static_cast<size_t>(idx[i])].score)
      ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k)
      if (records[static_cast<size_t>(idx[k])].label == 1)
        rank_sum_pos += midrank;
    i = j;
  }
  const double u = rank_sum_pos -
                   static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::one_vs_all: return "one_vs_all";
    case Protocol::split_80_20: return "split_80_20";
    case Protocol::attribute_split: return "attribute_split";
  }
  return "?";
}

Protocol protocol_from_string(const std::string& s) {
  for (Protocol p : {Protocol::one_vs_all, Protocol::split_80_20,
                     Protocol::attribute_split})
    if (s == to_string(p)) return p;
  throw ConfigError("unknown protocol '" + s +
                    "' (one_vs_all, split_80_20, attribute_split)");
}

namespace {

std::vector<Index> shuffled(std::vector<Index> v, std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(v.begin(), v.end());
  return v;
}

}  // namespace

Split make_protocol_split(const data::Dataset& ds, const SplitSpec& spec) {
  Split out;
  switch (spec.protocol) {
    case Protocol::one_vs_all: {
      PERCAD_CHECK(ds.has_official_split(),
                   "one_vs_all requires a dataset with an official "
                   "train/test split");
      bool class_seen = false;
      for (Index i = 0; i < ds.size(); ++i) {
        const bool is_test = ds.in_test[static_cast<size_t>(i)] != 0;
        const bool normal = ds.labels[static_cast<size_t>(i)] == spec.normal_class;
        if (normal) class_seen = true;
        if (!is_test && normal) out.train.push_back(i);
        if (is_test) {
          out.test.push_back(i);
          out.test_labels.push_back(normal ? 0 : 1);
        }
      }
      PERCAD_CHECK(class_seen, "unknown normal class " +
                                   std::to_string(spec.normal_class));
      break;
    }
    case Protocol::split_80_20: {
      std::vector<Index> normals, anomalies;
      for (Index i = 0; i < ds.size(); ++i)
        (ds.labels[static_cast<size_t>(i)] == spec.normal_class ? normals
                                                                : anomalies)
            .push_back(i);
      PERCAD_CHECK(!normals.empty(), "unknown normal class " +
                                         std::to_string(spec.normal_class));
      normals = shuffled(std::move(normals), spec.seed);
      const Index n_train = (static_cast<Index>(normals.size()) * 8) / 10;
      const Index n_test = static_cast<Index>(normals.size()) - n_train;
      PERCAD_CHECK(n_train >= 1 && n_test >= 1,
                   "not enough normal instances for an 80/20 split");
      if (static_cast<Index>(anomalies.size()) < n_test)
        throw Error("insufficient anomaly instances: need " +
                    std::to_string(n_test) + ", have " +
                    std::to_string(anomalies.size()));
      anomalies = shuffled(std::move(anomalies), spec.seed + 1);
      out.train.assign(normals.begin(), normals.begin() + n_train);
      for (Index k = 0; k < n_test; ++k) {
        out.test.push_back(normals[static_cast<size_t>(n_train + k)]);
        out.test_labels.push_back(0);
      }
      for (Index k = 0; k < n_test; ++k) {
        out.test.push_back(anomalies[static_cast<size_t>(k)]);
        out.test_labels.push_back(1);
      }
      break;
    }
    case Protocol::attribute_split: {
      const int a = ds.attr_index(spec.attribute);
      PERCAD_CHECK(a >= 0, "unknown attribute '" + spec.attribute + "'");
      std::vector<Index> absent, present;
      for (Index i = 0; i < ds.size(); ++i)
        (ds.attrs[static_cast<size_t>(i)][static_cast<size_t>(a)] ? present
                                                                  : absent)
            .push_back(i);
      PERCAD_CHECK(!absent.empty(), "no attribute-absent samples");
      absent = shuffled(std::move(absent), spec.seed);
      const Index n_train = (static_cast<Index>(absent.size()) * 8) / 10;
      const Index n_test = static_cast<Index>(absent.size()) - n_train;
      PERCAD_CHECK(n_train >= 1 && n_test >= 1,
                   "not enough attribute-absent instances");
      if (static_cast<Index>(present.size()) < n_test)
        throw Error("insufficient anomaly instances: need " +
                    std::to_string(n_test) + ", have " +
                    std::to_string(present.size()));
      present = shuffled(std::move(present), spec.seed + 1);
      out.train.assign(absent.begin(), absent.begin() + n_train);
      for (Index k = 0; k < n_test; ++k) {
        out.test.push_back(absent[static_cast<size_t>(n_train + k)]);
        out.test_labels.push_back(0);
      }
      for (Index k = 0; k < n_test; ++k) {
        out.test.push_back(present[static_cast<size_t>(k)]);
        out.test_labels.push_back(1);
      }
      break;
    }
  }
  return out;
}

void write_report(const EvalReport& rep, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  PERCAD_CHECK(os.good(), "cannot open for writing: " + path);
  char auc[32];
  std::snprintf(auc, sizeof auc, "%.6f", rep.roc_auc);
  os << "percad-eval 1\n"
     << "protocol " << rep.protocol << "\n"
     << "normal_class " << rep.normal_class << "\n"
     << "scorer " << rep.scorer << "\n"
     << "roc_auc " << auc << "\n"
     << "n_normal " << rep.n_normal << "\n"
     << "n_anomaly " << rep.n_anomaly << "\n"
     << "seed " << rep.seed << "\n"
     << "config_fingerprint " << rep.config_fingerprint << "\n"
     << "tool_version " << rep.tool_version << "\n"
     << "checkpoint " << rep.checkpoint_ref << "\n"
     << "checkpoint_iteration " << rep.checkpoint_iteration << "\n";
  PERCAD_CHECK(os.good(), "write failed: " + path);
}

EvalReport read_report(const std::string& path) {
  std::ifstream is(path);
  PERCAD_CHECK(is.good(), "cannot open report: " + path);
  std::string magic;
  int version = 0;
  is >> magic >> version;
  PERCAD_CHECK(magic == "percad-eval" && version == 1,
               "not an eval report: " + path);
  EvalReport rep;
  std::string key;
  while (is >> key) {
    if (key == "protocol") is >> rep.protocol;
    else if (key == "normal_class") is >> rep.normal_class;
    else if (key == "scorer") is >> rep.scorer;
    else if (key == "roc_auc") is >> rep.roc_auc;
    else if (key == "n_normal") is >> rep.n_normal;
    else if (key == "n_anomaly") is >> rep.n_anomaly;
    else if (key == "seed") is >> rep.seed;
    else if (key == "config_fingerprint") is >> rep.config_fingerprint;
    else if (key == "tool_version") is >> rep.tool_version;
    else if (key == "checkpoint") is >> rep.checkpoint_ref;
    else if (key == "checkpoint_iteration") is >> rep.checkpoint_iteration;
    else throw DataError("unknown report field '" + key + "' in " + path);
  }
  return rep;
}

void write_scores_csv(const std::vector<ScoreRecord>& records,
                      const std::string& path,
                      const std::string& provenance) {
  std::ofstream os(path, std::ios::trunc);
  PERCAD_CHECK(os.good(), "cannot open for writing: " + path);
  if (!provenance.empty()) os << "# " << provenance << "\n";
  os << "sample_id,score,label\n";
  char buf[32];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.9g", r.score);
    os << r.sample_id << "," << buf << "," << r.label << "\n";
  }
  PERCAD_CHECK(os.good(), "write failed: " + path);
}

}  // namespace percad::eval
