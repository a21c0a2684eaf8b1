#pragma once

#include <string>
#include <vector>

#include "percad/data.hpp"
#include "percad/metrics.hpp"

namespace percad::eval {

struct ScoreRecord {
  std::string sample_id;
  double score = 0.0;
  int label = 0;  // 0 normal, 1 anomaly
};

// Mann-Whitney estimate: P(random anomaly outscores random normal), ties
// credited 0.5. Matches the exhaustive pairwise count exactly, including
// ties, because all intermediate values are half-integers.
double roc_auc(const std::vector<ScoreRecord>& records);

enum class Protocol { one_vs_all, split_80_20, attribute_split };

const char* to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

struct SplitSpec {
  Protocol protocol = Protocol::one_vs_all;
  int normal_class = 0;          // one_vs_all / split_80_20
  std::string attribute;         // attribute_split
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<Index> train;        // indices into the dataset
  std::vector<Index> test;         // indices into the dataset
  std::vector<int> test_labels;    // 0 normal, 1 anomaly, aligned with test
};

Split make_protocol_split(const data::Dataset& ds, const SplitSpec& spec);

struct EvalReport {
  std::string protocol;
  std::string normal_class;  // class id or attribute name
  std::string scorer;
  double roc_auc = 0.0;
  Index n_normal = 0, n_anomaly = 0;
  std::uint64_t seed = 0;
  std::string config_fingerprint;
  std::string tool_version;
  std::string checkpoint_ref;
  std::int64_t checkpoint_iteration = 0;
};

void write_report(const EvalReport& rep, const std::string& path);
EvalReport read_report(const std::string& path);
void write_scores_csv(const std::vector<ScoreRecord>& records,
                      const std::string& path,
                      const std::string& provenance = "");

}  // namespace percad::eval
