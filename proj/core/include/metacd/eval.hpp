#pragma once

#include <optional>

#include "metacd/data.hpp"

namespace metacd {

/// Parallel lists of model outputs against ground truth.
struct PredictionSet {
  std::vector<double> prob;      // in [0, 1]
  std::vector<int> label;        // hard decision in {0, 1}
  std::vector<int> score;        // ground truth in {0, 1}
  std::vector<int> question_id;

  void push(double p, int l, int s, int q) {
    prob.push_back(p);
    label.push_back(l);
    score.push_back(s);
    question_id.push_back(q);
  }
  int size() const { return static_cast<int>(prob.size()); }
};

double accuracy(const PredictionSet& preds);
double rmse(const PredictionSet& preds);

/// Pairwise AUC: fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half. Empty optional when only one class is present.
std::optional<double> auc(const PredictionSet& preds);

/// Lower-triangular task-incremental grid: rows[R][t] is the performance on
/// task t after training through task R, t <= R.
struct EvalMatrix {
  std::string metric = "auc";
  std::vector<std::vector<double>> rows;

  int tasks() const { return static_cast<int>(rows.size()); }
  void validate() const;
};

/// BWT = mean over t < T of (M[T][t] - M[t][t]). Needs T >= 2.
double bwt(const EvalMatrix& matrix);

struct BucketRow {
  int lo = 0;
  int hi = 0;  // inclusive
  int question_count = 0;
  int prediction_count = 0;
  double acc = 0.0;
  std::optional<double> auc_value;
};

/// Group predictions by their question's total response count in the unit.
/// edges define buckets [edges[i], edges[i+1]-1]; empty buckets are omitted.
std::vector<BucketRow> longtail_buckets(const PredictionSet& preds,
                                        const TaskUnit& unit,
                                        const std::vector<int>& edges);

inline std::vector<int> default_bucket_edges() { return {6, 11, 16, 21, 26, 31, 36}; }

}  // namespace metacd
