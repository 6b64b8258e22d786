#include "metacd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace metacd {

namespace {
void require_nonempty(const PredictionSet& preds, const char* who) {
  if (preds.size() == 0) throw ConfigError(std::string(who) + ": empty prediction set");
  if (preds.prob.size() != preds.label.size() ||
      preds.prob.size() != preds.score.size() ||
      preds.prob.size() != preds.question_id.size())
    throw ConfigError(std::string(who) + ": prediction lists have unequal lengths");
}
}  // namespace

double accuracy(const PredictionSet& preds) {
  require_nonempty(preds, "accuracy");
  int hits = 0;
  for (int i = 0; i < preds.size(); ++i)
    hits += preds.label[i] == preds.score[i] ? 1 : 0;
  return static_cast<double>(hits) / preds.size();
}

double rmse(const PredictionSet& preds) {
  require_nonempty(preds, "rmse");
  double s = 0.0;
  for (int i = 0; i < preds.size(); ++i) {
    const double d = preds.prob[i] - preds.score[i];
    s += d * d;
  }
  return std::sqrt(s / preds.size());
}

std::optional<double> auc(const PredictionSet& preds) {
  require_nonempty(preds, "auc");
  const int n = preds.size();
  int positives = 0;
  for (int v : preds.score) positives += v;
  const int negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;

  // rank-sum with average ranks over ties == pairwise counting with half ties
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return preds.prob[a] < preds.prob[b];
  });

  double rank_sum_pos = 0.0;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j < n && preds.prob[order[j]] == preds.prob[order[i]]) ++j;
    const double avg_rank = 0.5 * (i + 1 + j);  // ranks are 1-based
    for (int k = i; k < j; ++k)
      if (preds.score[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * positives * (positives + 1.0);
  return u / (static_cast<double>(positives) * negatives);
}

void EvalMatrix::validate() const {
  for (size_t r = 0; r < rows.size(); ++r)
    if (rows[r].size() != r + 1)
      throw ConfigError("EvalMatrix: row " + std::to_string(r) + " must have " +
                        std::to_string(r + 1) + " entries");
}

double bwt(const EvalMatrix& matrix) {
  matrix.validate();
  const int T = matrix.tasks();
  if (T < 2) throw ConfigError("bwt: undefined for fewer than 2 tasks");
  double s = 0.0;
  for (int t = 0; t < T - 1; ++t)
    s += matrix.rows[T - 1][t] - matrix.rows[t][t];
  return s / (T - 1);
}

std::vector<BucketRow> longtail_buckets(const PredictionSet& preds,
                                        const TaskUnit& unit,
                                        const std::vector<int>& edges) {
  require_nonempty(preds, "longtail_buckets");
  if (edges.size() < 2) throw ConfigError("longtail_buckets: need at least two edges");
  for (size_t i = 1; i < edges.size(); ++i)
    if (edges[i] <= edges[i - 1])
      throw ConfigError("longtail_buckets: edges must be strictly increasing");

  const std::vector<int> counts = question_counts(unit);
  const int n_buckets = static_cast<int>(edges.size()) - 1;

  std::vector<PredictionSet> grouped(n_buckets);
  std::vector<std::vector<bool>> seen_question(n_buckets,
                                               std::vector<bool>(unit.num_questions, false));
  for (int i = 0; i < preds.size(); ++i) {
    const int q = preds.question_id[i];
    if (q < 0 || q >= unit.num_questions)
      throw ConfigError("longtail_buckets: question id outside the unit");
    const int c = counts[q];
    for (int b = 0; b < n_buckets; ++b) {
      if (c >= edges[b] && c < edges[b + 1]) {
        grouped[b].push(preds.prob[i], preds.label[i], preds.score[i], q);
        seen_question[b][q] = true;
        break;
      }
    }
  }

  std::vector<BucketRow> rows;
  for (int b = 0; b < n_buckets; ++b) {
    if (grouped[b].size() == 0) continue;  // absent, not zero
    BucketRow row;
    row.lo = edges[b];
    row.hi = edges[b + 1] - 1;
    row.prediction_count = grouped[b].size();
    row.question_count = static_cast<int>(
        std::count(seen_question[b].begin(), seen_question[b].end(), true));
    row.acc = accuracy(grouped[b]);
    row.auc_value = auc(grouped[b]);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace metacd
