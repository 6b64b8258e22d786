#include "metacd/embedding.hpp"

#include <cmath>

namespace metacd {

namespace {
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

std::vector<double> encode(const ResponseRecord& record, const ParamSet& params,
                           const QMatrix& qmatrix) {
  const Array& stu = params.at(kStudentTable);
  const Array& dif = params.at(kDifficultyTable);
  const Array& dis = params.at(kDiscriminationTable);
  if (record.student_id < 0 || record.student_id >= stu.rows ||
      record.question_id < 0 || record.question_id >= dif.rows)
    throw ConfigError("encode: record indices out of table bounds");

  const int d = qmatrix.skills;
  const auto qrow = qmatrix.row_mask(record.question_id);
  bool any = false;
  for (double m : qrow) any = any || m != 0.0;
  if (!any) throw ConfigError("encode: question has an all-zero Q-matrix row");

  const double gate = sigmoid(dis.at(record.question_id, 0));
  std::vector<double> x(d, 0.0);
  for (int k = 0; k < d; ++k)
    x[k] = qrow[k] *
           (sigmoid(stu.at(record.student_id, k)) - sigmoid(dif.at(record.question_id, k))) *
           gate;
  return x;
}

ad::NodeId encode_batch(ad::Tape& tape, const BoundLeaves& leaves,
                        const std::vector<const ResponseRecord*>& records,
                        const QMatrix& qmatrix) {
  const int n = static_cast<int>(records.size());
  const int d = qmatrix.skills;

  std::vector<int> students(n), questions(n);
  std::vector<double> qmask(static_cast<size_t>(d) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    students[j] = records[j]->student_id;
    questions[j] = records[j]->question_id;
    for (int k = 0; k < d; ++k)
      if (qmatrix.tests(questions[j], k)) qmask[static_cast<size_t>(k) * n + j] = 1.0;
  }

  const ad::NodeId stu = tape.gather_rows(leaves.at(kStudentTable), students);
  const ad::NodeId dif = tape.gather_rows(leaves.at(kDifficultyTable), questions);
  const ad::NodeId dis = tape.gather_rows(leaves.at(kDiscriminationTable), questions);

  const ad::NodeId diff = tape.sub(tape.sigmoid(stu), tape.sigmoid(dif));
  const ad::NodeId masked = tape.mask_mul(diff, std::move(qmask));
  return tape.col_scale(masked, tape.sigmoid(dis));
}

}  // namespace metacd
