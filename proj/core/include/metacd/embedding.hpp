#pragma once

#include "metacd/data.hpp"
#include "metacd/optim.hpp"

namespace metacd {

// Trainable table names inside a knowledge-base ParamSet.
inline constexpr const char* kStudentTable = "emb.student";        // A x d
inline constexpr const char* kDifficultyTable = "emb.difficulty";  // B x d
inline constexpr const char* kDiscriminationTable = "emb.discrimination";  // B x 1

/// Input vector for one response: qrow o (sigmoid(stu) - sigmoid(diff)),
/// gated by sigmoid(discrimination). Entries for untested skills are exactly
/// zero. Plain-loop evaluation, used directly and as a cross-check of the
/// tape path.
std::vector<double> encode(const ResponseRecord& record, const ParamSet& params,
                           const QMatrix& qmatrix);

/// Tape version over a batch of records; the result is (d, n) with one
/// column per record. Gradients reach exactly the gathered table rows.
ad::NodeId encode_batch(ad::Tape& tape, const BoundLeaves& leaves,
                        const std::vector<const ResponseRecord*>& records,
                        const QMatrix& qmatrix);

}  // namespace metacd
