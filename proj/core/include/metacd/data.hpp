#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "metacd/errors.hpp"

namespace metacd {

/// One student-question interaction. skill_ids must agree with the unit's
/// Q-matrix row for question_id.
struct ResponseRecord {
  int student_id = 0;
  int question_id = 0;
  std::vector<int> skill_ids;
  int score = 0;  // 1 = correct

  bool operator==(const ResponseRecord&) const = default;
  bool operator<(const ResponseRecord& o) const {
    return std::tie(student_id, question_id, skill_ids, score) <
           std::tie(o.student_id, o.question_id, o.skill_ids, o.score);
  }
};

/// Binary question x skill incidence. Every row has at least one set bit.
struct QMatrix {
  int questions = 0;
  int skills = 0;
  std::vector<uint8_t> bits;

  QMatrix() = default;
  QMatrix(int q, int k) : questions(q), skills(k), bits(static_cast<size_t>(q) * k, 0) {}

  bool tests(int q, int k) const { return bits[static_cast<size_t>(q) * skills + k] != 0; }
  void set(int q, int k) { bits[static_cast<size_t>(q) * skills + k] = 1; }

  std::vector<int> skills_of(int q) const {
    std::vector<int> out;
    for (int k = 0; k < skills; ++k)
      if (tests(q, k)) out.push_back(k);
    return out;
  }

  /// 0/1 mask over skill dimensions for one question.
  std::vector<double> row_mask(int q) const {
    std::vector<double> m(skills, 0.0);
    for (int k = 0; k < skills; ++k)
      if (tests(q, k)) m[k] = 1.0;
    return m;
  }

  bool all_rows_nonzero() const {
    for (int q = 0; q < questions; ++q) {
      bool any = false;
      for (int k = 0; k < skills; ++k) any = any || tests(q, k);
      if (!any) return false;
    }
    return true;
  }
};

/// Ground truth carried by synthetic units: the latent mastery bits the
/// generator scored against, plus its noise parameters.
struct SyntheticOracle {
  std::vector<uint8_t> masteries;  // num_students x num_skills, row-major
  double slip = 0.0;
  double guess = 0.0;
};

/// Self-contained episode: response logs + Q-matrix + support/query split.
struct TaskUnit {
  int unit_id = 0;
  int num_students = 0;   // A
  int num_questions = 0;  // B
  int num_skills = 0;     // C
  std::vector<ResponseRecord> records;
  QMatrix qmatrix;
  std::vector<int> support_indices;
  std::vector<int> query_indices;
  uint64_t split_seed = 0;
  std::optional<SyntheticOracle> oracle;

  bool has_split() const { return !support_indices.empty() || !query_indices.empty(); }
};

/// Per-student stratified split, deterministic under seed. Every student with
/// >= 2 records lands in both sets.
void split_support_query(TaskUnit& unit, double support_fraction, uint64_t seed);

/// One unit of a sampled training batch: s record indices drawn with
/// replacement from the unit's support and query sets.
struct TaskSample {
  const TaskUnit* unit = nullptr;
  std::vector<int> support;  // indices into unit->records
  std::vector<int> query;
};

/// Draw n units without replacement, then s support and s query samples per
/// unit with replacement.
std::vector<TaskSample> sample_task_batch(const std::vector<TaskUnit>& pool,
                                          int n, int s, uint64_t seed);

/// Total response count per question over all records of the unit.
std::vector<int> question_counts(const TaskUnit& unit);

// Canonical task-unit files: <stem>.json holds the records in the public log
// layout; <stem>.manifest.json holds ids, counts, the split, and the oracle,
// so an experiment replays bit-exactly.
void save_unit(const std::filesystem::path& dir, const std::string& stem,
               const TaskUnit& unit);
TaskUnit load_unit(const std::filesystem::path& dir, const std::string& stem);

}  // namespace metacd
