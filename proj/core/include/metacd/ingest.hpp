#pragma once

#include "metacd/data.hpp"

namespace metacd {

struct IngestStats {
  int null_records = 0;
  int missing_field = 0;    // also counts malformed field values
  int duplicates = 0;
  int students_dropped = 0;
  int records_of_dropped_students = 0;
  int kept = 0;
};

struct IngestResult {
  TaskUnit unit;
  IngestStats stats;
};

/// Read one JSON log file (array of {user_id, exercise_id, knowledge_code,
/// score}). Null, incomplete, and exactly duplicated records are dropped,
/// students with <= 5 remaining records are dropped, ids are densely
/// re-indexed in ascending original order, and the Q-matrix is built from the
/// observed question-skill pairs.
IngestResult ingest_json(const std::filesystem::path& path);

/// Directory form: one unit per *.json file (manifest sidecars are skipped).
std::vector<IngestResult> ingest_path(const std::filesystem::path& path);

}  // namespace metacd
