#include "metacd/ingest.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <json.hpp>

#include "metacd/serialize.hpp"

namespace metacd {

namespace {

bool valid_int(const nlohmann::json& j, const char* key) {
  return j.contains(key) && j[key].is_number_integer();
}

}  // namespace

IngestResult ingest_json(const std::filesystem::path& path) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + " at byte " +
                      std::to_string(e.byte) + ": " + e.what());
  }
  if (!root.is_array())
    throw ConfigError(path.string() + ": expected a top-level array of records");

  IngestResult result;
  IngestStats& stats = result.stats;

  std::vector<ResponseRecord> raw;
  for (const auto& rj : root) {
    if (rj.is_null()) {
      ++stats.null_records;
      continue;
    }
    if (!rj.is_object() || !valid_int(rj, "user_id") || !valid_int(rj, "exercise_id") ||
        !rj.contains("knowledge_code") || !rj["knowledge_code"].is_array() ||
        rj["knowledge_code"].empty() || !valid_int(rj, "score")) {
      ++stats.missing_field;
      continue;
    }
    const int score = rj["score"].get<int>();
    if (score != 0 && score != 1) {
      ++stats.missing_field;
      continue;
    }
    ResponseRecord r;
    r.student_id = rj["user_id"].get<int>();
    r.question_id = rj["exercise_id"].get<int>();
    bool skills_ok = true;
    for (const auto& k : rj["knowledge_code"]) {
      if (!k.is_number_integer()) {
        skills_ok = false;
        break;
      }
      r.skill_ids.push_back(k.get<int>());
    }
    if (!skills_ok) {
      ++stats.missing_field;
      continue;
    }
    std::sort(r.skill_ids.begin(), r.skill_ids.end());
    r.skill_ids.erase(std::unique(r.skill_ids.begin(), r.skill_ids.end()),
                      r.skill_ids.end());
    r.score = score;
    raw.push_back(std::move(r));
  }

  // A question's skill set is a property of the question: normalize every
  // record to the union of the skills observed for its question, before
  // deduplication, so records always agree with their Q-matrix row.
  std::map<int, std::set<int>> question_skills;
  for (const auto& r : raw)
    question_skills[r.question_id].insert(r.skill_ids.begin(), r.skill_ids.end());
  for (auto& r : raw) {
    const auto& u = question_skills[r.question_id];
    r.skill_ids.assign(u.begin(), u.end());
  }

  // exact-duplicate removal, first instance kept
  std::set<ResponseRecord> seen;
  std::vector<ResponseRecord> unique;
  for (auto& r : raw) {
    if (seen.insert(r).second)
      unique.push_back(std::move(r));
    else
      ++stats.duplicates;
  }

  // >5 interaction records per student
  std::map<int, int> per_student;
  for (const auto& r : unique) ++per_student[r.student_id];
  std::set<int> kept_students;
  for (const auto& [s, n] : per_student) {
    if (n > 5)
      kept_students.insert(s);
    else
      ++stats.students_dropped;
  }
  std::vector<ResponseRecord> kept;
  for (auto& r : unique) {
    if (kept_students.count(r.student_id))
      kept.push_back(std::move(r));
    else
      ++stats.records_of_dropped_students;
  }
  if (kept.empty())
    throw ConfigError(path.string() + ": no usable records after filtering");

  // dense re-indexing in ascending original-id order
  std::set<int> questions, skills;
  for (const auto& r : kept) {
    questions.insert(r.question_id);
    for (int k : r.skill_ids) skills.insert(k);
  }
  std::map<int, int> student_map, question_map, skill_map;
  for (int s : kept_students) student_map.emplace(s, static_cast<int>(student_map.size()));
  for (int q : questions) question_map.emplace(q, static_cast<int>(question_map.size()));
  for (int k : skills) skill_map.emplace(k, static_cast<int>(skill_map.size()));

  TaskUnit& unit = result.unit;
  unit.num_students = static_cast<int>(student_map.size());
  unit.num_questions = static_cast<int>(question_map.size());
  unit.num_skills = static_cast<int>(skill_map.size());
  unit.qmatrix = QMatrix(unit.num_questions, unit.num_skills);

  for (auto& r : kept) {
    r.student_id = student_map[r.student_id];
    r.question_id = question_map[r.question_id];
    for (int& k : r.skill_ids) k = skill_map[k];
    std::sort(r.skill_ids.begin(), r.skill_ids.end());
    for (int k : r.skill_ids) unit.qmatrix.set(r.question_id, k);
    unit.records.push_back(std::move(r));
  }
  stats.kept = static_cast<int>(unit.records.size());
  return result;
}

std::vector<IngestResult> ingest_path(const std::filesystem::path& path) {
  std::vector<IngestResult> out;
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      const auto& p = entry.path();
      if (p.extension() == ".json" &&
          p.filename().string().find(".manifest.") == std::string::npos)
        files.push_back(p);
    }
    std::sort(files.begin(), files.end());
    int id = 0;
    for (const auto& f : files) {
      out.push_back(ingest_json(f));
      out.back().unit.unit_id = id++;
    }
    if (out.empty()) throw ConfigError(path.string() + ": no .json files found");
  } else {
    out.push_back(ingest_json(path));
  }
  return out;
}

}  // namespace metacd
