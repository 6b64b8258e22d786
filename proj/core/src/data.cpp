#include "metacd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "metacd/rng.hpp"
#include "metacd/serialize.hpp"

namespace metacd {

void split_support_query(TaskUnit& unit, double support_fraction, uint64_t seed) {
  if (support_fraction <= 0.0 || support_fraction >= 1.0)
    throw ConfigError("split_support_query: support_fraction must be in (0, 1)");
  if (unit.records.size() < 2)
    throw ConfigError("split_support_query: unit too small to split");

  std::map<int, std::vector<int>> by_student;
  for (size_t i = 0; i < unit.records.size(); ++i)
    by_student[unit.records[i].student_id].push_back(static_cast<int>(i));

  unit.support_indices.clear();
  unit.query_indices.clear();
  for (auto& [student, idx] : by_student) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(student)));
    for (size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.uniform_int(static_cast<int>(i))]);
    const int count = static_cast<int>(idx.size());
    int n_support = static_cast<int>(std::lround(support_fraction * count));
    if (count >= 2) n_support = std::clamp(n_support, 1, count - 1);
    for (int i = 0; i < count; ++i)
      (i < n_support ? unit.support_indices : unit.query_indices).push_back(idx[i]);
  }
  std::sort(unit.support_indices.begin(), unit.support_indices.end());
  std::sort(unit.query_indices.begin(), unit.query_indices.end());
  unit.split_seed = seed;
}

std::vector<TaskSample> sample_task_batch(const std::vector<TaskUnit>& pool,
                                          int n, int s, uint64_t seed) {
  if (pool.empty()) throw ConfigError("sample_task_batch: empty pool");
  if (n < 1 || n > static_cast<int>(pool.size()))
    throw ConfigError("sample_task_batch: n must be in [1, pool size]");
  if (s < 1) throw ConfigError("sample_task_batch: s must be >= 1");

  Rng rng(seed);
  const std::vector<int> chosen =
      rng.sample_without_replacement(static_cast<int>(pool.size()), n);

  std::vector<TaskSample> batch;
  batch.reserve(n);
  for (int u : chosen) {
    const TaskUnit& unit = pool[u];
    TaskSample sample;
    sample.unit = &unit;
    sample.support.reserve(s);
    sample.query.reserve(s);
    const auto& sup = unit.support_indices;
    const auto& qry = unit.query_indices;
    for (int i = 0; i < s && !sup.empty(); ++i)
      sample.support.push_back(sup[rng.uniform_int(static_cast<int>(sup.size()))]);
    for (int i = 0; i < s && !qry.empty(); ++i)
      sample.query.push_back(qry[rng.uniform_int(static_cast<int>(qry.size()))]);
    batch.push_back(std::move(sample));
  }
  return batch;
}

std::vector<int> question_counts(const TaskUnit& unit) {
  std::vector<int> counts(unit.num_questions, 0);
  for (const auto& r : unit.records) ++counts[r.question_id];
  return counts;
}

namespace {

nlohmann::json records_to_json(const std::vector<ResponseRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records) {
    arr.push_back({{"user_id", r.student_id},
                   {"exercise_id", r.question_id},
                   {"knowledge_code", r.skill_ids},
                   {"score", r.score}});
  }
  return arr;
}

}  // namespace

void save_unit(const std::filesystem::path& dir, const std::string& stem,
               const TaskUnit& unit) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / (stem + ".json"), records_to_json(unit.records).dump(2) + "\n");

  nlohmann::json manifest;
  manifest["unit_id"] = unit.unit_id;
  manifest["num_students"] = unit.num_students;
  manifest["num_questions"] = unit.num_questions;
  manifest["num_skills"] = unit.num_skills;
  manifest["split_seed"] = unit.split_seed;
  manifest["support_indices"] = unit.support_indices;
  manifest["query_indices"] = unit.query_indices;
  nlohmann::json qm = nlohmann::json::array();
  for (int q = 0; q < unit.qmatrix.questions; ++q) qm.push_back(unit.qmatrix.skills_of(q));
  manifest["qmatrix"] = qm;
  if (unit.oracle) {
    manifest["oracle"] = {{"masteries", unit.oracle->masteries},
                          {"slip", unit.oracle->slip},
                          {"guess", unit.oracle->guess}};
  }
  write_text_file(dir / (stem + ".manifest.json"), manifest.dump(2) + "\n");
}

TaskUnit load_unit(const std::filesystem::path& dir, const std::string& stem) {
  const auto records_path = dir / (stem + ".json");
  const auto manifest_path = dir / (stem + ".manifest.json");
  nlohmann::json records_json = nlohmann::json::parse(read_text_file(records_path));
  nlohmann::json manifest = nlohmann::json::parse(read_text_file(manifest_path));

  TaskUnit unit;
  unit.unit_id = manifest.at("unit_id").get<int>();
  unit.num_students = manifest.at("num_students").get<int>();
  unit.num_questions = manifest.at("num_questions").get<int>();
  unit.num_skills = manifest.at("num_skills").get<int>();
  unit.split_seed = manifest.at("split_seed").get<uint64_t>();
  unit.support_indices = manifest.at("support_indices").get<std::vector<int>>();
  unit.query_indices = manifest.at("query_indices").get<std::vector<int>>();

  unit.qmatrix = QMatrix(unit.num_questions, unit.num_skills);
  const auto& qm = manifest.at("qmatrix");
  for (int q = 0; q < unit.num_questions; ++q)
    for (int k : qm.at(q).get<std::vector<int>>()) unit.qmatrix.set(q, k);

  for (const auto& rj : records_json) {
    ResponseRecord r;
    r.student_id = rj.at("user_id").get<int>();
    r.question_id = rj.at("exercise_id").get<int>();
    r.skill_ids = rj.at("knowledge_code").get<std::vector<int>>();
    r.score = rj.at("score").get<int>();
    unit.records.push_back(std::move(r));
  }

  if (manifest.contains("oracle")) {
    SyntheticOracle o;
    o.masteries = manifest["oracle"].at("masteries").get<std::vector<uint8_t>>();
    o.slip = manifest["oracle"].at("slip").get<double>();
    o.guess = manifest["oracle"].at("guess").get<double>();
    unit.oracle = std::move(o);
  }
  return unit;
}

}  // namespace metacd
