#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "metacd/ingest.hpp"
#include "metacd/serialize.hpp"
#include "metacd/synthetic.hpp"

using namespace metacd;
namespace fs = std::filesystem;

namespace {

TaskUnit tiny_unit(int students, int records_per_student) {
  TaskUnit unit;
  unit.num_students = students;
  unit.num_questions = 4;
  unit.num_skills = 2;
  unit.qmatrix = QMatrix(4, 2);
  for (int q = 0; q < 4; ++q) unit.qmatrix.set(q, q % 2);
  for (int s = 0; s < students; ++s)
    for (int r = 0; r < records_per_student; ++r) {
      ResponseRecord rec;
      rec.student_id = s;
      rec.question_id = r % 4;
      rec.skill_ids = unit.qmatrix.skills_of(rec.question_id);
      rec.score = (s + r) % 2;
      unit.records.push_back(rec);
    }
  return unit;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "metacd_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("split 10 records at one half gives a 5/5 disjoint split") {
  TaskUnit unit = tiny_unit(1, 10);
  split_support_query(unit, 0.5, 7);
  CHECK(unit.support_indices.size() == 5);
  CHECK(unit.query_indices.size() == 5);
  std::set<int> all(unit.support_indices.begin(), unit.support_indices.end());
  for (int i : unit.query_indices) CHECK(all.insert(i).second);
  CHECK(all.size() == 10);
}

TEST_CASE("same split seed gives identical splits") {
  TaskUnit a = tiny_unit(5, 12), b = tiny_unit(5, 12);
  split_support_query(a, 0.7, 99);
  split_support_query(b, 0.7, 99);
  CHECK(a.support_indices == b.support_indices);
  CHECK(a.query_indices == b.query_indices);
  TaskUnit c = tiny_unit(5, 12);
  split_support_query(c, 0.7, 100);
  CHECK(c.support_indices != a.support_indices);
}

TEST_CASE("stratified 0.8 split lands within one record per student") {
  TaskUnit unit = tiny_unit(10, 10);  // 100 records
  split_support_query(unit, 0.8, 3);
  std::map<int, int> sup, qry;
  for (int i : unit.support_indices) ++sup[unit.records[i].student_id];
  for (int i : unit.query_indices) ++qry[unit.records[i].student_id];
  for (int s = 0; s < 10; ++s) {
    CHECK(std::abs(sup[s] - 8) <= 1);
    CHECK(sup[s] + qry[s] == 10);
    CHECK(qry[s] >= 1);  // every student visible on both sides
  }
}

TEST_CASE("batch draws n units without replacement and s samples each") {
  std::vector<TaskUnit> pool;
  for (int u = 0; u < 6; ++u) {
    pool.push_back(tiny_unit(3, 8));
    pool.back().unit_id = u;
    split_support_query(pool.back(), 0.75, u);
  }
  const auto batch = sample_task_batch(pool, 5, 128, 17);
  CHECK(batch.size() == 5);
  std::set<const TaskUnit*> seen;
  for (const auto& s : batch) {
    CHECK(seen.insert(s.unit).second);
    CHECK(s.support.size() == 128);
    CHECK(s.query.size() == 128);
    for (int i : s.support)
      CHECK(std::count(s.unit->support_indices.begin(),
                       s.unit->support_indices.end(), i) == 1);
  }

  const auto all = sample_task_batch(pool, 6, 4, 17);
  std::set<int> ids;
  for (const auto& s : all) ids.insert(s.unit->unit_id);
  CHECK(ids.size() == 6);

  const auto again = sample_task_batch(pool, 5, 128, 17);
  for (size_t i = 0; i < 5; ++i) {
    CHECK(again[i].unit == batch[i].unit);
    CHECK(again[i].support == batch[i].support);
  }
}

TEST_CASE("noiseless synthetic scores equal the mastery conjunction") {
  SyntheticWorldConfig cfg;
  cfg.num_students = 12;
  cfg.num_questions = 30;
  cfg.num_skills = 5;
  cfg.slip = 0.0;
  cfg.guess = 0.0;
  cfg.records_target = 12 * 20;
  cfg.rng_seed = 5;
  const TaskUnit unit = generate_synthetic(cfg);
  REQUIRE(unit.oracle.has_value());
  const auto& m = unit.oracle->masteries;
  for (const auto& r : unit.records) {
    bool mastered = true;  // independent re-derivation of the DINA rule
    for (int k : r.skill_ids)
      mastered = mastered && m[static_cast<size_t>(r.student_id) * cfg.num_skills + k];
    CHECK(r.score == (mastered ? 1 : 0));
  }
}

TEST_CASE("zipf tail puts most responses on the top decile") {
  SyntheticWorldConfig cfg;
  cfg.num_students = 100;
  cfg.num_questions = 200;
  cfg.num_skills = 6;
  cfg.zipf_exponent = 1.2;
  cfg.records_target = 20000;
  cfg.rng_seed = 2;
  const TaskUnit unit = generate_synthetic(cfg);

  auto counts = question_counts(unit);
  std::sort(counts.begin(), counts.end(), std::greater<int>());
  long top = 0, total = 0;
  for (size_t i = 0; i < counts.size(); ++i) {
    if (i < 20) top += counts[i];
    total += counts[i];
  }
  const double top_share = static_cast<double>(top) / total;
  CHECK(top_share > 0.5);

  // direct Zipf mass of the top 20 ranks
  double mass_top = 0, mass_all = 0;
  for (int r = 1; r <= 200; ++r) {
    const double m = std::pow(r, -1.2);
    if (r <= 20) mass_top += m;
    mass_all += m;
  }
  CHECK(top_share == doctest::Approx(mass_top / mass_all).epsilon(0.05));
}

TEST_CASE("drift flips about the configured fraction of mastery bits") {
  double total_flip = 0.0;
  int steps = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    SyntheticWorldConfig cfg;
    cfg.num_students = 30;
    cfg.num_questions = 40;
    cfg.num_skills = 10;
    cfg.drift = 0.1;
    cfg.records_target = 30 * 10;
    cfg.rng_seed = seed;
    SyntheticFamily family(cfg);
    TaskUnit prev = family.fresh_unit(0);
    for (int t = 1; t < 4; ++t) {
      TaskUnit next = family.next_drift_unit(t);
      int flips = 0;
      for (size_t i = 0; i < prev.oracle->masteries.size(); ++i)
        flips += prev.oracle->masteries[i] != next.oracle->masteries[i] ? 1 : 0;
      total_flip += static_cast<double>(flips) / prev.oracle->masteries.size();
      ++steps;
      prev = std::move(next);
    }
  }
  CHECK(total_flip / steps == doctest::Approx(0.1).epsilon(0.3));
}

TEST_CASE("records_target below six per student is rejected") {
  SyntheticWorldConfig cfg;
  cfg.num_students = 50;
  cfg.records_target = 50 * 5;
  CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
}

TEST_CASE("every generated student clears the five-record filter") {
  SyntheticWorldConfig cfg;
  cfg.rng_seed = 8;
  const TaskUnit unit = generate_synthetic(cfg);
  std::map<int, int> per_student;
  for (const auto& r : unit.records) ++per_student[r.student_id];
  CHECK(static_cast<int>(per_student.size()) == cfg.num_students);
  for (const auto& [s, n] : per_student) CHECK(n >= 6);
}

TEST_CASE("ingest drops a student with too few records") {
  const fs::path dir = temp_dir("ingest_small");
  write_text_file(dir / "logs.json", R"([
    {"user_id": 1, "exercise_id": 10, "knowledge_code": [1], "score": 1},
    {"user_id": 1, "exercise_id": 11, "knowledge_code": [2], "score": 0},
    {"user_id": 1, "exercise_id": 12, "knowledge_code": [1], "score": 1}
  ])");
  CHECK_THROWS_WITH_AS(ingest_json(dir / "logs.json"),
                       doctest::Contains("no usable records"), ConfigError);
}

TEST_CASE("ingest deduplicates and counts drops") {
  const fs::path dir = temp_dir("ingest_dup");
  std::string rows;
  for (int r = 0; r < 7; ++r)
    rows += "{\"user_id\": 3, \"exercise_id\": " + std::to_string(20 + r) +
            ", \"knowledge_code\": [1,2], \"score\": 1},";
  write_text_file(dir / "logs.json",
                  "[" + rows +
                      R"({"user_id": 3, "exercise_id": 20, "knowledge_code": [1,2], "score": 1},
    null,
    {"user_id": 3, "exercise_id": 26, "knowledge_code": [], "score": 1},
    {"user_id": 3, "exercise_id": 27, "score": 1}])");
  const auto result = ingest_json(dir / "logs.json");
  CHECK(result.stats.duplicates == 1);
  CHECK(result.stats.null_records == 1);
  CHECK(result.stats.missing_field == 2);
  CHECK(result.stats.kept == 7);
}

TEST_CASE("forty-record fixture builds a four-student unit") {
  const fs::path dir = temp_dir("ingest_fixture");
  // 4 students x 10 records over questions 100..104, skills {7, 9, 11}
  std::string rows;
  int expected_per_student[4] = {0, 0, 0, 0};  // independent tally
  for (int s = 0; s < 4; ++s)
    for (int r = 0; r < 10; ++r) {
      const int q = 100 + (s * 3 + r) % 5;
      const int k = 7 + 2 * (q % 3);
      rows += "{\"user_id\": " + std::to_string(50 + s) +
              ", \"exercise_id\": " + std::to_string(q) +
              ", \"knowledge_code\": [" + std::to_string(k) +
              "], \"score\": " + std::to_string((s + r) % 2) + "}";
      if (s != 3 || r != 9) rows += ",";
      ++expected_per_student[s];
    }
  write_text_file(dir / "logs.json", "[" + rows + "]");
  const auto result = ingest_json(dir / "logs.json");
  const TaskUnit& unit = result.unit;
  CHECK(unit.num_students == 4);
  CHECK(unit.num_questions == 5);
  CHECK(unit.num_skills == 3);
  CHECK(unit.records.size() == 40);
  CHECK(unit.qmatrix.all_rows_nonzero());
  std::map<int, int> per_student;
  for (const auto& r : unit.records) ++per_student[r.student_id];
  for (int s = 0; s < 4; ++s) CHECK(per_student[s] == expected_per_student[s]);
}

TEST_CASE("malformed JSON reports a byte offset") {
  const fs::path dir = temp_dir("ingest_bad");
  write_text_file(dir / "bad.json", "[{\"user_id\": 1,,]");
  CHECK_THROWS_WITH_AS(ingest_json(dir / "bad.json"), doctest::Contains("byte"),
                       ConfigError);
}

TEST_CASE("ingestion is idempotent on its own output") {
  const fs::path dir = temp_dir("ingest_idem");
  std::string rows;
  Rng rng(4);
  for (int i = 0; i < 80; ++i) {
    const int s = rng.uniform_int(6), q = rng.uniform_int(9);
    rows += "{\"user_id\": " + std::to_string(s * 11) +
            ", \"exercise_id\": " + std::to_string(q * 7) +
            ", \"knowledge_code\": [" + std::to_string(q % 4) + "," +
            std::to_string(4 + q % 3) + "], \"score\": " +
            std::to_string(rng.uniform_int(2)) + "},";
  }
  rows.pop_back();
  write_text_file(dir / "raw.json", "[" + rows + "]");

  const TaskUnit first = ingest_json(dir / "raw.json").unit;
  save_unit(dir, "canonical", first);
  const TaskUnit second = ingest_json(dir / "canonical.json").unit;
  CHECK(first.records == second.records);
  CHECK(first.num_students == second.num_students);
  CHECK(first.num_questions == second.num_questions);
  CHECK(first.num_skills == second.num_skills);
  CHECK(first.qmatrix.bits == second.qmatrix.bits);
}

TEST_CASE("canonical unit files round-trip the full unit") {
  const fs::path dir = temp_dir("unit_roundtrip");
  SyntheticWorldConfig cfg;
  cfg.num_students = 8;
  cfg.num_questions = 12;
  cfg.num_skills = 4;
  cfg.records_target = 8 * 9;
  cfg.rng_seed = 77;
  TaskUnit unit = generate_synthetic(cfg);
  split_support_query(unit, 0.8, 123);
  save_unit(dir, "u0", unit);
  const TaskUnit loaded = load_unit(dir, "u0");
  CHECK(loaded.records == unit.records);
  CHECK(loaded.support_indices == unit.support_indices);
  CHECK(loaded.query_indices == unit.query_indices);
  CHECK(loaded.split_seed == unit.split_seed);
  CHECK(loaded.qmatrix.bits == unit.qmatrix.bits);
  REQUIRE(loaded.oracle.has_value());
  CHECK(loaded.oracle->masteries == unit.oracle->masteries);
  CHECK(loaded.oracle->slip == unit.oracle->slip);
}

TEST_CASE("unit too small to split is rejected") {
  TaskUnit unit = tiny_unit(1, 1);
  CHECK_THROWS_AS(split_support_query(unit, 0.5, 1), ConfigError);
  TaskUnit ok = tiny_unit(1, 2);
  split_support_query(ok, 0.5, 1);
  CHECK(ok.support_indices.size() == 1);
  CHECK(ok.query_indices.size() == 1);
}

}  // TEST_SUITE
