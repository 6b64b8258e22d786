#include "metacd/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace metacd {

void SyntheticWorldConfig::validate() const {
  if (num_students < 1 || num_questions < 1 || num_skills < 1)
    throw ConfigError("synthetic: counts must be positive");
  if (slip < 0.0 || slip >= 1.0 || guess < 0.0 || guess >= 1.0)
    throw ConfigError("synthetic: slip and guess must be in [0, 1)");
  if (slip + guess >= 1.0)
    throw ConfigError("synthetic: slip + guess must be < 1, otherwise mastery is uninformative");
  if (zipf_exponent <= 0.0) throw ConfigError("synthetic: zipf_exponent must be > 0");
  if (drift < 0.0 || drift > 1.0) throw ConfigError("synthetic: drift must be in [0, 1]");
  if (mastery_prob <= 0.0 || mastery_prob >= 1.0)
    throw ConfigError("synthetic: mastery_prob must be in (0, 1)");
  if (mastery_profile_spread < 0.0 || mastery_profile_spread >= 0.5)
    throw ConfigError("synthetic: mastery_profile_spread must be in [0, 0.5)");
  if (max_skills_per_question < 1 || max_skills_per_question > num_skills)
    throw ConfigError("synthetic: max_skills_per_question out of range");
  if (records_target < num_students * 6)
    throw ConfigError("synthetic: records_target below num_students * 6, cannot satisfy the >5-records filter");
}

QuestionBank build_question_bank(const SyntheticWorldConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.rng_seed, 0xBA5E));

  QuestionBank bank;
  bank.qmatrix = QMatrix(cfg.num_questions, cfg.num_skills);
  for (int q = 0; q < cfg.num_questions; ++q) {
    const int n_skills = 1 + rng.uniform_int(cfg.max_skills_per_question);
    const auto chosen = rng.sample_without_replacement(cfg.num_skills, n_skills);
    for (int k : chosen) bank.qmatrix.set(q, k);
  }

  // Zipf mass over popularity ranks, then a random rank permutation so the
  // question id does not encode popularity.
  std::vector<double> rank_mass(cfg.num_questions);
  double total = 0.0;
  for (int r = 0; r < cfg.num_questions; ++r) {
    rank_mass[r] = std::pow(static_cast<double>(r + 1), -cfg.zipf_exponent);
    total += rank_mass[r];
  }
  std::vector<int> perm(cfg.num_questions);
  for (int i = 0; i < cfg.num_questions; ++i) perm[i] = i;
  for (size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[rng.uniform_int(static_cast<int>(i))]);

  bank.question_prob.assign(cfg.num_questions, 0.0);
  for (int r = 0; r < cfg.num_questions; ++r)
    bank.question_prob[perm[r]] = rank_mass[r] / total;

  bank.skill_mastery_prob.resize(cfg.num_skills);
  for (double& p : bank.skill_mastery_prob) {
    p = rng.uniform(cfg.mastery_prob - cfg.mastery_profile_spread,
                    cfg.mastery_prob + cfg.mastery_profile_spread);
    p = std::clamp(p, 0.05, 0.95);
  }
  return bank;
}

std::vector<uint8_t> draw_masteries(const QuestionBank& bank,
                                    const SyntheticWorldConfig& cfg, Rng& rng) {
  std::vector<uint8_t> m(static_cast<size_t>(cfg.num_students) * cfg.num_skills);
  for (int s = 0; s < cfg.num_students; ++s)
    for (int k = 0; k < cfg.num_skills; ++k)
      m[static_cast<size_t>(s) * cfg.num_skills + k] =
          rng.bernoulli(bank.skill_mastery_prob[k]) ? 1 : 0;
  return m;
}

std::vector<uint8_t> drift_masteries(const std::vector<uint8_t>& prev,
                                     double drift, Rng& rng) {
  std::vector<uint8_t> m = prev;
  for (auto& bit : m)
    if (rng.bernoulli(drift)) bit = bit ? 0 : 1;
  return m;
}

TaskUnit generate_unit(const QuestionBank& bank, const SyntheticWorldConfig& cfg,
                       const std::vector<uint8_t>& masteries, uint64_t unit_seed,
                       int unit_id, int records_override) {
  const int records_target = records_override > 0 ? records_override : cfg.records_target;
  if (records_target < cfg.num_students * 6)
    throw ConfigError("generate_unit: records_target below num_students * 6, cannot satisfy the >5-records filter");

  Rng rng(derive_seed(unit_seed, 0x0EC0));

  // cumulative question distribution for inverse-CDF sampling
  std::vector<double> cdf(bank.question_prob.size());
  double acc = 0.0;
  for (size_t q = 0; q < cdf.size(); ++q) {
    acc += bank.question_prob[q];
    cdf[q] = acc;
  }

  TaskUnit unit;
  unit.unit_id = unit_id;
  unit.num_students = cfg.num_students;
  unit.num_questions = cfg.num_questions;
  unit.num_skills = cfg.num_skills;
  unit.qmatrix = bank.qmatrix;
  unit.oracle = SyntheticOracle{masteries, cfg.slip, cfg.guess};

  const int base = records_target / cfg.num_students;
  const int extra = records_target % cfg.num_students;
  for (int student = 0; student < cfg.num_students; ++student) {
    const int quota = base + (student < extra ? 1 : 0);
    for (int i = 0; i < quota; ++i) {
      const double u = rng.uniform();
      const int q = static_cast<int>(
          std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      const int question = std::min(q, cfg.num_questions - 1);

      bool mastered = true;
      for (int k = 0; k < cfg.num_skills; ++k)
        if (bank.qmatrix.tests(question, k) &&
            !masteries[static_cast<size_t>(student) * cfg.num_skills + k])
          mastered = false;

      const double p_correct = mastered ? 1.0 - cfg.slip : cfg.guess;
      ResponseRecord r;
      r.student_id = student;
      r.question_id = question;
      r.skill_ids = bank.qmatrix.skills_of(question);
      r.score = rng.bernoulli(p_correct) ? 1 : 0;
      unit.records.push_back(std::move(r));
    }
  }
  return unit;
}

TaskUnit generate_synthetic(const SyntheticWorldConfig& cfg) {
  const QuestionBank bank = build_question_bank(cfg);
  Rng rng(derive_seed(cfg.rng_seed, 0x3A57));
  const auto masteries = draw_masteries(bank, cfg, rng);
  return generate_unit(bank, cfg, masteries, cfg.rng_seed, 0);
}

SyntheticFamily::SyntheticFamily(SyntheticWorldConfig cfg)
    : cfg_(std::move(cfg)), bank_(build_question_bank(cfg_)) {}

TaskUnit SyntheticFamily::fresh_unit(int unit_id, int records_override) {
  const uint64_t unit_seed = derive_seed(cfg_.rng_seed, 1000 + counter_);
  ++counter_;
  Rng rng(derive_seed(unit_seed, 0x3A57));
  last_masteries_ = draw_masteries(bank_, cfg_, rng);
  return generate_unit(bank_, cfg_, last_masteries_, unit_seed, unit_id, records_override);
}

TaskUnit SyntheticFamily::next_drift_unit(int unit_id, int records_override) {
  if (last_masteries_.empty()) return fresh_unit(unit_id, records_override);
  const uint64_t unit_seed = derive_seed(cfg_.rng_seed, 1000 + counter_);
  ++counter_;
  Rng rng(derive_seed(unit_seed, 0xD81F));
  last_masteries_ = drift_masteries(last_masteries_, cfg_.drift, rng);
  return generate_unit(bank_, cfg_, last_masteries_, unit_seed, unit_id, records_override);
}

}  // namespace metacd
