#pragma once

#include "metacd/data.hpp"
#include "metacd/rng.hpp"

namespace metacd {

/// Knobs of the long-tailed student simulator. Records are scored by the
/// DINA rule: correct with probability 1-slip when the student masters every
/// skill the question tests, otherwise with probability guess.
struct SyntheticWorldConfig {
  int num_students = 48;
  int num_questions = 120;
  int num_skills = 10;
  double slip = 0.15;
  double guess = 0.15;
  double zipf_exponent = 1.1;  // question-popularity tail
  int records_target = 3360;
  double drift = 0.25;  // per-task mastery flip probability in sequences
  uint64_t rng_seed = 1;
  int max_skills_per_question = 2;
  double mastery_prob = 0.55;
  // Per-skill mastery rates are drawn from mastery_prob +/- this spread and
  // shared across the family, so units are related through which skills the
  // population tends to master while individual students vary.
  double mastery_profile_spread = 0.3;

  void validate() const;
};

/// Structure shared by every unit of a family: the Q-matrix, the Zipf
/// popularity assigned to each question id, and the per-skill mastery rates.
struct QuestionBank {
  QMatrix qmatrix;
  std::vector<double> question_prob;      // sums to 1
  std::vector<double> skill_mastery_prob; // per-skill Bernoulli rate
};

QuestionBank build_question_bank(const SyntheticWorldConfig& cfg);

std::vector<uint8_t> draw_masteries(const QuestionBank& bank,
                                    const SyntheticWorldConfig& cfg, Rng& rng);
std::vector<uint8_t> drift_masteries(const std::vector<uint8_t>& prev,
                                     double drift, Rng& rng);

/// Score a unit against a bank and a mastery matrix. records_target
/// interactions are spread evenly over students (everyone clears the
/// >5-records filter); questions are drawn from the bank's Zipf weights.
TaskUnit generate_unit(const QuestionBank& bank, const SyntheticWorldConfig& cfg,
                       const std::vector<uint8_t>& masteries, uint64_t unit_seed,
                       int unit_id, int records_override = -1);

/// One-shot generation: builds a private bank, draws masteries, scores.
TaskUnit generate_synthetic(const SyntheticWorldConfig& cfg);

/// A family of related units over one shared question bank. fresh_unit draws
/// independent masteries; next_drift_unit flips each bit of the previous
/// unit's masteries with probability cfg.drift.
class SyntheticFamily {
 public:
  explicit SyntheticFamily(SyntheticWorldConfig cfg);

  TaskUnit fresh_unit(int unit_id, int records_override = -1);
  TaskUnit next_drift_unit(int unit_id, int records_override = -1);

  const QuestionBank& bank() const { return bank_; }
  const SyntheticWorldConfig& config() const { return cfg_; }

 private:
  SyntheticWorldConfig cfg_;
  QuestionBank bank_;
  std::vector<uint8_t> last_masteries_;
  int counter_ = 0;
};

}  // namespace metacd
