#pragma once

#include <functional>

#include "metacd/ppm.hpp"

namespace metacd {

struct MetaConfig {
  double alpha = 0.3;         // inner step on the copy
  double beta = 0.5;          // meta step on theta_M
  int batch_size = 5;         // n task units per iteration
  int inner_minibatches = 1;  // m minibatches per unit within one inner step
  int samples = 128;          // s records sampled per unit and split
  int meta_epochs = 200;
  int fine_tune_steps = 20;
  double adam_lr = 0.01;      // Adam, used for test-support fine-tuning
  uint64_t rng_seed = 7;
  bool per_task_copies = false;  // adapt a private copy per unit instead of one shared copy

  void validate() const;
};

struct MetaStepLog {
  int iteration = 0;
  double support_loss = 0.0;
  double query_loss = 0.0;
  double ppm_loss = 0.0;
};

struct MetaState {
  ParamSet theta_m;     // live initialization parameters
  ParamSet theta_copy;  // working copy, re-cloned every meta-iteration
  int iteration = 0;
  std::vector<MetaStepLog> history;
};

/// Builds the scalar training loss of one task sample at the bound leaves.
/// use_query selects the query half of the sample; mode_seed keys dropout.
using TaskLossFn =
    std::function<ad::NodeId(ad::Tape& tape, const BoundLeaves& leaves,
                             const TaskSample& sample, bool use_query,
                             uint64_t mode_seed)>;

/// Production loss: embedding + KB forward + binary cross-entropy, train mode.
TaskLossFn make_kb_loss(const KbArchitecture& arch);

/// Inner update: one aggregated step on the copy,
///   theta_copy -= alpha * mean over (unit, minibatch) of grad L(support).
/// Units with an empty support sample are skipped with a warning and the
/// divisor shrinks accordingly. Returns the mean support loss.
double kb_train_support(MetaState& state, const std::vector<TaskSample>& batch,
                        const MetaConfig& cfg, const TaskLossFn& loss_fn,
                        uint64_t iter_seed);

struct QueryStep {
  double query_loss = 0.0;
  double ppm_loss = 0.0;
};

/// Meta update: L_total = mean query loss at the adapted copy + L_PPM, and
/// the gradient taken at the copy is applied verbatim to theta_M (first
/// order). The copy itself is not updated. A null/empty importance map makes
/// the penalty vanish.
QueryStep kb_train_query(MetaState& state, const std::vector<TaskSample>& batch,
                         const MetaConfig& cfg, const TaskLossFn& loss_fn,
                         const ImportanceMap* importance, double ppm_weight,
                         uint64_t iter_seed);

struct MetaResult {
  ParamSet theta_star;
  std::vector<MetaStepLog> history;
};

/// Full loop: sample a batch, clone the copy, inner step, meta step. Aborts
/// with a diagnostic when the query loss stays above 10x its initial value
/// for 50 consecutive iterations. Batch sampling is keyed by (rng_seed,
/// iteration), so resuming from start_iteration replays the uninterrupted
/// run exactly.
MetaResult meta_train(const std::vector<TaskUnit>& pool, ParamSet init,
                      const MetaConfig& cfg, const TaskLossFn& loss_fn,
                      const ImportanceMap* importance = nullptr,
                      double ppm_weight = 1.0, int start_iteration = 0);

/// Adam fine-tuning on the support set of a test unit, with the protection
/// penalty when an anchor exists. steps_override >= 0 replaces
/// cfg.fine_tune_steps. An empty support returns theta_star unchanged.
ParamSet kb_test_support(const ParamSet& theta_star, const TaskUnit& unit,
                         const MetaConfig& cfg, const TaskLossFn& loss_fn,
                         const ImportanceMap* importance, double ppm_weight,
                         uint64_t seed, int steps_override = -1);

}  // namespace metacd
