#pragma once

#include "metacd/config.hpp"

namespace metacd {

/// Everything needed to score query records of one task: the fine-tuned KB
/// plus (optionally) the per-class heads and their separation mask.
struct PipelineModel {
  ParamSet kb;  // classifier attached
  HeadParams heads;
  SeparationMask mask;
  bool has_heads = false;
};

/// Meta-train a fresh Xavier initialization on the pool. All units must share
/// entity counts. Uses cfg.meta with rng_seed replaced by seed.
MetaResult run_meta_train(const std::vector<TaskUnit>& pool, const RunConfig& cfg,
                          uint64_t seed);

/// Fresh Xavier parameters shaped like the pool's units.
ParamSet xavier_init_for(const TaskUnit& unit, const RunConfig& cfg, uint64_t seed);

/// Importance anchored at theta_star with phi averaged over the first pool
/// units (at most three). This is the anchor the test-support stage protects.
ImportanceMap pool_importance(const ParamSet& theta_star,
                              const std::vector<TaskUnit>& pool,
                              const RunConfig& cfg);

/// Fine-tune on the unit's support set and, when with_heads, train the
/// per-class stage on the support features.
PipelineModel fit_test_unit(const ParamSet& theta_star, const TaskUnit& unit,
                            const RunConfig& cfg, const ImportanceMap* importance,
                            uint64_t seed, bool with_heads);

/// KB-only predictions: probability from the classifier, labels by
/// thresholding at 0.5.
PredictionSet predict_kb(const ParamSet& params, const TaskUnit& unit,
                         const std::vector<int>& indices);

/// Per-class predictions: labels from argmax over the heads, probabilities
/// still from the KB classifier (the heads emit uncalibrated scores).
PredictionSet predict_heads(const PipelineModel& model, const TaskUnit& unit,
                            const std::vector<int>& indices);

struct ContinualOutcome {
  EvalMatrix matrix;
  double bwt_value = 0.0;
};

/// Task-incremental protocol: meta-train on the pool, then fine-tune through
/// the sequence task by task, evaluating every seen task after each stage.
/// ppm_enabled toggles both the penalty and the anchor updates. When
/// init_override is given the meta-training phase is skipped and the
/// sequence starts from those parameters instead (used by --no-meta and by
/// paired-arm experiments that share one meta-trained initialization).
ContinualOutcome run_continual(const std::vector<TaskUnit>& pool,
                               const std::vector<TaskUnit>& sequence,
                               const RunConfig& cfg, bool ppm_enabled,
                               uint64_t seed,
                               const ParamSet* init_override = nullptr);

struct AblationRow {
  std::string arm;
  double acc = 0.0;
};

/// Four arms under identical seeds: full pipeline, w/o KB (no meta-training),
/// w/o PPM (penalty off everywhere), w/o Per-class (threshold the classifier).
/// Each arm fine-tunes on the test unit, establishes the protection anchor
/// there, continues onto the successor task, and is then scored on the test
/// unit's query set — the setting where transfer, retention, and boundary
/// calibration each carry measurable weight. The per-class arms train their
/// heads on the test unit's support features under the final parameters.
std::vector<AblationRow> run_ablation(const std::vector<TaskUnit>& pool,
                                      const TaskUnit& test_unit,
                                      const TaskUnit& successor_unit,
                                      const RunConfig& cfg, uint64_t seed);

struct GridRow {
  double eta = 0.0;
  double lambda = 0.0;
  int mu = 2;
  double val_acc = 0.0;
};

/// Head-hyperparameter sweep on one unit: fine-tunes once, extracts features
/// once, then trains heads per (eta, lambda, mu) cell at cfg.grid.steps.
/// Rows come back sorted by validation accuracy, best first. Cells fan out
/// over cfg.grid.jobs threads; each cell is seeded independently.
std::vector<GridRow> run_grid(const ParamSet& theta_star, const TaskUnit& unit,
                              const RunConfig& cfg, const ImportanceMap* importance,
                              uint64_t seed);

/// Metric dispatch for the continual matrix ("auc" or "acc").
double metric_value(const std::string& metric, const PredictionSet& preds);

}  // namespace metacd
