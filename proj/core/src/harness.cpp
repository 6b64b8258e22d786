#include "metacd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace metacd {

namespace {

void check_pool(const std::vector<TaskUnit>& pool) {
  if (pool.empty()) throw ConfigError("harness: empty task pool");
  for (const auto& u : pool)
    if (u.num_students != pool[0].num_students ||
        u.num_questions != pool[0].num_questions ||
        u.num_skills != pool[0].num_skills)
      throw ConfigError("harness: task units must share entity counts to share parameters");
}

KbArchitecture arch_for(const TaskUnit& unit, const RunConfig& cfg) {
  KbArchitecture arch;
  arch.input_dim = unit.num_skills;
  arch.hidden = cfg.arch.hidden;
  arch.dropout = cfg.arch.dropout;
  return arch;
}

FeatureDataset support_features(const ParamSet& fine_tuned, const TaskUnit& unit) {
  const ParamSet extractor = strip_classifier(fine_tuned);
  FeatureDataset features;
  features.dim = arch_of(extractor).feature_dim();
  features.x = kb_features(extractor, unit, unit.support_indices);
  features.y.reserve(unit.support_indices.size());
  for (int i : unit.support_indices) features.y.push_back(unit.records[i].score);
  return features;
}

}  // namespace

ParamSet xavier_init_for(const TaskUnit& unit, const RunConfig& cfg, uint64_t seed) {
  return init_params(arch_for(unit, cfg), unit.num_students, unit.num_questions, seed);
}

MetaResult run_meta_train(const std::vector<TaskUnit>& pool, const RunConfig& cfg,
                          uint64_t seed) {
  check_pool(pool);
  MetaConfig meta = cfg.meta;
  meta.rng_seed = seed;
  const KbArchitecture arch = arch_for(pool[0], cfg);
  ParamSet init = init_params(arch, pool[0].num_students, pool[0].num_questions,
                              derive_seed(seed, 0x1A17));
  return meta_train(pool, std::move(init), meta, make_kb_loss(arch));
}

ImportanceMap pool_importance(const ParamSet& theta_star,
                              const std::vector<TaskUnit>& pool,
                              const RunConfig& cfg) {
  ImportanceMap importance;
  importance.multi_anchor = cfg.ppm.multi_anchor;
  const int units = std::min<int>(3, static_cast<int>(pool.size()));
  for (int u = 0; u < units; ++u)
    update_anchor(importance, theta_star, pool[u], cfg.ppm.sample_cap);
  // several anchors at the same parameters collapse to one in multi mode
  if (importance.multi_anchor && !importance.history.empty()) {
    ImportanceMap::TaskAnchor merged;
    merged.phi = importance.phi;
    merged.anchor = importance.anchor;
    importance.history = {std::move(merged)};
  }
  return importance;
}

PipelineModel fit_test_unit(const ParamSet& theta_star, const TaskUnit& unit,
                            const RunConfig& cfg, const ImportanceMap* importance,
                            uint64_t seed, bool with_heads) {
  if (!unit.has_split())
    throw ConfigError("fit_test_unit: unit has no support/query split");
  MetaConfig meta = cfg.meta;
  const KbArchitecture arch = arch_for(unit, cfg);

  PipelineModel model;
  model.kb = kb_test_support(theta_star, unit, meta, make_kb_loss(arch), importance,
                             cfg.ppm.weight, derive_seed(seed, 0xF1));
  if (!with_heads) return model;

  const FeatureDataset features = support_features(model.kb, unit);
  model.mask = kl_separation(features, cfg.heads.kappa0, cfg.heads.kappa1,
                             cfg.heads.bins, cfg.heads.keep_threshold);
  model.heads = train_heads(features, cfg.heads.loss, cfg.heads.steps,
                            cfg.heads.adam_lr, derive_seed(seed, 0xF2), &model.mask);
  model.has_heads = true;
  return model;
}

PredictionSet predict_kb(const ParamSet& params, const TaskUnit& unit,
                         const std::vector<int>& indices) {
  const std::vector<double> probs = kb_probabilities(params, unit, indices);
  PredictionSet preds;
  for (size_t i = 0; i < indices.size(); ++i) {
    const ResponseRecord& r = unit.records[indices[i]];
    preds.push(probs[i], probs[i] > 0.5 ? 1 : 0, r.score, r.question_id);
  }
  return preds;
}

PredictionSet predict_heads(const PipelineModel& model, const TaskUnit& unit,
                            const std::vector<int>& indices) {
  if (!model.has_heads) throw RuntimeError("predict_heads: model has no heads");
  const std::vector<double> probs = kb_probabilities(model.kb, unit, indices);
  const ParamSet extractor = strip_classifier(model.kb);
  const auto features = kb_features(extractor, unit, indices);
  PredictionSet preds;
  for (size_t i = 0; i < indices.size(); ++i) {
    const ResponseRecord& r = unit.records[indices[i]];
    const int label = diagnose(model.heads, features[i], &model.mask);
    preds.push(probs[i], label, r.score, r.question_id);
  }
  return preds;
}

double metric_value(const std::string& metric, const PredictionSet& preds) {
  if (metric == "acc") return accuracy(preds);
  if (metric == "auc") {
    const auto value = auc(preds);
    if (!value)
      throw RuntimeError("metric: AUC undefined, only one class present in the query set");
    return *value;
  }
  throw ConfigError("metric: unknown metric " + metric);
}

ContinualOutcome run_continual(const std::vector<TaskUnit>& pool,
                               const std::vector<TaskUnit>& sequence,
                               const RunConfig& cfg, bool ppm_enabled,
                               uint64_t seed, const ParamSet* init_override) {
  if (sequence.size() < 2)
    throw ConfigError("run_continual: need a sequence of at least 2 tasks");
  for (const auto& t : sequence)
    if (!t.has_split()) throw ConfigError("run_continual: sequence unit without split");

  const KbArchitecture arch = arch_for(sequence[0], cfg);
  ParamSet current;
  if (init_override) {
    current = init_override->snapshot();
  } else {
    check_pool(pool);
    current = run_meta_train(pool, cfg, seed).theta_star;
  }
  ImportanceMap importance;
  importance.multi_anchor = cfg.ppm.multi_anchor;

  ContinualOutcome outcome;
  outcome.matrix.metric = cfg.eval.metric;
  for (size_t stage = 0; stage < sequence.size(); ++stage) {
    current = kb_test_support(current, sequence[stage], cfg.meta, make_kb_loss(arch),
                              ppm_enabled ? &importance : nullptr, cfg.ppm.weight,
                              derive_seed(seed, 100 + stage));
    if (ppm_enabled)
      update_anchor(importance, current, sequence[stage], cfg.ppm.sample_cap);

    std::vector<double> row;
    for (size_t t = 0; t <= stage; ++t)
      row.push_back(metric_value(cfg.eval.metric,
                                 predict_kb(current, sequence[t],
                                            sequence[t].query_indices)));
    outcome.matrix.rows.push_back(std::move(row));
  }
  outcome.bwt_value = bwt(outcome.matrix);
  return outcome;
}

std::vector<AblationRow> run_ablation(const std::vector<TaskUnit>& pool,
                                      const TaskUnit& test_unit,
                                      const TaskUnit& successor_unit,
                                      const RunConfig& cfg, uint64_t seed) {
  check_pool(pool);
  if (!test_unit.has_split() || !successor_unit.has_split())
    throw ConfigError("run_ablation: units need support/query splits");

  const MetaResult meta = run_meta_train(pool, cfg, seed);
  const KbArchitecture arch = arch_for(test_unit, cfg);
  const TaskLossFn loss_fn = make_kb_loss(arch);
  const uint64_t fit_seed = derive_seed(seed, 0xF17);

  // One arm: fine-tune on the test task, anchor there, continue onto the
  // successor (protected unless ppm is off), then diagnose the test task.
  const auto run_arm = [&](const ParamSet& init, bool with_ppm, bool with_heads) {
    ParamSet params = kb_test_support(init, test_unit, cfg.meta, loss_fn, nullptr,
                                      cfg.ppm.weight, derive_seed(fit_seed, 1));
    ImportanceMap importance;
    importance.multi_anchor = cfg.ppm.multi_anchor;
    if (with_ppm) update_anchor(importance, params, test_unit, cfg.ppm.sample_cap);
    params = kb_test_support(params, successor_unit, cfg.meta, loss_fn,
                             with_ppm ? &importance : nullptr, cfg.ppm.weight,
                             derive_seed(fit_seed, 2));

    PipelineModel model;
    model.kb = std::move(params);
    if (with_heads) {
      const FeatureDataset features = support_features(model.kb, test_unit);
      model.mask = kl_separation(features, cfg.heads.kappa0, cfg.heads.kappa1,
                                 cfg.heads.bins, cfg.heads.keep_threshold);
      model.heads = train_heads(features, cfg.heads.loss, cfg.heads.steps,
                                cfg.heads.adam_lr, derive_seed(fit_seed, 3), &model.mask);
      model.has_heads = true;
    }
    const PredictionSet preds =
        with_heads ? predict_heads(model, test_unit, test_unit.query_indices)
                   : predict_kb(model.kb, test_unit, test_unit.query_indices);
    return accuracy(preds);
  };

  const ParamSet scratch = xavier_init_for(test_unit, cfg, derive_seed(seed, 0xAB));
  std::vector<AblationRow> rows;
  rows.push_back({"full", run_arm(meta.theta_star, true, true)});
  rows.push_back({"w/o KB", run_arm(scratch, true, true)});
  rows.push_back({"w/o PPM", run_arm(meta.theta_star, false, true)});
  rows.push_back({"w/o Per-class", run_arm(meta.theta_star, true, false)});
  return rows;
}

std::vector<GridRow> run_grid(const ParamSet& theta_star, const TaskUnit& unit,
                              const RunConfig& cfg, const ImportanceMap* importance,
                              uint64_t seed) {
  if (!unit.has_split()) throw ConfigError("run_grid: unit has no split");
  const KbArchitecture arch = arch_for(unit, cfg);
  const ParamSet fine_tuned =
      kb_test_support(theta_star, unit, cfg.meta, make_kb_loss(arch), importance,
                      cfg.ppm.weight, derive_seed(seed, 0xF1));
  const FeatureDataset features = support_features(fine_tuned, unit);
  const ParamSet extractor = strip_classifier(fine_tuned);
  const auto query_features = kb_features(extractor, unit, unit.query_indices);

  std::vector<GridRow> rows;
  for (double eta : cfg.grid.eta_values)
    for (double lambda : cfg.grid.lambda_values)
      for (int mu : cfg.grid.mu_values) rows.push_back({eta, lambda, mu, 0.0});

  const auto run_cell = [&](GridRow& row) {
    HeadTrainConfig head_cfg = cfg.heads;
    head_cfg.loss.eta = row.eta;
    head_cfg.loss.lambda = row.lambda;
    head_cfg.loss.mu = row.mu;
    const SeparationMask mask =
        kl_separation(features, head_cfg.kappa0, head_cfg.kappa1, head_cfg.bins,
                      head_cfg.keep_threshold);
    const HeadParams heads =
        train_heads(features, head_cfg.loss, cfg.grid.steps, head_cfg.adam_lr,
                    derive_seed(seed, 0xF2), &mask);
    int hits = 0;
    for (size_t i = 0; i < unit.query_indices.size(); ++i) {
      const int label = diagnose(heads, query_features[i], &mask);
      hits += label == unit.records[unit.query_indices[i]].score ? 1 : 0;
    }
    row.val_acc = static_cast<double>(hits) / unit.query_indices.size();
  };

  const int jobs = std::max(1, cfg.grid.jobs);
  if (jobs == 1) {
    for (auto& row : rows) run_cell(row);
  } else {
    std::vector<std::thread> workers;
    std::atomic<size_t> next{0};
    for (int w = 0; w < jobs; ++w)
      workers.emplace_back([&]() {
        for (size_t i = next.fetch_add(1); i < rows.size(); i = next.fetch_add(1))
          run_cell(rows[i]);
      });
    for (auto& t : workers) t.join();
  }

  std::stable_sort(rows.begin(), rows.end(), [](const GridRow& a, const GridRow& b) {
    return a.val_acc > b.val_acc;
  });
  return rows;
}

}  // namespace metacd
