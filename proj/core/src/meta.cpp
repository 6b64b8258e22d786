#include "metacd/meta.hpp"

#include <cmath>
#include <iostream>

namespace metacd {

void MetaConfig::validate() const {
  // alpha = 0 is allowed: the inner step vanishes and the query step
  // degenerates to plain SGD on the unadapted model
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("meta: alpha must be in [0, 1]");
  if (beta <= 0.0 || beta > 1.0) throw ConfigError("meta: beta must be in (0, 1]");
  if (batch_size < 1) throw ConfigError("meta: batch_size must be >= 1");
  if (inner_minibatches < 1) throw ConfigError("meta: inner_minibatches must be >= 1");
  if (samples < 1) throw ConfigError("meta: samples must be >= 1");
  if (meta_epochs < 0) throw ConfigError("meta: meta_epochs must be >= 0");
  if (fine_tune_steps < 0) throw ConfigError("meta: fine_tune_steps must be >= 0");
  if (adam_lr <= 0.0) throw ConfigError("meta: adam_lr must be > 0");
}

TaskLossFn make_kb_loss(const KbArchitecture& arch) {
  return [arch](ad::Tape& tape, const BoundLeaves& leaves, const TaskSample& sample,
                bool use_query, uint64_t mode_seed) -> ad::NodeId {
    const std::vector<int>& indices = use_query ? sample.query : sample.support;
    std::vector<const ResponseRecord*> records;
    records.reserve(indices.size());
    for (int i : indices) records.push_back(&sample.unit->records[i]);
    return kb_graph(tape, leaves, arch, records, sample.unit->qmatrix, Mode::kTrain,
                    mode_seed, /*with_loss=*/true)
        .loss;
  };
}

namespace {

std::vector<int> chunk_of(const std::vector<int>& v, int chunk, int chunks) {
  const int n = static_cast<int>(v.size());
  const int lo = static_cast<int>(static_cast<int64_t>(chunk) * n / chunks);
  const int hi = static_cast<int>(static_cast<int64_t>(chunk + 1) * n / chunks);
  return {v.begin() + lo, v.begin() + hi};
}

}  // namespace

double kb_train_support(MetaState& state, const std::vector<TaskSample>& batch,
                        const MetaConfig& cfg, const TaskLossFn& loss_fn,
                        uint64_t iter_seed) {
  ad::Tape tape;
  const BoundLeaves leaves = bind_params(tape, state.theta_copy);

  ad::NodeId total = -1;
  int terms = 0;
  for (size_t u = 0; u < batch.size(); ++u) {
    if (batch[u].support.empty()) {
      std::cerr << "warning: unit " << batch[u].unit->unit_id
                << " has an empty support sample, skipped\n";
      continue;
    }
    for (int c = 0; c < cfg.inner_minibatches; ++c) {
      TaskSample piece;
      piece.unit = batch[u].unit;
      piece.support = chunk_of(batch[u].support, c, cfg.inner_minibatches);
      if (piece.support.empty()) continue;
      const ad::NodeId l = loss_fn(tape, leaves, piece, /*use_query=*/false,
                                   derive_seed(iter_seed, u * 97 + c));
      total = total < 0 ? l : tape.add(total, l);
      ++terms;
    }
  }
  if (terms == 0)
    throw RuntimeError("kb_train_support: every unit in the batch had an empty support sample");

  const ad::NodeId mean_loss = tape.scale(total, 1.0 / terms);
  tape.zero_grad();
  tape.backward(mean_loss);
  apply_step(state.theta_copy, extract_gradients(tape, leaves), cfg.alpha);
  return tape.scalar(mean_loss);
}

QueryStep kb_train_query(MetaState& state, const std::vector<TaskSample>& batch,
                         const MetaConfig& cfg, const TaskLossFn& loss_fn,
                         const ImportanceMap* importance, double ppm_weight,
                         uint64_t iter_seed) {
  ad::Tape tape;
  const BoundLeaves leaves = bind_params(tape, state.theta_copy);

  ad::NodeId data_total = -1;
  int terms = 0;
  for (size_t u = 0; u < batch.size(); ++u) {
    if (batch[u].query.empty()) {
      std::cerr << "warning: unit " << batch[u].unit->unit_id
                << " has an empty query sample, skipped\n";
      continue;
    }
    const ad::NodeId l = loss_fn(tape, leaves, batch[u], /*use_query=*/true,
                                 derive_seed(iter_seed, 7000 + u));
    data_total = data_total < 0 ? l : tape.add(data_total, l);
    ++terms;
  }
  if (terms == 0)
    throw RuntimeError("kb_train_query: every unit in the batch had an empty query sample");

  QueryStep step;
  ad::NodeId total = tape.scale(data_total, 1.0 / terms);
  step.query_loss = tape.scalar(total);

  if (importance && importance->has_anchor()) {
    const ad::NodeId penalty = ppm_penalty_node(tape, leaves, *importance, ppm_weight);
    step.ppm_loss = tape.scalar(penalty);
    total = tape.add(total, penalty);
  }

  tape.zero_grad();
  tape.backward(total);
  // first-order transfer: the gradient at the adapted copy moves theta_M
  apply_step(state.theta_m, extract_gradients(tape, leaves), cfg.beta);
  return step;
}

namespace {

// Per-task-copies variant of one meta-iteration (config flag, off by
// default): every unit adapts a private clone of theta_M and the query
// gradients at the adapted clones are averaged into the meta step.
MetaStepLog per_task_iteration(MetaState& state, const std::vector<TaskSample>& batch,
                               const MetaConfig& cfg, const TaskLossFn& loss_fn,
                               const ImportanceMap* importance, double ppm_weight,
                               uint64_t iter_seed) {
  MetaStepLog log;
  ValueMap meta_grad;
  int used = 0;
  for (size_t u = 0; u < batch.size(); ++u) {
    if (batch[u].support.empty() || batch[u].query.empty()) {
      std::cerr << "warning: unit " << batch[u].unit->unit_id
                << " lacks support or query samples, skipped\n";
      continue;
    }
    MetaState local;
    local.theta_m = state.theta_m.snapshot();
    local.theta_copy = state.theta_m.snapshot();
    log.support_loss += kb_train_support(local, {batch[u]}, cfg, loss_fn,
                                         derive_seed(iter_seed, 11 + u));

    ad::Tape tape;
    const BoundLeaves leaves = bind_params(tape, local.theta_copy);
    ad::NodeId total = loss_fn(tape, leaves, batch[u], /*use_query=*/true,
                               derive_seed(iter_seed, 7000 + u));
    log.query_loss += tape.scalar(total);
    if (importance && importance->has_anchor()) {
      const ad::NodeId penalty = ppm_penalty_node(tape, leaves, *importance, ppm_weight);
      log.ppm_loss += tape.scalar(penalty);
      total = tape.add(total, penalty);
    }
    tape.zero_grad();
    tape.backward(total);
    add_scaled(meta_grad, extract_gradients(tape, leaves), 1.0);
    ++used;
  }
  if (used == 0) throw RuntimeError("meta_train: no usable unit in the batch");
  scale_values(meta_grad, 1.0 / used);
  apply_step(state.theta_m, meta_grad, cfg.beta);
  log.support_loss /= used;
  log.query_loss /= used;
  log.ppm_loss /= used;
  return log;
}

}  // namespace

MetaResult meta_train(const std::vector<TaskUnit>& pool, ParamSet init,
                      const MetaConfig& cfg, const TaskLossFn& loss_fn,
                      const ImportanceMap* importance, double ppm_weight,
                      int start_iteration) {
  cfg.validate();
  if (pool.empty()) throw ConfigError("meta_train: empty task pool");

  MetaState state;
  state.theta_m = std::move(init);

  const int n = std::min<int>(cfg.batch_size, static_cast<int>(pool.size()));
  double initial_query = -1.0;
  int high_loss_streak = 0;

  for (int iter = start_iteration; iter < cfg.meta_epochs; ++iter) {
    const uint64_t iter_seed = derive_seed(cfg.rng_seed, iter);
    const auto batch = sample_task_batch(pool, n, cfg.samples, iter_seed);

    MetaStepLog log;
    if (cfg.per_task_copies) {
      log = per_task_iteration(state, batch, cfg, loss_fn, importance, ppm_weight,
                               iter_seed);
    } else {
      state.theta_copy = state.theta_m.snapshot();
      log.support_loss =
          kb_train_support(state, batch, cfg, loss_fn, derive_seed(iter_seed, 1));
      const QueryStep q = kb_train_query(state, batch, cfg, loss_fn, importance,
                                         ppm_weight, derive_seed(iter_seed, 2));
      log.query_loss = q.query_loss;
      log.ppm_loss = q.ppm_loss;
    }
    log.iteration = iter;
    state.history.push_back(log);
    state.iteration = iter + 1;

    if (initial_query < 0.0) initial_query = std::max(log.query_loss, 1e-12);
    if (log.query_loss > 10.0 * initial_query) {
      if (++high_loss_streak >= 50)
        throw RuntimeError(
            "meta_train diverged: query loss " + std::to_string(log.query_loss) +
            " stayed above 10x the initial " + std::to_string(initial_query) +
            " for 50 consecutive iterations (iteration " + std::to_string(iter) + ")");
    } else {
      high_loss_streak = 0;
    }
  }

  return {std::move(state.theta_m), std::move(state.history)};
}

ParamSet kb_test_support(const ParamSet& theta_star, const TaskUnit& unit,
                         const MetaConfig& cfg, const TaskLossFn& loss_fn,
                         const ImportanceMap* importance, double ppm_weight,
                         uint64_t seed, int steps_override) {
  cfg.validate();
  ParamSet params = theta_star.snapshot();
  if (unit.support_indices.empty()) {
    std::cerr << "warning: kb_test_support on a unit without support records, "
                 "returning the initialization unchanged\n";
    return params;
  }

  const int steps = steps_override >= 0 ? steps_override : cfg.fine_tune_steps;
  AdamOptimizer adam(cfg.adam_lr);
  for (int t = 0; t < steps; ++t) {
    const uint64_t step_seed = derive_seed(seed, t);
    Rng rng(step_seed);
    TaskSample sample;
    sample.unit = &unit;
    sample.support.reserve(cfg.samples);
    for (int i = 0; i < cfg.samples; ++i)
      sample.support.push_back(unit.support_indices[rng.uniform_int(
          static_cast<int>(unit.support_indices.size()))]);

    ad::Tape tape;
    const BoundLeaves leaves = bind_params(tape, params);
    ad::NodeId total = loss_fn(tape, leaves, sample, /*use_query=*/false,
                               derive_seed(step_seed, 3));
    if (importance && importance->has_anchor()) {
      const ad::NodeId penalty = ppm_penalty_node(tape, leaves, *importance, ppm_weight);
      total = tape.add(total, penalty);
    }
    tape.zero_grad();
    tape.backward(total);
    adam.step(params, extract_gradients(tape, leaves));
  }
  return params;
}

}  // namespace metacd
