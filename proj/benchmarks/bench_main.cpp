#include <benchmark/benchmark.h>

#include "metacd/harness.hpp"

using namespace metacd;

namespace {

struct Fixture {
  RunConfig cfg;
  std::vector<TaskUnit> pool;
  ParamSet params;
  KbArchitecture arch;

  Fixture() {
    cfg.data.world.num_students = 40;
    cfg.data.world.num_questions = 100;
    cfg.data.world.num_skills = 8;
    cfg.data.world.records_target = 2800;
    cfg.arch.hidden = {32, 16};
    cfg.arch.dropout = 0.1;
    SyntheticFamily family(cfg.data.world);
    for (int u = 0; u < 5; ++u) {
      pool.push_back(family.fresh_unit(u));
      split_support_query(pool.back(), 0.8, u);
    }
    arch = KbArchitecture{8, cfg.arch.hidden, cfg.arch.dropout};
    params = init_params(arch, 40, 100, 7);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_KbForwardBackward128(benchmark::State& state) {
  Fixture& f = fixture();
  const auto batch = sample_task_batch(f.pool, 1, 128, 3);
  std::vector<const ResponseRecord*> records;
  for (int i : batch[0].support) records.push_back(&batch[0].unit->records[i]);
  for (auto _ : state) {
    ad::Tape tape;
    const BoundLeaves leaves = bind_params(tape, f.params);
    const KbGraph graph = kb_graph(tape, leaves, f.arch, records,
                                   batch[0].unit->qmatrix, Mode::kTrain, 5, true);
    tape.zero_grad();
    tape.backward(graph.loss);
    benchmark::DoNotOptimize(tape.grad(leaves.begin()->second));
  }
  state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_KbForwardBackward128);

void BM_MetaIteration(benchmark::State& state) {
  Fixture& f = fixture();
  MetaConfig meta;
  meta.meta_epochs = 1;
  const TaskLossFn loss = make_kb_loss(f.arch);
  for (auto _ : state) {
    MetaState st;
    st.theta_m = f.params.snapshot();
    st.theta_copy = f.params.snapshot();
    const auto batch = sample_task_batch(f.pool, 5, 128, 11);
    kb_train_support(st, batch, meta, loss, 1);
    kb_train_query(st, batch, meta, loss, nullptr, 1.0, 2);
    benchmark::DoNotOptimize(st.theta_m);
  }
}
BENCHMARK(BM_MetaIteration);

void BM_ComputeImportance256(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state) {
    const ValueMap phi = compute_importance(f.params, f.pool[0], 256);
    benchmark::DoNotOptimize(phi);
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_ComputeImportance256);

void BM_Auc(benchmark::State& state) {
  Rng rng(5);
  PredictionSet preds;
  for (int i = 0; i < state.range(0); ++i) {
    const double p = rng.uniform();
    preds.push(p, p > 0.5 ? 1 : 0, rng.uniform_int(2), i);
  }
  for (auto _ : state) benchmark::DoNotOptimize(auc(preds));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Auc)->Arg(1000)->Arg(10000);

void BM_EncodeBatch128(benchmark::State& state) {
  Fixture& f = fixture();
  const auto batch = sample_task_batch(f.pool, 1, 128, 9);
  std::vector<const ResponseRecord*> records;
  for (int i : batch[0].support) records.push_back(&batch[0].unit->records[i]);
  for (auto _ : state) {
    ad::Tape tape;
    const BoundLeaves leaves = bind_params(tape, f.params, false);
    benchmark::DoNotOptimize(
        tape.value(encode_batch(tape, leaves, records, batch[0].unit->qmatrix)));
  }
  state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_EncodeBatch128);

}  // namespace

BENCHMARK_MAIN();
