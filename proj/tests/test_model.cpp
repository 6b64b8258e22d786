#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "metacd/finite_diff.hpp"
#include "metacd/knowledge_base.hpp"
#include "metacd/serialize.hpp"
#include "oracles.hpp"

using namespace metacd;

namespace {

QMatrix q22() {
  QMatrix qm(2, 2);
  qm.set(0, 0);
  qm.set(0, 1);
  qm.set(1, 1);
  return qm;
}

ParamSet tiny_params(uint64_t seed, int students = 3, int questions = 4,
                     int skills = 3, std::vector<int> hidden = {5, 4},
                     double dropout = 0.0) {
  KbArchitecture arch;
  arch.input_dim = skills;
  arch.hidden = std::move(hidden);
  arch.dropout = dropout;
  return init_params(arch, students, questions, seed);
}

}  // namespace

TEST_SUITE("embedding") {

TEST_CASE("equal student and difficulty rows encode to zero") {
  ParamSet params = tiny_params(1, 2, 2, 2);
  params.at(kStudentTable).data = {0.4, -1.0, 0.7, 0.2};
  params.at(kDifficultyTable).data = {0.4, -1.0, 0.7, 0.2};
  ResponseRecord rec{0, 0, {0, 1}, 1};
  for (double v : encode(rec, params, q22())) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("a single q-matrix bit masks all other skills") {
  ParamSet params = tiny_params(2, 2, 2, 2);
  ResponseRecord rec{1, 1, {1}, 0};
  const auto x = encode(rec, params, q22());
  CHECK(x[0] == 0.0);
  CHECK(x[1] != 0.0);
}

TEST_CASE("hand-evaluated sigmoid fixture") {
  ParamSet params = tiny_params(3, 1, 1, 2);
  params.at(kStudentTable).data = {0.0, 0.0};
  params.at(kDifficultyTable).data = {-2.0, 2.0};
  params.at(kDiscriminationTable).data = {0.0};
  QMatrix qm(1, 2);
  qm.set(0, 0);
  qm.set(0, 1);
  const auto x = encode(ResponseRecord{0, 0, {0, 1}, 1}, params, qm);

  // independent arithmetic: 0.5 * (sigma(0) - sigma(+-2))
  const double s2 = 1.0 / (1.0 + std::exp(-2.0));
  CHECK(x[0] == doctest::Approx(0.5 * (0.5 - (1.0 - s2))).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(0.5 * (0.5 - s2)).epsilon(1e-12));
  CHECK(x[0] == doctest::Approx(0.19039854).epsilon(1e-6));
  CHECK(x[1] == doctest::Approx(-0.19039854).epsilon(1e-6));
}

TEST_CASE("output entries stay inside the open unit interval") {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    ParamSet params = tiny_params(trial + 10, 4, 5, 3);
    for (auto& [name, arr] : params.arrays)
      for (double& v : arr.data) v = rng.uniform(-6, 6);
    QMatrix qm(5, 3);
    for (int q = 0; q < 5; ++q) qm.set(q, rng.uniform_int(3));
    ResponseRecord rec{rng.uniform_int(4), rng.uniform_int(5), {}, 1};
    rec.skill_ids = qm.skills_of(rec.question_id);
    for (double v : encode(rec, params, qm)) {
      CHECK(v > -1.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("perturbing entries outside the q-row support changes nothing") {
  Rng rng(13);
  ParamSet params = tiny_params(14, 3, 3, 4);
  QMatrix qm(3, 4);
  qm.set(0, 1);
  qm.set(1, 0);
  qm.set(2, 3);
  ResponseRecord rec{1, 0, {1}, 1};
  const auto base = encode(rec, params, qm);
  for (int trial = 0; trial < 50; ++trial) {
    ParamSet copy = params;
    for (int k : {0, 2, 3}) {  // skills outside question 0's row
      copy.at(kStudentTable).at(rec.student_id, k) += rng.uniform(-3, 3);
      copy.at(kDifficultyTable).at(rec.question_id, k) += rng.uniform(-3, 3);
    }
    CHECK(encode(rec, copy, qm) == base);
  }
}

TEST_CASE("gradients reach exactly the rows the record touches") {
  ParamSet params = tiny_params(15, 4, 5, 3);
  QMatrix qm(5, 3);
  for (int q = 0; q < 5; ++q) qm.set(q, q % 3);
  ResponseRecord rec{2, 3, qm.skills_of(3), 1};

  ad::Tape tape;
  const BoundLeaves leaves = bind_params(tape, params);
  const ad::NodeId x = encode_batch(tape, leaves, {&rec}, qm);
  tape.backward(tape.half_sq_norm(x));

  const auto& gs = tape.grad(leaves.at(kStudentTable));
  const auto& gd = tape.grad(leaves.at(kDifficultyTable));
  const auto& gq = tape.grad(leaves.at(kDiscriminationTable));
  for (int r = 0; r < 4; ++r) {
    double norm = 0;
    for (int k = 0; k < 3; ++k) norm += std::abs(gs[r * 3 + k]);
    CHECK((r == rec.student_id ? norm != 0.0 : norm == 0.0));
  }
  for (int r = 0; r < 5; ++r) {
    double norm = std::abs(gq[r]);
    for (int k = 0; k < 3; ++k) norm += std::abs(gd[r * 3 + k]);
    CHECK((r == rec.question_id ? norm != 0.0 : norm == 0.0));
  }
}

}  // TEST_SUITE

TEST_SUITE("knowledge_base") {

TEST_CASE("xavier bound holds for a 4x4 layer over 1000 draws") {
  const double bound = std::sqrt(6.0 / 8.0);
  double max_seen = 0.0;
  for (uint64_t seed = 0; seed < 63; ++seed) {
    KbArchitecture arch;
    arch.input_dim = 4;
    arch.hidden = {4};
    const ParamSet params = init_params(arch, 2, 2, seed);
    for (double v : params.at("kb.W1").data) {
      CHECK(std::abs(v) <= bound);
      max_seen = std::max(max_seen, std::abs(v));
    }
  }
  CHECK(max_seen > 0.9 * bound);  // draws actually spread over the interval
}

TEST_CASE("biases start at exactly zero") {
  const ParamSet params = tiny_params(3);
  for (const auto& name : {"kb.b1", "kb.b2", "kb.bout"})
    for (double v : params.at(name).data) CHECK(v == 0.0);
}

TEST_CASE("same seed reproduces the parameter set bitwise") {
  const ParamSet a = tiny_params(11), b = tiny_params(11), c = tiny_params(12);
  for (const auto& [name, arr] : a.arrays) CHECK(arr.data == b.at(name).data);
  CHECK(a.at("kb.W1").data != c.at("kb.W1").data);
}

TEST_CASE("all-zero weights predict one half") {
  ParamSet params = tiny_params(4);
  for (auto& [name, arr] : params.arrays) arr.data.assign(arr.data.size(), 0.0);
  QMatrix qm(4, 3);
  for (int q = 0; q < 4; ++q) qm.set(q, 0);
  const auto out = kb_forward(params, {0, 0, {0}, 1}, qm, Mode::kEval);
  CHECK(out.probability == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("eval mode is deterministic, train mode is seed-keyed") {
  ParamSet params = tiny_params(5, 3, 4, 3, {5, 4}, 0.5);
  QMatrix qm(4, 3);
  for (int q = 0; q < 4; ++q) {
    qm.set(q, 0);
    qm.set(q, (q % 2) + 1);
  }
  const ResponseRecord rec{1, 2, qm.skills_of(2), 1};
  const auto e1 = kb_forward(params, rec, qm, Mode::kEval);
  const auto e2 = kb_forward(params, rec, qm, Mode::kEval);
  CHECK(e1.probability == e2.probability);
  CHECK(e1.features == e2.features);

  const auto t1 = kb_forward(params, rec, qm, Mode::kTrain, 9);
  const auto t2 = kb_forward(params, rec, qm, Mode::kTrain, 9);
  const auto t3 = kb_forward(params, rec, qm, Mode::kTrain, 10);
  CHECK(t1.probability == t2.probability);
  CHECK(t1.probability != t3.probability);
}

TEST_CASE("forward pass matches the straight-line oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    ParamSet params = tiny_params(trial + 40, 4, 6, 3, {5, 4}, 0.3);
    for (auto& [name, arr] : params.arrays)
      for (double& v : arr.data) v = rng.uniform(-1.5, 1.5);
    QMatrix qm(6, 3);
    for (int q = 0; q < 6; ++q) {
      qm.set(q, q % 3);
      if (q % 2) qm.set(q, (q + 1) % 3);
    }
    ResponseRecord rec{rng.uniform_int(4), rng.uniform_int(6), {}, 1};
    rec.skill_ids = qm.skills_of(rec.question_id);

    const auto got = kb_forward(params, rec, qm, Mode::kEval);
    const auto want = oracle::kb_forward(params, rec, qm);
    for (size_t i = 0; i < want.features.size(); ++i)
      CHECK(got.features[i] == doctest::Approx(want.features[i]).epsilon(1e-12));
    CHECK(got.probability ==
          doctest::Approx(oracle::sigmoid(want.logit)).epsilon(1e-12));
  }
}

TEST_CASE("stripping the classifier preserves everything else") {
  const ParamSet params = tiny_params(6);
  QMatrix qm(4, 3);
  for (int q = 0; q < 4; ++q) qm.set(q, 1);
  const ResponseRecord rec{0, 1, {1}, 0};

  const auto before = kb_forward(params, rec, qm, Mode::kEval);
  const ParamSet stripped = strip_classifier(params);
  CHECK_FALSE(has_classifier(stripped));
  CHECK_FALSE(stripped.has("kb.Wout"));
  CHECK_FALSE(stripped.has("kb.bout"));
  for (const auto& [name, arr] : stripped.arrays)
    CHECK(arr.data == params.at(name).data);

  const auto after = kb_forward(stripped, rec, qm, Mode::kEval);
  CHECK(after.features == before.features);
  CHECK(static_cast<int>(after.features.size()) == arch_of(params).feature_dim());
  CHECK_THROWS_AS(strip_classifier(stripped), RuntimeError);
}

TEST_CASE("snapshots are deep copies across 100 random cases") {
  Rng rng(71);
  for (int trial = 0; trial < 100; ++trial) {
    ParamSet original = tiny_params(trial);
    for (auto& [name, arr] : original.arrays)
      for (double& v : arr.data) v = rng.uniform(-2, 2);
    const ParamSet reference = original;  // backup for comparison
    ParamSet copy = original.snapshot();
    for (auto& [name, arr] : copy.arrays)
      for (double& v : arr.data) v += 1.0;
    for (const auto& [name, arr] : original.arrays) {
      const auto& ref = reference.at(name).data;
      double max_delta = 0.0;
      for (size_t i = 0; i < arr.data.size(); ++i)
        max_delta = std::max(max_delta, std::abs(arr.data[i] - ref[i]));
      CHECK(max_delta == 0.0);
    }
  }
}

TEST_CASE("binary serialization round-trips bit-exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "metacd_tests";
  std::filesystem::create_directories(dir);
  Rng rng(81);
  ParamSet params = tiny_params(81);
  for (auto& [name, arr] : params.arrays)
    for (double& v : arr.data) v = rng.uniform(-1e3, 1e3) * std::pow(10, -rng.uniform_int(12));
  save_param_set(dir / "roundtrip.bin", params);
  const ParamSet loaded = load_param_set(dir / "roundtrip.bin");
  CHECK(loaded.descriptor == params.descriptor);
  REQUIRE(loaded.congruent_with(params));
  for (const auto& [name, arr] : params.arrays)
    CHECK(std::memcmp(arr.data.data(), loaded.at(name).data.data(),
                      arr.data.size() * sizeof(double)) == 0);
}

TEST_CASE("json serialization restores the same structure") {
  ParamSet params = tiny_params(91);
  const ParamSet loaded = param_set_from_json(param_set_to_json(params));
  CHECK(loaded.descriptor == params.descriptor);
  REQUIRE(loaded.congruent_with(params));
  for (const auto& [name, arr] : params.arrays)
    for (size_t i = 0; i < arr.data.size(); ++i)
      CHECK(loaded.at(name).data[i] == doctest::Approx(arr.data[i]).epsilon(1e-12));
}

TEST_CASE("kb gradients match finite differences through the whole graph") {
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    ParamSet params = tiny_params(seed, 3, 4, 3, {5, 4}, 0.0);
    QMatrix qm(4, 3);
    for (int q = 0; q < 4; ++q) {
      qm.set(q, q % 3);
      qm.set(q, (q + 1) % 3);
    }
    std::vector<ResponseRecord> records;
    Rng rng(seed);
    for (int i = 0; i < 6; ++i) {
      ResponseRecord r{rng.uniform_int(3), rng.uniform_int(4), {}, rng.uniform_int(2)};
      r.skill_ids = qm.skills_of(r.question_id);
      records.push_back(r);
    }
    std::vector<const ResponseRecord*> ptrs;
    for (const auto& r : records) ptrs.push_back(&r);

    ad::Tape tape;
    const BoundLeaves leaves = bind_params(tape, params);
    const KbGraph graph = kb_graph(tape, leaves, arch_of(params), ptrs, qm,
                                   Mode::kTrain, seed, true);
    std::vector<ad::NodeId> blocks;
    for (const auto& [name, id] : leaves) blocks.push_back(id);
    ad::FdOptions opts;
    opts.step = 1e-5;
    opts.tolerance = 1e-4;
    CHECK(finite_diff_check(tape, graph.loss, blocks, opts).pass);
  }
}

}  // TEST_SUITE
