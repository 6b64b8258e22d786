#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "metacd/finite_diff.hpp"
#include "metacd/ppm.hpp"
#include "metacd/serialize.hpp"
#include "oracles.hpp"

using namespace metacd;

namespace {

ParamSet kb_fixture(uint64_t seed) {
  KbArchitecture arch;
  arch.input_dim = 3;
  arch.hidden = {5, 4};
  arch.dropout = 0.0;
  return init_params(arch, 4, 5, seed);
}

TaskUnit unit_fixture(uint64_t seed, int records = 24) {
  TaskUnit unit;
  unit.num_students = 4;
  unit.num_questions = 5;
  unit.num_skills = 3;
  unit.qmatrix = QMatrix(5, 3);
  for (int q = 0; q < 5; ++q) {
    unit.qmatrix.set(q, q % 3);
    unit.qmatrix.set(q, (q + 1) % 3);
  }
  Rng rng(seed);
  for (int i = 0; i < records; ++i) {
    ResponseRecord r{rng.uniform_int(4), rng.uniform_int(5), {}, rng.uniform_int(2)};
    r.skill_ids = unit.qmatrix.skills_of(r.question_id);
    unit.records.push_back(r);
  }
  return unit;
}

ParamSet two_scalar_params() {
  ParamSet p;
  p.arrays.emplace("theta", Array(2, 1, {1.5, 0.5}));
  return p;
}

}  // namespace

TEST_SUITE("ppm") {

TEST_CASE("importance of a linear model verified against brute force") {
  // y = theta * x over the inputs {1, -3}, scalarized as r = 0.5 y^2
  const double theta = 1.0;
  const std::vector<double> inputs = {1.0, -3.0};

  double brute = 0.0;  // numeric gradient of r at each input
  for (double x : inputs) {
    const auto r = [&](double t) { return 0.5 * (t * x) * (t * x); };
    brute += std::abs(oracle::central_diff(r, theta));
  }
  brute /= inputs.size();
  CHECK(brute == doctest::Approx(5.0).epsilon(1e-6));

  double via_tape = 0.0;
  for (double x : inputs) {
    ad::Tape tape;
    const ad::NodeId t = tape.leaf({1, 1}, {theta}, true);
    const ad::NodeId xv = tape.leaf({1, 1}, {x}, false);
    tape.backward(tape.half_sq_norm(tape.mul(t, xv)));
    via_tape += std::abs(tape.grad(t)[0]);
  }
  via_tape /= inputs.size();
  CHECK(via_tape == doctest::Approx(brute).epsilon(1e-9));
}

TEST_CASE("a dead relu path carries zero importance") {
  ParamSet params = kb_fixture(1);
  // silence hidden unit 0 of layer 2: zero incoming weights and bias
  auto& w2 = params.at("kb.W2");
  for (int j = 0; j < w2.cols; ++j) w2.at(0, j) = 0.0;
  params.at("kb.b2").at(0, 0) = 0.0;

  const TaskUnit unit = unit_fixture(2);
  const ValueMap phi = compute_importance(params, unit, 16);
  for (int j = 0; j < w2.cols; ++j) CHECK(phi.at("kb.W2")[j] == 0.0);
  CHECK(phi.at("kb.b2")[0] == 0.0);
}

TEST_CASE("importance is invariant under dataset duplication") {
  const ParamSet params = kb_fixture(3);
  TaskUnit unit = unit_fixture(4, 10);
  TaskUnit doubled = unit;
  doubled.records.insert(doubled.records.end(), unit.records.begin(),
                         unit.records.end());
  const ValueMap a = compute_importance(params, unit, 10);
  const ValueMap b = compute_importance(params, doubled, 20);
  for (const auto& [name, vec] : a)
    for (size_t i = 0; i < vec.size(); ++i)
      CHECK(vec[i] == doctest::Approx(b.at(name)[i]).epsilon(1e-12));
}

TEST_CASE("penalty at the anchor is an exact fixed point") {
  const ParamSet params = kb_fixture(5);
  ImportanceMap imp;
  update_anchor(imp, params, unit_fixture(6), 8);
  const PpmTerm term = ppm_penalty(params, imp);
  CHECK(term.loss == 0.0);
  for (const auto& [name, g] : term.grad)
    for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("hand-computed two-parameter penalty") {
  ParamSet current = two_scalar_params();
  ImportanceMap imp;
  imp.tasks_seen = 1;
  imp.phi["theta"] = {2.0, 4.0};
  imp.anchor.arrays.emplace("theta", Array(2, 1, {1.0, 1.0}));

  const PpmTerm term = ppm_penalty(current, imp);
  CHECK(term.loss == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(term.grad.at("theta")[0] == doctest::Approx(2.0 * 0.5).epsilon(1e-12));
  CHECK(term.grad.at("theta")[1] == doctest::Approx(4.0 * -0.5).epsilon(1e-12));

  // scaling every phi by c scales the loss by exactly c
  for (double& v : imp.phi["theta"]) v *= 3.0;
  CHECK(ppm_penalty(current, imp).loss == doctest::Approx(3.0 * 0.75).epsilon(1e-12));
}

TEST_CASE("layout mismatch names the first offending array") {
  ParamSet current = two_scalar_params();
  ImportanceMap imp;
  imp.tasks_seen = 1;
  imp.phi["theta"] = {2.0, 4.0, 9.0};  // wrong length
  imp.anchor.arrays.emplace("theta", Array(2, 1, {1.0, 1.0}));
  CHECK_THROWS_WITH_AS(ppm_penalty(current, imp), doctest::Contains("theta"),
                       RuntimeError);
}

TEST_CASE("anchor update keeps a running mean of phi") {
  const ParamSet params = kb_fixture(7);
  const TaskUnit unit = unit_fixture(8);

  ImportanceMap imp;
  update_anchor(imp, params, unit, 12);
  CHECK(imp.tasks_seen == 1);
  const ValueMap phi_unit = compute_importance(params, unit, 12);
  for (const auto& [name, vec] : phi_unit)
    CHECK(imp.phi.at(name) == vec);  // first task: mean of one

  // identical second task leaves the mean unchanged
  ImportanceMap twice = imp;
  update_anchor(twice, params, unit, 12);
  for (const auto& [name, vec] : imp.phi)
    for (size_t i = 0; i < vec.size(); ++i)
      CHECK(twice.phi.at(name)[i] == doctest::Approx(vec[i]).epsilon(1e-12));

  // a zero-importance second task halves the mean
  ParamSet zeroed = params;
  for (auto& [name, arr] : zeroed.arrays) arr.data.assign(arr.data.size(), 0.0);
  ImportanceMap halved = imp;
  update_anchor(halved, zeroed, unit, 12);
  for (const auto& [name, vec] : imp.phi)
    for (size_t i = 0; i < vec.size(); ++i)
      CHECK(halved.phi.at(name)[i] == doctest::Approx(0.5 * vec[i]).epsilon(1e-12));
}

TEST_CASE("penalty gradient matches finite differences at 1e-6") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 5;
    std::vector<double> theta(n), coeff(n), anchor(n);
    for (int i = 0; i < n; ++i) {
      theta[i] = rng.uniform(-2, 2);
      coeff[i] = rng.uniform(0, 3);
      anchor[i] = rng.uniform(-2, 2);
    }
    ad::Tape tape;
    const ad::NodeId t = tape.leaf({n, 1}, theta, true, "theta");
    const ad::NodeId loss = tape.quad_penalty(t, coeff, anchor);
    ad::FdOptions opts;
    opts.step = 1e-5;
    opts.tolerance = 1e-6;
    CHECK(finite_diff_check(tape, loss, {t}, opts).pass);
  }
}

TEST_CASE("penalty grows monotonically along any ray from the anchor") {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    ImportanceMap imp;
    imp.tasks_seen = 1;
    const int n = 4;
    std::vector<double> anchor(n), dir(n), phi(n);
    for (int i = 0; i < n; ++i) {
      anchor[i] = rng.uniform(-1, 1);
      dir[i] = rng.uniform(-1, 1);
      phi[i] = rng.uniform(0, 2);
    }
    imp.phi["theta"] = phi;
    imp.anchor.arrays.emplace("theta", Array(n, 1, anchor));

    double prev = -1.0;
    for (double t : {0.0, 0.25, 0.5, 1.0, 2.0, 4.0}) {
      ParamSet cur;
      std::vector<double> v(n);
      for (int i = 0; i < n; ++i) v[i] = anchor[i] + t * dir[i];
      cur.arrays.emplace("theta", Array(n, 1, v));
      const double loss = ppm_penalty(cur, imp).loss;
      CHECK(loss >= prev);
      prev = loss;
    }
  }
}

TEST_CASE("multi-anchor mode sums the per-task penalties") {
  ImportanceMap imp;
  imp.multi_anchor = true;
  const auto mk = [](double anchor_v, double phi_v) {
    ImportanceMap::TaskAnchor entry;
    entry.phi["theta"] = {phi_v};
    entry.anchor.arrays.emplace("theta", Array(1, 1, {anchor_v}));
    return entry;
  };
  imp.history.push_back(mk(0.0, 2.0));
  imp.history.push_back(mk(2.0, 1.0));
  imp.tasks_seen = 2;

  ParamSet cur;
  cur.arrays.emplace("theta", Array(1, 1, {1.0}));
  // 0.5*2*(1-0)^2 + 0.5*1*(1-2)^2 = 1.0 + 0.5
  CHECK(ppm_penalty(cur, imp).loss == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(ppm_penalty(cur, imp).grad.at("theta")[0] ==
        doctest::Approx(2.0 * 1.0 + 1.0 * -1.0).epsilon(1e-12));
}

TEST_CASE("tape node and closed form agree") {
  const ParamSet params = kb_fixture(11);
  ImportanceMap imp;
  update_anchor(imp, params, unit_fixture(12), 8);
  ParamSet moved = params;
  Rng rng(13);
  for (auto& [name, arr] : moved.arrays)
    for (double& v : arr.data) v += rng.uniform(-0.1, 0.1);

  const PpmTerm closed = ppm_penalty(moved, imp);
  ad::Tape tape;
  const BoundLeaves leaves = bind_params(tape, moved);
  const ad::NodeId node = ppm_penalty_node(tape, leaves, imp, 1.0);
  CHECK(tape.scalar(node) == doctest::Approx(closed.loss).epsilon(1e-12));
  tape.backward(node);
  for (const auto& [name, id] : leaves) {
    const auto& g = tape.grad(id);
    for (size_t i = 0; i < g.size(); ++i)
      CHECK(g[i] == doctest::Approx(closed.grad.at(name)[i]).epsilon(1e-12));
  }
}

TEST_CASE("importance map serialization round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "metacd_tests";
  std::filesystem::create_directories(dir);
  const ParamSet params = kb_fixture(14);
  ImportanceMap imp;
  imp.multi_anchor = true;
  update_anchor(imp, params, unit_fixture(15), 8);
  update_anchor(imp, params, unit_fixture(16), 8);
  save_importance(dir / "imp.bin", imp);
  const ImportanceMap loaded = load_importance(dir / "imp.bin");
  CHECK(loaded.tasks_seen == 2);
  CHECK(loaded.multi_anchor);
  CHECK(loaded.history.size() == 2);
  for (const auto& [name, vec] : imp.phi) CHECK(loaded.phi.at(name) == vec);
  for (const auto& [name, arr] : imp.anchor.arrays)
    CHECK(loaded.anchor.at(name).data == arr.data);
}

TEST_CASE("empty record set is rejected") {
  const ParamSet params = kb_fixture(17);
  TaskUnit unit = unit_fixture(18);
  unit.records.clear();
  CHECK_THROWS_AS(compute_importance(params, unit, 8), ConfigError);
}

}  // TEST_SUITE
