#include "metacd/knowledge_base.hpp"

#include <cmath>

#include "metacd/rng.hpp"

namespace metacd {

namespace {

constexpr const char* kKind = "metacd-kb";

Array xavier(int rows, int cols, Rng& rng) {
  Array a(rows, cols);
  const double bound = std::sqrt(6.0 / (rows + cols));
  for (double& v : a.data) v = rng.uniform(-bound, bound);
  return a;
}

// Lookup tables are read row-wise: each row feeds the network like a 1 x cols
// input layer, so the Xavier fan is per row, not the whole table. The full
// (rows + cols) fan would squash every row toward sigmoid(0) and starve the
// encoder of signal.
Array xavier_table(int rows, int cols, Rng& rng) {
  Array a(rows, cols);
  const double bound = std::sqrt(6.0 / (1 + cols));
  for (double& v : a.data) v = rng.uniform(-bound, bound);
  return a;
}

std::string weight_name(int layer) { return "kb.W" + std::to_string(layer + 1); }
std::string bias_name(int layer) { return "kb.b" + std::to_string(layer + 1); }

}  // namespace

void KbArchitecture::validate() const {
  if (input_dim < 1) throw ConfigError("KbArchitecture: input_dim must be >= 1");
  if (hidden.empty()) throw ConfigError("KbArchitecture: at least one hidden layer");
  for (int h : hidden)
    if (h < 1) throw ConfigError("KbArchitecture: hidden sizes must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("KbArchitecture: dropout must be in [0, 1)");
}

ParamSet init_params(const KbArchitecture& arch, int num_students,
                     int num_questions, uint64_t seed) {
  arch.validate();
  if (num_students < 1 || num_questions < 1)
    throw ConfigError("init_params: student and question counts must be >= 1");

  Rng rng(derive_seed(seed, 0x1417));
  ParamSet params;
  params.arrays.emplace(kStudentTable, xavier_table(num_students, arch.input_dim, rng));
  params.arrays.emplace(kDifficultyTable, xavier_table(num_questions, arch.input_dim, rng));
  params.arrays.emplace(kDiscriminationTable, xavier_table(num_questions, 1, rng));

  int in_dim = arch.input_dim;
  for (size_t i = 0; i < arch.hidden.size(); ++i) {
    params.arrays.emplace(weight_name(static_cast<int>(i)),
                          xavier(arch.hidden[i], in_dim, rng));
    params.arrays.emplace(bias_name(static_cast<int>(i)), Array(arch.hidden[i], 1));
    in_dim = arch.hidden[i];
  }
  params.arrays.emplace("kb.Wout", xavier(1, arch.feature_dim(), rng));
  params.arrays.emplace("kb.bout", Array(1, 1));

  params.descriptor = {{"kind", kKind},
                       {"version", 1},
                       {"num_students", num_students},
                       {"num_questions", num_questions},
                       {"num_skills", arch.input_dim},
                       {"hidden", arch.hidden},
                       {"dropout", arch.dropout},
                       {"has_classifier", true}};
  return params;
}

KbArchitecture arch_of(const ParamSet& params) {
  const auto& d = params.descriptor;
  if (!d.contains("kind") || d["kind"] != kKind)
    throw ConfigError("arch_of: ParamSet is not a knowledge-base parameter set");
  KbArchitecture arch;
  arch.input_dim = d.at("num_skills").get<int>();
  arch.hidden = d.at("hidden").get<std::vector<int>>();
  arch.dropout = d.at("dropout").get<double>();
  return arch;
}

bool has_classifier(const ParamSet& params) {
  return params.descriptor.value("has_classifier", false);
}

ParamSet strip_classifier(const ParamSet& params) {
  if (!has_classifier(params))
    throw RuntimeError("strip_classifier: classifier already stripped");
  ParamSet out = params;
  out.arrays.erase("kb.Wout");
  out.arrays.erase("kb.bout");
  out.descriptor["has_classifier"] = false;
  return out;
}

KbGraph kb_graph(ad::Tape& tape, const BoundLeaves& leaves,
                 const KbArchitecture& arch,
                 const std::vector<const ResponseRecord*>& records,
                 const QMatrix& qmatrix, Mode mode, uint64_t dropout_seed,
                 bool with_loss) {
  if (records.empty()) throw ConfigError("kb_graph: empty record batch");

  ad::NodeId h = encode_batch(tape, leaves, records, qmatrix);
  for (size_t i = 0; i < arch.hidden.size(); ++i) {
    h = tape.relu(tape.affine(leaves.at(weight_name(static_cast<int>(i))), h,
                              leaves.at(bias_name(static_cast<int>(i)))));
    if (arch.dropout > 0.0) {
      if (mode == Mode::kTrain)
        h = tape.dropout(h, arch.dropout, derive_seed(dropout_seed, i));
      else
        h = tape.scale(h, 1.0 - arch.dropout);
    }
  }

  KbGraph graph;
  graph.features = h;
  if (leaves.count("kb.Wout")) {
    graph.logits = tape.affine(leaves.at("kb.Wout"), h, leaves.at("kb.bout"));
    if (with_loss) {
      std::vector<double> targets(records.size());
      for (size_t j = 0; j < records.size(); ++j)
        targets[j] = static_cast<double>(records[j]->score);
      graph.loss = tape.bce_with_logits(graph.logits, std::move(targets));
    }
  } else if (with_loss) {
    throw RuntimeError("kb_graph: loss requested but the classifier is stripped");
  }
  return graph;
}

KbOutput kb_forward(const ParamSet& params, const ResponseRecord& record,
                    const QMatrix& qmatrix, Mode mode, uint64_t dropout_seed) {
  ad::Tape tape;
  const BoundLeaves leaves = bind_params(tape, params, /*trainable=*/false);
  const KbGraph graph =
      kb_graph(tape, leaves, arch_of(params), {&record}, qmatrix, mode, dropout_seed, false);
  KbOutput out;
  out.features = tape.value(graph.features);
  if (graph.logits >= 0) {
    const double z = tape.value(graph.logits)[0];
    out.probability = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                               : std::exp(z) / (1.0 + std::exp(z));
  }
  return out;
}

namespace {

KbGraph eval_graph(ad::Tape& tape, const ParamSet& params, const TaskUnit& unit,
                   const std::vector<int>& indices) {
  if (indices.empty()) throw ConfigError("kb eval: empty index set");
  std::vector<const ResponseRecord*> records;
  records.reserve(indices.size());
  for (int i : indices) records.push_back(&unit.records[i]);
  const BoundLeaves leaves = bind_params(tape, params, /*trainable=*/false);
  return kb_graph(tape, leaves, arch_of(params), records, unit.qmatrix, Mode::kEval, 0, false);
}

}  // namespace

std::vector<std::vector<double>> kb_features(const ParamSet& params,
                                             const TaskUnit& unit,
                                             const std::vector<int>& indices) {
  ad::Tape tape;
  const KbGraph graph = eval_graph(tape, params, unit, indices);
  const auto& flat = tape.value(graph.features);
  const int dim = tape.shape(graph.features).rows;
  const int n = tape.shape(graph.features).cols;
  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < dim; ++i) out[j][i] = flat[static_cast<size_t>(i) * n + j];
  return out;
}

std::vector<double> kb_probabilities(const ParamSet& params, const TaskUnit& unit,
                                     const std::vector<int>& indices) {
  if (!has_classifier(params))
    throw RuntimeError("kb_probabilities: classifier has been stripped");
  ad::Tape tape;
  const KbGraph graph = eval_graph(tape, params, unit, indices);
  const auto& z = tape.value(graph.logits);
  std::vector<double> probs(z.size());
  for (size_t i = 0; i < z.size(); ++i)
    probs[i] = z[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-z[i]))
                           : std::exp(z[i]) / (1.0 + std::exp(z[i]));
  return probs;
}

}  // namespace metacd
