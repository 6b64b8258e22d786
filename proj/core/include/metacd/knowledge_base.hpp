#pragma once

#include "metacd/embedding.hpp"

namespace metacd {

enum class Mode { kTrain, kEval };

/// MLP over encoded responses. The last hidden layer is the feature vector
/// X_KB; the classifier maps it to a single correctness logit and can be
/// stripped to leave a feature extractor.
struct KbArchitecture {
  int input_dim = 0;  // d = number of skills of the task family
  std::vector<int> hidden = {64, 32};
  double dropout = 0.5;

  int feature_dim() const { return hidden.back(); }
  void validate() const;
};

/// Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.
/// Tables and layer matrices are drawn in a fixed order, so equal seeds give
/// identical ParamSets.
ParamSet init_params(const KbArchitecture& arch, int num_students,
                     int num_questions, uint64_t seed);

KbArchitecture arch_of(const ParamSet& params);
bool has_classifier(const ParamSet& params);

/// Remove the classification layer; the remaining arrays are bit-identical.
/// Stripping twice is an error.
ParamSet strip_classifier(const ParamSet& params);

struct KbGraph {
  ad::NodeId features = -1;  // (feature_dim, n)
  ad::NodeId logits = -1;    // (1, n), -1 when the classifier is absent
  ad::NodeId loss = -1;      // scalar BCE, -1 when not requested
};

/// Build the forward graph (and optionally the cross-entropy loss) for a
/// batch of records. Dropout masks are keyed by dropout_seed in train mode;
/// eval mode scales activations by (1 - rate) instead. The classifier is
/// attached when the bound leaves contain kb.Wout.
KbGraph kb_graph(ad::Tape& tape, const BoundLeaves& leaves,
                 const KbArchitecture& arch,
                 const std::vector<const ResponseRecord*>& records,
                 const QMatrix& qmatrix, Mode mode, uint64_t dropout_seed,
                 bool with_loss);

struct KbOutput {
  double probability = 0.5;  // 0.5 when the classifier has been stripped
  std::vector<double> features;
};

/// Single-record forward pass.
KbOutput kb_forward(const ParamSet& params, const ResponseRecord& record,
                    const QMatrix& qmatrix, Mode mode, uint64_t dropout_seed = 0);

/// Eval-mode feature vectors for a set of record indices.
std::vector<std::vector<double>> kb_features(const ParamSet& params,
                                             const TaskUnit& unit,
                                             const std::vector<int>& indices);

/// Eval-mode correctness probabilities for a set of record indices.
std::vector<double> kb_probabilities(const ParamSet& params, const TaskUnit& unit,
                                     const std::vector<int>& indices);

}  // namespace metacd
