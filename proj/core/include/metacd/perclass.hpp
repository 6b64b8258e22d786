#pragma once

#include <filesystem>

#include "metacd/optim.hpp"

namespace metacd {

/// Labeled X_KB feature vectors.
struct FeatureDataset {
  int dim = 0;
  std::vector<std::vector<double>> x;
  std::vector<int> y;  // 0 or 1

  int count(int label) const {
    int n = 0;
    for (int v : y) n += v == label ? 1 : 0;
    return n;
  }
};

/// Two one-class scoring networks, one per diagnosis outcome. Each head is a
/// bias-free 4-layer dense net with ReLU between layers and a raw scalar
/// output; without biases the output level is tied to the input Jacobian,
/// which the H-reg term bounds. f1 is constructed as an exact copy of f0.
struct HeadParams {
  ParamSet f0;
  ParamSet f1;
};

struct HeadLossConfig {
  double eta = 0.5;     // H-reg weight
  double lambda = 0.1;  // L2-transfer weight tying f1 to f0
  int mu = 2;           // H-reg exponent, one of {2, 3, 4}

  void validate() const;
};

/// Feature dimensions flagged as shared (non-discriminative) knowledge are
/// zeroed before the heads. kept lists the surviving dimensions.
struct SeparationMask {
  int dims = 0;
  std::vector<int> kept;         // ascending
  std::vector<double> scores;    // per-dimension KL score
  double kappa0 = 0.5;
  double kappa1 = 0.5;

  std::vector<double> as_mask() const {
    std::vector<double> m(dims, 0.0);
    for (int k : kept) m[k] = 1.0;
    return m;
  }
};

/// Head sizes: feature_dim -> 32 -> 16 -> 8 -> 1 by default, weights only.
HeadParams init_heads(int feature_dim, uint64_t seed,
                      const std::vector<int>& hidden = {32, 16, 8});

/// Raw (pre-sigmoid) score of one head on one feature vector.
double head_forward(const ParamSet& head, const std::vector<double>& x,
                    const SeparationMask* mask = nullptr);

/// Maskless closed form ||w4 * w3 * w2 * w1||_F ^ mu over the head's weight
/// matrices. The training loss uses the per-sample masked-Jacobian form
/// instead (see head_loss_node); this surrogate is exposed for analysis.
double hreg(const ParamSet& head, int mu);
ad::NodeId hreg_node(ad::Tape& tape, const BoundLeaves& leaves, int mu);

/// Head loss: mean[-log sigmoid(f_i(x))] over the class-i batch
/// + eta * mean ||d f_i / d x||^mu (per-sample ReLU-masked Jacobian)
/// + lambda * ||theta_own - theta_other||^2. The other head's parameters
/// enter as constants.
double head_loss(int head_index, const HeadParams& heads,
                 const std::vector<std::vector<double>>& class_batch,
                 const HeadLossConfig& cfg, const SeparationMask* mask = nullptr);

/// Tape version; x_node is (dim, n). other_params may be null, in which case
/// the tether term is absent (f0's own training stage, where the other head
/// is still defined as a copy of it and the term is identically zero).
ad::NodeId head_loss_node(ad::Tape& tape, const BoundLeaves& own_leaves,
                          const ParamSet* other_params, ad::NodeId x_node,
                          const HeadLossConfig& cfg);

/// Both heads train simultaneously (alternating full-batch Adam steps) from
/// the shared construction copy, each on its own class and tethered to the
/// other's current parameters. Both classes must be present.
HeadParams train_heads(const FeatureDataset& features, const HeadLossConfig& cfg,
                       int steps, double adam_lr, uint64_t seed,
                       const SeparationMask* mask = nullptr);

/// Histogram KL with the pooled-zero convention: bins where q vanishes
/// contribute nothing.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

/// Score every feature dimension by sum_i kappa_i * KL(P_i || P_pooled) and
/// mask the lowest-scoring ones, keeping ceil-to->=1 of keep_threshold of the
/// dimensions. Negative kappa means "use the empirical class priors".
SeparationMask kl_separation(const FeatureDataset& features, double kappa0,
                             double kappa1, int bins, double keep_threshold);

/// argmax(f0(x), f1(x)); ties resolve to class 0.
int diagnose(const HeadParams& heads, const std::vector<double>& x,
             const SeparationMask* mask = nullptr);

void save_heads(const std::filesystem::path& path, const HeadParams& heads);
HeadParams load_heads(const std::filesystem::path& path);

nlohmann::json mask_to_json(const SeparationMask& mask);
SeparationMask mask_from_json(const nlohmann::json& j);

}  // namespace metacd
