#pragma once

#include "metacd/eval.hpp"
#include "metacd/knowledge_base.hpp"
#include "metacd/meta.hpp"
#include "metacd/perclass.hpp"
#include "metacd/synthetic.hpp"

namespace metacd {

struct DataConfig {
  SyntheticWorldConfig world;
  int pool_units = 12;
  int sequence_units = 4;
  int test_units = 1;
  // test-role units can be generated sparser than the pool (0 = same size)
  int test_records_target = 0;
  double support_fraction = 0.8;
};

struct PpmConfig {
  bool enabled = true;
  double weight = 1.0;
  int sample_cap = 256;
  bool multi_anchor = false;
};

struct HeadTrainConfig {
  HeadLossConfig loss;  // eta, lambda, mu
  int steps = 150;
  double adam_lr = 0.01;
  int bins = 16;
  double keep_threshold = 0.75;
  double kappa0 = -1.0;  // negative: use empirical class priors
  double kappa1 = -1.0;
};

struct EvalConfig {
  std::string metric = "auc";  // or "acc"
  std::vector<int> bucket_edges = default_bucket_edges();
};

struct GridConfig {
  std::vector<double> eta_values = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> lambda_values = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<int> mu_values = {2, 3, 4};
  int steps = 40;  // reduced head-training budget per grid cell
  int jobs = 1;
};

/// Whole-run configuration. Every field has the published default where one
/// exists; unknown keys anywhere in the document are rejected.
struct RunConfig {
  DataConfig data;
  KbArchitecture arch;  // input_dim is taken from the data at run time
  MetaConfig meta;
  PpmConfig ppm;
  HeadTrainConfig heads;
  EvalConfig eval;
  GridConfig grid;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load_file(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
};

}  // namespace metacd
