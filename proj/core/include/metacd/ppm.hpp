#pragma once

#include "metacd/knowledge_base.hpp"

namespace metacd {

/// Per-parameter sensitivity weights phi with the anchor parameters they
/// protect. Default mode keeps one anchor (the last task boundary) and a
/// running mean of phi across tasks; multi_anchor keeps every per-task
/// (phi, anchor) pair and sums their penalties.
struct ImportanceMap {
  ValueMap phi;
  ParamSet anchor;
  int tasks_seen = 0;
  bool multi_anchor = false;

  struct TaskAnchor {
    ValueMap phi;
    ParamSet anchor;
  };
  std::vector<TaskAnchor> history;  // populated only in multi_anchor mode

  bool has_anchor() const { return tasks_seen > 0; }
};

/// Mean absolute gradient of r(x) = 0.5 * ||KB(x, theta)||^2 with respect to
/// every parameter, over min(sample_cap, |unit|) evenly spaced records. The
/// KB output is the correctness logit while the classifier is attached and
/// the X_KB feature vector once it has been stripped.
ValueMap compute_importance(const ParamSet& params, const TaskUnit& unit,
                            int sample_cap);

struct PpmTerm {
  double loss = 0.0;
  ValueMap grad;
};

/// L_PPM = 0.5 * sum_k phi_k (theta_k - anchor_k)^2 (summed over anchors in
/// multi mode) with its exact gradient. No-op when no anchor exists yet.
PpmTerm ppm_penalty(const ParamSet& current, const ImportanceMap& importance);

/// Tape node carrying weight * L_PPM, or -1 when no anchor exists.
ad::NodeId ppm_penalty_node(ad::Tape& tape, const BoundLeaves& leaves,
                            const ImportanceMap& importance, double weight);

/// Close out a task: recompute phi on the finished unit, fold it into the
/// running mean (or push a new history entry), and move the anchor to the
/// just-trained parameters.
void update_anchor(ImportanceMap& importance, const ParamSet& params_after_task,
                   const TaskUnit& unit, int sample_cap);

void save_importance(const std::filesystem::path& path, const ImportanceMap& imp);
ImportanceMap load_importance(const std::filesystem::path& path);

}  // namespace metacd
