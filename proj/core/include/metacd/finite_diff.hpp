#pragma once

#include <string>
#include <vector>

#include "metacd/tape.hpp"

namespace metacd::ad {

struct FdBlockReport {
  std::string name;
  double max_rel_dev = 0.0;
  int checked = 0;
  int excluded = 0;  // elements skipped because a ReLU kink fell inside the step
  bool pass = true;
};

struct FdReport {
  std::vector<FdBlockReport> blocks;
  bool pass = true;
  int total_excluded = 0;
};

struct FdOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // deviations are relative to max(|analytic|, |numeric|, abs_floor); the
  // floor stops near-zero gradients from blowing up the ratio
  double abs_floor = 1e-3;
};

/// Central-difference check of d(output)/d(block) for every element of every
/// listed trainable leaf. The output node must be scalar. Elements whose
/// perturbation flips the sign of any ReLU input are excluded and counted.
FdReport finite_diff_check(Tape& tape, NodeId output,
                           const std::vector<NodeId>& param_leaves,
                           const FdOptions& opts = {});

}  // namespace metacd::ad
