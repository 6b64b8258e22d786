#include "metacd/finite_diff.hpp"

#include <cmath>

namespace metacd::ad {

FdReport finite_diff_check(Tape& tape, NodeId output,
                           const std::vector<NodeId>& param_leaves,
                           const FdOptions& opts) {
  if (opts.step <= 0.0 || opts.tolerance <= 0.0)
    throw Error("finite_diff_check: step and tolerance must be positive");
  if (tape.shape(output).size() != 1)
    throw Error("finite_diff_check: output must be scalar");

  tape.replay();
  tape.zero_grad();
  tape.backward(output);

  // keep a copy of the analytic gradients before replay() starts mutating
  std::vector<std::vector<double>> analytic;
  analytic.reserve(param_leaves.size());
  for (NodeId leaf : param_leaves) analytic.push_back(tape.grad(leaf));

  FdReport report;
  for (size_t bi = 0; bi < param_leaves.size(); ++bi) {
    const NodeId leaf = param_leaves[bi];
    if (!tape.is_trainable_leaf(leaf))
      throw Error("finite_diff_check: node is not a trainable leaf");
    FdBlockReport block;
    block.name = tape.leaf_name(leaf).empty() ? "leaf#" + std::to_string(leaf)
                                              : tape.leaf_name(leaf);

    std::vector<double> theta = tape.value(leaf);
    for (size_t k = 0; k < theta.size(); ++k) {
      const double orig = theta[k];
      const double h = opts.step;

      theta[k] = orig + h;
      tape.set_leaf(leaf, theta);
      tape.replay();
      const double f_plus = tape.scalar(output);
      const auto signs_plus = tape.relu_input_signs();

      theta[k] = orig - h;
      tape.set_leaf(leaf, theta);
      tape.replay();
      const double f_minus = tape.scalar(output);
      const auto signs_minus = tape.relu_input_signs();

      theta[k] = orig;
      tape.set_leaf(leaf, theta);

      if (signs_plus != signs_minus) {
        ++block.excluded;
        continue;
      }

      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[bi][k];
      const double scale =
          std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
      const double rel = std::abs(a - numeric) / scale;
      block.max_rel_dev = std::max(block.max_rel_dev, rel);
      ++block.checked;
    }

    block.pass = block.max_rel_dev <= opts.tolerance;
    report.pass = report.pass && block.pass;
    report.total_excluded += block.excluded;
    report.blocks.push_back(std::move(block));
  }

  tape.replay();  // restore values for the caller
  return report;
}

}  // namespace metacd::ad
