#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "metacd/errors.hpp"
#include "metacd/rng.hpp"

namespace metacd::ad {

enum class OpTag : uint8_t {
  kLeaf,
  kAffine,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kRelu,
  kSigmoid,
  kSoftplus,
  kGatherRows,
  kColScale,
  kMaskMul,
  kDropout,
  kSum,
  kMean,
  kBceLogits,
  kHalfSqNorm,
  kFrobNorm,
  kPowScalar,
  kQuadPenalty,
  kGradScale,
};

const char* op_name(OpTag tag);

struct Shape {
  int rows = 0;
  int cols = 0;
  int size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

using NodeId = int32_t;

// Reverse-mode tape over dense arrays. Ops evaluate eagerly as the graph is
// built; replay() recomputes every value from the current leaf bindings in
// tape order, which keeps repeated passes bitwise deterministic and gives the
// finite-difference checker a cheap re-evaluation path.
//
// backward() propagates on scratch buffers and then adds the result into the
// persistent gradients, so backward(L1) followed by backward(L2) equals a
// single backward through L1 + L2. Gradients of non-trainable leaves are
// never materialized.
class Tape {
 public:
  NodeId leaf(Shape s, std::vector<double> values, bool trainable,
              std::string name = {});
  void set_leaf(NodeId id, const std::vector<double>& values);
  NodeId find_leaf(const std::string& name) const;

  // w:(m,k) x:(k,n) b:(m,1) -> w*x with b added to every column
  NodeId affine(NodeId w, NodeId x, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId softplus(NodeId a);
  // rows of `table` become columns of the (cols(table), n) result
  NodeId gather_rows(NodeId table, std::vector<int> rows);
  // x:(m,n), r:(1,n): column j of x scaled by r[j]
  NodeId col_scale(NodeId x, NodeId r);
  // elementwise product with a constant mask of the same size
  NodeId mask_mul(NodeId x, std::vector<double> mask);
  // training-mode dropout; the Bernoulli(1-rate) mask is drawn once at
  // construction and reused by replay()
  NodeId dropout(NodeId x, double rate, uint64_t seed);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  // mean_i [max(z,0) - z*y + log(1+exp(-|z|))] over all entries
  NodeId bce_with_logits(NodeId logits, std::vector<double> targets);
  NodeId half_sq_norm(NodeId a);
  NodeId frobenius_norm(NodeId a);
  NodeId pow_scalar(NodeId a, double p);
  // 0.5 * sum_k coeff[k] * (theta[k] - anchor[k])^2
  NodeId quad_penalty(NodeId theta, std::vector<double> coeff,
                      std::vector<double> anchor);
  // identity forward, gradient multiplied by c on the way back; used to
  // inject known faults when exercising the finite-difference checker
  NodeId grad_scale(NodeId a, double c);

  /// Bind named input leaves, then recompute the whole tape.
  void forward(const std::map<std::string, std::vector<double>>& inputs);
  void replay();
  void zero_grad();
  void backward(NodeId out);
  void backward(NodeId out, const std::vector<double>& seed);

  const std::vector<double>& value(NodeId id) const { return nodes_[id].value; }
  double scalar(NodeId id) const;
  const std::vector<double>& grad(NodeId id) const;
  Shape shape(NodeId id) const { return nodes_[id].shape; }
  OpTag op(NodeId id) const { return nodes_[id].op; }
  const std::string& leaf_name(NodeId id) const { return nodes_[id].name; }
  bool is_trainable_leaf(NodeId id) const;
  int node_count() const { return static_cast<int>(nodes_.size()); }

  /// Sign pattern (>= 0) of every ReLU input on the tape, in tape order.
  /// Finite differencing compares two of these to detect crossed kinks.
  std::vector<uint8_t> relu_input_signs() const;

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;     // persistent accumulator
    std::vector<double> scratch;  // per-backward workspace
    OpTag op = OpTag::kLeaf;
    NodeId parent[3] = {-1, -1, -1};
    int n_parents = 0;
    bool trainable = false;
    bool requires_grad = false;
    double c = 0.0;               // scale factor / exponent / dropout rate
    std::vector<double> aux;      // masks, targets, penalty coefficients
    std::vector<int> iaux;        // gather indices
    std::string name;
  };

  NodeId push(Node n);
  void compute(Node& n);
  void backprop(const Node& n);
  void check_valid(NodeId id, const char* who) const;
  [[noreturn]] void shape_fail(OpTag tag, const std::string& detail) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> named_leaves_;
  bool stale_ = false;  // set_leaf() without replay()
};

}  // namespace metacd::ad
