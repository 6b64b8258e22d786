#include "metacd/tape.hpp"

#include <cmath>
#include <cstdio>

namespace metacd::ad {

const char* op_name(OpTag tag) {
  switch (tag) {
    case OpTag::kLeaf: return "leaf";
    case OpTag::kAffine: return "affine";
    case OpTag::kMatmul: return "matmul";
    case OpTag::kAdd: return "add";
    case OpTag::kSub: return "sub";
    case OpTag::kMul: return "mul";
    case OpTag::kScale: return "scale";
    case OpTag::kRelu: return "relu";
    case OpTag::kSigmoid: return "sigmoid";
    case OpTag::kSoftplus: return "softplus";
    case OpTag::kGatherRows: return "gather_rows";
    case OpTag::kColScale: return "col_scale";
    case OpTag::kMaskMul: return "mask_mul";
    case OpTag::kDropout: return "dropout";
    case OpTag::kSum: return "sum";
    case OpTag::kMean: return "mean";
    case OpTag::kBceLogits: return "bce_with_logits";
    case OpTag::kHalfSqNorm: return "half_sq_norm";
    case OpTag::kFrobNorm: return "frobenius_norm";
    case OpTag::kPowScalar: return "pow_scalar";
    case OpTag::kQuadPenalty: return "quad_penalty";
    case OpTag::kGradScale: return "grad_scale";
  }
  return "?";
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string shape_str(Shape s) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "(%d,%d)", s.rows, s.cols);
  return buf;
}

}  // namespace

void Tape::shape_fail(OpTag tag, const std::string& detail) const {
  throw ShapeError(std::string(op_name(tag)) + ": " + detail);
}

void Tape::check_valid(NodeId id, const char* who) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
    throw Error(std::string(who) + ": node id out of range");
}

NodeId Tape::push(Node n) {
  for (int i = 0; i < n.n_parents; ++i)
    n.requires_grad = n.requires_grad || nodes_[n.parent[i]].requires_grad;
  compute(n);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Shape s, std::vector<double> values, bool trainable,
                  std::string name) {
  if (static_cast<int>(values.size()) != s.size())
    shape_fail(OpTag::kLeaf, "values length " + std::to_string(values.size()) +
                                 " vs shape " + shape_str(s));
  Node n;
  n.shape = s;
  n.value = std::move(values);
  n.trainable = trainable;
  n.requires_grad = trainable;
  n.name = name;
  nodes_.push_back(std::move(n));
  const NodeId id = static_cast<NodeId>(nodes_.size() - 1);
  if (!name.empty()) named_leaves_[name] = id;
  return id;
}

void Tape::set_leaf(NodeId id, const std::vector<double>& values) {
  check_valid(id, "set_leaf");
  Node& n = nodes_[id];
  if (n.op != OpTag::kLeaf) throw Error("set_leaf: node is not a leaf");
  if (values.size() != n.value.size())
    shape_fail(OpTag::kLeaf, "set_leaf size mismatch");
  n.value = values;
  stale_ = true;
}

NodeId Tape::find_leaf(const std::string& name) const {
  auto it = named_leaves_.find(name);
  if (it == named_leaves_.end()) throw Error("find_leaf: no leaf named " + name);
  return it->second;
}

bool Tape::is_trainable_leaf(NodeId id) const {
  check_valid(id, "is_trainable_leaf");
  return nodes_[id].op == OpTag::kLeaf && nodes_[id].trainable;
}

double Tape::scalar(NodeId id) const {
  check_valid(id, "scalar");
  if (nodes_[id].shape.size() != 1) throw Error("scalar: node is not 1x1");
  return nodes_[id].value[0];
}

const std::vector<double>& Tape::grad(NodeId id) const {
  check_valid(id, "grad");
  const Node& n = nodes_[id];
  if (!n.requires_grad)
    throw Error("grad: node does not accumulate gradients (non-trainable)");
  if (n.grad.empty()) throw Error("grad: backward has not run");
  return n.grad;
}

// ---------------------------------------------------------------------------
// op constructors

NodeId Tape::affine(NodeId w, NodeId x, NodeId b) {
  const Shape sw = nodes_[w].shape, sx = nodes_[x].shape, sb = nodes_[b].shape;
  if (sw.cols != sx.rows || sb.rows != sw.rows || sb.cols != 1)
    shape_fail(OpTag::kAffine, "w " + shape_str(sw) + " x " + shape_str(sx) +
                                   " b " + shape_str(sb));
  Node n;
  n.op = OpTag::kAffine;
  n.shape = {sw.rows, sx.cols};
  n.parent[0] = w;
  n.parent[1] = x;
  n.parent[2] = b;
  n.n_parents = 3;
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Shape sa = nodes_[a].shape, sb = nodes_[b].shape;
  if (sa.cols != sb.rows)
    shape_fail(OpTag::kMatmul, "lhs " + shape_str(sa) + " rhs " + shape_str(sb));
  Node n;
  n.op = OpTag::kMatmul;
  n.shape = {sa.rows, sb.cols};
  n.parent[0] = a;
  n.parent[1] = b;
  n.n_parents = 2;
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  if (!(nodes_[a].shape == nodes_[b].shape))
    shape_fail(OpTag::kAdd, shape_str(nodes_[a].shape) + " vs " +
                                shape_str(nodes_[b].shape));
  Node n;
  n.op = OpTag::kAdd;
  n.shape = nodes_[a].shape;
  n.parent[0] = a;
  n.parent[1] = b;
  n.n_parents = 2;
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  if (!(nodes_[a].shape == nodes_[b].shape))
    shape_fail(OpTag::kSub, shape_str(nodes_[a].shape) + " vs " +
                                shape_str(nodes_[b].shape));
  Node n;
  n.op = OpTag::kSub;
  n.shape = nodes_[a].shape;
  n.parent[0] = a;
  n.parent[1] = b;
  n.n_parents = 2;
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  if (!(nodes_[a].shape == nodes_[b].shape))
    shape_fail(OpTag::kMul, shape_str(nodes_[a].shape) + " vs " +
                                shape_str(nodes_[b].shape));
  Node n;
  n.op = OpTag::kMul;
  n.shape = nodes_[a].shape;
  n.parent[0] = a;
  n.parent[1] = b;
  n.n_parents = 2;
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double c) {
  Node n;
  n.op = OpTag::kScale;
  n.shape = nodes_[a].shape;
  n.parent[0] = a;
  n.n_parents = 1;
  n.c = c;
  return push(std::move(n));
}

NodeId Tape::relu(NodeId a) {
  Node n;
  n.op = OpTag::kRelu;
  n.shape = nodes_[a].shape;
  n.parent[0] = a;
  n.n_parents = 1;
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId a) {
  Node n;
  n.op = OpTag::kSigmoid;
  n.shape = nodes_[a].shape;
  n.parent[0] = a;
  n.n_parents = 1;
  return push(std::move(n));
}

NodeId Tape::softplus(NodeId a) {
  Node n;
  n.op = OpTag::kSoftplus;
  n.shape = nodes_[a].shape;
  n.parent[0] = a;
  n.n_parents = 1;
  return push(std::move(n));
}

NodeId Tape::gather_rows(NodeId table, std::vector<int> rows) {
  const Shape st = nodes_[table].shape;
  for (int r : rows)
    if (r < 0 || r >= st.rows)
      shape_fail(OpTag::kGatherRows, "row " + std::to_string(r) +
                                         " out of range for " + shape_str(st));
  Node n;
  n.op = OpTag::kGatherRows;
  n.shape = {st.cols, static_cast<int>(rows.size())};
  n.parent[0] = table;
  n.n_parents = 1;
  n.iaux = std::move(rows);
  return push(std::move(n));
}

NodeId Tape::col_scale(NodeId x, NodeId r) {
  const Shape sx = nodes_[x].shape, sr = nodes_[r].shape;
  if (sr.rows != 1 || sr.cols != sx.cols)
    shape_fail(OpTag::kColScale, "x " + shape_str(sx) + " r " + shape_str(sr));
  Node n;
  n.op = OpTag::kColScale;
  n.shape = sx;
  n.parent[0] = x;
  n.parent[1] = r;
  n.n_parents = 2;
  return push(std::move(n));
}

NodeId Tape::mask_mul(NodeId x, std::vector<double> mask) {
  if (static_cast<int>(mask.size()) != nodes_[x].shape.size())
    shape_fail(OpTag::kMaskMul, "mask length " + std::to_string(mask.size()) +
                                    " vs " + shape_str(nodes_[x].shape));
  Node n;
  n.op = OpTag::kMaskMul;
  n.shape = nodes_[x].shape;
  n.parent[0] = x;
  n.n_parents = 1;
  n.aux = std::move(mask);
  return push(std::move(n));
}

NodeId Tape::dropout(NodeId x, double rate, uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0)
    throw Error("dropout: rate must be in [0, 1)");
  Node n;
  n.op = OpTag::kDropout;
  n.shape = nodes_[x].shape;
  n.parent[0] = x;
  n.n_parents = 1;
  n.c = rate;
  Rng rng(seed);
  n.aux.resize(n.shape.size());
  for (double& m : n.aux) m = rng.bernoulli(rate) ? 0.0 : 1.0;
  return push(std::move(n));
}

NodeId Tape::sum(NodeId a) {
  Node n;
  n.op = OpTag::kSum;
  n.shape = {1, 1};
  n.parent[0] = a;
  n.n_parents = 1;
  return push(std::move(n));
}

NodeId Tape::mean(NodeId a) {
  Node n;
  n.op = OpTag::kMean;
  n.shape = {1, 1};
  n.parent[0] = a;
  n.n_parents = 1;
  return push(std::move(n));
}

NodeId Tape::bce_with_logits(NodeId logits, std::vector<double> targets) {
  if (static_cast<int>(targets.size()) != nodes_[logits].shape.size())
    shape_fail(OpTag::kBceLogits,
               "targets length " + std::to_string(targets.size()) + " vs " +
                   shape_str(nodes_[logits].shape));
  if (targets.empty()) shape_fail(OpTag::kBceLogits, "empty batch");
  Node n;
  n.op = OpTag::kBceLogits;
  n.shape = {1, 1};
  n.parent[0] = logits;
  n.n_parents = 1;
  n.aux = std::move(targets);
  return push(std::move(n));
}

NodeId Tape::half_sq_norm(NodeId a) {
  Node n;
  n.op = OpTag::kHalfSqNorm;
  n.shape = {1, 1};
  n.parent[0] = a;
  n.n_parents = 1;
  return push(std::move(n));
}

NodeId Tape::frobenius_norm(NodeId a) {
  Node n;
  n.op = OpTag::kFrobNorm;
  n.shape = {1, 1};
  n.parent[0] = a;
  n.n_parents = 1;
  return push(std::move(n));
}

NodeId Tape::pow_scalar(NodeId a, double p) {
  if (nodes_[a].shape.size() != 1)
    shape_fail(OpTag::kPowScalar, "input must be 1x1, got " +
                                      shape_str(nodes_[a].shape));
  Node n;
  n.op = OpTag::kPowScalar;
  n.shape = {1, 1};
  n.parent[0] = a;
  n.n_parents = 1;
  n.c = p;
  return push(std::move(n));
}

NodeId Tape::grad_scale(NodeId a, double c) {
  Node n;
  n.op = OpTag::kGradScale;
  n.shape = nodes_[a].shape;
  n.parent[0] = a;
  n.n_parents = 1;
  n.c = c;
  return push(std::move(n));
}

NodeId Tape::quad_penalty(NodeId theta, std::vector<double> coeff,
                          std::vector<double> anchor) {
  const int sz = nodes_[theta].shape.size();
  if (static_cast<int>(coeff.size()) != sz ||
      static_cast<int>(anchor.size()) != sz)
    shape_fail(OpTag::kQuadPenalty, "coeff/anchor length vs " +
                                        shape_str(nodes_[theta].shape));
  Node n;
  n.op = OpTag::kQuadPenalty;
  n.shape = {1, 1};
  n.parent[0] = theta;
  n.n_parents = 1;
  n.aux = std::move(coeff);
  n.aux.insert(n.aux.end(), anchor.begin(), anchor.end());
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// forward evaluation

void Tape::compute(Node& n) {
  const int sz = n.shape.size();
  n.value.assign(sz, 0.0);
  switch (n.op) {
    case OpTag::kLeaf:
      break;
    case OpTag::kAffine: {
      const Node& w = nodes_[n.parent[0]];
      const Node& x = nodes_[n.parent[1]];
      const Node& b = nodes_[n.parent[2]];
      const int m = w.shape.rows, k = w.shape.cols, c = x.shape.cols;
      for (int i = 0; i < m; ++i) {
        const double bi = b.value[i];
        for (int j = 0; j < c; ++j) n.value[i * c + j] = bi;
      }
      for (int i = 0; i < m; ++i)
        for (int l = 0; l < k; ++l) {
          const double wil = w.value[i * k + l];
          if (wil == 0.0) continue;
          for (int j = 0; j < c; ++j)
            n.value[i * c + j] += wil * x.value[l * c + j];
        }
      break;
    }
    case OpTag::kMatmul: {
      const Node& a = nodes_[n.parent[0]];
      const Node& b = nodes_[n.parent[1]];
      const int m = a.shape.rows, k = a.shape.cols, c = b.shape.cols;
      for (int i = 0; i < m; ++i)
        for (int l = 0; l < k; ++l) {
          const double ail = a.value[i * k + l];
          if (ail == 0.0) continue;
          for (int j = 0; j < c; ++j)
            n.value[i * c + j] += ail * b.value[l * c + j];
        }
      break;
    }
    case OpTag::kAdd: {
      const auto& a = nodes_[n.parent[0]].value;
      const auto& b = nodes_[n.parent[1]].value;
      for (int i = 0; i < sz; ++i) n.value[i] = a[i] + b[i];
      break;
    }
    case OpTag::kSub: {
      const auto& a = nodes_[n.parent[0]].value;
      const auto& b = nodes_[n.parent[1]].value;
      for (int i = 0; i < sz; ++i) n.value[i] = a[i] - b[i];
      break;
    }
    case OpTag::kMul: {
      const auto& a = nodes_[n.parent[0]].value;
      const auto& b = nodes_[n.parent[1]].value;
      for (int i = 0; i < sz; ++i) n.value[i] = a[i] * b[i];
      break;
    }
    case OpTag::kScale: {
      const auto& a = nodes_[n.parent[0]].value;
      for (int i = 0; i < sz; ++i) n.value[i] = n.c * a[i];
      break;
    }
    case OpTag::kRelu: {
      const auto& a = nodes_[n.parent[0]].value;
      for (int i = 0; i < sz; ++i) n.value[i] = a[i] > 0.0 ? a[i] : 0.0;
      break;
    }
    case OpTag::kSigmoid: {
      const auto& a = nodes_[n.parent[0]].value;
      for (int i = 0; i < sz; ++i) n.value[i] = stable_sigmoid(a[i]);
      break;
    }
    case OpTag::kSoftplus: {
      const auto& a = nodes_[n.parent[0]].value;
      for (int i = 0; i < sz; ++i) {
        const double x = a[i];
        n.value[i] = x > 0.0 ? x + std::log1p(std::exp(-x))
                             : std::log1p(std::exp(x));
      }
      break;
    }
    case OpTag::kGatherRows: {
      const Node& t = nodes_[n.parent[0]];
      const int d = t.shape.cols, cnt = static_cast<int>(n.iaux.size());
      for (int j = 0; j < cnt; ++j) {
        const int r = n.iaux[j];
        for (int i = 0; i < d; ++i) n.value[i * cnt + j] = t.value[r * d + i];
      }
      break;
    }
    case OpTag::kColScale: {
      const Node& x = nodes_[n.parent[0]];
      const Node& r = nodes_[n.parent[1]];
      const int m = x.shape.rows, c = x.shape.cols;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j)
          n.value[i * c + j] = x.value[i * c + j] * r.value[j];
      break;
    }
    case OpTag::kMaskMul:
    case OpTag::kDropout: {
      const auto& a = nodes_[n.parent[0]].value;
      for (int i = 0; i < sz; ++i) n.value[i] = a[i] * n.aux[i];
      break;
    }
    case OpTag::kGradScale: {
      n.value = nodes_[n.parent[0]].value;
      break;
    }
    case OpTag::kSum: {
      const auto& a = nodes_[n.parent[0]].value;
      double s = 0.0;
      for (double v : a) s += v;
      n.value[0] = s;
      break;
    }
    case OpTag::kMean: {
      const auto& a = nodes_[n.parent[0]].value;
      double s = 0.0;
      for (double v : a) s += v;
      n.value[0] = s / static_cast<double>(a.size());
      break;
    }
    case OpTag::kBceLogits: {
      const auto& z = nodes_[n.parent[0]].value;
      double s = 0.0;
      for (size_t i = 0; i < z.size(); ++i) {
        const double zi = z[i], yi = n.aux[i];
        s += std::max(zi, 0.0) - zi * yi + std::log1p(std::exp(-std::abs(zi)));
      }
      n.value[0] = s / static_cast<double>(z.size());
      break;
    }
    case OpTag::kHalfSqNorm: {
      const auto& a = nodes_[n.parent[0]].value;
      double s = 0.0;
      for (double v : a) s += v * v;
      n.value[0] = 0.5 * s;
      break;
    }
    case OpTag::kFrobNorm: {
      const auto& a = nodes_[n.parent[0]].value;
      double s = 0.0;
      for (double v : a) s += v * v;
      n.value[0] = std::sqrt(s);
      break;
    }
    case OpTag::kPowScalar: {
      n.value[0] = std::pow(nodes_[n.parent[0]].value[0], n.c);
      break;
    }
    case OpTag::kQuadPenalty: {
      const auto& t = nodes_[n.parent[0]].value;
      const int k = static_cast<int>(t.size());
      double s = 0.0;
      for (int i = 0; i < k; ++i) {
        const double d = t[i] - n.aux[k + i];
        s += n.aux[i] * d * d;
      }
      n.value[0] = 0.5 * s;
      break;
    }
  }
}

void Tape::forward(const std::map<std::string, std::vector<double>>& inputs) {
  for (const auto& [name, values] : inputs) set_leaf(find_leaf(name), values);
  replay();
}

void Tape::replay() {
  for (Node& n : nodes_)
    if (n.op != OpTag::kLeaf) compute(n);
  stale_ = false;
}

// ---------------------------------------------------------------------------
// backward

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad.clear();
}

void Tape::backward(NodeId out) {
  check_valid(out, "backward");
  if (nodes_[out].shape.size() != 1)
    throw Error("backward: default seed requires a scalar output");
  backward(out, {1.0});
}

void Tape::backward(NodeId out, const std::vector<double>& seed) {
  check_valid(out, "backward");
  if (nodes_.empty() || stale_)
    throw Error("backward: forward pass has not run (bind inputs and replay first)");
  if (static_cast<int>(seed.size()) != nodes_[out].shape.size())
    throw Error("backward: seed gradient shape mismatch");

  for (NodeId id = 0; id <= out; ++id) {
    Node& n = nodes_[id];
    if (n.requires_grad) n.scratch.assign(n.shape.size(), 0.0);
  }
  nodes_[out].scratch = seed;

  for (NodeId id = out; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.op == OpTag::kLeaf) continue;
    backprop(n);
  }

  // fold the pass into the persistent accumulators
  for (NodeId id = 0; id <= out; ++id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) continue;
    if (n.grad.empty()) n.grad.assign(n.shape.size(), 0.0);
    for (int i = 0; i < n.shape.size(); ++i) n.grad[i] += n.scratch[i];
  }
}

void Tape::backprop(const Node& n) {
  const std::vector<double>& g = n.scratch;
  auto acc = [this](NodeId pid) -> std::vector<double>* {
    Node& p = nodes_[pid];
    return p.requires_grad ? &p.scratch : nullptr;
  };
  switch (n.op) {
    case OpTag::kLeaf:
      break;
    case OpTag::kAffine: {
      const Node& w = nodes_[n.parent[0]];
      const Node& x = nodes_[n.parent[1]];
      const int m = w.shape.rows, k = w.shape.cols, c = x.shape.cols;
      if (auto* gw = acc(n.parent[0]))
        for (int i = 0; i < m; ++i)
          for (int l = 0; l < k; ++l) {
            double s = 0.0;
            for (int j = 0; j < c; ++j)
              s += g[i * c + j] * x.value[l * c + j];
            (*gw)[i * k + l] += s;
          }
      if (auto* gx = acc(n.parent[1]))
        for (int l = 0; l < k; ++l)
          for (int j = 0; j < c; ++j) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += w.value[i * k + l] * g[i * c + j];
            (*gx)[l * c + j] += s;
          }
      if (auto* gb = acc(n.parent[2]))
        for (int i = 0; i < m; ++i) {
          double s = 0.0;
          for (int j = 0; j < c; ++j) s += g[i * c + j];
          (*gb)[i] += s;
        }
      break;
    }
    case OpTag::kMatmul: {
      const Node& a = nodes_[n.parent[0]];
      const Node& b = nodes_[n.parent[1]];
      const int m = a.shape.rows, k = a.shape.cols, c = b.shape.cols;
      if (auto* ga = acc(n.parent[0]))
        for (int i = 0; i < m; ++i)
          for (int l = 0; l < k; ++l) {
            double s = 0.0;
            for (int j = 0; j < c; ++j)
              s += g[i * c + j] * b.value[l * c + j];
            (*ga)[i * k + l] += s;
          }
      if (auto* gb = acc(n.parent[1]))
        for (int l = 0; l < k; ++l)
          for (int j = 0; j < c; ++j) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += a.value[i * k + l] * g[i * c + j];
            (*gb)[l * c + j] += s;
          }
      break;
    }
    case OpTag::kAdd: {
      for (int p = 0; p < 2; ++p)
        if (auto* gp = acc(n.parent[p]))
          for (size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
      break;
    }
    case OpTag::kSub: {
      if (auto* ga = acc(n.parent[0]))
        for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      if (auto* gb = acc(n.parent[1]))
        for (size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
      break;
    }
    case OpTag::kMul: {
      const auto& a = nodes_[n.parent[0]].value;
      const auto& b = nodes_[n.parent[1]].value;
      if (auto* ga = acc(n.parent[0]))
        for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b[i];
      if (auto* gb = acc(n.parent[1]))
        for (size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a[i];
      break;
    }
    case OpTag::kScale:
    case OpTag::kGradScale: {
      if (auto* ga = acc(n.parent[0]))
        for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += n.c * g[i];
      break;
    }
    case OpTag::kRelu: {
      const auto& a = nodes_[n.parent[0]].value;
      if (auto* ga = acc(n.parent[0]))
        for (size_t i = 0; i < g.size(); ++i)
          if (a[i] > 0.0) (*ga)[i] += g[i];
      break;
    }
    case OpTag::kSigmoid: {
      if (auto* ga = acc(n.parent[0]))
        for (size_t i = 0; i < g.size(); ++i) {
          const double s = n.value[i];
          (*ga)[i] += g[i] * s * (1.0 - s);
        }
      break;
    }
    case OpTag::kSoftplus: {
      const auto& a = nodes_[n.parent[0]].value;
      if (auto* ga = acc(n.parent[0]))
        for (size_t i = 0; i < g.size(); ++i)
          (*ga)[i] += g[i] * stable_sigmoid(a[i]);
      break;
    }
    case OpTag::kGatherRows: {
      if (auto* gt = acc(n.parent[0])) {
        const int d = nodes_[n.parent[0]].shape.cols;
        const int cnt = static_cast<int>(n.iaux.size());
        for (int j = 0; j < cnt; ++j) {
          const int r = n.iaux[j];
          for (int i = 0; i < d; ++i) (*gt)[r * d + i] += g[i * cnt + j];
        }
      }
      break;
    }
    case OpTag::kColScale: {
      const Node& x = nodes_[n.parent[0]];
      const Node& r = nodes_[n.parent[1]];
      const int m = x.shape.rows, c = x.shape.cols;
      if (auto* gx = acc(n.parent[0]))
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < c; ++j)
            (*gx)[i * c + j] += g[i * c + j] * r.value[j];
      if (auto* gr = acc(n.parent[1]))
        for (int j = 0; j < c; ++j) {
          double s = 0.0;
          for (int i = 0; i < m; ++i) s += g[i * c + j] * x.value[i * c + j];
          (*gr)[j] += s;
        }
      break;
    }
    case OpTag::kMaskMul:
    case OpTag::kDropout: {
      if (auto* ga = acc(n.parent[0]))
        for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * n.aux[i];
      break;
    }
    case OpTag::kSum: {
      if (auto* ga = acc(n.parent[0]))
        for (double& v : *ga) v += g[0];
      break;
    }
    case OpTag::kMean: {
      if (auto* ga = acc(n.parent[0])) {
        const double s = g[0] / static_cast<double>(ga->size());
        for (double& v : *ga) v += s;
      }
      break;
    }
    case OpTag::kBceLogits: {
      const auto& z = nodes_[n.parent[0]].value;
      if (auto* gz = acc(n.parent[0])) {
        const double inv = 1.0 / static_cast<double>(z.size());
        for (size_t i = 0; i < z.size(); ++i)
          (*gz)[i] += g[0] * inv * (stable_sigmoid(z[i]) - n.aux[i]);
      }
      break;
    }
    case OpTag::kHalfSqNorm: {
      const auto& a = nodes_[n.parent[0]].value;
      if (auto* ga = acc(n.parent[0]))
        for (size_t i = 0; i < a.size(); ++i) (*ga)[i] += g[0] * a[i];
      break;
    }
    case OpTag::kFrobNorm: {
      const auto& a = nodes_[n.parent[0]].value;
      const double norm = n.value[0];
      if (auto* ga = acc(n.parent[0])) {
        if (norm > 0.0)
          for (size_t i = 0; i < a.size(); ++i)
            (*ga)[i] += g[0] * a[i] / norm;
        // subgradient 0 at the origin
      }
      break;
    }
    case OpTag::kPowScalar: {
      const double a = nodes_[n.parent[0]].value[0];
      if (auto* ga = acc(n.parent[0])) {
        const double d = n.c * std::pow(a, n.c - 1.0);
        (*ga)[0] += g[0] * d;
      }
      break;
    }
    case OpTag::kQuadPenalty: {
      const auto& t = nodes_[n.parent[0]].value;
      const int k = static_cast<int>(t.size());
      if (auto* gt = acc(n.parent[0]))
        for (int i = 0; i < k; ++i)
          (*gt)[i] += g[0] * n.aux[i] * (t[i] - n.aux[k + i]);
      break;
    }
  }
}

std::vector<uint8_t> Tape::relu_input_signs() const {
  std::vector<uint8_t> signs;
  for (const Node& n : nodes_) {
    if (n.op != OpTag::kRelu) continue;
    const auto& a = nodes_[n.parent[0]].value;
    for (double v : a) signs.push_back(v >= 0.0 ? 1 : 0);
  }
  return signs;
}

}  // namespace metacd::ad
