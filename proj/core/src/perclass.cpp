#include "metacd/perclass.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "metacd/rng.hpp"
#include "metacd/serialize.hpp"

namespace metacd {

namespace {

constexpr const char* kKind = "metacd-head";
constexpr int kLayers = 4;

std::string weight_name(int layer) { return "head.W" + std::to_string(layer + 1); }
std::string bias_name(int layer) { return "head.b" + std::to_string(layer + 1); }

Array xavier(int rows, int cols, Rng& rng) {
  Array a(rows, cols);
  const double bound = std::sqrt(6.0 / (rows + cols));
  for (double& v : a.data) v = rng.uniform(-bound, bound);
  return a;
}

}  // namespace

void HeadLossConfig::validate() const {
  // 0 switches the term off; the searched grid starts at 0.1
  if (eta < 0.0 || eta > 1.0) throw ConfigError("heads: eta must be in [0, 1]");
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("heads: lambda must be in [0, 1]");
  if (mu != 2 && mu != 3 && mu != 4) throw ConfigError("heads: mu must be 2, 3 or 4");
}

HeadParams init_heads(int feature_dim, uint64_t seed, const std::vector<int>& hidden) {
  if (feature_dim < 1) throw ConfigError("init_heads: feature_dim must be >= 1");
  if (hidden.size() != kLayers - 1)
    throw ConfigError("init_heads: heads are 4-layer networks, need 3 hidden sizes");

  Rng rng(derive_seed(seed, 0x6EAD));
  ParamSet head;
  int in_dim = feature_dim;
  for (int layer = 0; layer < kLayers; ++layer) {
    const int out_dim = layer < kLayers - 1 ? hidden[layer] : 1;
    head.arrays.emplace(weight_name(layer), xavier(out_dim, in_dim, rng));
    head.arrays.emplace(bias_name(layer), Array(out_dim, 1));
    in_dim = out_dim;
  }
  head.descriptor = {{"kind", kKind},
                     {"version", 1},
                     {"feature_dim", feature_dim},
                     {"hidden", hidden}};

  HeadParams heads;
  heads.f0 = head;
  heads.f1 = head.snapshot();  // f1 starts as an exact copy of f0
  return heads;
}

namespace {

struct HeadStack {
  ad::NodeId scores = -1;                 // (1, n)
  std::vector<ad::NodeId> preacts;        // per hidden layer, (h_k, n)
};

HeadStack head_stack(ad::Tape& tape, const BoundLeaves& leaves, ad::NodeId x) {
  HeadStack stack;
  ad::NodeId h = x;
  for (int layer = 0; layer < kLayers; ++layer) {
    h = tape.affine(leaves.at(weight_name(layer)), h, leaves.at(bias_name(layer)));
    if (layer < kLayers - 1) {
      stack.preacts.push_back(h);
      h = tape.relu(h);
    }
  }
  stack.scores = h;
  return stack;
}

ad::NodeId head_forward_node(ad::Tape& tape, const BoundLeaves& leaves,
                             ad::NodeId x) {
  return head_stack(tape, leaves, x).scores;
}

ad::NodeId features_leaf(ad::Tape& tape, const std::vector<std::vector<double>>& batch,
                         int dim, const SeparationMask* mask) {
  const int n = static_cast<int>(batch.size());
  std::vector<double> flat(static_cast<size_t>(dim) * n);
  for (int j = 0; j < n; ++j) {
    if (static_cast<int>(batch[j].size()) != dim)
      throw ConfigError("heads: feature vector dimension mismatch");
    for (int i = 0; i < dim; ++i) flat[static_cast<size_t>(i) * n + j] = batch[j][i];
  }
  ad::NodeId x = tape.leaf({dim, n}, std::move(flat), /*trainable=*/false);
  if (mask) {
    std::vector<double> tiled(static_cast<size_t>(dim) * n);
    const auto m = mask->as_mask();
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < n; ++j) tiled[static_cast<size_t>(i) * n + j] = m[i];
    x = tape.mask_mul(x, std::move(tiled));
  }
  return x;
}

}  // namespace

double head_forward(const ParamSet& head, const std::vector<double>& x,
                    const SeparationMask* mask) {
  ad::Tape tape;
  const BoundLeaves leaves = bind_params(tape, head, /*trainable=*/false);
  const int dim = head.descriptor.at("feature_dim").get<int>();
  const ad::NodeId xn = features_leaf(tape, {x}, dim, mask);
  return tape.value(head_forward_node(tape, leaves, xn))[0];
}

ad::NodeId hreg_node(ad::Tape& tape, const BoundLeaves& leaves, int mu) {
  ad::NodeId prod = leaves.at(weight_name(0));
  for (int layer = 1; layer < kLayers; ++layer)
    prod = tape.matmul(leaves.at(weight_name(layer)), prod);
  return tape.pow_scalar(tape.frobenius_norm(prod), static_cast<double>(mu));
}

double hreg(const ParamSet& head, int mu) {
  ad::Tape tape;
  const BoundLeaves leaves = bind_params(tape, head, /*trainable=*/false);
  return tape.scalar(hreg_node(tape, leaves, mu));
}

// Mean over the batch of ||d f / d x||_2^mu with the ReLU activation pattern
// of each sample held fixed: the exact per-sample Jacobian, not the maskless
// weight-product surrogate. The surrogate is gameable (path cancellation can
// send it to zero while the function grows), so the loss uses this form.
ad::NodeId hreg_batch_node(ad::Tape& tape, const BoundLeaves& leaves,
                           const HeadStack& stack, int samples, int mu) {
  ad::NodeId total = -1;
  for (int j = 0; j < samples; ++j) {
    ad::NodeId row = leaves.at(weight_name(kLayers - 1));  // (1, h3)
    for (int layer = kLayers - 2; layer >= 0; --layer) {
      const ad::NodeId pre = stack.preacts[layer];
      const auto& pre_value = tape.value(pre);
      const int rows = tape.shape(pre).rows;
      const int cols = tape.shape(pre).cols;
      std::vector<double> mask(rows);
      for (int i = 0; i < rows; ++i)
        mask[i] = pre_value[static_cast<size_t>(i) * cols + j] > 0.0 ? 1.0 : 0.0;
      row = tape.matmul(tape.mask_mul(row, mask), leaves.at(weight_name(layer)));
    }
    const ad::NodeId norm_mu =
        tape.pow_scalar(tape.frobenius_norm(row), static_cast<double>(mu));
    total = total < 0 ? norm_mu : tape.add(total, norm_mu);
  }
  return tape.scale(total, 1.0 / samples);
}

ad::NodeId head_loss_node(ad::Tape& tape, const BoundLeaves& own_leaves,
                          const ParamSet* other_params, ad::NodeId x_node,
                          const HeadLossConfig& cfg) {
  cfg.validate();
  const HeadStack stack = head_stack(tape, own_leaves, x_node);
  const ad::NodeId scores = stack.scores;
  const int samples = tape.shape(x_node).cols;
  const ad::NodeId nll = tape.mean(tape.softplus(tape.scale(scores, -1.0)));
  ad::NodeId loss =
      tape.add(nll, tape.scale(hreg_batch_node(tape, own_leaves, stack, samples, cfg.mu),
                               cfg.eta));
  if (!other_params) return loss;
  // lambda * ||theta_own - theta_other||^2, other side constant
  ad::NodeId tether = -1;
  for (const auto& [name, id] : own_leaves) {
    const auto& anchor = other_params->at(name).data;
    const std::vector<double> coeff(anchor.size(), 2.0 * cfg.lambda);
    const ad::NodeId q = tape.quad_penalty(id, coeff, anchor);
    tether = tether < 0 ? q : tape.add(tether, q);
  }
  return tape.add(loss, tether);
}

double head_loss(int head_index, const HeadParams& heads,
                 const std::vector<std::vector<double>>& class_batch,
                 const HeadLossConfig& cfg, const SeparationMask* mask) {
  if (class_batch.empty())
    throw ConfigError("head_loss: empty class batch, resample so the class is represented");
  const ParamSet& own = head_index == 0 ? heads.f0 : heads.f1;
  const ParamSet& other = head_index == 0 ? heads.f1 : heads.f0;
  ad::Tape tape;
  const BoundLeaves leaves = bind_params(tape, own, /*trainable=*/false);
  const int dim = own.descriptor.at("feature_dim").get<int>();
  const ad::NodeId x = features_leaf(tape, class_batch, dim, mask);
  return tape.scalar(head_loss_node(tape, leaves, &other, x, cfg));
}

HeadParams train_heads(const FeatureDataset& features, const HeadLossConfig& cfg,
                       int steps, double adam_lr, uint64_t seed,
                       const SeparationMask* mask) {
  cfg.validate();
  if (features.count(0) == 0 || features.count(1) == 0)
    throw ConfigError("train_heads: both classes must be present to build two heads");

  std::vector<std::vector<double>> class_batch[2];
  for (size_t i = 0; i < features.x.size(); ++i)
    class_batch[features.y[i]].push_back(features.x[i]);

  // Each head trains on its own class starting from the shared construction
  // copy and tethered to that copy (the other head's initialization). The
  // tether is what bounds the score level, so each head ends as a bump over
  // its class region on top of the common baseline, and the argmax compares
  // like against like. Tethering to the other head's live parameters instead
  // leaks each head's class structure into the other and erases the margin.
  HeadParams heads = init_heads(features.dim, seed);
  const ParamSet shared_init = heads.f0.snapshot();
  for (int i = 0; i < 2; ++i) {
    ParamSet& own = i == 0 ? heads.f0 : heads.f1;
    AdamOptimizer adam(adam_lr);
    for (int t = 0; t < steps; ++t) {
      ad::Tape tape;
      const BoundLeaves leaves = bind_params(tape, own);
      const ad::NodeId x = features_leaf(tape, class_batch[i], features.dim, mask);
      const ad::NodeId loss = head_loss_node(tape, leaves, &shared_init, x, cfg);
      tape.zero_grad();
      tape.backward(loss);
      adam.step(own, extract_gradients(tape, leaves));
    }
  }
  return heads;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ConfigError("kl_divergence: histogram sizes differ");
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0 || q[i] <= 0.0) continue;  // 0*log(0/.) and ./0 conventions
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

SeparationMask kl_separation(const FeatureDataset& features, double kappa0,
                             double kappa1, int bins, double keep_threshold) {
  if (bins < 2) throw ConfigError("kl_separation: bins must be >= 2");
  if (keep_threshold <= 0.0 || keep_threshold > 1.0)
    throw ConfigError("kl_separation: keep_threshold must be in (0, 1]");
  const int n0 = features.count(0), n1 = features.count(1);
  if (n0 == 0 || n1 == 0)
    throw ConfigError("kl_separation: both classes must be present");
  const int n = static_cast<int>(features.x.size());

  SeparationMask mask;
  mask.dims = features.dim;
  if (kappa0 < 0.0 || kappa1 < 0.0) {
    mask.kappa0 = static_cast<double>(n0) / n;
    mask.kappa1 = static_cast<double>(n1) / n;
  } else {
    mask.kappa0 = kappa0;
    mask.kappa1 = kappa1;
  }

  mask.scores.assign(features.dim, 0.0);
  for (int d = 0; d < features.dim; ++d) {
    double lo = features.x[0][d], hi = features.x[0][d];
    for (const auto& row : features.x) {
      lo = std::min(lo, row[d]);
      hi = std::max(hi, row[d]);
    }
    std::vector<double> h0(bins, 0.0), h1(bins, 0.0), pooled(bins, 0.0);
    for (int i = 0; i < n; ++i) {
      int b = 0;
      if (hi > lo)
        b = std::min(bins - 1, static_cast<int>((features.x[i][d] - lo) / (hi - lo) * bins));
      (features.y[i] == 0 ? h0 : h1)[b] += 1.0;
      pooled[b] += 1.0;
    }
    for (int b = 0; b < bins; ++b) {
      h0[b] /= n0;
      h1[b] /= n1;
      pooled[b] /= n;
    }
    mask.scores[d] =
        mask.kappa0 * kl_divergence(h0, pooled) + mask.kappa1 * kl_divergence(h1, pooled);
  }

  const int kept_count =
      std::max(1, static_cast<int>(std::lround(keep_threshold * features.dim)));
  std::vector<int> order(features.dim);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return mask.scores[a] < mask.scores[b];
  });
  mask.kept.assign(order.begin() + (features.dim - kept_count), order.end());
  std::sort(mask.kept.begin(), mask.kept.end());
  return mask;
}

int diagnose(const HeadParams& heads, const std::vector<double>& x,
             const SeparationMask* mask) {
  const double s0 = head_forward(heads.f0, x, mask);
  const double s1 = head_forward(heads.f1, x, mask);
  return s1 > s0 ? 1 : 0;
}

namespace {
constexpr uint32_t kHeadsMagic = 0x4D434844;  // "MCHD"
constexpr uint32_t kHeadsVersion = 1;
}  // namespace

void save_heads(const std::filesystem::path& path, const HeadParams& heads) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(&kHeadsMagic), 4);
  out.write(reinterpret_cast<const char*>(&kHeadsVersion), 4);
  write_param_block(out, heads.f0);
  write_param_block(out, heads.f1);
  if (!out) throw RuntimeError("write failed: " + path.string());
}

HeadParams load_heads(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open " + path.string());
  uint32_t magic = 0, version = 0;
  in.read(reinterpret_cast<char*>(&magic), 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  if (!in || magic != kHeadsMagic) throw RuntimeError(path.string() + ": not a heads file");
  if (version != kHeadsVersion)
    throw RuntimeError(path.string() + ": unsupported heads file version");
  HeadParams heads;
  heads.f0 = read_param_block(in);
  heads.f1 = read_param_block(in);
  return heads;
}

nlohmann::json mask_to_json(const SeparationMask& mask) {
  return {{"dims", mask.dims},
          {"kept", mask.kept},
          {"scores", mask.scores},
          {"kappa0", mask.kappa0},
          {"kappa1", mask.kappa1}};
}

SeparationMask mask_from_json(const nlohmann::json& j) {
  SeparationMask mask;
  mask.dims = j.at("dims").get<int>();
  mask.kept = j.at("kept").get<std::vector<int>>();
  mask.scores = j.at("scores").get<std::vector<double>>();
  mask.kappa0 = j.at("kappa0").get<double>();
  mask.kappa1 = j.at("kappa1").get<double>();
  return mask;
}

}  // namespace metacd
