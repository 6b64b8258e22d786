#pragma once

#include <cmath>

#include "metacd/param_set.hpp"
#include "metacd/tape.hpp"

namespace metacd {

using BoundLeaves = std::map<std::string, ad::NodeId>;

/// Register every array of a ParamSet as a (trainable) leaf on the tape.
inline BoundLeaves bind_params(ad::Tape& tape, const ParamSet& params,
                               bool trainable = true) {
  BoundLeaves leaves;
  for (const auto& [name, arr] : params.arrays)
    leaves[name] = tape.leaf({arr.rows, arr.cols}, arr.data, trainable, name);
  return leaves;
}

inline ValueMap extract_gradients(const ad::Tape& tape, const BoundLeaves& leaves) {
  ValueMap grads;
  for (const auto& [name, id] : leaves) grads[name] = tape.grad(id);
  return grads;
}

inline void scale_values(ValueMap& values, double c) {
  for (auto& [name, vec] : values)
    for (double& v : vec) v *= c;
}

/// dst += c * src (layouts must match; dst grows to src if empty)
inline void add_scaled(ValueMap& dst, const ValueMap& src, double c) {
  if (dst.empty()) {
    dst = src;
    scale_values(dst, c);
    return;
  }
  for (const auto& [name, vec] : src) {
    auto& d = dst.at(name);
    for (size_t i = 0; i < vec.size(); ++i) d[i] += c * vec[i];
  }
}

/// Plain gradient step: params -= lr * grads.
inline void apply_step(ParamSet& params, const ValueMap& grads, double lr) {
  for (auto& [name, arr] : params.arrays) {
    const auto& g = grads.at(name);
    for (size_t i = 0; i < g.size(); ++i) arr.data[i] -= lr * g[i];
  }
}

class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr = 0.01, double beta1 = 0.9,
                         double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet& params, const ValueMap& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& [name, arr] : params.arrays) {
      const auto& g = grads.at(name);
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(g.size(), 0.0);
        v.assign(g.size(), 0.0);
      }
      for (size_t i = 0; i < g.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        arr.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  ValueMap m_, v_;
};

}  // namespace metacd
