#include "metacd/ppm.hpp"

#include <cmath>
#include <fstream>

#include "metacd/serialize.hpp"

namespace metacd {

ValueMap compute_importance(const ParamSet& params, const TaskUnit& unit,
                            int sample_cap) {
  const int total = static_cast<int>(unit.records.size());
  const int n = std::min(sample_cap, total);
  if (n <= 0) throw ConfigError("compute_importance: no records to sample");

  ValueMap acc;
  for (const auto& [name, arr] : params.arrays)
    acc[name].assign(arr.data.size(), 0.0);

  for (int i = 0; i < n; ++i) {
    const int idx = static_cast<int>(static_cast<int64_t>(i) * total / n);
    const ResponseRecord& record = unit.records[idx];

    ad::Tape tape;
    const BoundLeaves leaves = bind_params(tape, params, /*trainable=*/true);
    const KbGraph graph = kb_graph(tape, leaves, arch_of(params), {&record}, unit.qmatrix,
                                   Mode::kEval, 0, /*with_loss=*/false);
    const ad::NodeId out = has_classifier(params) ? graph.logits : graph.features;
    const ad::NodeId r = tape.half_sq_norm(out);
    tape.backward(r);

    for (const auto& [name, id] : leaves) {
      const auto& g = tape.grad(id);
      auto& a = acc[name];
      for (size_t k = 0; k < g.size(); ++k) a[k] += std::abs(g[k]);
    }
  }

  for (auto& [name, vec] : acc)
    for (double& v : vec) v /= static_cast<double>(n);
  return acc;
}

namespace {

void check_layout(const ParamSet& current, const ValueMap& phi,
                  const ParamSet& anchor) {
  const std::string phi_mismatch = first_layout_mismatch(current, phi);
  if (!phi_mismatch.empty())
    throw RuntimeError("ppm_penalty: phi layout mismatch at array " + phi_mismatch);
  if (!current.congruent_with(anchor))
    throw RuntimeError("ppm_penalty: anchor layout mismatch with current parameters");
}

void accumulate_penalty(const ParamSet& current, const ValueMap& phi,
                        const ParamSet& anchor, PpmTerm& term) {
  check_layout(current, phi, anchor);
  for (const auto& [name, arr] : current.arrays) {
    const auto& p = phi.at(name);
    const auto& a = anchor.at(name).data;
    auto& g = term.grad[name];
    if (g.empty()) g.assign(arr.data.size(), 0.0);
    for (size_t k = 0; k < arr.data.size(); ++k) {
      const double d = arr.data[k] - a[k];
      term.loss += 0.5 * p[k] * d * d;
      g[k] += p[k] * d;
    }
  }
}

}  // namespace

PpmTerm ppm_penalty(const ParamSet& current, const ImportanceMap& importance) {
  PpmTerm term;
  if (!importance.has_anchor()) {
    for (const auto& [name, arr] : current.arrays)
      term.grad[name].assign(arr.data.size(), 0.0);
    return term;
  }
  if (importance.multi_anchor) {
    for (const auto& entry : importance.history)
      accumulate_penalty(current, entry.phi, entry.anchor, term);
  } else {
    accumulate_penalty(current, importance.phi, importance.anchor, term);
  }
  return term;
}

ad::NodeId ppm_penalty_node(ad::Tape& tape, const BoundLeaves& leaves,
                            const ImportanceMap& importance, double weight) {
  if (!importance.has_anchor()) return -1;

  auto add_entry = [&](const ValueMap& phi, const ParamSet& anchor,
                       ad::NodeId total) {
    for (const auto& [name, id] : leaves) {
      const auto pit = phi.find(name);
      const auto ait = anchor.arrays.find(name);
      if (pit == phi.end() || ait == anchor.arrays.end())
        throw RuntimeError("ppm_penalty: phi layout mismatch at array " + name);
      const ad::NodeId node = tape.quad_penalty(id, pit->second, ait->second.data);
      total = total < 0 ? node : tape.add(total, node);
    }
    return total;
  };

  ad::NodeId total = -1;
  if (importance.multi_anchor) {
    for (const auto& entry : importance.history)
      total = add_entry(entry.phi, entry.anchor, total);
  } else {
    total = add_entry(importance.phi, importance.anchor, total);
  }
  return weight == 1.0 ? total : tape.scale(total, weight);
}

void update_anchor(ImportanceMap& importance, const ParamSet& params_after_task,
                   const TaskUnit& unit, int sample_cap) {
  ValueMap phi_unit = compute_importance(params_after_task, unit, sample_cap);

  if (importance.multi_anchor) {
    importance.history.push_back({phi_unit, params_after_task.snapshot()});
  }
  if (importance.tasks_seen == 0) {
    importance.phi = std::move(phi_unit);
  } else {
    const double seen = static_cast<double>(importance.tasks_seen);
    for (auto& [name, vec] : importance.phi) {
      const auto& u = phi_unit.at(name);
      for (size_t k = 0; k < vec.size(); ++k)
        vec[k] = (seen * vec[k] + u[k]) / (seen + 1.0);
    }
  }
  importance.anchor = params_after_task.snapshot();
  ++importance.tasks_seen;
}

namespace {
constexpr uint32_t kImportanceMagic = 0x4D43494D;  // "MCIM"
constexpr uint32_t kImportanceVersion = 1;
}  // namespace

void save_importance(const std::filesystem::path& path, const ImportanceMap& imp) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(&kImportanceMagic), 4);
  out.write(reinterpret_cast<const char*>(&kImportanceVersion), 4);
  const uint64_t tasks = static_cast<uint64_t>(imp.tasks_seen);
  out.write(reinterpret_cast<const char*>(&tasks), 8);
  const uint8_t multi = imp.multi_anchor ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&multi), 1);
  write_value_map(out, imp.phi);
  write_param_block(out, imp.anchor);
  const uint64_t hist = imp.history.size();
  out.write(reinterpret_cast<const char*>(&hist), 8);
  for (const auto& entry : imp.history) {
    write_value_map(out, entry.phi);
    write_param_block(out, entry.anchor);
  }
  if (!out) throw RuntimeError("write failed: " + path.string());
}

ImportanceMap load_importance(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open " + path.string());
  uint32_t magic = 0, version = 0;
  in.read(reinterpret_cast<char*>(&magic), 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  if (!in || magic != kImportanceMagic)
    throw RuntimeError(path.string() + ": not an importance file");
  if (version != kImportanceVersion)
    throw RuntimeError(path.string() + ": unsupported importance file version");
  ImportanceMap imp;
  uint64_t tasks = 0;
  in.read(reinterpret_cast<char*>(&tasks), 8);
  imp.tasks_seen = static_cast<int>(tasks);
  uint8_t multi = 0;
  in.read(reinterpret_cast<char*>(&multi), 1);
  imp.multi_anchor = multi != 0;
  imp.phi = read_value_map(in);
  imp.anchor = read_param_block(in);
  uint64_t hist = 0;
  in.read(reinterpret_cast<char*>(&hist), 8);
  for (uint64_t i = 0; i < hist; ++i) {
    ImportanceMap::TaskAnchor entry;
    entry.phi = read_value_map(in);
    entry.anchor = read_param_block(in);
    imp.history.push_back(std::move(entry));
  }
  return imp;
}

}  // namespace metacd
