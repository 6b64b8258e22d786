#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "metacd/array.hpp"

namespace metacd {

/// Named collection of all trainable arrays of one model, plus a descriptor
/// (architecture, entity counts, version tag). Plain value semantics: copying
/// a ParamSet yields a fully independent snapshot.
struct ParamSet {
  nlohmann::json descriptor = nlohmann::json::object();
  std::map<std::string, Array> arrays;

  ParamSet snapshot() const { return *this; }

  bool congruent_with(const ParamSet& other) const {
    if (arrays.size() != other.arrays.size()) return false;
    for (auto a = arrays.begin(), b = other.arrays.begin(); a != arrays.end();
         ++a, ++b) {
      if (a->first != b->first || !a->second.same_shape(b->second)) return false;
    }
    return true;
  }

  Array& at(const std::string& name) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw Error("ParamSet: no array named " + name);
    return it->second;
  }
  const Array& at(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw Error("ParamSet: no array named " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return arrays.count(name) > 0; }

  /// Total number of scalar parameters.
  int scalar_count() const {
    int n = 0;
    for (const auto& [name, arr] : arrays) n += arr.size();
    return n;
  }
};

/// Per-array gradient (or importance) buffers laid out like a ParamSet.
using ValueMap = std::map<std::string, std::vector<double>>;

/// name of the first array whose shape or presence disagrees, empty if none
std::string first_layout_mismatch(const ParamSet& params, const ValueMap& values);

}  // namespace metacd
