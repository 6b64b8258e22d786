#include "metacd/param_set.hpp"

namespace metacd {

std::string first_layout_mismatch(const ParamSet& params, const ValueMap& values) {
  for (const auto& [name, arr] : params.arrays) {
    auto it = values.find(name);
    if (it == values.end()) return name;
    if (static_cast<int>(it->second.size()) != arr.size()) return name;
  }
  for (const auto& [name, vec] : values) {
    (void)vec;
    if (!params.has(name)) return name;
  }
  return {};
}

}  // namespace metacd
