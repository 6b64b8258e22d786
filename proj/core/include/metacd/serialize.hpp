#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "metacd/param_set.hpp"

namespace metacd {

// Binary container for parameter files. Doubles are written as raw
// little-endian IEEE-754, so the binary round trip is bit-exact.

void write_param_block(std::ostream& out, const ParamSet& params);
ParamSet read_param_block(std::istream& in);

void write_value_map(std::ostream& out, const ValueMap& values);
ValueMap read_value_map(std::istream& in);

void save_param_set(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_param_set(const std::filesystem::path& path);

nlohmann::json param_set_to_json(const ParamSet& params);
ParamSet param_set_from_json(const nlohmann::json& j);

/// FNV-1a over a file's bytes; used for run manifests.
uint64_t file_hash(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace metacd
