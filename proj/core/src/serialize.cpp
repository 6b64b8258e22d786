#include "metacd/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace metacd {

namespace {

constexpr uint32_t kParamMagic = 0x4D435053;  // "MCPS"
constexpr uint32_t kParamVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw RuntimeError("parameter file truncated");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const uint64_t len = read_pod<uint64_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw RuntimeError("parameter file truncated");
  return s;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
  write_pod<uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in) {
  const uint64_t len = read_pod<uint64_t>(in);
  std::vector<double> v(len);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(len * sizeof(double)));
  if (!in) throw RuntimeError("parameter file truncated");
  return v;
}

}  // namespace

void write_param_block(std::ostream& out, const ParamSet& params) {
  write_pod(out, kParamMagic);
  write_pod(out, kParamVersion);
  write_string(out, params.descriptor.dump());
  write_pod<uint64_t>(out, params.arrays.size());
  for (const auto& [name, arr] : params.arrays) {
    write_string(out, name);
    write_pod<uint64_t>(out, static_cast<uint64_t>(arr.rows));
    write_pod<uint64_t>(out, static_cast<uint64_t>(arr.cols));
    write_doubles(out, arr.data);
  }
}

ParamSet read_param_block(std::istream& in) {
  if (read_pod<uint32_t>(in) != kParamMagic)
    throw RuntimeError("not a parameter file (bad magic)");
  const uint32_t version = read_pod<uint32_t>(in);
  if (version != kParamVersion)
    throw RuntimeError("unsupported parameter file version " +
                       std::to_string(version));
  ParamSet params;
  params.descriptor = nlohmann::json::parse(read_string(in));
  const uint64_t count = read_pod<uint64_t>(in);
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = read_string(in);
    const int rows = static_cast<int>(read_pod<uint64_t>(in));
    const int cols = static_cast<int>(read_pod<uint64_t>(in));
    params.arrays.emplace(name, Array(rows, cols, read_doubles(in)));
  }
  return params;
}

void write_value_map(std::ostream& out, const ValueMap& values) {
  write_pod<uint64_t>(out, values.size());
  for (const auto& [name, vec] : values) {
    write_string(out, name);
    write_doubles(out, vec);
  }
}

ValueMap read_value_map(std::istream& in) {
  ValueMap values;
  const uint64_t count = read_pod<uint64_t>(in);
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = read_string(in);
    values.emplace(name, read_doubles(in));
  }
  return values;
}

void save_param_set(const std::filesystem::path& path, const ParamSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
  write_param_block(out, params);
  if (!out) throw RuntimeError("write failed: " + path.string());
}

ParamSet load_param_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open " + path.string());
  return read_param_block(in);
}

nlohmann::json param_set_to_json(const ParamSet& params) {
  nlohmann::json j;
  j["descriptor"] = params.descriptor;
  nlohmann::json arrays = nlohmann::json::object();
  for (const auto& [name, arr] : params.arrays) {
    arrays[name] = {{"rows", arr.rows}, {"cols", arr.cols}, {"data", arr.data}};
  }
  j["arrays"] = arrays;
  return j;
}

ParamSet param_set_from_json(const nlohmann::json& j) {
  ParamSet params;
  params.descriptor = j.at("descriptor");
  for (const auto& [name, a] : j.at("arrays").items()) {
    params.arrays.emplace(
        name, Array(a.at("rows").get<int>(), a.at("cols").get<int>(),
                    a.at("data").get<std::vector<double>>()));
  }
  return params;
}

uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open " + path.string());
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
    if (!in) break;
  }
  return h;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw RuntimeError("write failed: " + path.string());
}

}  // namespace metacd
