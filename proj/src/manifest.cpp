#include "deesn/manifest.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>

#include "deesn/errors.hpp"
#include "deesn/stfield.hpp"

namespace deesn {

std::string config_hash(const nlohmann::json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json make_manifest(const nlohmann::json& config) {
  nlohmann::json m;
  m["software"] = "deesn";
  m["version"] = kVersion;
  m["config_hash"] = config_hash(config);
  m["config"] = config;
  return m;
}

void save_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  write_file_atomically(path, doc.dump(2) + "\n");
}

nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace deesn
