#include "manifest.h"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <iomanip>
#include <sstream>

#include "detfuse/detection_io.h"
#include "detfuse/random.h"

namespace detfuse::cli {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

void RunManifest::add_input(const std::string& path, std::string_view contents) {
  inputs.emplace_back(path, sha256_hex(contents));
}

nlohmann::ordered_json RunManifest::to_json() const {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  std::ostringstream ts;
  ts << std::put_time(&utc, "%Y-%m-%dT%H:%M:%SZ");

  nlohmann::ordered_json j;
  j["command"] = command;
  j["tool_version"] = kToolVersion;
  j["config"] = config;
  nlohmann::ordered_json in = nlohmann::ordered_json::array();
  for (const auto& [path, digest] : inputs) in.push_back({{"path", path}, {"sha256", digest}});
  j["inputs"] = std::move(in);
  j["outputs"] = outputs;
  j["seed"] = seed ? nlohmann::ordered_json(*seed) : nlohmann::ordered_json(nullptr);
  if (seed) j["rng"] = kRngDescription;
  j["timestamp"] = ts.str();
  return j;
}

void RunManifest::write(const std::string& path) const {
  write_file(path, to_json().dump(2) + "\n");
}

}  // namespace detfuse::cli
