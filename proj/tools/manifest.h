#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace detfuse::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";

// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

// Provenance record written next to every command output. Only the
// timestamp depends on when the command ran.
struct RunManifest {
  std::string command;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, std::string>> inputs;  // (path, sha256)
  std::vector<std::string> outputs;
  std::optional<std::uint64_t> seed;

  void add_input(const std::string& path, std::string_view contents);
  nlohmann::ordered_json to_json() const;
  void write(const std::string& path) const;
};

}  // namespace detfuse::cli
