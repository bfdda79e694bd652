#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "topoens/error.hpp"

namespace topoens {

// nlohmann::json keeps object keys sorted and prints doubles in
// shortest round-trip form, so equal documents serialize to equal bytes.
inline void WriteJsonFile(const nlohmann::json& doc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIoFailure, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::kIoFailure, "short write to " + path.string());
}

inline nlohmann::json ReadJsonFile(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::kMissingFile, path.string());
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIoFailure, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kInvariantViolation, path.string() + ": " + e.what());
  }
}

}  // namespace topoens
