#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace dropwiper {

// "DWDN" container:
//   bytes 0..3   magic "DWDN"
//   u32 LE       format version
//   u32 LE       length of the JSON header
//   JSON header  {"kind": ..., "config": {...}, "arrays": [{"name", "size"}, ...]}
//   f32 LE       the arrays' values back to back, in header order
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string kind;
  nlohmann::json config;
  std::vector<std::pair<std::string, std::vector<float>>> arrays;

  void add(std::string name, const std::vector<double>& values);
  /// Throws kBadCheckpoint when the array is missing or has a different size.
  std::vector<double> get(const std::string& name, std::size_t expected_size) const;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace dropwiper
