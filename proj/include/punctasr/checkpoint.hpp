#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "punctasr/types.hpp"

namespace punctasr {

// Versioned binary container used for model checkpoints and trainer state:
//   "PASRCKPT" | u32 version | u32 n | meta JSON (n bytes) | u32 count |
//   count x (u32 name_len | name | u32 rows | u32 cols | rows*cols f64)
// All integers and floats little-endian.
struct TensorRecord {
  std::string name;
  Matrix value;
};

struct Container {
  nlohmann::json meta;
  std::vector<TensorRecord> tensors;
};

inline constexpr std::uint32_t kContainerVersion = 1;

void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path);

// Copies tensors into targets by position, checking names and shapes.
void assign_tensors(const std::vector<TensorRecord>& records, std::size_t offset,
                    const std::vector<std::pair<std::string, Matrix*>>& targets);

// 64-bit FNV-1a over raw bytes; used for manifest and checkpoint hashes.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_file(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

}  // namespace punctasr
