#pragma once

// Versioned binary bundle: JSON header plus named float tensors, sealed with
// a SHA-256 digest of everything before it.
//
//   "LATSEGCK" | u32 version | u64 header bytes | header JSON
//   | u32 tensor count | { u32 name bytes | name | i32 n,c,h,w | f32 data }*
//   | 32-byte SHA-256

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "latseg/tensor.hpp"

namespace latseg::ckpt {

inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;
};

// Writes to a temporary sibling and renames, so readers never see a partial file.
void save(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load(const std::filesystem::path& path);

std::string sha256_hex(const std::string& bytes);

// Prefixes every key, e.g. "model." or "optim.".
std::map<std::string, Tensor> with_prefix(const std::map<std::string, Tensor>& tensors, const std::string& prefix);
std::map<std::string, Tensor> strip_prefix(const std::map<std::string, Tensor>& tensors, const std::string& prefix);

}  // namespace latseg::ckpt
