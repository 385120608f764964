#pragma once

// Binary tensor container shared by model checkpoints and prepared domain
// files. Layout, all integers little-endian:
//
//   "ZSDG1"                          5 bytes
//   u32 tensor count
//   per tensor:
//     u16 name length, name bytes (UTF-8)
//     u8 rank, rank x u32 dims
//     prod(dims) x f64 values

#include "zsdg/models.hpp"
#include "zsdg/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace zsdg {

using NamedTensor = std::pair<std::string, Tensor>;

std::vector<std::uint8_t> encode_tensors(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes);

/// Writes through a temporary file and renames, so readers never observe a
/// partial file.
void write_tensor_file(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path);

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

/// Replaces `path` with `bytes` via a sibling temporary file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace zsdg
