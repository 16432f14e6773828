#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "redct/tensor.hpp"

namespace redct {

// RTF1 raw tensor format, all little-endian:
//   "RTENSOR1"  8-byte magic
//   u32         rank
//   u32 x rank  extents
//   f64 x n     row-major values
inline constexpr char kRtfMagic[8] = {'R', 'T', 'E', 'N', 'S', 'O', 'R', '1'};

void append_rtf(std::vector<std::uint8_t>& out, const Tensor& t);
// Parses one tensor starting at `offset`, advancing it. Throws IoError on
// truncation and VersionMismatch on a bad magic.
Tensor parse_rtf(const std::vector<std::uint8_t>& bytes, std::size_t& offset);

void write_rtf(const std::filesystem::path& path, const Tensor& t);
Tensor read_rtf(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// Little-endian helpers shared by the binary formats.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
std::uint32_t get_u32(const std::vector<std::uint8_t>& bytes, std::size_t& offset);
std::uint64_t get_u64(const std::vector<std::uint8_t>& bytes, std::size_t& offset);

// FNV-1a, 64-bit.
std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace redct
