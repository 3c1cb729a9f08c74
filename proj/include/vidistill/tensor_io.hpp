#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "vidistill/tensor.hpp"

namespace vidistill {

/// Malformed tensor container. `offset` is the byte position where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

inline constexpr char kTensorMagic[4] = {'V', 'C', 'T', '1'};
inline constexpr std::uint16_t kTensorFormatVersion = 1;

// A record is: magic, u16 version, u8 rank, rank x u32 dims, then
// little-endian float32 payload in row-major order. A file holds one or
// more records back to back.
void append_record(std::vector<std::uint8_t>& out, const Tensor& t);
std::vector<std::uint8_t> encode_tensors(std::span<const Tensor> tensors);

/// Parses one record starting at `offset` and advances it past the record.
Tensor decode_record(std::span<const std::uint8_t> bytes, std::size_t& offset);
/// Parses records until the buffer is exhausted.
std::vector<Tensor> decode_tensors(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
/// Requires exactly one record in the file.
Tensor load_tensor(const std::filesystem::path& path);
void save_tensors(const std::filesystem::path& path, std::span<const Tensor> tensors);
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

}  // namespace vidistill
