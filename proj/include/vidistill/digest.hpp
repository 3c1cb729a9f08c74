#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "vidistill/tensor.hpp"

namespace vidistill {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);
/// Digest of the container encoding of `tensors`, so it matches the saved file.
std::string tensors_digest(std::span<const Tensor> tensors);

}  // namespace vidistill
