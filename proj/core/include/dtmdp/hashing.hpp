#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace dtmdp {

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);
/// Throws Error(IoFailure / MissingArtifact).
std::string sha256_file(const std::filesystem::path& path);

/// Seed for a pipeline stage: the first 8 bytes (big-endian) of
/// SHA-256("<master_seed>:<stage>").
std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view stage);

}  // namespace dtmdp
