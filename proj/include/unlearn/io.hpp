#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace unlearn {

// 64-bit FNV-1a, rendered as 16 hex digits by hex_digest().
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex_digest(std::uint64_t value);

// Writes via a sibling temp file and rename, so readers never see partial output.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace unlearn
