#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace owl {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string hex64(std::uint64_t v);
std::string bytes_fingerprint(std::string_view bytes);
std::string file_fingerprint(const std::filesystem::path& path);

}  // namespace owl
