// Small deterministic hashes: FNV-1a for content manifests, CRC-32 for
// checkpoint trailers. Both are stable across platforms and runs.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace attrdial {

uint64_t fnv1a64(std::string_view bytes);
uint64_t fnv1a64(std::string_view bytes, uint64_t seed);

// CRC-32 (IEEE 802.3, reflected, polynomial 0xEDB88320).
uint32_t crc32(std::string_view bytes);

std::string hex_u64(uint64_t v);
std::string hex_u32(uint32_t v);

// FNV-1a of a whole file's bytes, rendered as 16 hex digits.
std::string hash_file_hex(const std::string& path);

}  // namespace attrdial
