#pragma once

#include <cstdint>
#include <string>

namespace dannet {

/// FNV-1a over a byte buffer.
uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL);

uint64_t hash_file(const std::string& path);

/// Order-independent directory fingerprint: files are visited in sorted
/// name order, hashing relative name and contents.
uint64_t hash_dir(const std::string& dir);

std::string hex64(uint64_t v);

}  // namespace dannet
