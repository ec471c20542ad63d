#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "covnz/error.hpp"

namespace covnz {

std::string sha256_hex(std::span<const std::uint8_t> bytes);

bool looks_gzip(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> bytes);

// Downloads url, gunzips gzip payloads, verifies the SHA-256 of the content
// to be stored, and writes dest_path atomically (tmp + rename). Transport
// failures are retried up to 3 times with exponential backoff. A digest
// mismatch discards the download and raises ChecksumError. expected_sha256
// always refers to the stored (decompressed) content, so the same digest
// also validates an existing cache file.
void fetch_dataset(const std::string& url, const std::string& expected_sha256,
                   const std::string& dest_path);

// True when path exists and its content hashes to expected_sha256.
bool file_matches_sha256(const std::string& path, const std::string& expected_sha256);

}  // namespace covnz
