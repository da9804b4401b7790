#pragma once
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace shapevoc {

// Gaussian parameters are stored as base64 of their little-endian f64 bytes so
// that save/load round-trips bit-exactly regardless of decimal formatting.
std::string base64_encode(const uint8_t* data, size_t len);
std::vector<uint8_t> base64_decode(const std::string& text);

std::string encode_f64(const std::vector<double>& v);
std::vector<double> decode_f64(const std::string& text);

// FNV-1a, used for content-addressing the feature cache.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string read_file_bytes(const std::string& path);
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace shapevoc
