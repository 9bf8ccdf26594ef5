#pragma once

// One bloom filter per SST, built over user keys.
//
// Serialized filter block:
//   bits       ceil(max(64, n_keys * bits_per_key) / 8) bytes
//              (1 zero byte when n_keys == 0)
//   n_keys     fixed32
//   k          uint8 probe count
//   crc        fixed32 CRC-32C of the preceding bytes

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace luda {

constexpr int kDefaultBitsPerKey = 10;

struct FilterBlock {
  std::string bits;
  uint32_t k = 1;
  uint32_t n_keys = 0;

  friend bool operator==(const FilterBlock&, const FilterBlock&) = default;
};

// Probe count for a bits-per-key setting: round(bpk * ln 2) clamped to
// [1, 30].
uint32_t ProbeCount(int bits_per_key);

// Bytes of the bit array for n keys.
size_t FilterBitBytes(size_t n_keys, int bits_per_key);

// Serialized size of a filter block for n keys.
inline size_t FilterBlockSize(size_t n_keys, int bits_per_key) {
  return FilterBitBytes(n_keys, bits_per_key) + 4 + 1 + 4;
}

FilterBlock BuildFilter(std::span<const std::string_view> user_keys,
                        int bits_per_key = kDefaultBitsPerKey);
FilterBlock BuildFilter(std::span<const std::string> user_keys,
                        int bits_per_key = kDefaultBitsPerKey);

// Sets the k probe bits for `user_key` in `bits` (which must be non-empty).
void FilterInsert(char* bits, size_t bit_bytes, uint32_t k,
                  std::string_view user_key);

bool MayContain(const FilterBlock& filter, std::string_view user_key);

// Serialization writes exactly FilterBlockSize bytes at dst.
void EncodeFilterBlockTo(const FilterBlock& filter, char* dst);
std::string EncodeFilterBlock(const FilterBlock& filter);
// Writes the n_keys/k/crc tail for a bit array already in place at dst.
void FinishFilterBlockAt(char* dst, size_t bit_bytes, uint32_t n_keys,
                         uint32_t k);
// Throws Corruption / FormatError.
FilterBlock DecodeFilterBlock(std::string_view block, uint64_t offset = 0);

}  // namespace luda
