#include "luda/bloom.h"

#include <algorithm>
#include <cmath>

#include "luda/coding.h"
#include "luda/crc32c.h"
#include "luda/errors.h"
#include "luda/hash.h"

namespace luda {

uint32_t ProbeCount(int bits_per_key) {
  long k = std::lround(bits_per_key * std::log(2.0));
  return static_cast<uint32_t>(std::clamp(k, 1L, 30L));
}

size_t FilterBitBytes(size_t n_keys, int bits_per_key) {
  if (n_keys == 0) return 1;
  size_t bits = std::max<size_t>(64, n_keys * static_cast<size_t>(bits_per_key));
  return (bits + 7) / 8;
}

void FilterInsert(char* bits, size_t bit_bytes, uint32_t k,
                  std::string_view user_key) {
  const uint64_t nbits = bit_bytes * 8;
  uint64_t h = Hash64(user_key);
  const uint64_t delta = (h >> 32) | 1;
  uint64_t pos = h & 0xffffffffu;
  for (uint32_t i = 0; i < k; ++i) {
    uint64_t bit = pos % nbits;
    bits[bit / 8] = static_cast<char>(bits[bit / 8] | (1 << (bit % 8)));
    pos += delta;
  }
}

namespace {

template <typename Key>
FilterBlock BuildImpl(std::span<const Key> keys, int bits_per_key) {
  if (bits_per_key < 1) throw InvalidArgument("bits_per_key must be >= 1");
  FilterBlock f;
  f.n_keys = static_cast<uint32_t>(keys.size());
  f.bits.assign(FilterBitBytes(keys.size(), bits_per_key), '\0');
  if (keys.empty()) {
    f.k = 1;
    return f;
  }
  f.k = ProbeCount(bits_per_key);
  for (const auto& key : keys) {
    FilterInsert(f.bits.data(), f.bits.size(), f.k, key);
  }
  return f;
}

}  // namespace

FilterBlock BuildFilter(std::span<const std::string_view> user_keys,
                        int bits_per_key) {
  return BuildImpl(user_keys, bits_per_key);
}

FilterBlock BuildFilter(std::span<const std::string> user_keys,
                        int bits_per_key) {
  return BuildImpl(user_keys, bits_per_key);
}

bool MayContain(const FilterBlock& filter, std::string_view user_key) {
  if (filter.bits.empty()) return false;
  const uint64_t nbits = filter.bits.size() * 8;
  uint64_t h = Hash64(user_key);
  const uint64_t delta = (h >> 32) | 1;
  uint64_t pos = h & 0xffffffffu;
  for (uint32_t i = 0; i < filter.k; ++i) {
    uint64_t bit = pos % nbits;
    if ((filter.bits[bit / 8] & (1 << (bit % 8))) == 0) return false;
    pos += delta;
  }
  return true;
}

void FinishFilterBlockAt(char* dst, size_t bit_bytes, uint32_t n_keys,
                         uint32_t k) {
  char* p = dst + bit_bytes;
  EncodeFixed32(p, n_keys);
  p[4] = static_cast<char>(k);
  EncodeFixed32(p + 5, crc32c::Value(dst, bit_bytes + 5));
}

void EncodeFilterBlockTo(const FilterBlock& filter, char* dst) {
  std::copy(filter.bits.begin(), filter.bits.end(), dst);
  FinishFilterBlockAt(dst, filter.bits.size(), filter.n_keys, filter.k);
}

std::string EncodeFilterBlock(const FilterBlock& filter) {
  std::string out(filter.bits.size() + 9, '\0');
  EncodeFilterBlockTo(filter, out.data());
  return out;
}

FilterBlock DecodeFilterBlock(std::string_view block, uint64_t offset) {
  if (block.size() < 1 + 9) {
    throw FormatError("filter block truncated at offset " + std::to_string(offset));
  }
  size_t body = block.size() - 4;
  if (DecodeFixed32(block.data() + body) != crc32c::Value(block.data(), body)) {
    throw Corruption("checksum mismatch in filter block at offset " +
                         std::to_string(offset),
                     offset);
  }
  FilterBlock f;
  size_t bit_bytes = body - 5;
  f.bits.assign(block.data(), bit_bytes);
  f.n_keys = DecodeFixed32(block.data() + bit_bytes);
  f.k = static_cast<uint8_t>(block[bit_bytes + 4]);
  if (f.k < 1 || f.k > 30) throw FormatError("filter probe count out of range");
  return f;
}

}  // namespace luda
