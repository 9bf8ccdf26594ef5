#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace luda::crc32c {

// CRC-32C (Castagnoli, reflected polynomial 0x82F63B78), init 0xFFFFFFFF and
// final xor 0xFFFFFFFF. No masking is applied. Uses the SSE4.2 instruction
// when the CPU has it, otherwise a slicing-by-8 table.

// Returns the crc of concat(A, data[0,n-1]) where init_crc is the crc of A.
uint32_t Extend(uint32_t init_crc, const char* data, size_t n);

inline uint32_t Value(const char* data, size_t n) { return Extend(0, data, n); }

inline uint32_t Value(std::string_view data) {
  return Extend(0, data.data(), data.size());
}

// Exposed so tests can pin both code paths against each other.
uint32_t ExtendPortable(uint32_t init_crc, const char* data, size_t n);
bool HardwareAvailable();

}  // namespace luda::crc32c
