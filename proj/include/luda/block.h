#pragma once

// Data block codec.
//
//   entry*            varint shared | varint unshared | varint value_len |
//                     unshared key bytes | value bytes
//   restart[n]        fixed32 offsets of entries with shared = 0
//   n                 fixed32
//   crc               fixed32 CRC-32C of every preceding byte in the block
//
// Keys are encoded internal keys. The first entry and every
// `restart_interval`-th entry after it are restart points.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace luda {

constexpr size_t kDefaultBlockSize = 4096;
constexpr int kDefaultRestartInterval = 16;
constexpr size_t kBlockTrailerSize = 4;

struct KeyValue {
  std::string key;  // encoded internal key
  std::string value;

  friend bool operator==(const KeyValue&, const KeyValue&) = default;
};

struct EntryRef {
  std::string_view key;
  std::string_view value;
};

inline size_t SharedPrefixLength(std::string_view a, std::string_view b) {
  size_t n = a.size() < b.size() ? a.size() : b.size();
  size_t i = 0;
  while (i < n && a[i] == b[i]) ++i;
  return i;
}

// Exact encoded-size bookkeeping for a block under construction. The table
// builder and the compaction block planner both cut blocks with this class,
// which is what makes their outputs byte-identical.
//
// The previous key is held as a view; it must stay alive until the next Add
// or Reset.
class BlockSizer {
 public:
  explicit BlockSizer(int restart_interval = kDefaultRestartInterval)
      : restart_interval_(restart_interval) {
    Reset();
  }

  // Bytes of the encoded block (entries, restart array and count, not the
  // checksum) if this entry were appended.
  size_t SizeWith(std::string_view key, size_t value_len) const;

  void Add(std::string_view key, size_t value_len);

  size_t Size() const {
    return entry_bytes_ + 4 * (num_restarts_ == 0 ? 1 : num_restarts_) + 4;
  }
  size_t entries() const { return entries_; }
  bool empty() const { return entries_ == 0; }
  void Reset();

  // Length of one entry given the number of bytes it shares with its
  // predecessor.
  static size_t EntrySize(size_t shared, size_t key_len, size_t value_len);

 private:
  int restart_interval_;
  size_t entries_ = 0;
  size_t entry_bytes_ = 0;
  size_t num_restarts_ = 0;
  std::string_view last_key_;
};

// Streaming builder; owns a copy of the last key so callers may pass
// temporaries.
class BlockBuilder {
 public:
  explicit BlockBuilder(int restart_interval = kDefaultRestartInterval);

  // Throws OrderingViolation if key is not strictly greater than the
  // previous key.
  void Add(std::string_view key, std::string_view value);

  // Appends restarts, count and checksum; the returned view is valid until
  // the next Reset.
  std::string_view Finish();

  // Size Finish() would produce without the checksum.
  size_t CurrentSize() const {
    return buffer_.size() + 4 * restarts_.size() + 4;
  }
  size_t SizeWith(std::string_view key, size_t value_len) const;
  bool empty() const { return counter_total_ == 0; }
  void Reset();

 private:
  int restart_interval_;
  std::string buffer_;
  std::vector<uint32_t> restarts_;
  int counter_ = 0;
  size_t counter_total_ = 0;
  std::string last_key_;
  bool finished_ = false;
};

// Encodes a complete block. Throws InvalidArgument on an empty list and
// OrderingViolation on unsorted input.
std::string EncodeDataBlock(std::span<const EntryRef> pairs,
                            int restart_interval = kDefaultRestartInterval);
std::string EncodeDataBlock(std::span<const KeyValue> pairs,
                            int restart_interval = kDefaultRestartInterval);

// Verifies the checksum and returns the block body without the trailing crc.
// `block_offset` only feeds the error message.
std::string_view VerifyBlock(std::string_view block, uint64_t block_offset = 0);

// Decodes a block produced by EncodeDataBlock. Corruption on checksum
// mismatch (nothing is returned), FormatError on malformed entries.
std::vector<KeyValue> DecodeDataBlock(std::string_view block,
                                      uint64_t block_offset = 0);

// Forward cursor over a verified block body (see VerifyBlock).
class BlockCursor {
 public:
  explicit BlockCursor(std::string_view body);

  bool Valid() const { return valid_; }
  std::string_view key() const { return key_; }
  std::string_view value() const { return value_; }
  uint32_t shared() const { return shared_; }

  void SeekToFirst();
  // Positions at the first entry with key >= target in internal-key order.
  void Seek(std::string_view target);
  void Next();

  uint32_t num_restarts() const { return num_restarts_; }
  uint32_t restart_offset(uint32_t i) const;

 private:
  void SeekToRestart(uint32_t index);
  bool ParseNext();

  std::string_view data_;  // entries only
  const char* restarts_ = nullptr;
  uint32_t num_restarts_ = 0;
  size_t next_ = 0;  // offset of the entry after the current one
  bool valid_ = false;
  std::string key_;
  std::string_view value_;
  uint32_t shared_ = 0;
};

}  // namespace luda
