#pragma once

// Sorted-string table files.
//
//   [data block]* [filter block] [index block] [footer]
//
// footer (24 bytes): filter_offset u32 | filter_len u32 | index_offset u32 |
//                    index_len u32 | magic u64
// index block: per data block { varint key_len | last internal key |
//              fixed32 offset | fixed32 length }, then fixed32 count and a
//              fixed32 CRC-32C of everything before it.
//
// See docs/format.md for the full layout.

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "luda/block.h"
#include "luda/bloom.h"
#include "luda/internal_key.h"

namespace luda {

constexpr uint64_t kSstMagic = 0x4C55444153535431ULL;
constexpr size_t kFooterSize = 24;
constexpr uint64_t kDefaultSstSize = 4u << 20;

struct SstOptions {
  size_t block_size = kDefaultBlockSize;
  int restart_interval = kDefaultRestartInterval;
  int bits_per_key = kDefaultBitsPerKey;
  // Upper bound on the data-block bytes of one file.
  uint64_t sst_size_target = kDefaultSstSize;
};

struct SstMeta {
  uint64_t file_id = 0;
  uint64_t file_size = 0;
  InternalKey smallest;
  InternalKey largest;
  int level = 0;
  uint64_t entries = 0;
};

struct IndexEntry {
  std::string last_key;
  uint32_t offset = 0;
  uint32_t length = 0;  // includes the block checksum

  friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

struct Footer {
  uint32_t filter_offset = 0;
  uint32_t filter_len = 0;
  uint32_t index_offset = 0;
  uint32_t index_len = 0;
};

std::string EncodeFooter(const Footer& footer);
Footer DecodeFooter(std::string_view bytes);  // throws FormatError on bad magic

std::string EncodeIndexBlock(std::span<const IndexEntry> entries);
std::vector<IndexEntry> DecodeIndexBlock(std::string_view block,
                                         uint64_t offset = 0);

// Appends filter, index and footer to a run of already encoded data blocks.
// `file` holds the data blocks on entry and the complete file on return.
void FinishSstFile(std::string* file, std::span<const IndexEntry> index,
                   std::string_view filter_block);

// Streaming file builder. Blocks are cut with the same rule the compaction
// planner uses: a block closes when the next entry would push it past
// block_size, and Add throws SizeOverflow when the data bytes would pass
// sst_size_target.
class TableBuilder {
 public:
  explicit TableBuilder(SstOptions options = {});

  // Throws OrderingViolation or SizeOverflow.
  void Add(std::string_view key, std::string_view value);

  // Returns the complete file bytes. The builder is single use.
  std::string Finish();

  bool empty() const { return entries_ == 0; }
  uint64_t entries() const { return entries_; }
  uint64_t data_bytes() const { return file_.size(); }
  const std::string& smallest() const { return smallest_; }
  const std::string& largest() const { return last_key_; }

 private:
  void FlushBlock();

  SstOptions options_;
  BlockBuilder block_;
  std::string file_;
  std::vector<IndexEntry> index_;
  std::vector<std::string> user_keys_;
  std::string smallest_;
  std::string last_key_;
  uint64_t entries_ = 0;
  bool finished_ = false;
};

// Builds a complete file from a sorted pair list.
struct BuiltSst {
  std::string bytes;
  SstMeta meta;
};
BuiltSst BuildSst(std::span<const KeyValue> pairs, const SstOptions& options = {});

// Byte source behind an open table.
class RandomAccessSource {
 public:
  virtual ~RandomAccessSource() = default;
  virtual uint64_t size() const = 0;
  // Reads exactly n bytes at offset into dst; throws IoError on short read.
  virtual void Read(uint64_t offset, size_t n, char* dst) const = 0;
};

std::unique_ptr<RandomAccessSource> MakeStringSource(std::string bytes);
std::unique_ptr<RandomAccessSource> MakeFileSource(const std::string& path);

enum class LookupState { kNotFound, kFound, kDeleted };

struct LookupResult {
  LookupState state = LookupState::kNotFound;
  std::string value;
  uint64_t seq = 0;
};

// Immutable open table. Index and filter stay resident; data blocks are read
// from the source on demand. Safe for concurrent readers.
class Table {
 public:
  static std::shared_ptr<const Table> Open(std::unique_ptr<RandomAccessSource> source);
  static std::shared_ptr<const Table> OpenBytes(std::string bytes);

  // Newest entry for user_key in this table. The filter is consulted before
  // any data block is read.
  LookupResult Get(std::string_view user_key) const;

  // Every entry in ascending internal-key order.
  std::vector<KeyValue> Scan() const;

  // Raw bytes of data block i (checksum included, not verified).
  std::string ReadRawBlock(size_t i) const;
  // Decoded, verified contents of data block i.
  std::vector<KeyValue> ReadBlock(size_t i) const;

  // Index of the block that would hold `ikey`, or nullopt if past the end.
  std::optional<size_t> FindBlock(std::string_view ikey) const;

  const Footer& footer() const { return footer_; }
  const std::vector<IndexEntry>& index() const { return index_; }
  const FilterBlock& filter() const { return filter_; }
  uint64_t file_size() const { return source_->size(); }

  uint64_t data_block_reads() const {
    return data_block_reads_.load(std::memory_order_relaxed);
  }

 private:
  Table() = default;

  std::unique_ptr<RandomAccessSource> source_;
  Footer footer_;
  std::vector<IndexEntry> index_;
  FilterBlock filter_;
  mutable std::atomic<uint64_t> data_block_reads_{0};
};

}  // namespace luda
