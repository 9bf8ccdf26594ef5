#pragma once

// Level layout of the store's files, the edits that move between layouts and
// the MANIFEST log that records those edits.
//
// A Version is immutable once published. Files are shared between versions
// through TableFile handles; a file removed by an edit is unlinked from disk
// when the last version (or in-flight reader) holding it lets go.

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "luda/sst.h"

namespace luda {

constexpr int kNumLevels = 7;

std::string TableFileName(const std::string& dir, uint64_t file_id);

class TableFile {
 public:
  TableFile(SstMeta meta, std::string path, std::shared_ptr<const Table> table);
  ~TableFile();

  TableFile(const TableFile&) = delete;
  TableFile& operator=(const TableFile&) = delete;

  const SstMeta& meta() const { return meta_; }
  const std::string& path() const { return path_; }
  const Table& table() const { return *table_; }

  // Delete the file from disk once this handle is destroyed.
  void MarkObsolete() const { obsolete_ = true; }

  // Process-wide count of files unlinked by handle destruction.
  static uint64_t unlinked_count();

 private:
  SstMeta meta_;
  std::string path_;
  std::shared_ptr<const Table> table_;
  mutable std::atomic<bool> obsolete_{false};
};

using TableFilePtr = std::shared_ptr<const TableFile>;

struct VersionEdit {
  struct NewFile {
    int level = 0;
    SstMeta meta;
  };
  struct DeletedFile {
    int level = 0;
    uint64_t file_id = 0;
  };

  std::vector<NewFile> added;
  std::vector<DeletedFile> removed;
  std::optional<uint64_t> last_seq;
  std::optional<uint64_t> next_file_id;
  // Per-level round-robin compaction cursor (largest key of the last job).
  std::vector<std::pair<int, std::string>> compact_pointers;

  std::string Encode() const;
  // Throws FormatError.
  static VersionEdit Decode(std::string_view payload);
};

class Version {
 public:
  Version() : levels_(kNumLevels) {}

  const std::vector<TableFilePtr>& files(int level) const { return levels_[level]; }
  uint64_t level_bytes(int level) const;
  size_t num_files() const;

  // Level 0 newest first, then each deeper level by key range.
  LookupResult Get(std::string_view user_key) const;

  // Files in `level` whose user-key range intersects [lo, hi].
  std::vector<TableFilePtr> Overlapping(int level, std::string_view lo,
                                        std::string_view hi) const;

  // Throws std::logic_error if a level >= 1 is unsorted or overlapping, or
  // level 0 is not newest first.
  void CheckInvariants() const;

 private:
  friend class VersionBuilder;
  std::vector<std::vector<TableFilePtr>> levels_;
};

using VersionPtr = std::shared_ptr<const Version>;

// Applies an edit on top of a base version. New files must be supplied as
// open handles keyed by file id.
class VersionBuilder {
 public:
  explicit VersionBuilder(const Version& base) : v_(std::make_shared<Version>(base)) {}

  // Throws std::logic_error when removing a file that is not there, and
  // InvalidArgument when added files overlap within a level >= 1.
  void Apply(const VersionEdit& edit, const std::vector<TableFilePtr>& new_files);
  VersionPtr Finish();

 private:
  std::shared_ptr<Version> v_;
};

// Append-only log of VersionEdits. Record: fixed32 len | fixed32 crc | payload.
class ManifestWriter {
 public:
  ManifestWriter(const std::string& path, bool sync);
  ~ManifestWriter();

  ManifestWriter(const ManifestWriter&) = delete;
  ManifestWriter& operator=(const ManifestWriter&) = delete;

  // Throws IoError.
  void Append(const VersionEdit& edit);

 private:
  int fd_ = -1;
  bool sync_;
};

// Reads every complete record. A torn final record (short write) ends the
// log quietly; a checksum mismatch on a complete record throws Corruption.
std::vector<VersionEdit> ReadManifest(const std::string& path);

}  // namespace luda
