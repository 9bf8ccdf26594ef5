#include "luda/version.h"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <unordered_map>

#include "luda/coding.h"
#include "luda/crc32c.h"
#include "luda/errors.h"

namespace luda {

namespace {

std::atomic<uint64_t> g_unlinked{0};

enum Tag : uint32_t {
  kLastSeq = 1,
  kNextFileId = 2,
  kAdded = 3,
  kRemoved = 4,
  kCompactPointer = 5,
};

bool UserRangesOverlap(const SstMeta& a, const SstMeta& b) {
  return !(a.largest.user_key() < b.smallest.user_key() ||
           b.largest.user_key() < a.smallest.user_key());
}

}  // namespace

std::string TableFileName(const std::string& dir, uint64_t file_id) {
  return dir + "/" + std::to_string(file_id) + ".sst";
}

TableFile::TableFile(SstMeta meta, std::string path, std::shared_ptr<const Table> table)
    : meta_(std::move(meta)), path_(std::move(path)), table_(std::move(table)) {}

TableFile::~TableFile() {
  if (obsolete_ && !path_.empty()) {
    table_.reset();
    if (::unlink(path_.c_str()) == 0) g_unlinked.fetch_add(1, std::memory_order_relaxed);
  }
}

uint64_t TableFile::unlinked_count() { return g_unlinked.load(std::memory_order_relaxed); }

// ---------------------------------------------------------------------------

std::string VersionEdit::Encode() const {
  std::string out;
  if (last_seq) {
    PutVarint32(&out, kLastSeq);
    PutVarint64(&out, *last_seq);
  }
  if (next_file_id) {
    PutVarint32(&out, kNextFileId);
    PutVarint64(&out, *next_file_id);
  }
  for (const auto& f : added) {
    PutVarint32(&out, kAdded);
    PutVarint32(&out, static_cast<uint32_t>(f.level));
    PutVarint64(&out, f.meta.file_id);
    PutVarint64(&out, f.meta.file_size);
    PutVarint64(&out, f.meta.entries);
    PutLengthPrefixed(&out, f.meta.smallest.Encoded());
    PutLengthPrefixed(&out, f.meta.largest.Encoded());
  }
  for (const auto& f : removed) {
    PutVarint32(&out, kRemoved);
    PutVarint32(&out, static_cast<uint32_t>(f.level));
    PutVarint64(&out, f.file_id);
  }
  for (const auto& [level, key] : compact_pointers) {
    PutVarint32(&out, kCompactPointer);
    PutVarint32(&out, static_cast<uint32_t>(level));
    PutLengthPrefixed(&out, key);
  }
  return out;
}

VersionEdit VersionEdit::Decode(std::string_view in) {
  VersionEdit e;
  auto fail = [](const char* what) { throw FormatError(std::string("version edit: ") + what); };
  auto level = [&](uint32_t l) {
    if (l >= kNumLevels) fail("level out of range");
    return static_cast<int>(l);
  };
  while (!in.empty()) {
    uint32_t tag = 0;
    if (!GetVarint32(&in, &tag)) fail("bad tag");
    switch (tag) {
      case kLastSeq: {
        uint64_t v = 0;
        if (!GetVarint64(&in, &v)) fail("bad last_seq");
        e.last_seq = v;
        break;
      }
      case kNextFileId: {
        uint64_t v = 0;
        if (!GetVarint64(&in, &v)) fail("bad next_file_id");
        e.next_file_id = v;
        break;
      }
      case kAdded: {
        NewFile f;
        uint32_t l = 0;
        std::string_view lo, hi;
        if (!GetVarint32(&in, &l) || !GetVarint64(&in, &f.meta.file_id) ||
            !GetVarint64(&in, &f.meta.file_size) || !GetVarint64(&in, &f.meta.entries) ||
            !GetLengthPrefixed(&in, &lo) || !GetLengthPrefixed(&in, &hi)) {
          fail("bad added file");
        }
        if (lo.size() < kTrailerSize || hi.size() < kTrailerSize) fail("bad key");
        f.level = level(l);
        f.meta.level = f.level;
        f.meta.smallest = InternalKey::FromEncoded(lo);
        f.meta.largest = InternalKey::FromEncoded(hi);
        e.added.push_back(std::move(f));
        break;
      }
      case kRemoved: {
        DeletedFile f;
        uint32_t l = 0;
        if (!GetVarint32(&in, &l) || !GetVarint64(&in, &f.file_id)) fail("bad removed file");
        f.level = level(l);
        e.removed.push_back(f);
        break;
      }
      case kCompactPointer: {
        uint32_t l = 0;
        std::string_view key;
        if (!GetVarint32(&in, &l) || !GetLengthPrefixed(&in, &key)) fail("bad pointer");
        e.compact_pointers.emplace_back(level(l), std::string(key));
        break;
      }
      default:
        fail("unknown tag");
    }
  }
  return e;
}

// ---------------------------------------------------------------------------

uint64_t Version::level_bytes(int level) const {
  uint64_t total = 0;
  for (const auto& f : levels_[level]) total += f->meta().file_size;
  return total;
}

size_t Version::num_files() const {
  size_t n = 0;
  for (const auto& l : levels_) n += l.size();
  return n;
}

LookupResult Version::Get(std::string_view user_key) const {
  for (const auto& f : levels_[0]) {
    const SstMeta& m = f->meta();
    if (user_key < m.smallest.user_key() || m.largest.user_key() < user_key) continue;
    LookupResult r = f->table().Get(user_key);
    if (r.state != LookupState::kNotFound) return r;
  }
  for (int level = 1; level < kNumLevels; ++level) {
    const auto& files = levels_[level];
    auto it = std::lower_bound(files.begin(), files.end(), user_key,
                               [](const TableFilePtr& f, std::string_view k) {
                                 return f->meta().largest.user_key() < k;
                               });
    if (it == files.end() || user_key < (*it)->meta().smallest.user_key()) continue;
    LookupResult r = (*it)->table().Get(user_key);
    if (r.state != LookupState::kNotFound) return r;
  }
  return {};
}

std::vector<TableFilePtr> Version::Overlapping(int level, std::string_view lo,
                                               std::string_view hi) const {
  std::vector<TableFilePtr> out;
  for (const auto& f : levels_[level]) {
    const SstMeta& m = f->meta();
    if (m.largest.user_key() < lo || hi < m.smallest.user_key()) continue;
    out.push_back(f);
  }
  return out;
}

void Version::CheckInvariants() const {
  const auto& l0 = levels_[0];
  for (size_t i = 1; i < l0.size(); ++i) {
    if (l0[i - 1]->meta().file_id <= l0[i]->meta().file_id) {
      throw std::logic_error("level 0 is not ordered newest first");
    }
  }
  for (int level = 0; level < kNumLevels; ++level) {
    for (const auto& f : levels_[level]) {
      if (f->meta().largest < f->meta().smallest) {
        throw std::logic_error("file " + std::to_string(f->meta().file_id) +
                               " has inverted key range");
      }
    }
    if (level == 0) continue;
    const auto& files = levels_[level];
    for (size_t i = 1; i < files.size(); ++i) {
      if (!(files[i - 1]->meta().largest.user_key() < files[i]->meta().smallest.user_key())) {
        throw std::logic_error("level " + std::to_string(level) + " files " +
                               std::to_string(files[i - 1]->meta().file_id) + " and " +
                               std::to_string(files[i]->meta().file_id) +
                               " overlap or are out of order");
      }
    }
  }
}

// ---------------------------------------------------------------------------

void VersionBuilder::Apply(const VersionEdit& edit, const std::vector<TableFilePtr>& new_files) {
  for (const auto& r : edit.removed) {
    auto& files = v_->levels_[r.level];
    auto it = std::find_if(files.begin(), files.end(), [&](const TableFilePtr& f) {
      return f->meta().file_id == r.file_id;
    });
    if (it == files.end()) {
      throw std::logic_error("edit removes missing file " + std::to_string(r.file_id) +
                             " from level " + std::to_string(r.level));
    }
    (*it)->MarkObsolete();
    files.erase(it);
  }

  std::unordered_map<uint64_t, TableFilePtr> by_id;
  for (const auto& f : new_files) by_id[f->meta().file_id] = f;
  std::vector<std::vector<SstMeta>> added(kNumLevels);
  for (const auto& a : edit.added) {
    auto it = by_id.find(a.meta.file_id);
    if (it == by_id.end()) {
      throw std::logic_error("no open handle for added file " + std::to_string(a.meta.file_id));
    }
    if (a.level > 0) {
      for (const auto& other : added[a.level]) {
        if (UserRangesOverlap(other, a.meta)) {
          throw InvalidArgument("new files " + std::to_string(other.file_id) + " and " +
                                std::to_string(a.meta.file_id) + " overlap in level " +
                                std::to_string(a.level));
        }
      }
      for (const auto& existing : v_->levels_[a.level]) {
        if (UserRangesOverlap(existing->meta(), a.meta)) {
          throw InvalidArgument("new file " + std::to_string(a.meta.file_id) +
                                " overlaps file " + std::to_string(existing->meta().file_id) +
                                " in level " + std::to_string(a.level));
        }
      }
      added[a.level].push_back(a.meta);
    }
    v_->levels_[a.level].push_back(it->second);
  }

  auto& l0 = v_->levels_[0];
  std::sort(l0.begin(), l0.end(), [](const TableFilePtr& a, const TableFilePtr& b) {
    return a->meta().file_id > b->meta().file_id;
  });
  for (int level = 1; level < kNumLevels; ++level) {
    auto& files = v_->levels_[level];
    std::sort(files.begin(), files.end(), [](const TableFilePtr& a, const TableFilePtr& b) {
      return a->meta().smallest < b->meta().smallest;
    });
  }
}

VersionPtr VersionBuilder::Finish() { return std::move(v_); }

// ---------------------------------------------------------------------------

ManifestWriter::ManifestWriter(const std::string& path, bool sync) : sync_(sync) {
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError("open " + path + ": " + std::strerror(errno));
}

ManifestWriter::~ManifestWriter() {
  if (fd_ >= 0) ::close(fd_);
}

void ManifestWriter::Append(const VersionEdit& edit) {
  std::string payload = edit.Encode();
  std::string record;
  PutFixed32(&record, static_cast<uint32_t>(payload.size()));
  PutFixed32(&record, crc32c::Value(payload));
  record += payload;
  const char* p = record.data();
  size_t left = record.size();
  while (left > 0) {
    ssize_t n = ::write(fd_, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("manifest write: ") + std::strerror(errno));
    }
    p += n;
    left -= static_cast<size_t>(n);
  }
  if (sync_ && ::fdatasync(fd_) != 0) {
    throw IoError(std::string("manifest sync: ") + std::strerror(errno));
  }
}

std::vector<VersionEdit> ReadManifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<VersionEdit> edits;
  size_t pos = 0;
  while (bytes.size() - pos >= 8) {
    uint32_t len = DecodeFixed32(bytes.data() + pos);
    uint32_t crc = DecodeFixed32(bytes.data() + pos + 4);
    if (bytes.size() - pos - 8 < len) break;  // torn tail
    std::string_view payload(bytes.data() + pos + 8, len);
    if (crc32c::Value(payload) != crc) {
      throw Corruption("manifest record checksum mismatch", pos);
    }
    edits.push_back(VersionEdit::Decode(payload));
    pos += 8 + len;
  }
  return edits;
}

}  // namespace luda
