#include "luda/sst.h"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include "luda/coding.h"
#include "luda/crc32c.h"
#include "luda/errors.h"

namespace luda {

std::string EncodeFooter(const Footer& footer) {
  std::string out;
  out.reserve(kFooterSize);
  PutFixed32(&out, footer.filter_offset);
  PutFixed32(&out, footer.filter_len);
  PutFixed32(&out, footer.index_offset);
  PutFixed32(&out, footer.index_len);
  PutFixed64(&out, kSstMagic);
  return out;
}

Footer DecodeFooter(std::string_view bytes) {
  if (bytes.size() != kFooterSize) throw FormatError("footer has wrong size");
  if (DecodeFixed64(bytes.data() + 16) != kSstMagic) {
    throw FormatError("bad magic number in SST footer");
  }
  Footer f;
  f.filter_offset = DecodeFixed32(bytes.data());
  f.filter_len = DecodeFixed32(bytes.data() + 4);
  f.index_offset = DecodeFixed32(bytes.data() + 8);
  f.index_len = DecodeFixed32(bytes.data() + 12);
  return f;
}

std::string EncodeIndexBlock(std::span<const IndexEntry> entries) {
  std::string out;
  for (const auto& e : entries) {
    PutLengthPrefixed(&out, e.last_key);
    PutFixed32(&out, e.offset);
    PutFixed32(&out, e.length);
  }
  PutFixed32(&out, static_cast<uint32_t>(entries.size()));
  PutFixed32(&out, crc32c::Value(out));
  return out;
}

std::vector<IndexEntry> DecodeIndexBlock(std::string_view block, uint64_t offset) {
  if (block.size() < 8) throw FormatError("index block truncated");
  size_t body = block.size() - 4;
  if (DecodeFixed32(block.data() + body) != crc32c::Value(block.data(), body)) {
    throw Corruption("checksum mismatch in index block at offset " +
                         std::to_string(offset),
                     offset);
  }
  uint32_t count = DecodeFixed32(block.data() + body - 4);
  std::string_view in = block.substr(0, body - 4);
  std::vector<IndexEntry> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    IndexEntry e;
    std::string_view key;
    if (!GetLengthPrefixed(&in, &key) || !GetFixed32(&in, &e.offset) ||
        !GetFixed32(&in, &e.length)) {
      throw FormatError("corrupt index entry");
    }
    e.last_key.assign(key);
    out.push_back(std::move(e));
  }
  if (!in.empty()) throw FormatError("trailing bytes in index block");
  return out;
}

void FinishSstFile(std::string* file, std::span<const IndexEntry> index,
                   std::string_view filter_block) {
  Footer footer;
  footer.filter_offset = static_cast<uint32_t>(file->size());
  footer.filter_len = static_cast<uint32_t>(filter_block.size());
  file->append(filter_block);
  std::string index_block = EncodeIndexBlock(index);
  footer.index_offset = static_cast<uint32_t>(file->size());
  footer.index_len = static_cast<uint32_t>(index_block.size());
  file->append(index_block);
  file->append(EncodeFooter(footer));
}

TableBuilder::TableBuilder(SstOptions options)
    : options_(options), block_(options.restart_interval) {}

void TableBuilder::FlushBlock() {
  std::string_view block = block_.Finish();
  IndexEntry e;
  e.last_key = last_key_;
  e.offset = static_cast<uint32_t>(file_.size());
  e.length = static_cast<uint32_t>(block.size());
  file_.append(block);
  index_.push_back(std::move(e));
  block_.Reset();
}

void TableBuilder::Add(std::string_view key, std::string_view value) {
  if (finished_) throw InvalidArgument("TableBuilder already finished");
  if (entries_ > 0 && CompareInternalKeys(last_key_, key) >= 0) {
    throw OrderingViolation("table keys must be strictly ascending");
  }
  if (!block_.empty() && block_.SizeWith(key, value.size()) > options_.block_size) {
    FlushBlock();
  }
  uint64_t projected =
      file_.size() + block_.SizeWith(key, value.size()) + kBlockTrailerSize;
  if (entries_ > 0 && projected > options_.sst_size_target) {
    throw SizeOverflow("table data would exceed sst_size_target");
  }
  block_.Add(key, value);
  if (entries_ == 0) smallest_.assign(key);
  last_key_.assign(key);
  user_keys_.emplace_back(ExtractUserKey(key));
  ++entries_;
}

std::string TableBuilder::Finish() {
  if (finished_) throw InvalidArgument("TableBuilder already finished");
  finished_ = true;
  if (!block_.empty()) FlushBlock();
  FilterBlock filter = BuildFilter(std::span<const std::string>(user_keys_),
                                   options_.bits_per_key);
  FinishSstFile(&file_, index_, EncodeFilterBlock(filter));
  return std::move(file_);
}

BuiltSst BuildSst(std::span<const KeyValue> pairs, const SstOptions& options) {
  TableBuilder builder(options);
  for (const auto& p : pairs) builder.Add(p.key, p.value);
  BuiltSst out;
  if (!pairs.empty()) {
    out.meta.smallest = InternalKey::FromEncoded(pairs.front().key);
    out.meta.largest = InternalKey::FromEncoded(pairs.back().key);
  }
  out.meta.entries = pairs.size();
  out.bytes = builder.Finish();
  out.meta.file_size = out.bytes.size();
  return out;
}

namespace {

class StringSource final : public RandomAccessSource {
 public:
  explicit StringSource(std::string bytes) : bytes_(std::move(bytes)) {}
  uint64_t size() const override { return bytes_.size(); }
  void Read(uint64_t offset, size_t n, char* dst) const override {
    if (offset > bytes_.size() || n > bytes_.size() - offset) {
      throw IoError("read past end of buffer");
    }
    std::memcpy(dst, bytes_.data() + offset, n);
  }

 private:
  std::string bytes_;
};

class FileSource final : public RandomAccessSource {
 public:
  FileSource(std::string path, int fd, uint64_t size)
      : path_(std::move(path)), fd_(fd), size_(size) {}
  ~FileSource() override { ::close(fd_); }
  uint64_t size() const override { return size_; }
  void Read(uint64_t offset, size_t n, char* dst) const override {
    size_t done = 0;
    while (done < n) {
      ssize_t r = ::pread(fd_, dst + done, n - done,
                          static_cast<off_t>(offset + done));
      if (r < 0 && errno == EINTR) continue;
      if (r <= 0) {
        throw IoError("short read from " + path_ + ": " +
                      (r < 0 ? std::strerror(errno) : "eof"));
      }
      done += static_cast<size_t>(r);
    }
  }

 private:
  std::string path_;
  int fd_;
  uint64_t size_;
};

}  // namespace

std::unique_ptr<RandomAccessSource> MakeStringSource(std::string bytes) {
  return std::make_unique<StringSource>(std::move(bytes));
}

std::unique_ptr<RandomAccessSource> MakeFileSource(const std::string& path) {
  int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) throw IoError("open " + path + ": " + std::strerror(errno));
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    throw IoError("stat " + path + ": " + std::strerror(errno));
  }
  return std::make_unique<FileSource>(path, fd, static_cast<uint64_t>(st.st_size));
}

std::shared_ptr<const Table> Table::Open(std::unique_ptr<RandomAccessSource> source) {
  uint64_t size = source->size();
  if (size < kFooterSize) throw FormatError("file too small to be an SST");
  std::string footer_bytes(kFooterSize, '\0');
  source->Read(size - kFooterSize, kFooterSize, footer_bytes.data());

  std::shared_ptr<Table> t(new Table());
  t->footer_ = DecodeFooter(footer_bytes);
  const Footer& f = t->footer_;
  uint64_t body_end = size - kFooterSize;
  if (uint64_t{f.filter_offset} + f.filter_len > f.index_offset ||
      uint64_t{f.index_offset} + f.index_len != body_end) {
    throw FormatError("footer offsets out of range");
  }
  std::string index_bytes(f.index_len, '\0');
  source->Read(f.index_offset, f.index_len, index_bytes.data());
  t->index_ = DecodeIndexBlock(index_bytes, f.index_offset);

  uint32_t expect = 0;
  for (size_t i = 0; i < t->index_.size(); ++i) {
    const auto& e = t->index_[i];
    if (e.offset != expect || e.length == 0 ||
        uint64_t{e.offset} + e.length > f.filter_offset) {
      throw FormatError("corrupt index: block extents out of order");
    }
    if (i > 0 && CompareInternalKeys(t->index_[i - 1].last_key, e.last_key) >= 0) {
      throw FormatError("corrupt index: keys out of order");
    }
    expect = e.offset + e.length;
  }
  if (expect != f.filter_offset) throw FormatError("corrupt index: gap before filter");

  std::string filter_bytes(f.filter_len, '\0');
  source->Read(f.filter_offset, f.filter_len, filter_bytes.data());
  t->filter_ = DecodeFilterBlock(filter_bytes, f.filter_offset);
  t->source_ = std::move(source);
  return t;
}

std::shared_ptr<const Table> Table::OpenBytes(std::string bytes) {
  return Open(MakeStringSource(std::move(bytes)));
}

std::string Table::ReadRawBlock(size_t i) const {
  const auto& e = index_.at(i);
  std::string raw(e.length, '\0');
  source_->Read(e.offset, e.length, raw.data());
  data_block_reads_.fetch_add(1, std::memory_order_relaxed);
  return raw;
}

std::vector<KeyValue> Table::ReadBlock(size_t i) const {
  return DecodeDataBlock(ReadRawBlock(i), index_[i].offset);
}

std::optional<size_t> Table::FindBlock(std::string_view ikey) const {
  auto it = std::lower_bound(
      index_.begin(), index_.end(), ikey,
      [](const IndexEntry& e, std::string_view k) {
        return CompareInternalKeys(e.last_key, k) < 0;
      });
  if (it == index_.end()) return std::nullopt;
  return static_cast<size_t>(it - index_.begin());
}

LookupResult Table::Get(std::string_view user_key) const {
  LookupResult result;
  if (!MayContain(filter_, user_key)) return result;
  std::string seek = MakeInternalKey(user_key, kMaxSequence, ValueKind::kPut);
  auto block = FindBlock(seek);
  if (!block) return result;
  std::string raw = ReadRawBlock(*block);
  BlockCursor cursor(VerifyBlock(raw, index_[*block].offset));
  cursor.Seek(seek);
  if (!cursor.Valid()) return result;
  ParsedInternalKey parsed;
  if (!ParseInternalKey(cursor.key(), &parsed)) throw FormatError("bad internal key");
  if (parsed.user_key != user_key) return result;
  result.seq = parsed.seq;
  if (parsed.kind == ValueKind::kDelete) {
    result.state = LookupState::kDeleted;
  } else {
    result.state = LookupState::kFound;
    result.value.assign(cursor.value());
  }
  return result;
}

std::vector<KeyValue> Table::Scan() const {
  std::vector<KeyValue> out;
  for (size_t i = 0; i < index_.size(); ++i) {
    auto block = ReadBlock(i);
    std::move(block.begin(), block.end(), std::back_inserter(out));
  }
  return out;
}

}  // namespace luda
