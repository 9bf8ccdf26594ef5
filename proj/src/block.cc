#include "luda/block.h"

#include <string>

#include "luda/coding.h"
#include "luda/crc32c.h"
#include "luda/errors.h"
#include "luda/internal_key.h"

namespace luda {

size_t BlockSizer::EntrySize(size_t shared, size_t key_len, size_t value_len) {
  size_t unshared = key_len - shared;
  return VarintLength(shared) + VarintLength(unshared) +
         VarintLength(value_len) + unshared + value_len;
}

size_t BlockSizer::SizeWith(std::string_view key, size_t value_len) const {
  bool restart = entries_ % restart_interval_ == 0;
  size_t shared = restart ? 0 : SharedPrefixLength(last_key_, key);
  size_t restarts = num_restarts_ + (restart ? 1 : 0);
  return entry_bytes_ + EntrySize(shared, key.size(), value_len) +
         4 * restarts + 4;
}

void BlockSizer::Add(std::string_view key, size_t value_len) {
  bool restart = entries_ % restart_interval_ == 0;
  size_t shared = restart ? 0 : SharedPrefixLength(last_key_, key);
  if (restart) ++num_restarts_;
  entry_bytes_ += EntrySize(shared, key.size(), value_len);
  ++entries_;
  last_key_ = key;
}

void BlockSizer::Reset() {
  entries_ = 0;
  entry_bytes_ = 0;
  num_restarts_ = 0;
  last_key_ = {};
}

BlockBuilder::BlockBuilder(int restart_interval)
    : restart_interval_(restart_interval) {
  if (restart_interval < 1) throw InvalidArgument("restart_interval must be >= 1");
  Reset();
}

void BlockBuilder::Reset() {
  buffer_.clear();
  restarts_.clear();
  counter_ = 0;
  counter_total_ = 0;
  last_key_.clear();
  finished_ = false;
}

size_t BlockBuilder::SizeWith(std::string_view key, size_t value_len) const {
  bool restart = counter_ == 0 || counter_ >= restart_interval_;
  size_t shared = restart ? 0 : SharedPrefixLength(last_key_, key);
  return buffer_.size() + BlockSizer::EntrySize(shared, key.size(), value_len) +
         4 * (restarts_.size() + (restart ? 1 : 0)) + 4;
}

void BlockBuilder::Add(std::string_view key, std::string_view value) {
  if (counter_total_ > 0 && CompareInternalKeys(last_key_, key) >= 0) {
    throw OrderingViolation("block keys must be strictly ascending");
  }
  size_t shared = 0;
  if (counter_ == 0 || counter_ >= restart_interval_) {
    restarts_.push_back(static_cast<uint32_t>(buffer_.size()));
    counter_ = 0;
  } else {
    shared = SharedPrefixLength(last_key_, key);
  }
  size_t unshared = key.size() - shared;
  PutVarint32(&buffer_, static_cast<uint32_t>(shared));
  PutVarint32(&buffer_, static_cast<uint32_t>(unshared));
  PutVarint32(&buffer_, static_cast<uint32_t>(value.size()));
  buffer_.append(key.data() + shared, unshared);
  buffer_.append(value);
  last_key_.assign(key);
  ++counter_;
  ++counter_total_;
}

std::string_view BlockBuilder::Finish() {
  if (!finished_) {
    for (uint32_t r : restarts_) PutFixed32(&buffer_, r);
    PutFixed32(&buffer_, static_cast<uint32_t>(restarts_.size()));
    PutFixed32(&buffer_, crc32c::Value(buffer_));
    finished_ = true;
  }
  return buffer_;
}

namespace {

template <typename Pair>
std::string EncodePairs(std::span<const Pair> pairs, int restart_interval) {
  if (pairs.empty()) throw InvalidArgument("cannot encode an empty data block");
  BlockBuilder builder(restart_interval);
  for (const auto& p : pairs) builder.Add(p.key, p.value);
  return std::string(builder.Finish());
}

}  // namespace

std::string EncodeDataBlock(std::span<const EntryRef> pairs,
                            int restart_interval) {
  return EncodePairs(pairs, restart_interval);
}

std::string EncodeDataBlock(std::span<const KeyValue> pairs,
                            int restart_interval) {
  return EncodePairs(pairs, restart_interval);
}

std::string_view VerifyBlock(std::string_view block, uint64_t block_offset) {
  if (block.size() < 4 + 4 + kBlockTrailerSize) {
    throw FormatError("data block at offset " + std::to_string(block_offset) +
                      " is truncated");
  }
  size_t body_len = block.size() - kBlockTrailerSize;
  uint32_t stored = DecodeFixed32(block.data() + body_len);
  uint32_t actual = crc32c::Value(block.data(), body_len);
  if (stored != actual) {
    throw Corruption("checksum mismatch in block at offset " +
                         std::to_string(block_offset),
                     block_offset);
  }
  return block.substr(0, body_len);
}

std::vector<KeyValue> DecodeDataBlock(std::string_view block,
                                      uint64_t block_offset) {
  std::string_view body = VerifyBlock(block, block_offset);
  std::vector<KeyValue> out;
  BlockCursor cursor(body);
  for (cursor.SeekToFirst(); cursor.Valid(); cursor.Next()) {
    if (!out.empty() && CompareInternalKeys(out.back().key, cursor.key()) >= 0) {
      throw FormatError("keys out of order in block at offset " +
                        std::to_string(block_offset));
    }
    out.push_back({std::string(cursor.key()), std::string(cursor.value())});
  }
  return out;
}

BlockCursor::BlockCursor(std::string_view body) {
  if (body.size() < 4) throw FormatError("block body too small");
  num_restarts_ = DecodeFixed32(body.data() + body.size() - 4);
  if (num_restarts_ == 0 ||
      num_restarts_ > (body.size() - 4) / 4) {
    throw FormatError("bad restart count in block");
  }
  size_t restarts_at = body.size() - 4 - 4 * static_cast<size_t>(num_restarts_);
  data_ = body.substr(0, restarts_at);
  restarts_ = body.data() + restarts_at;
  for (uint32_t i = 0; i < num_restarts_; ++i) {
    if (restart_offset(i) >= data_.size() && !(data_.empty() && i == 0)) {
      throw FormatError("restart offset out of range");
    }
  }
}

uint32_t BlockCursor::restart_offset(uint32_t i) const {
  return DecodeFixed32(restarts_ + 4 * static_cast<size_t>(i));
}

bool BlockCursor::ParseNext() {
  if (next_ >= data_.size()) {
    valid_ = false;
    return false;
  }
  const char* p = data_.data() + next_;
  const char* limit = data_.data() + data_.size();
  uint32_t shared = 0, unshared = 0, value_len = 0;
  p = GetVarint32Ptr(p, limit, &shared);
  if (p != nullptr) p = GetVarint32Ptr(p, limit, &unshared);
  if (p != nullptr) p = GetVarint32Ptr(p, limit, &value_len);
  if (p == nullptr || shared > key_.size() ||
      static_cast<size_t>(limit - p) < static_cast<size_t>(unshared) + value_len) {
    throw FormatError("truncated block entry at " + std::to_string(next_));
  }
  key_.resize(shared);
  key_.append(p, unshared);
  if (key_.size() < kTrailerSize) {
    throw FormatError("block entry key shorter than its trailer");
  }
  value_ = std::string_view(p + unshared, value_len);
  shared_ = shared;
  next_ = static_cast<size_t>(p + unshared + value_len - data_.data());
  valid_ = true;
  return true;
}

void BlockCursor::SeekToRestart(uint32_t index) {
  key_.clear();
  next_ = restart_offset(index);
  ParseNext();
  if (valid_ && shared_ != 0) throw FormatError("restart entry has shared bytes");
}

void BlockCursor::SeekToFirst() { SeekToRestart(0); }

void BlockCursor::Next() { ParseNext(); }

void BlockCursor::Seek(std::string_view target) {
  // Last restart point whose key is < target.
  uint32_t left = 0, right = num_restarts_ - 1;
  while (left < right) {
    uint32_t mid = (left + right + 1) / 2;
    SeekToRestart(mid);
    if (valid_ && CompareInternalKeys(key_, target) < 0) {
      left = mid;
    } else {
      right = mid - 1;
    }
  }
  SeekToRestart(left);
  while (valid_ && CompareInternalKeys(key_, target) < 0) ParseNext();
}

}  // namespace luda
