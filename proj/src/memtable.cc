#include "luda/memtable.h"

#include <algorithm>
#include <cstring>
#include <mutex>

namespace luda {

char* Arena::Allocate(size_t bytes) {
  if (bytes > remaining_) {
    // Large requests get a block of their own so the current one is not
    // wasted.
    if (bytes > block_size_ / 4) {
      blocks_.push_back(std::make_unique_for_overwrite<char[]>(bytes));
      usage_.fetch_add(bytes, std::memory_order_relaxed);
      return blocks_.back().get();
    }
    blocks_.push_back(std::make_unique_for_overwrite<char[]>(block_size_));
    usage_.fetch_add(block_size_, std::memory_order_relaxed);
    ptr_ = blocks_.back().get();
    remaining_ = block_size_;
  }
  char* out = ptr_;
  ptr_ += bytes;
  remaining_ -= bytes;
  return out;
}

Memtable::Memtable(size_t flush_bytes)
    : arena_(std::clamp<size_t>(flush_bytes / 64, 1024, 64 << 10)),
      map_(Map::allocator_type(&node_bytes_)) {}

void Memtable::Add(uint64_t seq, ValueKind kind, std::string_view user_key,
                   std::string_view value) {
  size_t klen = user_key.size() + kTrailerSize;
  char* buf = arena_.Allocate(klen + value.size());
  std::memcpy(buf, user_key.data(), user_key.size());
  EncodeFixed64(buf + user_key.size(), PackTrailer(seq, kind));
  if (!value.empty()) std::memcpy(buf + klen, value.data(), value.size());
  std::unique_lock<std::shared_mutex> lock(mu_);
  map_.emplace(std::string_view(buf, klen), std::string_view(buf + klen, value.size()));
}

LookupResult Memtable::Get(std::string_view user_key) const {
  LookupResult result;
  std::string seek = MakeInternalKey(user_key, kMaxSequence, ValueKind::kPut);
  std::shared_lock<std::shared_mutex> lock(mu_);
  auto it = map_.lower_bound(std::string_view(seek));
  if (it == map_.end() || ExtractUserKey(it->first) != user_key) return result;
  uint64_t trailer = ExtractTrailer(it->first);
  result.seq = trailer >> 8;
  if (static_cast<ValueKind>(trailer & 0xff) == ValueKind::kDelete) {
    result.state = LookupState::kDeleted;
  } else {
    result.state = LookupState::kFound;
    result.value.assign(it->second);
  }
  return result;
}

size_t Memtable::ApproximateMemoryUsage() const {
  return arena_.MemoryUsage() + node_bytes_.load(std::memory_order_relaxed);
}

size_t Memtable::entries() const {
  std::shared_lock<std::shared_mutex> lock(mu_);
  return map_.size();
}

std::vector<EntryRef> Memtable::Entries() const {
  std::shared_lock<std::shared_mutex> lock(mu_);
  std::vector<EntryRef> out;
  out.reserve(map_.size());
  for (const auto& [k, v] : map_) out.push_back({k, v});
  return out;
}

}  // namespace luda
