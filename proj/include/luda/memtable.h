#pragma once

// In-memory write buffer: an ordered map from internal key to value whose
// key and value bytes live in an arena. ApproximateMemoryUsage counts arena
// blocks plus every map node allocation, so it tracks real heap use closely.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string_view>
#include <vector>

#include "luda/block.h"
#include "luda/internal_key.h"
#include "luda/sst.h"

namespace luda {

class Arena {
 public:
  explicit Arena(size_t block_size = 64 << 10) : block_size_(block_size) {}
  Arena(const Arena&) = delete;
  Arena& operator=(const Arena&) = delete;

  char* Allocate(size_t bytes);
  size_t MemoryUsage() const { return usage_.load(std::memory_order_relaxed); }

 private:
  const size_t block_size_;
  std::vector<std::unique_ptr<char[]>> blocks_;
  char* ptr_ = nullptr;
  size_t remaining_ = 0;
  std::atomic<size_t> usage_{0};
};

// Allocator that reports every byte it hands out to a shared counter.
template <typename T>
struct CountingAllocator {
  using value_type = T;

  explicit CountingAllocator(std::atomic<size_t>* counter) : counter(counter) {}
  template <typename U>
  CountingAllocator(const CountingAllocator<U>& other) : counter(other.counter) {}

  T* allocate(size_t n) {
    counter->fetch_add(n * sizeof(T), std::memory_order_relaxed);
    return std::allocator<T>().allocate(n);
  }
  void deallocate(T* p, size_t n) {
    counter->fetch_sub(n * sizeof(T), std::memory_order_relaxed);
    std::allocator<T>().deallocate(p, n);
  }

  template <typename U>
  bool operator==(const CountingAllocator<U>& o) const { return counter == o.counter; }

  std::atomic<size_t>* counter;
};

class Memtable {
 public:
  // Arena blocks are sized to a fraction of the flush threshold so a small
  // memtable is not "full" after its first block.
  explicit Memtable(size_t flush_bytes = 4u << 20);
  Memtable(const Memtable&) = delete;
  Memtable& operator=(const Memtable&) = delete;

  // One writer at a time; concurrent with Get.
  void Add(uint64_t seq, ValueKind kind, std::string_view user_key,
           std::string_view value);

  // Newest entry for user_key (state kNotFound if none).
  LookupResult Get(std::string_view user_key) const;

  size_t ApproximateMemoryUsage() const;
  size_t entries() const;

  // Entries in internal-key order. Only meaningful once writes have stopped
  // (the table is frozen); views point into the arena.
  std::vector<EntryRef> Entries() const;

 private:
  using Map = std::map<std::string_view, std::string_view, InternalKeyLess,
                       CountingAllocator<std::pair<const std::string_view, std::string_view>>>;

  mutable std::shared_mutex mu_;
  std::atomic<size_t> node_bytes_{0};
  Arena arena_;
  Map map_;
};

}  // namespace luda
