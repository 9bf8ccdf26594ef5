#pragma once

// The store: memtable, level 0..6 on disk, a flush thread and a compaction
// thread. There is no write-ahead log; a write is durable once the memtable
// holding it has been flushed (Close flushes).

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "luda/compaction.h"
#include "luda/device.h"
#include "luda/memtable.h"
#include "luda/version.h"

namespace luda {

enum class EngineMode { kInline, kOffload };
enum class StallPolicy { kBlock, kReject };

const char* EngineModeName(EngineMode m);
EngineMode ParseEngineMode(std::string_view s);  // "inline" | "offload"

struct StoreOptions {
  size_t memtable_bytes = 4u << 20;
  SstOptions sst;
  int max_grandparent_overlap = 10;

  int l0_compaction_trigger = 4;
  int l0_slowdown_trigger = 8;
  int l0_stop_trigger = 12;
  // Quota of level 1; each deeper level gets ten times the one above.
  uint64_t l1_bytes = 10u << 20;
  std::chrono::microseconds slowdown_delay{1000};

  EngineMode engine = EngineMode::kOffload;
  DeviceOptions device;
  StallPolicy stall = StallPolicy::kBlock;

  // fdatasync new tables and MANIFEST records.
  bool sync = false;
  // Walk every published version for level invariants.
  bool check_invariants = true;
  // When false only CompactOnce runs compactions.
  bool auto_compaction = true;
  // Called on the compacting thread before a job starts (tests).
  std::function<void(const CompactionJob&)> on_compaction_start;
};

struct StoreStats {
  uint64_t puts = 0;
  uint64_t deletes = 0;
  uint64_t gets = 0;
  uint64_t flushes = 0;
  uint64_t flush_bytes = 0;
  uint64_t compactions = 0;
  uint64_t compaction_bytes_read = 0;
  uint64_t compaction_bytes_written = 0;
  uint64_t fallbacks = 0;
  uint64_t quarantined_files = 0;
  uint64_t slowdowns = 0;
  uint64_t stalls = 0;          // writes that hit the L0 stop trigger
  uint64_t rejected_writes = 0;
  uint64_t memtable_waits = 0;  // writes that waited for a flush to finish
  double stall_us = 0;
};

// Compaction scoring and job selection, independent of a running store.
double LevelQuota(const StoreOptions& o, int level);
// score(0) = files / trigger, score(i) = bytes / quota(i); last level 0.
double CompactionScore(const Version& v, const StoreOptions& o, int level);

struct PickedCompaction {
  CompactionJob job;
  std::vector<TableFilePtr> lower;
  std::vector<TableFilePtr> upper;
};

// `pointers[level]` holds the largest user key of the previous job from that
// level (round-robin cursor); empty means start from the first file. With
// `force`, a level under quota is still picked if nothing is over.
std::optional<PickedCompaction> PickCompaction(const Version& v, const StoreOptions& o,
                                               const std::vector<std::string>& pointers,
                                               bool force = false);

// Version edit that replaces a job's inputs with its outputs at the target.
VersionEdit MakeCompactionEdit(const CompactionJob& job, const std::vector<SstMeta>& outputs);

class Store {
 public:
  // Creates the directory if needed and replays its MANIFEST. Table files
  // no version refers to are removed.
  static std::unique_ptr<Store> Open(const std::string& dir, StoreOptions options = {});
  ~Store();

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  // Safe to call from several threads (writes are serialized internally).
  // Throw StoreClosed after Close, WriteStall under StallPolicy::kReject.
  void Put(std::string_view key, std::string_view value);
  void Delete(std::string_view key);
  std::optional<std::string> Get(std::string_view key) const;

  // Freeze the active memtable (if non-empty) and wait until it is on disk.
  void Flush();
  // Wait until no flush is pending and no level needs compaction.
  void WaitForIdle();
  // Run one compaction on the calling thread. Returns false if there was
  // nothing to do.
  bool CompactOnce(bool force = false);
  // Flush, stop the background threads. Idempotent.
  void Close();

  VersionPtr current() const;
  StoreStats stats() const;
  std::vector<CompactionStats> compaction_log() const;
  Device* device() { return device_.get(); }
  const StoreOptions& options() const { return options_; }
  const std::string& dir() const { return dir_; }
  uint64_t last_sequence() const;

 private:
  Store(std::string dir, StoreOptions options);

  void Recover();
  void Write(ValueKind kind, std::string_view key, std::string_view value);
  void MakeRoomForWrite(std::unique_lock<std::mutex>& lock);
  bool NeedsCompaction(const Version& v) const;

  void FlushLoop();
  void CompactionLoop();
  std::vector<TableFilePtr> WriteMemtable(const Memtable& mem, VersionEdit* edit);
  void RunJob(PickedCompaction picked);
  void Quarantine(const PickedCompaction& picked, const std::string& reason);

  TableFilePtr InstallFile(const std::string& bytes, SstMeta meta);
  // Requires mu_. Logs the edit, then publishes the new version.
  void LogAndApply(VersionEdit& edit, const std::vector<TableFilePtr>& new_files);

  const std::string dir_;
  const StoreOptions options_;
  std::unique_ptr<Device> device_;
  std::unique_ptr<ManifestWriter> manifest_;

  std::mutex write_mu_;  // serializes writers

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::shared_ptr<Memtable> mem_;
  std::shared_ptr<Memtable> imm_;
  VersionPtr current_;
  uint64_t last_seq_ = 0;
  uint64_t next_file_id_ = 1;
  uint64_t next_job_id_ = 1;
  std::vector<std::string> compact_pointers_;
  bool compacting_ = false;
  bool closing_ = false;
  bool closed_ = false;
  std::string bg_error_;
  StoreStats stats_;
  std::vector<CompactionStats> log_;
  mutable std::atomic<uint64_t> gets_{0};

  std::thread flush_thread_;
  std::thread compaction_thread_;
};

}  // namespace luda
