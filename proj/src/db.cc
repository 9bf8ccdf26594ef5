#include "luda/db.h"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "luda/errors.h"

namespace luda {

namespace fs = std::filesystem;

namespace {

std::string ReadFileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read " + path);
  return bytes;
}

void WriteFileBytes(const std::string& path, const std::string& bytes, bool sync) {
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("open " + path + ": " + std::strerror(errno));
  const char* p = bytes.data();
  size_t left = bytes.size();
  while (left > 0) {
    ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      int err = errno;
      ::close(fd);
      throw IoError("write " + path + ": " + std::strerror(err));
    }
    p += n;
    left -= static_cast<size_t>(n);
  }
  if (sync && ::fdatasync(fd) != 0) {
    int err = errno;
    ::close(fd);
    throw IoError("sync " + path + ": " + std::strerror(err));
  }
  ::close(fd);
}

struct Range {
  std::string lo;
  std::string hi;
};

Range RangeOf(const std::vector<TableFilePtr>& files) {
  Range r;
  for (size_t i = 0; i < files.size(); ++i) {
    std::string_view lo = files[i]->meta().smallest.user_key();
    std::string_view hi = files[i]->meta().largest.user_key();
    if (i == 0 || lo < r.lo) r.lo.assign(lo);
    if (i == 0 || hi > r.hi) r.hi.assign(hi);
  }
  return r;
}

bool Contains(const std::vector<TableFilePtr>& files, const TableFilePtr& f) {
  return std::find(files.begin(), files.end(), f) != files.end();
}

// Level-0 files overlapping [lo, hi], closed under overlap so that no file
// left behind shares a key with one taken.
std::vector<TableFilePtr> L0Closure(const Version& v, std::vector<TableFilePtr> seed) {
  bool grew = true;
  while (grew) {
    grew = false;
    Range r = RangeOf(seed);
    for (const auto& f : v.Overlapping(0, r.lo, r.hi)) {
      if (!Contains(seed, f)) {
        seed.push_back(f);
        grew = true;
      }
    }
  }
  return seed;
}

std::vector<SstMeta> Metas(const std::vector<TableFilePtr>& files) {
  std::vector<SstMeta> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(f->meta());
  return out;
}

}  // namespace

const char* EngineModeName(EngineMode m) {
  return m == EngineMode::kInline ? "inline" : "offload";
}

EngineMode ParseEngineMode(std::string_view s) {
  if (s == "inline") return EngineMode::kInline;
  if (s == "offload") return EngineMode::kOffload;
  throw InvalidArgument("unknown engine '" + std::string(s) + "'");
}

double LevelQuota(const StoreOptions& o, int level) {
  return static_cast<double>(o.l1_bytes) * std::pow(10.0, level - 1);
}

double CompactionScore(const Version& v, const StoreOptions& o, int level) {
  if (level >= kNumLevels - 1) return 0;
  if (level == 0) {
    return static_cast<double>(v.files(0).size()) / o.l0_compaction_trigger;
  }
  return static_cast<double>(v.level_bytes(level)) / LevelQuota(o, level);
}

std::optional<PickedCompaction> PickCompaction(const Version& v, const StoreOptions& o,
                                               const std::vector<std::string>& pointers,
                                               bool force) {
  int level = -1;
  double best = force ? 0.0 : 1.0;
  for (int l = 0; l < kNumLevels - 1; ++l) {
    double s = CompactionScore(v, o, l);
    if (s >= best && !v.files(l).empty()) {
      best = s;
      level = l;
    }
  }
  if (level < 0) return std::nullopt;

  std::vector<TableFilePtr> lower;
  const auto& files = v.files(level);
  if (level == 0) {
    lower = L0Closure(v, {files.back()});  // oldest first
  } else {
    std::string_view ptr = static_cast<size_t>(level) < pointers.size()
                               ? std::string_view(pointers[level])
                               : std::string_view();
    auto it = files.begin();
    if (!ptr.empty()) {
      it = std::find_if(files.begin(), files.end(), [&](const TableFilePtr& f) {
        return f->meta().smallest.user_key() > ptr;
      });
      if (it == files.end()) it = files.begin();
    }
    lower = {*it};
  }

  Range r = RangeOf(lower);
  std::vector<TableFilePtr> upper = v.Overlapping(level + 1, r.lo, r.hi);

  // One expansion round: take more source files that fit inside the range
  // the upper set already covers, as long as that pulls in no new upper file.
  if (!upper.empty()) {
    Range u = RangeOf(upper);
    std::string wlo = std::min(r.lo, u.lo);
    std::string whi = std::max(r.hi, u.hi);
    std::vector<TableFilePtr> expanded = lower;
    for (const auto& f : v.Overlapping(level, wlo, whi)) {
      if (f->meta().smallest.user_key() >= wlo && f->meta().largest.user_key() <= whi &&
          !Contains(expanded, f)) {
        expanded.push_back(f);
      }
    }
    if (level == 0) expanded = L0Closure(v, std::move(expanded));
    if (expanded.size() > lower.size()) {
      Range e = RangeOf(expanded);
      if (v.Overlapping(level + 1, e.lo, e.hi).size() == upper.size()) {
        lower = std::move(expanded);
        r = e;
      }
    }
  }

  auto by_key = [](const TableFilePtr& a, const TableFilePtr& b) {
    return a->meta().smallest < b->meta().smallest;
  };
  if (level > 0) std::sort(lower.begin(), lower.end(), by_key);

  PickedCompaction p;
  p.job.source_level = level;
  p.job.target_level = level + 1;
  p.job.lower = Metas(lower);
  p.job.upper = Metas(upper);
  Range all = r;
  if (!upper.empty()) {
    Range u = RangeOf(upper);
    all.lo = std::min(all.lo, u.lo);
    all.hi = std::max(all.hi, u.hi);
  }
  if (level + 2 < kNumLevels) p.job.grandparents = Metas(v.Overlapping(level + 2, all.lo, all.hi));
  bool deeper_empty = true;
  for (int l = level + 2; l < kNumLevels; ++l) deeper_empty = deeper_empty && v.files(l).empty();
  p.job.tombstones.bottommost = deeper_empty;
  p.lower = std::move(lower);
  p.upper = std::move(upper);
  return p;
}

VersionEdit MakeCompactionEdit(const CompactionJob& job, const std::vector<SstMeta>& outputs) {
  VersionEdit edit;
  for (const auto& m : job.lower) edit.removed.push_back({job.source_level, m.file_id});
  for (const auto& m : job.upper) edit.removed.push_back({job.target_level, m.file_id});
  for (const auto& m : outputs) {
    SstMeta meta = m;
    meta.level = job.target_level;
    edit.added.push_back({job.target_level, std::move(meta)});
  }
  return edit;
}

// ---------------------------------------------------------------------------

Store::Store(std::string dir, StoreOptions options)
    : dir_(std::move(dir)),
      options_(std::move(options)),
      compact_pointers_(kNumLevels) {}

std::unique_ptr<Store> Store::Open(const std::string& dir, StoreOptions options) {
  if (options.memtable_bytes == 0 || options.l0_compaction_trigger <= 0 ||
      options.l0_slowdown_trigger < options.l0_compaction_trigger ||
      options.l0_stop_trigger < options.l0_slowdown_trigger || options.l1_bytes == 0) {
    throw InvalidArgument("inconsistent store options");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("create " + dir + ": " + ec.message());
  std::unique_ptr<Store> s(new Store(dir, std::move(options)));
  s->Recover();
  if (s->options_.engine == EngineMode::kOffload) {
    s->device_ = std::make_unique<Device>(s->options_.device);
  }
  s->mem_ = std::make_shared<Memtable>(s->options_.memtable_bytes);
  s->flush_thread_ = std::thread([p = s.get()] { p->FlushLoop(); });
  s->compaction_thread_ = std::thread([p = s.get()] { p->CompactionLoop(); });
  return s;
}

void Store::Recover() {
  std::string manifest = dir_ + "/MANIFEST";
  std::map<uint64_t, SstMeta> live;
  if (fs::exists(manifest)) {
    for (const VersionEdit& e : ReadManifest(manifest)) {
      for (const auto& r : e.removed) live.erase(r.file_id);
      for (const auto& a : e.added) {
        SstMeta m = a.meta;
        m.level = a.level;
        live[m.file_id] = std::move(m);
      }
      if (e.last_seq) last_seq_ = std::max(last_seq_, *e.last_seq);
      if (e.next_file_id) next_file_id_ = std::max(next_file_id_, *e.next_file_id);
      for (const auto& [level, key] : e.compact_pointers) compact_pointers_[level] = key;
    }
  }

  VersionEdit all;
  std::vector<TableFilePtr> handles;
  for (const auto& [id, m] : live) {
    std::string path = TableFileName(dir_, id);
    handles.push_back(std::make_shared<TableFile>(m, path, Table::Open(MakeFileSource(path))));
    all.added.push_back({m.level, m});
    next_file_id_ = std::max(next_file_id_, id + 1);
  }
  Version empty;
  VersionBuilder b(empty);
  b.Apply(all, handles);
  current_ = b.Finish();
  current_->CheckInvariants();

  // Leftovers from an interrupted flush or compaction.
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().extension() != ".sst") continue;
    uint64_t id = 0;
    try {
      id = std::stoull(entry.path().stem().string());
    } catch (const std::exception&) {
      continue;
    }
    if (!live.count(id)) {
      spdlog::info("removing orphan table {}", entry.path().string());
      std::error_code ec;
      fs::remove(entry.path(), ec);
    }
  }

  manifest_ = std::make_unique<ManifestWriter>(manifest, options_.sync);
  VersionEdit head;
  head.last_seq = last_seq_;
  head.next_file_id = next_file_id_;
  manifest_->Append(head);
}

Store::~Store() {
  try {
    Close();
  } catch (const std::exception& e) {
    spdlog::error("close failed: {}", e.what());
  }
}

void Store::Put(std::string_view key, std::string_view value) {
  Write(ValueKind::kPut, key, value);
}

void Store::Delete(std::string_view key) { Write(ValueKind::kDelete, key, {}); }

void Store::Write(ValueKind kind, std::string_view key, std::string_view value) {
  std::lock_guard<std::mutex> wl(write_mu_);
  std::unique_lock<std::mutex> lock(mu_);
  MakeRoomForWrite(lock);
  uint64_t seq = ++last_seq_;
  if (kind == ValueKind::kPut) {
    stats_.puts++;
  } else {
    stats_.deletes++;
  }
  std::shared_ptr<Memtable> mem = mem_;
  lock.unlock();
  // mem_ only changes under write_mu_, which we hold.
  mem->Add(seq, kind, key, value);
}

void Store::MakeRoomForWrite(std::unique_lock<std::mutex>& lock) {
  bool slowed = false;
  while (true) {
    if (closing_ || closed_) throw StoreClosed("store is closed");
    size_t l0 = current_->files(0).size();
    if (l0 >= static_cast<size_t>(options_.l0_stop_trigger)) {
      if (options_.stall == StallPolicy::kReject) {
        stats_.rejected_writes++;
        throw WriteStall("level 0 has " + std::to_string(l0) + " files");
      }
      stats_.stalls++;
      auto t0 = std::chrono::steady_clock::now();
      cv_.wait(lock, [&] {
        return closing_ || current_->files(0).size() < static_cast<size_t>(options_.l0_stop_trigger);
      });
      stats_.stall_us += std::chrono::duration<double, std::micro>(
                             std::chrono::steady_clock::now() - t0).count();
      continue;
    }
    if (l0 >= static_cast<size_t>(options_.l0_slowdown_trigger) && !slowed) {
      slowed = true;
      stats_.slowdowns++;
      lock.unlock();
      std::this_thread::sleep_for(options_.slowdown_delay);
      lock.lock();
      continue;
    }
    if (mem_->ApproximateMemoryUsage() < options_.memtable_bytes) return;
    if (imm_) {
      stats_.memtable_waits++;
      auto t0 = std::chrono::steady_clock::now();
      cv_.wait(lock, [&] { return closing_ || !imm_; });
      stats_.stall_us += std::chrono::duration<double, std::micro>(
                             std::chrono::steady_clock::now() - t0).count();
      continue;
    }
    imm_ = std::move(mem_);
    mem_ = std::make_shared<Memtable>(options_.memtable_bytes);
    cv_.notify_all();
    return;
  }
}

std::optional<std::string> Store::Get(std::string_view key) const {
  std::shared_ptr<Memtable> mem, imm;
  VersionPtr v;
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (closed_) throw StoreClosed("store is closed");
    mem = mem_;
    imm = imm_;
    v = current_;
  }
  gets_.fetch_add(1, std::memory_order_relaxed);
  LookupResult r = mem->Get(key);
  if (r.state == LookupState::kNotFound && imm) r = imm->Get(key);
  if (r.state == LookupState::kNotFound) r = v->Get(key);
  if (r.state == LookupState::kFound) return std::move(r.value);
  return std::nullopt;
}

void Store::Flush() {
  std::lock_guard<std::mutex> wl(write_mu_);
  std::unique_lock<std::mutex> lock(mu_);
  if (closed_) throw StoreClosed("store is closed");
  cv_.wait(lock, [&] { return !imm_; });
  if (mem_->entries() > 0) {
    imm_ = std::move(mem_);
    mem_ = std::make_shared<Memtable>(options_.memtable_bytes);
    cv_.notify_all();
    cv_.wait(lock, [&] { return !imm_; });
  }
}

void Store::WaitForIdle() {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait(lock, [&] {
    return closed_ || (!imm_ && !compacting_ &&
                       (!options_.auto_compaction || !NeedsCompaction(*current_)));
  });
}

bool Store::CompactOnce(bool force) {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait(lock, [&] { return closed_ || !compacting_; });
  if (closed_) throw StoreClosed("store is closed");
  std::optional<PickedCompaction> picked =
      PickCompaction(*current_, options_, compact_pointers_, force);
  if (!picked) return false;
  picked->job.job_id = next_job_id_++;
  compacting_ = true;
  lock.unlock();
  try {
    RunJob(std::move(*picked));
  } catch (...) {
    lock.lock();
    compacting_ = false;
    cv_.notify_all();
    throw;
  }
  lock.lock();
  compacting_ = false;
  cv_.notify_all();
  return true;
}

void Store::Close() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (closing_ || closed_) return;
    closing_ = true;
    cv_.notify_all();
  }
  {
    // Stalled writers see closing_ and leave, releasing write_mu_.
    std::lock_guard<std::mutex> wl(write_mu_);
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return !imm_; });
    if (mem_->entries() > 0) {
      imm_ = std::move(mem_);
      mem_ = std::make_shared<Memtable>(options_.memtable_bytes);
      cv_.notify_all();
      cv_.wait(lock, [&] { return !imm_; });
    }
    closed_ = true;
    cv_.notify_all();
  }
  if (flush_thread_.joinable()) flush_thread_.join();
  if (compaction_thread_.joinable()) compaction_thread_.join();
}

VersionPtr Store::current() const {
  std::lock_guard<std::mutex> lock(mu_);
  return current_;
}

StoreStats Store::stats() const {
  std::lock_guard<std::mutex> lock(mu_);
  StoreStats s = stats_;
  s.gets = gets_.load(std::memory_order_relaxed);
  return s;
}

std::vector<CompactionStats> Store::compaction_log() const {
  std::lock_guard<std::mutex> lock(mu_);
  return log_;
}

uint64_t Store::last_sequence() const {
  std::lock_guard<std::mutex> lock(mu_);
  return last_seq_;
}

bool Store::NeedsCompaction(const Version& v) const {
  for (int l = 0; l < kNumLevels - 1; ++l) {
    if (CompactionScore(v, options_, l) >= 1.0) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------

TableFilePtr Store::InstallFile(const std::string& bytes, SstMeta meta) {
  std::string path = TableFileName(dir_, meta.file_id);
  meta.file_size = bytes.size();
  WriteFileBytes(path, bytes, options_.sync);
  try {
    return std::make_shared<TableFile>(meta, path, Table::Open(MakeFileSource(path)));
  } catch (...) {
    ::unlink(path.c_str());
    throw;
  }
}

void Store::LogAndApply(VersionEdit& edit, const std::vector<TableFilePtr>& new_files) {
  edit.last_seq = last_seq_;
  edit.next_file_id = next_file_id_;
  VersionBuilder b(*current_);
  b.Apply(edit, new_files);
  VersionPtr v = b.Finish();
  if (options_.check_invariants) v->CheckInvariants();
  manifest_->Append(edit);
  current_ = std::move(v);
  cv_.notify_all();
}

std::vector<TableFilePtr> Store::WriteMemtable(const Memtable& mem, VersionEdit* edit) {
  struct Piece {
    std::string bytes;
    SstMeta meta;
  };
  std::vector<Piece> pieces;
  std::vector<EntryRef> entries = mem.Entries();
  size_t i = 0;
  while (i < entries.size()) {
    TableBuilder builder(options_.sst);
    for (; i < entries.size(); ++i) {
      try {
        builder.Add(entries[i].key, entries[i].value);
      } catch (const SizeOverflow&) {
        break;  // start the next file with this entry
      }
    }
    Piece p;
    p.meta.smallest = InternalKey::FromEncoded(builder.smallest());
    p.meta.largest = InternalKey::FromEncoded(builder.largest());
    p.meta.entries = builder.entries();
    p.bytes = builder.Finish();
    pieces.push_back(std::move(p));
  }

  // A cut can fall between two versions of one user key. Earlier pieces hold
  // the newer versions, so they get the higher ids and sort first in level 0.
  uint64_t base;
  {
    std::lock_guard<std::mutex> lock(mu_);
    base = next_file_id_;
    next_file_id_ += pieces.size();
  }
  std::vector<TableFilePtr> files;
  try {
    for (size_t k = 0; k < pieces.size(); ++k) {
      pieces[k].meta.file_id = base + (pieces.size() - 1 - k);
      TableFilePtr f = InstallFile(pieces[k].bytes, pieces[k].meta);
      edit->added.push_back({0, f->meta()});
      files.push_back(std::move(f));
    }
  } catch (...) {
    for (const auto& f : files) f->MarkObsolete();
    throw;
  }
  return files;
}

void Store::FlushLoop() {
  std::unique_lock<std::mutex> lock(mu_);
  int failures = 0;
  while (true) {
    cv_.wait(lock, [&] { return imm_ || closed_; });
    if (!imm_) break;
    std::shared_ptr<Memtable> imm = imm_;
    lock.unlock();

    VersionEdit edit;
    std::vector<TableFilePtr> files;
    std::string error;
    try {
      files = WriteMemtable(*imm, &edit);
    } catch (const std::exception& e) {
      error = e.what();
    }
    lock.lock();
    if (error.empty()) {
      try {
        LogAndApply(edit, files);
      } catch (const std::exception& e) {
        for (const auto& f : files) f->MarkObsolete();
        error = e.what();
      }
    }
    if (!error.empty()) {
      // The memtable stays frozen and is retried; writers wait behind it.
      bg_error_ = error;
      spdlog::error("flush failed (attempt {}): {}", ++failures, error);
      lock.unlock();
      std::this_thread::sleep_for(std::chrono::milliseconds(std::min(1000, 10 << std::min(failures, 6))));
      lock.lock();
      continue;
    }
    failures = 0;
    bg_error_.clear();
    stats_.flushes++;
    for (const auto& f : files) stats_.flush_bytes += f->meta().file_size;
    imm_.reset();
    cv_.notify_all();
  }
}

void Store::CompactionLoop() {
  std::unique_lock<std::mutex> lock(mu_);
  while (true) {
    cv_.wait(lock, [&] {
      return closed_ || (options_.auto_compaction && !compacting_ && NeedsCompaction(*current_));
    });
    if (closed_) break;
    std::optional<PickedCompaction> picked = PickCompaction(*current_, options_, compact_pointers_);
    if (!picked) break;  // unreachable: NeedsCompaction implies a job
    picked->job.job_id = next_job_id_++;
    compacting_ = true;
    lock.unlock();
    try {
      RunJob(std::move(*picked));
    } catch (const std::exception& e) {
      spdlog::error("compaction could not be installed: {}", e.what());
    }
    lock.lock();
    compacting_ = false;
    cv_.notify_all();
  }
}

void Store::RunJob(PickedCompaction picked) {
  const CompactionJob& job = picked.job;
  if (options_.on_compaction_start) options_.on_compaction_start(job);
  std::unordered_map<uint64_t, std::string> paths;
  for (const auto& f : picked.lower) paths[f->meta().file_id] = f->path();
  for (const auto& f : picked.upper) paths[f->meta().file_id] = f->path();
  FileLoader load = [&](const SstMeta& m) { return ReadFileBytes(paths.at(m.file_id)); };
  CompactionOptions copts;
  copts.sst = options_.sst;
  copts.max_grandparent_overlap = options_.max_grandparent_overlap;

  CompactionResult result;
  std::vector<TableFilePtr> outputs;
  try {
    if (options_.engine == EngineMode::kOffload) {
      result = RunCompaction(job, load, *device_, copts);
    } else {
      result = ReferenceCompact(job, load, copts);
    }
    for (auto& out : result.outputs) {
      {
        std::lock_guard<std::mutex> lock(mu_);
        out.meta.file_id = next_file_id_++;
      }
      out.meta.level = job.target_level;
      outputs.push_back(InstallFile(out.bytes, out.meta));
      out.bytes.clear();
      out.bytes.shrink_to_fit();
    }
  } catch (const Corruption& e) {
    for (const auto& f : outputs) f->MarkObsolete();
    Quarantine(picked, e.what());
    return;
  } catch (const std::exception& e) {
    for (const auto& f : outputs) f->MarkObsolete();
    spdlog::error("compaction job {} failed: {}", job.job_id, e.what());
    {
      std::lock_guard<std::mutex> lock(mu_);
      bg_error_ = e.what();
    }
    // Back off before the same job is picked again.
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    return;
  }

  std::vector<SstMeta> metas;
  for (const auto& f : outputs) metas.push_back(f->meta());
  VersionEdit edit = MakeCompactionEdit(job, metas);
  std::string pointer(RangeOf(picked.lower).hi);
  edit.compact_pointers.emplace_back(job.source_level, pointer);

  std::lock_guard<std::mutex> lock(mu_);
  try {
    LogAndApply(edit, outputs);
  } catch (...) {
    for (const auto& f : outputs) f->MarkObsolete();
    throw;
  }
  compact_pointers_[job.source_level] = pointer;
  const CompactionStats& s = result.stats;
  stats_.compactions++;
  stats_.compaction_bytes_read += s.input_bytes;
  stats_.compaction_bytes_written += s.output_bytes;
  if (s.fell_back) stats_.fallbacks++;
  log_.push_back(s);
  spdlog::debug("job {} L{}: {} files {} B -> {} files {} B ({}{})", s.job_id, s.source_level,
                s.input_files, s.input_bytes, s.output_files, s.output_bytes, s.engine,
                s.fell_back ? ", fell back" : "");
}

void Store::Quarantine(const PickedCompaction& picked, const std::string& reason) {
  // Find the input(s) that fail verification on their own.
  std::vector<std::pair<int, TableFilePtr>> bad;
  auto check = [&](int level, const TableFilePtr& f) {
    try {
      auto t = Table::Open(MakeFileSource(f->path()));
      for (size_t i = 0; i < t->index().size(); ++i) t->ReadBlock(i);
    } catch (const Error&) {
      bad.emplace_back(level, f);
    }
  };
  for (const auto& f : picked.lower) check(picked.job.source_level, f);
  for (const auto& f : picked.upper) check(picked.job.target_level, f);
  if (bad.empty()) {
    for (const auto& f : picked.lower) bad.emplace_back(picked.job.source_level, f);
    for (const auto& f : picked.upper) bad.emplace_back(picked.job.target_level, f);
  }

  std::string qdir = dir_ + "/quarantine";
  std::error_code ec;
  fs::create_directories(qdir, ec);
  VersionEdit edit;
  for (const auto& [level, f] : bad) {
    std::string dst = qdir + "/" + std::to_string(f->meta().file_id) + ".sst";
    fs::rename(f->path(), dst, ec);
    spdlog::error("job {}: quarantined table {} (level {}): {}", picked.job.job_id,
                  f->meta().file_id, level, reason);
    edit.removed.push_back({level, f->meta().file_id});
  }
  std::lock_guard<std::mutex> lock(mu_);
  LogAndApply(edit, {});
  stats_.quarantined_files += bad.size();
}

}  // namespace luda
