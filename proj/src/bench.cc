#include "luda/bench.h"

#include <spdlog/spdlog.h>

#include <array>
#include <atomic>
#include <filesystem>
#include <functional>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "luda/errors.h"
#include "luda/hash.h"

namespace luda {

namespace {

using Clock = std::chrono::steady_clock;

double MicrosSince(Clock::time_point t0) {
  return std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
}

// Written values are remembered by hash. Writes and sampled reads hold a
// per-key stripe lock so a check never races a write of its own key.
class Shadow {
 public:
  std::mutex& Stripe(std::string_view key) { return stripes_[Hash(key) % kStripes]; }

  void Set(const std::string& key, std::string_view value) {
    std::lock_guard<std::mutex> lock(map_mu_);
    map_[key] = Hash(value);
  }

  std::optional<uint64_t> Expected(const std::string& key) {
    std::lock_guard<std::mutex> lock(map_mu_);
    auto it = map_.find(key);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  static uint64_t Hash(std::string_view s) { return Hash64(s, 0x5eed); }

 private:
  static constexpr size_t kStripes = 1024;
  std::array<std::mutex, kStripes> stripes_;
  std::mutex map_mu_;
  std::unordered_map<std::string, uint64_t> map_;
};

class Runner {
 public:
  Runner(const BenchConfig& cfg, Store* store) : cfg_(cfg), store_(store) {}

  void Phase(const std::string& phase, BenchResult* out) {
    LatencyRecorder rec;
    Device* dev = store_->device();
    std::function<int64_t()> busy;
    if (dev) busy = [dev] { return dev->Stats().busy_ns; };
    TimelineRecorder timeline(&rec, cfg_.window, busy);
    StoreStats before = store_->stats();
    double cpu0 = ProcessCpuSeconds();
    std::atomic<uint64_t> ops{0};
    checked_ = 0;
    mismatches_ = 0;
    auto t0 = Clock::now();
    timeline.Start();
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(cfg_.threads);
    for (int p = 0; p < cfg_.threads; ++p) {
      workers.emplace_back([&, p] {
        try {
          ops += phase == "load" ? LoadPart(p, &rec) : RunPart(p, &rec);
        } catch (...) {
          errors[p] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    timeline.Stop();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    StoreStats after = store_->stats();

    PhaseSummary s;
    s.phase = phase;
    s.mode = EngineModeName(cfg_.store.engine);
    s.stress = cfg_.stress;
    s.ops = ops.load();
    s.seconds = seconds;
    s.read = rec.Summary(LatencyKind::kRead);
    s.write = rec.Summary(LatencyKind::kWrite);
    s.cpu_fraction = (ProcessCpuSeconds() - cpu0) / (seconds * HostCores());
    s.flushes = after.flushes - before.flushes;
    s.compactions = after.compactions - before.compactions;
    s.compaction_bytes_read = after.compaction_bytes_read - before.compaction_bytes_read;
    s.compaction_bytes_written = after.compaction_bytes_written - before.compaction_bytes_written;
    s.fallbacks = after.fallbacks - before.fallbacks;
    s.stalls = after.stalls - before.stalls;
    s.checked_reads = checked_.load();
    s.mismatches = mismatches_.load();
    out->phases.push_back(s);
    out->timelines.push_back({phase, timeline.windows()});
  }

 private:
  uint64_t LoadPart(int p, LatencyRecorder* rec) {
    LoadGenerator gen(cfg_.spec, p, cfg_.threads);
    Op op;
    uint64_t n = 0;
    while (gen.Next(&op)) {
      Write(op, rec);
      ++n;
    }
    return n;
  }

  uint64_t RunPart(int p, LatencyRecorder* rec) {
    RunGenerator gen(cfg_.spec, p, cfg_.threads);
    Op op;
    uint64_t n = 0;
    uint64_t reads = 0;
    while (gen.Next(&op)) {
      ++n;
      if (op.kind != OpKind::kRead) {
        Write(op, rec);
        continue;
      }
      if (++reads % kShadowSampleEvery != 0) {
        auto t0 = Clock::now();
        store_->Get(op.key);
        rec->Record(LatencyKind::kRead, MicrosSince(t0));
        continue;
      }
      std::lock_guard<std::mutex> lock(shadow_.Stripe(op.key));
      auto t0 = Clock::now();
      std::optional<std::string> got = store_->Get(op.key);
      rec->Record(LatencyKind::kRead, MicrosSince(t0));
      std::optional<uint64_t> want = shadow_.Expected(op.key);
      ++checked_;
      bool ok = got ? want && Shadow::Hash(*got) == *want : !want;
      if (!ok) {
        ++mismatches_;
        spdlog::error("shadow check failed for key {}: store has {}, expected {}", op.key,
                      got ? "a " + std::to_string(got->size()) + "-byte value" : "nothing",
                      want ? "the last written value" : "nothing");
      }
    }
    return n;
  }

  void Write(const Op& op, LatencyRecorder* rec) {
    std::lock_guard<std::mutex> lock(shadow_.Stripe(op.key));
    auto t0 = Clock::now();
    store_->Put(op.key, op.value);
    rec->Record(LatencyKind::kWrite, MicrosSince(t0));
    shadow_.Set(op.key, op.value);
  }

  const BenchConfig& cfg_;
  Store* store_;
  Shadow shadow_;
  std::atomic<uint64_t> checked_{0};
  std::atomic<uint64_t> mismatches_{0};
};

}  // namespace

uint64_t BenchResult::mismatches() const {
  uint64_t n = 0;
  for (const auto& p : phases) n += p.mismatches;
  return n;
}

const PhaseSummary* BenchResult::phase(const std::string& name) const {
  for (const auto& p : phases) {
    if (p.phase == name) return &p;
  }
  return nullptr;
}

const PhaseTimeline* BenchResult::timeline(const std::string& name) const {
  for (const auto& t : timelines) {
    if (t.phase == name) return &t;
  }
  return nullptr;
}

BenchResult RunBench(const BenchConfig& cfg) {
  cfg.spec.Validate();
  if (cfg.threads < 1) throw InvalidArgument("bench needs at least one client thread");
  if (std::filesystem::exists(cfg.db) && !std::filesystem::is_empty(cfg.db)) {
    throw InvalidArgument("bench directory " + cfg.db + " is not empty");
  }
  std::unique_ptr<StressInjector> stress;
  if (cfg.stress > 0) stress = std::make_unique<StressInjector>(StressSpec{cfg.stress});

  BenchResult result;
  auto store = Store::Open(cfg.db, cfg.store);
  Runner runner(cfg, store.get());
  runner.Phase("load", &result);
  if (cfg.spec.op_count > 0) runner.Phase("run", &result);
  if (stress) stress->Stop();
  result.jobs = store->compaction_log();
  store->Close();
  return result;
}

}  // namespace luda
