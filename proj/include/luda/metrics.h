#pragma once

// Latency, timeline and report plumbing for benchmark runs. Column layouts
// of the CSV files are described in docs/metrics.md.

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "luda/compaction.h"

namespace luda {

// Log-scaled buckets over [1 us, 10 s]; neighbouring bounds differ by 1%, so
// the geometric midpoint of a bucket is within 0.5% of anything in it.
class HistogramLayout {
 public:
  static constexpr double kMinMicros = 1.0;
  static constexpr double kMaxMicros = 1e7;
  static constexpr double kRatio = 1.01;
  static int buckets();
  // Clamps; sets *clamped when the value was outside the range.
  static int Index(double micros, bool* clamped);
  static double Lower(int bucket);
  static double Upper(int bucket);
  static double Mid(int bucket);
};

// Plain (non-concurrent) histogram, the merged form of the shards.
struct Histogram {
  std::vector<uint64_t> counts = std::vector<uint64_t>(HistogramLayout::buckets());
  uint64_t count = 0;
  uint64_t overflow = 0;  // values clamped to a boundary bucket
  double sum = 0;
  double min = 0;
  double max = 0;

  // Nearest-rank quantile, reported as the bucket midpoint clamped to the
  // observed [min, max]. nullopt when empty.
  std::optional<double> Quantile(double q) const;
  std::optional<double> Mean() const;
  // this - earlier, for two cumulative snapshots of one recorder. min/max of
  // the difference are bucket bounds, not exact.
  Histogram Minus(const Histogram& earlier) const;
};

enum class LatencyKind { kRead = 0, kWrite = 1 };
constexpr int kLatencyKinds = 2;

struct LatencySummary {
  uint64_t count = 0;
  uint64_t overflow = 0;
  std::optional<double> mean, p50, p99, p999;

  static LatencySummary Of(const Histogram& h);
};

// Thread-safe recorder. Threads hash onto a fixed set of shards whose buckets
// are relaxed atomics, so recording never locks or allocates.
class LatencyRecorder {
 public:
  LatencyRecorder();
  ~LatencyRecorder();
  LatencyRecorder(const LatencyRecorder&) = delete;
  LatencyRecorder& operator=(const LatencyRecorder&) = delete;

  void Record(LatencyKind kind, double micros);
  Histogram Snapshot(LatencyKind kind) const;
  LatencySummary Summary(LatencyKind kind) const { return LatencySummary::Of(Snapshot(kind)); }

 private:
  struct Shard;
  static constexpr int kShards = 16;
  std::array<std::unique_ptr<Shard>, kShards * kLatencyKinds> shards_;
};

struct TimelineWindow {
  int index = 0;
  double start_s = 0;
  double end_s = 0;
  uint64_t reads = 0;
  uint64_t writes = 0;
  std::optional<double> read_p99;
  std::optional<double> write_p99;
  double throughput = 0;       // ops/s over the window
  double cpu_fraction = 0;     // process CPU / (wall x cores)
  double device_utilization = 0;
};

// Cuts a recorder into contiguous fixed-length windows. A ticker thread takes
// a cumulative snapshot at each boundary; a window is the difference between
// two snapshots. Stop() closes the last (possibly short) window, so a run of
// duration d yields ceil(d / window) rows.
class TimelineRecorder {
 public:
  // device_busy_ns returns cumulative device busy time; may be empty.
  TimelineRecorder(const LatencyRecorder* recorder,
                   std::chrono::milliseconds window = std::chrono::seconds(1),
                   std::function<int64_t()> device_busy_ns = {}, int cores = 0);
  ~TimelineRecorder();

  void Start();
  void Stop();
  std::vector<TimelineWindow> windows() const;
  std::chrono::milliseconds window() const { return window_; }

 private:
  struct Mark {
    std::chrono::steady_clock::time_point at;
    Histogram hist[kLatencyKinds];
    double cpu_s = 0;
    int64_t busy_ns = 0;
  };
  Mark Take() const;
  void Close(const Mark& next);
  void Loop();

  const LatencyRecorder* recorder_;
  std::chrono::milliseconds window_;
  std::function<int64_t()> device_busy_ns_;
  int cores_;
  std::chrono::steady_clock::time_point start_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool running_ = false;
  bool stop_ = false;
  Mark last_;
  std::vector<TimelineWindow> windows_;
  std::thread ticker_;
};

// One row of summary.csv.
struct PhaseSummary {
  std::string phase;  // "load" or "run"
  std::string mode;   // engine mode name
  double stress = 0;
  uint64_t ops = 0;
  double seconds = 0;
  LatencySummary read;
  LatencySummary write;
  double cpu_fraction = 0;
  uint64_t flushes = 0;
  uint64_t compactions = 0;
  uint64_t compaction_bytes_read = 0;
  uint64_t compaction_bytes_written = 0;
  uint64_t fallbacks = 0;
  uint64_t stalls = 0;
  uint64_t checked_reads = 0;
  uint64_t mismatches = 0;

  double throughput() const { return seconds > 0 ? ops / seconds : 0; }
};

struct PhaseTimeline {
  std::string phase;
  std::vector<TimelineWindow> windows;
};

std::string SummaryCsv(const std::vector<PhaseSummary>& phases);
std::string TimelineCsv(const std::vector<PhaseTimeline>& timelines);
std::string CompactionJobsCsv(const std::vector<CompactionStats>& jobs);

// Writes summary.csv, timeline.csv and compaction_jobs.csv into dir
// (created if missing). Throws IoError.
void WriteReport(const std::string& dir, const std::vector<PhaseSummary>& phases,
                 const std::vector<PhaseTimeline>& timelines,
                 const std::vector<CompactionStats>& jobs);

}  // namespace luda
