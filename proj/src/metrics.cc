#include "luda/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "luda/errors.h"
#include "luda/workload.h"

namespace luda {

namespace {

const double kLogRatio = std::log(HistogramLayout::kRatio);
const int kBuckets = static_cast<int>(
    std::ceil(std::log(HistogramLayout::kMaxMicros / HistogramLayout::kMinMicros) / kLogRatio));

// Sums, minima and maxima are kept in integer nanoseconds so the shards can
// use plain atomic adds.
uint64_t ToNs(double micros) {
  if (!(micros > 0)) return 0;
  return static_cast<uint64_t>(std::llround(micros * 1000.0));
}

std::string Num(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string Opt(const std::optional<double>& v) { return v ? Num(*v, 2) : "NA"; }

void WriteFile(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("open " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("write " + path.string());
}

}  // namespace

int HistogramLayout::buckets() { return kBuckets; }

int HistogramLayout::Index(double micros, bool* clamped) {
  *clamped = false;
  if (!(micros >= kMinMicros)) {
    *clamped = true;
    return 0;
  }
  if (micros > kMaxMicros) {
    *clamped = true;
    return kBuckets - 1;
  }
  int b = static_cast<int>(std::log(micros / kMinMicros) / kLogRatio);
  return std::clamp(b, 0, kBuckets - 1);
}

double HistogramLayout::Lower(int bucket) { return kMinMicros * std::pow(kRatio, bucket); }
double HistogramLayout::Upper(int bucket) { return kMinMicros * std::pow(kRatio, bucket + 1); }
double HistogramLayout::Mid(int bucket) { return kMinMicros * std::pow(kRatio, bucket + 0.5); }

std::optional<double> Histogram::Quantile(double q) const {
  if (count == 0) return std::nullopt;
  auto rank = static_cast<uint64_t>(std::ceil(std::clamp(q, 0.0, 1.0) * count));
  rank = std::max<uint64_t>(rank, 1);
  uint64_t seen = 0;
  for (int b = 0; b < static_cast<int>(counts.size()); ++b) {
    seen += counts[b];
    if (seen >= rank) return std::clamp(HistogramLayout::Mid(b), min, max);
  }
  return max;
}

std::optional<double> Histogram::Mean() const {
  if (count == 0) return std::nullopt;
  return sum / count;
}

Histogram Histogram::Minus(const Histogram& earlier) const {
  Histogram d;
  d.count = count - earlier.count;
  d.overflow = overflow - earlier.overflow;
  d.sum = sum - earlier.sum;
  int first = -1, last = -1;
  for (size_t b = 0; b < counts.size(); ++b) {
    d.counts[b] = counts[b] - earlier.counts[b];
    if (d.counts[b]) {
      if (first < 0) first = static_cast<int>(b);
      last = static_cast<int>(b);
    }
  }
  if (first >= 0) {
    d.min = std::max(min, HistogramLayout::Lower(first));
    d.max = std::min(max, HistogramLayout::Upper(last));
    if (d.min > d.max) d.min = d.max;
  }
  return d;
}

LatencySummary LatencySummary::Of(const Histogram& h) {
  LatencySummary s;
  s.count = h.count;
  s.overflow = h.overflow;
  s.mean = h.Mean();
  s.p50 = h.Quantile(0.50);
  s.p99 = h.Quantile(0.99);
  s.p999 = h.Quantile(0.999);
  return s;
}

// ---------------------------------------------------------------------------

struct LatencyRecorder::Shard {
  std::unique_ptr<std::atomic<uint64_t>[]> counts{new std::atomic<uint64_t>[kBuckets]()};
  std::atomic<uint64_t> count{0};
  std::atomic<uint64_t> overflow{0};
  std::atomic<uint64_t> sum_ns{0};
  std::atomic<uint64_t> min_ns{std::numeric_limits<uint64_t>::max()};
  std::atomic<uint64_t> max_ns{0};
};

LatencyRecorder::LatencyRecorder() {
  for (auto& s : shards_) s = std::make_unique<Shard>();
}

LatencyRecorder::~LatencyRecorder() = default;

void LatencyRecorder::Record(LatencyKind kind, double micros) {
  static std::atomic<unsigned> next_slot{0};
  thread_local unsigned slot = next_slot.fetch_add(1, std::memory_order_relaxed) % kShards;
  Shard& s = *shards_[static_cast<int>(kind) * kShards + slot];
  bool clamped = false;
  int b = HistogramLayout::Index(micros, &clamped);
  s.counts[b].fetch_add(1, std::memory_order_relaxed);
  if (clamped) s.overflow.fetch_add(1, std::memory_order_relaxed);
  uint64_t ns = ToNs(micros);
  s.sum_ns.fetch_add(ns, std::memory_order_relaxed);
  uint64_t cur = s.min_ns.load(std::memory_order_relaxed);
  while (ns < cur && !s.min_ns.compare_exchange_weak(cur, ns, std::memory_order_relaxed)) {
  }
  cur = s.max_ns.load(std::memory_order_relaxed);
  while (ns > cur && !s.max_ns.compare_exchange_weak(cur, ns, std::memory_order_relaxed)) {
  }
  // Published last: a snapshot never sees a count without its bucket.
  s.count.fetch_add(1, std::memory_order_release);
}

Histogram LatencyRecorder::Snapshot(LatencyKind kind) const {
  Histogram h;
  uint64_t sum_ns = 0;
  uint64_t min_ns = std::numeric_limits<uint64_t>::max();
  uint64_t max_ns = 0;
  for (int i = 0; i < kShards; ++i) {
    const Shard& s = *shards_[static_cast<int>(kind) * kShards + i];
    uint64_t n = s.count.load(std::memory_order_acquire);
    if (n == 0) continue;
    h.count += n;
    h.overflow += s.overflow.load(std::memory_order_relaxed);
    sum_ns += s.sum_ns.load(std::memory_order_relaxed);
    min_ns = std::min(min_ns, s.min_ns.load(std::memory_order_relaxed));
    max_ns = std::max(max_ns, s.max_ns.load(std::memory_order_relaxed));
    for (int b = 0; b < kBuckets; ++b) h.counts[b] += s.counts[b].load(std::memory_order_relaxed);
  }
  // Concurrent records may leave bucket totals slightly ahead of count;
  // make count agree with the buckets so quantile ranks stay valid.
  uint64_t total = 0;
  for (uint64_t c : h.counts) total += c;
  h.count = total;
  if (total) {
    h.sum = sum_ns / 1000.0;
    h.min = min_ns / 1000.0;
    h.max = max_ns / 1000.0;
  }
  return h;
}

// ---------------------------------------------------------------------------

TimelineRecorder::TimelineRecorder(const LatencyRecorder* recorder,
                                   std::chrono::milliseconds window,
                                   std::function<int64_t()> device_busy_ns, int cores)
    : recorder_(recorder),
      window_(window),
      device_busy_ns_(std::move(device_busy_ns)),
      cores_(cores > 0 ? cores : HostCores()) {
  if (window_.count() <= 0) throw InvalidArgument("timeline window must be positive");
}

TimelineRecorder::~TimelineRecorder() { Stop(); }

TimelineRecorder::Mark TimelineRecorder::Take() const {
  Mark m;
  m.at = std::chrono::steady_clock::now();
  for (int k = 0; k < kLatencyKinds; ++k) m.hist[k] = recorder_->Snapshot(static_cast<LatencyKind>(k));
  m.cpu_s = ProcessCpuSeconds();
  m.busy_ns = device_busy_ns_ ? device_busy_ns_() : 0;
  return m;
}

void TimelineRecorder::Start() {
  std::lock_guard<std::mutex> lock(mu_);
  if (running_) return;
  windows_.clear();
  stop_ = false;
  last_ = Take();
  start_ = last_.at;
  running_ = true;
  ticker_ = std::thread([this] { Loop(); });
}

void TimelineRecorder::Close(const Mark& next) {
  TimelineWindow w;
  w.index = static_cast<int>(windows_.size());
  w.start_s = std::chrono::duration<double>(last_.at - start_).count();
  w.end_s = std::chrono::duration<double>(next.at - start_).count();
  double wall = w.end_s - w.start_s;
  Histogram r = next.hist[0].Minus(last_.hist[0]);
  Histogram wr = next.hist[1].Minus(last_.hist[1]);
  w.reads = r.count;
  w.writes = wr.count;
  w.read_p99 = r.Quantile(0.99);
  w.write_p99 = wr.Quantile(0.99);
  if (wall > 0) {
    w.throughput = (w.reads + w.writes) / wall;
    w.cpu_fraction = (next.cpu_s - last_.cpu_s) / (wall * cores_);
    w.device_utilization = (next.busy_ns - last_.busy_ns) / (wall * 1e9);
  }
  windows_.push_back(w);
  last_ = next;
}

void TimelineRecorder::Loop() {
  std::unique_lock<std::mutex> lock(mu_);
  auto boundary = start_ + window_;
  while (!stop_) {
    if (cv_.wait_until(lock, boundary, [this] { return stop_; })) break;
    Mark m = Take();
    m.at = boundary;  // keep windows exactly contiguous and equal length
    Close(m);
    boundary += window_;
  }
}

void TimelineRecorder::Stop() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (!running_) return;
    stop_ = true;
  }
  cv_.notify_all();
  ticker_.join();
  std::lock_guard<std::mutex> lock(mu_);
  Mark m = Take();
  if (m.at > last_.at) Close(m);
  running_ = false;
}

std::vector<TimelineWindow> TimelineRecorder::windows() const {
  std::lock_guard<std::mutex> lock(mu_);
  return windows_;
}

// ---------------------------------------------------------------------------

std::string SummaryCsv(const std::vector<PhaseSummary>& phases) {
  std::string out =
      "phase,mode,stress,ops,seconds,throughput,"
      "read_count,read_mean_us,read_p50_us,read_p99_us,read_p999_us,"
      "write_count,write_mean_us,write_p50_us,write_p99_us,write_p999_us,"
      "latency_overflow,cpu_fraction,flushes,compactions,compaction_bytes_read,"
      "compaction_bytes_written,fallbacks,stalls,checked_reads,mismatches\n";
  for (const auto& p : phases) {
    out += p.phase + ',' + p.mode + ',' + Num(p.stress, 2) + ',' + std::to_string(p.ops) + ',' +
           Num(p.seconds, 3) + ',' + Num(p.throughput(), 1) + ',';
    for (const LatencySummary* l : {&p.read, &p.write}) {
      out += std::to_string(l->count) + ',' + Opt(l->mean) + ',' + Opt(l->p50) + ',' +
             Opt(l->p99) + ',' + Opt(l->p999) + ',';
    }
    out += std::to_string(p.read.overflow + p.write.overflow) + ',' + Num(p.cpu_fraction, 4) +
           ',' + std::to_string(p.flushes) + ',' + std::to_string(p.compactions) + ',' +
           std::to_string(p.compaction_bytes_read) + ',' +
           std::to_string(p.compaction_bytes_written) + ',' + std::to_string(p.fallbacks) + ',' +
           std::to_string(p.stalls) + ',' + std::to_string(p.checked_reads) + ',' +
           std::to_string(p.mismatches) + '\n';
  }
  return out;
}

std::string TimelineCsv(const std::vector<PhaseTimeline>& timelines) {
  std::string out =
      "phase,window,start_s,end_s,reads,writes,throughput,read_p99_us,write_p99_us,"
      "cpu_fraction,device_utilization\n";
  for (const auto& t : timelines) {
    for (const auto& w : t.windows) {
      out += t.phase + ',' + std::to_string(w.index) + ',' + Num(w.start_s, 3) + ',' +
             Num(w.end_s, 3) + ',' + std::to_string(w.reads) + ',' + std::to_string(w.writes) +
             ',' + Num(w.throughput, 1) + ',' + Opt(w.read_p99) + ',' + Opt(w.write_p99) + ',' +
             Num(w.cpu_fraction, 4) + ',' + Num(w.device_utilization, 4) + '\n';
    }
  }
  return out;
}

std::string CompactionJobsCsv(const std::vector<CompactionStats>& jobs) {
  std::vector<const CompactionStats*> sorted;
  sorted.reserve(jobs.size());
  for (const auto& j : jobs) sorted.push_back(&j);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto* a, const auto* b) { return a->job_id < b->job_id; });
  std::string out = CompactionStatsCsvHeader() + '\n';
  for (const auto* j : sorted) out += CompactionStatsCsvRow(*j) + '\n';
  return out;
}

void WriteReport(const std::string& dir, const std::vector<PhaseSummary>& phases,
                 const std::vector<PhaseTimeline>& timelines,
                 const std::vector<CompactionStats>& jobs) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("create " + dir + ": " + ec.message());
  std::filesystem::path d(dir);
  WriteFile(d / "summary.csv", SummaryCsv(phases));
  WriteFile(d / "timeline.csv", TimelineCsv(timelines));
  WriteFile(d / "compaction_jobs.csv", CompactionJobsCsv(jobs));
}

}  // namespace luda
