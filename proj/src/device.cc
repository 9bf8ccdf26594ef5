#include "luda/device.h"

#include <sys/prctl.h>

#include <algorithm>
#include <cstring>
#include <numeric>
#include <random>

#include "luda/errors.h"

namespace luda {

const char* StreamName(StreamId id) {
  switch (id) {
    case StreamId::kInLower: return "in_lower";
    case StreamId::kInUpper: return "in_upper";
    case StreamId::kOut: return "out";
  }
  return "?";
}

const char* KernelName(KernelKind kind) {
  switch (kind) {
    case KernelKind::kUnpack: return "unpack";
    case KernelKind::kSharedKey: return "shared_key";
    case KernelKind::kEncode: return "encode";
    case KernelKind::kFilter: return "filter";
  }
  return "?";
}

int DefaultDeviceWorkers() {
  int cores = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, cores - 2);
}

struct OutRange {
  const DeviceRegion* region;
  uint64_t begin;
  uint64_t end;
};

// Set while a worker runs on_item_done, so the callback may stage out what its
// item just wrote even though the region as a whole is still being written.
struct ItemScope {
  const DispatchState* dispatch = nullptr;
  size_t item = 0;
};
thread_local ItemScope t_item_scope;

struct DispatchState {
  KernelSpec spec;
  std::vector<size_t> order;
  std::atomic<size_t> next{0};
  std::atomic<size_t> finished{0};
  std::atomic<bool> started{false};
  std::atomic<bool> failed{false};
  std::mutex error_mu;
  std::exception_ptr error;
  std::shared_ptr<Completion> completion;
  bool check_ranges = false;
  std::vector<std::vector<OutRange>> ranges;  // per item
};

void Completion::Wait() const {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait(lock, [this] { return done_; });
  if (error_) std::rethrow_exception(error_);
}

bool Completion::Done() const {
  std::lock_guard<std::mutex> lock(mu_);
  return done_;
}

void Completion::Finish(std::exception_ptr error) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    error_ = std::move(error);
    done_ = true;
  }
  cv_.notify_all();
}

std::span<const char> KernelContext::In(const DeviceRegion& region) const {
  const auto& inputs = dispatch_->spec.inputs;
  if (std::find(inputs.begin(), inputs.end(), &region) == inputs.end()) {
    throw ContractViolation("kernel read of undeclared region " + region.label());
  }
  if (region.state() != RegionState::kReady) {
    throw ContractViolation("kernel read of region not ready: " + region.label());
  }
  return {region.data_, region.size_};
}

std::span<char> KernelContext::Out(DeviceRegion& region, uint64_t offset,
                                   uint64_t len) const {
  const auto& outputs = dispatch_->spec.outputs;
  if (std::find(outputs.begin(), outputs.end(), &region) == outputs.end()) {
    throw ContractViolation("kernel write to undeclared region " + region.label());
  }
  if (offset > region.size_ || len > region.size_ - offset) {
    throw ContractViolation("kernel write out of bounds in " + region.label());
  }
  if (len > 0) {
    dispatch_->ranges[item_].push_back({&region, offset, offset + len});
  }
  return {region.data_ + offset, len};
}

Device::Device(DeviceOptions options)
    : options_(options), epoch_(std::chrono::steady_clock::now()) {
  if (options_.workers < 1) options_.workers = 1;
  for (int i = 0; i < kNumStreams; ++i) {
    streams_[i].thread = std::thread([this, i] { StreamLoop(i); });
  }
  for (int i = 0; i < options_.workers; ++i) {
    workers_.emplace_back([this] { WorkerLoop(); });
  }
}

Device::~Device() {
  {
    std::lock_guard<std::mutex> lock(work_mu_);
    stopping_ = true;
  }
  work_cv_.notify_all();
  for (auto& s : streams_) {
    {
      std::lock_guard<std::mutex> lock(s.mu);
    }
    s.cv.notify_all();
  }
  for (auto& w : workers_) w.join();
  for (auto& s : streams_) s.thread.join();
}

int64_t Device::Now() const {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now() - epoch_)
      .count();
}

RegionPtr Device::Allocate(uint64_t bytes, std::string label) {
  if (bytes > options_.region_capacity) {
    throw CapacityExceeded("region " + label + " needs " + std::to_string(bytes) +
                           " bytes, capacity is " +
                           std::to_string(options_.region_capacity));
  }
  RegionPtr r(new DeviceRegion(next_region_id_++, std::move(label)));
  r->owned_ = std::make_unique_for_overwrite<char[]>(bytes == 0 ? 1 : bytes);
  r->data_ = r->owned_.get();
  r->size_ = bytes;
  return r;
}

RegionPtr Device::AllocateEmpty(std::string label) {
  return RegionPtr(new DeviceRegion(next_region_id_++, std::move(label)));
}

TransferHandle Device::Enqueue(Transfer t) {
  TransferHandle h{t.stream, t.bytes, t.completion};
  t.completion->issue_ns_ = Now();
  auto& s = streams_[static_cast<int>(t.stream)];
  {
    std::lock_guard<std::mutex> lock(s.mu);
    s.queue.push_back(std::move(t));
  }
  s.cv.notify_one();
  return h;
}

TransferHandle Device::StageIn(const RegionPtr& dst, uint64_t offset,
                               std::span<const char> src, StreamId stream) {
  if (offset > dst->size_ || src.size() > dst->size_ - offset) {
    throw CapacityExceeded("stage_in past end of region " + dst->label());
  }
  dst->pending_writes_.fetch_add(1);
  dst->state_.store(RegionState::kStaging, std::memory_order_release);
  Transfer t;
  t.stream = stream;
  t.bytes = src.size();
  t.label = "stage_in:" + dst->label();
  char* target = dst->data_ + offset;
  t.copy = [target, src] {
    if (!src.empty()) std::memcpy(target, src.data(), src.size());
  };
  DeviceRegion* raw = dst.get();
  auto keep = dst;
  t.on_done = [raw, keep] {
    if (raw->pending_writes_.fetch_sub(1) == 1) {
      raw->state_.store(RegionState::kReady, std::memory_order_release);
    }
  };
  t.completion = std::make_shared<Completion>();
  return Enqueue(std::move(t));
}

TransferHandle Device::StageIn(const RegionPtr& dst, std::string&& src,
                               StreamId stream) {
  if (dst->size_ != 0 || dst->state() != RegionState::kEmpty) {
    throw ContractViolation("adopting stage_in needs an empty region");
  }
  if (src.size() > options_.region_capacity) {
    throw CapacityExceeded("stage_in of " + std::to_string(src.size()) +
                           " bytes exceeds region capacity");
  }
  dst->pending_writes_.fetch_add(1);
  dst->state_.store(RegionState::kStaging, std::memory_order_release);
  Transfer t;
  t.stream = stream;
  t.bytes = src.size();
  t.label = "stage_in:" + dst->label();
  auto buffer = std::make_shared<std::string>(std::move(src));
  DeviceRegion* raw = dst.get();
  auto keep = dst;
  t.copy = [raw, buffer] {
    raw->adopted_ = std::move(*buffer);
    raw->data_ = raw->adopted_.data();
    raw->size_ = raw->adopted_.size();
  };
  t.on_done = [raw, keep] {
    if (raw->pending_writes_.fetch_sub(1) == 1) {
      raw->state_.store(RegionState::kReady, std::memory_order_release);
    }
  };
  t.completion = std::make_shared<Completion>();
  return Enqueue(std::move(t));
}

TransferHandle Device::StageOut(const RegionPtr& src, uint64_t offset,
                                uint64_t len, char* dst, StreamId stream) {
  if (offset > src->size_ || len > src->size_ - offset) {
    throw ContractViolation("stage_out past end of region " + src->label());
  }
  if (src->state() != RegionState::kReady) {
    bool covered = false;
    if (const DispatchState* d = t_item_scope.dispatch) {
      for (const OutRange& r : d->ranges[t_item_scope.item]) {
        if (r.region == src.get() && r.begin <= offset && offset + len <= r.end) {
          covered = true;
          break;
        }
      }
    }
    if (!covered) {
      throw ContractViolation("stage_out from region not ready: " + src->label());
    }
  }
  Transfer t;
  t.stream = stream;
  t.bytes = len;
  t.label = "stage_out:" + src->label();
  const char* from = src->data_ + offset;
  auto keep = src;
  t.copy = [from, len, dst, keep] {
    if (len > 0) std::memcpy(dst, from, len);
  };
  t.completion = std::make_shared<Completion>();
  return Enqueue(std::move(t));
}

void Device::StreamLoop(int index) {
  // Modeled transfers complete tens of microseconds apart; the default 50us
  // timer slack would swamp them.
  ::prctl(PR_SET_TIMERSLACK, 1000UL, 0, 0, 0);
  auto& s = streams_[index];
  // Pipelined link: a transfer occupies the link for bytes / bandwidth and
  // completes `latency` after that, while the next transfer may already be
  // on the wire. The copy itself is the emulator's work and runs as soon as
  // the transfer is taken; completion is signalled at the modeled end.
  int64_t link_free_ns = 0;
  std::deque<std::pair<Transfer, std::exception_ptr>> inflight;

  auto finish = [&](Transfer& t, std::exception_ptr error) {
    if (t.on_done) t.on_done();
    {
      std::lock_guard<std::mutex> lock(stats_mu_);
      stats_.stream_bytes[index] += t.bytes;
      stats_.transfers++;
    }
    TraceEvent ev;
    ev.type = TraceEvent::Type::kTransfer;
    ev.label = std::move(t.label);
    ev.stream = index;
    ev.bytes = t.bytes;
    ev.issue_ns = t.completion->issue_ns_;
    ev.start_ns = t.completion->start_ns_;
    ev.end_ns = t.completion->end_ns_;
    Record(std::move(ev));
    t.completion->Finish(error);
  };

  for (;;) {
    // Retire everything whose modeled end has passed.
    while (!inflight.empty() && inflight.front().first.completion->end_ns_ <= Now()) {
      finish(inflight.front().first, inflight.front().second);
      inflight.pop_front();
    }
    Transfer t;
    {
      std::unique_lock<std::mutex> lock(s.mu);
      auto ready = [&] {
        if (!s.queue.empty()) return true;
        std::lock_guard<std::mutex> wl(work_mu_);
        return stopping_;
      };
      if (inflight.empty()) {
        s.cv.wait(lock, ready);
      } else {
        auto deadline = epoch_ + std::chrono::nanoseconds(inflight.front().first.completion->end_ns_);
        if (!s.cv.wait_until(lock, deadline, ready)) continue;
      }
      if (s.queue.empty()) {
        if (!inflight.empty()) continue;  // drain before exiting
        return;
      }
      t = std::move(s.queue.front());
      s.queue.pop_front();
    }
    std::exception_ptr error;
    if (options_.model_transfers && t.bytes > 0) {
      int64_t start = std::max(t.completion->issue_ns_, link_free_ns);
      int64_t wire = static_cast<int64_t>(
          static_cast<double>(t.bytes) / options_.bandwidth_bytes_per_sec * 1e9);
      link_free_ns = start + wire;
      t.completion->start_ns_ = start;
      t.completion->end_ns_ = link_free_ns + static_cast<int64_t>(options_.latency_sec * 1e9);
      try {
        t.copy();
      } catch (...) {
        error = std::current_exception();
      }
      inflight.emplace_back(std::move(t), error);
    } else {
      // Unmodeled transfers complete in order behind anything in flight.
      for (auto& [ft, fe] : inflight) {
        std::this_thread::sleep_until(epoch_ + std::chrono::nanoseconds(ft.completion->end_ns_));
        finish(ft, fe);
      }
      inflight.clear();
      t.completion->start_ns_ = Now();
      try {
        t.copy();
      } catch (...) {
        error = std::current_exception();
      }
      t.completion->end_ns_ = Now();
      finish(t, error);
    }
  }
}

DispatchHandle Device::Dispatch(KernelSpec spec) {
  for (const DeviceRegion* r : spec.inputs) {
    if (r->state() != RegionState::kReady) {
      throw ContractViolation(std::string("dispatch of ") + KernelName(spec.kind) +
                              " with input region not ready: " + r->label());
    }
  }
  auto d = std::make_shared<DispatchState>();
  d->completion = std::make_shared<Completion>();
  d->completion->issue_ns_ = Now();
  d->check_ranges = options_.check_ranges;
  DispatchHandle handle{spec.kind, spec.items, d->completion};
  for (DeviceRegion* r : spec.outputs) {
    r->pending_writes_.fetch_add(1);
    r->state_.store(RegionState::kStaging, std::memory_order_release);
  }
  d->order.resize(spec.items);
  std::iota(d->order.begin(), d->order.end(), size_t{0});
  if (options_.shuffle_items) {
    std::mt19937_64 rng(options_.shuffle_seed ^ d->completion->issue_ns_);
    std::shuffle(d->order.begin(), d->order.end(), rng);
  }
  d->ranges.resize(spec.items);
  d->spec = std::move(spec);

  if (d->spec.items == 0) {
    d->completion->start_ns_ = d->completion->issue_ns_;
    FinishDispatch(*d);
    return handle;
  }
  {
    std::lock_guard<std::mutex> lock(work_mu_);
    dispatches_.push_back(d);
  }
  work_cv_.notify_all();
  return handle;
}

void Device::WorkerLoop() {
  for (;;) {
    std::shared_ptr<DispatchState> d;
    size_t slot = 0;
    {
      std::unique_lock<std::mutex> lock(work_mu_);
      work_cv_.wait(lock, [this] { return stopping_ || !dispatches_.empty(); });
      if (dispatches_.empty()) return;
      d = dispatches_.front();
      slot = d->next.fetch_add(1);
      if (slot + 1 >= d->spec.items) dispatches_.pop_front();
      if (slot >= d->spec.items) continue;
    }
    RunItem(*d, slot);
  }
}

void Device::RunItem(DispatchState& d, size_t slot) {
  if (!d.started.exchange(true)) {
    int64_t now = Now();
    d.completion->start_ns_ = now;
    BusyEnter(now);
  }
  size_t item = d.order[slot];
  if (!d.failed.load(std::memory_order_relaxed)) {
    try {
      KernelContext ctx(&d, item);
      d.spec.body(ctx, item);
      if (d.spec.on_item_done) {
        t_item_scope = {&d, item};
        try {
          d.spec.on_item_done(item);
        } catch (...) {
          t_item_scope = {};
          throw;
        }
        t_item_scope = {};
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(d.error_mu);
      if (!d.error) d.error = std::current_exception();
      d.failed.store(true);
    }
  }
  if (d.finished.fetch_add(1) + 1 == d.spec.items) {
    BusyLeave(Now());
    FinishDispatch(d);
  }
}

void Device::FinishDispatch(DispatchState& d) {
  std::exception_ptr error = d.error;
  if (!error && d.check_ranges) {
    std::vector<OutRange> all;
    for (auto& r : d.ranges) all.insert(all.end(), r.begin(), r.end());
    std::sort(all.begin(), all.end(), [](const OutRange& a, const OutRange& b) {
      return a.region != b.region ? a.region < b.region : a.begin < b.begin;
    });
    for (size_t i = 1; i < all.size(); ++i) {
      if (all[i].region == all[i - 1].region && all[i].begin < all[i - 1].end) {
        error = std::make_exception_ptr(ContractViolation(
            std::string("overlapping work item writes in ") +
            KernelName(d.spec.kind) + " to " + all[i].region->label()));
        break;
      }
    }
  }
  if (error) {
    // Wrap item failures so callers can fall back; contract violations pass
    // through untouched.
    try {
      std::rethrow_exception(error);
    } catch (const ContractViolation&) {
    } catch (const Error&) {
      // Corruption and friends keep their type for the caller.
    } catch (const std::exception& e) {
      error = std::make_exception_ptr(DeviceFailure(
          std::string(KernelName(d.spec.kind)) + " kernel failed: " + e.what()));
    } catch (...) {
      error = std::make_exception_ptr(DeviceFailure("kernel failed"));
    }
  }
  for (DeviceRegion* r : d.spec.outputs) {
    if (r->pending_writes_.fetch_sub(1) == 1) {
      r->state_.store(error ? RegionState::kEmpty : RegionState::kReady,
                      std::memory_order_release);
    }
  }
  d.completion->end_ns_ = Now();
  {
    std::lock_guard<std::mutex> lock(stats_mu_);
    stats_.dispatches++;
    stats_.items += d.spec.items;
  }
  TraceEvent ev;
  ev.type = TraceEvent::Type::kDispatch;
  ev.label = d.spec.label.empty() ? KernelName(d.spec.kind) : d.spec.label;
  ev.kernel = static_cast<int>(d.spec.kind);
  ev.items = d.spec.items;
  ev.issue_ns = d.completion->issue_ns_;
  ev.start_ns = d.completion->start_ns_;
  ev.end_ns = d.completion->end_ns_;
  Record(std::move(ev));
  // Drop the body before signalling so captured buffers are released.
  d.spec.body = nullptr;
  d.spec.on_item_done = nullptr;
  d.completion->Finish(error);
}

void Device::BusyEnter(int64_t now) {
  std::lock_guard<std::mutex> lock(stats_mu_);
  if (active_dispatches_++ == 0) busy_since_ = now;
}

void Device::BusyLeave(int64_t now) {
  std::lock_guard<std::mutex> lock(stats_mu_);
  if (--active_dispatches_ == 0) stats_.busy_ns += now - busy_since_;
}

DeviceStats Device::Stats() const {
  std::lock_guard<std::mutex> lock(stats_mu_);
  DeviceStats s = stats_;
  int64_t now = Now();
  if (active_dispatches_ > 0) s.busy_ns += now - busy_since_;
  s.elapsed_ns = now;
  return s;
}

void Device::Record(TraceEvent ev) {
  std::lock_guard<std::mutex> lock(trace_mu_);
  trace_.push_back(std::move(ev));
}

std::vector<TraceEvent> Device::Trace() const {
  std::lock_guard<std::mutex> lock(trace_mu_);
  return trace_;
}

void Device::ClearTrace() {
  std::lock_guard<std::mutex> lock(trace_mu_);
  trace_.clear();
}

}  // namespace luda
