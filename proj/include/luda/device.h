#pragma once

// Offload executor modeling a discrete accelerator: device-resident regions,
// asynchronous bulk transfers on named streams and data-parallel kernel
// dispatch. The backend here runs kernels on a pool of host threads and
// charges every transfer `latency + bytes / bandwidth` of wall time, so
// transfer/compute overlap is observable without accelerator hardware.
//
// Host code cannot see region bytes. The only ways in and out are StageIn,
// StageOut, and the KernelContext a work item receives.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace luda {

enum class StreamId : int { kInLower = 0, kInUpper = 1, kOut = 2 };
constexpr int kNumStreams = 3;
const char* StreamName(StreamId id);

enum class KernelKind : int { kUnpack = 0, kSharedKey = 1, kEncode = 2, kFilter = 3 };
const char* KernelName(KernelKind kind);

enum class RegionState { kEmpty, kStaging, kReady };

// Programming error against the region contract (reading a region that is
// not ready, writing outside declared outputs, overlapping item writes).
// Deliberately not a luda::Error so the compaction fallback never swallows it.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

int DefaultDeviceWorkers();

struct DeviceOptions {
  int workers = DefaultDeviceWorkers();
  double bandwidth_bytes_per_sec = 8.0 * (1ull << 30);
  double latency_sec = 20e-6;
  uint64_t region_capacity = 256ull << 20;
  // When false transfers complete as soon as the copy is done (serial
  // backend in tests).
  bool model_transfers = true;
  // Executes work items of each dispatch in a seeded random order.
  bool shuffle_items = false;
  uint64_t shuffle_seed = 0;
  // Fail a dispatch whose items wrote overlapping output ranges.
#ifdef NDEBUG
  bool check_ranges = false;
#else
  bool check_ranges = true;
#endif
};

class Device;
class KernelContext;
struct DispatchState;

class DeviceRegion {
 public:
  uint64_t id() const { return id_; }
  uint64_t size() const { return size_; }
  const std::string& label() const { return label_; }
  RegionState state() const { return state_.load(std::memory_order_acquire); }

 private:
  friend class Device;
  friend class KernelContext;

  DeviceRegion(uint64_t id, std::string label) : id_(id), label_(std::move(label)) {}

  uint64_t id_;
  std::string label_;
  std::unique_ptr<char[]> owned_;
  std::string adopted_;
  char* data_ = nullptr;
  uint64_t size_ = 0;
  std::atomic<RegionState> state_{RegionState::kEmpty};
  std::atomic<int> pending_writes_{0};
};

using RegionPtr = std::shared_ptr<DeviceRegion>;

// Completion signal shared between the device and whoever waits on it.
class Completion {
 public:
  void Wait() const;
  bool Done() const;

  // Nanoseconds since the device epoch; valid once Done().
  int64_t issue_ns() const { return issue_ns_; }
  int64_t start_ns() const { return start_ns_; }
  int64_t end_ns() const { return end_ns_; }

 private:
  friend class Device;
  void Finish(std::exception_ptr error);

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  bool done_ = false;
  std::exception_ptr error_;
  int64_t issue_ns_ = 0;
  int64_t start_ns_ = 0;
  int64_t end_ns_ = 0;
};

struct TransferHandle {
  StreamId stream = StreamId::kInLower;
  uint64_t bytes = 0;
  std::shared_ptr<Completion> completion;

  void Wait() const { completion->Wait(); }
  bool Done() const { return completion->Done(); }
};

struct DispatchHandle {
  KernelKind kind = KernelKind::kUnpack;
  size_t items = 0;
  std::shared_ptr<Completion> completion;

  void Wait() const { completion->Wait(); }
  bool Done() const { return completion->Done(); }
};

// Handed to each work item; the only path from kernel code to region bytes.
class KernelContext {
 public:
  std::span<const char> In(const DeviceRegion& region) const;
  // Writable view of [offset, offset + len) of an output region.
  std::span<char> Out(DeviceRegion& region, uint64_t offset, uint64_t len) const;
  size_t item() const { return item_; }

 private:
  friend class Device;
  KernelContext(DispatchState* dispatch, size_t item)
      : dispatch_(dispatch), item_(item) {}

  DispatchState* dispatch_;
  size_t item_;
};

struct KernelSpec {
  KernelKind kind = KernelKind::kUnpack;
  std::string label;
  size_t items = 0;
  std::vector<const DeviceRegion*> inputs;
  std::vector<DeviceRegion*> outputs;
  std::function<void(const KernelContext&, size_t item)> body;
  // Optional; runs on the worker right after item i completes successfully.
  std::function<void(size_t item)> on_item_done;
};

struct TraceEvent {
  enum class Type { kTransfer, kDispatch } type;
  std::string label;
  int stream = -1;  // StreamId for transfers
  int kernel = -1;  // KernelKind for dispatches
  uint64_t bytes = 0;
  size_t items = 0;
  int64_t issue_ns = 0;
  int64_t start_ns = 0;
  int64_t end_ns = 0;
};

struct DeviceStats {
  int64_t busy_ns = 0;     // wall time with at least one dispatch running
  int64_t elapsed_ns = 0;  // wall time since the device was created
  uint64_t stream_bytes[kNumStreams] = {0, 0, 0};
  uint64_t transfers = 0;
  uint64_t dispatches = 0;
  uint64_t items = 0;

  uint64_t bytes_in() const { return stream_bytes[0] + stream_bytes[1]; }
  uint64_t bytes_out() const { return stream_bytes[2]; }
  double utilization() const {
    return elapsed_ns > 0 ? static_cast<double>(busy_ns) / elapsed_ns : 0.0;
  }
};

class Device {
 public:
  explicit Device(DeviceOptions options = {});
  ~Device();

  Device(const Device&) = delete;
  Device& operator=(const Device&) = delete;

  const DeviceOptions& options() const { return options_; }

  // Uninitialised device memory. Throws CapacityExceeded above
  // region_capacity.
  RegionPtr Allocate(uint64_t bytes, std::string label);
  // Region that will receive an adopted host buffer via StageIn.
  RegionPtr AllocateEmpty(std::string label);

  // Copies src into dst at offset.
  TransferHandle StageIn(const RegionPtr& dst, uint64_t offset,
                         std::span<const char> src, StreamId stream);
  // Moves a pinned host buffer into an empty region without a host-side
  // copy; the modeled transfer time is still charged.
  TransferHandle StageIn(const RegionPtr& dst, std::string&& src, StreamId stream);
  // Copies [offset, offset + len) of src to host memory at dst. src must be
  // ready, except from inside on_item_done where the range the item just
  // wrote may be staged out while the rest of the dispatch is running.
  TransferHandle StageOut(const RegionPtr& src, uint64_t offset, uint64_t len,
                          char* dst, StreamId stream);

  DispatchHandle Dispatch(KernelSpec spec);

  DeviceStats Stats() const;
  std::vector<TraceEvent> Trace() const;
  void ClearTrace();

  // Nanoseconds since this device was created.
  int64_t Now() const;

 private:
  struct Transfer {
    StreamId stream;
    uint64_t bytes;
    std::string label;
    std::function<void()> copy;
    std::function<void()> on_done;
    std::shared_ptr<Completion> completion;
  };
  struct StreamQueue {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Transfer> queue;
    std::thread thread;
  };

  TransferHandle Enqueue(Transfer t);
  void StreamLoop(int index);
  void WorkerLoop();
  void RunItem(DispatchState& d, size_t slot);
  void FinishDispatch(DispatchState& d);
  void Record(TraceEvent ev);
  void BusyEnter(int64_t now);
  void BusyLeave(int64_t now);

  DeviceOptions options_;
  std::chrono::steady_clock::time_point epoch_;
  std::atomic<uint64_t> next_region_id_{1};

  StreamQueue streams_[kNumStreams];

  std::mutex work_mu_;
  std::condition_variable work_cv_;
  std::deque<std::shared_ptr<DispatchState>> dispatches_;
  std::vector<std::thread> workers_;
  bool stopping_ = false;

  mutable std::mutex stats_mu_;
  DeviceStats stats_;
  int active_dispatches_ = 0;
  int64_t busy_since_ = 0;

  mutable std::mutex trace_mu_;
  std::vector<TraceEvent> trace_;
};

}  // namespace luda
