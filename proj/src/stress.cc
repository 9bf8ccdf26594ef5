#include <sys/resource.h>
#include <time.h>

#include <algorithm>

#include "luda/errors.h"
#include "luda/workload.h"

namespace luda {

namespace {

uint64_t ThreadCpuNs() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<uint64_t>(ts.tv_sec) * 1000000000ull + static_cast<uint64_t>(ts.tv_nsec);
}

}  // namespace

double ProcessCpuSeconds() {
  rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  auto tv = [](const timeval& t) { return t.tv_sec + t.tv_usec / 1e6; };
  return tv(ru.ru_utime) + tv(ru.ru_stime);
}

int HostCores() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

StressInjector::StressInjector(StressSpec spec)
    : spec_(spec), cores_(HostCores()), cpu_ns_(spec.threads > 0 ? spec.threads : HostCores()) {
  if (spec_.target_utilization < 0 || spec_.target_utilization > 1) {
    throw InvalidArgument("stress: target_utilization must be in [0, 1]");
  }
  if (spec_.period.count() <= 0) throw InvalidArgument("stress: period must be positive");
  int n = static_cast<int>(cpu_ns_.size());
  // Per-thread duty so that n threads together occupy target * cores.
  duty_.store(std::min(1.0, spec_.target_utilization * cores_ / n));
  if (spec_.target_utilization == 0) return;
  for (int i = 0; i < n; ++i) threads_.emplace_back([this, i] { Spin(i); });
  if (spec_.calibrate) calibrator_ = std::thread([this] { Calibrate(); });
}

StressInjector::~StressInjector() { Stop(); }

void StressInjector::Stop() {
  stop_.store(true);
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  if (calibrator_.joinable()) calibrator_.join();
}

double StressInjector::CpuSeconds() const {
  uint64_t total = 0;
  for (const auto& c : cpu_ns_) total += c.load(std::memory_order_relaxed);
  return total / 1e9;
}

void StressInjector::Spin(int index) {
  using Clock = std::chrono::steady_clock;
  uint64_t start_cpu = ThreadCpuNs();
  auto period = std::chrono::duration_cast<Clock::duration>(spec_.period);
  auto cycle = Clock::now();
  volatile uint64_t sink = 0;
  while (!stop_.load(std::memory_order_relaxed)) {
    double d = duty_.load(std::memory_order_relaxed);
    auto busy_until = cycle + std::chrono::duration_cast<Clock::duration>(period * d);
    // Busy by consumed thread CPU, not wall time: on a loaded host wall time
    // overstates what the thread actually burned.
    uint64_t cpu0 = ThreadCpuNs();
    auto busy_ns = static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(period).count() * d);
    while (ThreadCpuNs() - cpu0 < busy_ns && Clock::now() < busy_until + period &&
           !stop_.load(std::memory_order_relaxed)) {
      for (int k = 0; k < 1000; ++k) sink = sink * 6364136223846793005ull + 1;
    }
    cpu_ns_[index].store(ThreadCpuNs() - start_cpu, std::memory_order_relaxed);
    cycle += period;
    auto now = Clock::now();
    if (cycle > now) {
      std::this_thread::sleep_until(cycle);
    } else {
      cycle = now;  // fell behind; do not try to catch up
    }
  }
  cpu_ns_[index].store(ThreadCpuNs() - start_cpu, std::memory_order_relaxed);
}

void StressInjector::Calibrate() {
  using Clock = std::chrono::steady_clock;
  int n = static_cast<int>(cpu_ns_.size());
  double base = std::min(1.0, spec_.target_utilization * cores_ / n);
  double lo = base * 0.9;
  double hi = std::min(1.0, base * 1.1);
  double last_cpu = CpuSeconds();
  auto last = Clock::now();
  while (!stop_.load()) {
    for (int i = 0; i < 20 && !stop_.load(); ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    if (stop_.load()) break;
    auto now = Clock::now();
    double cpu = CpuSeconds();
    double wall = std::chrono::duration<double>(now - last).count();
    double measured = (cpu - last_cpu) / (wall * cores_);
    last = now;
    last_cpu = cpu;
    if (measured <= 0) continue;
    double d = duty_.load() * spec_.target_utilization / measured;
    duty_.store(std::clamp(d, lo, hi));
  }
}

}  // namespace luda
