#pragma once

// Load-then-run benchmark over a Store, with latency/timeline recording and
// shadow-map spot checks: every 10^4th read of each client thread is compared
// against the last value written for that key.

#include <chrono>
#include <string>
#include <vector>

#include "luda/db.h"
#include "luda/metrics.h"
#include "luda/workload.h"

namespace luda {

struct BenchConfig {
  WorkloadSpec spec;
  StoreOptions store;
  std::string db;  // must be empty or absent
  double stress = 0;
  int threads = 1;
  std::chrono::milliseconds window{1000};
};

struct BenchResult {
  std::vector<PhaseSummary> phases;
  std::vector<PhaseTimeline> timelines;
  std::vector<CompactionStats> jobs;

  uint64_t mismatches() const;
  // nullptr if the phase did not run.
  const PhaseSummary* phase(const std::string& name) const;
  const PhaseTimeline* timeline(const std::string& name) const;
};

inline constexpr uint64_t kShadowSampleEvery = 10000;

// Throws InvalidArgument if cfg.db holds anything.
BenchResult RunBench(const BenchConfig& cfg);

}  // namespace luda
