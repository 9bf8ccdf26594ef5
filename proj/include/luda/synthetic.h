#pragma once

// Deterministic synthetic compaction jobs, and a runner that pushes a job set
// through either engine. Used by `luda compact-bench` and the acceptance
// checks; a seed fixes the job set regardless of which engine runs it.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "luda/compaction.h"
#include "luda/db.h"

namespace luda {

struct SyntheticShape {
  int min_files = 1;
  int max_files = 6;
  size_t min_value = 64;
  size_t max_value = 4096;
  // Each job draws its tombstone rate uniformly from [0, max_tombstones].
  double max_tombstones = 0.2;
  int min_entries_per_file = 1;
  int max_entries_per_file = 200;
  // User keys are drawn from [0, keyspace), so files overlap.
  uint64_t keyspace = 600;
  SstOptions sst;
};

struct SyntheticJob {
  CompactionJob job;
  std::map<uint64_t, std::string> files;

  FileLoader Loader() const;
  uint64_t input_bytes() const;
};

// Lower files carry newer sequence numbers than upper files, as in a store.
// Files that would overflow sst_size_target are shrunk until they fit.
SyntheticJob MakeSyntheticJob(uint64_t seed, const SyntheticShape& shape = {});

struct CompactBenchReport {
  std::string engine;
  size_t jobs = 0;
  uint64_t input_bytes = 0;
  uint64_t output_bytes = 0;
  uint64_t fallbacks = 0;
  double seconds = 0;
  // Summed per-phase times (microseconds), offload only.
  double t_stage_in = 0;
  double t_unpack = 0;
  double t_sort_host = 0;
  double t_pack = 0;
  double t_stage_out = 0;

  double bytes_per_sec() const { return seconds > 0 ? input_bytes / seconds : 0; }
};

// Runs every job in order on the calling thread. `device` is required for
// EngineMode::kOffload. Per-job stats are appended to `log` when given.
CompactBenchReport RunCompactBench(const std::vector<SyntheticJob>& jobs, EngineMode mode,
                                   Device* device, const CompactionOptions& options = {},
                                   std::vector<CompactionStats>* log = nullptr);

}  // namespace luda
