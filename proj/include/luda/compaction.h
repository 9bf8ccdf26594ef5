#pragma once

// Compaction of one level into the next, in two interchangeable forms:
//
//   RunCompaction     the offload pipeline. Inputs are staged onto the device,
//                     unpacked by per-block kernels into a pair arena plus
//                     <key, value offset> tuples, the tuples alone travel to
//                     the host for a k-way merge, and the sorted survivors go
//                     back down to be re-encoded into blocks and filters.
//   ReferenceCompact  decode, sort, dedup and re-encode on the calling thread.
//
// Both share PlanOutputs, so for the same job they write identical bytes.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "luda/block.h"
#include "luda/device.h"
#include "luda/internal_key.h"
#include "luda/sst.h"

namespace luda {

// Decides whether a Delete may be discarded: only when the job writes into
// the deepest non-empty level, so no older data below could be uncovered.
struct TombstonePolicy {
  bool bottommost = false;

  bool CanDrop(std::string_view /*user_key*/) const { return bottommost; }
};

struct CompactionJob {
  uint64_t job_id = 0;
  int source_level = 0;
  int target_level = 1;
  std::vector<SstMeta> lower;         // from source_level
  std::vector<SstMeta> upper;         // from target_level
  std::vector<SstMeta> grandparents;  // target_level + 1, sorted
  TombstonePolicy tombstones;
};

struct CompactionOptions {
  SstOptions sst;
  // Cut an output file once it has run past this many grandparent files.
  int max_grandparent_overlap = 10;
};

// Returns the complete bytes of an input file.
using FileLoader = std::function<std::string(const SstMeta&)>;

struct CompactionStats {
  uint64_t job_id = 0;
  int source_level = 0;
  std::string engine;  // "offload" or "inline"
  bool fell_back = false;
  std::string fallback_reason;

  uint64_t input_files = 0;
  uint64_t input_bytes = 0;   // bytes read
  uint64_t output_files = 0;
  uint64_t output_bytes = 0;  // bytes written
  uint64_t input_entries = 0;
  uint64_t output_entries = 0;

  // Phase wall times in microseconds. Offload only, except t_total.
  double t_stage_in = 0;
  double t_unpack = 0;
  double t_sort_host = 0;
  double t_pack = 0;
  double t_stage_out = 0;
  double t_total = 0;
  // Share of device compute time that ran while a transfer was in flight.
  double overlap_ratio = 0;

  // Value bytes written into the pair arena (copy 1) and into output blocks
  // (copy 2). Every restored value is copied once, every survivor twice.
  uint64_t value_copy1_bytes = 0;
  uint64_t value_copy2_bytes = 0;
  uint64_t restored_value_bytes = 0;
  uint64_t surviving_value_bytes = 0;

  // Bytes crossing the host boundary for the merge, each way.
  uint64_t tuple_bytes_to_host = 0;
  uint64_t tuple_bytes_to_device = 0;
  uint64_t tuple_count = 0;
  uint64_t plan_bytes_to_device = 0;

  // Staging of the lower and upper inputs (A7a bookkeeping), in microseconds.
  double stage_lower_us = 0;
  double stage_upper_us = 0;
  // First input issue to last input arrival, across both streams.
  double stage_wall_us = 0;
  // Output blocks, and whether the first block stage-out completed before
  // the filter dispatch did.
  uint64_t output_blocks = 0;
  bool stage_out_overlapped_filter = false;
};

std::string CompactionStatsCsvHeader();
std::string CompactionStatsCsvRow(const CompactionStats& s);

struct OutputFile {
  std::string bytes;
  SstMeta meta;  // file_id left 0 for the caller to assign
};

struct CompactionResult {
  std::vector<OutputFile> outputs;
  CompactionStats stats;
};

// ---------------------------------------------------------------------------
// Planning shared by both engines.

struct PlannedBlock {
  uint32_t first = 0;  // index into the surviving entry sequence
  uint32_t count = 0;
  uint32_t size = 0;   // encoded bytes including the checksum
};

struct PlannedFile {
  uint32_t first_block = 0;
  uint32_t num_blocks = 0;
  uint32_t first_entry = 0;
  uint32_t num_entries = 0;
  uint64_t data_bytes = 0;
};

struct OutputPlan {
  std::vector<PlannedBlock> blocks;
  std::vector<PlannedFile> files;
};

// Cuts a file once the next key has moved past more than `max_overlap`
// grandparent files since the file was opened.
class GrandparentCutter {
 public:
  GrandparentCutter(std::span<const SstMeta> grandparents, int max_overlap)
      : grandparents_(grandparents), max_overlap_(max_overlap) {}

  bool ShouldStopBefore(std::string_view ikey);

 private:
  std::span<const SstMeta> grandparents_;
  int max_overlap_;
  size_t index_ = 0;
  bool seen_key_ = false;
  int overlapped_ = 0;
};

// Greedy block and file cutting over a sorted entry sequence. key_at(i)
// returns the encoded internal key (the view must outlive the call),
// value_len_at(i) its value length.
template <typename KeyAt, typename ValueLenAt>
OutputPlan PlanOutputs(size_t n, KeyAt key_at, ValueLenAt value_len_at,
                       const CompactionOptions& options,
                       std::span<const SstMeta> grandparents) {
  OutputPlan plan;
  const SstOptions& sst = options.sst;
  GrandparentCutter cutter(grandparents, options.max_grandparent_overlap);
  BlockSizer sizer(sst.restart_interval);
  PlannedBlock block;
  PlannedFile file;

  auto close_block = [&] {
    if (sizer.empty()) return;
    block.size = static_cast<uint32_t>(sizer.Size() + kBlockTrailerSize);
    file.data_bytes += block.size;
    file.num_blocks++;
    plan.blocks.push_back(block);
    sizer.Reset();
  };
  auto close_file = [&] {
    close_block();
    if (file.num_entries == 0) return;
    plan.files.push_back(file);
    file = PlannedFile{};
    file.first_block = static_cast<uint32_t>(plan.blocks.size());
  };

  for (size_t i = 0; i < n; ++i) {
    std::string_view key = key_at(i);
    size_t vlen = value_len_at(i);
    bool cut = cutter.ShouldStopBefore(key) && file.num_entries > 0;
    if (!sizer.empty() && sizer.SizeWith(key, vlen) > sst.block_size) close_block();
    uint64_t projected = file.data_bytes + sizer.SizeWith(key, vlen) + kBlockTrailerSize;
    if (file.num_entries > 0 && (cut || projected > sst.sst_size_target)) {
      close_file();
    }
    if (file.num_entries == 0) file.first_entry = static_cast<uint32_t>(i);
    if (sizer.empty()) {
      block.first = static_cast<uint32_t>(i);
      block.count = 0;
    }
    sizer.Add(key, vlen);
    block.count++;
    file.num_entries++;
  }
  close_file();
  return plan;
}

// ---------------------------------------------------------------------------
// Host-side merge of the tuple runs.

struct TupleRef {
  std::string_view key;   // encoded internal key
  uint64_t v_offset = 0;  // record offset in the pair arena
  uint32_t v_len = 0;
};

// Encoded tuple: fixed32 key_len | key | fixed64 v_offset | fixed32 v_len.
constexpr size_t kTupleOverhead = 16;
inline size_t TupleSize(size_t key_len) { return kTupleOverhead + key_len; }
void AppendTuple(std::string* dst, const TupleRef& t);
// Parses a run of encoded tuples; throws FormatError when truncated.
std::vector<TupleRef> ParseTuples(std::string_view bytes);

// Merges key-sorted runs with a loser tree, keeps the newest entry per user
// key and drops tombstones the policy allows. Throws std::logic_error if a
// run is not strictly ascending or two runs carry the same internal key.
std::vector<TupleRef> CooperativeSort(std::span<const std::vector<TupleRef>> runs,
                                      const TombstonePolicy& policy);

// ---------------------------------------------------------------------------
// Engines.

CompactionResult ReferenceCompact(const CompactionJob& job, const FileLoader& load,
                                  const CompactionOptions& options = {});

// Offload pipeline without fallback; errors propagate.
CompactionResult OffloadCompact(const CompactionJob& job, const FileLoader& load,
                                Device& device, const CompactionOptions& options = {});

// Offload pipeline that falls back to ReferenceCompact on any luda::Error.
// Corruption raised by the fallback itself propagates.
CompactionResult RunCompaction(const CompactionJob& job, const FileLoader& load,
                               Device& device, const CompactionOptions& options = {});

// ---------------------------------------------------------------------------
// Step-wise access to the offload pipeline, for tests.

class OffloadPipeline {
 public:
  OffloadPipeline(const CompactionJob& job, const FileLoader& load, Device& device,
                  const CompactionOptions& options);
  ~OffloadPipeline();

  OffloadPipeline(const OffloadPipeline&) = delete;
  OffloadPipeline& operator=(const OffloadPipeline&) = delete;

  // Steps 1-2: staging on the two input streams and per-file unpack.
  void StageAndUnpack();
  // Steps 3-5: tuples to the host, merge, plan, sorted tuples back.
  void Sort();
  // Steps 6-8: shared_key, encode and filter kernels, streamed block return
  // and host assembly.
  CompactionResult Pack();

  // Inspection after StageAndUnpack.
  struct PairRecord {
    std::string key;
    std::string value;
  };
  std::vector<PairRecord> PairArena() const;
  // Per input file, in input order (lower then upper).
  std::vector<std::vector<TupleRef>> TupleRuns() const;
  // Inspection after Sort.
  const std::vector<TupleRef>& Survivors() const;
  const OutputPlan& Plan() const;
  // Inspection during Pack: per surviving entry (shared, unshared).
  std::vector<std::pair<uint32_t, uint32_t>> SharedLayouts() const;

 private:
  struct State;
  std::unique_ptr<State> s_;
};

}  // namespace luda
