#include "luda/synthetic.h"

#include <algorithm>
#include <chrono>
#include <cstring>

#include "luda/errors.h"
#include "luda/workload.h"

namespace luda {

namespace {

uint64_t Between(SplitMix64& rng, uint64_t lo, uint64_t hi) {
  return lo + rng.Next() % (hi - lo + 1);
}

std::string RandomValue(SplitMix64& rng, size_t n) {
  std::string s(n, '\0');
  for (size_t i = 0; i < n; i += 8) {
    uint64_t w = rng.Next();
    std::memcpy(s.data() + i, &w, std::min<size_t>(8, n - i));
  }
  return s;
}

}  // namespace

FileLoader SyntheticJob::Loader() const {
  return [this](const SstMeta& m) { return files.at(m.file_id); };
}

uint64_t SyntheticJob::input_bytes() const {
  uint64_t total = 0;
  for (const auto& [id, bytes] : files) total += bytes.size();
  return total;
}

SyntheticJob MakeSyntheticJob(uint64_t seed, const SyntheticShape& shape) {
  if (shape.min_files < 1 || shape.max_files < shape.min_files ||
      shape.max_value < shape.min_value || shape.keyspace == 0 ||
      shape.min_entries_per_file < 1 || shape.max_entries_per_file < shape.min_entries_per_file) {
    throw InvalidArgument("synthetic shape is inconsistent");
  }
  SplitMix64 rng(seed * 0x9e3779b97f4a7c15ULL + 1);
  SyntheticJob sj;
  CompactionJob& job = sj.job;
  int n = static_cast<int>(Between(rng, shape.min_files, shape.max_files));
  int n_lower = static_cast<int>(Between(rng, 1, n));
  double tomb = rng.NextDouble() * shape.max_tombstones;
  job.job_id = seed;
  job.source_level = static_cast<int>(rng.Next() % 3);
  job.target_level = job.source_level + 1;
  job.tombstones.bottommost = rng.Next() % 2 == 0;

  uint64_t seq = 1'000'000;
  for (int f = n - 1; f >= 0; --f) {  // upper files first: they are older
    bool lower = f < n_lower;
    int entries = static_cast<int>(
        Between(rng, shape.min_entries_per_file, shape.max_entries_per_file));
    uint64_t lo = rng.Next() % shape.keyspace;
    uint64_t span = 1 + rng.Next() % shape.keyspace;
    std::vector<KeyValue> pairs;
    pairs.reserve(entries);
    for (int e = 0; e < entries; ++e) {
      std::string uk = FormatKey(lo + rng.Next() % span, 16);
      bool del = rng.NextDouble() < tomb;
      size_t vlen = del ? 0 : Between(rng, shape.min_value, shape.max_value);
      pairs.push_back({MakeInternalKey(uk, ++seq, del ? ValueKind::kDelete : ValueKind::kPut),
                       RandomValue(rng, vlen)});
    }
    std::sort(pairs.begin(), pairs.end(), [](const KeyValue& a, const KeyValue& b) {
      return CompareInternalKeys(a.key, b.key) < 0;
    });
    int level = lower ? job.source_level : job.target_level;
    // Drop entries from the tail until the file fits its size target.
    while (!pairs.empty()) {
      try {
        BuiltSst built = BuildSst(pairs, shape.sst);
        built.meta.file_id = static_cast<uint64_t>(f) + 1;
        built.meta.level = level;
        sj.files[built.meta.file_id] = std::move(built.bytes);
        auto& side = lower ? job.lower : job.upper;
        side.insert(side.begin(), built.meta);
        break;
      } catch (const SizeOverflow&) {
        pairs.resize(pairs.size() * 3 / 4);
      }
    }
  }
  if (job.lower.empty()) {
    std::vector<KeyValue> one{{MakeInternalKey(FormatKey(0, 16), ++seq, ValueKind::kPut), "v"}};
    BuiltSst built = BuildSst(one, shape.sst);
    built.meta.file_id = 99;
    built.meta.level = job.source_level;
    sj.files[99] = std::move(built.bytes);
    job.lower.push_back(built.meta);
  }
  return sj;
}

CompactBenchReport RunCompactBench(const std::vector<SyntheticJob>& jobs, EngineMode mode,
                                   Device* device, const CompactionOptions& options,
                                   std::vector<CompactionStats>* log) {
  if (mode == EngineMode::kOffload && device == nullptr) {
    throw InvalidArgument("offload compact-bench needs a device");
  }
  CompactBenchReport r;
  r.engine = EngineModeName(mode);
  r.jobs = jobs.size();
  auto t0 = std::chrono::steady_clock::now();
  for (const auto& sj : jobs) {
    CompactionResult res = mode == EngineMode::kOffload
                               ? RunCompaction(sj.job, sj.Loader(), *device, options)
                               : ReferenceCompact(sj.job, sj.Loader(), options);
    const CompactionStats& s = res.stats;
    r.input_bytes += s.input_bytes;
    r.output_bytes += s.output_bytes;
    r.fallbacks += s.fell_back ? 1 : 0;
    r.t_stage_in += s.t_stage_in;
    r.t_unpack += s.t_unpack;
    r.t_sort_host += s.t_sort_host;
    r.t_pack += s.t_pack;
    r.t_stage_out += s.t_stage_out;
    if (log) log->push_back(s);
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace luda
