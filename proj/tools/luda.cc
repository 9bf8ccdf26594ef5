// luda: benchmark driver, SST inspector and compaction micro-benchmark.

#include <spdlog/cfg/helpers.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "luda/bench.h"
#include "luda/db.h"
#include "luda/errors.h"
#include "luda/metrics.h"
#include "luda/sst.h"
#include "luda/synthetic.h"
#include "luda/workload.h"

namespace fs = std::filesystem;
using namespace luda;

namespace {

// ---------------------------------------------------------------------------
// bench

struct BenchFlags {
  std::string mode = "offload";
  double stress = 0;
  size_t values = 0;
  uint64_t records = 0;
  int64_t ops = -1;
  int threads = 1;
  uint64_t seed = 42;
  bool seed_set = false;
  std::string db = "luda-bench-db";
  std::string report_dir = "luda-report";
  int device_workers = 0;
  double device_bandwidth = 0;
  std::string workload;
  bool fresh = false;
  size_t memtable_bytes = 4u << 20;
};

void PrintSummary(const std::vector<PhaseSummary>& phases) {
  auto opt = [](const std::optional<double>& v) {
    return v ? fmt::format("{:.1f}", *v) : std::string("-");
  };
  std::printf("%-5s %-8s %6s %10s %8s %12s %9s %9s %9s %9s %6s %7s %5s\n", "phase", "mode",
              "stress", "ops", "secs", "ops/s", "rd_avg", "rd_p99", "wr_avg", "wr_p99", "compac",
              "checked", "bad");
  for (const auto& p : phases) {
    std::printf("%-5s %-8s %6.2f %10llu %8.2f %12.1f %9s %9s %9s %9s %6llu %7llu %5llu\n",
                p.phase.c_str(), p.mode.c_str(), p.stress, static_cast<unsigned long long>(p.ops),
                p.seconds, p.throughput(), opt(p.read.mean).c_str(), opt(p.read.p99).c_str(),
                opt(p.write.mean).c_str(), opt(p.write.p99).c_str(),
                static_cast<unsigned long long>(p.compactions),
                static_cast<unsigned long long>(p.checked_reads),
                static_cast<unsigned long long>(p.mismatches));
  }
}

int CmdBench(const BenchFlags& f) {
  BenchConfig cfg;
  WorkloadSpec& spec = cfg.spec;
  if (!f.workload.empty()) spec = LoadWorkloadSpecFile(f.workload, spec);
  if (f.values) spec.value_size = f.values;
  if (f.records) spec.record_count = f.records;
  if (f.ops >= 0) spec.op_count = static_cast<uint64_t>(f.ops);
  if (f.seed_set) spec.seed = f.seed;
  spec.Validate();

  StoreOptions& o = cfg.store;
  o.engine = ParseEngineMode(f.mode);
  o.memtable_bytes = f.memtable_bytes;
  o.check_invariants = false;
  if (f.device_workers > 0) o.device.workers = f.device_workers;
  if (f.device_bandwidth > 0) o.device.bandwidth_bytes_per_sec = f.device_bandwidth;
  cfg.db = f.db;
  cfg.stress = f.stress;
  cfg.threads = f.threads;

  if (fs::exists(f.db) && !fs::is_empty(f.db)) {
    if (!f.fresh) {
      std::fprintf(stderr, "luda: %s is not empty; pass --fresh to wipe it\n", f.db.c_str());
      return 2;
    }
    fs::remove_all(f.db);
  }

  spdlog::info("bench: mode={} stress={} threads={} spec: {}", f.mode, f.stress, f.threads,
               spec.ToString());
  BenchResult r = RunBench(cfg);
  WriteReport(f.report_dir, r.phases, r.timelines, r.jobs);
  PrintSummary(r.phases);
  std::printf("reports written to %s\n", f.report_dir.c_str());
  if (uint64_t bad = r.mismatches()) {
    std::fprintf(stderr, "luda: %llu shadow-map mismatches\n", static_cast<unsigned long long>(bad));
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// sst-dump

std::string Printable(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    if (c >= 0x20 && c < 0x7f && c != '\\') {
      out += static_cast<char>(c);
    } else {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\x%02x", c);
      out += buf;
    }
  }
  return out;
}

std::string ShowKey(std::string_view ikey) {
  ParsedInternalKey p;
  if (!ParseInternalKey(ikey, &p)) return "<bad key " + Printable(ikey) + ">";
  return fmt::format("{}@{}{}", Printable(p.user_key), p.seq,
                     p.kind == ValueKind::kDelete ? ":del" : "");
}

// Returns false on corruption (already reported).
bool DumpFile(const std::string& path, bool verify) {
  std::shared_ptr<const Table> table;
  try {
    table = Table::Open(MakeFileSource(path));
  } catch (const Error& e) {
    std::fprintf(stderr, "%s: cannot open: %s\n", path.c_str(), e.what());
    return false;
  }
  const Footer& ft = table->footer();
  const FilterBlock& filter = table->filter();
  std::printf("%s\n  size %llu bytes, %zu data blocks\n", path.c_str(),
              static_cast<unsigned long long>(table->file_size()), table->index().size());
  std::printf("  footer: filter @%u+%u, index @%u+%u\n", ft.filter_offset, ft.filter_len,
              ft.index_offset, ft.index_len);
  std::printf("  filter: %zu bytes, k=%u, %u keys\n", filter.bits.size(), filter.k, filter.n_keys);
  uint64_t entries = 0;
  bool ok = true;
  for (size_t i = 0; i < table->index().size(); ++i) {
    const IndexEntry& e = table->index()[i];
    std::string raw = table->ReadRawBlock(i);
    try {
      std::string_view body = verify ? VerifyBlock(raw, e.offset)
                                     : std::string_view(raw).substr(0, raw.size() - kBlockTrailerSize);
      uint64_t n = 0;
      std::string first;
      BlockCursor c(body);
      for (c.SeekToFirst(); c.Valid(); c.Next()) {
        if (n++ == 0) first = std::string(c.key());
      }
      entries += n;
      std::printf("  block %zu @%u+%u: %llu entries [%s .. %s]\n", i, e.offset, e.length,
                  static_cast<unsigned long long>(n), ShowKey(first).c_str(),
                  ShowKey(e.last_key).c_str());
    } catch (const Error& err) {
      std::fprintf(stderr, "%s: block %zu at offset %u is corrupt: %s\n", path.c_str(), i,
                   e.offset, err.what());
      ok = false;
    }
  }
  std::printf("  %llu entries%s\n", static_cast<unsigned long long>(entries),
              verify && ok ? ", all checksums verified" : "");
  return ok;
}

int CmdSstDump(const std::string& target, bool verify) {
  std::vector<std::string> files;
  if (fs::is_directory(target)) {
    for (const auto& e : fs::directory_iterator(target)) {
      if (e.is_regular_file() && e.path().extension() == ".sst") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      std::printf("no SSTs in %s\n", target.c_str());
      return 0;
    }
  } else if (fs::exists(target)) {
    files.push_back(target);
  } else {
    std::fprintf(stderr, "luda: %s does not exist\n", target.c_str());
    return 2;
  }
  bool ok = true;
  for (const auto& f : files) ok = DumpFile(f, verify) && ok;
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// compact-bench

struct CompactFlags {
  int jobs = 20;
  std::string mode = "both";
  uint64_t seed = 42;
  int min_files = 2;
  int max_files = 6;
  int entries = 2000;
  size_t min_value = 256;
  size_t max_value = 1024;
  double tombstones = 0.1;
  double stress = 0;
  int device_workers = 0;
  double device_bandwidth = 0;
};

void PrintCompact(const CompactBenchReport& r) {
  std::printf("%-8s jobs=%zu in=%llu out=%llu secs=%.3f MB/s=%.2f fallbacks=%llu\n",
              r.engine.c_str(), r.jobs, static_cast<unsigned long long>(r.input_bytes),
              static_cast<unsigned long long>(r.output_bytes), r.seconds,
              r.bytes_per_sec() / 1e6, static_cast<unsigned long long>(r.fallbacks));
  if (r.engine == "offload" && r.jobs) {
    std::printf("         phases (ms): stage_in=%.1f unpack=%.1f sort_host=%.1f pack=%.1f "
                "stage_out=%.1f\n",
                r.t_stage_in / 1e3, r.t_unpack / 1e3, r.t_sort_host / 1e3, r.t_pack / 1e3,
                r.t_stage_out / 1e3);
  }
}

int CmdCompactBench(const CompactFlags& f) {
  if (f.mode != "both" && f.mode != "offload" && f.mode != "inline") {
    throw InvalidArgument("--mode must be offload, inline or both");
  }
  SyntheticShape shape;
  shape.min_files = f.min_files;
  shape.max_files = f.max_files;
  shape.min_entries_per_file = std::max(1, f.entries / 2);
  shape.max_entries_per_file = f.entries;
  shape.min_value = f.min_value;
  shape.max_value = f.max_value;
  shape.max_tombstones = f.tombstones;
  shape.keyspace = static_cast<uint64_t>(f.entries) * 2;
  std::vector<SyntheticJob> jobs;
  for (int i = 0; i < f.jobs; ++i) jobs.push_back(MakeSyntheticJob(f.seed + i, shape));

  DeviceOptions dopt;
  if (f.device_workers > 0) dopt.workers = f.device_workers;
  if (f.device_bandwidth > 0) dopt.bandwidth_bytes_per_sec = f.device_bandwidth;
  Device device(dopt);
  std::unique_ptr<StressInjector> stress;
  if (f.stress > 0) stress = std::make_unique<StressInjector>(StressSpec{f.stress});

  std::optional<CompactBenchReport> off, in;
  if (f.mode != "inline") off = RunCompactBench(jobs, EngineMode::kOffload, &device);
  if (f.mode != "offload") in = RunCompactBench(jobs, EngineMode::kInline, nullptr);
  if (off) PrintCompact(*off);
  if (in) PrintCompact(*in);
  if (off && in && in->bytes_per_sec() > 0) {
    std::printf("offload/inline bytes/s ratio: %.3f\n", off->bytes_per_sec() / in->bytes_per_sec());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("LUDA_LOG")) spdlog::cfg::helpers::load_levels(lvl);

  CLI::App app{"luda: LSM store with offloaded compaction"};
  app.require_subcommand(1);

  BenchFlags bf;
  auto* bench = app.add_subcommand("bench", "load then run a YCSB-style workload");
  bench->add_option("workload", bf.workload, "workload file (key=value lines)");
  bench->add_option("--mode", bf.mode, "offload or inline")->check(CLI::IsMember({"offload", "inline"}));
  bench->add_option("--stress", bf.stress, "host CPU stress fraction")->check(CLI::Range(0.0, 1.0));
  bench->add_option("--values", bf.values, "value size in bytes");
  bench->add_option("--records", bf.records, "records to load");
  bench->add_option("--ops", bf.ops, "operations in the run phase (0: load only)");
  bench->add_option("--threads", bf.threads, "client threads")->check(CLI::PositiveNumber);
  auto* seed_opt = bench->add_option("--seed", bf.seed, "workload seed");
  bench->add_option("--db", bf.db, "store directory");
  bench->add_option("--report-dir", bf.report_dir, "directory for CSV reports");
  bench->add_option("--device-workers", bf.device_workers, "device worker threads");
  bench->add_option("--device-bandwidth", bf.device_bandwidth, "modeled link bytes/s");
  bench->add_option("--memtable-bytes", bf.memtable_bytes, "memtable flush threshold");
  bench->add_flag("--fresh", bf.fresh, "wipe a non-empty --db first");

  std::string dump_target;
  bool verify = false;
  auto* dump = app.add_subcommand("sst-dump", "list an SST file or every SST in a directory");
  dump->add_option("path", dump_target, "file or store directory")->required();
  dump->add_flag("--verify", verify, "re-check every block checksum");

  CompactFlags cf;
  auto* cb = app.add_subcommand("compact-bench", "run synthetic compaction jobs through the engines");
  cb->add_option("--jobs", cf.jobs, "number of jobs")->check(CLI::NonNegativeNumber);
  cb->add_option("--mode", cf.mode, "offload, inline or both");
  cb->add_option("--seed", cf.seed, "job seed");
  cb->add_option("--min-files", cf.min_files);
  cb->add_option("--max-files", cf.max_files);
  cb->add_option("--entries", cf.entries, "max entries per input file");
  cb->add_option("--min-value", cf.min_value);
  cb->add_option("--max-value", cf.max_value);
  cb->add_option("--tombstones", cf.tombstones, "max tombstone fraction");
  cb->add_option("--stress", cf.stress, "host CPU stress fraction")->check(CLI::Range(0.0, 1.0));
  cb->add_option("--device-workers", cf.device_workers);
  cb->add_option("--device-bandwidth", cf.device_bandwidth);

  CLI11_PARSE(app, argc, argv);
  bf.seed_set = seed_opt->count() > 0;

  try {
    if (bench->parsed()) return CmdBench(bf);
    if (dump->parsed()) return CmdSstDump(dump_target, verify);
    if (cb->parsed()) return CmdCompactBench(cf);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "luda: %s\n", e.what());
    return 1;
  }
  return 0;
}
