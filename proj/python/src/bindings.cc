#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>

#include "luda/bench.h"
#include "luda/compaction.h"
#include "luda/db.h"
#include "luda/errors.h"
#include "luda/metrics.h"
#include "luda/sst.h"
#include "luda/synthetic.h"

namespace py = pybind11;
using namespace luda;

namespace {

py::dict StatsDict(const StoreStats& s) {
  py::dict d;
  d["puts"] = s.puts;
  d["deletes"] = s.deletes;
  d["gets"] = s.gets;
  d["flushes"] = s.flushes;
  d["flush_bytes"] = s.flush_bytes;
  d["compactions"] = s.compactions;
  d["compaction_bytes_read"] = s.compaction_bytes_read;
  d["compaction_bytes_written"] = s.compaction_bytes_written;
  d["fallbacks"] = s.fallbacks;
  d["quarantined_files"] = s.quarantined_files;
  d["slowdowns"] = s.slowdowns;
  d["stalls"] = s.stalls;
  d["rejected_writes"] = s.rejected_writes;
  d["memtable_waits"] = s.memtable_waits;
  d["stall_us"] = s.stall_us;
  return d;
}

py::dict JobDict(const CompactionStats& s) {
  py::dict d;
  d["job_id"] = s.job_id;
  d["source_level"] = s.source_level;
  d["engine"] = s.engine;
  d["fell_back"] = s.fell_back;
  d["input_files"] = s.input_files;
  d["input_bytes"] = s.input_bytes;
  d["output_files"] = s.output_files;
  d["output_bytes"] = s.output_bytes;
  d["input_entries"] = s.input_entries;
  d["output_entries"] = s.output_entries;
  d["t_total_us"] = s.t_total;
  d["overlap_ratio"] = s.overlap_ratio;
  d["value_copy1_bytes"] = s.value_copy1_bytes;
  d["value_copy2_bytes"] = s.value_copy2_bytes;
  d["restored_value_bytes"] = s.restored_value_bytes;
  d["surviving_value_bytes"] = s.surviving_value_bytes;
  return d;
}

py::object Opt(const std::optional<double>& v) {
  return v ? py::object(py::float_(*v)) : py::object(py::none());
}

py::dict LatencyDict(const LatencySummary& l) {
  py::dict d;
  d["count"] = l.count;
  d["overflow"] = l.overflow;
  d["mean"] = Opt(l.mean);
  d["p50"] = Opt(l.p50);
  d["p99"] = Opt(l.p99);
  d["p999"] = Opt(l.p999);
  return d;
}

py::dict PhaseDict(const PhaseSummary& p) {
  py::dict d;
  d["phase"] = p.phase;
  d["mode"] = p.mode;
  d["stress"] = p.stress;
  d["ops"] = p.ops;
  d["seconds"] = p.seconds;
  d["throughput"] = p.throughput();
  d["read"] = LatencyDict(p.read);
  d["write"] = LatencyDict(p.write);
  d["compactions"] = p.compactions;
  d["checked_reads"] = p.checked_reads;
  d["mismatches"] = p.mismatches;
  return d;
}

// The Python-facing store owns its C++ store and closes it on exit.
class PyStore {
 public:
  PyStore(const std::string& path, const std::string& engine, size_t memtable_bytes,
          uint64_t sst_bytes, int device_workers, bool sync) {
    StoreOptions o;
    o.engine = ParseEngineMode(engine);
    o.memtable_bytes = memtable_bytes;
    o.sst.sst_size_target = sst_bytes;
    o.sync = sync;
    if (device_workers > 0) o.device.workers = device_workers;
    py::gil_scoped_release nogil;
    store_ = Store::Open(path, o);
  }

  void Put(const py::bytes& key, const py::bytes& value) {
    std::string k = key, v = value;
    py::gil_scoped_release nogil;
    store_->Put(k, v);
  }

  void Delete(const py::bytes& key) {
    std::string k = key;
    py::gil_scoped_release nogil;
    store_->Delete(k);
  }

  py::object Get(const py::bytes& key) const {
    std::string k = key;
    std::optional<std::string> v;
    {
      py::gil_scoped_release nogil;
      v = store_->Get(k);
    }
    if (!v) return py::none();
    return py::bytes(*v);
  }

  void Flush() {
    py::gil_scoped_release nogil;
    store_->Flush();
  }
  void WaitForIdle() {
    py::gil_scoped_release nogil;
    store_->WaitForIdle();
  }
  bool CompactOnce(bool force) {
    py::gil_scoped_release nogil;
    return store_->CompactOnce(force);
  }
  void Close() {
    py::gil_scoped_release nogil;
    store_->Close();
  }

  py::dict Stats() const { return StatsDict(store_->stats()); }

  py::list CompactionLog() const {
    py::list out;
    for (const auto& s : store_->compaction_log()) out.append(JobDict(s));
    return out;
  }

  std::vector<int> Levels() const {
    VersionPtr v = store_->current();
    std::vector<int> n;
    for (int l = 0; l < kNumLevels; ++l) n.push_back(static_cast<int>(v->files(l).size()));
    return n;
  }

 private:
  std::unique_ptr<Store> store_;
};

// entries: (user_key, seq, is_delete, value); sorted here.
py::bytes BuildSstBytes(const std::vector<std::tuple<py::bytes, uint64_t, bool, py::bytes>>& entries,
                        size_t block_size, int bits_per_key) {
  std::vector<KeyValue> pairs;
  pairs.reserve(entries.size());
  for (const auto& [k, seq, del, v] : entries) {
    pairs.push_back({MakeInternalKey(std::string(k), seq, del ? ValueKind::kDelete : ValueKind::kPut),
                     std::string(v)});
  }
  std::sort(pairs.begin(), pairs.end(), [](const KeyValue& a, const KeyValue& b) {
    return CompareInternalKeys(a.key, b.key) < 0;
  });
  SstOptions o;
  o.block_size = block_size;
  o.bits_per_key = bits_per_key;
  std::string bytes;
  {
    py::gil_scoped_release nogil;
    bytes = BuildSst(pairs, o).bytes;
  }
  return py::bytes(bytes);
}

py::list ReadSst(const py::bytes& data) {
  std::vector<KeyValue> kvs;
  {
    std::string bytes = data;
    py::gil_scoped_release nogil;
    kvs = Table::OpenBytes(std::move(bytes))->Scan();
  }
  py::list out;
  for (const auto& kv : kvs) {
    ParsedInternalKey p;
    if (!ParseInternalKey(kv.key, &p)) throw FormatError("bad internal key");
    out.append(py::make_tuple(py::bytes(std::string(p.user_key)), p.seq,
                              p.kind == ValueKind::kDelete, py::bytes(kv.value)));
  }
  return out;
}

// Runs one synthetic job through both engines.
py::dict CompareEngines(uint64_t seed, int device_workers) {
  CompactionResult off, ref;
  {
    py::gil_scoped_release nogil;
    SyntheticJob sj = MakeSyntheticJob(seed);
    DeviceOptions d;
    d.workers = std::max(1, device_workers);
    d.model_transfers = false;
    Device device(d);
    off = RunCompaction(sj.job, sj.Loader(), device);
    ref = ReferenceCompact(sj.job, sj.Loader());
  }
  bool identical = off.outputs.size() == ref.outputs.size();
  for (size_t i = 0; identical && i < off.outputs.size(); ++i) {
    identical = off.outputs[i].bytes == ref.outputs[i].bytes;
  }
  py::list outputs;
  for (const auto& o : off.outputs) outputs.append(py::bytes(o.bytes));
  py::dict d;
  d["identical"] = identical;
  d["outputs"] = outputs;
  d["offload"] = JobDict(off.stats);
  d["reference"] = JobDict(ref.stats);
  return d;
}

py::dict Bench(const std::string& db, const std::string& mode, uint64_t records, uint64_t ops,
               size_t value_size, double stress, uint64_t seed, int threads, size_t memtable_bytes) {
  BenchConfig cfg;
  cfg.db = db;
  cfg.spec.record_count = records;
  cfg.spec.op_count = ops;
  cfg.spec.value_size = value_size;
  cfg.spec.seed = seed;
  cfg.store.engine = ParseEngineMode(mode);
  cfg.store.memtable_bytes = memtable_bytes;
  cfg.store.check_invariants = false;
  cfg.stress = stress;
  cfg.threads = threads;
  BenchResult r;
  {
    py::gil_scoped_release nogil;
    r = RunBench(cfg);
  }
  py::list phases;
  for (const auto& p : r.phases) phases.append(PhaseDict(p));
  py::list jobs;
  for (const auto& j : r.jobs) jobs.append(JobDict(j));
  py::dict d;
  d["phases"] = phases;
  d["jobs"] = jobs;
  d["mismatches"] = r.mismatches();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "LSM key-value store with compaction offloaded to a modeled device.";

  // Translators run newest first, so the base class goes in first.
  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<InvalidArgument>(m, "InvalidArgument",
                                          py::make_tuple(base, py::handle(PyExc_ValueError)));
  py::register_exception<Corruption>(m, "Corruption", base);
  py::register_exception<WriteStall>(m, "WriteStall", base);
  py::register_exception<StoreClosed>(m, "StoreClosed", base);

  py::class_<PyStore>(m, "Store")
      .def(py::init<const std::string&, const std::string&, size_t, uint64_t, int, bool>(),
           py::arg("path"), py::arg("engine") = "offload", py::arg("memtable_bytes") = 4u << 20,
           py::arg("sst_bytes") = kDefaultSstSize, py::arg("device_workers") = 0,
           py::arg("sync") = false)
      .def("put", &PyStore::Put, py::arg("key"), py::arg("value"))
      .def("delete", &PyStore::Delete, py::arg("key"))
      .def("get", &PyStore::Get, py::arg("key"), "Value for key, or None.")
      .def("flush", &PyStore::Flush)
      .def("wait_for_idle", &PyStore::WaitForIdle)
      .def("compact_once", &PyStore::CompactOnce, py::arg("force") = false)
      .def("close", &PyStore::Close)
      .def("stats", &PyStore::Stats)
      .def("compaction_log", &PyStore::CompactionLog)
      .def("levels", &PyStore::Levels, "File count per level.")
      .def("__enter__", [](PyStore& s) -> PyStore& { return s; })
      .def("__exit__", [](PyStore& s, py::args) { s.Close(); });

  m.def("build_sst", &BuildSstBytes, py::arg("entries"), py::arg("block_size") = kDefaultBlockSize,
        py::arg("bits_per_key") = kDefaultBitsPerKey,
        "Encode (user_key, seq, is_delete, value) tuples as one SST file.");
  m.def("read_sst", &ReadSst, py::arg("data"),
        "Decode every entry of an SST as (user_key, seq, is_delete, value).");
  m.def("compare_engines", &CompareEngines, py::arg("seed"), py::arg("device_workers") = 2,
        "Run one seeded synthetic compaction job through both engines.");
  m.def("bench", &Bench, py::arg("db"), py::arg("mode") = "offload", py::arg("records") = 10000,
        py::arg("ops") = 10000, py::arg("value_size") = 256, py::arg("stress") = 0.0,
        py::arg("seed") = 42, py::arg("threads") = 1, py::arg("memtable_bytes") = 4u << 20,
        "Load then run a YCSB-A style workload; returns per-phase summaries.");

  py::class_<LatencyRecorder>(m, "LatencyRecorder")
      .def(py::init<>())
      .def("record",
           [](LatencyRecorder& r, const std::string& kind, double micros) {
             if (kind != "read" && kind != "write") throw InvalidArgument("kind must be read or write");
             r.Record(kind == "read" ? LatencyKind::kRead : LatencyKind::kWrite, micros);
           },
           py::arg("kind"), py::arg("micros"))
      .def("summary",
           [](const LatencyRecorder& r, const std::string& kind) {
             if (kind != "read" && kind != "write") throw InvalidArgument("kind must be read or write");
             return LatencyDict(r.Summary(kind == "read" ? LatencyKind::kRead : LatencyKind::kWrite));
           },
           py::arg("kind"));
}
