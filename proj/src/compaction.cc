#include "luda/compaction.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <future>
#include <sstream>
#include <stdexcept>

#include "luda/coding.h"
#include "luda/crc32c.h"
#include "luda/errors.h"

namespace luda {

namespace {

double MicrosBetween(int64_t begin_ns, int64_t end_ns) {
  return end_ns > begin_ns ? (end_ns - begin_ns) / 1e3 : 0.0;
}

// Footer and index of a file held in host memory; the data blocks are not
// touched.
std::vector<IndexEntry> ReadLayout(std::string_view file) {
  if (file.size() < kFooterSize) throw FormatError("file too small to be an SST");
  Footer f = DecodeFooter(file.substr(file.size() - kFooterSize));
  uint64_t body_end = file.size() - kFooterSize;
  if (uint64_t{f.filter_offset} + f.filter_len > f.index_offset ||
      uint64_t{f.index_offset} + f.index_len != body_end) {
    throw FormatError("footer offsets out of range");
  }
  auto index = DecodeIndexBlock(file.substr(f.index_offset, f.index_len), f.index_offset);
  uint32_t expect = 0;
  for (const auto& e : index) {
    if (e.offset != expect || e.length < kBlockTrailerSize + 4) {
      throw FormatError("corrupt index: block extents out of order");
    }
    expect = e.offset + e.length;
  }
  if (expect != f.filter_offset) throw FormatError("corrupt index: gap before filter");
  return index;
}

struct Interval {
  int64_t begin;
  int64_t end;
};

// Merged, sorted union of intervals.
std::vector<Interval> Union(std::vector<Interval> v) {
  std::sort(v.begin(), v.end(),
            [](const Interval& a, const Interval& b) { return a.begin < b.begin; });
  std::vector<Interval> out;
  for (const auto& i : v) {
    if (i.end <= i.begin) continue;
    if (!out.empty() && i.begin <= out.back().end) {
      out.back().end = std::max(out.back().end, i.end);
    } else {
      out.push_back(i);
    }
  }
  return out;
}

// Waits for every handle, then rethrows the first failure. Kernel bodies
// borrow pipeline state, so nothing may unwind while one is still running.
void WaitAll(const std::vector<DispatchHandle>& handles) {
  std::exception_ptr err;
  for (const auto& h : handles) {
    try {
      h.Wait();
    } catch (...) {
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
}

void DrainQuietly(const std::vector<DispatchHandle>& handles) {
  try {
    WaitAll(handles);
  } catch (...) {
  }
}

int64_t Length(const std::vector<Interval>& v) {
  int64_t total = 0;
  for (const auto& i : v) total += i.end - i.begin;
  return total;
}

int64_t IntersectionLength(const std::vector<Interval>& a, const std::vector<Interval>& b) {
  int64_t total = 0;
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    int64_t lo = std::max(a[i].begin, b[j].begin);
    int64_t hi = std::min(a[i].end, b[j].end);
    if (hi > lo) total += hi - lo;
    if (a[i].end < b[j].end) ++i; else ++j;
  }
  return total;
}

double OverlapRatio(const std::vector<TraceEvent>& trace) {
  std::vector<Interval> compute, transfer;
  for (const auto& ev : trace) {
    Interval iv{ev.start_ns, ev.end_ns};
    (ev.type == TraceEvent::Type::kDispatch ? compute : transfer).push_back(iv);
  }
  auto c = Union(std::move(compute));
  auto t = Union(std::move(transfer));
  int64_t busy = Length(c);
  return busy > 0 ? static_cast<double>(IntersectionLength(c, t)) / busy : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------

bool GrandparentCutter::ShouldStopBefore(std::string_view ikey) {
  while (index_ < grandparents_.size() &&
         CompareInternalKeys(ikey, grandparents_[index_].largest.Encoded()) > 0) {
    if (seen_key_) overlapped_++;
    index_++;
  }
  seen_key_ = true;
  if (overlapped_ > max_overlap_) {
    overlapped_ = 0;
    return true;
  }
  return false;
}

void AppendTuple(std::string* dst, const TupleRef& t) {
  PutFixed32(dst, static_cast<uint32_t>(t.key.size()));
  dst->append(t.key);
  PutFixed64(dst, t.v_offset);
  PutFixed32(dst, t.v_len);
}

std::vector<TupleRef> ParseTuples(std::string_view bytes) {
  std::vector<TupleRef> out;
  size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 4) throw FormatError("truncated tuple");
    uint32_t klen = DecodeFixed32(bytes.data() + pos);
    if (bytes.size() - pos < TupleSize(klen)) throw FormatError("truncated tuple");
    TupleRef t;
    t.key = bytes.substr(pos + 4, klen);
    t.v_offset = DecodeFixed64(bytes.data() + pos + 4 + klen);
    t.v_len = DecodeFixed32(bytes.data() + pos + 12 + klen);
    out.push_back(t);
    pos += TupleSize(klen);
  }
  return out;
}

namespace {

// Tournament tree of losers over k sorted runs. tree_[0] holds the current
// winner, tree_[1..n) the loser of each internal match.
class LoserTree {
 public:
  explicit LoserTree(std::span<const std::vector<TupleRef>> runs)
      : runs_(runs), pos_(runs.size(), 0) {
    k_ = static_cast<int>(runs.size());
    n_ = 1;
    while (n_ < k_) n_ <<= 1;
    tree_.assign(n_, -1);
    std::vector<int> win(2 * n_, -1);
    for (int i = 0; i < n_; ++i) win[n_ + i] = i < k_ ? i : -1;
    for (int node = n_ - 1; node >= 1; --node) {
      int a = win[2 * node], b = win[2 * node + 1];
      if (Beats(a, b)) {
        win[node] = a;
        tree_[node] = b;
      } else {
        win[node] = b;
        tree_[node] = a;
      }
    }
    tree_[0] = win[1];
  }

  bool Empty() const { return Exhausted(tree_[0]); }
  const TupleRef& Top() const { return runs_[tree_[0]][pos_[tree_[0]]]; }

  void Pop() {
    int w = tree_[0];
    const auto& run = runs_[w];
    size_t p = ++pos_[w];
    if (p < run.size() && CompareInternalKeys(run[p - 1].key, run[p].key) >= 0) {
      throw std::logic_error("tuple run is not strictly ascending");
    }
    int cur = w;
    for (int node = (w + n_) / 2; node >= 1; node /= 2) {
      if (Beats(tree_[node], cur)) std::swap(tree_[node], cur);
    }
    tree_[0] = cur;
  }

 private:
  bool Exhausted(int i) const {
    return i < 0 || pos_[i] >= runs_[i].size();
  }

  bool Beats(int a, int b) const {
    if (Exhausted(a)) return false;
    if (Exhausted(b)) return true;
    int c = CompareInternalKeys(runs_[a][pos_[a]].key, runs_[b][pos_[b]].key);
    if (c == 0) throw std::logic_error("duplicate internal key across input runs");
    return c < 0;
  }

  std::span<const std::vector<TupleRef>> runs_;
  std::vector<size_t> pos_;
  std::vector<int> tree_;
  int k_ = 0;
  int n_ = 1;
};

}  // namespace

std::vector<TupleRef> CooperativeSort(std::span<const std::vector<TupleRef>> runs,
                                      const TombstonePolicy& policy) {
  size_t total = 0;
  for (const auto& r : runs) {
    total += r.size();
    if (r.size() > 1 && CompareInternalKeys(r[0].key, r[1].key) >= 0) {
      throw std::logic_error("tuple run is not strictly ascending");
    }
  }
  std::vector<TupleRef> out;
  out.reserve(total);
  if (runs.empty()) return out;
  LoserTree tree(runs);
  std::string_view last_user;
  bool have_last = false;
  while (!tree.Empty()) {
    const TupleRef& t = tree.Top();
    std::string_view user = ExtractUserKey(t.key);
    if (!have_last || user != last_user) {
      have_last = true;
      last_user = user;
      bool tombstone = static_cast<ValueKind>(ExtractTrailer(t.key) & 0xff) ==
                       ValueKind::kDelete;
      if (!(tombstone && policy.CanDrop(user))) out.push_back(t);
    }
    tree.Pop();
  }
  return out;
}

std::string CompactionStatsCsvHeader() {
  return "job_id,source_level,input_files,input_bytes,output_files,output_bytes,"
         "t_stage_in,t_unpack,t_sort_host,t_pack,t_stage_out,overlap_ratio,"
         "engine,fell_back,t_total,input_entries,output_entries";
}

std::string CompactionStatsCsvRow(const CompactionStats& s) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(1);
  o << s.job_id << ',' << s.source_level << ',' << s.input_files << ','
    << s.input_bytes << ',' << s.output_files << ',' << s.output_bytes << ','
    << s.t_stage_in << ',' << s.t_unpack << ',' << s.t_sort_host << ',' << s.t_pack
    << ',' << s.t_stage_out << ',';
  o.precision(4);
  o << s.overlap_ratio << ',' << s.engine << ',' << (s.fell_back ? 1 : 0) << ',';
  o.precision(1);
  o << s.t_total << ',' << s.input_entries << ',' << s.output_entries;
  return o.str();
}

// ---------------------------------------------------------------------------
// Reference engine.

namespace {

std::vector<const SstMeta*> JobInputs(const CompactionJob& job) {
  std::vector<const SstMeta*> in;
  for (const auto& m : job.lower) in.push_back(&m);
  for (const auto& m : job.upper) in.push_back(&m);
  return in;
}

// Encodes data blocks for the planned files and frames them. entry(i) yields
// the i-th surviving EntryRef.
template <typename EntryAt>
std::vector<OutputFile> AssembleOnHost(const OutputPlan& plan, EntryAt entry,
                                       const CompactionJob& job,
                                       const CompactionOptions& options) {
  std::vector<OutputFile> outputs;
  std::vector<EntryRef> block_entries;
  std::vector<std::string_view> user_keys;
  for (const auto& pf : plan.files) {
    OutputFile out;
    out.bytes.reserve(pf.data_bytes + FilterBlockSize(pf.num_entries, options.sst.bits_per_key) +
                      pf.num_blocks * 64 + kFooterSize);
    std::vector<IndexEntry> index;
    for (uint32_t b = pf.first_block; b < pf.first_block + pf.num_blocks; ++b) {
      const PlannedBlock& pb = plan.blocks[b];
      block_entries.clear();
      for (uint32_t i = pb.first; i < pb.first + pb.count; ++i) {
        block_entries.push_back(entry(i));
      }
      std::string block = EncodeDataBlock(block_entries, options.sst.restart_interval);
      if (block.size() != pb.size) throw std::logic_error("block plan size mismatch");
      index.push_back({std::string(block_entries.back().key),
                       static_cast<uint32_t>(out.bytes.size()),
                       static_cast<uint32_t>(block.size())});
      out.bytes.append(block);
    }
    user_keys.clear();
    for (uint32_t i = pf.first_entry; i < pf.first_entry + pf.num_entries; ++i) {
      user_keys.push_back(ExtractUserKey(entry(i).key));
    }
    FilterBlock filter = BuildFilter(user_keys, options.sst.bits_per_key);
    FinishSstFile(&out.bytes, index, EncodeFilterBlock(filter));
    out.meta.smallest = InternalKey::FromEncoded(entry(pf.first_entry).key);
    out.meta.largest =
        InternalKey::FromEncoded(entry(pf.first_entry + pf.num_entries - 1).key);
    out.meta.entries = pf.num_entries;
    out.meta.level = job.target_level;
    out.meta.file_size = out.bytes.size();
    outputs.push_back(std::move(out));
  }
  return outputs;
}

void FillOutputStats(const std::vector<OutputFile>& outputs, CompactionStats* s) {
  s->output_files = outputs.size();
  for (const auto& o : outputs) {
    s->output_bytes += o.bytes.size();
    s->output_entries += o.meta.entries;
  }
}

}  // namespace

CompactionResult ReferenceCompact(const CompactionJob& job, const FileLoader& load,
                                  const CompactionOptions& options) {
  auto t0 = std::chrono::steady_clock::now();
  CompactionResult result;
  CompactionStats& s = result.stats;
  s.job_id = job.job_id;
  s.source_level = job.source_level;
  s.engine = "inline";

  std::vector<KeyValue> pairs;
  for (const SstMeta* m : JobInputs(job)) {
    std::string bytes = load(*m);
    s.input_files++;
    s.input_bytes += bytes.size();
    auto index = ReadLayout(bytes);
    for (const auto& e : index) {
      auto block = DecodeDataBlock(std::string_view(bytes).substr(e.offset, e.length),
                                   e.offset);
      for (auto& kv : block) pairs.push_back(std::move(kv));
    }
  }
  s.input_entries = pairs.size();
  std::sort(pairs.begin(), pairs.end(), [](const KeyValue& a, const KeyValue& b) {
    return CompareInternalKeys(a.key, b.key) < 0;
  });

  std::vector<size_t> keep;
  keep.reserve(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    std::string_view user = ExtractUserKey(pairs[i].key);
    if (i > 0) {
      if (CompareInternalKeys(pairs[i - 1].key, pairs[i].key) == 0) {
        throw std::logic_error("duplicate internal key across input files");
      }
      if (ExtractUserKey(pairs[i - 1].key) == user) continue;
    }
    bool tombstone =
        static_cast<ValueKind>(ExtractTrailer(pairs[i].key) & 0xff) == ValueKind::kDelete;
    if (tombstone && job.tombstones.CanDrop(user)) continue;
    keep.push_back(i);
  }

  auto entry = [&](size_t i) -> EntryRef {
    const KeyValue& kv = pairs[keep[i]];
    return {kv.key, kv.value};
  };
  OutputPlan plan = PlanOutputs(
      keep.size(), [&](size_t i) { return std::string_view(pairs[keep[i]].key); },
      [&](size_t i) { return pairs[keep[i]].value.size(); }, options, job.grandparents);
  result.outputs = AssembleOnHost(plan, entry, job, options);
  FillOutputStats(result.outputs, &s);
  s.output_blocks = plan.blocks.size();
  for (size_t i : keep) s.surviving_value_bytes += pairs[i].value.size();
  s.t_total = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0)
                  .count();
  return result;
}

// ---------------------------------------------------------------------------
// Offload engine.
//
// Region layouts (all integers little-endian):
//   in[f]      the staged input file
//   measure    per input block: entries, record bytes, tuple bytes, value bytes (4 x u64)
//   offsets    per input block: record offset, tuple offset (2 x u64)
//   totals     entries, record bytes, tuple bytes, value bytes, then per input
//              file: tuple offset, tuple bytes (2 x u64)
//   pairs      restored records: fixed32 klen | fixed32 vlen | key | value
//   tuples     unsorted tuples, per-file runs in file order
//   sorted     surviving tuples in key order (from the host)
//   plan       per output block 32 bytes, then per output file 32 bytes
//   layouts    per surviving entry: shared, unshared (2 x u32)
//   out        encoded data blocks of every output file, back to back
//   filters    encoded filter blocks of every output file, back to back

namespace {

constexpr size_t kMeasureStride = 32;
constexpr size_t kOffsetStride = 16;
constexpr size_t kTotalsHeader = 32;
constexpr size_t kTotalsPerFile = 16;
constexpr size_t kPlanBlockStride = 32;
constexpr size_t kPlanFileStride = 32;
constexpr size_t kRecordHeader = 8;

struct InputFile {
  const SstMeta* meta = nullptr;
  StreamId stream = StreamId::kInLower;
  std::vector<IndexEntry> index;
  uint64_t size = 0;
  uint32_t first_block = 0;  // global input block number
  RegionPtr region;
  TransferHandle transfer;
};

}  // namespace

struct OffloadPipeline::State {
  const CompactionJob& job;
  const FileLoader& load;
  Device& device;
  CompactionOptions options;
  CompactionStats stats;

  int64_t t_begin = 0;
  std::vector<InputFile> files;
  uint32_t total_blocks = 0;

  RegionPtr measure, offsets, totals, pairs, tuples;
  std::string host_totals;
  std::string host_tuples;
  std::vector<std::vector<TupleRef>> runs;

  std::vector<TupleRef> survivors;
  OutputPlan plan;
  std::vector<uint64_t> block_out_offset;  // offset in the out region
  std::vector<uint64_t> file_filter_offset;
  RegionPtr sorted, plan_region, layouts, out, filters;

  std::atomic<uint64_t> copy1{0};
  std::atomic<uint64_t> copy2{0};

  bool unpacked = false;
  bool sorted_done = false;

  State(const CompactionJob& j, const FileLoader& l, Device& d, const CompactionOptions& o)
      : job(j), load(l), device(d), options(o) {}
};

OffloadPipeline::OffloadPipeline(const CompactionJob& job, const FileLoader& load,
                                 Device& device, const CompactionOptions& options)
    : s_(std::make_unique<State>(job, load, device, options)) {
  s_->stats.job_id = job.job_id;
  s_->stats.source_level = job.source_level;
  s_->stats.engine = "offload";
}

OffloadPipeline::~OffloadPipeline() = default;

void OffloadPipeline::StageAndUnpack() {
  State& s = *s_;
  Device& dev = s.device;
  dev.ClearTrace();
  s.t_begin = dev.Now();

  auto add_input = [&](const SstMeta& m, StreamId stream) {
    InputFile f;
    f.meta = &m;
    f.stream = stream;
    s.files.push_back(std::move(f));
  };
  for (const auto& m : s.job.lower) add_input(m, StreamId::kInLower);
  for (const auto& m : s.job.upper) add_input(m, StreamId::kInUpper);
  for (auto& f : s.files) f.region = dev.AllocateEmpty("in:" + std::to_string(f.meta->file_id));

  // Two host threads read their level's files and hand each one to its own
  // copy stream as soon as it is in memory. The index is parsed on the host
  // before the bytes are handed over; only the block extents are kept.
  std::vector<std::promise<void>> issued(s.files.size());
  std::vector<std::future<void>> issued_f;
  for (auto& p : issued) issued_f.push_back(p.get_future());
  auto stage_level = [&](StreamId stream) {
    for (size_t i = 0; i < s.files.size(); ++i) {
      InputFile& f = s.files[i];
      if (f.stream != stream) continue;
      try {
        std::string bytes = s.load(*f.meta);
        f.size = bytes.size();
        f.index = ReadLayout(bytes);
        f.transfer = dev.StageIn(f.region, std::move(bytes), stream);
        issued[i].set_value();
      } catch (...) {
        issued[i].set_exception(std::current_exception());
        // Later files on this stream are never issued.
        for (size_t j = i + 1; j < s.files.size(); ++j) {
          if (s.files[j].stream == stream) {
            issued[j].set_exception(std::make_exception_ptr(
                IoError("staging abandoned after an earlier failure")));
          }
        }
        return;
      }
    }
  };
  std::thread upper_thread(stage_level, StreamId::kInUpper);
  stage_level(StreamId::kInLower);
  upper_thread.join();

  // Global block numbering needs every index; wait for issue (not arrival).
  for (auto& f : issued_f) f.get();
  for (auto& f : s.files) {
    f.first_block = s.total_blocks;
    s.total_blocks += static_cast<uint32_t>(f.index.size());
    s.stats.input_files++;
    s.stats.input_bytes += f.size;
  }

  s.measure = dev.Allocate(uint64_t{s.total_blocks} * kMeasureStride, "measure");
  s.offsets = dev.Allocate(uint64_t{s.total_blocks} * kOffsetStride, "offsets");
  s.totals = dev.Allocate(kTotalsHeader + s.files.size() * kTotalsPerFile, "totals");

  // unpack, pass 1: verify each block and measure what it will restore.
  // Dispatched per file as soon as that file has arrived.
  std::vector<DispatchHandle> measures;
  int64_t staged_end = s.t_begin;
  int64_t lower_first = -1, lower_last = 0, upper_first = -1, upper_last = 0;
  int64_t unpack_begin = -1;
  try {
    for (auto& f : s.files) {
      f.transfer.Wait();
      const auto& c = *f.transfer.completion;
      staged_end = std::max(staged_end, c.end_ns());
      int64_t& first = f.stream == StreamId::kInLower ? lower_first : upper_first;
      int64_t& last = f.stream == StreamId::kInLower ? lower_last : upper_last;
      if (first < 0) first = c.issue_ns();
      last = std::max(last, c.end_ns());

      KernelSpec k;
      k.kind = KernelKind::kUnpack;
      k.label = "unpack.measure";
      k.items = f.index.size();
      k.inputs = {f.region.get()};
      k.outputs = {s.measure.get()};
      InputFile* fp = &f;
      DeviceRegion* measure = s.measure.get();
      k.body = [fp, measure](const KernelContext& ctx, size_t item) {
        const IndexEntry& e = fp->index[item];
        auto in = ctx.In(*fp->region);
        std::string_view raw(in.data() + e.offset, e.length);
        BlockCursor cursor(VerifyBlock(raw, e.offset));
        uint64_t n = 0, records = 0, tuple_bytes = 0, values = 0;
        std::string prev;
        for (cursor.SeekToFirst(); cursor.Valid(); cursor.Next()) {
          std::string_view key = cursor.key();
          ParsedInternalKey parsed;
          if (!ParseInternalKey(key, &parsed)) {
            throw FormatError("bad internal key in block at offset " + std::to_string(e.offset));
          }
          if (n > 0 && CompareInternalKeys(prev, key) >= 0) {
            throw FormatError("block keys out of order at offset " + std::to_string(e.offset));
          }
          prev.assign(key);
          n++;
          records += kRecordHeader + key.size() + cursor.value().size();
          tuple_bytes += TupleSize(key.size());
          values += cursor.value().size();
        }
        if (n == 0) throw FormatError("empty data block at offset " + std::to_string(e.offset));
        auto out = ctx.Out(*measure, uint64_t{fp->first_block + item} * kMeasureStride,
                           kMeasureStride);
        EncodeFixed64(out.data(), n);
        EncodeFixed64(out.data() + 8, records);
        EncodeFixed64(out.data() + 16, tuple_bytes);
        EncodeFixed64(out.data() + 24, values);
      };
      if (unpack_begin < 0) unpack_begin = dev.Now();
      measures.push_back(dev.Dispatch(std::move(k)));
    }
  } catch (...) {
    DrainQuietly(measures);
    throw;
  }
  s.stats.t_stage_in = MicrosBetween(s.t_begin, staged_end);
  if (lower_first >= 0) s.stats.stage_lower_us = MicrosBetween(lower_first, lower_last);
  if (upper_first >= 0) s.stats.stage_upper_us = MicrosBetween(upper_first, upper_last);
  {
    int64_t first = lower_first < 0 ? upper_first
                    : upper_first < 0 ? lower_first
                                      : std::min(lower_first, upper_first);
    if (first >= 0) s.stats.stage_wall_us = MicrosBetween(first, std::max(lower_last, upper_last));
  }
  WaitAll(measures);

  // unpack, scan: exclusive prefix sums over the per-block measurements.
  {
    KernelSpec k;
    k.kind = KernelKind::kUnpack;
    k.label = "unpack.scan";
    k.items = 1;
    k.inputs = {s.measure.get()};
    k.outputs = {s.offsets.get(), s.totals.get()};
    State* sp = &s;
    k.body = [sp](const KernelContext& ctx, size_t) {
      auto m = ctx.In(*sp->measure);
      auto off = ctx.Out(*sp->offsets, 0, sp->offsets->size());
      auto tot = ctx.Out(*sp->totals, 0, sp->totals->size());
      uint64_t n = 0, records = 0, tuples = 0, values = 0;
      for (size_t fi = 0; fi < sp->files.size(); ++fi) {
        const InputFile& f = sp->files[fi];
        uint64_t file_tuple_begin = tuples;
        for (size_t b = 0; b < f.index.size(); ++b) {
          size_t g = f.first_block + b;
          const char* p = m.data() + g * kMeasureStride;
          EncodeFixed64(off.data() + g * kOffsetStride, records);
          EncodeFixed64(off.data() + g * kOffsetStride + 8, tuples);
          n += DecodeFixed64(p);
          records += DecodeFixed64(p + 8);
          tuples += DecodeFixed64(p + 16);
          values += DecodeFixed64(p + 24);
        }
        char* pf = tot.data() + kTotalsHeader + fi * kTotalsPerFile;
        EncodeFixed64(pf, file_tuple_begin);
        EncodeFixed64(pf + 8, tuples - file_tuple_begin);
      }
      EncodeFixed64(tot.data(), n);
      EncodeFixed64(tot.data() + 8, records);
      EncodeFixed64(tot.data() + 16, tuples);
      EncodeFixed64(tot.data() + 24, values);
    };
    dev.Dispatch(std::move(k)).Wait();
  }
  s.host_totals.resize(s.totals->size());
  dev.StageOut(s.totals, 0, s.totals->size(), s.host_totals.data(), StreamId::kOut).Wait();
  uint64_t total_entries = DecodeFixed64(s.host_totals.data());
  uint64_t record_bytes = DecodeFixed64(s.host_totals.data() + 8);
  uint64_t tuple_bytes = DecodeFixed64(s.host_totals.data() + 16);
  s.stats.input_entries = total_entries;
  s.stats.restored_value_bytes = DecodeFixed64(s.host_totals.data() + 24);

  // unpack, pass 2: restore records into the pair arena and emit tuples.
  s.pairs = dev.Allocate(record_bytes, "pairs");
  s.tuples = dev.Allocate(tuple_bytes, "tuples");
  std::vector<DispatchHandle> restores;
  try {
    for (auto& f : s.files) {
      KernelSpec k;
      k.kind = KernelKind::kUnpack;
      k.label = "unpack.restore";
      k.items = f.index.size();
      k.inputs = {f.region.get(), s.measure.get(), s.offsets.get()};
      k.outputs = {s.pairs.get(), s.tuples.get()};
      InputFile* fp = &f;
      State* sp = &s;
      k.body = [fp, sp](const KernelContext& ctx, size_t item) {
        const IndexEntry& e = fp->index[item];
        size_t g = fp->first_block + item;
        auto m = ctx.In(*sp->measure);
        auto off = ctx.In(*sp->offsets);
        uint64_t n = DecodeFixed64(m.data() + g * kMeasureStride);
        uint64_t rec_len = DecodeFixed64(m.data() + g * kMeasureStride + 8);
        uint64_t tup_len = DecodeFixed64(m.data() + g * kMeasureStride + 16);
        uint64_t rec_off = DecodeFixed64(off.data() + g * kOffsetStride);
        uint64_t tup_off = DecodeFixed64(off.data() + g * kOffsetStride + 8);
        auto rec = ctx.Out(*sp->pairs, rec_off, rec_len);
        auto tup = ctx.Out(*sp->tuples, tup_off, tup_len);

        auto in = ctx.In(*fp->region);
        std::string_view body(in.data() + e.offset, e.length - kBlockTrailerSize);
        BlockCursor cursor(body);
        uint64_t rp = 0, tp = 0, count = 0, values = 0;
        for (cursor.SeekToFirst(); cursor.Valid(); cursor.Next()) {
          std::string_view key = cursor.key();
          std::string_view value = cursor.value();
          if (rp + kRecordHeader + key.size() + value.size() > rec_len ||
              tp + TupleSize(key.size()) > tup_len) {
            throw std::logic_error("restore overran its measured extent");
          }
          char* r = rec.data() + rp;
          EncodeFixed32(r, static_cast<uint32_t>(key.size()));
          EncodeFixed32(r + 4, static_cast<uint32_t>(value.size()));
          std::memcpy(r + kRecordHeader, key.data(), key.size());
          std::memcpy(r + kRecordHeader + key.size(), value.data(), value.size());
          values += value.size();

          char* t = tup.data() + tp;
          EncodeFixed32(t, static_cast<uint32_t>(key.size()));
          std::memcpy(t + 4, key.data(), key.size());
          EncodeFixed64(t + 4 + key.size(), rec_off + rp);
          EncodeFixed32(t + 12 + key.size(), static_cast<uint32_t>(value.size()));

          rp += kRecordHeader + key.size() + value.size();
          tp += TupleSize(key.size());
          count++;
        }
        if (count != n || rp != rec_len || tp != tup_len) {
          throw std::logic_error("restore disagrees with measure pass");
        }
        sp->copy1.fetch_add(values, std::memory_order_relaxed);
      };
      restores.push_back(dev.Dispatch(std::move(k)));
    }
  } catch (...) {
    DrainQuietly(restores);
    throw;
  }
  WaitAll(restores);
  s.stats.t_unpack = MicrosBetween(unpack_begin, dev.Now());
  // Inputs are no longer needed on the device.
  for (auto& f : s.files) f.region.reset();
  s.unpacked = true;
}

std::vector<OffloadPipeline::PairRecord> OffloadPipeline::PairArena() const {
  State& s = *s_;
  if (!s.unpacked) throw std::logic_error("PairArena before StageAndUnpack");
  std::string host(s.pairs->size(), '\0');
  s.device.StageOut(s.pairs, 0, host.size(), host.data(), StreamId::kOut).Wait();
  std::vector<PairRecord> out;
  size_t p = 0;
  while (p < host.size()) {
    uint32_t klen = DecodeFixed32(host.data() + p);
    uint32_t vlen = DecodeFixed32(host.data() + p + 4);
    out.push_back({host.substr(p + kRecordHeader, klen),
                   host.substr(p + kRecordHeader + klen, vlen)});
    p += kRecordHeader + klen + vlen;
  }
  return out;
}

std::vector<std::vector<TupleRef>> OffloadPipeline::TupleRuns() const {
  State& s = *s_;
  if (s.runs.empty() && !s.files.empty()) {
    throw std::logic_error("TupleRuns before Sort");
  }
  return s.runs;
}

const std::vector<TupleRef>& OffloadPipeline::Survivors() const { return s_->survivors; }
const OutputPlan& OffloadPipeline::Plan() const { return s_->plan; }

void OffloadPipeline::Sort() {
  State& s = *s_;
  Device& dev = s.device;
  if (!s.unpacked) throw std::logic_error("Sort before StageAndUnpack");

  // Tuples (keys and value offsets, never values) go to the host.
  s.host_tuples.resize(s.tuples->size());
  dev.StageOut(s.tuples, 0, s.host_tuples.size(), s.host_tuples.data(), StreamId::kOut)
      .Wait();
  s.stats.tuple_bytes_to_host = s.host_tuples.size();

  int64_t t0 = dev.Now();
  std::string_view all(s.host_tuples);
  s.runs.clear();
  for (size_t fi = 0; fi < s.files.size(); ++fi) {
    const char* pf = s.host_totals.data() + kTotalsHeader + fi * kTotalsPerFile;
    uint64_t begin = DecodeFixed64(pf);
    uint64_t len = DecodeFixed64(pf + 8);
    s.runs.push_back(ParseTuples(all.substr(begin, len)));
    s.stats.tuple_count += s.runs.back().size();
  }
  s.survivors = CooperativeSort(s.runs, s.job.tombstones);
  s.plan = PlanOutputs(
      s.survivors.size(), [&](size_t i) { return s.survivors[i].key; },
      [&](size_t i) { return s.survivors[i].v_len; }, s.options, s.job.grandparents);

  // Sorted tuples and the plan are serialised for the trip back.
  std::string sorted_bytes;
  std::vector<uint64_t> tuple_offset(s.survivors.size() + 1);
  {
    size_t total = 0;
    for (const auto& t : s.survivors) total += TupleSize(t.key.size());
    sorted_bytes.reserve(total);
  }
  for (size_t i = 0; i < s.survivors.size(); ++i) {
    tuple_offset[i] = sorted_bytes.size();
    AppendTuple(&sorted_bytes, s.survivors[i]);
    s.stats.surviving_value_bytes += s.survivors[i].v_len;
  }
  tuple_offset[s.survivors.size()] = sorted_bytes.size();

  std::string plan_bytes;
  plan_bytes.reserve(s.plan.blocks.size() * kPlanBlockStride +
                     s.plan.files.size() * kPlanFileStride);
  uint64_t out_off = 0;
  s.block_out_offset.clear();
  for (const auto& b : s.plan.blocks) {
    s.block_out_offset.push_back(out_off);
    PutFixed64(&plan_bytes, tuple_offset[b.first]);
    PutFixed64(&plan_bytes, out_off);
    PutFixed32(&plan_bytes, b.first);
    PutFixed32(&plan_bytes, b.count);
    PutFixed32(&plan_bytes, b.size);
    PutFixed32(&plan_bytes, 0);
    out_off += b.size;
  }
  uint64_t filter_off = 0;
  s.file_filter_offset.clear();
  for (const auto& f : s.plan.files) {
    s.file_filter_offset.push_back(filter_off);
    PutFixed64(&plan_bytes, tuple_offset[f.first_entry]);
    PutFixed64(&plan_bytes, filter_off);
    PutFixed32(&plan_bytes, f.num_entries);
    PutFixed32(&plan_bytes, static_cast<uint32_t>(
                                FilterBitBytes(f.num_entries, s.options.sst.bits_per_key)));
    PutFixed64(&plan_bytes, 0);
    filter_off += FilterBlockSize(f.num_entries, s.options.sst.bits_per_key);
  }
  s.stats.t_sort_host = MicrosBetween(t0, dev.Now());
  s.stats.tuple_bytes_to_device = sorted_bytes.size();
  s.stats.plan_bytes_to_device = plan_bytes.size();
  s.stats.output_blocks = s.plan.blocks.size();

  s.sorted = dev.AllocateEmpty("sorted");
  s.plan_region = dev.AllocateEmpty("plan");
  auto h1 = dev.StageIn(s.sorted, std::move(sorted_bytes), StreamId::kInLower);
  auto h2 = dev.StageIn(s.plan_region, std::move(plan_bytes), StreamId::kInUpper);
  h1.Wait();
  h2.Wait();
  s.layouts = dev.Allocate(uint64_t{8} * s.survivors.size(), "layouts");
  s.out = dev.Allocate(out_off, "out");
  s.filters = dev.Allocate(filter_off, "filters");
  s.sorted_done = true;
}

namespace {

struct PlanBlockView {
  uint64_t tuple_off;
  uint64_t out_off;
  uint32_t first;
  uint32_t count;
  uint32_t size;
};

PlanBlockView ReadPlanBlock(std::span<const char> plan, size_t b) {
  const char* p = plan.data() + b * kPlanBlockStride;
  return {DecodeFixed64(p), DecodeFixed64(p + 8), DecodeFixed32(p + 16),
          DecodeFixed32(p + 20), DecodeFixed32(p + 24)};
}

// Reads the tuple at p: returns the key and advances p past the tuple.
inline std::string_view NextTuple(const char*& p, uint64_t* v_offset, uint32_t* v_len) {
  uint32_t klen = DecodeFixed32(p);
  std::string_view key(p + 4, klen);
  if (v_offset) *v_offset = DecodeFixed64(p + 4 + klen);
  if (v_len) *v_len = DecodeFixed32(p + 12 + klen);
  p += TupleSize(klen);
  return key;
}

}  // namespace

CompactionResult OffloadPipeline::Pack() {
  State& s = *s_;
  Device& dev = s.device;
  if (!s.sorted_done) throw std::logic_error("Pack before Sort");
  const int ri = s.options.sst.restart_interval;
  const size_t num_blocks = s.plan.blocks.size();
  const size_t num_files = s.plan.files.size();
  const size_t plan_files_at = num_blocks * kPlanBlockStride;

  // Host destinations: each output file's data blocks land directly in the
  // file buffer; filters in their own buffers.
  CompactionResult result;
  result.outputs.resize(num_files);
  std::vector<char*> block_dst(num_blocks);
  for (size_t fi = 0; fi < num_files; ++fi) {
    const PlannedFile& pf = s.plan.files[fi];
    std::string& bytes = result.outputs[fi].bytes;
    bytes.reserve(pf.data_bytes + FilterBlockSize(pf.num_entries, s.options.sst.bits_per_key) +
                  pf.num_blocks * 64 + kFooterSize);
    bytes.resize(pf.data_bytes);
    uint64_t local = 0;
    for (uint32_t b = pf.first_block; b < pf.first_block + pf.num_blocks; ++b) {
      block_dst[b] = bytes.data() + local;
      local += s.plan.blocks[b].size;
    }
  }
  std::vector<std::string> host_filters(num_files);
  for (size_t fi = 0; fi < num_files; ++fi) {
    host_filters[fi].resize(
        FilterBlockSize(s.plan.files[fi].num_entries, s.options.sst.bits_per_key));
  }
  std::vector<TransferHandle> block_out(num_blocks);
  std::vector<TransferHandle> filter_out(num_files);

  int64_t pack_begin = dev.Now();

  // shared_key: per output block, the prefix each entry shares with its
  // predecessor. Restart points (every ri-th entry, block start included)
  // share nothing.
  {
    KernelSpec k;
    k.kind = KernelKind::kSharedKey;
    k.label = "shared_key";
    k.items = num_blocks;
    k.inputs = {s.sorted.get(), s.plan_region.get()};
    k.outputs = {s.layouts.get()};
    State* sp = &s;
    k.body = [sp, ri](const KernelContext& ctx, size_t item) {
      PlanBlockView b = ReadPlanBlock(ctx.In(*sp->plan_region), item);
      const char* p = ctx.In(*sp->sorted).data() + b.tuple_off;
      auto out = ctx.Out(*sp->layouts, uint64_t{8} * b.first, uint64_t{8} * b.count);
      std::string_view prev;
      for (uint32_t j = 0; j < b.count; ++j) {
        std::string_view key = NextTuple(p, nullptr, nullptr);
        uint32_t shared =
            j % ri == 0 ? 0 : static_cast<uint32_t>(SharedPrefixLength(prev, key));
        EncodeFixed32(out.data() + 8 * j, shared);
        EncodeFixed32(out.data() + 8 * j + 4, static_cast<uint32_t>(key.size()) - shared);
        prev = key;
      }
    };
    dev.Dispatch(std::move(k)).Wait();
  }

  // encode: fill each block with its entries, values copied from the pair
  // arena, then restarts, count and checksum. Each finished block is sent
  // to the host immediately.
  DispatchHandle encode;
  {
    KernelSpec k;
    k.kind = KernelKind::kEncode;
    k.label = "encode";
    k.items = num_blocks;
    k.inputs = {s.sorted.get(), s.plan_region.get(), s.layouts.get(), s.pairs.get()};
    k.outputs = {s.out.get()};
    State* sp = &s;
    k.body = [sp, ri](const KernelContext& ctx, size_t item) {
      PlanBlockView b = ReadPlanBlock(ctx.In(*sp->plan_region), item);
      const char* tp = ctx.In(*sp->sorted).data() + b.tuple_off;
      const char* layout = ctx.In(*sp->layouts).data() + uint64_t{8} * b.first;
      const char* pairs = ctx.In(*sp->pairs).data();
      auto out = ctx.Out(*sp->out, b.out_off, b.size);
      char* base = out.data();
      char* w = base;
      uint32_t restarts = (b.count + ri - 1) / ri;
      uint64_t values = 0;
      std::vector<uint32_t> restart_offsets;
      restart_offsets.reserve(restarts);
      for (uint32_t j = 0; j < b.count; ++j) {
        uint64_t v_offset;
        uint32_t v_len;
        std::string_view key = NextTuple(tp, &v_offset, &v_len);
        uint32_t shared = DecodeFixed32(layout + 8 * j);
        uint32_t unshared = DecodeFixed32(layout + 8 * j + 4);
        if (j % ri == 0) restart_offsets.push_back(static_cast<uint32_t>(w - base));
        w = EncodeVarint32(w, shared);
        w = EncodeVarint32(w, unshared);
        w = EncodeVarint32(w, v_len);
        std::memcpy(w, key.data() + shared, unshared);
        w += unshared;
        const char* rec = pairs + v_offset;
        uint32_t rec_klen = DecodeFixed32(rec);
        std::memcpy(w, rec + kRecordHeader + rec_klen, v_len);
        w += v_len;
        values += v_len;
      }
      for (uint32_t r : restart_offsets) {
        EncodeFixed32(w, r);
        w += 4;
      }
      EncodeFixed32(w, static_cast<uint32_t>(restart_offsets.size()));
      w += 4;
      EncodeFixed32(w, crc32c::Value(base, static_cast<size_t>(w - base)));
      w += 4;
      if (static_cast<uint64_t>(w - base) != b.size) {
        throw std::logic_error("encoded block size differs from plan");
      }
      sp->copy2.fetch_add(values, std::memory_order_relaxed);
    };
    Device* devp = &dev;
    k.on_item_done = [sp, devp, &block_dst, &block_out](size_t item) {
      const PlannedBlock& pb = sp->plan.blocks[item];
      block_out[item] = devp->StageOut(sp->out, sp->block_out_offset[item], pb.size,
                                       block_dst[item], StreamId::kOut);
    };
    encode = dev.Dispatch(std::move(k));
  }

  // filter: one item per output file, issued behind encode so it runs while
  // the first blocks are already on their way out.
  DispatchHandle filter;
  {
    KernelSpec k;
    k.kind = KernelKind::kFilter;
    k.label = "filter";
    k.items = num_files;
    k.inputs = {s.sorted.get(), s.plan_region.get()};
    k.outputs = {s.filters.get()};
    State* sp = &s;
    uint32_t probes = ProbeCount(s.options.sst.bits_per_key);
    k.body = [sp, plan_files_at, probes](const KernelContext& ctx, size_t item) {
      auto plan = ctx.In(*sp->plan_region);
      const char* p = plan.data() + plan_files_at + item * kPlanFileStride;
      uint64_t tuple_off = DecodeFixed64(p);
      uint64_t filter_off = DecodeFixed64(p + 8);
      uint32_t n = DecodeFixed32(p + 16);
      uint32_t bit_bytes = DecodeFixed32(p + 20);
      auto out = ctx.Out(*sp->filters, filter_off, bit_bytes + 9);
      std::memset(out.data(), 0, bit_bytes);
      const char* tp = ctx.In(*sp->sorted).data() + tuple_off;
      for (uint32_t j = 0; j < n; ++j) {
        std::string_view key = NextTuple(tp, nullptr, nullptr);
        FilterInsert(out.data(), bit_bytes, probes, ExtractUserKey(key));
      }
      FinishFilterBlockAt(out.data(), bit_bytes, n, n == 0 ? 1 : probes);
    };
    Device* devp = &dev;
    k.on_item_done = [sp, devp, &host_filters, &filter_out](size_t item) {
      filter_out[item] = devp->StageOut(sp->filters, sp->file_filter_offset[item],
                                        host_filters[item].size(),
                                        host_filters[item].data(), StreamId::kOut);
    };
    filter = dev.Dispatch(std::move(k));
  }

  // Wait for both dispatches before surfacing either error: the callbacks
  // reference locals of this frame.
  std::exception_ptr err;
  try { encode.Wait(); } catch (...) { err = std::current_exception(); }
  try { filter.Wait(); } catch (...) { if (!err) err = std::current_exception(); }
  int64_t pack_end = std::max(encode.completion->end_ns(), filter.completion->end_ns());
  for (auto& h : block_out) if (h.completion) h.completion->Wait();
  for (auto& h : filter_out) if (h.completion) h.completion->Wait();
  if (err) std::rethrow_exception(err);
  s.stats.t_pack = MicrosBetween(pack_begin, pack_end);

  int64_t out_first_issue = -1, out_last_end = 0, first_block_done = -1;
  for (auto& h : block_out) {
    const auto& c = *h.completion;
    if (out_first_issue < 0 || c.issue_ns() < out_first_issue) out_first_issue = c.issue_ns();
    out_last_end = std::max(out_last_end, c.end_ns());
    if (first_block_done < 0 || c.end_ns() < first_block_done) first_block_done = c.end_ns();
  }
  for (auto& h : filter_out) out_last_end = std::max(out_last_end, h.completion->end_ns());
  if (out_first_issue >= 0) s.stats.t_stage_out = MicrosBetween(out_first_issue, out_last_end);
  s.stats.stage_out_overlapped_filter =
      first_block_done >= 0 && first_block_done < filter.completion->end_ns();

  // Host assembly: index and footer around the returned blocks.
  for (size_t fi = 0; fi < num_files; ++fi) {
    const PlannedFile& pf = s.plan.files[fi];
    OutputFile& out = result.outputs[fi];
    std::vector<IndexEntry> index;
    index.reserve(pf.num_blocks);
    uint32_t local = 0;
    for (uint32_t b = pf.first_block; b < pf.first_block + pf.num_blocks; ++b) {
      const PlannedBlock& pb = s.plan.blocks[b];
      index.push_back({std::string(s.survivors[pb.first + pb.count - 1].key), local, pb.size});
      local += pb.size;
    }
    FinishSstFile(&out.bytes, index, host_filters[fi]);
    out.meta.smallest = InternalKey::FromEncoded(s.survivors[pf.first_entry].key);
    out.meta.largest =
        InternalKey::FromEncoded(s.survivors[pf.first_entry + pf.num_entries - 1].key);
    out.meta.entries = pf.num_entries;
    out.meta.level = s.job.target_level;
    out.meta.file_size = out.bytes.size();
  }

  s.stats.value_copy1_bytes = s.copy1.load();
  s.stats.value_copy2_bytes = s.copy2.load();
  FillOutputStats(result.outputs, &s.stats);
  s.stats.overlap_ratio = OverlapRatio(dev.Trace());
  s.stats.t_total = MicrosBetween(s.t_begin, dev.Now());
  result.stats = s.stats;
  return result;
}

std::vector<std::pair<uint32_t, uint32_t>> OffloadPipeline::SharedLayouts() const {
  State& s = *s_;
  if (!s.layouts || s.layouts->state() != RegionState::kReady) {
    throw std::logic_error("SharedLayouts before Pack");
  }
  std::string host(s.layouts->size(), '\0');
  s.device.StageOut(s.layouts, 0, host.size(), host.data(), StreamId::kOut).Wait();
  std::vector<std::pair<uint32_t, uint32_t>> out(host.size() / 8);
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = {DecodeFixed32(host.data() + 8 * i), DecodeFixed32(host.data() + 8 * i + 4)};
  }
  return out;
}

CompactionResult OffloadCompact(const CompactionJob& job, const FileLoader& load,
                                Device& device, const CompactionOptions& options) {
  OffloadPipeline p(job, load, device, options);
  p.StageAndUnpack();
  p.Sort();
  return p.Pack();
}

CompactionResult RunCompaction(const CompactionJob& job, const FileLoader& load,
                               Device& device, const CompactionOptions& options) {
  try {
    return OffloadCompact(job, load, device, options);
  } catch (const Error& e) {
    spdlog::warn("compaction job {}: offload path failed ({}), using reference path",
                 job.job_id, e.what());
    CompactionResult r = ReferenceCompact(job, load, options);
    r.stats.fell_back = true;
    r.stats.fallback_reason = e.what();
    return r;
  }
}

}  // namespace luda
