#pragma once

// Fixture builders shared by the unit and acceptance tests.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "luda/compaction.h"
#include "luda/errors.h"
#include "luda/internal_key.h"
#include "luda/sst.h"

namespace luda::testing {

// Scratch directory removed with everything in it on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "luda-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::string& path() const { return path_; }
  std::string sub(const std::string& name) const { return path_ + "/" + name; }

 private:
  std::string path_;
};

inline std::string RandomBytes(std::mt19937_64& rng, size_t n) {
  std::string s(n, '\0');
  for (auto& c : s) c = static_cast<char>(rng());
  return s;
}

inline std::string UserKey(uint64_t i, size_t width = 16) {
  std::string s = std::to_string(i);
  return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

struct JobFixture {
  std::map<uint64_t, std::string> files;
  CompactionJob job;

  FileLoader Loader() const {
    return [this](const SstMeta& m) { return files.at(m.file_id); };
  }
};

struct JobShape {
  int min_files = 1;
  int max_files = 6;
  size_t min_value = 64;
  size_t max_value = 4096;
  double max_tombstones = 0.2;
  int max_entries_per_file = 200;
  uint64_t keyspace = 600;
};

// Builds one input file from a set of (user key, seq, kind, value) tuples.
inline SstMeta AddFile(JobFixture* fx, uint64_t file_id, int level,
                       std::vector<KeyValue> pairs, const SstOptions& opts = {}) {
  std::sort(pairs.begin(), pairs.end(), [](const KeyValue& a, const KeyValue& b) {
    return CompareInternalKeys(a.key, b.key) < 0;
  });
  BuiltSst built = BuildSst(pairs, opts);
  built.meta.file_id = file_id;
  built.meta.level = level;
  fx->files[file_id] = std::move(built.bytes);
  return built.meta;
}

// Random job with overlapping inputs. Lower files carry newer sequence
// numbers than upper files, as they would in a store.
inline JobFixture RandomJob(std::mt19937_64& rng, const JobShape& shape = {},
                            const SstOptions& opts = {}) {
  JobFixture fx;
  std::uniform_int_distribution<int> nfiles(shape.min_files, shape.max_files);
  int n = nfiles(rng);
  int n_lower = std::uniform_int_distribution<int>(1, n)(rng);
  double tomb = std::uniform_real_distribution<double>(0, shape.max_tombstones)(rng);
  bool bottom = rng() % 2 == 0;
  fx.job.job_id = rng() % 100000;
  fx.job.source_level = static_cast<int>(rng() % 3);
  fx.job.target_level = fx.job.source_level + 1;
  fx.job.tombstones.bottommost = bottom;

  uint64_t seq = 1'000'000;
  for (int f = n - 1; f >= 0; --f) {  // upper files first: they are older
    bool lower = f < n_lower;
    int entries = std::uniform_int_distribution<int>(1, shape.max_entries_per_file)(rng);
    uint64_t lo = rng() % shape.keyspace;
    uint64_t span = 1 + rng() % shape.keyspace;
    std::map<std::string, bool> used;
    std::vector<KeyValue> pairs;
    for (int e = 0; e < entries; ++e) {
      std::string uk = UserKey(lo + rng() % span);
      ++seq;
      bool del = std::uniform_real_distribution<double>(0, 1)(rng) < tomb;
      size_t vlen = del ? 0
                        : std::uniform_int_distribution<size_t>(shape.min_value,
                                                                shape.max_value)(rng);
      pairs.push_back({MakeInternalKey(uk, seq, del ? ValueKind::kDelete : ValueKind::kPut),
                       RandomBytes(rng, vlen)});
    }
    uint64_t id = static_cast<uint64_t>(f) + 1;
    try {
      SstMeta meta = AddFile(&fx, id, lower ? fx.job.source_level : fx.job.target_level,
                             pairs, opts);
      (lower ? fx.job.lower : fx.job.upper).insert(
          (lower ? fx.job.lower : fx.job.upper).begin(), meta);
    } catch (const SizeOverflow&) {
      // Too many large values for one file; skip it.
    }
  }
  if (fx.job.lower.empty()) {
    std::vector<KeyValue> one{{MakeInternalKey(UserKey(0), ++seq, ValueKind::kPut), "v"}};
    fx.job.lower.push_back(AddFile(&fx, 99, fx.job.source_level, one, opts));
  }
  return fx;
}

// Brute-force merge: every input pair, newest per user key, tombstones
// dropped at the bottom.
inline std::vector<KeyValue> OracleMerge(const JobFixture& fx) {
  std::map<std::string, KeyValue> newest;
  auto absorb = [&](const SstMeta& m) {
    auto table = Table::OpenBytes(fx.files.at(m.file_id));
    for (auto& kv : table->Scan()) {
      std::string uk(ExtractUserKey(kv.key));
      auto it = newest.find(uk);
      if (it == newest.end() || ExtractTrailer(kv.key) > ExtractTrailer(it->second.key)) {
        newest[uk] = kv;
      }
    }
  };
  for (const auto& m : fx.job.lower) absorb(m);
  for (const auto& m : fx.job.upper) absorb(m);
  std::vector<KeyValue> out;
  for (auto& [uk, kv] : newest) {
    bool del = (ExtractTrailer(kv.key) & 0xff) == 0;
    if (del && fx.job.tombstones.bottommost) continue;
    out.push_back(kv);
  }
  return out;
}

inline std::vector<KeyValue> ScanOutputs(const CompactionResult& r) {
  std::vector<KeyValue> all;
  for (const auto& o : r.outputs) {
    auto t = Table::OpenBytes(o.bytes);
    for (auto& kv : t->Scan()) all.push_back(std::move(kv));
  }
  return all;
}

inline DeviceOptions TestDevice(int workers = 2, bool shuffle = false, uint64_t seed = 0) {
  DeviceOptions o;
  o.workers = workers;
  o.model_transfers = false;
  o.shuffle_items = shuffle;
  o.shuffle_seed = seed;
  o.check_ranges = true;
  return o;
}

}  // namespace luda::testing
