#pragma once

// YCSB-style load and run streams, and an in-process CPU stress injector.
//
// Every stream is a pure function of (spec, partition): the same seed gives
// the same keys, values and op kinds on every run and platform. Nothing here
// uses std::uniform_*_distribution, whose output is library-specific.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace luda {

enum class KeyDistribution { kUniform, kZipfian };

struct WorkloadSpec {
  uint64_t record_count = 100000;
  uint64_t op_count = 100000;
  size_t key_size = 16;
  size_t value_size = 256;
  double read_fraction = 0.5;
  double update_fraction = 0.5;
  KeyDistribution distribution = KeyDistribution::kZipfian;
  double zipf_theta = 0.99;
  uint64_t seed = 42;

  // Throws InvalidArgument.
  void Validate() const;
  std::string ToString() const;  // key=value lines, parseable back
};

// Flat `key=value` text; '#' starts a comment. Unknown keys are an error.
WorkloadSpec ParseWorkloadSpec(std::string_view text, WorkloadSpec base = {});
WorkloadSpec LoadWorkloadSpecFile(const std::string& path, WorkloadSpec base = {});

// Seeded bijection on [0, n) (Feistel network with cycle walking).
class Permutation {
 public:
  Permutation(uint64_t n, uint64_t seed);
  uint64_t operator()(uint64_t i) const;
  uint64_t size() const { return n_; }

 private:
  uint64_t Round(uint64_t x, int round) const;

  uint64_t n_;
  int half_bits_;
  uint64_t half_mask_;
  uint64_t keys_[4];
};

// YCSB's zipfian generator (Gray et al.): item 0 is the most popular.
class ZipfianGenerator {
 public:
  ZipfianGenerator(uint64_t n, double theta);
  // u uniform in [0, 1).
  uint64_t Sample(double u) const;
  // Probability of item i (0-based) under the exact distribution.
  double Probability(uint64_t i) const;
  uint64_t n() const { return n_; }

 private:
  uint64_t n_;
  double theta_;
  double zetan_;
  double zeta2_;
  double alpha_;
  double eta_;
};

// Fast deterministic generator used by the streams.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}
  uint64_t Next();
  double NextDouble();  // [0, 1) with 53 bits
 private:
  uint64_t state_;
};

std::string FormatKey(uint64_t id, size_t key_size);
void FillValue(uint64_t seed, uint64_t op_index, size_t size, std::string* out);

enum class OpKind { kInsert, kRead, kUpdate };

struct Op {
  OpKind kind = OpKind::kInsert;
  std::string key;
  std::string value;  // empty for reads
};

// Partition p of P: load takes record indices i with i % P == p; run takes
// an op_count / P share with its own seed.
class LoadGenerator {
 public:
  explicit LoadGenerator(const WorkloadSpec& spec, int partition = 0, int partitions = 1);
  bool Next(Op* op);

 private:
  WorkloadSpec spec_;
  Permutation perm_;
  uint64_t next_;
  uint64_t stride_;
};

class RunGenerator {
 public:
  explicit RunGenerator(const WorkloadSpec& spec, int partition = 0, int partitions = 1);
  bool Next(Op* op);

 private:
  WorkloadSpec spec_;
  Permutation perm_;
  std::shared_ptr<const ZipfianGenerator> zipf_;
  SplitMix64 rng_;
  uint64_t remaining_;
  uint64_t op_index_ = 0;
  uint64_t value_seed_;
};

// ---------------------------------------------------------------------------
// CPU stress.

struct StressSpec {
  // Fraction of total CPU (all cores) to occupy, in [0, 1].
  double target_utilization = 0;
  // Busy/idle cycle length of each stress thread.
  std::chrono::milliseconds period{50};
  // Threads to spin; 0 means one per core.
  int threads = 0;
  // Adjust the duty cycle once per second so measured stress CPU tracks the
  // target; the correction is bounded to +-10% of the target.
  bool calibrate = true;
};

class StressInjector {
 public:
  explicit StressInjector(StressSpec spec);
  ~StressInjector();  // stops

  StressInjector(const StressInjector&) = delete;
  StressInjector& operator=(const StressInjector&) = delete;

  void Stop();
  // CPU seconds consumed by the stress threads so far.
  double CpuSeconds() const;
  double duty() const { return duty_.load(std::memory_order_relaxed); }
  const StressSpec& spec() const { return spec_; }

 private:
  void Spin(int index);
  void Calibrate();

  StressSpec spec_;
  int cores_;
  std::atomic<bool> stop_{false};
  std::atomic<double> duty_;
  std::vector<std::atomic<uint64_t>> cpu_ns_;
  std::vector<std::thread> threads_;
  std::thread calibrator_;
};

// Process CPU time (user + system) in seconds, via getrusage.
double ProcessCpuSeconds();
int HostCores();

}  // namespace luda
