#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <thread>

#include "luda/errors.h"
#include "luda/workload.h"

namespace luda {
namespace {

TEST(Permutation, IsABijection) {
  for (uint64_t n : {1ull, 2ull, 3ull, 17ull, 1000ull, 4097ull}) {
    Permutation p(n, 7);
    std::set<uint64_t> seen;
    for (uint64_t i = 0; i < n; ++i) {
      uint64_t v = p(i);
      ASSERT_LT(v, n);
      seen.insert(v);
    }
    EXPECT_EQ(seen.size(), n) << n;
  }
}

TEST(Permutation, SeedChangesOrder) {
  Permutation a(1000, 1), b(1000, 2);
  int same = 0;
  for (uint64_t i = 0; i < 1000; ++i) same += a(i) == b(i);
  EXPECT_LT(same, 20);
}

TEST(Zipfian, ProbabilitiesSumToOne) {
  ZipfianGenerator z(1000, 0.99);
  double sum = 0;
  for (uint64_t i = 0; i < 1000; ++i) sum += z.Probability(i);
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(Zipfian, TopItemFrequencyMatchesExactMass) {
  const uint64_t n = 10000;
  ZipfianGenerator z(n, 0.99);
  // Independent oracle for 1/zeta(n, theta).
  long double zeta = 0;
  for (uint64_t i = 1; i <= n; ++i) zeta += 1.0L / std::pow(static_cast<long double>(i), 0.99L);
  double expected = static_cast<double>(1.0L / zeta);
  EXPECT_NEAR(z.Probability(0), expected, 1e-12);

  SplitMix64 rng(123);
  const int draws = 1000000;
  std::vector<int> hits(n);
  for (int i = 0; i < draws; ++i) hits[z.Sample(rng.NextDouble())]++;
  double top = static_cast<double>(hits[0]) / draws;
  EXPECT_NEAR(top, expected, expected * 0.10);
  // Second item is rank 1 in the generator too.
  EXPECT_GT(hits[0], hits[1]);
  EXPECT_GT(hits[1], hits[10]);
}

TEST(Workload, StreamsAreDeterministic) {
  WorkloadSpec spec;
  spec.record_count = 500;
  spec.op_count = 500;
  auto drain_run = [&] {
    RunGenerator g(spec);
    std::vector<std::tuple<int, std::string, std::string>> out;
    Op op;
    while (g.Next(&op)) out.emplace_back(static_cast<int>(op.kind), op.key, op.value);
    return out;
  };
  auto drain_load = [&] {
    LoadGenerator g(spec);
    std::vector<std::pair<std::string, std::string>> out;
    Op op;
    while (g.Next(&op)) out.emplace_back(op.key, op.value);
    return out;
  };
  EXPECT_EQ(drain_run(), drain_run());
  EXPECT_EQ(drain_load(), drain_load());
  auto first = drain_run();
  spec.seed = 43;
  EXPECT_NE(first, drain_run());
}

TEST(Workload, LoadEmitsDistinctFixedWidthKeys) {
  WorkloadSpec spec;
  spec.record_count = 1000;
  spec.value_size = 100;
  LoadGenerator g(spec);
  std::set<std::string> keys;
  Op op;
  while (g.Next(&op)) {
    EXPECT_EQ(op.kind, OpKind::kInsert);
    EXPECT_EQ(op.key.size(), 16u);
    EXPECT_EQ(op.value.size(), 100u);
    keys.insert(op.key);
  }
  EXPECT_EQ(keys.size(), 1000u);
}

TEST(Workload, PartitionsCoverTheKeySpaceOnce) {
  WorkloadSpec spec;
  spec.record_count = 1001;
  spec.op_count = 1001;
  std::multiset<std::string> keys;
  uint64_t run_ops = 0;
  for (int p = 0; p < 4; ++p) {
    LoadGenerator g(spec, p, 4);
    Op op;
    while (g.Next(&op)) keys.insert(op.key);
    RunGenerator r(spec, p, 4);
    while (r.Next(&op)) ++run_ops;
  }
  EXPECT_EQ(keys.size(), 1001u);
  EXPECT_EQ(std::set<std::string>(keys.begin(), keys.end()).size(), 1001u);
  EXPECT_EQ(run_ops, 1001u);
}

TEST(Workload, ReadOnlyMixAndUpdatesTouchLoadedKeys) {
  WorkloadSpec spec;
  spec.record_count = 2000;
  spec.op_count = 5000;
  std::set<std::string> loaded;
  LoadGenerator lg(spec);
  Op op;
  while (lg.Next(&op)) loaded.insert(op.key);

  spec.read_fraction = 1.0;
  spec.update_fraction = 0.0;
  RunGenerator reads(spec);
  while (reads.Next(&op)) {
    EXPECT_EQ(op.kind, OpKind::kRead);
    EXPECT_TRUE(loaded.count(op.key));
  }

  spec.read_fraction = 0.5;
  spec.update_fraction = 0.5;
  RunGenerator mixed(spec);
  int updates = 0;
  while (mixed.Next(&op)) {
    EXPECT_TRUE(loaded.count(op.key));
    if (op.kind == OpKind::kUpdate) {
      ++updates;
      EXPECT_EQ(op.value.size(), spec.value_size);
    }
  }
  EXPECT_NEAR(updates, 2500, 200);
}

TEST(Workload, SpecTextRoundTrips) {
  WorkloadSpec spec;
  spec.record_count = 77;
  spec.distribution = KeyDistribution::kUniform;
  spec.read_fraction = 0.95;
  spec.update_fraction = 0.05;
  spec.seed = 9;
  WorkloadSpec back = ParseWorkloadSpec("# comment\n" + spec.ToString());
  EXPECT_EQ(back.ToString(), spec.ToString());
}

TEST(Workload, SpecRejectsBadInput) {
  EXPECT_THROW(ParseWorkloadSpec("bogus=1"), InvalidArgument);
  EXPECT_THROW(ParseWorkloadSpec("record_count=abc"), InvalidArgument);
  EXPECT_THROW(ParseWorkloadSpec("read_fraction=0.7"), InvalidArgument);
  EXPECT_THROW(ParseWorkloadSpec("distribution=latest"), InvalidArgument);
  EXPECT_THROW(ParseWorkloadSpec("key_size=2\nrecord_count=1000"), InvalidArgument);
}

TEST(Stress, HoldsTargetUtilization) {
  StressSpec s;
  s.target_utilization = 0.8;
  double cpu0 = ProcessCpuSeconds();
  auto t0 = std::chrono::steady_clock::now();
  {
    StressInjector inj(s);
    // Let the calibrator settle, then measure a >= 5 s window.
    std::this_thread::sleep_for(std::chrono::seconds(1));
    cpu0 = ProcessCpuSeconds();
    t0 = std::chrono::steady_clock::now();
    std::this_thread::sleep_for(std::chrono::seconds(5));
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double util = (ProcessCpuSeconds() - cpu0) / (wall * HostCores());
    EXPECT_GE(util, 0.75);
    EXPECT_LE(util, 0.85);
  }
  // Stopped: back to (near) idle.
  cpu0 = ProcessCpuSeconds();
  t0 = std::chrono::steady_clock::now();
  std::this_thread::sleep_for(std::chrono::seconds(1));
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT((ProcessCpuSeconds() - cpu0) / (wall * HostCores()), 0.05);
}

TEST(Stress, ZeroTargetSpawnsNothing) {
  StressSpec s;
  StressInjector inj(s);
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  EXPECT_EQ(inj.CpuSeconds(), 0.0);
  EXPECT_THROW(StressInjector(StressSpec{1.5}), InvalidArgument);
}

}  // namespace
}  // namespace luda
