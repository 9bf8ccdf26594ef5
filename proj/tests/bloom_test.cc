#include "luda/bloom.h"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <unordered_set>

#include "luda/errors.h"
#include "test_util.h"

namespace luda {
namespace {

TEST(BloomTest, Parameters) {
  EXPECT_EQ(ProbeCount(10), 7u);  // round(10 ln 2) = round(6.93)
  EXPECT_EQ(ProbeCount(1), 1u);
  EXPECT_EQ(ProbeCount(100), 30u);
  EXPECT_EQ(FilterBitBytes(0, 10), 1u);
  EXPECT_EQ(FilterBitBytes(1, 10), 8u);     // 64-bit floor
  EXPECT_EQ(FilterBitBytes(1000, 10), 1250u);
  EXPECT_EQ(FilterBitBytes(3, 3), 8u);
  EXPECT_EQ(FilterBitBytes(7, 10), 9u);     // 70 bits -> 9 bytes
}

TEST(BloomTest, EmptySetRejectsEverything) {
  FilterBlock f = BuildFilter(std::span<const std::string>{});
  EXPECT_EQ(f.bits, std::string(1, '\0'));
  EXPECT_EQ(f.k, 1u);
  EXPECT_FALSE(MayContain(f, "anything"));
  EXPECT_FALSE(MayContain(f, ""));
}

TEST(BloomTest, NoFalseNegatives) {
  std::mt19937_64 rng(1);
  std::vector<std::string> keys;
  for (int i = 0; i < 5000; ++i) keys.push_back(testing::RandomBytes(rng, 1 + rng() % 30));
  FilterBlock f = BuildFilter(keys);
  for (const auto& k : keys) ASSERT_TRUE(MayContain(f, k));
}

TEST(BloomTest, FalsePositiveRateAtTenBitsPerKey) {
  std::mt19937_64 rng(2);
  std::unordered_set<std::string> present;
  while (present.size() < 10000) present.insert(testing::RandomBytes(rng, 16));
  std::vector<std::string> keys(present.begin(), present.end());
  FilterBlock f = BuildFilter(keys, 10);
  int fp = 0, probes = 0;
  while (probes < 100000) {
    std::string k = testing::RandomBytes(rng, 16);
    if (present.count(k)) continue;
    ++probes;
    fp += MayContain(f, k);
  }
  double rate = static_cast<double>(fp) / probes;
  double theory = std::pow(1 - std::exp(-7.0 / 10), 7);  // about 0.82%
  EXPECT_LT(rate, 0.02);
  EXPECT_GT(rate, theory / 3);
}

TEST(BloomTest, SerializationRoundTrip) {
  std::vector<std::string> keys = {"a", "b", "c"};
  FilterBlock f = BuildFilter(keys);
  std::string enc = EncodeFilterBlock(f);
  EXPECT_EQ(enc.size(), FilterBlockSize(3, 10));
  EXPECT_EQ(DecodeFilterBlock(enc), f);
  enc[0] ^= 1;
  EXPECT_THROW(DecodeFilterBlock(enc), Corruption);
}

TEST(BloomTest, InsertInPlaceMatchesBuild) {
  std::vector<std::string> keys = {"x", "yy", "zzz", "0123456789abcdef"};
  FilterBlock f = BuildFilter(keys);
  std::string bits(FilterBitBytes(keys.size(), 10), '\0');
  for (const auto& k : keys) FilterInsert(bits.data(), bits.size(), f.k, k);
  EXPECT_EQ(bits, f.bits);
}

TEST(BloomTest, RejectsZeroBitsPerKey) {
  std::vector<std::string> keys = {"a"};
  EXPECT_THROW(BuildFilter(keys, 0), InvalidArgument);
}

}  // namespace
}  // namespace luda
