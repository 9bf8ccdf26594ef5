#include <gtest/gtest.h>

#include <random>

#include "luda/coding.h"
#include "luda/crc32c.h"
#include "luda/internal_key.h"

namespace luda {
namespace {

// Bit-at-a-time CRC-32C, written from the polynomial definition only.
uint32_t BitwiseCrc32c(std::string_view data) {
  uint32_t crc = 0xFFFFFFFFu;
  for (unsigned char c : data) {
    crc ^= c;
    for (int i = 0; i < 8; ++i) crc = (crc >> 1) ^ (0x82F63B78u & (0u - (crc & 1u)));
  }
  return crc ^ 0xFFFFFFFFu;
}

TEST(Crc32cTest, EmptyInputIsZero) { EXPECT_EQ(crc32c::Value(""), 0u); }

TEST(Crc32cTest, CheckValue) {
  EXPECT_EQ(BitwiseCrc32c("123456789"), 0xE3069283u);
  EXPECT_EQ(crc32c::Value("123456789"), 0xE3069283u);
}

TEST(Crc32cTest, MatchesBitwiseOracleAtEveryLengthAndAlignment) {
  std::mt19937_64 rng(1);
  std::string buf(300, '\0');
  for (auto& c : buf) c = static_cast<char>(rng());
  for (size_t off = 0; off < 8; ++off) {
    for (size_t len = 0; len + off <= buf.size(); len += 7) {
      std::string_view s(buf.data() + off, len);
      ASSERT_EQ(crc32c::Value(s), BitwiseCrc32c(s));
      ASSERT_EQ(crc32c::ExtendPortable(0, s.data(), s.size()), BitwiseCrc32c(s));
    }
  }
}

TEST(Crc32cTest, ExtendIsIncremental) {
  std::string a = "hello, ", b = "world";
  EXPECT_EQ(crc32c::Extend(crc32c::Value(a), b.data(), b.size()), crc32c::Value(a + b));
}

TEST(Crc32cTest, EverySingleBitFlipChangesTheChecksum) {
  std::mt19937_64 rng(2);
  std::string buf(64, '\0');
  for (auto& c : buf) c = static_cast<char>(rng());
  uint32_t base = crc32c::Value(buf);
  for (size_t bit = 0; bit < buf.size() * 8; ++bit) {
    std::string flipped = buf;
    flipped[bit / 8] ^= static_cast<char>(1 << (bit % 8));
    ASSERT_NE(crc32c::Value(flipped), base) << bit;
  }
}

TEST(CodingTest, FixedRoundTrip) {
  std::string s;
  PutFixed32(&s, 0xDEADBEEF);
  PutFixed64(&s, 0x0123456789ABCDEFull);
  ASSERT_EQ(s.size(), 12u);
  EXPECT_EQ(static_cast<unsigned char>(s[0]), 0xEF);  // little-endian
  EXPECT_EQ(DecodeFixed32(s.data()), 0xDEADBEEFu);
  EXPECT_EQ(DecodeFixed64(s.data() + 4), 0x0123456789ABCDEFull);
}

TEST(CodingTest, VarintRoundTrip) {
  std::vector<uint64_t> values = {0, 1, 127, 128, 16383, 16384, (1ull << 32) - 1,
                                  1ull << 35, ~0ull};
  std::string s;
  for (auto v : values) PutVarint64(&s, v);
  std::string_view in(s);
  for (auto v : values) {
    uint64_t got;
    ASSERT_TRUE(GetVarint64(&in, &got));
    EXPECT_EQ(got, v);
  }
  EXPECT_TRUE(in.empty());
  EXPECT_EQ(VarintLength(127), 1);
  EXPECT_EQ(VarintLength(128), 2);
}

TEST(CodingTest, TruncatedVarintFails) {
  std::string s;
  PutVarint32(&s, 300);
  std::string_view in(s.data(), 1);
  uint32_t v;
  EXPECT_FALSE(GetVarint32(&in, &v));
}

TEST(InternalKeyTest, OrderingIsUserKeyThenNewestFirst) {
  auto k = [](std::string_view u, uint64_t s, ValueKind kind = ValueKind::kPut) {
    return MakeInternalKey(u, s, kind);
  };
  EXPECT_LT(CompareInternalKeys(k("a", 1), k("b", 9)), 0);
  EXPECT_LT(CompareInternalKeys(k("a", 9), k("a", 1)), 0);
  EXPECT_LT(CompareInternalKeys(k("a", 5, ValueKind::kPut), k("a", 5, ValueKind::kDelete)), 0);
  EXPECT_LT(CompareInternalKeys(k("a", 1), k("ab", 9)), 0);
  EXPECT_EQ(CompareInternalKeys(k("a", 3), k("a", 3)), 0);
}

TEST(InternalKeyTest, ParseRoundTrip) {
  std::string ik = MakeInternalKey("user", kMaxSequence, ValueKind::kDelete);
  ParsedInternalKey p;
  ASSERT_TRUE(ParseInternalKey(ik, &p));
  EXPECT_EQ(p.user_key, "user");
  EXPECT_EQ(p.seq, kMaxSequence);
  EXPECT_EQ(p.kind, ValueKind::kDelete);
  EXPECT_FALSE(ParseInternalKey("short", &p));
  InternalKey key("user", 7, ValueKind::kPut);
  EXPECT_EQ(key.user_key(), "user");
  EXPECT_EQ(key.seq(), 7u);
  EXPECT_LT(InternalKey("user", 8, ValueKind::kPut), key);
}

}  // namespace
}  // namespace luda
