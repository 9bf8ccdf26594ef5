#pragma once

// Internal keys are the user key followed by an 8-byte little-endian trailer
// holding (seq << 8) | kind. Ordering: user key ascending, then seq
// descending, then Put before Delete.

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

#include "luda/coding.h"

namespace luda {

enum class ValueKind : uint8_t {
  kDelete = 0,
  kPut = 1,
};

constexpr uint64_t kMaxSequence = (uint64_t{1} << 56) - 1;
constexpr size_t kTrailerSize = 8;

inline uint64_t PackTrailer(uint64_t seq, ValueKind kind) {
  return (seq << 8) | static_cast<uint8_t>(kind);
}

struct ParsedInternalKey {
  std::string_view user_key;
  uint64_t seq = 0;
  ValueKind kind = ValueKind::kPut;
};

inline void AppendInternalKey(std::string* dst, std::string_view user_key,
                              uint64_t seq, ValueKind kind) {
  dst->append(user_key);
  PutFixed64(dst, PackTrailer(seq, kind));
}

inline std::string MakeInternalKey(std::string_view user_key, uint64_t seq,
                                   ValueKind kind) {
  std::string out;
  out.reserve(user_key.size() + kTrailerSize);
  AppendInternalKey(&out, user_key, seq, kind);
  return out;
}

// Returns false if the trailer is missing or the kind byte is unknown.
inline bool ParseInternalKey(std::string_view ikey, ParsedInternalKey* out) {
  if (ikey.size() < kTrailerSize) return false;
  uint64_t trailer = DecodeFixed64(ikey.data() + ikey.size() - kTrailerSize);
  uint8_t kind = static_cast<uint8_t>(trailer & 0xff);
  if (kind > static_cast<uint8_t>(ValueKind::kPut)) return false;
  out->user_key = ikey.substr(0, ikey.size() - kTrailerSize);
  out->seq = trailer >> 8;
  out->kind = static_cast<ValueKind>(kind);
  return true;
}

inline std::string_view ExtractUserKey(std::string_view ikey) {
  return ikey.substr(0, ikey.size() - kTrailerSize);
}

inline uint64_t ExtractTrailer(std::string_view ikey) {
  return DecodeFixed64(ikey.data() + ikey.size() - kTrailerSize);
}

// Three-way comparison of two encoded internal keys.
inline int CompareInternalKeys(std::string_view a, std::string_view b) {
  int r = ExtractUserKey(a).compare(ExtractUserKey(b));
  if (r != 0) return r < 0 ? -1 : 1;
  uint64_t ta = ExtractTrailer(a);
  uint64_t tb = ExtractTrailer(b);
  // Larger trailer (higher seq, then Put over Delete) sorts first.
  if (ta > tb) return -1;
  if (ta < tb) return 1;
  return 0;
}

struct InternalKeyLess {
  using is_transparent = void;
  bool operator()(std::string_view a, std::string_view b) const {
    return CompareInternalKeys(a, b) < 0;
  }
};

// Owning wrapper used in metadata (SstMeta smallest/largest).
class InternalKey {
 public:
  InternalKey() = default;
  InternalKey(std::string_view user_key, uint64_t seq, ValueKind kind)
      : rep_(MakeInternalKey(user_key, seq, kind)) {}

  static InternalKey FromEncoded(std::string_view encoded) {
    InternalKey k;
    k.rep_.assign(encoded);
    return k;
  }

  std::string_view Encoded() const { return rep_; }
  std::string_view user_key() const { return ExtractUserKey(rep_); }
  uint64_t seq() const { return ExtractTrailer(rep_) >> 8; }
  ValueKind kind() const {
    return static_cast<ValueKind>(ExtractTrailer(rep_) & 0xff);
  }
  bool empty() const { return rep_.empty(); }

  friend bool operator==(const InternalKey& a, const InternalKey& b) {
    return a.rep_ == b.rep_;
  }
  friend std::strong_ordering operator<=>(const InternalKey& a,
                                          const InternalKey& b) {
    int c = CompareInternalKeys(a.rep_, b.rep_);
    return c < 0 ? std::strong_ordering::less
                 : (c > 0 ? std::strong_ordering::greater
                          : std::strong_ordering::equal);
  }

 private:
  std::string rep_;
};

}  // namespace luda
