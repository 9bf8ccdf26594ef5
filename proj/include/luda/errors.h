#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace luda {

// Base for every error raised by the store. Callers that only care about
// "something went wrong" catch this; the subclasses exist so tests and the
// compaction fallback can tell corruption apart from device trouble.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Input handed to an encoder was not strictly ascending.
class OrderingViolation : public Error {
 public:
  using Error::Error;
};

// Bytes are structurally malformed (truncated entry, bad varint, bad magic).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A checksum did not match. `offset` is the byte offset of the failing block
// within its container (file or staged region), or UINT64_MAX if unknown.
class Corruption : public Error {
 public:
  Corruption(const std::string& what, uint64_t offset = UINT64_MAX)
      : Error(what), offset_(offset) {}
  uint64_t offset() const { return offset_; }

 private:
  uint64_t offset_;
};

class SizeOverflow : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class StoreClosed : public Error {
 public:
  using Error::Error;
};

// Raised by writes when level 0 is over the stall threshold and the store
// was opened with StallPolicy::kReject.
class WriteStall : public Error {
 public:
  using Error::Error;
};

class CapacityExceeded : public Error {
 public:
  using Error::Error;
};

// A kernel work item threw, or the device was otherwise unusable.
class DeviceFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace luda
