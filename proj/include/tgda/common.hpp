#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgda {

// Error taxonomy. The CLI maps these onto exit codes: config/usage -> 1,
// data -> 2, numeric -> 3.
enum class ErrorKind {
  kDimension,   // tensor shape mismatch
  kGeometry,    // invalid spatial geometry (non-integer output extent, ...)
  kParameter,   // invalid scalar argument (tau <= 0, ...)
  kConfig,      // invalid configuration / preset
  kData,        // dataset or file problem
  kNumeric,     // NaN/Inf, gradient or folding failure
  kAccounting,  // unknown layer kind in params/FLOPs accounting
  kContract,    // API misuse (backward twice, non-scalar loss, ...)
  kCheckpoint,  // malformed or mismatched checkpoint
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void check(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kGeometry: return "geometry";
    case ErrorKind::kParameter: return "parameter";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kData: return "data";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kAccounting: return "accounting";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kCheckpoint: return "checkpoint";
  }
  return "unknown";
}

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// FNV-1a over raw bytes; used for parameter checksums and derived RNG keys.
inline uint64_t fnv1a(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace tgda
