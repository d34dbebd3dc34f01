// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace pqs {

// Wide integer used for exact partial products and running sums. 128 bits
// covers every representable case of this engine (see accumulate.hpp).
using wide_t = __int128;

// Process exit codes shared by the CLI and the error types below.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumeric = 4,
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated numeric precondition (range, shape, budget, uncalibrated state).
struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Round half away from zero. The single rounding mode of this project;
// std::round has exactly these semantics for finite doubles.
inline double round_half_away(double v) { return std::round(v); }

// Saturating round-half-away-from-zero to int64.
inline std::int64_t iround(double v) {
  const double r = std::round(v);
  if (r >= 9223372036854774784.0) return std::numeric_limits<std::int64_t>::max();
  if (r <= -9223372036854775808.0) return std::numeric_limits<std::int64_t>::min();
  return static_cast<std::int64_t>(r);
}

// Signed range of a w-bit two's-complement integer, w in [1, 64].
inline std::int64_t signed_min(int bits) {
  return bits >= 64 ? std::numeric_limits<std::int64_t>::min()
                    : -(std::int64_t{1} << (bits - 1));
}

inline std::int64_t signed_max(int bits) {
  return bits >= 64 ? std::numeric_limits<std::int64_t>::max()
                    : (std::int64_t{1} << (bits - 1)) - 1;
}

inline bool fits_signed(wide_t v, int bits) {
  return v >= static_cast<wide_t>(signed_min(bits)) &&
         v <= static_cast<wide_t>(signed_max(bits));
}

// Smallest signed bitwidth that holds v.
inline int bits_needed(std::int64_t v) {
  for (int b = 1; b <= 64; ++b) {
    if (v >= signed_min(b) && v <= signed_max(b)) return b;
  }
  return 64;
}

inline std::int64_t clamp_signed(wide_t v, int bits) {
  if (v < static_cast<wide_t>(signed_min(bits))) return signed_min(bits);
  if (v > static_cast<wide_t>(signed_max(bits))) return signed_max(bits);
  return static_cast<std::int64_t>(v);
}

inline wide_t clamp_signed_wide(wide_t v, int bits) {
  return static_cast<wide_t>(clamp_signed(v, bits));
}

inline std::int64_t clamp_to_int64(wide_t v) {
  constexpr std::int64_t lo = std::numeric_limits<std::int64_t>::min();
  constexpr std::int64_t hi = std::numeric_limits<std::int64_t>::max();
  if (v < static_cast<wide_t>(lo)) return lo;
  if (v > static_cast<wide_t>(hi)) return hi;
  return static_cast<std::int64_t>(v);
}

inline std::string wide_to_string(wide_t v) {
  if (v == 0) return "0";
  bool neg = v < 0;
  unsigned __int128 u = neg ? -static_cast<unsigned __int128>(v)
                            : static_cast<unsigned __int128>(v);
  std::string s;
  while (u > 0) {
    s.insert(s.begin(), static_cast<char>('0' + static_cast<int>(u % 10)));
    u /= 10;
  }
  return neg ? "-" + s : s;
}

}  // namespace pqs
