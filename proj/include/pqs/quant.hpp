// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Uniform per-tensor quantization to b-bit signed integers.
//
// Codes live in [-2^(b-1), 2^(b-1)-1] and relate to reals through an affine
// scale/offset pair:  q = round(v / scale) + offset,  v* = scale * (q - offset).
// Weight tensors use symmetric params (offset fixed at 0); activations use the
// asymmetric form with the offset chosen so that real 0 has an exact code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pqs/common.hpp"
#include "pqs/tensor.hpp"

namespace pqs {

constexpr int kMinBits = 2;
constexpr int kMaxBits = 16;

struct QuantParams {
  int bits = 8;
  float scale = 1.0f;      // real-value per integer step, > 0
  std::int32_t offset = 0; // zero-point code

  std::int32_t qmin() const { return static_cast<std::int32_t>(signed_min(bits)); }
  std::int32_t qmax() const { return static_cast<std::int32_t>(signed_max(bits)); }

  bool operator==(const QuantParams&) const = default;
};

// b-bit signed integer tensor plus the params that produced it. Codes are
// stored widened to int32 so all bitwidths in [2,16] share one layout.
struct QuantTensor {
  Shape shape;
  std::vector<std::int32_t> values;
  QuantParams params;

  QuantTensor() = default;
  QuantTensor(Shape s, QuantParams p)
      : shape(std::move(s)), params(p) {
    values.assign(static_cast<std::size_t>(numel(shape)), 0);
  }

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
};

inline void check_bits(int b) {
  if (b < kMinBits || b > kMaxBits)
    throw PreconditionError("bitwidth must lie in [2,16], got " + std::to_string(b));
}

// Derive scale/offset for a calibrated real range [min, max].
//
// Asymmetric: the range is cut into 2^b - 1 uniform steps and shifted so the
// calibration min lands on the most negative code. The range is first widened
// to contain 0 so that real 0 always has an exact code and the offset stays
// inside the representable code range. Symmetric: range [-a, a] with
// a = max(|min|, |max|), scale 2a/(2^b - 2), offset 0, so both +a and -a are
// representable and real 0 sits exactly on code 0.
// A degenerate range (max == min) yields scale 1, offset 0.
inline QuantParams compute_params(float min, float max, int b, bool symmetric) {
  check_bits(b);
  if (max < min)
    throw PreconditionError("compute_params: max < min");
  QuantParams p;
  p.bits = b;
  if (symmetric) {
    const double a = std::max(std::fabs(static_cast<double>(min)),
                              std::fabs(static_cast<double>(max)));
    if (a == 0.0) return p; // degenerate
    p.scale = static_cast<float>(2.0 * a / static_cast<double>((std::int64_t{1} << b) - 2));
    p.offset = 0;
    return p;
  }
  if (min == max) return p; // degenerate
  const double lo = std::min(static_cast<double>(min), 0.0);
  const double hi = std::max(static_cast<double>(max), 0.0);
  p.scale = static_cast<float>((hi - lo) / static_cast<double>((std::int64_t{1} << b) - 1));
  const std::int64_t off = -(std::int64_t{1} << (b - 1)) -
                           iround(lo / static_cast<double>(p.scale));
  p.offset = static_cast<std::int32_t>(
      std::clamp<std::int64_t>(off, p.qmin(), p.qmax()));
  return p;
}

inline std::int32_t quantize_value(float v, const QuantParams& p) {
  const std::int64_t q =
      iround(static_cast<double>(v) / static_cast<double>(p.scale)) + p.offset;
  return static_cast<std::int32_t>(std::clamp<std::int64_t>(q, p.qmin(), p.qmax()));
}

inline float dequantize_value(std::int32_t q, const QuantParams& p) {
  return static_cast<float>(static_cast<double>(p.scale) *
                            static_cast<double>(q - p.offset));
}

inline QuantTensor quantize(const RealTensor& t, const QuantParams& p) {
  QuantTensor out(t.shape, p);
  for (std::size_t i = 0; i < t.values.size(); ++i)
    out.values[i] = quantize_value(t.values[i], p);
  return out;
}

inline RealTensor dequantize(const QuantTensor& t) {
  RealTensor out(t.shape);
  for (std::size_t i = 0; i < t.values.size(); ++i)
    out.values[i] = dequantize_value(t.values[i], t.params);
  return out;
}

// quantize then dequantize in one pass; the forward used during QAT.
inline RealTensor fake_quantize(const RealTensor& t, const QuantParams& p) {
  RealTensor out(t.shape);
  for (std::size_t i = 0; i < t.values.size(); ++i)
    out.values[i] = dequantize_value(quantize_value(t.values[i], p), p);
  return out;
}

// Running min/max of activation batches, exponential moving average.
// `decay` is the weight on the prior estimate (default 0.99); the first
// observation initializes the stats directly.
struct CalibrationStats {
  float min = 0.0f;
  float max = 0.0f;
  float decay = 0.99f;
  std::int64_t count = 0;
};

inline CalibrationStats observe(CalibrationStats stats, const RealTensor& t) {
  if (t.values.empty()) return stats;
  const float bmin = min_value(t);
  const float bmax = max_value(t);
  if (stats.count == 0) {
    stats.min = bmin;
    stats.max = bmax;
  } else {
    const double d = stats.decay;
    stats.min = static_cast<float>(d * stats.min + (1.0 - d) * bmin);
    stats.max = static_cast<float>(d * stats.max + (1.0 - d) * bmax);
  }
  stats.count += 1;
  return stats;
}

inline QuantParams params_from_stats(const CalibrationStats& stats, int bits) {
  if (stats.count == 0)
    throw PreconditionError("params_from_stats: no observations");
  return compute_params(stats.min, stats.max, bits, /*symmetric=*/false);
}

// Symmetric weight params from the tensor's own extremes (offset always 0).
inline QuantParams weight_params(const RealTensor& w, int bits) {
  return compute_params(min_value(w), max_value(w), bits, /*symmetric=*/true);
}

}  // namespace pqs
