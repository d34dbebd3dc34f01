// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pqs/common.hpp"

namespace pqs {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major real-valued tensor.
struct RealTensor {
  Shape shape;
  std::vector<float> values;

  RealTensor() = default;
  explicit RealTensor(Shape s) : shape(std::move(s)) {
    values.assign(static_cast<std::size_t>(numel(shape)), 0.0f);
  }
  RealTensor(Shape s, std::vector<float> v) : shape(std::move(s)), values(std::move(v)) {
    if (static_cast<std::int64_t>(values.size()) != numel(shape))
      throw PreconditionError("RealTensor: value count does not match shape " + shape_str(shape));
  }

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
  float* data() { return values.data(); }
  const float* data() const { return values.data(); }
};

inline float min_value(const RealTensor& t) {
  float m = t.values.empty() ? 0.0f : t.values[0];
  for (float v : t.values) m = v < m ? v : m;
  return m;
}

inline float max_value(const RealTensor& t) {
  float m = t.values.empty() ? 0.0f : t.values[0];
  for (float v : t.values) m = v > m ? v : m;
  return m;
}

}  // namespace pqs
