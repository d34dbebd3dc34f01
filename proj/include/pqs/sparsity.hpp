// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// N:M semi-structured magnitude pruning. Within every consecutive group of M
// weights along the reduction dimension, the N smallest-magnitude entries are
// masked to zero. Note the convention: N is the PRUNED count per group (some
// literature writes N:M for "keep N of M").
//
// Grouping axis: rows of dimension 0 are the output units; the remaining
// dimensions flatten into the reduction run (input features of a linear
// layer, C*kh*kw of a conv filter). Groups of M run consecutively inside each
// row and never straddle rows; a trailing partial group of size g is pruned
// at the same rate with the count rounded down, floor(g*N/M).

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "pqs/common.hpp"
#include "pqs/tensor.hpp"

namespace pqs {

struct NMSparsePattern {
  int m = 1;          // group size M
  int n = 0;          // pruned per full group N, 0 <= N < M
  Shape shape;
  std::vector<std::uint8_t> keep; // row-major, congruent to the weight tensor

  std::int64_t size() const { return static_cast<std::int64_t>(keep.size()); }
  bool operator==(const NMSparsePattern&) const = default;
};

struct PruneSchedule {
  double target = 0.0;   // final sparsity fraction in [0,1)
  int interval = 10;     // epochs between steps
  double increment = 0.1; // sparsity added per step
  int m = 16;            // group size M
};

inline NMSparsePattern all_true_pattern(const Shape& shape, int m) {
  NMSparsePattern p;
  p.m = m;
  p.n = 0;
  p.shape = shape;
  p.keep.assign(static_cast<std::size_t>(numel(shape)), 1);
  return p;
}

inline std::int64_t reduction_length(const Shape& shape) {
  if (shape.empty()) return 0;
  return shape[0] == 0 ? 0 : numel(shape) / shape[0];
}

namespace detail {

// Prune additional entries of one group until `want` of its members are
// masked off, choosing the smallest |value| among the still-kept ones.
// Ties break toward the lower index (stable order).
inline void prune_group_to(const float* values, std::uint8_t* keep,
                           std::int64_t len, std::int64_t want) {
  std::int64_t pruned = 0;
  for (std::int64_t i = 0; i < len; ++i) pruned += keep[i] ? 0 : 1;
  if (pruned >= want) return;
  std::vector<std::int64_t> kept;
  kept.reserve(static_cast<std::size_t>(len - pruned));
  for (std::int64_t i = 0; i < len; ++i)
    if (keep[i]) kept.push_back(i);
  std::stable_sort(kept.begin(), kept.end(), [&](std::int64_t a, std::int64_t b) {
    return std::fabs(values[a]) < std::fabs(values[b]);
  });
  const std::int64_t extra = want - pruned;
  for (std::int64_t j = 0; j < extra; ++j) keep[kept[static_cast<std::size_t>(j)]] = 0;
}

// Raise the per-group pruned count of `pattern` to n_new, keeping previously
// pruned positions pruned. Partial trailing groups prune floor(g*n_new/m).
inline void raise_pruned_count(const RealTensor& w, NMSparsePattern& pattern, int n_new) {
  const std::int64_t rows = w.shape.empty() ? 0 : w.shape[0];
  const std::int64_t rlen = reduction_length(w.shape);
  const int m = pattern.m;
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t base = r * rlen;
    for (std::int64_t g0 = 0; g0 < rlen; g0 += m) {
      const std::int64_t g = std::min<std::int64_t>(m, rlen - g0);
      const std::int64_t want = (g == m) ? n_new : (g * n_new) / m;
      prune_group_to(w.data() + base + g0, pattern.keep.data() + base + g0, g, want);
    }
  }
  pattern.n = n_new;
}

}  // namespace detail

// One-shot N:M pruning of a weight tensor.
inline NMSparsePattern nm_prune(const RealTensor& w, int n, int m) {
  if (m < 1 || n < 0 || n >= m)
    throw PreconditionError("nm_prune: require 0 <= N < M");
  NMSparsePattern pattern = all_true_pattern(w.shape, m);
  detail::raise_pruned_count(w, pattern, n);
  return pattern;
}

inline RealTensor apply_mask(const RealTensor& w, const NMSparsePattern& p) {
  if (w.shape != p.shape)
    throw PreconditionError("apply_mask: shape mismatch " + shape_str(w.shape) +
                            " vs " + shape_str(p.shape));
  RealTensor out = w;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    if (!p.keep[i]) out.values[i] = 0.0f;
  return out;
}

inline double sparsity_of(const NMSparsePattern& p) {
  if (p.keep.empty()) return 0.0;
  std::int64_t pruned = 0;
  for (auto k : p.keep) pruned += k ? 0 : 1;
  return static_cast<double>(pruned) / static_cast<double>(p.keep.size());
}

// Pruned-per-group count for a sparsity fraction, e.g. 10% of M=16 -> 2.
inline int pruned_count_for(double fraction, int m) {
  const std::int64_t n = iround(fraction * m);
  return static_cast<int>(std::clamp<std::int64_t>(n, 0, m - 1));
}

// Advance the iterative schedule at `epoch`. Epochs that are not a positive
// multiple of the interval, and steps past the target, leave the pattern
// unchanged. Previously pruned positions stay pruned (monotone schedule).
inline NMSparsePattern schedule_step(const PruneSchedule& s, int epoch,
                                     const RealTensor& w, const NMSparsePattern& prior) {
  if (s.interval <= 0 || epoch <= 0 || epoch % s.interval != 0) return prior;
  const int step = epoch / s.interval;
  const double frac = std::min(s.increment * step, s.target);
  const int n_new = pruned_count_for(frac, s.m);
  if (n_new <= prior.n) return prior;
  NMSparsePattern next = prior;
  detail::raise_pruned_count(w, next, n_new);
  return next;
}

}  // namespace pqs
