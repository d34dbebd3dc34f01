// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Bit-exact p-bit accumulation engine for quantized dot products.
//
// Partial products w_i^q * x_i^q are always formed at full width (int64 holds
// any product of 16-bit codes); p-bit semantics apply at accumulation points
// only. Every running value is range-checked against the p-bit signed range
// BEFORE the policy acts on it, and an AccumEvent is logged when it escapes.
// Loading the first product counts as an accumulation step, so a single
// product wider than p bits is itself an event (required for p < 2b sweeps).
//
// Envelope: with code bitwidths <= 16 and dot lengths < 2^31, every exact sum
// fits in int64; running values are carried in 128 bits so even p = 64
// saturation is exact.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "pqs/common.hpp"

namespace pqs {

enum class Policy { Exact, Saturate, Wrap, Sorted, SortedTiled };

inline const char* policy_name(Policy p) {
  switch (p) {
    case Policy::Exact: return "exact";
    case Policy::Saturate: return "saturate";
    case Policy::Wrap: return "wrap";
    case Policy::Sorted: return "sorted";
    case Policy::SortedTiled: return "sorted_tiled";
  }
  return "?";
}

struct AccumConfig {
  int acc_bits = 32;       // accumulator bitwidth p, in [4, 64]
  Policy policy = Policy::Exact;
  int tile = 256;          // tile length k for SortedTiled
  int max_sort_rounds = 8; // cap on Algorithm-1 merge rounds

  void validate() const {
    if (acc_bits < 4 || acc_bits > 64)
      throw PreconditionError("accumulator bitwidth must lie in [4,64], got " +
                              std::to_string(acc_bits));
    if (tile < 1) throw PreconditionError("tile length must be >= 1");
    if (max_sort_rounds < 1) throw PreconditionError("max sort rounds must be >= 1");
  }
};

struct AccumEvent {
  std::int64_t position; // accumulation step in evaluation order
  std::int64_t value;    // running value before clamp/wrap
  enum Kind { kPositiveOverflow, kNegativeOverflow } kind;
};

enum class OverflowClass { None, Transient, Persistent };

inline const char* overflow_class_name(OverflowClass c) {
  switch (c) {
    case OverflowClass::None: return "none";
    case OverflowClass::Transient: return "transient";
    case OverflowClass::Persistent: return "persistent";
  }
  return "?";
}

// Exact record of one dot product: the full-width partial products, the
// overflow-free final sum, and the left-to-right running sums.
struct DotTrace {
  std::vector<std::int64_t> products;
  std::int64_t exact_sum = 0;
  std::vector<std::int64_t> running;
  std::vector<AccumEvent> events;
};

inline DotTrace dot_exact(std::span<const std::int32_t> w,
                          std::span<const std::int32_t> x) {
  if (w.size() != x.size())
    throw PreconditionError("dot_exact: length mismatch " +
                            std::to_string(w.size()) + " vs " + std::to_string(x.size()));
  DotTrace t;
  t.products.resize(w.size());
  t.running.resize(w.size());
  std::int64_t acc = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    t.products[i] = static_cast<std::int64_t>(w[i]) * static_cast<std::int64_t>(x[i]);
    acc += t.products[i];
    t.running[i] = acc;
  }
  t.exact_sum = acc;
  return t;
}

namespace detail {

inline void log_if_overflow(wide_t raw, int bits, std::int64_t position,
                            std::vector<AccumEvent>& events) {
  if (!fits_signed(raw, bits)) {
    events.push_back(AccumEvent{position, clamp_to_int64(raw),
                                raw > 0 ? AccumEvent::kPositiveOverflow
                                        : AccumEvent::kNegativeOverflow});
  }
}

// Two's-complement wrap of `raw` into p bits.
inline wide_t wrap_signed(wide_t raw, int bits) {
  if (bits >= 64)
    return static_cast<wide_t>(
        static_cast<std::int64_t>(static_cast<std::uint64_t>(raw)));
  const wide_t span = wide_t{1} << bits;
  wide_t r = raw % span;
  if (r < static_cast<wide_t>(signed_min(bits))) r += span;
  if (r > static_cast<wide_t>(signed_max(bits))) r -= span;
  return r;
}

}  // namespace detail

struct AccumResult {
  std::int64_t value = 0;
  std::vector<AccumEvent> events;
};

// Accumulate products in the given order under Exact / Saturate / Wrap
// semantics. `order` must be a permutation of the product indices.
inline AccumResult accumulate(std::span<const std::int64_t> products,
                              const AccumConfig& cfg,
                              std::span<const std::int64_t> order) {
  cfg.validate();
  if (cfg.policy == Policy::Sorted || cfg.policy == Policy::SortedTiled)
    throw PreconditionError("accumulate: use sorted_dot / sorted_dot_tiled for sorted policies");
  if (order.size() != products.size())
    throw PreconditionError("accumulate: order is not a permutation of the products");
  AccumResult res;
  wide_t acc = 0;
  for (std::size_t step = 0; step < order.size(); ++step) {
    const wide_t raw = acc + products[static_cast<std::size_t>(order[step])];
    detail::log_if_overflow(raw, cfg.acc_bits, static_cast<std::int64_t>(step), res.events);
    switch (cfg.policy) {
      case Policy::Exact: acc = raw; break;
      case Policy::Saturate: acc = clamp_signed_wide(raw, cfg.acc_bits); break;
      case Policy::Wrap: acc = detail::wrap_signed(raw, cfg.acc_bits); break;
      default: break;
    }
  }
  res.value = clamp_to_int64(acc);
  return res;
}

inline std::vector<std::int64_t> natural_order(std::size_t n) {
  std::vector<std::int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  return order;
}

inline AccumResult accumulate_natural(std::span<const std::int64_t> products,
                                      const AccumConfig& cfg) {
  return accumulate(products, cfg, natural_order(products.size()));
}

struct SortedDotResult {
  std::int64_t value = 0;  // exact sum, never clamped here
  std::vector<AccumEvent> events;
  int rounds = 0;          // pairwise merge rounds executed
  std::int64_t steps = 0;  // range-checked accumulation steps
};

// Sorted dot product. Drops zero products, splits the rest by sign, sorts
// positives descending and negatives ascending, adds them pairwise, and
// repeats until one value remains or a single sign is left, which is then
// summed sequentially (monotone by construction). Every pairwise sum and
// every sequential running sum is range-checked against p bits. The merge
// loop is capped at cfg.max_sort_rounds; leftover values fall through to the
// sequential phase. Sorts are stable, so equal-magnitude pairing is
// reproducible bit-exactly.
//
// round_log, when given, receives the working value list as each round sees
// it (after the zero drop, then after every pairwise merge).
inline SortedDotResult sorted_dot(std::span<const std::int64_t> products,
                                  const AccumConfig& cfg,
                                  std::vector<std::vector<std::int64_t>>* round_log = nullptr) {
  cfg.validate();
  SortedDotResult res;
  std::vector<std::int64_t> vals;
  vals.reserve(products.size());
  for (std::int64_t v : products)
    if (v != 0) vals.push_back(v);
  if (round_log) round_log->push_back(vals);

  std::vector<std::int64_t> pos, neg, next;
  while (vals.size() > 1 && res.rounds < cfg.max_sort_rounds) {
    pos.clear();
    neg.clear();
    for (std::int64_t v : vals)
      (v > 0 ? pos : neg).push_back(v);
    if (pos.empty() || neg.empty()) break; // single sign: sum sequentially
    std::stable_sort(pos.begin(), pos.end(), std::greater<>());
    std::stable_sort(neg.begin(), neg.end());
    const std::size_t m = std::min(pos.size(), neg.size());
    next.clear();
    for (std::size_t i = 0; i < m; ++i) {
      const std::int64_t s = pos[i] + neg[i]; // opposite signs: no int64 overflow
      detail::log_if_overflow(s, cfg.acc_bits, res.steps++, res.events);
      next.push_back(s);
    }
    const auto& longer = pos.size() > neg.size() ? pos : neg;
    next.insert(next.end(), longer.begin() + static_cast<std::ptrdiff_t>(m), longer.end());
    vals.swap(next);
    res.rounds += 1;
    if (round_log) round_log->push_back(vals);
  }

  wide_t acc = 0;
  for (std::int64_t v : vals) {
    const wide_t raw = acc + v;
    detail::log_if_overflow(raw, cfg.acc_bits, res.steps++, res.events);
    acc = raw;
  }
  res.value = clamp_to_int64(acc);
  return res;
}

struct TiledDotResult {
  std::int64_t value = 0;
  std::vector<AccumEvent> events;
  std::vector<std::int64_t> tile_sums;
};

// Tiled variant: contiguous tiles of length cfg.tile are each reduced with
// sorted_dot, then the per-tile sums are combined by a second sorted_dot
// pass. A single tile degenerates to plain sorted_dot (identical events).
inline TiledDotResult sorted_dot_tiled(std::span<const std::int64_t> products,
                                       const AccumConfig& cfg) {
  cfg.validate();
  TiledDotResult res;
  const std::size_t k = static_cast<std::size_t>(cfg.tile);
  if (products.size() <= k) {
    SortedDotResult r = sorted_dot(products, cfg);
    res.value = r.value;
    res.events = std::move(r.events);
    res.tile_sums.push_back(res.value);
    return res;
  }
  std::int64_t step_base = 0;
  for (std::size_t i0 = 0; i0 < products.size(); i0 += k) {
    const std::size_t len = std::min(k, products.size() - i0);
    SortedDotResult r = sorted_dot(products.subspan(i0, len), cfg);
    for (AccumEvent& e : r.events) {
      e.position += step_base;
      res.events.push_back(e);
    }
    step_base += r.steps;
    res.tile_sums.push_back(r.value);
  }
  SortedDotResult combine = sorted_dot(res.tile_sums, cfg);
  for (AccumEvent& e : combine.events) {
    e.position += step_base;
    res.events.push_back(e);
  }
  res.value = combine.value;
  return res;
}

// Persistent iff the exact final sum escapes p bits; else Transient iff the
// given evaluation order produced at least one event; else None. Transience
// is order-relative, so the order matters and Exact semantics suffice (the
// first event fires identically under every policy).
inline OverflowClass classify(const DotTrace& trace, int acc_bits,
                              std::span<const std::int64_t> order) {
  if (!fits_signed(trace.exact_sum, acc_bits)) return OverflowClass::Persistent;
  AccumConfig cfg;
  cfg.acc_bits = acc_bits;
  cfg.policy = Policy::Exact;
  const AccumResult res = accumulate(trace.products, cfg, order);
  return res.events.empty() ? OverflowClass::None : OverflowClass::Transient;
}

inline OverflowClass classify_natural(const DotTrace& trace, int acc_bits) {
  if (!fits_signed(trace.exact_sum, acc_bits)) return OverflowClass::Persistent;
  for (std::int64_t r : trace.running)
    if (!fits_signed(r, acc_bits)) return OverflowClass::Transient;
  return OverflowClass::None;
}

// Brute-force ordering oracle: true iff some permutation keeps every running
// sum (first load included) inside p bits. Running sums depend only on the
// chosen prefix SET, so the search is a reachability sweep over subsets.
inline bool exists_safe_order(std::span<const std::int64_t> products, int acc_bits) {
  constexpr std::size_t kBudget = 10;
  if (products.size() > kBudget)
    throw PreconditionError("exists_safe_order: product count above search budget (10)");
  const std::size_t n = products.size();
  if (n == 0) return true;
  std::int64_t total = 0;
  for (std::int64_t v : products) total += v;
  if (!fits_signed(total, acc_bits)) return false;

  const std::size_t full = (std::size_t{1} << n) - 1;
  std::vector<std::int64_t> subset_sum(full + 1, 0);
  std::vector<std::uint8_t> reachable(full + 1, 0);
  reachable[0] = 1;
  for (std::size_t mask = 1; mask <= full; ++mask) {
    const std::size_t low = mask & (~mask + 1);
    std::size_t low_idx = 0;
    while ((std::size_t{1} << low_idx) != low) ++low_idx;
    subset_sum[mask] = subset_sum[mask ^ low] + products[low_idx];
    if (!fits_signed(subset_sum[mask], acc_bits)) continue;
    for (std::size_t b = 0; b < n; ++b) {
      if ((mask >> b) & 1) {
        if (reachable[mask ^ (std::size_t{1} << b)]) {
          reachable[mask] = 1;
          break;
        }
      }
    }
  }
  return reachable[full] != 0;
}

// L1 bound on quantized weights that rules out overflow of a p-bit
// accumulator under worst-case b-bit activations: (2^(p-1) - 1) / 2^(b-1).
inline double a2q_l1_bound(int b, int p) {
  if (p < 2 || b < 2) throw PreconditionError("a2q_l1_bound: require b >= 2 and p >= 2");
  return (std::ldexp(1.0, p - 1) - 1.0) / std::ldexp(1.0, b - 1);
}

// Smallest dot length at which a p-bit accumulator of b-bit products may
// overflow in the worst case: 2^(p-2b) for p > 2b, conservatively 1 otherwise
// (at p <= 2b a single product can already escape the range).
inline std::int64_t overflow_threshold(int b, int p) {
  if (p > 2 * b) return std::int64_t{1} << (p - 2 * b);
  return 1;
}

}  // namespace pqs
