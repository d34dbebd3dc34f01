// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Quantized layers (linear, conv2d via im2col) whose every dot product runs
// through the accumulation engine, plus the end-to-end integer evaluation
// path with per-layer overflow accounting.
//
// Execution model: activations travel between layers as b-bit codes. Each
// accumulating layer computes acc = sum_i w^q_i * (x^q_i - o_x) under its
// configured accumulator policy (weight offset is 0 by construction), maps
// acc back to reals through the scale chain s_w * s_x, and requantizes into
// the params of the NEXT accumulating layer's input. ReLU acts directly on
// codes as max(q, offset). The final layer emits real logits. Layers are
// bias-free.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pqs/accumulate.hpp"
#include "pqs/idx.hpp"
#include "pqs/parallel.hpp"
#include "pqs/quant.hpp"
#include "pqs/sparsity.hpp"
#include "pqs/tensor.hpp"

namespace pqs {

enum class LayerKind { Linear, Conv2d, ReLU, Flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::Linear;
  std::string name;
  // Linear
  int in_features = 0;
  int out_features = 0;
  // Conv2d (weight stored as [out_ch, in_ch*kh*kw])
  int in_ch = 0, out_ch = 0, kh = 0, kw = 0, stride = 1, pad = 0;
  int in_h = 0, in_w = 0;   // filled in by shape propagation
  int out_h = 0, out_w = 0;
  // quantized execution
  int weight_bits = 8;
  int act_bits = 8;
  AccumConfig accum;
  bool prunable = false;

  bool accumulating() const {
    return kind == LayerKind::Linear || kind == LayerKind::Conv2d;
  }
  std::int64_t weight_rows() const {
    return kind == LayerKind::Linear ? out_features : out_ch;
  }
  std::int64_t weight_cols() const {
    return kind == LayerKind::Linear
               ? in_features
               : static_cast<std::int64_t>(in_ch) * kh * kw;
  }
  std::int64_t out_size() const {
    if (kind == LayerKind::Conv2d)
      return static_cast<std::int64_t>(out_ch) * out_h * out_w;
    return out_features;
  }
  void validate() const {
    if (!accumulating()) return;
    if (weight_bits < kMinBits || weight_bits > kMaxBits ||
        act_bits < kMinBits || act_bits > kMaxBits)
      throw PreconditionError(name + ": bitwidths must lie in [2,16]");
    accum.validate();
    if (kind == LayerKind::Linear && (in_features <= 0 || out_features <= 0))
      throw PreconditionError(name + ": linear dimensions must be positive");
    if (kind == LayerKind::Conv2d &&
        (in_ch <= 0 || out_ch <= 0 || kh <= 0 || kw <= 0 || stride <= 0 || pad < 0))
      throw PreconditionError(name + ": conv dimensions must be positive");
  }
};

// Mutable per-layer state (weights, mask, calibration) for accumulating
// layers; default-empty for ReLU/Flatten.
struct LayerState {
  RealTensor weight;        // master copy
  NMSparsePattern mask;     // all-true for non-prunable layers
  CalibrationStats in_stats;
  QuantParams in_params;    // activation params of this layer's input
  QuantParams w_params;     // symmetric weight params (offset 0)
  bool calibrated = false;
};

struct Model {
  std::vector<LayerSpec> specs;
  std::vector<LayerState> states;
  std::string preset;
  int input_ch = 1, input_h = 28, input_w = 28;
  int classes = 10;

  std::int64_t input_size() const {
    return static_cast<std::int64_t>(input_ch) * input_h * input_w;
  }
  bool calibrated() const {
    for (std::size_t i = 0; i < specs.size(); ++i)
      if (specs[i].accumulating() && !states[i].calibrated) return false;
    return true;
  }
  int first_accumulating() const {
    for (std::size_t i = 0; i < specs.size(); ++i)
      if (specs[i].accumulating()) return static_cast<int>(i);
    return -1;
  }
  int next_accumulating(int after) const {
    for (std::size_t i = static_cast<std::size_t>(after) + 1; i < specs.size(); ++i)
      if (specs[i].accumulating()) return static_cast<int>(i);
    return -1;
  }
};

// Propagate shapes through the layer list, filling conv spatial dims and
// checking adjacent compatibility, then allocate the per-layer state.
inline void finalize_shapes(Model& m) {
  int ch = m.input_ch, h = m.input_h, w = m.input_w;
  std::int64_t features = static_cast<std::int64_t>(ch) * h * w;
  bool spatial = true;
  int last_accum = -1;
  for (int li = 0; li < static_cast<int>(m.specs.size()); ++li) {
    auto& spec = m.specs[li];
    spec.validate();
    switch (spec.kind) {
      case LayerKind::Conv2d: {
        if (!spatial || spec.in_ch != ch)
          throw PreconditionError(spec.name + ": conv input shape mismatch");
        spec.in_h = h;
        spec.in_w = w;
        spec.out_h = (h + 2 * spec.pad - spec.kh) / spec.stride + 1;
        spec.out_w = (w + 2 * spec.pad - spec.kw) / spec.stride + 1;
        if (spec.out_h <= 0 || spec.out_w <= 0)
          throw PreconditionError(spec.name + ": empty conv output");
        ch = spec.out_ch;
        h = spec.out_h;
        w = spec.out_w;
        features = static_cast<std::int64_t>(ch) * h * w;
        last_accum = li;
        break;
      }
      case LayerKind::Linear: {
        if (spec.in_features != features)
          throw PreconditionError(spec.name + ": linear expects " +
                                  std::to_string(spec.in_features) + " features, got " +
                                  std::to_string(features));
        spatial = false;
        features = spec.out_features;
        last_accum = li;
        break;
      }
      case LayerKind::Flatten:
        spatial = false;
        break;
      case LayerKind::ReLU:
        break;
    }
  }
  if (last_accum < 0 || last_accum != static_cast<int>(m.specs.size()) - 1)
    throw PreconditionError("model must end in a linear classifier");
  if (features != m.classes)
    throw PreconditionError("classifier emits " + std::to_string(features) +
                            " classes, expected " + std::to_string(m.classes));
  m.states.assign(m.specs.size(), LayerState{});
  for (std::size_t i = 0; i < m.specs.size(); ++i) {
    const auto& spec = m.specs[i];
    if (!spec.accumulating()) continue;
    auto& st = m.states[i];
    st.weight = RealTensor({spec.weight_rows(), spec.weight_cols()});
    st.mask = all_true_pattern(st.weight.shape, 1);
  }
}

// Model presets. mlp1 is the 1-layer perceptron (ReLU + 784x10 linear); mlp2
// is the two-layer 784x784x10 net with a prunable hidden layer; convnet is a
// small two-conv stack whose second conv is prunable. The first conv and the
// final classifier head are never prunable.
inline Model make_model(const std::string& preset, int b_w, int b_x,
                        const AccumConfig& accum) {
  Model m;
  m.preset = preset;
  auto linear = [&](const std::string& name, int in, int out, bool prunable) {
    LayerSpec s;
    s.kind = LayerKind::Linear;
    s.name = name;
    s.in_features = in;
    s.out_features = out;
    s.weight_bits = b_w;
    s.act_bits = b_x;
    s.accum = accum;
    s.prunable = prunable;
    return s;
  };
  auto conv = [&](const std::string& name, int ic, int oc, int k, int stride,
                  int pad, bool prunable) {
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.name = name;
    s.in_ch = ic;
    s.out_ch = oc;
    s.kh = s.kw = k;
    s.stride = stride;
    s.pad = pad;
    s.weight_bits = b_w;
    s.act_bits = b_x;
    s.accum = accum;
    s.prunable = prunable;
    return s;
  };
  auto relu = [] {
    LayerSpec s;
    s.kind = LayerKind::ReLU;
    s.name = "relu";
    return s;
  };
  auto flatten = [] {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    s.name = "flatten";
    return s;
  };

  if (preset == "mlp1") {
    m.specs = {flatten(), relu(), linear("fc0", 784, 10, false)};
  } else if (preset == "mlp2") {
    m.specs = {flatten(), linear("fc0", 784, 784, true), relu(),
               linear("fc1", 784, 10, false)};
  } else if (preset == "convnet") {
    m.specs = {conv("conv0", 1, 8, 3, 2, 1, false), relu(),
               conv("conv1", 8, 8, 3, 2, 1, true), relu(), flatten(),
               linear("fc0", 392, 10, false)};
  } else {
    throw ConfigError("unknown model preset: " + preset);
  }
  finalize_shapes(m);
  return m;
}

// ---------------------------------------------------------------------------
// Integer evaluation path
// ---------------------------------------------------------------------------

struct EvalOptions {
  AccumConfig accum;               // overrides every layer's accumulator config
  bool resolve_transients = false; // Saturate, but recompute transient dots exactly
  int threads = 1;
  std::int64_t limit = 0;          // evaluate at most this many samples (0 = all)
};

struct LayerCounts {
  std::string layer;
  std::int64_t dots = 0;        // dot products executed
  std::int64_t transient = 0;   // natural-order classification
  std::int64_t persistent = 0;
  std::int64_t events = 0;      // overflow events under the executed policy
  std::int64_t unresolved_transient = 0; // transient dots still eventing (sorted)

  void merge(const LayerCounts& o) {
    dots += o.dots;
    transient += o.transient;
    persistent += o.persistent;
    events += o.events;
    unresolved_transient += o.unresolved_transient;
  }
};

namespace detail {

struct EngineOut {
  std::int64_t value = 0;
  bool persistent = false;
  bool transient = false;
  std::int64_t events = 0;
  bool sorted_unresolved = false;
};

// One dot product under the configured policy, with natural-order
// classification alongside. The baseline order for transience is the natural
// index order in which the products were built.
inline EngineOut run_dot(std::span<const std::int64_t> products,
                         const EvalOptions& opts) {
  const int p = opts.accum.acc_bits;
  EngineOut out;

  wide_t acc = 0;
  std::int64_t natural_events = 0;
  for (std::int64_t v : products) {
    acc += v;
    if (!fits_signed(acc, p)) ++natural_events;
  }
  const std::int64_t exact = static_cast<std::int64_t>(acc);
  out.persistent = !fits_signed(exact, p);
  out.transient = !out.persistent && natural_events > 0;

  switch (opts.accum.policy) {
    case Policy::Exact:
      out.value = exact;
      out.events = natural_events;
      break;
    case Policy::Saturate: {
      wide_t s = 0;
      for (std::int64_t v : products) {
        const wide_t raw = s + v;
        if (!fits_signed(raw, p)) ++out.events;
        s = clamp_signed_wide(raw, p);
      }
      out.value = static_cast<std::int64_t>(s);
      if (opts.resolve_transients && out.transient) out.value = exact;
      break;
    }
    case Policy::Wrap: {
      wide_t s = 0;
      for (std::int64_t v : products) {
        const wide_t raw = s + v;
        if (!fits_signed(raw, p)) ++out.events;
        s = wrap_signed(raw, p);
      }
      out.value = static_cast<std::int64_t>(s);
      break;
    }
    case Policy::Sorted: {
      const SortedDotResult r = sorted_dot(products, opts.accum);
      out.value = clamp_signed(r.value, p); // persistent results clip
      out.events = static_cast<std::int64_t>(r.events.size());
      out.sorted_unresolved = out.transient && !r.events.empty();
      break;
    }
    case Policy::SortedTiled: {
      const TiledDotResult r = sorted_dot_tiled(products, opts.accum);
      out.value = clamp_signed(r.value, p);
      out.events = static_cast<std::int64_t>(r.events.size());
      out.sorted_unresolved = out.transient && !r.events.empty();
      break;
    }
  }
  return out;
}

// Padding gather positions use index -1 and read as the zero-point code.
inline std::vector<std::int32_t> im2col_indices(const LayerSpec& s) {
  std::vector<std::int32_t> idx;
  idx.reserve(static_cast<std::size_t>(s.out_h) * s.out_w * s.in_ch * s.kh * s.kw);
  for (int oy = 0; oy < s.out_h; ++oy) {
    for (int ox = 0; ox < s.out_w; ++ox) {
      for (int c = 0; c < s.in_ch; ++c) {
        for (int ky = 0; ky < s.kh; ++ky) {
          for (int kx = 0; kx < s.kw; ++kx) {
            const int iy = oy * s.stride + ky - s.pad;
            const int ix = ox * s.stride + kx - s.pad;
            if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) {
              idx.push_back(-1);
            } else {
              idx.push_back(static_cast<std::int32_t>((c * s.in_h + iy) * s.in_w + ix));
            }
          }
        }
      }
    }
  }
  return idx;
}

// Everything static about the integer path, computed once per evaluation.
struct QuantPlan {
  struct Layer {
    int index = -1;
    const LayerSpec* spec = nullptr;
    const LayerState* state = nullptr;
    std::vector<std::int32_t> wq;       // quantized masked weights
    QuantParams out_params;             // requant target; bits==0: emit reals
    std::vector<std::int32_t> col_idx;  // conv gather map
  };
  std::vector<Layer> layers;
  const Model* model = nullptr;

  explicit QuantPlan(const Model& m) : model(&m) {
    if (!m.calibrated())
      throw PreconditionError("model is not calibrated; train or load a trained container");
    for (int i = 0; i < static_cast<int>(m.specs.size()); ++i) {
      if (!m.specs[i].accumulating()) continue;
      Layer plan;
      plan.index = i;
      plan.spec = &m.specs[i];
      plan.state = &m.states[i];
      const QuantTensor q = quantize(apply_mask(m.states[i].weight, m.states[i].mask),
                                     m.states[i].w_params);
      plan.wq = q.values;
      const int nxt = m.next_accumulating(i);
      if (nxt >= 0)
        plan.out_params = m.states[nxt].in_params;
      else
        plan.out_params.bits = 0;
      if (m.specs[i].kind == LayerKind::Conv2d)
        plan.col_idx = im2col_indices(m.specs[i]);
      layers.push_back(std::move(plan));
    }
  }

  // Per-worker scratch, reused across samples.
  struct Scratch {
    std::vector<std::int32_t> codes, next_codes;
    std::vector<std::int64_t> products;
    std::vector<float> logits;
  };

  // Run one sample (raw reals, model input size) through every layer,
  // leaving logits in scratch.logits and adding counts per plan layer.
  void run_sample(const float* input, const EvalOptions& opts, Scratch& s,
                  LayerCounts* counts) const {
    const Model& m = *model;
    const std::int64_t in_size = m.input_size();
    const QuantParams first = layers.front().state->in_params;
    s.codes.resize(static_cast<std::size_t>(in_size));
    for (std::int64_t i = 0; i < in_size; ++i)
      s.codes[static_cast<std::size_t>(i)] = quantize_value(input[i], first);
    QuantParams cur = first;

    std::size_t at = 0;
    for (int li = 0; li < static_cast<int>(m.specs.size()); ++li) {
      const LayerSpec& spec = m.specs[li];
      if (spec.kind == LayerKind::ReLU) {
        for (auto& q : s.codes) q = std::max(q, cur.offset);
        continue;
      }
      if (spec.kind == LayerKind::Flatten) continue;

      const Layer& plan = layers[at];
      LayerCounts& lc = counts[at];
      ++at;
      const bool emit_real = plan.out_params.bits == 0;
      const double chain = static_cast<double>(plan.state->w_params.scale) *
                           static_cast<double>(cur.scale);
      const std::int32_t ox = cur.offset;
      const std::int64_t rows = spec.weight_rows();
      const std::int64_t cols = spec.weight_cols();
      const std::int64_t pixels =
          spec.kind == LayerKind::Conv2d
              ? static_cast<std::int64_t>(spec.out_h) * spec.out_w
              : 1;
      s.next_codes.assign(static_cast<std::size_t>(rows * pixels), 0);
      if (emit_real) s.logits.assign(static_cast<std::size_t>(rows * pixels), 0.0f);

      for (std::int64_t px = 0; px < pixels; ++px) {
        const std::int32_t* gather =
            spec.kind == LayerKind::Conv2d ? plan.col_idx.data() + px * cols : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
          const std::int32_t* wrow = plan.wq.data() + r * cols;
          const std::uint8_t* keep = plan.state->mask.keep.data() + r * cols;
          s.products.clear();
          for (std::int64_t c = 0; c < cols; ++c) {
            if (!keep[c]) continue; // pruned weights shorten the dot
            std::int32_t xq;
            if (gather) {
              const std::int32_t src = gather[c];
              xq = src < 0 ? ox : s.codes[static_cast<std::size_t>(src)];
            } else {
              xq = s.codes[static_cast<std::size_t>(c)];
            }
            s.products.push_back(static_cast<std::int64_t>(wrow[c]) *
                                 static_cast<std::int64_t>(xq - ox));
          }
          const EngineOut out = run_dot(s.products, opts);
          lc.dots += 1;
          lc.persistent += out.persistent ? 1 : 0;
          lc.transient += out.transient ? 1 : 0;
          lc.events += out.events;
          lc.unresolved_transient += out.sorted_unresolved ? 1 : 0;

          const double z = chain * static_cast<double>(out.value);
          // conv output layout: [out_ch, out_h, out_w]
          const std::size_t dst = static_cast<std::size_t>(
              spec.kind == LayerKind::Conv2d ? r * pixels + px : r);
          if (emit_real)
            s.logits[dst] = static_cast<float>(z);
          else
            s.next_codes[dst] = quantize_value(static_cast<float>(z), plan.out_params);
        }
      }
      s.codes.swap(s.next_codes);
      cur = plan.out_params;
    }
  }
};

}  // namespace detail

struct ForwardResult {
  RealTensor logits;               // [B, classes]
  std::vector<LayerCounts> layers; // one entry per accumulating layer
};

// Forward one batch through the integer path, collecting per-layer overflow
// counts. The input is quantized with the first accumulating layer's
// calibrated params; logits come back dequantized (real).
inline ForwardResult forward_model(const Model& m, const RealTensor& batch,
                                   const EvalOptions& opts) {
  const detail::QuantPlan plan(m);
  if (batch.shape.empty() || numel(batch.shape) % m.input_size() != 0)
    throw PreconditionError("forward_model: batch shape does not match model input");
  const std::int64_t bsz = numel(batch.shape) / m.input_size();

  ForwardResult result;
  result.logits = RealTensor({bsz, m.classes});
  for (const auto& l : plan.layers) result.layers.push_back(LayerCounts{l.spec->name});

  detail::QuantPlan::Scratch scratch;
  for (std::int64_t b = 0; b < bsz; ++b) {
    plan.run_sample(batch.data() + b * m.input_size(), opts, scratch,
                    result.layers.data());
    for (int c = 0; c < m.classes; ++c)
      result.logits.values[static_cast<std::size_t>(b * m.classes + c)] =
          scratch.logits[static_cast<std::size_t>(c)];
  }
  return result;
}

struct EvalResult {
  double accuracy = 0.0;
  std::vector<LayerCounts> layers;
  std::int64_t samples = 0;

  LayerCounts totals() const {
    LayerCounts t{"total"};
    for (const auto& l : layers) t.merge(l);
    return t;
  }
};

inline int argmax_class(const float* v, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Top-1 accuracy plus aggregated transient/persistent counts under the
// configured policy. Samples evaluate independently; per-chunk results merge
// in chunk order, so output is identical at any thread count.
inline EvalResult evaluate(const Model& m, const Dataset& data, const EvalOptions& opts) {
  const std::int64_t total = opts.limit > 0 ? std::min<std::int64_t>(opts.limit, data.count())
                                            : data.count();
  if (total <= 0) throw PreconditionError("evaluate: empty evaluation set");
  const detail::QuantPlan plan(m);

  const int threads = std::max(1, opts.threads);
  const int chunks = static_cast<int>(std::min<std::int64_t>(threads, total));
  std::vector<std::vector<LayerCounts>> chunk_counts(
      static_cast<std::size_t>(chunks),
      std::vector<LayerCounts>(plan.layers.size()));
  std::vector<std::int64_t> chunk_correct(static_cast<std::size_t>(chunks), 0);

  parallel_for(total, threads, [&](std::int64_t lo, std::int64_t hi, int worker) {
    detail::QuantPlan::Scratch scratch;
    auto& counts = chunk_counts[static_cast<std::size_t>(worker)];
    std::int64_t correct = 0;
    const std::int64_t in_size = m.input_size();
    for (std::int64_t i = lo; i < hi; ++i) {
      plan.run_sample(data.images.data() + i * in_size, opts, scratch, counts.data());
      if (argmax_class(scratch.logits.data(), m.classes) == data.labels[static_cast<std::size_t>(i)])
        ++correct;
    }
    chunk_correct[static_cast<std::size_t>(worker)] = correct;
  });

  EvalResult res;
  res.samples = total;
  for (const auto& l : plan.layers) res.layers.push_back(LayerCounts{l.spec->name});
  std::int64_t correct = 0;
  for (int c = 0; c < chunks; ++c) {
    correct += chunk_correct[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < res.layers.size(); ++i)
      res.layers[i].merge(chunk_counts[static_cast<std::size_t>(c)][i]);
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return res;
}

}  // namespace pqs
