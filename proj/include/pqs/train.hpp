// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Desk-scale trainer: SGD with momentum over the preset architectures, with
// two pruning/quantization schedules.
//
//   PtoQ  — real-valued training with iterative N:M pruning, followed by a
//           trailing block of QAT epochs with frozen masks.
//   QtoP  — QAT from epoch 1 with the same prune schedule applied to the
//           real-valued master weights underlying the fake-quantized forward.
//
// QAT fake-quantizes weights and activations in the forward pass and passes
// gradients straight through (STE); masked gradients are zeroed and masks are
// re-applied after every optimizer step, so pruned weights never resurrect.
// Training always accumulates in wide float arithmetic; narrow-accumulator
// semantics are an inference-time concern (see nn.hpp). Given equal seeds,
// both schedules start from identical initializations, and a rerun is
// bit-identical.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pqs/nn.hpp"

namespace pqs {

struct TrainConfig {
  enum class Schedule { PtoQ, QtoP };
  Schedule schedule = Schedule::PtoQ;
  int epochs = 10;
  int qat_epochs = 2;       // PtoQ only: trailing epochs under QAT
  bool prune_enabled = false;
  PruneSchedule prune;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int batch_size = 64;
  std::uint64_t seed = 1;
  int threads = 1;
  std::int64_t limit_train = 0; // cap on training samples (0 = all)

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (qat_epochs < 0 || qat_epochs > epochs)
      throw ConfigError("train: qat_epochs must lie in [0, epochs]");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (learning_rate <= 0) throw ConfigError("train: learning_rate must be > 0");
  }
};

inline const char* schedule_name(TrainConfig::Schedule s) {
  return s == TrainConfig::Schedule::PtoQ ? "ptoq" : "qtop";
}

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0; // online training accuracy over the epoch's batches
  double sparsity = 0.0;
  bool qat = false;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
};

namespace detail {

// C[m,n] = A[m,k] * B[n,k]^T, all row-major.
inline void matmul_nt(const float* a, const float* b, float* c, std::int64_t m,
                      std::int64_t k, std::int64_t n, int threads) {
  parallel_for(m, threads, [&](std::int64_t lo, std::int64_t hi, int) {
    for (std::int64_t i = lo; i < hi; ++i) {
      const float* ai = a + i * k;
      float* ci = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) {
        const float* bj = b + j * k;
        float acc = 0.0f;
        for (std::int64_t t = 0; t < k; ++t) acc += ai[t] * bj[t];
        ci[j] = acc;
      }
    }
  });
}

// dW[n,k] += G[m,n]^T * A[m,k]
inline void grad_weights(const float* g, const float* a, float* dw, std::int64_t m,
                         std::int64_t k, std::int64_t n, int threads) {
  parallel_for(n, threads, [&](std::int64_t lo, std::int64_t hi, int) {
    for (std::int64_t j = lo; j < hi; ++j) {
      float* dwj = dw + j * k;
      for (std::int64_t i = 0; i < m; ++i) {
        const float gij = g[i * n + j];
        if (gij == 0.0f) continue;
        const float* ai = a + i * k;
        for (std::int64_t t = 0; t < k; ++t) dwj[t] += gij * ai[t];
      }
    }
  });
}

// dA[m,k] = G[m,n] * W[n,k]
inline void grad_input(const float* g, const float* w, float* da, std::int64_t m,
                       std::int64_t k, std::int64_t n, int threads) {
  parallel_for(m, threads, [&](std::int64_t lo, std::int64_t hi, int) {
    for (std::int64_t i = lo; i < hi; ++i) {
      const float* gi = g + i * n;
      float* dai = da + i * k;
      std::fill(dai, dai + k, 0.0f);
      for (std::int64_t j = 0; j < n; ++j) {
        const float gij = gi[j];
        if (gij == 0.0f) continue;
        const float* wj = w + j * k;
        for (std::int64_t t = 0; t < k; ++t) dai[t] += gij * wj[t];
      }
    }
  });
}

// Float im2col over one batch: out [B*PX, K], zero padding.
inline void im2col_batch(const float* x, const LayerSpec& s, std::int64_t bsz,
                         const std::vector<std::int32_t>& idx, float* out,
                         int threads) {
  const std::int64_t px = static_cast<std::int64_t>(s.out_h) * s.out_w;
  const std::int64_t k = s.weight_cols();
  const std::int64_t in_size = static_cast<std::int64_t>(s.in_ch) * s.in_h * s.in_w;
  parallel_for(bsz, threads, [&](std::int64_t lo, std::int64_t hi, int) {
    for (std::int64_t b = lo; b < hi; ++b) {
      const float* xb = x + b * in_size;
      float* ob = out + b * px * k;
      for (std::int64_t i = 0; i < px * k; ++i) {
        const std::int32_t src = idx[static_cast<std::size_t>(i)];
        ob[i] = src < 0 ? 0.0f : xb[src];
      }
    }
  });
}

// Scatter-add the col gradient back to input gradients.
inline void col2im_batch(const float* dcol, const LayerSpec& s, std::int64_t bsz,
                         const std::vector<std::int32_t>& idx, float* dx,
                         int threads) {
  const std::int64_t px = static_cast<std::int64_t>(s.out_h) * s.out_w;
  const std::int64_t k = s.weight_cols();
  const std::int64_t in_size = static_cast<std::int64_t>(s.in_ch) * s.in_h * s.in_w;
  parallel_for(bsz, threads, [&](std::int64_t lo, std::int64_t hi, int) {
    for (std::int64_t b = lo; b < hi; ++b) {
      const float* db = dcol + b * px * k;
      float* xb = dx + b * in_size;
      std::fill(xb, xb + in_size, 0.0f);
      for (std::int64_t i = 0; i < px * k; ++i) {
        const std::int32_t dst = idx[static_cast<std::size_t>(i)];
        if (dst >= 0) xb[dst] += db[i];
      }
    }
  });
}

// [B*PX, OC] -> [B, OC*PX] (conv activation layout) and back.
inline void fold_conv_out(const float* y, float* act, std::int64_t bsz,
                          std::int64_t pxn, std::int64_t oc, int threads) {
  parallel_for(bsz, threads, [&](std::int64_t lo, std::int64_t hi, int) {
    for (std::int64_t b = lo; b < hi; ++b)
      for (std::int64_t p = 0; p < pxn; ++p)
        for (std::int64_t c = 0; c < oc; ++c)
          act[(b * oc + c) * pxn + p] = y[(b * pxn + p) * oc + c];
  });
}

inline void unfold_conv_grad(const float* g, float* gmat, std::int64_t bsz,
                             std::int64_t pxn, std::int64_t oc, int threads) {
  parallel_for(bsz, threads, [&](std::int64_t lo, std::int64_t hi, int) {
    for (std::int64_t b = lo; b < hi; ++b)
      for (std::int64_t p = 0; p < pxn; ++p)
        for (std::int64_t c = 0; c < oc; ++c)
          gmat[(b * pxn + p) * oc + c] = g[(b * oc + c) * pxn + p];
  });
}

// Mean softmax cross-entropy; writes dlogits = (softmax - onehot)/B in place.
inline double softmax_ce_grad(float* logits, const int* labels, std::int64_t bsz,
                              int classes) {
  double loss = 0.0;
  for (std::int64_t b = 0; b < bsz; ++b) {
    float* l = logits + b * classes;
    float mx = l[0];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, l[c]);
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(l[c] - mx));
    const double logp =
        static_cast<double>(l[labels[b]] - mx) - std::log(denom);
    loss -= logp;
    for (int c = 0; c < classes; ++c) {
      const double p = std::exp(static_cast<double>(l[c] - mx)) / denom;
      l[c] = static_cast<float>((p - (c == labels[b] ? 1.0 : 0.0)) /
                                static_cast<double>(bsz));
    }
  }
  return loss / static_cast<double>(bsz);
}

}  // namespace detail

// Plain real forward over a sample subset that only records activation
// statistics. Used when a schedule finishes without ever entering QAT.
inline void calibration_pass(Model& m, const Dataset& data, std::int64_t limit,
                             int threads) {
  const std::int64_t n = std::min<std::int64_t>(limit, data.count());
  const std::int64_t in_size = m.input_size();
  std::vector<float> act(static_cast<std::size_t>(n * in_size));
  std::copy_n(data.images.data(), n * in_size, act.data());
  std::vector<float> next, ymat;
  std::vector<std::vector<std::int32_t>> col_idx(m.specs.size());
  for (std::size_t i = 0; i < m.specs.size(); ++i)
    if (m.specs[i].kind == LayerKind::Conv2d)
      col_idx[i] = detail::im2col_indices(m.specs[i]);
  for (std::size_t li = 0; li < m.specs.size(); ++li) {
    const LayerSpec& spec = m.specs[li];
    switch (spec.kind) {
      case LayerKind::ReLU:
        for (auto& v : act) v = std::max(v, 0.0f);
        break;
      case LayerKind::Flatten:
        break;
      case LayerKind::Linear:
      case LayerKind::Conv2d: {
        auto& st = m.states[li];
        st.in_stats = observe(st.in_stats,
                              RealTensor({static_cast<std::int64_t>(act.size())},
                                         act));
        const RealTensor masked = apply_mask(st.weight, st.mask);
        const std::int64_t k = spec.weight_cols();
        const std::int64_t rows = spec.weight_rows();
        if (spec.kind == LayerKind::Linear) {
          next.resize(static_cast<std::size_t>(n * rows));
          detail::matmul_nt(act.data(), masked.values.data(), next.data(), n, k, rows,
                            threads);
        } else {
          const std::int64_t pxn = static_cast<std::int64_t>(spec.out_h) * spec.out_w;
          std::vector<float> col(static_cast<std::size_t>(n * pxn * k));
          detail::im2col_batch(act.data(), spec, n, col_idx[li], col.data(), threads);
          ymat.resize(static_cast<std::size_t>(n * pxn * rows));
          detail::matmul_nt(col.data(), masked.values.data(), ymat.data(), n * pxn, k,
                            rows, threads);
          next.resize(static_cast<std::size_t>(n * rows * pxn));
          detail::fold_conv_out(ymat.data(), next.data(), n, pxn, rows, threads);
        }
        act.swap(next);
        break;
      }
    }
  }
}

inline void init_weights(Model& m, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < m.specs.size(); ++i) {
    if (!m.specs[i].accumulating()) continue;
    auto& st = m.states[i];
    const double bound =
        std::sqrt(6.0 / static_cast<double>(m.specs[i].weight_cols()));
    std::uniform_real_distribution<float> d(static_cast<float>(-bound),
                                            static_cast<float>(bound));
    for (auto& v : st.weight.values) v = d(rng);
    st.mask = all_true_pattern(st.weight.shape, std::max(1, st.mask.m));
    st.in_stats = CalibrationStats{};
    st.calibrated = false;
  }
}

// Fraction of pruned weights across prunable layers.
inline double model_sparsity(const Model& m) {
  std::int64_t pruned = 0, total = 0;
  for (std::size_t i = 0; i < m.specs.size(); ++i) {
    if (!m.specs[i].accumulating() || !m.specs[i].prunable) continue;
    for (auto k : m.states[i].mask.keep) pruned += k ? 0 : 1;
    total += m.states[i].mask.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(pruned) / static_cast<double>(total);
}

inline TrainLog train(Model& m, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.count() == 0) throw PreconditionError("train: empty dataset");
  const std::int64_t n =
      cfg.limit_train > 0 ? std::min<std::int64_t>(cfg.limit_train, data.count())
                          : data.count();
  const std::int64_t in_size = m.input_size();
  const int threads = std::max(1, cfg.threads);

  std::mt19937_64 rng(cfg.seed);
  init_weights(m, rng);
  for (std::size_t i = 0; i < m.specs.size(); ++i)
    if (m.specs[i].accumulating() && m.specs[i].prunable)
      m.states[i].mask = all_true_pattern(m.states[i].weight.shape, cfg.prune.m);

  // momentum buffers
  std::vector<std::vector<float>> velocity(m.specs.size());
  for (std::size_t i = 0; i < m.specs.size(); ++i)
    if (m.specs[i].accumulating())
      velocity[i].assign(m.states[i].weight.values.size(), 0.0f);

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  const int fp_epochs = cfg.schedule == TrainConfig::Schedule::PtoQ
                            ? cfg.epochs - cfg.qat_epochs
                            : 0;
  TrainLog log;

  // per-layer forward caches for one batch
  struct Cache {
    std::vector<float> input;  // what the layer multiplied (post fake-quant)
    std::vector<float> w_eff;  // effective weights used in the forward
    std::vector<float> col;    // conv im2col matrix
    std::vector<std::uint8_t> relu;
  };
  std::vector<Cache> caches(m.specs.size());
  std::vector<std::vector<std::int32_t>> col_idx(m.specs.size());
  for (std::size_t i = 0; i < m.specs.size(); ++i)
    if (m.specs[i].kind == LayerKind::Conv2d)
      col_idx[i] = detail::im2col_indices(m.specs[i]);

  std::vector<float> act, next, grad, gnext, gmat, dcol;
  std::vector<int> labels;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const bool qat = cfg.schedule == TrainConfig::Schedule::QtoP || epoch > fp_epochs;

    // Prune step at the start of the epoch; PtoQ freezes masks once QAT
    // begins. PtoQ ranks magnitudes on the real-valued weights; QtoP ranks on
    // the quantized (fake-quant) view of the same weights, which is the
    // low-precision pruning signal the schedule comparison is about.
    if (cfg.prune_enabled && (!qat || cfg.schedule == TrainConfig::Schedule::QtoP)) {
      for (std::size_t i = 0; i < m.specs.size(); ++i) {
        if (!m.specs[i].accumulating() || !m.specs[i].prunable) continue;
        auto& st = m.states[i];
        if (cfg.schedule == TrainConfig::Schedule::QtoP) {
          const RealTensor masked = apply_mask(st.weight, st.mask);
          const QuantParams wp = weight_params(masked, m.specs[i].weight_bits);
          st.mask = schedule_step(cfg.prune, epoch, fake_quantize(masked, wp), st.mask);
        } else {
          st.mask = schedule_step(cfg.prune, epoch, st.weight, st.mask);
        }
        st.weight = apply_mask(st.weight, st.mask);
      }
    }

    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::int64_t batches = 0;
    std::int64_t correct = 0;

    for (std::int64_t at = 0; at < n; at += cfg.batch_size) {
      const std::int64_t bsz = std::min<std::int64_t>(cfg.batch_size, n - at);
      act.resize(static_cast<std::size_t>(bsz * in_size));
      labels.resize(static_cast<std::size_t>(bsz));
      for (std::int64_t b = 0; b < bsz; ++b) {
        const std::int64_t src = order[static_cast<std::size_t>(at + b)];
        std::copy_n(data.images.data() + src * in_size, in_size,
                    act.data() + b * in_size);
        labels[static_cast<std::size_t>(b)] = data.labels[static_cast<std::size_t>(src)];
      }

      // ---- forward ----
      for (std::size_t li = 0; li < m.specs.size(); ++li) {
        const LayerSpec& spec = m.specs[li];
        Cache& cache = caches[li];
        switch (spec.kind) {
          case LayerKind::ReLU: {
            cache.relu.resize(act.size());
            for (std::size_t i = 0; i < act.size(); ++i) {
              cache.relu[i] = act[i] > 0.0f;
              if (!cache.relu[i]) act[i] = 0.0f;
            }
            break;
          }
          case LayerKind::Flatten:
            break;
          case LayerKind::Linear:
          case LayerKind::Conv2d: {
            auto& st = m.states[li];
            if (qat) {
              st.in_stats = observe(
                  st.in_stats,
                  RealTensor({static_cast<std::int64_t>(act.size())}, act));
              st.in_params = params_from_stats(st.in_stats, spec.act_bits);
              for (auto& v : act)
                v = dequantize_value(quantize_value(v, st.in_params), st.in_params);
            }
            cache.input = act;
            const RealTensor masked = apply_mask(st.weight, st.mask);
            if (qat) {
              st.w_params = weight_params(masked, spec.weight_bits);
              cache.w_eff.resize(masked.values.size());
              for (std::size_t i = 0; i < masked.values.size(); ++i)
                cache.w_eff[i] = dequantize_value(
                    quantize_value(masked.values[i], st.w_params), st.w_params);
            } else {
              cache.w_eff = masked.values;
            }
            const std::int64_t k = spec.weight_cols();
            const std::int64_t rows = spec.weight_rows();
            if (spec.kind == LayerKind::Linear) {
              next.resize(static_cast<std::size_t>(bsz * rows));
              detail::matmul_nt(act.data(), cache.w_eff.data(), next.data(), bsz, k,
                                rows, threads);
            } else {
              const std::int64_t pxn = static_cast<std::int64_t>(spec.out_h) * spec.out_w;
              cache.col.resize(static_cast<std::size_t>(bsz * pxn * k));
              detail::im2col_batch(act.data(), spec, bsz, col_idx[li],
                                   cache.col.data(), threads);
              gmat.resize(static_cast<std::size_t>(bsz * pxn * rows));
              detail::matmul_nt(cache.col.data(), cache.w_eff.data(), gmat.data(),
                                bsz * pxn, k, rows, threads);
              next.resize(static_cast<std::size_t>(bsz * rows * pxn));
              detail::fold_conv_out(gmat.data(), next.data(), bsz, pxn, rows, threads);
            }
            act.swap(next);
            break;
          }
        }
      }

      // ---- loss ----
      for (std::int64_t b = 0; b < bsz; ++b)
        if (argmax_class(act.data() + b * m.classes, m.classes) ==
            labels[static_cast<std::size_t>(b)])
          ++correct;
      epoch_loss += detail::softmax_ce_grad(act.data(), labels.data(), bsz, m.classes);
      ++batches;
      grad = act; // dlogits

      // ---- backward ----
      for (int li = static_cast<int>(m.specs.size()) - 1; li >= 0; --li) {
        const LayerSpec& spec = m.specs[li];
        Cache& cache = caches[li];
        switch (spec.kind) {
          case LayerKind::ReLU: {
            for (std::size_t i = 0; i < grad.size(); ++i)
              if (!cache.relu[i]) grad[i] = 0.0f;
            break;
          }
          case LayerKind::Flatten:
            break;
          case LayerKind::Linear:
          case LayerKind::Conv2d: {
            auto& st = m.states[li];
            const std::int64_t k = spec.weight_cols();
            const std::int64_t rows = spec.weight_rows();
            std::vector<float> dw(st.weight.values.size(), 0.0f);
            const bool need_dx = li > 0;
            if (spec.kind == LayerKind::Linear) {
              detail::grad_weights(grad.data(), cache.input.data(), dw.data(), bsz, k,
                                   rows, threads);
              if (need_dx) {
                gnext.resize(cache.input.size());
                detail::grad_input(grad.data(), cache.w_eff.data(), gnext.data(), bsz,
                                   k, rows, threads);
                grad.swap(gnext);
              }
            } else {
              const std::int64_t pxn = static_cast<std::int64_t>(spec.out_h) * spec.out_w;
              gmat.resize(static_cast<std::size_t>(bsz * pxn * rows));
              detail::unfold_conv_grad(grad.data(), gmat.data(), bsz, pxn, rows,
                                       threads);
              detail::grad_weights(gmat.data(), cache.col.data(), dw.data(), bsz * pxn,
                                   k, rows, threads);
              if (need_dx) {
                dcol.resize(cache.col.size());
                detail::grad_input(gmat.data(), cache.w_eff.data(), dcol.data(),
                                   bsz * pxn, k, rows, threads);
                gnext.resize(cache.input.size());
                detail::col2im_batch(dcol.data(), spec, bsz, col_idx[li], gnext.data(),
                                     threads);
                grad.swap(gnext);
              }
            }
            // SGD + momentum step with straight-through weight gradients
            auto& vel = velocity[li];
            float* w = st.weight.data();
            const float lr = static_cast<float>(cfg.learning_rate);
            const float mu = static_cast<float>(cfg.momentum);
            const float wd = static_cast<float>(cfg.weight_decay);
            const std::uint8_t* keep = st.mask.keep.data();
            for (std::size_t i = 0; i < dw.size(); ++i) {
              if (!keep[i]) continue; // pruned weights never resurrect
              const float g = dw[i] + wd * w[i];
              vel[i] = mu * vel[i] + g;
              w[i] -= lr * vel[i];
            }
            st.weight = apply_mask(st.weight, st.mask);
            break;
          }
        }
      }
    }

    log.epochs.push_back(EpochLog{epoch, epoch_loss / std::max<std::int64_t>(1, batches),
                                  static_cast<double>(correct) / static_cast<double>(n),
                                  model_sparsity(m), qat});
  }

  // If the schedule never entered QAT, collect activation stats with one
  // calibration sweep so the quantized inference path still has params.
  bool any_stats = true;
  for (std::size_t i = 0; i < m.specs.size(); ++i)
    if (m.specs[i].accumulating() && m.states[i].in_stats.count == 0) any_stats = false;
  if (!any_stats) calibration_pass(m, data, std::min<std::int64_t>(n, 1024), threads);

  for (std::size_t i = 0; i < m.specs.size(); ++i) {
    if (!m.specs[i].accumulating()) continue;
    auto& st = m.states[i];
    st.w_params = weight_params(apply_mask(st.weight, st.mask), m.specs[i].weight_bits);
    st.in_params = params_from_stats(st.in_stats, m.specs[i].act_bits);
    st.calibrated = true;
  }
  return log;
}

}  // namespace pqs
