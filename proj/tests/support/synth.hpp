// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic 10-class 28x28 image generator used by the test and
// acceptance suites in place of a downloaded dataset. Each class is a fixed
// arrangement of Gaussian bumps plus optional clean single-pixel keys.
// Difficulty knobs: pixel noise, per-sample brightness jitter (optionally
// log-uniform over a wide range), per-sample bump dropout, and confuser
// bumps borrowed from other classes (which give the task an irreducible
// error floor). Images are written/read through the IDX path like any real
// dataset.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pqs/idx.hpp"
#include "pqs/tensor.hpp"

namespace synth {

struct Spec {
  int rows = 28;
  int cols = 28;
  int classes = 10;
  int bumps_per_class = 4;
  int keys_per_class = 0;     // clean single-pixel class markers
  float key_gain = 1.0f;
  float bump_gain = 1.0f;
  float bump_keep_p = 1.0f;   // per-sample probability a class bump shows
  float confuse_p = 0.0f;     // per-sample probability of borrowing another
                              // class's bump (ambiguity / error floor)
  float noise = 0.06f;
  float intensity_lo = 0.65f; // per-sample brightness jitter range
  float intensity_hi = 1.0f;
  bool log_intensity = false; // log-uniform brightness instead of uniform
  std::uint64_t seed = 12345;
};

// Profile with clean per-class key pixels and a wide log-uniform brightness
// range; produces dot-product magnitudes spanning several octaves, which the
// overflow experiments need.
inline Spec keyed_spec() {
  Spec s;
  s.keys_per_class = 4;
  s.noise = 0.14f;
  s.bump_gain = 0.5f;
  s.intensity_lo = 0.03f;
  s.intensity_hi = 1.0f;
  s.log_intensity = true;
  return s;
}

// Profile with dropped/borrowed bumps: accuracy has an intrinsic ceiling, so
// training-schedule differences show instead of saturating at 100%.
inline Spec ambiguous_spec() {
  Spec s;
  s.bumps_per_class = 5;
  s.bump_keep_p = 0.6f;
  s.confuse_p = 0.08f;
  s.noise = 0.12f;
  s.intensity_lo = 0.5f;
  return s;
}

struct Bump {
  float cy, cx, sigma;
};

inline std::vector<Bump> class_bumps(const Spec& spec, int cls) {
  std::mt19937_64 rng(spec.seed * 7919 + static_cast<std::uint64_t>(cls) * 104729 + 13);
  std::uniform_real_distribution<float> pos_y(4.0f, spec.rows - 5.0f);
  std::uniform_real_distribution<float> pos_x(4.0f, spec.cols - 5.0f);
  std::uniform_real_distribution<float> width(1.6f, 3.2f);
  std::vector<Bump> bumps;
  for (int b = 0; b < spec.bumps_per_class; ++b)
    bumps.push_back(Bump{pos_y(rng), pos_x(rng), width(rng)});
  return bumps;
}

// Key pixels: disjoint across classes, clean, full strength.
inline std::vector<std::int32_t> class_keys(const Spec& spec, int cls) {
  std::mt19937_64 krng(spec.seed * 31 + 7);
  std::vector<std::int32_t> cells(static_cast<std::size_t>(spec.rows * spec.cols));
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), krng);
  std::vector<std::int32_t> keys;
  for (int k = 0; k < spec.keys_per_class; ++k)
    keys.push_back(cells[static_cast<std::size_t>(cls * spec.keys_per_class + k)]);
  return keys;
}

inline void render_bump(std::vector<float>& img, const Spec& spec, const Bump& b,
                        float amp) {
  const int y0 = std::max(0, static_cast<int>(b.cy - 4 * b.sigma));
  const int y1 = std::min(spec.rows - 1, static_cast<int>(b.cy + 4 * b.sigma) + 1);
  const int x0 = std::max(0, static_cast<int>(b.cx - 4 * b.sigma));
  const int x1 = std::min(spec.cols - 1, static_cast<int>(b.cx + 4 * b.sigma) + 1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const float d2 = (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
      img[static_cast<std::size_t>(y * spec.cols + x)] +=
          amp * std::exp(-d2 / (2.0f * b.sigma * b.sigma));
    }
  }
}

// 8-bit pixels, labels round-robin over classes.
inline void make_raw(const Spec& spec, int n, std::uint64_t sample_seed,
                     std::vector<std::uint8_t>& pixels,
                     std::vector<std::uint8_t>& labels) {
  std::vector<std::vector<Bump>> bumps;
  std::vector<std::vector<std::int32_t>> keys;
  for (int c = 0; c < spec.classes; ++c) {
    bumps.push_back(class_bumps(spec, c));
    keys.push_back(class_keys(spec, c));
  }
  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  std::normal_distribution<float> noise(0.0f, spec.noise);
  const int px = spec.rows * spec.cols;
  pixels.assign(static_cast<std::size_t>(n) * px, 0);
  labels.assign(static_cast<std::size_t>(n), 0);
  std::vector<float> img(static_cast<std::size_t>(px));
  const float lo = spec.intensity_lo, hi = spec.intensity_hi;
  for (int i = 0; i < n; ++i) {
    const int cls = i % spec.classes;
    labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(cls);
    const float gain = spec.log_intensity
                           ? lo * std::exp(uni(rng) * std::log(hi / lo))
                           : lo + uni(rng) * (hi - lo);
    std::fill(img.begin(), img.end(), 0.0f);
    for (const Bump& b : bumps[static_cast<std::size_t>(cls)])
      if (uni(rng) <= spec.bump_keep_p) render_bump(img, spec, b, spec.bump_gain);
    if (spec.confuse_p > 0.0f) {
      for (int c = 0; c < spec.classes; ++c) {
        if (c == cls) continue;
        for (const Bump& b : bumps[static_cast<std::size_t>(c)])
          if (uni(rng) < spec.confuse_p) render_bump(img, spec, b, spec.bump_gain);
      }
    }
    float mx = 1.0f;
    for (float v : img) mx = std::max(mx, v);
    for (int j = 0; j < px; ++j) {
      float v = img[static_cast<std::size_t>(j)] / mx * gain;
      v += noise(rng) * std::max(gain, 0.25f);
      v = std::min(1.0f, std::max(0.0f, v));
      pixels[static_cast<std::size_t>(i) * px + static_cast<std::size_t>(j)] =
          static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    // keys render after noise so they stay clean
    for (std::int32_t at : keys[static_cast<std::size_t>(cls)])
      pixels[static_cast<std::size_t>(i) * px + static_cast<std::size_t>(at)] =
          static_cast<std::uint8_t>(std::lround(
              std::min(1.0f, spec.key_gain * gain) * 255.0f));
  }
}

inline pqs::Dataset make_dataset(const Spec& spec, int n, std::uint64_t sample_seed) {
  std::vector<std::uint8_t> pixels, labels;
  make_raw(spec, n, sample_seed, pixels, labels);
  pqs::Dataset ds;
  ds.images = pqs::RealTensor({n, spec.rows, spec.cols});
  for (std::size_t i = 0; i < pixels.size(); ++i)
    ds.images.values[i] = static_cast<float>(pixels[i]) / 255.0f;
  ds.labels.assign(labels.begin(), labels.end());
  return ds;
}

// Write an images/labels IDX pair; returns the two paths.
inline std::pair<std::string, std::string> write_idx_pair(const Spec& spec,
                                                          const std::string& dir,
                                                          const std::string& stem,
                                                          int n,
                                                          std::uint64_t sample_seed) {
  std::vector<std::uint8_t> pixels, labels;
  make_raw(spec, n, sample_seed, pixels, labels);
  const std::string ipath = dir + "/" + stem + "-images-idx3-ubyte";
  const std::string lpath = dir + "/" + stem + "-labels-idx1-ubyte";
  pqs::write_idx_images(ipath, n, spec.rows, spec.cols, pixels);
  pqs::write_idx_labels(lpath, labels);
  return {ipath, lpath};
}

}  // namespace synth
