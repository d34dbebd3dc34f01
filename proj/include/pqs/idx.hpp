// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// IDX image/label file ingestion (the MNIST container format): big-endian
// u32 header words, magic 0x00000803 for u8 image cubes and 0x00000801 for
// u8 label vectors. Pixels load as reals scaled to [0,1].

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "pqs/common.hpp"
#include "pqs/tensor.hpp"

namespace pqs {

struct Dataset {
  RealTensor images;           // [N, rows, cols]
  std::vector<int> labels;     // N entries, class ids
  std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
};

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& path,
                                 std::int64_t at) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw IoError(path + ": truncated at byte " + std::to_string(at));
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline std::vector<std::uint8_t> load_idx_bytes(const std::string& path,
                                                std::uint32_t want_magic,
                                                std::vector<std::int64_t>& dims_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  const std::uint32_t magic = detail::read_be_u32(in, path, 0);
  if (magic != want_magic)
    throw IoError(path + ": magic mismatch, expected " + std::to_string(want_magic) +
                  " got " + std::to_string(magic));
  const int ndims = want_magic == kIdxImageMagic ? 3 : 1;
  dims_out.clear();
  std::int64_t total = 1;
  for (int d = 0; d < ndims; ++d) {
    dims_out.push_back(detail::read_be_u32(in, path, 4 + 4 * d));
    total *= dims_out.back();
  }
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(total));
  in.read(reinterpret_cast<char*>(bytes.data()), total);
  if (in.gcount() != total)
    throw IoError(path + ": truncated at byte " +
                  std::to_string(4 + 4 * ndims + in.gcount()));
  return bytes;
}

// Load an images/labels IDX pair. Counts are cross-checked between files.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::vector<std::int64_t> idims, ldims;
  const auto pixels = load_idx_bytes(images_path, kIdxImageMagic, idims);
  const auto labels = load_idx_bytes(labels_path, kIdxLabelMagic, ldims);
  if (idims[0] != ldims[0])
    throw IoError("image/label count mismatch: " + std::to_string(idims[0]) +
                  " vs " + std::to_string(ldims[0]));
  Dataset ds;
  ds.images = RealTensor({idims[0], idims[1], idims[2]});
  for (std::size_t i = 0; i < pixels.size(); ++i)
    ds.images.values[i] = static_cast<float>(pixels[i]) / 255.0f;
  ds.labels.assign(labels.begin(), labels.end());
  return ds;
}

inline void write_idx_images(const std::string& path, std::int64_t n,
                             std::int64_t rows, std::int64_t cols,
                             const std::vector<std::uint8_t>& pixels) {
  if (static_cast<std::int64_t>(pixels.size()) != n * rows * cols)
    throw PreconditionError("write_idx_images: pixel count mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  detail::write_be_u32(out, kIdxImageMagic);
  detail::write_be_u32(out, static_cast<std::uint32_t>(n));
  detail::write_be_u32(out, static_cast<std::uint32_t>(rows));
  detail::write_be_u32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError(path + ": write failed");
}

inline void write_idx_labels(const std::string& path,
                             const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  detail::write_be_u32(out, kIdxLabelMagic);
  detail::write_be_u32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace pqs
