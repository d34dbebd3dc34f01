// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary model container.
//
//   [0..4)   magic "PQSM"
//   [4..8)   format version, u32 little-endian (currently 1)
//   [8..16)  metadata offset, u64 LE      [16..24) metadata length
//   [24..32) manifest offset, u64 LE      [32..40) manifest length
//   [40.. )  raw little-endian tensor payload, 8-byte aligned records
//
// The manifest is a UTF-8 JSON array of tensor records {name, role, dtype,
// shape, offset, length}; roles are weight / mask / quant-params / calib and
// dtypes f32 / i32 / u8-bitmask (packed bits, row-major mask order). The
// metadata block is a UTF-8 JSON object carrying layer specs, bitwidths and
// training provenance. Offsets are validated on load; files are written to a
// temp name and renamed, so reruns overwrite atomically.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pqs/nn.hpp"
#include "pqs/train.hpp"

namespace pqs {

constexpr char kContainerMagic[4] = {'P', 'Q', 'S', 'M'};
constexpr std::uint32_t kContainerVersion = 1;

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32le(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i)
    v = (v << 8) | static_cast<std::uint8_t>(s[at + static_cast<std::size_t>(i)]);
  return v;
}

inline std::uint64_t get_u64le(const std::string& s, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | static_cast<std::uint8_t>(s[at + static_cast<std::size_t>(i)]);
  return v;
}

inline void put_f32le(std::string& out, float f) {
  put_u32le(out, std::bit_cast<std::uint32_t>(f));
}

inline float get_f32le(const std::string& s, std::size_t at) {
  return std::bit_cast<float>(get_u32le(s, at));
}

inline std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& mask) {
  std::vector<std::uint8_t> out((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return out;
}

inline std::vector<std::uint8_t> unpack_bits(const std::string& bytes, std::size_t at,
                                             std::size_t count) {
  std::vector<std::uint8_t> out(count, 0);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = (static_cast<std::uint8_t>(bytes[at + i / 8]) >> (i % 8)) & 1u;
  return out;
}

}  // namespace detail

inline nlohmann::json layer_spec_json(const LayerSpec& s) {
  nlohmann::json j;
  j["kind"] = s.kind == LayerKind::Linear    ? "linear"
              : s.kind == LayerKind::Conv2d  ? "conv2d"
              : s.kind == LayerKind::ReLU    ? "relu"
                                             : "flatten";
  j["name"] = s.name;
  if (s.kind == LayerKind::Linear) {
    j["in_features"] = s.in_features;
    j["out_features"] = s.out_features;
  }
  if (s.kind == LayerKind::Conv2d) {
    j["in_ch"] = s.in_ch;
    j["out_ch"] = s.out_ch;
    j["kh"] = s.kh;
    j["kw"] = s.kw;
    j["stride"] = s.stride;
    j["pad"] = s.pad;
  }
  if (s.accumulating()) {
    j["weight_bits"] = s.weight_bits;
    j["act_bits"] = s.act_bits;
    j["acc_bits"] = s.accum.acc_bits;
    j["policy"] = policy_name(s.accum.policy);
    j["tile"] = s.accum.tile;
    j["max_sort_rounds"] = s.accum.max_sort_rounds;
    j["prunable"] = s.prunable;
  }
  return j;
}

inline Policy policy_from_name(const std::string& name) {
  for (Policy p : {Policy::Exact, Policy::Saturate, Policy::Wrap, Policy::Sorted,
                   Policy::SortedTiled})
    if (name == policy_name(p)) return p;
  throw ConfigError("unknown policy: " + name);
}

inline LayerSpec layer_spec_from_json(const nlohmann::json& j) {
  LayerSpec s;
  const std::string kind = j.at("kind").get<std::string>();
  s.name = j.at("name").get<std::string>();
  if (kind == "linear") {
    s.kind = LayerKind::Linear;
    s.in_features = j.at("in_features").get<int>();
    s.out_features = j.at("out_features").get<int>();
  } else if (kind == "conv2d") {
    s.kind = LayerKind::Conv2d;
    s.in_ch = j.at("in_ch").get<int>();
    s.out_ch = j.at("out_ch").get<int>();
    s.kh = j.at("kh").get<int>();
    s.kw = j.at("kw").get<int>();
    s.stride = j.at("stride").get<int>();
    s.pad = j.at("pad").get<int>();
  } else if (kind == "relu") {
    s.kind = LayerKind::ReLU;
  } else if (kind == "flatten") {
    s.kind = LayerKind::Flatten;
  } else {
    throw ConfigError("unknown layer kind: " + kind);
  }
  if (s.accumulating()) {
    s.weight_bits = j.at("weight_bits").get<int>();
    s.act_bits = j.at("act_bits").get<int>();
    s.accum.acc_bits = j.at("acc_bits").get<int>();
    s.accum.policy = policy_from_name(j.at("policy").get<std::string>());
    s.accum.tile = j.at("tile").get<int>();
    s.accum.max_sort_rounds = j.at("max_sort_rounds").get<int>();
    s.prunable = j.at("prunable").get<bool>();
  }
  return s;
}

// Serialize the model (weights, masks, quant params, calibration) plus a
// provenance JSON blob supplied by the caller.
inline void save_model(const Model& m, const nlohmann::json& provenance,
                       const std::string& path) {
  std::string payload;
  nlohmann::json manifest = nlohmann::json::array();
  auto add_record = [&](const std::string& name, const char* role, const char* dtype,
                        const Shape& shape, const std::string& bytes) {
    while (payload.size() % 8 != 0) payload.push_back('\0');
    nlohmann::json rec;
    rec["name"] = name;
    rec["role"] = role;
    rec["dtype"] = dtype;
    rec["shape"] = shape;
    rec["offset"] = payload.size();
    rec["length"] = bytes.size();
    manifest.push_back(rec);
    payload += bytes;
  };

  for (std::size_t i = 0; i < m.specs.size(); ++i) {
    if (!m.specs[i].accumulating()) continue;
    const auto& spec = m.specs[i];
    const auto& st = m.states[i];
    {
      std::string bytes;
      bytes.reserve(st.weight.values.size() * 4);
      for (float v : st.weight.values) detail::put_f32le(bytes, v);
      add_record(spec.name + ".weight", "weight", "f32", st.weight.shape, bytes);
    }
    {
      const auto packed = detail::pack_bits(st.mask.keep);
      add_record(spec.name + ".mask", "mask", "u8-bitmask", st.mask.shape,
                 std::string(packed.begin(), packed.end()));
    }
    {
      std::string bytes;
      detail::put_f32le(bytes, st.w_params.scale);
      detail::put_f32le(bytes, static_cast<float>(st.w_params.offset));
      detail::put_f32le(bytes, static_cast<float>(st.w_params.bits));
      add_record(spec.name + ".w_params", "quant-params", "f32", Shape{3}, bytes);
    }
    {
      std::string bytes;
      detail::put_f32le(bytes, st.in_params.scale);
      detail::put_f32le(bytes, static_cast<float>(st.in_params.offset));
      detail::put_f32le(bytes, static_cast<float>(st.in_params.bits));
      add_record(spec.name + ".in_params", "quant-params", "f32", Shape{3}, bytes);
    }
    {
      std::string bytes;
      detail::put_f32le(bytes, st.in_stats.min);
      detail::put_f32le(bytes, st.in_stats.max);
      detail::put_f32le(bytes, st.in_stats.decay);
      detail::put_f32le(bytes, static_cast<float>(st.in_stats.count));
      add_record(spec.name + ".calib", "calib", "f32", Shape{4}, bytes);
    }
  }

  nlohmann::json meta;
  meta["preset"] = m.preset;
  meta["input"] = {m.input_ch, m.input_h, m.input_w};
  meta["classes"] = m.classes;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < m.specs.size(); ++i) {
    nlohmann::json lj = layer_spec_json(m.specs[i]);
    if (m.specs[i].accumulating()) {
      lj["mask_m"] = m.states[i].mask.m;
      lj["mask_n"] = m.states[i].mask.n;
      lj["calibrated"] = m.states[i].calibrated;
    }
    layers.push_back(lj);
  }
  meta["layers"] = layers;
  meta["provenance"] = provenance;

  const std::string meta_str = meta.dump();
  const std::string manifest_str = manifest.dump();

  std::string file;
  file.append(kContainerMagic, 4);
  detail::put_u32le(file, kContainerVersion);
  const std::size_t header = 40;
  const std::size_t payload_at = header;
  const std::size_t manifest_at = payload_at + payload.size();
  const std::size_t meta_at = manifest_at + manifest_str.size();
  detail::put_u64le(file, meta_at);
  detail::put_u64le(file, meta_str.size());
  detail::put_u64le(file, manifest_at);
  detail::put_u64le(file, manifest_str.size());
  file += payload;
  file += manifest_str;
  file += meta_str;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp + ": cannot open for writing");
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    if (!out) throw IoError(tmp + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path + ": rename failed: " + ec.message());
}

struct LoadedModel {
  Model model;
  nlohmann::json provenance;
};

inline LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (file.size() < 40 || std::memcmp(file.data(), kContainerMagic, 4) != 0)
    throw IoError(path + ": not a model container (bad magic)");
  const std::uint32_t version = detail::get_u32le(file, 4);
  if (version != kContainerVersion)
    throw IoError(path + ": unsupported container version " + std::to_string(version));
  const std::uint64_t meta_at = detail::get_u64le(file, 8);
  const std::uint64_t meta_len = detail::get_u64le(file, 16);
  const std::uint64_t manifest_at = detail::get_u64le(file, 24);
  const std::uint64_t manifest_len = detail::get_u64le(file, 32);
  if (meta_at + meta_len > file.size() || manifest_at + manifest_len > file.size())
    throw IoError(path + ": section offsets exceed file size");

  const nlohmann::json meta =
      nlohmann::json::parse(file.substr(meta_at, meta_len));
  const nlohmann::json manifest =
      nlohmann::json::parse(file.substr(manifest_at, manifest_len));

  LoadedModel out;
  Model& m = out.model;
  m.preset = meta.at("preset").get<std::string>();
  m.input_ch = meta.at("input")[0].get<int>();
  m.input_h = meta.at("input")[1].get<int>();
  m.input_w = meta.at("input")[2].get<int>();
  m.classes = meta.at("classes").get<int>();
  for (const auto& lj : meta.at("layers")) m.specs.push_back(layer_spec_from_json(lj));
  finalize_shapes(m);
  out.provenance = meta.value("provenance", nlohmann::json::object());

  // index manifest records by name, validating bounds and overlap
  std::uint64_t prev_end = 0;
  std::map<std::string, nlohmann::json> records;
  for (const auto& rec : manifest) {
    const std::uint64_t off = rec.at("offset").get<std::uint64_t>();
    const std::uint64_t len = rec.at("length").get<std::uint64_t>();
    if (40 + off + len > file.size())
      throw IoError(path + ": record '" + rec.at("name").get<std::string>() +
                    "' exceeds file size");
    if (off < prev_end)
      throw IoError(path + ": overlapping records in manifest");
    prev_end = off + len;
    records[rec.at("name").get<std::string>()] = rec;
  }
  auto fetch = [&](const std::string& name) -> std::pair<std::size_t, std::uint64_t> {
    auto it = records.find(name);
    if (it == records.end()) throw IoError(path + ": missing record " + name);
    return {static_cast<std::size_t>(40 + it->second.at("offset").get<std::uint64_t>()),
            it->second.at("length").get<std::uint64_t>()};
  };

  for (std::size_t i = 0; i < m.specs.size(); ++i) {
    if (!m.specs[i].accumulating()) continue;
    const auto& spec = m.specs[i];
    auto& st = m.states[i];
    const auto& lj = meta.at("layers")[i];
    {
      const auto [at, len] = fetch(spec.name + ".weight");
      const std::size_t count = st.weight.values.size();
      if (len != count * 4) throw IoError(path + ": weight size mismatch for " + spec.name);
      for (std::size_t k = 0; k < count; ++k)
        st.weight.values[k] = detail::get_f32le(file, at + 4 * k);
    }
    {
      const auto [at, len] = fetch(spec.name + ".mask");
      const std::size_t count = st.mask.keep.size();
      if (len != (count + 7) / 8)
        throw IoError(path + ": mask size mismatch for " + spec.name);
      st.mask.keep = detail::unpack_bits(file, at, count);
      st.mask.m = lj.at("mask_m").get<int>();
      st.mask.n = lj.at("mask_n").get<int>();
    }
    {
      const auto [at, len] = fetch(spec.name + ".w_params");
      if (len != 12) throw IoError(path + ": params size mismatch");
      st.w_params.scale = detail::get_f32le(file, at);
      st.w_params.offset = static_cast<std::int32_t>(detail::get_f32le(file, at + 4));
      st.w_params.bits = static_cast<int>(detail::get_f32le(file, at + 8));
    }
    {
      const auto [at, len] = fetch(spec.name + ".in_params");
      if (len != 12) throw IoError(path + ": params size mismatch");
      st.in_params.scale = detail::get_f32le(file, at);
      st.in_params.offset = static_cast<std::int32_t>(detail::get_f32le(file, at + 4));
      st.in_params.bits = static_cast<int>(detail::get_f32le(file, at + 8));
    }
    {
      const auto [at, len] = fetch(spec.name + ".calib");
      if (len != 16) throw IoError(path + ": calib size mismatch");
      st.in_stats.min = detail::get_f32le(file, at);
      st.in_stats.max = detail::get_f32le(file, at + 4);
      st.in_stats.decay = detail::get_f32le(file, at + 8);
      st.in_stats.count = static_cast<std::int64_t>(detail::get_f32le(file, at + 12));
    }
    st.calibrated = lj.value("calibrated", true);
  }
  return out;
}

}  // namespace pqs
