// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment harness: overflow profiling over accumulator-bitwidth grids,
// accuracy-vs-bitwidth sweeps with content-addressed model caching, pareto
// frontier extraction, and CSV / JSON-lines report emission.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pqs/nn.hpp"
#include "pqs/train.hpp"

namespace pqs {

// One profiled (policy, p) cell: per-layer counts plus model-level accuracy.
struct OverflowReport {
  Policy policy = Policy::Exact;
  int acc_bits = 0;
  int b_w = 0;
  int b_x = 0;
  double accuracy = 0.0;
  std::vector<LayerCounts> layers;

  LayerCounts totals() const {
    LayerCounts t{"total"};
    for (const auto& l : layers) t.merge(l);
    return t;
  }
};

struct SweepRecord {
  std::string run_id;
  double sparsity = 0.0;
  int b_w = 0;
  int b_x = 0;
  int acc_bits = 0;
  std::string policy;
  double accuracy = 0.0;
  std::int64_t transient = 0;
  std::int64_t persistent = 0;
  std::int64_t events = 0;

  bool operator==(const SweepRecord&) const = default;
};

// Evaluate the model once per (p, policy) grid cell.
inline std::vector<OverflowReport> profile_model(const Model& m, const Dataset& data,
                                                 const std::vector<int>& p_grid,
                                                 const std::vector<Policy>& policies,
                                                 const EvalOptions& base) {
  std::vector<OverflowReport> reports;
  for (int p : p_grid) {
    for (Policy policy : policies) {
      EvalOptions opts = base;
      opts.accum.acc_bits = p;
      opts.accum.policy = policy;
      const EvalResult r = evaluate(m, data, opts);
      OverflowReport rep;
      rep.policy = policy;
      rep.acc_bits = p;
      rep.b_w = m.specs[static_cast<std::size_t>(m.first_accumulating())].weight_bits;
      rep.b_x = m.specs[static_cast<std::size_t>(m.first_accumulating())].act_bits;
      rep.accuracy = r.accuracy;
      rep.layers = r.layers;
      reports.push_back(std::move(rep));
    }
  }
  return reports;
}

// Deterministic ordering: ascending p, then descending accuracy, then run id.
inline void sort_records(std::vector<SweepRecord>& records) {
  std::sort(records.begin(), records.end(), [](const SweepRecord& a, const SweepRecord& b) {
    if (a.acc_bits != b.acc_bits) return a.acc_bits < b.acc_bits;
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    return a.run_id < b.run_id;
  });
}

// Records not dominated on (lower p, higher accuracy). Ties on p keep the
// higher accuracy; exact duplicates keep the first run id.
inline std::vector<SweepRecord> pareto_frontier(std::vector<SweepRecord> records) {
  if (records.empty()) throw PreconditionError("pareto_frontier: empty record list");
  sort_records(records);
  std::vector<SweepRecord> frontier;
  double best = -1.0;
  for (const auto& r : records) {
    if (r.accuracy > best) { // sorted by (p asc, acc desc): strict improvement only
      frontier.push_back(r);
      best = r.accuracy;
    }
  }
  return frontier;
}

inline std::string format_accuracy(double acc) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", acc);
  return buf;
}

constexpr const char* kSweepCsvHeader =
    "run_id,sparsity,b_w,b_x,p,policy,accuracy,transient,persistent,events";

inline std::string sweep_csv_row(const SweepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.4f,%d,%d,%d,%s,%s,%lld,%lld,%lld",
                r.run_id.c_str(), r.sparsity, r.b_w, r.b_x, r.acc_bits,
                r.policy.c_str(), format_accuracy(r.accuracy).c_str(),
                static_cast<long long>(r.transient),
                static_cast<long long>(r.persistent),
                static_cast<long long>(r.events));
  return buf;
}

inline nlohmann::json sweep_json(const SweepRecord& r) {
  return nlohmann::json{{"run_id", r.run_id},
                        {"sparsity", r.sparsity},
                        {"b_w", r.b_w},
                        {"b_x", r.b_x},
                        {"p", r.acc_bits},
                        {"policy", r.policy},
                        {"accuracy", format_accuracy(r.accuracy)},
                        {"transient", r.transient},
                        {"persistent", r.persistent},
                        {"events", r.events}};
}

inline SweepRecord sweep_from_json(const nlohmann::json& j) {
  SweepRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.sparsity = j.at("sparsity").get<double>();
  r.b_w = j.at("b_w").get<int>();
  r.b_x = j.at("b_x").get<int>();
  r.acc_bits = j.at("p").get<int>();
  r.policy = j.at("policy").get<std::string>();
  r.accuracy = std::stod(j.at("accuracy").get<std::string>());
  r.transient = j.at("transient").get<std::int64_t>();
  r.persistent = j.at("persistent").get<std::int64_t>();
  r.events = j.at("events").get<std::int64_t>();
  return r;
}

// Atomic write: temp file in the destination directory, then rename.
inline void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp + ": cannot open for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError(tmp + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path + ": rename failed: " + ec.message());
}

enum class ReportFormat { Csv, JsonLines };

inline void emit_report(const std::vector<SweepRecord>& records, ReportFormat format,
                        const std::string& path) {
  std::string out;
  if (format == ReportFormat::Csv) {
    out = std::string(kSweepCsvHeader) + "\n";
    for (const auto& r : records) out += sweep_csv_row(r) + "\n";
  } else {
    for (const auto& r : records) out += sweep_json(r).dump() + "\n";
  }
  write_file_atomic(path, out);
}

inline std::vector<SweepRecord> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  std::vector<SweepRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(sweep_from_json(nlohmann::json::parse(line)));
  }
  return records;
}

// Per-layer profile CSV for one (policy, p) cell.
constexpr const char* kProfileCsvHeader =
    "layer,dots,transient,persistent,events,unresolved_transient,policy,p,b_w,b_x,accuracy";

inline std::string profile_csv(const OverflowReport& rep) {
  std::string out = std::string(kProfileCsvHeader) + "\n";
  auto row = [&](const LayerCounts& l) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%lld,%lld,%lld,%s,%d,%d,%d,%s\n",
                  l.layer.c_str(), static_cast<long long>(l.dots),
                  static_cast<long long>(l.transient),
                  static_cast<long long>(l.persistent),
                  static_cast<long long>(l.events),
                  static_cast<long long>(l.unresolved_transient),
                  policy_name(rep.policy), rep.acc_bits, rep.b_w, rep.b_x,
                  format_accuracy(rep.accuracy).c_str());
    out += buf;
  };
  for (const auto& l : rep.layers) row(l);
  row(rep.totals());
  return out;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct SweepCell {
  double sparsity = 0.0;
  int b_w = 8;
  int b_x = 8;
  std::uint64_t seed = 1;
};

struct SweepPlan {
  std::vector<SweepCell> cells;    // training configurations
  std::vector<int> p_grid;         // accumulator bitwidths to evaluate
  std::vector<Policy> policies;
  TrainConfig base;                // epochs, lr, schedule, prune shape
  std::string cache_dir;           // content-addressed trained-model cache
};

inline std::string cell_run_id(const SweepCell& c) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "s%02d_w%d_a%d_seed%llu",
                static_cast<int>(c.sparsity * 100 + 0.5), c.b_w, c.b_x,
                static_cast<unsigned long long>(c.seed));
  return buf;
}

// FNV-1a over the canonical JSON dump of the training-relevant fields.
inline std::uint64_t train_config_hash(const TrainConfig& cfg, const SweepCell& cell,
                                       const std::string& preset) {
  nlohmann::json j{{"preset", preset},
                   {"schedule", schedule_name(cfg.schedule)},
                   {"epochs", cfg.epochs},
                   {"qat_epochs", cfg.qat_epochs},
                   {"lr", cfg.learning_rate},
                   {"momentum", cfg.momentum},
                   {"weight_decay", cfg.weight_decay},
                   {"batch", cfg.batch_size},
                   {"limit", cfg.limit_train},
                   {"prune", {cfg.prune_enabled, cfg.prune.target, cfg.prune.interval,
                              cfg.prune.increment, cfg.prune.m}},
                   {"cell", {cell.sparsity, cell.b_w, cell.b_x, cell.seed}}};
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace pqs
