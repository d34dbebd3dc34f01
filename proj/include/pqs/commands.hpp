// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command layer behind the CLI: train / eval / profile / sweep / dot.
// Exit-code mapping lives in the CLI main; these functions throw the typed
// errors from common.hpp. All outputs are deterministic under a fixed seed
// and overwrite atomically.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pqs/config.hpp"
#include "pqs/container.hpp"
#include "pqs/idx.hpp"
#include "pqs/nn.hpp"
#include "pqs/profile.hpp"
#include "pqs/train.hpp"

namespace pqs {

inline Dataset load_train_dataset(const RunConfig& cfg) {
  if (cfg.train_images.empty() || cfg.train_labels.empty())
    throw ConfigError("dataset.train_images / train_labels required");
  return load_idx(cfg.train_images, cfg.train_labels);
}

inline Dataset load_test_dataset(const RunConfig& cfg) {
  if (cfg.test_images.empty() || cfg.test_labels.empty())
    throw ConfigError("dataset.test_images / test_labels required");
  return load_idx(cfg.test_images, cfg.test_labels);
}

inline void ensure_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError(cfg.out_dir + ": cannot create output directory");
}

inline nlohmann::json train_provenance(const RunConfig& cfg) {
  return nlohmann::json{
      {"schedule", schedule_name(cfg.train.schedule)},
      {"epochs", cfg.train.epochs},
      {"qat_epochs", cfg.train.qat_epochs},
      {"learning_rate", cfg.train.learning_rate},
      {"momentum", cfg.train.momentum},
      {"weight_decay", cfg.train.weight_decay},
      {"batch_size", cfg.train.batch_size},
      {"seed", cfg.seed},
      {"prune",
       {{"enabled", cfg.train.prune_enabled},
        {"target", cfg.train.prune.target},
        {"interval", cfg.train.prune.interval},
        {"increment", cfg.train.prune.increment},
        {"group_m", cfg.train.prune.m}}},
      {"bits", {{"weight", cfg.b_w}, {"activation", cfg.b_x}}},
      {"preset", cfg.preset}};
}

inline std::string model_file_path(const RunConfig& cfg) {
  return cfg.out_dir + "/" + cfg.run_id + ".pqsm";
}

// Train a model per config; writes the container and a JSON training log.
// Returns the container path.
inline std::string cmd_train(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  const Dataset data = load_train_dataset(cfg);
  Model m = make_model(cfg.preset, cfg.b_w, cfg.b_x, cfg.accum);
  const TrainLog log = train(m, data, cfg.train);

  const std::string path = model_file_path(cfg);
  save_model(m, train_provenance(cfg), path);

  nlohmann::json jlog;
  jlog["run_id"] = cfg.run_id;
  jlog["epochs"] = nlohmann::json::array();
  for (const auto& e : log.epochs)
    jlog["epochs"].push_back({{"epoch", e.epoch},
                              {"loss", e.loss},
                              {"accuracy", e.accuracy},
                              {"sparsity", e.sparsity},
                              {"qat", e.qat}});
  jlog["final_sparsity"] = log.epochs.empty() ? 0.0 : log.epochs.back().sparsity;

  // final integer-path evaluation at the configured accumulator, Exact
  // policy; `eval` on the same test set reproduces this number bit-exactly
  if (!cfg.test_images.empty() && !cfg.test_labels.empty()) {
    const Dataset test = load_test_dataset(cfg);
    EvalOptions opts;
    opts.accum = cfg.accum;
    opts.accum.policy = Policy::Exact;
    opts.threads = cfg.threads;
    opts.limit = cfg.limit_test;
    const EvalResult r = evaluate(m, test, opts);
    jlog["final_eval"] = {{"policy", policy_name(Policy::Exact)},
                          {"p", opts.accum.acc_bits},
                          {"accuracy", format_accuracy(r.accuracy)}};
  }
  write_file_atomic(cfg.out_dir + "/" + cfg.run_id + "_train_log.json", jlog.dump(2) + "\n");
  return path;
}

inline SweepRecord record_from_eval(const std::string& run_id, const Model& m,
                                    const EvalOptions& opts, const EvalResult& r) {
  SweepRecord rec;
  rec.run_id = run_id;
  rec.sparsity = model_sparsity(m);
  const int fa = m.first_accumulating();
  rec.b_w = m.specs[static_cast<std::size_t>(fa)].weight_bits;
  rec.b_x = m.specs[static_cast<std::size_t>(fa)].act_bits;
  rec.acc_bits = opts.accum.acc_bits;
  rec.policy = opts.resolve_transients ? "saturate_resolve"
                                       : policy_name(opts.accum.policy);
  rec.accuracy = r.accuracy;
  const LayerCounts t = r.totals();
  rec.transient = t.transient;
  rec.persistent = t.persistent;
  rec.events = t.events;
  return rec;
}

// Evaluate a trained container on the test dataset at the configured
// accumulator; writes one-row CSV + JSONL reports and returns the record.
inline SweepRecord cmd_eval(const RunConfig& cfg) {
  if (cfg.model_path.empty()) throw ConfigError("'model' path required for eval");
  ensure_out_dir(cfg);
  const LoadedModel lm = load_model(cfg.model_path);
  const Dataset data = load_test_dataset(cfg);
  EvalOptions opts;
  opts.accum = cfg.accum;
  opts.resolve_transients = cfg.resolve_transients;
  opts.threads = cfg.threads;
  opts.limit = cfg.limit_test;
  const EvalResult r = evaluate(lm.model, data, opts);
  const SweepRecord rec = record_from_eval(cfg.run_id, lm.model, opts, r);
  emit_report({rec}, ReportFormat::Csv, cfg.out_dir + "/" + cfg.run_id + "_eval.csv");
  emit_report({rec}, ReportFormat::JsonLines, cfg.out_dir + "/" + cfg.run_id + "_eval.jsonl");
  return rec;
}

// Profile a trained container over the (p_grid x policies) cells; one
// per-layer CSV per cell, named <runid>_<policy>_p<p>.csv.
inline std::vector<OverflowReport> cmd_profile(const RunConfig& cfg) {
  if (cfg.model_path.empty()) throw ConfigError("'model' path required for profile");
  ensure_out_dir(cfg);
  const LoadedModel lm = load_model(cfg.model_path);
  const Dataset data = load_test_dataset(cfg);
  EvalOptions base;
  base.accum = cfg.accum;
  base.resolve_transients = cfg.resolve_transients;
  base.threads = cfg.threads;
  base.limit = cfg.limit_test;
  const std::vector<OverflowReport> reports =
      profile_model(lm.model, data, cfg.p_grid, cfg.policies, base);
  for (const auto& rep : reports) {
    char name[128];
    std::snprintf(name, sizeof name, "%s_%s_p%d.csv", cfg.run_id.c_str(),
                  policy_name(rep.policy), rep.acc_bits);
    write_file_atomic(cfg.out_dir + "/" + name, profile_csv(rep));
  }
  return reports;
}

// Train (or load from the content-addressed cache) every sweep cell, then
// evaluate it across the accumulator grid and policies.
inline std::vector<SweepRecord> cmd_sweep(const RunConfig& cfg) {
  if (cfg.sweep_sparsities.empty() || cfg.sweep_bits.empty())
    throw ConfigError("sweep.sparsities and sweep.bit_pairs required for sweep");
  ensure_out_dir(cfg);
  const std::string cache_dir = cfg.out_dir + "/cache";
  std::error_code ec;
  std::filesystem::create_directories(cache_dir, ec);
  const Dataset train_data = load_train_dataset(cfg);
  const Dataset test_data = load_test_dataset(cfg);

  std::vector<SweepRecord> records;
  for (double sparsity : cfg.sweep_sparsities) {
    for (const auto& [b_w, b_x] : cfg.sweep_bits) {
      for (std::uint64_t seed : cfg.sweep_seeds) {
        SweepCell cell{sparsity, b_w, b_x, seed};
        TrainConfig tcfg = cfg.train;
        tcfg.seed = seed;
        tcfg.prune_enabled = sparsity > 0.0;
        tcfg.prune.target = sparsity;
        const std::uint64_t hash = train_config_hash(tcfg, cell, cfg.preset);
        char cache_name[64];
        std::snprintf(cache_name, sizeof cache_name, "model_%016llx.pqsm",
                      static_cast<unsigned long long>(hash));
        const std::string cache_path = cache_dir + "/" + cache_name;

        Model model;
        if (std::filesystem::exists(cache_path)) {
          model = load_model(cache_path).model;
        } else {
          model = make_model(cfg.preset, b_w, b_x, cfg.accum);
          train(model, train_data, tcfg);
          RunConfig prov = cfg;
          prov.b_w = b_w;
          prov.b_x = b_x;
          prov.train = tcfg;
          prov.seed = seed;
          save_model(model, train_provenance(prov), cache_path);
        }

        const std::string run_id = cfg.run_id + "_" + cell_run_id(cell);
        for (int p : cfg.p_grid) {
          for (Policy policy : cfg.policies) {
            EvalOptions opts;
            opts.accum = cfg.accum;
            opts.accum.acc_bits = p;
            opts.accum.policy = policy;
            opts.threads = cfg.threads;
            opts.limit = cfg.limit_test;
            const EvalResult r = evaluate(model, test_data, opts);
            records.push_back(record_from_eval(run_id, model, opts, r));
          }
        }
      }
    }
  }
  sort_records(records);
  emit_report(records, ReportFormat::Csv, cfg.out_dir + "/" + cfg.run_id + "_sweep.csv");
  emit_report(records, ReportFormat::JsonLines,
              cfg.out_dir + "/" + cfg.run_id + "_sweep.jsonl");

  for (Policy policy : cfg.policies) {
    std::vector<SweepRecord> of_policy;
    for (const auto& r : records)
      if (r.policy == policy_name(policy)) of_policy.push_back(r);
    if (of_policy.empty()) continue;
    const std::vector<SweepRecord> frontier = pareto_frontier(of_policy);
    char name[128];
    std::snprintf(name, sizeof name, "%s_frontier_%s.csv", cfg.run_id.c_str(),
                  policy_name(policy));
    emit_report(frontier, ReportFormat::Csv, cfg.out_dir + "/" + name);
  }
  return records;
}

// ---------------------------------------------------------------------------
// dot: human-readable window into the engine
// ---------------------------------------------------------------------------

struct DotArgs {
  std::vector<std::int32_t> w, x;
  int b = 8;
  int p = 32;
  Policy policy = Policy::Sorted;
  int tile = 256;
  int max_sort_rounds = 8;
};

inline std::vector<std::int32_t> parse_int_list(const std::string& s) {
  std::vector<std::int32_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    int v;
    try {
      v = std::stoi(item, &pos);
    } catch (const std::exception&) {
      throw ConfigError("malformed integer '" + item + "'");
    }
    if (pos != item.size()) throw ConfigError("malformed integer '" + item + "'");
    out.push_back(v);
  }
  return out;
}

inline std::string cmd_dot(const DotArgs& args) {
  check_bits(args.b);
  if (args.w.size() != args.x.size())
    throw PreconditionError("dot: w and x must have equal length");
  for (auto span : {&args.w, &args.x})
    for (std::int32_t v : *span)
      if (v < signed_min(args.b) || v > signed_max(args.b))
        throw PreconditionError("dot: value " + std::to_string(v) +
                                " does not fit " + std::to_string(args.b) + " bits");

  AccumConfig cfg;
  cfg.acc_bits = args.p;
  cfg.policy = args.policy;
  cfg.tile = args.tile;
  cfg.max_sort_rounds = args.max_sort_rounds;
  cfg.validate();

  std::ostringstream out;
  const DotTrace trace = dot_exact(args.w, args.x);
  out << "products:";
  for (auto v : trace.products) out << ' ' << v;
  out << "\nexact sum: " << trace.exact_sum << "\n";

  std::int64_t value = 0;
  std::vector<AccumEvent> events;
  if (args.policy == Policy::Sorted) {
    std::vector<std::vector<std::int64_t>> rounds;
    const SortedDotResult r = sorted_dot(trace.products, cfg, &rounds);
    for (std::size_t i = 0; i < rounds.size(); ++i) {
      out << "round " << i << " values:";
      for (auto v : rounds[i]) out << ' ' << v;
      out << "\n";
    }
    out << "rounds used: " << r.rounds << "\n";
    value = r.value;
    events = r.events;
  } else if (args.policy == Policy::SortedTiled) {
    const TiledDotResult r = sorted_dot_tiled(trace.products, cfg);
    out << "tile sums:";
    for (auto v : r.tile_sums) out << ' ' << v;
    out << "\n";
    value = r.value;
    events = r.events;
  } else {
    const AccumResult r = accumulate_natural(trace.products, cfg);
    out << "running:";
    {
      // show the policy-visible running values
      wide_t acc = 0;
      for (auto v : trace.products) {
        const wide_t raw = acc + v;
        acc = args.policy == Policy::Saturate ? clamp_signed_wide(raw, args.p)
              : args.policy == Policy::Wrap   ? detail::wrap_signed(raw, args.p)
                                              : raw;
        out << ' ' << wide_to_string(acc);
      }
    }
    out << "\n";
    value = r.value;
    events = r.events;
  }

  out << "result (" << policy_name(args.policy) << ", p=" << args.p << "): " << value
      << "\n";
  out << "events: " << events.size() << "\n";
  for (const auto& e : events)
    out << "  step " << e.position << " value " << e.value << " "
        << (e.kind == AccumEvent::kPositiveOverflow ? "positive" : "negative")
        << " overflow\n";
  const OverflowClass cls = classify(trace, args.p, natural_order(trace.products.size()));
  out << "classification (natural order): " << overflow_class_name(cls) << "\n";
  return out.str();
}

}  // namespace pqs
