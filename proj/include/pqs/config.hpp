// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration: a UTF-8 JSON file, schema-validated before any work.
// Unknown keys anywhere in the document are rejected (fail-fast), as are
// type mismatches. Every command shares this one schema; commands read the
// sections they need.

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pqs/accumulate.hpp"
#include "pqs/container.hpp"
#include "pqs/train.hpp"

namespace pqs {

struct RunConfig {
  std::string preset = "mlp1";
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = "out";
  std::string run_id = "run";

  std::string train_images, train_labels, test_images, test_labels;
  std::int64_t limit_train = 0, limit_test = 0;

  int b_w = 8;
  int b_x = 8;

  TrainConfig train;

  AccumConfig accum;                  // single-point evaluation config
  std::vector<int> p_grid;            // profile/sweep accumulator grid
  std::vector<Policy> policies{Policy::Exact};
  bool resolve_transients = false;

  std::string model_path;             // eval/profile input

  std::vector<double> sweep_sparsities;
  std::vector<std::pair<int, int>> sweep_bits;
  std::vector<std::uint64_t> sweep_seeds;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("unknown config key '" + where + it.key() + "'");
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline RunConfig parse_config_json(const nlohmann::json& j) {
  RunConfig cfg;
  detail::check_keys(j, {"preset", "seed", "threads", "out_dir", "run_id", "dataset",
                         "bits", "train", "accum", "model", "sweep"},
                     "");
  cfg.preset = detail::get_or<std::string>(j, "preset", cfg.preset);
  cfg.seed = detail::get_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.threads = detail::get_or<int>(j, "threads", cfg.threads);
  cfg.out_dir = detail::get_or<std::string>(j, "out_dir", cfg.out_dir);
  cfg.run_id = detail::get_or<std::string>(j, "run_id", cfg.run_id);
  cfg.model_path = detail::get_or<std::string>(j, "model", "");

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::check_keys(d, {"train_images", "train_labels", "test_images", "test_labels",
                           "limit_train", "limit_test"},
                       "dataset.");
    cfg.train_images = detail::get_or<std::string>(d, "train_images", "");
    cfg.train_labels = detail::get_or<std::string>(d, "train_labels", "");
    cfg.test_images = detail::get_or<std::string>(d, "test_images", "");
    cfg.test_labels = detail::get_or<std::string>(d, "test_labels", "");
    cfg.limit_train = detail::get_or<std::int64_t>(d, "limit_train", 0);
    cfg.limit_test = detail::get_or<std::int64_t>(d, "limit_test", 0);
  }

  if (j.contains("bits")) {
    const auto& b = j.at("bits");
    detail::check_keys(b, {"weight", "activation"}, "bits.");
    cfg.b_w = detail::get_or<int>(b, "weight", cfg.b_w);
    cfg.b_x = detail::get_or<int>(b, "activation", cfg.b_x);
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::check_keys(t, {"schedule", "epochs", "qat_epochs", "learning_rate",
                           "momentum", "weight_decay", "batch_size", "prune"},
                       "train.");
    const std::string sched = detail::get_or<std::string>(t, "schedule", "ptoq");
    if (sched == "ptoq")
      cfg.train.schedule = TrainConfig::Schedule::PtoQ;
    else if (sched == "qtop")
      cfg.train.schedule = TrainConfig::Schedule::QtoP;
    else
      throw ConfigError("train.schedule must be 'ptoq' or 'qtop', got '" + sched + "'");
    cfg.train.epochs = detail::get_or<int>(t, "epochs", cfg.train.epochs);
    cfg.train.qat_epochs = detail::get_or<int>(t, "qat_epochs", cfg.train.qat_epochs);
    cfg.train.learning_rate =
        detail::get_or<double>(t, "learning_rate", cfg.train.learning_rate);
    cfg.train.momentum = detail::get_or<double>(t, "momentum", cfg.train.momentum);
    cfg.train.weight_decay =
        detail::get_or<double>(t, "weight_decay", cfg.train.weight_decay);
    cfg.train.batch_size = detail::get_or<int>(t, "batch_size", cfg.train.batch_size);
    if (t.contains("prune")) {
      const auto& p = t.at("prune");
      detail::check_keys(p, {"enabled", "target", "interval", "increment", "group_m"},
                         "train.prune.");
      cfg.train.prune_enabled = detail::get_or<bool>(p, "enabled", true);
      cfg.train.prune.target = detail::get_or<double>(p, "target", 0.0);
      cfg.train.prune.interval = detail::get_or<int>(p, "interval", 10);
      cfg.train.prune.increment = detail::get_or<double>(p, "increment", 0.1);
      cfg.train.prune.m = detail::get_or<int>(p, "group_m", 16);
    }
  }

  if (j.contains("accum")) {
    const auto& a = j.at("accum");
    detail::check_keys(a, {"p", "p_grid", "policies", "tile", "max_sort_rounds",
                           "resolve_transients"},
                       "accum.");
    cfg.accum.acc_bits = detail::get_or<int>(a, "p", cfg.accum.acc_bits);
    cfg.accum.tile = detail::get_or<int>(a, "tile", cfg.accum.tile);
    cfg.accum.max_sort_rounds =
        detail::get_or<int>(a, "max_sort_rounds", cfg.accum.max_sort_rounds);
    cfg.resolve_transients = detail::get_or<bool>(a, "resolve_transients", false);
    if (a.contains("p_grid"))
      cfg.p_grid = detail::get_or<std::vector<int>>(a, "p_grid", {});
    if (a.contains("policies")) {
      cfg.policies.clear();
      for (const auto& name : a.at("policies"))
        cfg.policies.push_back(policy_from_name(name.get<std::string>()));
      if (cfg.policies.empty()) throw ConfigError("accum.policies must not be empty");
    }
    cfg.accum.policy = cfg.policies.front();
  }

  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    detail::check_keys(s, {"sparsities", "bit_pairs", "seeds"}, "sweep.");
    cfg.sweep_sparsities = detail::get_or<std::vector<double>>(s, "sparsities", {});
    cfg.sweep_seeds = detail::get_or<std::vector<std::uint64_t>>(s, "seeds", {cfg.seed});
    if (s.contains("bit_pairs")) {
      for (const auto& bp : s.at("bit_pairs")) {
        if (!bp.is_array() || bp.size() != 2)
          throw ConfigError("sweep.bit_pairs entries must be [weight_bits, act_bits]");
        cfg.sweep_bits.emplace_back(bp[0].get<int>(), bp[1].get<int>());
      }
    }
  }

  cfg.train.seed = cfg.seed;
  cfg.train.threads = cfg.threads;
  cfg.train.limit_train = cfg.limit_train;
  if (cfg.p_grid.empty()) cfg.p_grid = {cfg.accum.acc_bits};
  return cfg;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open config");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": config root must be an object");
  return parse_config_json(j);
}

}  // namespace pqs
