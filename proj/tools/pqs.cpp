// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
//
// pqs: train, evaluate, profile and sweep low-bitwidth-accumulation models,
// plus a `dot` subcommand that traces a single dot product through the
// engine. Exit codes: 0 ok, 2 config error, 3 io error, 4 numeric
// precondition violated.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pqs/commands.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  int threads = 0;
};

pqs::RunConfig load_with_overrides(const GlobalArgs& g) {
  if (g.config_path.empty()) throw pqs::ConfigError("--config is required");
  pqs::RunConfig cfg = pqs::parse_config(g.config_path);
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  if (g.seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(g.seed);
    cfg.train.seed = cfg.seed;
  }
  if (g.threads > 0) {
    cfg.threads = g.threads;
    cfg.train.threads = g.threads;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bit-exact low-bitwidth accumulation toolkit"};
  app.require_subcommand(1);
  app.fallthrough(); // global flags may follow the subcommand

  GlobalArgs global;
  app.add_option("--config", global.config_path, "JSON run configuration");
  app.add_option("--out", global.out_dir, "override output directory");
  app.add_option("--seed", global.seed, "override seed");
  app.add_option("--threads", global.threads, "override worker thread count");

  auto* train_cmd = app.add_subcommand("train", "train a model and write a container");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained container");
  auto* profile_cmd =
      app.add_subcommand("profile", "overflow profile over an accumulator grid");
  auto* sweep_cmd = app.add_subcommand("sweep", "train/evaluate a design-space sweep");

  auto* dot_cmd = app.add_subcommand("dot", "trace one dot product through the engine");
  std::string w_str, x_str, policy_str = "sorted";
  pqs::DotArgs dot_args;
  dot_cmd->add_option("--w", w_str, "comma-separated weight codes")->required();
  dot_cmd->add_option("--x", x_str, "comma-separated activation codes")->required();
  dot_cmd->add_option("--b", dot_args.b, "data bitwidth");
  dot_cmd->add_option("--p", dot_args.p, "accumulator bitwidth");
  dot_cmd->add_option("--policy", policy_str, "exact|saturate|wrap|sorted|sorted_tiled");
  dot_cmd->add_option("--tile", dot_args.tile, "tile length for sorted_tiled");
  dot_cmd->add_option("--rounds", dot_args.max_sort_rounds, "max sort rounds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : pqs::kExitConfig;
  }

  try {
    if (train_cmd->parsed()) {
      const pqs::RunConfig cfg = load_with_overrides(global);
      const std::string path = pqs::cmd_train(cfg);
      std::cout << "wrote " << path << "\n";
    } else if (eval_cmd->parsed()) {
      const pqs::RunConfig cfg = load_with_overrides(global);
      const pqs::SweepRecord rec = pqs::cmd_eval(cfg);
      std::cout << pqs::kSweepCsvHeader << "\n" << pqs::sweep_csv_row(rec) << "\n";
    } else if (profile_cmd->parsed()) {
      const pqs::RunConfig cfg = load_with_overrides(global);
      const auto reports = pqs::cmd_profile(cfg);
      for (const auto& rep : reports) {
        const auto t = rep.totals();
        std::printf("%s p=%d accuracy=%.6f dots=%lld transient=%lld persistent=%lld\n",
                    pqs::policy_name(rep.policy), rep.acc_bits, rep.accuracy,
                    static_cast<long long>(t.dots), static_cast<long long>(t.transient),
                    static_cast<long long>(t.persistent));
      }
    } else if (sweep_cmd->parsed()) {
      const pqs::RunConfig cfg = load_with_overrides(global);
      const auto records = pqs::cmd_sweep(cfg);
      std::cout << "sweep rows: " << records.size() << "\n";
    } else if (dot_cmd->parsed()) {
      dot_args.w = pqs::parse_int_list(w_str);
      dot_args.x = pqs::parse_int_list(x_str);
      dot_args.policy = pqs::policy_from_name(policy_str);
      std::cout << pqs::cmd_dot(dot_args);
    }
  } catch (const pqs::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return pqs::kExitConfig;
  } catch (const pqs::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return pqs::kExitIo;
  } catch (const pqs::PreconditionError& e) {
    std::cerr << "precondition violated: " << e.what() << "\n";
    return pqs::kExitNumeric;
  }
  return pqs::kExitOk;
}
