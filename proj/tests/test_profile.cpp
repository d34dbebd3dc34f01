// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pqs/profile.hpp"
#include "support/synth.hpp"

using namespace pqs;

namespace {

SweepRecord rec(const std::string& id, int p, double acc) {
  SweepRecord r;
  r.run_id = id;
  r.acc_bits = p;
  r.accuracy = acc;
  r.b_w = r.b_x = 8;
  r.policy = "sorted";
  return r;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE_BEGIN("profile");

TEST_CASE("pareto frontier hand cases") {
  CHECK_THROWS_AS(pareto_frontier({}), PreconditionError);

  const auto single = pareto_frontier({rec("a", 16, 0.9)});
  REQUIRE(single.size() == 1);
  CHECK(single[0].run_id == "a");

  const auto tie = pareto_frontier({rec("a", 16, 0.90), rec("b", 16, 0.85)});
  REQUIRE(tie.size() == 1);
  CHECK(tie[0].run_id == "a");

  const auto tri =
      pareto_frontier({rec("a", 14, 0.88), rec("b", 16, 0.90), rec("c", 18, 0.89)});
  REQUIRE(tri.size() == 2);
  CHECK(tri[0].acc_bits == 14);
  CHECK(tri[1].acc_bits == 16);
}

TEST_CASE("frontier dominance properties") {
  std::mt19937_64 rng(101);
  std::vector<SweepRecord> records;
  for (int i = 0; i < 100; ++i)
    records.push_back(rec("r" + std::to_string(i), 12 + static_cast<int>(rng() % 12),
                          static_cast<double>(rng() % 1000) / 1000.0));
  const auto frontier = pareto_frontier(records);
  auto dominates = [](const SweepRecord& a, const SweepRecord& b) {
    return a.acc_bits <= b.acc_bits && a.accuracy >= b.accuracy &&
           (a.acc_bits < b.acc_bits || a.accuracy > b.accuracy);
  };
  // no frontier record is dominated by any record
  for (const auto& f : frontier)
    for (const auto& r : records) CHECK(!dominates(r, f));
  // every non-frontier record is dominated by some frontier record
  for (const auto& r : records) {
    bool on_frontier = false;
    for (const auto& f : frontier)
      if (f.run_id == r.run_id) on_frontier = true;
    if (on_frontier) continue;
    bool dominated = false;
    for (const auto& f : frontier) dominated = dominated || dominates(f, r);
    CHECK(dominated);
  }
}

TEST_CASE("emit_report CSV and JSON-lines round trip") {
  std::vector<SweepRecord> records = {rec("a", 14, 0.876543), rec("b", 16, 0.912345)};
  records[0].sparsity = 0.5;
  records[0].transient = 12;
  records[0].persistent = 3;
  records[0].events = 40;

  const std::string csv_path = tmp_path("pqs_test_report.csv");
  const std::string jsonl_path = tmp_path("pqs_test_report.jsonl");
  emit_report(records, ReportFormat::Csv, csv_path);
  emit_report(records, ReportFormat::JsonLines, jsonl_path);

  {
    std::ifstream in(csv_path);
    std::string header;
    std::getline(in, header);
    CHECK(header == kSweepCsvHeader);
    std::string row;
    std::getline(in, row);
    CHECK(row == "a,0.5000,8,8,14,sorted,0.876543,12,3,40");
  }
  {
    const auto loaded = load_jsonl(jsonl_path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].run_id == "a");
    CHECK(loaded[0].transient == 12);
    // byte-identical re-emission
    emit_report(loaded, ReportFormat::JsonLines, jsonl_path + ".2");
    std::ifstream a(jsonl_path), b(jsonl_path + ".2");
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
  }

  // empty record list: header-only CSV
  emit_report({}, ReportFormat::Csv, csv_path);
  std::ifstream in(csv_path);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(all == std::string(kSweepCsvHeader) + "\n");
}

TEST_CASE("profile_model over a grid: cardinality, wide-accumulator zeroes, monotonicity") {
  synth::Spec spec = synth::keyed_spec();
  Dataset train_ds = synth::make_dataset(spec, 300, 11);
  Dataset test_ds = synth::make_dataset(spec, 100, 12);
  AccumConfig accum;
  accum.acc_bits = 32;
  Model m = make_model("mlp1", 8, 8, accum);
  TrainConfig cfg;
  cfg.schedule = TrainConfig::Schedule::QtoP;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.seed = 9;
  cfg.threads = 2;
  train(m, train_ds, cfg);

  EvalOptions base;
  base.threads = 2;
  std::vector<int> grid;
  for (int p = 12; p <= 24; ++p) grid.push_back(p);
  const auto reports =
      profile_model(m, test_ds, grid, {Policy::Exact, Policy::Saturate}, base);
  CHECK(reports.size() == grid.size() * 2);

  // p=64 cell: no overflows of either kind
  const auto wide = profile_model(m, test_ds, {64}, {Policy::Exact}, base);
  CHECK(wide[0].totals().persistent == 0);
  CHECK(wide[0].totals().transient == 0);
  CHECK(wide[0].totals().events == 0);

  // p=4: essentially every dot persistent
  const auto tiny = profile_model(m, test_ds, {4}, {Policy::Exact}, base);
  CHECK(tiny[0].totals().persistent > tiny[0].totals().dots * 9 / 10);

  // raising p never increases the persistent count (Exact classification)
  std::int64_t last = -1;
  for (const auto& rep : reports) {
    if (rep.policy != Policy::Exact) continue;
    if (last >= 0) CHECK(rep.totals().persistent <= last);
    last = rep.totals().persistent;
  }

  // report conservation: counts equal a straight re-simulation
  const auto again = profile_model(m, test_ds, grid, {Policy::Exact}, base);
  std::size_t j = 0;
  for (const auto& rep : reports) {
    if (rep.policy != Policy::Exact) continue;
    CHECK(rep.totals().transient == again[j].totals().transient);
    CHECK(rep.totals().persistent == again[j].totals().persistent);
    ++j;
  }
}

TEST_SUITE_END();
