// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Standalone generator for the synthetic 10-class IDX dataset the test and
// acceptance suites use. Handy for exercising the pqs CLI when no real IDX
// dataset is on hand; any MNIST-format file pair works interchangeably.

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "support/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"write a synthetic IDX image/label pair"};
  std::string dir = ".";
  std::string stem = "train";
  int count = 8000;
  std::uint64_t seed = 1001;
  std::string profile = "keyed";
  app.add_option("--dir", dir, "output directory");
  app.add_option("--stem", stem, "file stem, e.g. 'train' or 'test'");
  app.add_option("--count", count, "number of samples");
  app.add_option("--seed", seed, "sample seed");
  app.add_option("--profile", profile, "keyed|ambiguous|plain");
  CLI11_PARSE(app, argc, argv);

  synth::Spec spec;
  if (profile == "keyed")
    spec = synth::keyed_spec();
  else if (profile == "ambiguous")
    spec = synth::ambiguous_spec();
  else if (profile != "plain") {
    std::fprintf(stderr, "unknown profile '%s'\n", profile.c_str());
    return 2;
  }
  try {
    const auto [imgs, lbls] = synth::write_idx_pair(spec, dir, stem, count, seed);
    std::printf("wrote %s\nwrote %s\n", imgs.c_str(), lbls.c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
