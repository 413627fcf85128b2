// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/run_config.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace idedit;

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.seed() == 0);
  CHECK(c.integer("ft.steps") == 200);
  CHECK(c.real("ft.lambda") == 0.1);
  CHECK(c.real("edit.tau_inj") == 0.6);
  CHECK(c.flag("edit.spatial_control"));
  CHECK(c.reals("sweep.w_list") == std::vector<double>{1, 2.5, 4, 5.5, 7.5});
  CHECK_THROWS_AS(c.str("no.such.key"), ConfigError);
}

TEST_CASE("typed overrides") {
  RunConfig c;
  c.set("ft.lambda", " 0.25 ");
  CHECK(c.real("ft.lambda") == 0.25);
  c.set("edit.spatial_control", "false");
  CHECK_FALSE(c.flag("edit.spatial_control"));
  CHECK_THROWS_AS(c.set("ft.lambda", "abc"), ConfigError);
  CHECK_THROWS_AS(c.set("ft.steps", "2.5"), ConfigError);
  CHECK_THROWS_AS(c.set("edit.spatial_control", "yes"), ConfigError);
  CHECK_THROWS_AS(c.set("sweep.w_list", "1,x"), ConfigError);
  CHECK_THROWS_AS(c.set("typo", "1"), ConfigError);
  c.set("seed", "-1");
  CHECK_THROWS_AS(c.seed(), ConfigError);
}

TEST_CASE("file loading and the resolved snapshot round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "idedit_config_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "run.cfg");
    out << "# comment\n\nseed = 42\nft.steps = 10  # trailing\nsweep.w_list = 1, 3\n";
  }
  RunConfig c;
  c.load_file(dir / "run.cfg");
  CHECK(c.seed() == 42);
  CHECK(c.integer("ft.steps") == 10);
  CHECK(c.reals("sweep.w_list") == std::vector<double>{1, 3});
  c.write_resolved(dir / "config.resolved");
  RunConfig again;
  again.load_file(dir / "config.resolved");
  CHECK(again.values() == c.values());

  {
    std::ofstream out(dir / "bad.cfg");
    out << "seed 3\n";
  }
  CHECK_THROWS_AS(RunConfig().load_file(dir / "bad.cfg"), ConfigError);
  CHECK_THROWS(RunConfig().load_file(dir / "missing.cfg"));
  std::filesystem::remove_all(dir);
}
