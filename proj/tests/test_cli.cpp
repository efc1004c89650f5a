// specden/tests/test_cli.cpp
//
// Copyright 2026  specden authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "specden/cliutil.hpp"

using namespace specden;

namespace {

// Runs the CLI binary (expected next to the test executable, i.e. the ctest
// working directory) and returns its exit status.
int run_cli(const std::string& args) {
  const std::string cmd = "./specden " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("snr grid parsing", "[cli]") {
  auto grid = parse_snr_grid("0:20:1");
  REQUIRE(grid.size() == 21);
  REQUIRE(grid.front() == 0.0);
  REQUIRE(grid.back() == 20.0);
  for (size_t i = 1; i < grid.size(); ++i) REQUIRE(grid[i] - grid[i - 1] == 1.0);

  grid = parse_snr_grid("-5:5:2.5");
  REQUIRE(grid == std::vector<double>{-5.0, -2.5, 0.0, 2.5, 5.0});

  grid = parse_snr_grid("7.5");
  REQUIRE(grid == std::vector<double>{7.5});

  REQUIRE_THROWS_AS(parse_snr_grid(""), Error);
  REQUIRE_THROWS_AS(parse_snr_grid("0:20:0"), Error);
  REQUIRE_THROWS_AS(parse_snr_grid("20:0:1"), Error);
  REQUIRE_THROWS_AS(parse_snr_grid("a:b:c"), Error);
  REQUIRE_THROWS_AS(parse_snr_grid("1:2"), Error);
}

TEST_CASE("cli exit codes", "[cli]") {
  REQUIRE(std::filesystem::exists("./specden"));
  REQUIRE(run_cli("") == 2);              // no subcommand: usage error
  REQUIRE(run_cli("--help") == 0);
  REQUIRE(run_cli("train --help") == 0);
  REQUIRE(run_cli("frobnicate") == 2);    // unknown subcommand
  REQUIRE(run_cli("train") == 2);         // missing required options
  REQUIRE(run_cli("train --manifest m.jsonl --model resnet --out /tmp/x") == 2);
  REQUIRE(run_cli("mix --speech-dir /nonexistent_s --noise-dir /nonexistent_n --out /tmp/x") ==
          1);                             // parses, fails at runtime
  REQUIRE(run_cli("enhance --ckpt /nonexistent.spck --in a.wav --out b.wav") == 1);
}
