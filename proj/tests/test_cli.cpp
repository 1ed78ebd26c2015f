// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#ifndef EDGECRAFTER_CLI
#error "EDGECRAFTER_CLI must name the command-line binary"
#endif

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(const std::string& args) {
  const auto err_path = std::filesystem::temp_directory_path() / "ec_cli_stderr.txt";
  const std::string cmd = std::string(EDGECRAFTER_CLI) + " " + args + " 2>" + err_path.string();
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err_path);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  std::filesystem::remove(err_path);
  return r;
}

}  // namespace

TEST_CASE("usage errors exit with status 2") {
  CHECK(run("profile XL --json").code == 2);
  CHECK(run("profile S --no-such-flag").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("build S bogus-task").code == 2);
  const Run r = run("profile XL");
  CHECK(r.err.find("XL") != std::string::npos);
}

TEST_CASE("forward is deterministic and --json keeps stderr quiet") {
  const Run a = run("forward S det --seed 3 --input 128 --json");
  const Run b = run("--seed 3 --input 128 --json forward S det");
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(a.err.empty());
  const auto ja = nlohmann::json::parse(a.out), jb = nlohmann::json::parse(b.out);
  CHECK(ja["command"] == "forward");
  CHECK(ja.contains("spec_version"));
  const std::string sum = ja["checksum"].get<std::string>();
  CHECK(sum == jb["checksum"].get<std::string>());
  const Run c = run("forward S det --seed 4 --input 128 --json");
  CHECK(nlohmann::json::parse(c.out)["checksum"].get<std::string>() != sum);
}

TEST_CASE("match reports full oracle agreement") {
  const Run r = run("match --trials 200");
  CHECK(r.code == 0);
  CHECK(r.err.find("oracle agreement 200/200") != std::string::npos);
  const Run j = run("match --trials 50 --tie-heavy --json");
  CHECK(j.code == 0);
  const auto jm = nlohmann::json::parse(j.out);
  CHECK(jm["result"]["agree"] == 50);
  CHECK(jm["result"]["disagreements"].empty());
}

TEST_CASE("profile, loss and gradcheck emit their JSON reports") {
  const auto p = nlohmann::json::parse(run("profile S pose --json").out);
  CHECK(p["command"] == "profile");
  const Run l = run("loss S insseg --perfect --gt 3 --input 128 --json");
  REQUIRE(l.code == 0);
  CHECK(nlohmann::json::parse(l.out)["report"]["total"].get<double>() < 1e-9);
  CHECK(run("gradcheck --json").code == 0);
}

TEST_CASE("build writes a loadable manifest") {
  const auto prefix = (std::filesystem::temp_directory_path() / "ec_cli_build").string();
  const Run r = run("build S det --json --save " + prefix);
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["analytic_matches"] == true);
  CHECK(std::filesystem::file_size(prefix + ".bin") == 4 * j["params_total"].get<std::uint64_t>());
  std::filesystem::remove(prefix + ".bin");
  std::filesystem::remove(prefix + ".json");
}
